#pragma once

#include "mia/embedding.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

namespace mia {

struct SearchHit {
    std::string id;
    double score = 0.0;

    bool operator==(const SearchHit&) const = default;
};

// Ranking order used everywhere: score descending, then id ascending.
bool ranks_before(const SearchHit& a, const SearchHit& b);

// Exact cosine search over unit vectors. Readers share, writers exclude.
class Collection {
public:
    Collection(std::string name, std::size_t dim);
    Collection(Collection&& other) noexcept;
    Collection& operator=(Collection&& other) noexcept;
    Collection(const Collection&) = delete;
    Collection& operator=(const Collection&) = delete;

    // Throws duplicate_id, dimension_mismatch, or invalid_argument (not unit
    // length). A failed insert leaves the collection unchanged.
    void insert(const std::string& id, const EmbeddingVector& vector, std::string payload = {});

    // min(k, size) hits. k must be >= 1 and the query unit length.
    std::vector<SearchHit> top_k(const EmbeddingVector& query, std::size_t k) const;

    const std::string& name() const { return name_; }
    std::size_t dim() const { return dim_; }
    std::size_t size() const;
    bool contains(const std::string& id) const;
    std::optional<std::string> payload(const std::string& id) const;
    std::optional<EmbeddingVector> vector(const std::string& id) const;
    std::vector<std::string> ids() const;  // insertion order

    // Binary layout, little-endian:
    //   "MIAIDX1" | u32 dim | u64 count |
    //   count x ( u32 id_len | id | dim x f32 | u32 payload_len | payload )
    void save(const std::filesystem::path& path) const;
    static Collection load(const std::filesystem::path& path, std::string name = {});

private:
    struct Entry {
        std::string id;
        std::vector<float> values;
        std::string payload;
    };

    std::string name_;
    std::size_t dim_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unique_ptr<std::shared_mutex> mu_;
};

}  // namespace mia
