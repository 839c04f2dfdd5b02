#include "mia/vector_index.hpp"

#include "binio.hpp"

#include "mia/error.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>

namespace mia {

using detail::put_u32;
using detail::put_u64;
using detail::Reader;

namespace {

constexpr char kMagic[7] = {'M', 'I', 'A', 'I', 'D', 'X', '1'};

}  // namespace

bool ranks_before(const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
}

Collection::Collection(std::string name, std::size_t dim)
    : name_(std::move(name)), dim_(dim), mu_(std::make_unique<std::shared_mutex>()) {
    if (dim_ == 0) fail(ErrorCode::invalid_argument, "collection dimension must be positive");
}

Collection::Collection(Collection&& other) noexcept
    : name_(std::move(other.name_)),
      dim_(other.dim_),
      entries_(std::move(other.entries_)),
      by_id_(std::move(other.by_id_)),
      mu_(std::move(other.mu_)) {}

Collection& Collection::operator=(Collection&& other) noexcept {
    name_ = std::move(other.name_);
    dim_ = other.dim_;
    entries_ = std::move(other.entries_);
    by_id_ = std::move(other.by_id_);
    mu_ = std::move(other.mu_);
    return *this;
}

void Collection::insert(const std::string& id, const EmbeddingVector& v, std::string payload) {
    if (v.dim() != dim_) {
        fail(ErrorCode::dimension_mismatch, "collection " + name_ + " has dimension " +
                                                std::to_string(dim_) + ", got " +
                                                std::to_string(v.dim()));
    }
    if (!is_unit(v)) fail(ErrorCode::invalid_argument, "vector for '" + id + "' is not unit length");
    std::unique_lock lock(*mu_);
    if (by_id_.count(id)) fail(ErrorCode::duplicate_id, "duplicate id '" + id + "' in " + name_);
    entries_.push_back({id, v.values, std::move(payload)});
    by_id_.emplace(id, entries_.size() - 1);
}

std::vector<SearchHit> Collection::top_k(const EmbeddingVector& q, std::size_t k) const {
    if (k == 0) fail(ErrorCode::invalid_argument, "top_k needs k >= 1");
    if (q.dim() != dim_) {
        fail(ErrorCode::dimension_mismatch, "query dimension " + std::to_string(q.dim()) +
                                                " against collection dimension " +
                                                std::to_string(dim_));
    }
    if (!is_unit(q)) fail(ErrorCode::invalid_argument, "top_k query must be unit length");
    std::shared_lock lock(*mu_);
    std::vector<SearchHit> hits;
    hits.reserve(entries_.size());
    for (const auto& e : entries_) hits.push_back({e.id, dot(q.values, e.values)});
    const auto n = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<long>(n), hits.end(), ranks_before);
    hits.resize(n);
    return hits;
}

std::size_t Collection::size() const {
    std::shared_lock lock(*mu_);
    return entries_.size();
}

bool Collection::contains(const std::string& id) const {
    std::shared_lock lock(*mu_);
    return by_id_.count(id) > 0;
}

std::optional<std::string> Collection::payload(const std::string& id) const {
    std::shared_lock lock(*mu_);
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return entries_[it->second].payload;
}

std::optional<EmbeddingVector> Collection::vector(const std::string& id) const {
    std::shared_lock lock(*mu_);
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return EmbeddingVector{entries_[it->second].values, true};
}

std::vector<std::string> Collection::ids() const {
    std::shared_lock lock(*mu_);
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.id);
    return out;
}

void Collection::save(const std::filesystem::path& path) const {
    std::shared_lock lock(*mu_);
    std::string buf(kMagic, sizeof kMagic);
    put_u32(buf, static_cast<std::uint32_t>(dim_));
    put_u64(buf, entries_.size());
    for (const auto& e : entries_) {
        put_u32(buf, static_cast<std::uint32_t>(e.id.size()));
        buf += e.id;
        for (float x : e.values) put_u32(buf, std::bit_cast<std::uint32_t>(x));
        put_u32(buf, static_cast<std::uint32_t>(e.payload.size()));
        buf += e.payload;
    }
    detail::write_file(path, buf);
}

Collection Collection::load(const std::filesystem::path& path, std::string name) {
    Reader r(detail::read_file(path, "index artifact"), path.string());
    if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
        fail(ErrorCode::schema_mismatch, path.string() + ": bad index magic");
    }
    const auto dim = r.u32();
    const auto count = r.u64();
    Collection c(name.empty() ? path.stem().string() : std::move(name), dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto id = r.bytes(r.u32());
        EmbeddingVector v;
        v.values.resize(dim);
        for (auto& x : v.values) x = std::bit_cast<float>(r.u32());
        v.normalized = true;
        auto payload = r.bytes(r.u32());
        c.insert(id, v, std::move(payload));
    }
    if (!r.done()) fail(ErrorCode::schema_mismatch, path.string() + ": trailing bytes");
    return c;
}

}  // namespace mia
