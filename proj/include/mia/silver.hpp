#pragma once

#include "mia/embedding.hpp"
#include "mia/llm_gateway.hpp"
#include "mia/mindscape.hpp"
#include "mia/qa.hpp"
#include "mia/vector_index.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mia {

// Evidence unit of a silver record; same two values as the retrieval mode.
using EvidenceTask = RetrievalMode;

struct SilverRecord {
    std::string qid;
    std::string query;
    std::string answer;
    EvidenceTask task = EvidenceTask::chunk;
    std::vector<std::string> silver_ids;
    std::vector<std::string> hard_neg_ids;
    std::vector<std::string> simple_neg_ids;
    std::string doc_id;
    std::vector<std::string> flags;

    bool has_flag(std::string_view f) const;
};

inline constexpr std::string_view kFlagUnfiltered = "unfiltered";
inline constexpr std::string_view kFlagNoneRelevant = "none_relevant";
inline constexpr std::string_view kFlagDroppedIndices = "dropped_out_of_range";

// {q, q + " " + a, a} with empty and repeated variants removed, order kept.
std::vector<std::string> augment_query(const std::string& q, const std::string& a);

// Majority vote over ranked pools: vote count desc, best (1-based) rank asc,
// id asc. Duplicates inside one pool count once.
std::vector<std::string> vote_select_top_k(const std::vector<std::vector<std::string>>& pools,
                                           std::size_t k);

// Finds the first bracketed integer array in free text. Returns nullopt when
// there is none.
std::optional<std::vector<long long>> parse_index_array(std::string_view text);

struct FilterResult {
    std::vector<std::size_t> indices;  // sorted, unique, in range
    bool none_relevant = false;        // the model answered [-1]
    bool unfiltered = false;           // unparseable twice; indices = all candidates
    bool dropped = false;              // some returned indices were out of range
};

// Renders filter_chunks or filter_nodes, parses the reply, re-asks once on a
// parse failure. A reply with only out-of-range indices counts as a failure.
FilterResult filter_with_llm(LlmGateway& gw, const std::string& question, const std::string& answer,
                             const std::vector<std::string>& candidates, EvidenceTask task);

struct Negatives {
    std::vector<std::string> hard;
    std::vector<std::string> simple;
};

inline constexpr std::size_t kMaxHardNegatives = 5;
inline constexpr std::size_t kSimpleNegatives = 5;

// hard: first <= 5 candidates outside silver, candidate order. simple: 5
// seeded uniform draws without replacement from all \ (silver u hard), fewer
// when the pool is smaller.
Negatives build_negatives(const std::vector<std::string>& silver_ids,
                          const std::vector<std::string>& candidate_ids,
                          const std::vector<std::string>& all_ids, std::uint64_t seed,
                          std::size_t max_hard = kMaxHardNegatives,
                          std::size_t n_simple = kSimpleNegatives);

struct AnnotateOptions {
    std::size_t k_retrieve = 10;
    std::size_t k_select = 10;
    std::uint64_t seed = 0;
};

struct AnnotationStats {
    std::size_t questions = 0;
    std::size_t annotated = 0;
    std::size_t failed = 0;
    std::size_t unfiltered = 0;
    std::size_t none_relevant = 0;
    double avg_silver = 0.0;
};

struct AnnotationFailure {
    std::string qid;
    std::string error;
};

struct AnnotationResult {
    std::vector<SilverRecord> records;  // input order, failed questions omitted
    std::vector<AnnotationFailure> failures;
    AnnotationStats stats;
};

// Silver evidence annotation for one document: augment, retrieve per variant,
// vote, filter with the LLM, then build negatives. Questions for other
// documents are rejected; failures of single questions do not stop the run.
AnnotationResult annotate_corpus(const std::vector<QaItem>& questions, const Mindscape& mindscape,
                                 const Collection& index, Embedder& embedder, LlmGateway& gw,
                                 EvidenceTask task, const AnnotateOptions& opts = {});

nlohmann::ordered_json to_json(const SilverRecord& r);
SilverRecord silver_from_json(const nlohmann::json& j);
std::string to_jsonl(const std::vector<SilverRecord>& records);
std::vector<SilverRecord> load_silver_jsonl(const std::filesystem::path& path);

}  // namespace mia
