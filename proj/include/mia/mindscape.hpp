#pragma once

#include "mia/corpus.hpp"
#include "mia/llm_gateway.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mia {

struct Mindscape {
    std::string doc_id;
    std::vector<std::string> chunk_summaries;  // one per chunk, in chunk order
    std::string global_summary;
    std::string summarizer_tag;
    int levels = 2;  // 2 = chunk summaries + one global call; more means grouped reduction
};

struct Node {
    std::string name;
    std::string desc;
    std::string doc_id;

    // Retrieval payload text: "name: desc".
    std::string text() const { return name + ": " + desc; }
};

std::string node_id(std::string_view doc_id, std::size_t index);

struct SummarizerOptions {
    std::size_t budget_tokens = 64000;  // max tokens of concatenated summaries per sum_g call
    int max_tokens = 1024;
    double temperature = 0.0;
};

// s_i for one chunk. An empty completion is retried once, then fatal.
std::string summarize_chunk(LlmGateway& gw, const Chunk& chunk,
                            const SummarizerOptions& opts = {});

// Concurrent over chunks (bounded by the gateway); result order follows input.
std::vector<std::string> summarize_chunks(LlmGateway& gw, const std::vector<Chunk>& chunks,
                                          const SummarizerOptions& opts = {});

// Contiguous groups whose token total fits the budget. Every group holds at
// least two items (a trailing singleton joins the previous group), so a
// reduction level always shrinks the count when there are two or more items.
std::vector<std::vector<std::size_t>> group_for_budget(const std::vector<std::size_t>& token_counts,
                                                       std::size_t budget);

struct GlobalSummary {
    std::string text;
    int levels = 2;
    std::vector<std::size_t> level_sizes;  // item count entering each level
};

// Bottom-up reduction with sum_g. Fits in one call: one call. Otherwise the
// summaries are grouped, each group summarized, and the procedure recurses.
GlobalSummary build_global_summary(LlmGateway& gw, const std::vector<std::string>& summaries,
                                   const SummarizerOptions& opts = {});

Mindscape build_mindscape(LlmGateway& gw, const std::string& doc_id,
                          const std::vector<Chunk>& chunks, const SummarizerOptions& opts = {});

// Parses "name: description" lines; bullets and numbering are tolerated.
std::vector<Node> parse_entity_lines(std::string_view completion, const std::string& doc_id);

// Dedup by case-folded name. The first spelling wins the name; the longest
// description wins the desc (first seen on ties). Order is first appearance.
std::vector<Node> merge_entities(const std::vector<Node>& nodes);

// One extract_entities call per chunk. Chunks whose reply has no parseable
// line are logged and skipped.
std::vector<Node> extract_entities(LlmGateway& gw, const std::vector<Chunk>& chunks,
                                   const SummarizerOptions& opts = {});

nlohmann::ordered_json to_json(const Mindscape& m);
Mindscape mindscape_from_json(const nlohmann::json& j);
void save_mindscape(const Mindscape& m, const std::filesystem::path& path);
Mindscape load_mindscape(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const Node& n, std::size_t index);
Node node_from_json(const nlohmann::json& j);

}  // namespace mia
