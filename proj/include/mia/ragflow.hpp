#pragma once

#include "mia/adapter.hpp"
#include "mia/corpus.hpp"
#include "mia/embedding.hpp"
#include "mia/evalharness.hpp"
#include "mia/llm_gateway.hpp"
#include "mia/mindscape.hpp"
#include "mia/qa.hpp"
#include "mia/silver.hpp"
#include "mia/vector_index.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mia {

// "[Chunk 1]\n<text>" blocks separated by blank lines, in the given order.
std::string format_chunks(const std::vector<std::string>& chunks);

// Generation prompt: instruction, book summary, chunks, question. An empty
// chunk list gives the summary-only variant.
std::string assemble_gen_prompt(const std::string& summary, const std::vector<std::string>& chunks,
                                const std::string& question, GenTask task, const std::string& options = {});

struct ParsedAnswer {
    std::string answer;           // phrase, option letter, or TRUE/FALSE
    std::optional<bool> verdict;  // claims only
    std::string reasoning;        // detective JSON reasoning or claim explanation
    bool parsed = false;          // false: answer holds the raw text
};

ParsedAnswer parse_answer(GenTask task, const std::string& raw);

struct RagContext {
    Embedder* embedder = nullptr;
    LlmGateway* gateway = nullptr;
    const Mindscape* mindscape = nullptr;
    const Collection* index = nullptr;
    const AdapterParams* adapter = nullptr;  // optional
    RetrievalMode mode = RetrievalMode::chunk;
    double delta = kDefaultResidualWeight;
    ControlTokens tokens;
    bool summary_only = false;  // skip retrieval
    std::size_t context_k = 0;  // chunks placed in the prompt; 0 = all retrieved
};

struct AnswerResult {
    std::string qid;
    GenTask task = GenTask::narrativeqa;
    std::vector<std::string> retrieved_ids;
    std::string prompt_used;
    std::string raw;
    ParsedAnswer parsed;
};

AnswerResult answer_query(const RagContext& ctx, const QaItem& item, std::size_t k);

// Concurrent up to gateway parallelism; output order = input order.
std::vector<AnswerResult> answer_all(const RagContext& ctx, const std::vector<QaItem>& items, std::size_t k);

Prediction to_prediction(const AnswerResult& r);
nlohmann::ordered_json transcript_json(const AnswerResult& r);

struct MixConfig {
    std::size_t min_noise = 1;
    std::size_t max_noise = 3;
    std::uint64_t seed = 0;
};

struct SftExample {
    std::string qid;
    std::string doc_id;
    std::string input;
    std::string target;
    GenTask task = GenTask::narrativeqa;
    std::size_t silver_count = 0;
    std::size_t noise_count = 0;
    std::vector<std::string> chunk_order;  // ids as they appear in the input
};

struct SftBuild {
    std::vector<SftExample> examples;
    std::size_t skipped_empty = 0;
    std::size_t skipped_node_task = 0;
};

// Chunk records only. Noise chunks come from the record's own document. The
// QA rows (matched on qid) supply the task variant, options and target; a
// record without a QA row uses the narrativeqa variant and its answer text.
SftBuild build_sft_examples(const std::vector<SilverRecord>& records, const std::vector<Chunk>& chunk_store,
                            const std::map<std::string, Mindscape>& mindscapes, const std::vector<QaItem>& qa,
                            const MixConfig& mix);

nlohmann::ordered_json to_json(const SftExample& e);

}  // namespace mia
