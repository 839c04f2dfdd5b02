#pragma once

#include "mia/corpus.hpp"
#include "mia/embedding.hpp"
#include "mia/silver.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mia::cli {

struct PathsConfig {
    std::filesystem::path corpus;
    std::filesystem::path qa;
    std::filesystem::path work_dir;
    std::filesystem::path gold;  // optional; empty = derive from qa + silver
};

struct GatewayConfig {
    std::string backend = "mock";  // mock | http
    std::string chat_model = "mock";
    std::string embed_model = "mock-embed";
    std::size_t embed_dim = 64;  // mock embedder only
    std::size_t parallelism = 4;
    std::size_t max_retries = 4;
    std::uint64_t mock_seed = 0;
    double timeout_s = 120.0;
    bool audit = false;  // append gateway calls to <work_dir>/audit.jsonl
};

struct AdapterConfig {
    double tau = 0.01;
    double beta = 0.5;
    double lr = 1e-4;
    std::size_t steps = 2000;
    std::size_t batch = 4;
    double warmup_ratio = 0.1;
    bool learn_delta = false;
    bool apply = true;  // answer/retrieve use the trained adapter
};

struct PipelineConfig {
    std::filesystem::path source;  // config file, for messages only
    std::string dataset = "default";
    PathsConfig paths;
    GatewayConfig gateway;
    ChunkingConfig chunking;
    std::size_t budget_tokens = 64000;
    bool extract_nodes = true;
    double delta = kDefaultResidualWeight;
    std::vector<EvidenceTask> tasks{EvidenceTask::chunk, EvidenceTask::node};
    std::vector<std::size_t> k_values{3, 5, 10};
    std::size_t answer_k = 5;
    std::size_t k_retrieve = 10;
    std::size_t k_select = 10;
    AdapterConfig adapter;
    std::size_t min_noise = 1;
    std::size_t max_noise = 3;
    std::uint64_t seed_annotate = 0;
    std::uint64_t seed_train = 0;
    std::uint64_t seed_sft = 0;
};

// Parses the TOML file, applies "section.key=value" overrides (values in TOML
// syntax, bare words taken as strings), and validates. All violations are
// reported together in one invalid_config error. Relative paths resolve
// against the config file's directory.
PipelineConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

PipelineConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir,
                            const std::vector<std::string>& overrides = {});

// Every setting except paths; the manifest's config record.
nlohmann::ordered_json config_snapshot(const PipelineConfig& cfg);

}  // namespace mia::cli
