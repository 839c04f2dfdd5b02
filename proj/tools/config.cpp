#include "config.hpp"

#include "mia/error.hpp"
#include "mia/text.hpp"

#include <nlohmann/json.hpp>
#include <toml++/toml.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace mia::cli {

namespace {

// Reads typed values out of a toml table and remembers which keys were
// consumed, so leftovers can be reported as unknown.
class Fields {
public:
    Fields(const toml::table& root, std::vector<std::string>& errors) : root_(root), errors_(errors) {}

    template <typename T>
    void get(const std::string& section, const std::string& key, T& out) {
        const auto* node = lookup(section, key);
        if (!node) return;
        const auto where = section + "." + key;
        if constexpr (std::is_same_v<T, std::string>) {
            if (auto v = node->value<std::string>()) {
                out = *v;
            } else {
                errors_.push_back(where + ": expected a string");
            }
        } else if constexpr (std::is_same_v<T, bool>) {
            if (auto v = node->value<bool>()) {
                out = *v;
            } else {
                errors_.push_back(where + ": expected true or false");
            }
        } else if constexpr (std::is_same_v<T, double>) {
            if (auto v = node->value<double>()) {
                out = *v;
            } else {
                errors_.push_back(where + ": expected a number");
            }
        } else if constexpr (std::is_integral_v<T>) {
            auto v = node->value<std::int64_t>();
            if (!v || !node->is_integer()) {
                errors_.push_back(where + ": expected an integer");
            } else if (*v < 0) {
                errors_.push_back(where + ": must be >= 0, got " + std::to_string(*v));
            } else {
                out = static_cast<T>(*v);
            }
        }
    }

    void get_list(const std::string& section, const std::string& key, std::vector<std::size_t>& out) {
        const auto* node = lookup(section, key);
        if (!node) return;
        const auto* arr = node->as_array();
        if (!arr) {
            errors_.push_back(section + "." + key + ": expected an array of integers");
            return;
        }
        out.clear();
        for (const auto& el : *arr) {
            auto v = el.value<std::int64_t>();
            if (!v || !el.is_integer() || *v < 1) {
                errors_.push_back(section + "." + key + ": entries must be integers >= 1");
                return;
            }
            out.push_back(static_cast<std::size_t>(*v));
        }
    }

    void get_strings(const std::string& section, const std::string& key, std::vector<std::string>& out) {
        const auto* node = lookup(section, key);
        if (!node) return;
        const auto* arr = node->as_array();
        if (!arr) {
            errors_.push_back(section + "." + key + ": expected an array of strings");
            return;
        }
        out.clear();
        for (const auto& el : *arr) {
            auto v = el.value<std::string>();
            if (!v) {
                errors_.push_back(section + "." + key + ": entries must be strings");
                return;
            }
            out.push_back(*v);
        }
    }

    void report_unknown() {
        for (const auto& [k, v] : root_) {
            const std::string section(k.str());
            const auto* tbl = v.as_table();
            if (!tbl) {
                if (!used_.count(section)) errors_.push_back(section + ": unknown top-level key");
                continue;
            }
            for (const auto& [kk, vv] : *tbl) {
                (void)vv;
                auto full = section + "." + std::string(kk.str());
                if (!used_.count(full)) errors_.push_back(full + ": unknown setting");
            }
        }
    }

    void mark(const std::string& key) { used_.insert(key); }

private:
    const toml::node* lookup(const std::string& section, const std::string& key) {
        used_.insert(section + "." + key);
        const auto* tbl = root_[section].as_table();
        if (!tbl) return nullptr;
        return tbl->get(key);
    }

    const toml::table& root_;
    std::vector<std::string>& errors_;
    std::set<std::string> used_;
};

void apply_override(toml::table& root, const std::string& spec, std::vector<std::string>& errors) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) {
        errors.push_back("override '" + spec + "': expected section.key=value");
        return;
    }
    auto key = text::trim(spec.substr(0, eq));
    auto value = text::trim(spec.substr(eq + 1));
    auto parts = text::split(key, '.');
    if (parts.size() != 2 || parts[0].empty() || parts[1].empty()) {
        errors.push_back("override '" + spec + "': key must be section.key");
        return;
    }
    toml::table parsed;
    try {
        parsed = toml::parse("v = " + value);
    } catch (const toml::parse_error&) {
        // Bare words are strings.
        parsed.insert_or_assign("v", value);
    }
    auto* section = root[parts[0]].as_table();
    if (!section) {
        root.insert_or_assign(parts[0], toml::table{});
        section = root[parts[0]].as_table();
    }
    section->insert_or_assign(parts[1], *parsed.get("v"));
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace

PipelineConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir,
                            const std::vector<std::string>& overrides) {
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "config parse error at line " << e.source().begin.line << ": " << e.description();
        fail(ErrorCode::invalid_config, msg.str());
    }
    std::vector<std::string> errors;
    for (const auto& o : overrides) apply_override(root, o, errors);

    PipelineConfig c;
    Fields f(root, errors);
    f.get("run", "dataset", c.dataset);

    std::string corpus, qa, work_dir = "work", gold;
    f.get("paths", "corpus", corpus);
    f.get("paths", "qa", qa);
    f.get("paths", "work_dir", work_dir);
    f.get("paths", "gold", gold);
    c.paths.corpus = resolve(base_dir, corpus);
    c.paths.qa = resolve(base_dir, qa);
    c.paths.work_dir = resolve(base_dir, work_dir);
    c.paths.gold = resolve(base_dir, gold);
    if (corpus.empty()) errors.emplace_back("paths.corpus: required");
    if (work_dir.empty()) errors.emplace_back("paths.work_dir: must not be empty");

    auto& g = c.gateway;
    f.get("gateway", "backend", g.backend);
    f.get("gateway", "chat_model", g.chat_model);
    f.get("gateway", "embed_model", g.embed_model);
    f.get("gateway", "embed_dim", g.embed_dim);
    f.get("gateway", "parallelism", g.parallelism);
    f.get("gateway", "max_retries", g.max_retries);
    f.get("gateway", "mock_seed", g.mock_seed);
    f.get("gateway", "timeout_s", g.timeout_s);
    f.get("gateway", "audit", g.audit);
    if (g.backend != "mock" && g.backend != "http") errors.push_back("gateway.backend: expected \"mock\" or \"http\"");
    if (g.parallelism < 1 || g.parallelism > 1024) errors.emplace_back("gateway.parallelism: must lie in [1, 1024]");
    if (g.embed_dim < 2) errors.emplace_back("gateway.embed_dim: must be >= 2");
    if (!(g.timeout_s > 0)) errors.emplace_back("gateway.timeout_s: must be > 0");

    f.get("chunking", "size", c.chunking.size);
    f.get("chunking", "overlap", c.chunking.overlap);
    if (c.chunking.size == 0) errors.emplace_back("chunking.size: must be >= 1");
    if (c.chunking.overlap >= c.chunking.size) errors.emplace_back("chunking.overlap: must be < chunking.size");

    f.get("mindscape", "budget_tokens", c.budget_tokens);
    f.get("mindscape", "extract_nodes", c.extract_nodes);
    if (c.budget_tokens < 16) errors.emplace_back("mindscape.budget_tokens: must be >= 16");

    std::vector<std::string> tasks;
    f.get("retrieval", "delta", c.delta);
    f.get_strings("retrieval", "tasks", tasks);
    f.get_list("retrieval", "k", c.k_values);
    f.get("retrieval", "answer_k", c.answer_k);
    f.get("retrieval", "k_retrieve", c.k_retrieve);
    f.get("retrieval", "k_select", c.k_select);
    if (!(c.delta >= 0.0 && c.delta <= 1.0)) errors.emplace_back("retrieval.delta: must lie in [0, 1]");
    if (!tasks.empty()) {
        c.tasks.clear();
        for (const auto& t : tasks) {
            if (t == "chunk") {
                c.tasks.push_back(EvidenceTask::chunk);
            } else if (t == "node") {
                c.tasks.push_back(EvidenceTask::node);
            } else {
                errors.push_back("retrieval.tasks: unknown task \"" + t + "\"");
            }
        }
    }
    if (c.k_values.empty()) errors.emplace_back("retrieval.k: must not be empty");
    if (c.answer_k < 1) errors.emplace_back("retrieval.answer_k: must be >= 1");
    if (c.k_retrieve < 1) errors.emplace_back("retrieval.k_retrieve: must be >= 1");
    if (c.k_select < 1) errors.emplace_back("retrieval.k_select: must be >= 1");
    if (!c.extract_nodes) {
        for (auto t : c.tasks) {
            if (t == EvidenceTask::node) errors.emplace_back("retrieval.tasks: node task needs mindscape.extract_nodes");
        }
    }

    auto& a = c.adapter;
    f.get("adapter", "tau", a.tau);
    f.get("adapter", "beta", a.beta);
    f.get("adapter", "lr", a.lr);
    f.get("adapter", "steps", a.steps);
    f.get("adapter", "batch", a.batch);
    f.get("adapter", "warmup_ratio", a.warmup_ratio);
    f.get("adapter", "learn_delta", a.learn_delta);
    f.get("adapter", "apply", a.apply);
    if (!(a.tau > 0.0)) errors.emplace_back("adapter.tau: must be > 0");
    if (!(a.beta >= 0.0 && a.beta <= 1.0)) errors.emplace_back("adapter.beta: must lie in [0, 1]");
    if (!(a.lr > 0.0)) errors.emplace_back("adapter.lr: must be > 0");
    if (a.batch < 1) errors.emplace_back("adapter.batch: must be >= 1");
    if (!(a.warmup_ratio >= 0.0 && a.warmup_ratio <= 1.0)) errors.emplace_back("adapter.warmup_ratio: must lie in [0, 1]");

    f.get("sft", "min_noise", c.min_noise);
    f.get("sft", "max_noise", c.max_noise);
    if (c.min_noise > c.max_noise) errors.emplace_back("sft.min_noise: must be <= sft.max_noise");

    f.get("seeds", "annotate", c.seed_annotate);
    f.get("seeds", "train", c.seed_train);
    f.get("seeds", "sft", c.seed_sft);

    f.report_unknown();
    if (!errors.empty()) {
        std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                          (errors.size() == 1 ? "" : "s") + "):";
        for (const auto& e : errors) msg += "\n  " + e;
        fail(ErrorCode::invalid_config, msg);
    }
    return c;
}

PipelineConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail(ErrorCode::invalid_config, "cannot read config file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    auto c = parse_config(ss.str(), file.parent_path().empty() ? std::filesystem::path(".") : file.parent_path(),
                          overrides);
    c.source = file;
    return c;
}

nlohmann::ordered_json config_snapshot(const PipelineConfig& c) {
    nlohmann::ordered_json tasks = nlohmann::ordered_json::array();
    for (auto t : c.tasks) tasks.push_back(std::string(to_string(t)));
    return {
        {"dataset", c.dataset},
        {"gateway",
         {{"backend", c.gateway.backend},
          {"chat_model", c.gateway.chat_model},
          {"embed_model", c.gateway.embed_model},
          {"embed_dim", c.gateway.embed_dim},
          {"mock_seed", c.gateway.mock_seed}}},
        {"chunking", {{"size", c.chunking.size}, {"overlap", c.chunking.overlap}}},
        {"mindscape", {{"budget_tokens", c.budget_tokens}, {"extract_nodes", c.extract_nodes}}},
        {"retrieval",
         {{"delta", c.delta},
          {"tasks", tasks},
          {"k", c.k_values},
          {"answer_k", c.answer_k},
          {"k_retrieve", c.k_retrieve},
          {"k_select", c.k_select}}},
        {"adapter",
         {{"tau", c.adapter.tau},
          {"beta", c.adapter.beta},
          {"lr", c.adapter.lr},
          {"steps", c.adapter.steps},
          {"batch", c.adapter.batch},
          {"warmup_ratio", c.adapter.warmup_ratio},
          {"learn_delta", c.adapter.learn_delta},
          {"apply", c.adapter.apply}}},
        {"sft", {{"min_noise", c.min_noise}, {"max_noise", c.max_noise}}},
        {"seeds", {{"annotate", c.seed_annotate}, {"train", c.seed_train}, {"sft", c.seed_sft}}},
    };
}

}  // namespace mia::cli
