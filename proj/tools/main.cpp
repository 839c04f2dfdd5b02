#include "config.hpp"
#include "manifest.hpp"
#include "pipeline.hpp"

#include "mia/error.hpp"
#include "mia/log.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <map>

int main(int argc, char** argv) {
    CLI::App app{"mia: mindscape-aware retrieval pipeline"};
    app.set_version_flag("--version", mia::cli::tool_version());
    app.require_subcommand(1);

    std::string config_file;
    std::vector<std::string> overrides;
    bool quiet = false;
    app.add_option("-c,--config", config_file, "pipeline TOML file")->required();
    app.add_option("--set", overrides, "override a setting, section.key=value")->take_all();
    app.add_flag("-q,--quiet", quiet, "suppress info logging");

    std::size_t steps = 0;
    std::vector<std::size_t> ks;
    mia::cli::AnalyzeInputs analyze;
    std::map<std::string, CLI::App*> subs;
    subs["ingest"] = app.add_subcommand("ingest", "chunk the corpus");
    subs["mindscape"] = app.add_subcommand("mindscape", "chunk summaries, global summary, entity nodes");
    subs["index"] = app.add_subcommand("index", "embed chunks and nodes");
    subs["annotate"] = app.add_subcommand("annotate", "build silver evidence");
    subs["train-adapter"] = app.add_subcommand("train-adapter", "train the contrastive query adapter");
    subs["train-adapter"]->add_option("--steps", steps, "override adapter.steps");
    subs["retrieve"] = app.add_subcommand("retrieve", "top-k chunks per question");
    subs["answer"] = app.add_subcommand("answer", "generate answers");
    subs["eval"] = app.add_subcommand("eval", "score predictions");
    subs["eval"]->add_option("--k", ks, "recall cutoffs, e.g. 3,5,10")->delimiter(',');
    auto* an = app.add_subcommand("analyze", "projection angles, MCEA, layer silver ratio");
    an->add_option("--attention", analyze.attention, "attention dump")->check(CLI::ExistingFile);
    an->add_option("--replaced", analyze.replaced, "summary-replaced attention dump")->check(CLI::ExistingFile);
    an->add_option("--relevant", analyze.relevant, "relevant chunk span names");
    an->add_option("--noise", analyze.noise, "noise chunk span names");
    an->add_option("--hidden", analyze.hidden, "qid=path hidden-state dump");
    subs["analyze"] = an;
    subs["export-sft"] = app.add_subcommand("export-sft", "write supervised fine-tuning examples");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // --help and --version come through here with exit code 0.
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    mia::log::set_quiet(quiet);

    if (steps) overrides.push_back("adapter.steps=" + std::to_string(steps));
    if (!ks.empty()) {
        std::string list;
        for (auto k : ks) list += (list.empty() ? "" : ",") + std::to_string(k);
        overrides.push_back("retrieval.k=[" + list + "]");
    }

    using Runner = std::function<void(const mia::cli::PipelineConfig&)>;
    const std::map<std::string, Runner> runners{
        {"ingest", mia::cli::run_ingest},
        {"mindscape", mia::cli::run_mindscape},
        {"index", mia::cli::run_index},
        {"annotate", mia::cli::run_annotate},
        {"train-adapter", mia::cli::run_train_adapter},
        {"retrieve", mia::cli::run_retrieve},
        {"answer", mia::cli::run_answer},
        {"eval", mia::cli::run_eval},
        {"analyze", [&](const auto& cfg) { mia::cli::run_analyze(cfg, analyze); }},
        {"export-sft", mia::cli::run_export_sft},
    };
    try {
        const auto cfg = mia::cli::load_config(config_file, overrides);
        for (const auto& [name, sub] : subs) {
            if (sub->parsed()) runners.at(name)(cfg);
        }
    } catch (const mia::Error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", std::string(mia::to_string(e.code())).c_str(), e.what());
        return mia::cli::exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
