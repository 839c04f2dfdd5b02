#include "pipeline.hpp"

#include "manifest.hpp"

#include "mia/adapter.hpp"
#include "mia/analysis.hpp"
#include "mia/corpus.hpp"
#include "mia/digest.hpp"
#include "mia/embedding.hpp"
#include "mia/evalharness.hpp"
#include "mia/llm_gateway.hpp"
#include "mia/log.hpp"
#include "mia/mindscape.hpp"
#include "mia/qa.hpp"
#include "mia/ragflow.hpp"
#include "mia/silver.hpp"
#include "mia/text.hpp"
#include "mia/vector_index.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace mia::cli {

namespace {

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorCode::io_error, "short write to " + path.string());
}

void write_jsonl(const fs::path& path, const std::vector<ojson>& rows) {
    std::string s;
    for (const auto& r : rows) s += r.dump() + "\n";
    write_text(path, s);
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path, const std::string& artifact) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::upstream_missing, artifact + " artifact missing: " + path.string());
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::schema_mismatch, path.string() + " line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

ArtifactRef input_ref(const fs::path& p) { return {p.filename().string(), sha256_file(p)}; }

void require_file(const fs::path& p, const std::string& key) {
    if (p.empty()) fail(ErrorCode::invalid_config, key + ": not set");
    if (!fs::is_regular_file(p)) fail(ErrorCode::invalid_config, key + ": file not found: " + p.string());
}

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? v : "";
}

std::unique_ptr<LlmGateway> make_gateway(const PipelineConfig& cfg) {
    GatewayOptions opts;
    opts.parallelism = cfg.gateway.parallelism;
    opts.retry.max_retries = static_cast<int>(cfg.gateway.max_retries);
    opts.default_model = cfg.gateway.chat_model;
    if (cfg.gateway.audit) opts.audit_log = cfg.paths.work_dir / "audit.jsonl";
    if (cfg.gateway.backend == "mock") {
        return std::make_unique<LlmGateway>(std::make_unique<MockChatTransport>(cfg.gateway.mock_seed), std::move(opts));
    }
    const auto url = env_or_empty("MIA_CHAT_ENDPOINT");
    if (url.empty()) fail(ErrorCode::invalid_config, "gateway.backend = \"http\" needs MIA_CHAT_ENDPOINT");
    auto timeout = std::chrono::milliseconds(static_cast<long long>(cfg.gateway.timeout_s * 1000));
    return std::make_unique<LlmGateway>(
        std::make_unique<HttpChatTransport>(url, env_or_empty("MIA_CHAT_API_KEY"), timeout), std::move(opts));
}

std::unique_ptr<Embedder> make_embedder(const PipelineConfig& cfg) {
    EmbedderOptions opts;
    opts.retry.max_retries = static_cast<int>(cfg.gateway.max_retries);
    if (cfg.gateway.backend == "mock") {
        return std::make_unique<Embedder>(
            std::make_unique<MockEmbeddingTransport>(cfg.gateway.mock_seed, cfg.gateway.embed_dim), opts);
    }
    const auto url = env_or_empty("MIA_EMBED_ENDPOINT");
    if (url.empty()) fail(ErrorCode::invalid_config, "gateway.backend = \"http\" needs MIA_EMBED_ENDPOINT");
    return std::make_unique<Embedder>(
        std::make_unique<HttpEmbeddingTransport>(url, env_or_empty("MIA_EMBED_API_KEY"), cfg.gateway.embed_model),
        opts);
}

// Corpus artifacts: document order plus chunks grouped by document.
struct CorpusView {
    std::vector<std::string> doc_order;
    std::map<std::string, std::vector<Chunk>> chunks;
};

CorpusView load_corpus_view(const fs::path& work) {
    CorpusView v;
    for (const auto& j : read_jsonl(work / "corpus" / "documents.jsonl", "corpus")) {
        v.doc_order.push_back(j.at("id").get<std::string>());
        v.chunks[v.doc_order.back()];
    }
    for (const auto& j : read_jsonl(work / "corpus" / "chunks.jsonl", "corpus")) {
        auto c = chunk_from_json(j);
        v.chunks[c.doc_id].push_back(std::move(c));
    }
    return v;
}

fs::path mindscape_file(const fs::path& work, const std::string& doc) {
    return work / "mindscape" / (file_stem(doc) + ".json");
}
fs::path nodes_file(const fs::path& work, const std::string& doc) {
    return work / "mindscape" / (file_stem(doc) + ".nodes.jsonl");
}
fs::path index_file(const fs::path& work, const std::string& doc, EvidenceTask task) {
    return work / "index" / (file_stem(doc) + (task == EvidenceTask::chunk ? ".chunks.idx" : ".nodes.idx"));
}

std::string rel(const fs::path& work, const fs::path& p) { return p.lexically_relative(work).generic_string(); }

std::vector<Node> load_nodes(const fs::path& work, const std::string& doc) {
    std::vector<Node> out;
    for (const auto& j : read_jsonl(nodes_file(work, doc), "mindscape")) out.push_back(node_from_json(j));
    return out;
}

std::size_t max_k(const PipelineConfig& cfg) {
    return std::max(cfg.answer_k, *std::max_element(cfg.k_values.begin(), cfg.k_values.end()));
}

std::map<std::string, std::vector<std::size_t>> group_by_doc(const std::vector<QaItem>& qa) {
    std::map<std::string, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < qa.size(); ++i) out[qa[i].doc_id].push_back(i);
    return out;
}

double round6(double x) { return std::round(x * 1e6) / 1e6; }

std::optional<AdapterParams> maybe_adapter(const PipelineConfig& cfg, Manifest& m) {
    if (!cfg.adapter.apply) return std::nullopt;
    m.upstream.push_back(require_stage(cfg.paths.work_dir, "adapter", "adapter"));
    return load_adapter(cfg.paths.work_dir / "adapter" / "adapter.bin");
}

}  // namespace

std::string file_stem(const std::string& doc_id) {
    std::string out;
    for (unsigned char c : doc_id) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
            out.push_back(static_cast<char>(c));
        } else {
            char buf[4];
            std::snprintf(buf, sizeof buf, "%%%02X", c);
            out += buf;
        }
    }
    if (out.empty() || out == "." || out == "..") out = "%" + out;
    return out;
}

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_config: return 2;
        case ErrorCode::upstream_missing: return 3;
        case ErrorCode::transport_error:
        case ErrorCode::rate_limited:
        case ErrorCode::empty_completion: return 4;
        case ErrorCode::io_error: return 1;
        default: return 5;
    }
}

void run_ingest(const PipelineConfig& cfg) {
    require_file(cfg.paths.corpus, "paths.corpus");
    const auto& work = cfg.paths.work_dir;
    auto docs = load_documents_jsonl(cfg.paths.corpus);
    if (docs.empty()) fail(ErrorCode::invalid_config, "paths.corpus: no documents in " + cfg.paths.corpus.string());
    validate(cfg.chunking);

    std::vector<ojson> doc_rows, chunk_rows;
    std::size_t tokens = 0, chunks = 0;
    for (const auto& d : docs) {
        doc_rows.push_back(to_json(d));
        const auto cs = chunk_document(d, cfg.chunking);
        for (const auto& c : cs) chunk_rows.push_back(to_json(c));
        tokens += count_tokens(d.text);
        chunks += cs.size();
    }
    write_jsonl(work / "corpus" / "documents.jsonl", doc_rows);
    write_jsonl(work / "corpus" / "chunks.jsonl", chunk_rows);

    Manifest m;
    m.stage = "corpus";
    m.config = config_snapshot(cfg);
    m.inputs.push_back(input_ref(cfg.paths.corpus));
    m.stats = {{"documents", docs.size()},
               {"chunks", chunks},
               {"tokens", tokens},
               {"tokenizer", default_tokenizer().name()}};
    write_manifest(work, m, {"corpus/documents.jsonl", "corpus/chunks.jsonl"});
    log::info("ingested " + std::to_string(docs.size()) + " documents, " + std::to_string(chunks) + " chunks");
}

void run_mindscape(const PipelineConfig& cfg) {
    const auto& work = cfg.paths.work_dir;
    Manifest m;
    m.stage = "mindscape";
    m.config = config_snapshot(cfg);
    m.upstream.push_back(require_stage(work, "corpus", "corpus"));
    const auto corpus = load_corpus_view(work);
    auto gw = make_gateway(cfg);

    SummarizerOptions opts;
    opts.budget_tokens = cfg.budget_tokens;
    std::vector<std::string> outputs;
    ojson per_doc = ojson::object();
    for (const auto& doc : corpus.doc_order) {
        const auto& chunks = corpus.chunks.at(doc);
        auto ms = build_mindscape(*gw, doc, chunks, opts);
        const auto mf = mindscape_file(work, doc);
        fs::create_directories(mf.parent_path());
        save_mindscape(ms, mf);
        outputs.push_back(rel(work, mf));
        ojson stats{{"chunks", chunks.size()}, {"levels", ms.levels}, {"summary_tokens", count_tokens(ms.global_summary)}};
        if (cfg.extract_nodes) {
            const auto nodes = extract_entities(*gw, chunks, opts);
            std::vector<ojson> rows;
            for (std::size_t i = 0; i < nodes.size(); ++i) rows.push_back(to_json(nodes[i], i));
            write_jsonl(nodes_file(work, doc), rows);
            outputs.push_back(rel(work, nodes_file(work, doc)));
            stats["nodes"] = nodes.size();
        }
        per_doc[doc] = stats;
    }
    m.stats = {{"documents", per_doc}, {"llm_calls", gw->calls()}};
    write_manifest(work, m, outputs);
}

void run_index(const PipelineConfig& cfg) {
    const auto& work = cfg.paths.work_dir;
    Manifest m;
    m.stage = "index";
    m.config = config_snapshot(cfg);
    m.upstream.push_back(require_stage(work, "corpus", "corpus"));
    if (cfg.extract_nodes) m.upstream.push_back(require_stage(work, "mindscape", "mindscape"));
    const auto corpus = load_corpus_view(work);
    auto emb = make_embedder(cfg);

    std::vector<std::string> outputs;
    ojson per_doc = ojson::object();
    for (const auto& doc : corpus.doc_order) {
        const auto& chunks = corpus.chunks.at(doc);
        std::vector<std::string> texts;
        for (const auto& c : chunks) texts.push_back(c.text);
        const auto vecs = emb->embed_texts(texts);
        Collection coll(doc + ".chunks", vecs.front().dim());
        for (std::size_t i = 0; i < chunks.size(); ++i) coll.insert(chunks[i].id(), vecs[i], chunks[i].text);
        const auto cf = index_file(work, doc, EvidenceTask::chunk);
        fs::create_directories(cf.parent_path());
        coll.save(cf);
        outputs.push_back(rel(work, cf));
        ojson stats{{"chunks", coll.size()}, {"dim", coll.dim()}};
        if (cfg.extract_nodes) {
            const auto nodes = load_nodes(work, doc);
            Collection nc(doc + ".nodes", coll.dim());
            if (!nodes.empty()) {
                std::vector<std::string> nt;
                for (const auto& n : nodes) nt.push_back(n.text());
                const auto nv = emb->embed_texts(nt);
                for (std::size_t i = 0; i < nodes.size(); ++i) nc.insert(node_id(doc, i), nv[i], nodes[i].text());
            }
            const auto nf = index_file(work, doc, EvidenceTask::node);
            nc.save(nf);
            outputs.push_back(rel(work, nf));
            stats["nodes"] = nc.size();
        }
        per_doc[doc] = stats;
    }
    m.stats = {{"documents", per_doc}};
    write_manifest(work, m, outputs);
}

void run_annotate(const PipelineConfig& cfg) {
    require_file(cfg.paths.qa, "paths.qa");
    const auto& work = cfg.paths.work_dir;
    Manifest m;
    m.stage = "silver";
    m.config = config_snapshot(cfg);
    m.inputs.push_back(input_ref(cfg.paths.qa));
    m.upstream.push_back(require_stage(work, "mindscape", "mindscape"));
    m.upstream.push_back(require_stage(work, "index", "index"));
    const auto corpus = load_corpus_view(work);
    const auto qa = load_qa_jsonl(cfg.paths.qa);
    const auto by_doc = group_by_doc(qa);
    auto gw = make_gateway(cfg);
    auto emb = make_embedder(cfg);

    AnnotateOptions opts;
    opts.k_retrieve = cfg.k_retrieve;
    opts.k_select = cfg.k_select;
    opts.seed = cfg.seed_annotate;

    std::vector<ojson> rows;
    ojson stats = ojson::object();
    for (auto task : cfg.tasks) {
        std::vector<std::optional<SilverRecord>> slots(qa.size());
        AnnotationStats total;
        std::size_t silver_sum = 0;
        for (const auto& [doc, idx] : by_doc) {
            if (!corpus.chunks.count(doc)) {
                log::warn("questions for unknown document " + doc + " skipped");
                total.questions += idx.size();
                total.failed += idx.size();
                continue;
            }
            const auto ms = load_mindscape(mindscape_file(work, doc));
            const auto coll = Collection::load(index_file(work, doc, task));
            std::vector<QaItem> items;
            for (auto i : idx) items.push_back(qa[i]);
            if (coll.size() == 0) {
                log::warn("empty " + std::string(to_string(task)) + " index for " + doc + "; questions skipped");
                total.questions += items.size();
                total.failed += items.size();
                continue;
            }
            auto res = annotate_corpus(items, ms, coll, *emb, *gw, task, opts);
            total.questions += res.stats.questions;
            total.annotated += res.stats.annotated;
            total.failed += res.stats.failed;
            total.unfiltered += res.stats.unfiltered;
            total.none_relevant += res.stats.none_relevant;
            std::map<std::string, std::size_t> pos;
            for (auto i : idx) pos[qa[i].qid] = i;
            for (auto& r : res.records) {
                silver_sum += r.silver_ids.size();
                slots[pos.at(r.qid)] = std::move(r);
            }
        }
        for (auto& s : slots) {
            if (s) rows.push_back(to_json(*s));
        }
        const double avg = total.annotated ? static_cast<double>(silver_sum) / total.annotated : 0.0;
        stats[std::string(to_string(task))] = {{"questions", total.questions},
                                               {"annotated", total.annotated},
                                               {"failed", total.failed},
                                               {"unfiltered", total.unfiltered},
                                               {"none_relevant", total.none_relevant},
                                               {"avg_silver", round6(avg)}};
    }
    write_jsonl(work / "silver" / "silver.jsonl", rows);
    m.stats = stats;
    write_manifest(work, m, {"silver/silver.jsonl"});
}

void run_train_adapter(const PipelineConfig& cfg) {
    const auto& work = cfg.paths.work_dir;
    Manifest m;
    m.stage = "adapter";
    m.config = config_snapshot(cfg);
    m.upstream.push_back(require_stage(work, "silver", "silver"));
    m.upstream.push_back(require_stage(work, "index", "index"));
    m.upstream.push_back(require_stage(work, "mindscape", "mindscape"));
    const auto records = load_silver_jsonl(work / "silver" / "silver.jsonl");
    auto emb = make_embedder(cfg);

    std::map<std::string, Mindscape> mindscapes;
    std::map<std::pair<std::string, int>, Collection> colls;
    std::vector<ContrastiveTuple> dataset;
    for (const auto& r : records) {
        if (r.silver_ids.empty()) continue;
        if (!mindscapes.count(r.doc_id)) mindscapes.emplace(r.doc_id, load_mindscape(mindscape_file(work, r.doc_id)));
        const auto key = std::make_pair(r.doc_id, static_cast<int>(r.task));
        if (!colls.count(key)) colls.emplace(key, Collection::load(index_file(work, r.doc_id, r.task)));
        const auto cq = condition_query(*emb, r.query, mindscapes.at(r.doc_id), r.task, cfg.delta);
        for (auto& t : tuples_for_record(r, cq, colls.at(key))) dataset.push_back(std::move(t));
    }
    if (dataset.empty()) fail(ErrorCode::invariant_violation, "no silver evidence to train on");

    auto params = AdapterParams::identity(dataset.front().q_tilde.size());
    params.tau = cfg.adapter.tau;
    params.beta = cfg.adapter.beta;
    params.delta = cfg.delta;
    params.learn_delta = cfg.adapter.learn_delta;
    TrainConfig tc;
    tc.lr = cfg.adapter.lr;
    tc.steps = cfg.adapter.steps;
    tc.batch = cfg.adapter.batch;
    tc.seed = cfg.seed_train;
    tc.warmup_ratio = cfg.adapter.warmup_ratio;
    const auto res = train(dataset, params, tc);

    fs::create_directories(work / "adapter");
    save_adapter(res.params, work / "adapter" / "adapter.bin");
    write_text(work / "adapter" / "trace.csv", trace_csv(res.trace));
    m.stats = {{"tuples", dataset.size()},
               {"steps", tc.steps},
               {"initial_mean_loss", round6(res.initial_mean_loss)},
               {"final_mean_loss", round6(res.final_mean_loss)},
               {"delta", round6(res.params.delta)}};
    write_manifest(work, m, {"adapter/adapter.bin", "adapter/trace.csv"});
}

void run_retrieve(const PipelineConfig& cfg) {
    require_file(cfg.paths.qa, "paths.qa");
    const auto& work = cfg.paths.work_dir;
    Manifest m;
    m.stage = "retrieve";
    m.config = config_snapshot(cfg);
    m.inputs.push_back(input_ref(cfg.paths.qa));
    m.upstream.push_back(require_stage(work, "mindscape", "mindscape"));
    m.upstream.push_back(require_stage(work, "index", "index"));
    const auto adapter = maybe_adapter(cfg, m);
    const auto qa = load_qa_jsonl(cfg.paths.qa);
    auto emb = make_embedder(cfg);

    std::vector<ojson> rows(qa.size());
    for (const auto& [doc, idx] : group_by_doc(qa)) {
        const auto mf = mindscape_file(work, doc);
        if (!fs::exists(mf)) fail(ErrorCode::upstream_missing, "mindscape artifact missing for document " + doc);
        const auto ms = load_mindscape(mf);
        const auto coll = Collection::load(index_file(work, doc, EvidenceTask::chunk));
        for (auto i : idx) {
            const auto cq = condition_query(*emb, qa[i].question, ms, RetrievalMode::chunk, cfg.delta);
            const auto q = adapter ? apply_adapter(*adapter, cq.q_tilde) : cq.q_tilde;
            ojson ids = ojson::array(), scores = ojson::array();
            for (const auto& h : coll.top_k(q, max_k(cfg))) {
                ids.push_back(h.id);
                scores.push_back(h.score);
            }
            rows[i] = {{"qid", qa[i].qid}, {"retrieved_ids", ids}, {"scores", scores}};
        }
    }
    write_jsonl(work / "retrieve" / "retrieved.jsonl", rows);
    m.stats = {{"queries", qa.size()}, {"k", max_k(cfg)}, {"adapter", adapter.has_value()}};
    write_manifest(work, m, {"retrieve/retrieved.jsonl"});
}

void run_answer(const PipelineConfig& cfg) {
    require_file(cfg.paths.qa, "paths.qa");
    const auto& work = cfg.paths.work_dir;
    Manifest m;
    m.stage = "answer";
    m.config = config_snapshot(cfg);
    m.inputs.push_back(input_ref(cfg.paths.qa));
    m.upstream.push_back(require_stage(work, "mindscape", "mindscape"));
    m.upstream.push_back(require_stage(work, "index", "index"));
    const auto adapter = maybe_adapter(cfg, m);
    const auto qa = load_qa_jsonl(cfg.paths.qa);
    auto gw = make_gateway(cfg);
    auto emb = make_embedder(cfg);

    std::vector<AnswerResult> results(qa.size());
    for (const auto& [doc, idx] : group_by_doc(qa)) {
        const auto mf = mindscape_file(work, doc);
        if (!fs::exists(mf)) fail(ErrorCode::upstream_missing, "mindscape artifact missing for document " + doc);
        const auto ms = load_mindscape(mf);
        const auto coll = Collection::load(index_file(work, doc, EvidenceTask::chunk));
        RagContext ctx;
        ctx.embedder = emb.get();
        ctx.gateway = gw.get();
        ctx.mindscape = &ms;
        ctx.index = &coll;
        ctx.adapter = adapter ? &*adapter : nullptr;
        ctx.delta = cfg.delta;
        ctx.context_k = cfg.answer_k;
        std::vector<QaItem> items;
        for (auto i : idx) items.push_back(qa[i]);
        auto res = answer_all(ctx, items, max_k(cfg));
        for (std::size_t j = 0; j < idx.size(); ++j) results[idx[j]] = std::move(res[j]);
    }
    std::vector<ojson> preds, transcript;
    std::size_t unparsed = 0;
    for (const auto& r : results) {
        preds.push_back(to_json(to_prediction(r)));
        transcript.push_back(transcript_json(r));
        unparsed += r.parsed.parsed ? 0 : 1;
    }
    write_jsonl(work / "answer" / "predictions.jsonl", preds);
    write_jsonl(work / "answer" / "transcript.jsonl", transcript);
    m.stats = {{"queries", qa.size()}, {"unparsed", unparsed}, {"context_k", cfg.answer_k}};
    write_manifest(work, m, {"answer/predictions.jsonl", "answer/transcript.jsonl"});
}

void run_eval(const PipelineConfig& cfg) {
    const auto& work = cfg.paths.work_dir;
    Manifest m;
    m.stage = "eval";
    m.config = config_snapshot(cfg);
    m.upstream.push_back(require_stage(work, "answer", "answer"));
    EvalConfig ec;
    ec.predictions = work / "answer" / "predictions.jsonl";
    ec.dataset = cfg.dataset;
    ec.ks = cfg.k_values;
    std::vector<std::string> outputs;
    if (!cfg.paths.gold.empty()) {
        require_file(cfg.paths.gold, "paths.gold");
        m.inputs.push_back(input_ref(cfg.paths.gold));
        ec.gold = cfg.paths.gold;
    } else {
        require_file(cfg.paths.qa, "paths.qa");
        m.inputs.push_back(input_ref(cfg.paths.qa));
        m.upstream.push_back(require_stage(work, "silver", "silver"));
        std::vector<SilverRecord> chunk_records;
        for (auto& r : load_silver_jsonl(work / "silver" / "silver.jsonl")) {
            if (r.task == EvidenceTask::chunk) chunk_records.push_back(std::move(r));
        }
        std::vector<ojson> rows;
        for (const auto& g : gold_from_qa(load_qa_jsonl(cfg.paths.qa), chunk_records)) rows.push_back(to_json(g));
        write_jsonl(work / "eval" / "gold.jsonl", rows);
        ec.gold = work / "eval" / "gold.jsonl";
        outputs.emplace_back("eval/gold.jsonl");
    }
    const auto report = mia::run_eval(ec);
    write_text(work / "eval" / "report.json", to_json(report).dump(2) + "\n");
    write_text(work / "eval" / "report.txt", render_table(report));
    outputs.emplace_back("eval/report.json");
    outputs.emplace_back("eval/report.txt");
    ojson metrics = ojson::object();
    for (const auto& [k, v] : report.metrics) metrics[k] = round6(v);
    m.stats = {{"metrics", metrics}};
    write_manifest(work, m, outputs);
    std::fputs(render_table(report).c_str(), stdout);
}

void run_analyze(const PipelineConfig& cfg, const AnalyzeInputs& in) {
    const auto& work = cfg.paths.work_dir;
    Manifest m;
    m.stage = "analysis";
    m.config = config_snapshot(cfg);
    m.upstream.push_back(require_stage(work, "mindscape", "mindscape"));
    m.upstream.push_back(require_stage(work, "index", "index"));
    const auto adapter = maybe_adapter(cfg, m);
    require_file(cfg.paths.qa, "paths.qa");
    m.inputs.push_back(input_ref(cfg.paths.qa));
    const auto qa = load_qa_jsonl(cfg.paths.qa);
    auto emb = make_embedder(cfg);

    ojson out;
    ojson per_query = ojson::array();
    double sum_plain = 0.0, sum_cond = 0.0, sum_adapted = 0.0;
    std::size_t n = 0;
    for (const auto& [doc, idx] : group_by_doc(qa)) {
        const auto mf = mindscape_file(work, doc);
        if (!fs::exists(mf)) fail(ErrorCode::upstream_missing, "mindscape artifact missing for document " + doc);
        const auto ms = load_mindscape(mf);
        const auto coll = Collection::load(index_file(work, doc, EvidenceTask::chunk));
        std::vector<std::vector<double>> chunk_vecs;
        for (const auto& id : coll.ids()) chunk_vecs.push_back(to_double(*coll.vector(id)));
        for (auto i : idx) {
            const auto cq = condition_query(*emb, qa[i].question, ms, RetrievalMode::chunk, cfg.delta);
            const double plain = projection_angle(to_double(cq.h_q), chunk_vecs);
            const double cond = projection_angle(to_double(cq.q_tilde), chunk_vecs);
            ojson row{{"qid", qa[i].qid}, {"angle_h_q", round6(plain)}, {"angle_q_tilde", round6(cond)}};
            sum_plain += plain;
            sum_cond += cond;
            if (adapter) {
                const double ad = projection_angle(to_double(apply_adapter(*adapter, cq.q_tilde)), chunk_vecs);
                row["angle_adapted"] = round6(ad);
                sum_adapted += ad;
            }
            per_query.push_back(row);
            ++n;
        }
    }
    ojson means{{"angle_h_q", round6(sum_plain / n)}, {"angle_q_tilde", round6(sum_cond / n)}};
    if (adapter) means["angle_adapted"] = round6(sum_adapted / n);
    out["projection_angles"] = {{"mean", means}, {"per_query", per_query}};

    auto vec_json = [](const std::vector<double>& v) {
        ojson a = ojson::array();
        for (double x : v) a.push_back(round6(x));
        return a;
    };
    if (!in.attention.empty()) {
        if (!in.replaced.empty() && in.replaced.size() != in.attention.size()) {
            fail(ErrorCode::invalid_config, "--replaced needs one file per --attention file");
        }
        ojson mcea = ojson::array();
        for (std::size_t i = 0; i < in.attention.size(); ++i) {
            m.inputs.push_back(input_ref(in.attention[i]));
            auto d = load_dump(in.attention[i]);
            if (!std::holds_alternative<AttentionDump>(d)) {
                fail(ErrorCode::schema_mismatch, in.attention[i] + " is not an attention dump");
            }
            const auto& ad = std::get<AttentionDump>(d);
            ojson row{{"dump", fs::path(in.attention[i]).filename().string()},
                      {"mcea", vec_json(mcea_layer(ad, in.relevant, in.noise))}};
            if (!in.replaced.empty()) {
                m.inputs.push_back(input_ref(in.replaced[i]));
                auto r = load_dump(in.replaced[i]);
                if (!std::holds_alternative<AttentionDump>(r)) {
                    fail(ErrorCode::schema_mismatch, in.replaced[i] + " is not an attention dump");
                }
                row["summary_replaced_delta"] =
                    vec_json(summary_replaced_control(ad, std::get<AttentionDump>(r), in.relevant, in.noise));
            }
            mcea.push_back(row);
        }
        out["mcea"] = mcea;
    }
    if (!in.hidden.empty()) {
        m.upstream.push_back(require_stage(work, "silver", "silver"));
        std::map<std::string, std::vector<std::string>> silver;
        for (const auto& r : load_silver_jsonl(work / "silver" / "silver.jsonl")) {
            if (r.task == EvidenceTask::chunk) silver[r.qid] = r.silver_ids;
        }
        std::map<std::string, const QaItem*> qa_by_qid;
        for (const auto& q : qa) qa_by_qid[q.qid] = &q;
        std::map<std::string, std::pair<std::vector<HiddenDump>, std::vector<std::vector<std::string>>>> groups;
        for (const auto& spec : in.hidden) {
            auto eq = spec.find('=');
            if (eq == std::string::npos) fail(ErrorCode::invalid_config, "--hidden expects qid=path, got " + spec);
            const auto qid = spec.substr(0, eq);
            const auto path = spec.substr(eq + 1);
            if (!qa_by_qid.count(qid)) fail(ErrorCode::invalid_config, "--hidden: unknown qid " + qid);
            m.inputs.push_back(input_ref(path));
            auto d = load_dump(path);
            if (!std::holds_alternative<HiddenDump>(d)) fail(ErrorCode::schema_mismatch, path + " is not a hidden-state dump");
            auto& g = groups[qa_by_qid[qid]->doc_id];
            g.first.push_back(std::get<HiddenDump>(std::move(d)));
            g.second.push_back(silver.count(qid) ? silver[qid] : std::vector<std::string>{});
        }
        ojson ratios = ojson::object();
        for (const auto& [doc, g] : groups) {
            const auto coll = Collection::load(index_file(work, doc, EvidenceTask::chunk));
            ratios[doc] = vec_json(layer_silver_ratio(g.first, coll, g.second, 10));
        }
        out["layer_silver_ratio"] = ratios;
    }
    write_text(work / "analysis" / "analysis.json", out.dump(2) + "\n");
    m.stats = {{"queries", n}, {"mean_angles", means}};
    write_manifest(work, m, {"analysis/analysis.json"});
}

void run_export_sft(const PipelineConfig& cfg) {
    const auto& work = cfg.paths.work_dir;
    Manifest m;
    m.stage = "sft";
    m.config = config_snapshot(cfg);
    m.upstream.push_back(require_stage(work, "corpus", "corpus"));
    m.upstream.push_back(require_stage(work, "mindscape", "mindscape"));
    m.upstream.push_back(require_stage(work, "silver", "silver"));
    const auto corpus = load_corpus_view(work);
    std::vector<Chunk> store;
    std::map<std::string, Mindscape> mindscapes;
    for (const auto& doc : corpus.doc_order) {
        for (const auto& c : corpus.chunks.at(doc)) store.push_back(c);
        mindscapes.emplace(doc, load_mindscape(mindscape_file(work, doc)));
    }
    std::vector<QaItem> qa;
    if (!cfg.paths.qa.empty() && fs::exists(cfg.paths.qa)) {
        m.inputs.push_back(input_ref(cfg.paths.qa));
        qa = load_qa_jsonl(cfg.paths.qa);
    }
    MixConfig mix{cfg.min_noise, cfg.max_noise, cfg.seed_sft};
    const auto built = build_sft_examples(load_silver_jsonl(work / "silver" / "silver.jsonl"), store, mindscapes, qa, mix);
    std::vector<ojson> rows;
    for (const auto& e : built.examples) rows.push_back(to_json(e));
    write_jsonl(work / "sft" / "sft.jsonl", rows);
    m.stats = {{"examples", built.examples.size()},
               {"skipped_empty_silver", built.skipped_empty},
               {"skipped_node_task", built.skipped_node_task}};
    write_manifest(work, m, {"sft/sft.jsonl"});
}

}  // namespace mia::cli
