#include "mia/ragflow.hpp"

#include "mia/digest.hpp"
#include "mia/error.hpp"
#include "mia/parallel.hpp"
#include "mia/prompts.hpp"
#include "mia/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>

namespace mia {

namespace {

TemplateId template_for(GenTask task) {
    switch (task) {
        case GenTask::narrativeqa: return TemplateId::gen_narrativeqa;
        case GenTask::detective: return TemplateId::gen_detective;
        case GenTask::infbench: return TemplateId::gen_infbench;
        case GenTask::nocha: return TemplateId::gen_nocha;
    }
    fail(ErrorCode::invalid_argument, "unknown generation task");
}

bool is_option_letter(char c) { return c >= 'A' && c <= 'D'; }

bool word_boundary(const std::string& s, std::size_t i) {
    return i >= s.size() || !std::isalnum(static_cast<unsigned char>(s[i]));
}

// Option letter from free text: a bare letter, "Answer: X", "(X)", or the first
// standalone capital A-D.
std::optional<char> find_letter(const std::string& raw) {
    auto t = text::trim(raw);
    if (t.size() == 1 && is_option_letter(t[0])) return t[0];
    for (std::string_view marker : {"answer:", "answer is", "option"}) {
        auto lower = text::to_lower_ascii(t);
        auto at = lower.find(marker);
        if (at == std::string::npos) continue;
        auto i = at + marker.size();
        while (i < t.size() && (t[i] == ' ' || t[i] == '(' || t[i] == '*')) ++i;
        if (i < t.size() && is_option_letter(t[i]) && word_boundary(t, i + 1)) return t[i];
    }
    for (std::size_t i = 0; i + 2 < t.size(); ++i) {
        if (t[i] == '(' && is_option_letter(t[i + 1]) && t[i + 2] == ')') return t[i + 1];
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (is_option_letter(t[i]) && (i == 0 || !std::isalnum(static_cast<unsigned char>(t[i - 1]))) &&
            word_boundary(t, i + 1)) {
            // Skip the article "A" when followed by a lowercase word.
            if (t[i] == 'A' && i + 2 < t.size() && t[i + 1] == ' ' && std::islower(static_cast<unsigned char>(t[i + 2]))) {
                continue;
            }
            return t[i];
        }
    }
    return std::nullopt;
}

std::string between_tags(const std::string& s, const std::string& open, const std::string& close) {
    auto lower = text::to_lower_ascii(s);
    auto a = lower.rfind(open);
    if (a == std::string::npos) return {};
    a += open.size();
    auto b = lower.find(close, a);
    if (b == std::string::npos) return {};
    return s.substr(a, b - a);
}

}  // namespace

std::string format_chunks(const std::vector<std::string>& chunks) {
    std::string out;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (i) out += "\n\n";
        out += "[Chunk " + std::to_string(i + 1) + "]\n" + chunks[i];
    }
    return out;
}

std::string assemble_gen_prompt(const std::string& summary, const std::vector<std::string>& chunks,
                                const std::string& question, GenTask task, const std::string& options) {
    const auto body = chunks.empty() ? std::string("(none)") : format_chunks(chunks);
    return render_prompt(template_for(task),
                         {{"summary", summary}, {"chunks", body}, {"question", question}, {"options", options}});
}

ParsedAnswer parse_answer(GenTask task, const std::string& raw) {
    ParsedAnswer p;
    p.answer = raw;
    switch (task) {
        case GenTask::narrativeqa: {
            auto t = text::trim(raw);
            if (text::starts_with_icase(t, "answer:")) t = text::trim(t.substr(7));
            t = text::trim(t.substr(0, t.find('\n')));
            while (!t.empty() && (t.back() == '.' || t.back() == '"')) t.pop_back();
            while (!t.empty() && t.front() == '"') t.erase(t.begin());
            if (!t.empty()) {
                p.answer = t;
                p.parsed = true;
            }
            break;
        }
        case GenTask::infbench: {
            if (auto c = find_letter(raw)) {
                p.answer = std::string(1, *c);
                p.parsed = true;
            }
            break;
        }
        case GenTask::detective: {
            auto a = raw.find('{');
            auto b = raw.rfind('}');
            if (a != std::string::npos && b != std::string::npos && b > a) {
                auto j = nlohmann::json::parse(raw.substr(a, b - a + 1), nullptr, false);
                if (j.is_object() && j.contains("answer") && j["answer"].is_string()) {
                    auto ans = text::trim(j["answer"].get<std::string>());
                    if (auto c = find_letter(ans)) {
                        p.answer = std::string(1, *c);
                        p.reasoning = j.value("reasoning", std::string{});
                        p.parsed = true;
                    }
                }
            }
            if (!p.parsed) {
                // Salvage a quoted answer field from near-JSON text.
                auto lower = text::to_lower_ascii(raw);
                auto at = lower.find("\"answer\"");
                if (at != std::string::npos) {
                    auto rest = raw.substr(at + 8);
                    auto q = rest.find('"');
                    if (q != std::string::npos && q + 1 < rest.size() && is_option_letter(rest[q + 1])) {
                        p.answer = std::string(1, rest[q + 1]);
                        p.parsed = true;
                    }
                }
            }
            break;
        }
        case GenTask::nocha: {
            auto v = text::to_lower_ascii(text::trim(between_tags(raw, "<answer>", "</answer>")));
            if (v == "true" || v == "false") {
                p.verdict = v == "true";
                p.answer = v == "true" ? "TRUE" : "FALSE";
                p.reasoning = text::trim(between_tags(raw, "<explanation>", "</explanation>"));
                p.parsed = true;
            }
            break;
        }
    }
    return p;
}

AnswerResult answer_query(const RagContext& ctx, const QaItem& item, std::size_t k) {
    if (!ctx.gateway || !ctx.mindscape) fail(ErrorCode::invalid_argument, "answer_query needs a gateway and a mindscape");
    if (item.doc_id != ctx.mindscape->doc_id) {
        fail(ErrorCode::invalid_argument, "question " + item.qid + " is for " + item.doc_id + ", mindscape is " +
                                              ctx.mindscape->doc_id);
    }
    AnswerResult r;
    r.qid = item.qid;
    r.task = item.task;
    std::vector<std::string> texts;
    if (!ctx.summary_only) {
        if (!ctx.embedder || !ctx.index) fail(ErrorCode::invalid_argument, "retrieval needs an embedder and an index");
        if (k == 0) fail(ErrorCode::invalid_argument, "k must be >= 1");
        auto cq = condition_query(*ctx.embedder, item.question, *ctx.mindscape, ctx.mode, ctx.delta, ctx.tokens);
        auto q = ctx.adapter ? apply_adapter(*ctx.adapter, cq.q_tilde) : cq.q_tilde;
        for (auto& hit : ctx.index->top_k(q, k)) {
            if (ctx.context_k == 0 || texts.size() < ctx.context_k) {
                texts.push_back(ctx.index->payload(hit.id).value_or(""));
            }
            r.retrieved_ids.push_back(std::move(hit.id));
        }
    }
    r.prompt_used = assemble_gen_prompt(ctx.mindscape->global_summary, texts, item.question, item.task,
                                        item.options_block());
    ChatRequest req;
    req.user = r.prompt_used;
    req.temperature = 0.0;
    req.max_tokens = item.task == GenTask::narrativeqa ? 64 : 512;
    req.model_tag = ctx.gateway->model_tag();
    r.raw = ctx.gateway->complete(req).text;
    r.parsed = parse_answer(item.task, r.raw);
    return r;
}

std::vector<AnswerResult> answer_all(const RagContext& ctx, const std::vector<QaItem>& items, std::size_t k) {
    std::vector<AnswerResult> out(items.size());
    parallel_for(items.size(), ctx.gateway ? ctx.gateway->parallelism() : 1,
                 [&](std::size_t i) { out[i] = answer_query(ctx, items[i], k); });
    return out;
}

Prediction to_prediction(const AnswerResult& r) {
    Prediction p;
    p.qid = r.qid;
    p.answer = r.parsed.answer;
    p.verdict = r.parsed.verdict;
    p.retrieved_ids = r.retrieved_ids;
    return p;
}

nlohmann::ordered_json transcript_json(const AnswerResult& r) {
    nlohmann::ordered_json j{{"qid", r.qid},
                             {"task", to_string(r.task)},
                             {"retrieved_ids", r.retrieved_ids},
                             {"prompt", r.prompt_used},
                             {"raw", r.raw},
                             {"answer", r.parsed.answer},
                             {"parsed", r.parsed.parsed}};
    j["verdict"] = r.parsed.verdict ? nlohmann::ordered_json(*r.parsed.verdict) : nlohmann::ordered_json(nullptr);
    j["reasoning"] = r.parsed.reasoning;
    j["flags"] = r.parsed.parsed ? nlohmann::ordered_json::array() : nlohmann::ordered_json::array({"unparsed"});
    return j;
}

SftBuild build_sft_examples(const std::vector<SilverRecord>& records, const std::vector<Chunk>& chunk_store,
                            const std::map<std::string, Mindscape>& mindscapes, const std::vector<QaItem>& qa,
                            const MixConfig& mix) {
    if (mix.min_noise > mix.max_noise) fail(ErrorCode::invalid_config, "noise range is inverted");
    std::unordered_map<std::string, const Chunk*> by_id;
    std::map<std::string, std::vector<const Chunk*>> by_doc;
    for (const auto& c : chunk_store) {
        if (!by_id.emplace(c.id(), &c).second) fail(ErrorCode::duplicate_id, "duplicate chunk " + c.id());
        by_doc[c.doc_id].push_back(&c);
    }
    std::unordered_map<std::string, const QaItem*> qa_by_qid;
    for (const auto& q : qa) qa_by_qid.emplace(q.qid, &q);

    SftBuild out;
    for (const auto& rec : records) {
        if (rec.task != EvidenceTask::chunk) {
            ++out.skipped_node_task;
            continue;
        }
        if (rec.silver_ids.empty()) {
            ++out.skipped_empty;
            continue;
        }
        auto ms = mindscapes.find(rec.doc_id);
        if (ms == mindscapes.end()) fail(ErrorCode::upstream_missing, "no mindscape for document " + rec.doc_id);

        std::set<std::string> silver(rec.silver_ids.begin(), rec.silver_ids.end());
        for (const auto& id : rec.silver_ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) fail(ErrorCode::not_found, "chunk " + id + " missing from store");
            if (it->second->doc_id != rec.doc_id) {
                fail(ErrorCode::invariant_violation, "silver chunk " + id + " is not from document " + rec.doc_id);
            }
        }
        std::vector<std::string> pool;
        for (const auto* c : by_doc[rec.doc_id]) {
            if (!silver.count(c->id())) pool.push_back(c->id());
        }

        std::mt19937_64 rng(derive_seed(mix.seed, rec.doc_id + "\n" + rec.qid + "\n" + rec.query));
        const auto want = mix.min_noise + uniform_index(rng, mix.max_noise - mix.min_noise + 1);
        const auto take = std::min<std::size_t>(want, pool.size());
        std::vector<std::string> order(rec.silver_ids.begin(), rec.silver_ids.end());
        for (std::size_t i = 0; i < take; ++i) {
            std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
            order.push_back(pool[i]);
        }
        portable_shuffle(order.begin(), order.end(), rng);

        SftExample ex;
        ex.qid = rec.qid;
        ex.doc_id = rec.doc_id;
        ex.silver_count = rec.silver_ids.size();
        ex.noise_count = take;
        ex.chunk_order = order;
        std::vector<std::string> texts;
        for (const auto& id : order) texts.push_back(by_id.at(id)->text);

        std::string question = rec.query;
        std::string options;
        auto qit = qa_by_qid.find(rec.qid);
        if (qit != qa_by_qid.end()) {
            const auto& item = *qit->second;
            ex.task = item.task;
            options = item.options_block();
            if (item.task == GenTask::nocha) {
                ex.target = item.label.value_or(false) ? "TRUE" : "FALSE";
            } else {
                ex.target = item.answers.empty() ? rec.answer : item.answers.front();
            }
        } else {
            ex.target = rec.answer;
        }
        ex.input = assemble_gen_prompt(ms->second.global_summary, texts, question, ex.task, options);
        out.examples.push_back(std::move(ex));
    }
    return out;
}

nlohmann::ordered_json to_json(const SftExample& e) {
    return {{"input", e.input},
            {"target", e.target},
            {"task", to_string(e.task)},
            {"meta",
             {{"qid", e.qid},
              {"doc_id", e.doc_id},
              {"silver_count", e.silver_count},
              {"noise_count", e.noise_count},
              {"chunk_order", e.chunk_order}}}};
}

}  // namespace mia
