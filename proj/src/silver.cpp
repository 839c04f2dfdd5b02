#include "mia/silver.hpp"

#include "mia/digest.hpp"
#include "mia/error.hpp"
#include "mia/log.hpp"
#include "mia/parallel.hpp"
#include "mia/prompts.hpp"
#include "mia/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mia {

bool SilverRecord::has_flag(std::string_view f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
}

std::vector<std::string> augment_query(const std::string& q, const std::string& a) {
    if (q.empty()) fail(ErrorCode::invalid_argument, "augment_query needs a nonempty question");
    std::vector<std::string> variants{q};
    if (!a.empty()) {
        for (auto v : {q + " " + a, a}) {
            if (std::find(variants.begin(), variants.end(), v) == variants.end()) {
                variants.push_back(std::move(v));
            }
        }
    }
    return variants;
}

std::vector<std::string> vote_select_top_k(const std::vector<std::vector<std::string>>& pools,
                                           std::size_t k) {
    if (k == 0) fail(ErrorCode::invalid_argument, "vote_select_top_k needs k >= 1");
    struct Tally {
        std::size_t votes = 0;
        std::size_t best_rank = SIZE_MAX;
    };
    std::map<std::string, Tally> tally;
    for (const auto& pool : pools) {
        std::set<std::string> seen;
        for (std::size_t r = 0; r < pool.size(); ++r) {
            if (!seen.insert(pool[r]).second) continue;
            auto& t = tally[pool[r]];
            ++t.votes;
            t.best_rank = std::min(t.best_rank, r + 1);
        }
    }
    std::vector<std::pair<std::string, Tally>> ranked(tally.begin(), tally.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second.votes != b.second.votes) return a.second.votes > b.second.votes;
        if (a.second.best_rank != b.second.best_rank) return a.second.best_rank < b.second.best_rank;
        return a.first < b.first;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i) out.push_back(ranked[i].first);
    return out;
}

std::optional<std::vector<long long>> parse_index_array(std::string_view s) {
    for (std::size_t open = s.find('['); open != std::string_view::npos; open = s.find('[', open + 1)) {
        auto close = s.find(']', open);
        if (close == std::string_view::npos) return std::nullopt;
        auto inner = text::trim(s.substr(open + 1, close - open - 1));
        std::vector<long long> values;
        bool ok = true;
        if (!inner.empty()) {
            for (const auto& part : text::split(inner, ',')) {
                auto t = text::trim(part);
                if (t.empty()) {
                    ok = false;
                    break;
                }
                std::size_t i = (t[0] == '-' || t[0] == '+') ? 1 : 0;
                if (i == t.size() ||
                    !std::all_of(t.begin() + static_cast<long>(i), t.end(),
                                 [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
                    t.size() > 18) {
                    ok = false;
                    break;
                }
                values.push_back(std::stoll(t));
            }
        }
        if (ok) return values;
    }
    return std::nullopt;
}

namespace {

std::string format_candidates(const std::vector<std::string>& candidates) {
    std::string out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        out += "\n[" + std::to_string(i) + "] " + candidates[i];
    }
    return out;
}

const std::string kReask =
    "\n\nYour previous reply could not be parsed. Return only a JSON array of indices, for "
    "example [0,2,5], or [-1] if none are relevant.";

}  // namespace

FilterResult filter_with_llm(LlmGateway& gw, const std::string& question, const std::string& answer,
                             const std::vector<std::string>& candidates, EvidenceTask task) {
    if (candidates.empty()) fail(ErrorCode::invalid_argument, "filter_with_llm needs candidates");
    ChatRequest req;
    req.user = render_prompt(task == EvidenceTask::chunk ? TemplateId::filter_chunks : TemplateId::filter_nodes,
                             {{"question", question},
                              {"answer", answer.empty() ? std::string("(none)") : answer},
                              {"candidates", format_candidates(candidates)}});
    req.temperature = 0.0;
    req.max_tokens = 256;
    req.model_tag = gw.model_tag();

    FilterResult result;
    for (int attempt = 0; attempt < 2; ++attempt) {
        std::string reply;
        try {
            reply = gw.complete(req).text;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::empty_completion) throw;
        }
        auto parsed = parse_index_array(reply);
        if (parsed) {
            if (parsed->size() == 1 && parsed->front() == -1) {
                result.none_relevant = true;
                return result;
            }
            std::set<std::size_t> keep;
            for (auto v : *parsed) {
                if (v >= 0 && static_cast<std::size_t>(v) < candidates.size()) {
                    keep.insert(static_cast<std::size_t>(v));
                } else {
                    result.dropped = true;
                    log::warn("filter reply index " + std::to_string(v) + " outside [0, " +
                              std::to_string(candidates.size()) + "), dropped");
                }
            }
            if (!keep.empty()) {
                result.indices.assign(keep.begin(), keep.end());
                return result;
            }
        }
        req.user += kReask;
    }
    log::warn("filter reply unparseable after re-ask; keeping candidates as provisional silver");
    result.unfiltered = true;
    result.indices.resize(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) result.indices[i] = i;
    return result;
}

Negatives build_negatives(const std::vector<std::string>& silver_ids,
                          const std::vector<std::string>& candidate_ids,
                          const std::vector<std::string>& all_ids, std::uint64_t seed,
                          std::size_t max_hard, std::size_t n_simple) {
    Negatives out;
    std::set<std::string> excluded(silver_ids.begin(), silver_ids.end());
    for (const auto& c : candidate_ids) {
        if (out.hard.size() >= max_hard) break;
        if (excluded.insert(c).second) out.hard.push_back(c);
    }
    std::vector<std::string> pool;
    std::set<std::string> pooled;
    for (const auto& id : all_ids) {
        if (!excluded.count(id) && pooled.insert(id).second) pool.push_back(id);
    }
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: the first n_simple slots are a uniform sample.
    const auto take = std::min(n_simple, pool.size());
    for (std::size_t i = 0; i < take; ++i) {
        auto j = i + uniform_index(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
        out.simple.push_back(pool[i]);
    }
    return out;
}

AnnotationResult annotate_corpus(const std::vector<QaItem>& questions, const Mindscape& mindscape,
                                 const Collection& index, Embedder& embedder, LlmGateway& gw,
                                 EvidenceTask task, const AnnotateOptions& opts) {
    if (index.size() == 0) fail(ErrorCode::invalid_argument, "annotation index is empty");
    const auto all_ids = index.ids();

    std::vector<std::optional<SilverRecord>> slots(questions.size());
    std::vector<std::string> errors(questions.size());
    parallel_for(questions.size(), gw.parallelism(), [&](std::size_t i) {
        const auto& qa = questions[i];
        try {
            if (qa.doc_id != mindscape.doc_id) {
                fail(ErrorCode::invalid_argument, "question " + qa.qid + " belongs to document " +
                                                      qa.doc_id + ", not " + mindscape.doc_id);
            }
            SilverRecord rec;
            rec.qid = qa.qid;
            rec.query = qa.question;
            rec.answer = qa.reference_answer();
            rec.task = task;
            rec.doc_id = qa.doc_id;

            const auto variants = augment_query(rec.query, rec.answer);
            const auto vecs = embedder.embed_texts(variants);
            std::vector<std::vector<std::string>> pools;
            for (const auto& v : vecs) {
                std::vector<std::string> pool;
                for (auto& hit : index.top_k(v, opts.k_retrieve)) pool.push_back(std::move(hit.id));
                pools.push_back(std::move(pool));
            }
            const auto candidates = vote_select_top_k(pools, opts.k_select);

            std::vector<std::string> texts;
            for (const auto& id : candidates) texts.push_back(index.payload(id).value_or(""));
            const auto filtered = filter_with_llm(gw, rec.query, rec.answer, texts, task);
            for (auto idx : filtered.indices) rec.silver_ids.push_back(candidates[idx]);
            if (filtered.unfiltered) rec.flags.emplace_back(kFlagUnfiltered);
            if (filtered.none_relevant) rec.flags.emplace_back(kFlagNoneRelevant);
            if (filtered.dropped) rec.flags.emplace_back(kFlagDroppedIndices);

            const auto record_seed =
                derive_seed(opts.seed, qa.doc_id + "\n" + qa.qid + "\n" + std::string(to_string(task)));
            auto neg = build_negatives(rec.silver_ids, candidates, all_ids, record_seed);
            rec.hard_neg_ids = std::move(neg.hard);
            rec.simple_neg_ids = std::move(neg.simple);
            slots[i] = std::move(rec);
        } catch (const Error& e) {
            // Gateway failures are fatal for the whole run; the caller maps them.
            if (e.code() == ErrorCode::transport_error || e.code() == ErrorCode::rate_limited) throw;
            errors[i] = e.what();
        }
    });

    AnnotationResult result;
    std::size_t silver_total = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i]) {
            result.failures.push_back({questions[i].qid, errors[i]});
            log::warn("annotation of " + questions[i].qid + " failed: " + errors[i]);
            continue;
        }
        auto& r = *slots[i];
        silver_total += r.silver_ids.size();
        if (r.has_flag(kFlagUnfiltered)) ++result.stats.unfiltered;
        if (r.has_flag(kFlagNoneRelevant)) ++result.stats.none_relevant;
        result.records.push_back(std::move(r));
    }
    result.stats.questions = questions.size();
    result.stats.annotated = result.records.size();
    result.stats.failed = result.failures.size();
    result.stats.avg_silver =
        result.records.empty() ? 0.0 : static_cast<double>(silver_total) / result.records.size();
    return result;
}

nlohmann::ordered_json to_json(const SilverRecord& r) {
    return {{"query", r.query},
            {"answer", r.answer},
            {"task", to_string(r.task)},
            {"silver_ids", r.silver_ids},
            {"hard_neg_ids", r.hard_neg_ids},
            {"simple_neg_ids", r.simple_neg_ids},
            {"doc_id", r.doc_id},
            {"flags", r.flags},
            {"qid", r.qid}};
}

SilverRecord silver_from_json(const nlohmann::json& j) {
    SilverRecord r;
    r.query = j.at("query").get<std::string>();
    r.answer = j.at("answer").get<std::string>();
    r.task = parse_retrieval_mode(j.at("task").get<std::string>());
    r.silver_ids = j.at("silver_ids").get<std::vector<std::string>>();
    r.hard_neg_ids = j.at("hard_neg_ids").get<std::vector<std::string>>();
    r.simple_neg_ids = j.at("simple_neg_ids").get<std::vector<std::string>>();
    r.doc_id = j.at("doc_id").get<std::string>();
    r.flags = j.value("flags", std::vector<std::string>{});
    r.qid = j.value("qid", std::string{});
    return r;
}

std::string to_jsonl(const std::vector<SilverRecord>& records) {
    std::string out;
    for (const auto& r : records) out += to_json(r).dump() + "\n";
    return out;
}

std::vector<SilverRecord> load_silver_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::upstream_missing, "silver artifact missing: " + path.string());
    std::vector<SilverRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(silver_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::schema_mismatch, path.string() + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace mia
