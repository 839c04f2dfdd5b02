#include "mia/evalharness.hpp"

#include "binio.hpp"

#include "mia/error.hpp"
#include "mia/log.hpp"
#include "mia/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <unordered_map>

namespace mia {

namespace {

bool is_article(std::string_view w) { return w == "a" || w == "an" || w == "the"; }

std::optional<bool> parse_bool_field(const nlohmann::json& v) {
    if (v.is_null()) return std::nullopt;
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) {
        auto s = text::to_lower_ascii(text::trim(v.get<std::string>()));
        if (s == "true") return true;
        if (s == "false") return false;
    }
    throw std::invalid_argument("expected a boolean or TRUE/FALSE");
}

template <typename Fn>
void for_each_line(std::string_view content, const std::string& where, Fn fn) {
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        auto nl = content.find('\n', pos);
        auto line = content.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? content.size() : nl + 1;
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            fn(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::schema_mismatch, where + " line " + std::to_string(lineno) + ": " + e.what());
        } catch (const std::invalid_argument& e) {
            fail(ErrorCode::schema_mismatch, where + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::vector<std::string> answer_tokens(std::string_view s) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            auto w = text::to_lower_ascii(cur);
            if (!is_article(w)) words.push_back(std::move(w));
            cur.clear();
        }
    };
    for (const auto& cp : text::decode_utf8(s)) {
        if (text::is_space(cp.value)) {
            flush();
        } else if (text::is_punct(cp.value)) {
            continue;
        } else if (text::is_cjk(cp.value)) {
            flush();
            words.emplace_back(s.substr(cp.offset, cp.length));
        } else {
            cur.append(s.substr(cp.offset, cp.length));
        }
    }
    flush();
    return words;
}

std::string normalize_answer(std::string_view s) { return text::join(answer_tokens(s), " "); }

bool exact_match(std::string_view pred, const std::vector<std::string>& golds) {
    const auto p = normalize_answer(pred);
    return std::any_of(golds.begin(), golds.end(), [&](const std::string& g) { return normalize_answer(g) == p; });
}

double token_f1(std::string_view pred, const std::vector<std::string>& golds) {
    const auto pt = answer_tokens(pred);
    double best = 0.0;
    for (const auto& g : golds) {
        const auto gt = answer_tokens(g);
        if (pt.empty() || gt.empty()) {
            best = std::max(best, pt.empty() && gt.empty() ? 1.0 : 0.0);
            continue;
        }
        std::unordered_map<std::string, int> counts;
        for (const auto& t : gt) ++counts[t];
        std::size_t common = 0;
        for (const auto& t : pt) {
            auto it = counts.find(t);
            if (it != counts.end() && it->second > 0) {
                --it->second;
                ++common;
            }
        }
        if (common == 0) continue;
        const double prec = static_cast<double>(common) / static_cast<double>(pt.size());
        const double rec = static_cast<double>(common) / static_cast<double>(gt.size());
        best = std::max(best, 2.0 * prec * rec / (prec + rec));
    }
    return best;
}

std::optional<double> recall_at_k(const std::vector<std::string>& retrieved, const std::set<std::string>& gold,
                                  std::size_t k) {
    if (k == 0) fail(ErrorCode::invalid_argument, "recall_at_k needs k >= 1");
    if (gold.empty()) return std::nullopt;
    std::set<std::string> top(retrieved.begin(), retrieved.begin() + static_cast<long>(std::min(k, retrieved.size())));
    std::size_t hit = 0;
    for (const auto& g : gold) hit += top.count(g);
    return static_cast<double>(hit) / static_cast<double>(gold.size());
}

double pairwise_accuracy(const std::vector<std::pair<bool, bool>>& pairs) {
    if (pairs.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& [t, f] : pairs) ok += (t && !f) ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

std::vector<Prediction> parse_predictions_jsonl(std::string_view content, const std::string& where) {
    std::vector<Prediction> out;
    for_each_line(content, where, [&](const nlohmann::json& j) {
        Prediction p;
        p.qid = j.at("qid").get<std::string>();
        p.answer = j.value("answer", std::string{});
        if (j.contains("verdict")) p.verdict = parse_bool_field(j["verdict"]);
        p.retrieved_ids = j.value("retrieved_ids", std::vector<std::string>{});
        if (!j.contains("answer") && !j.contains("verdict")) throw std::invalid_argument("row has neither answer nor verdict");
        out.push_back(std::move(p));
    });
    return out;
}

std::vector<GoldItem> parse_gold_jsonl(std::string_view content, const std::string& where) {
    std::vector<GoldItem> out;
    for_each_line(content, where, [&](const nlohmann::json& j) {
        GoldItem g;
        g.qid = j.at("qid").get<std::string>();
        g.answers = j.value("answers", std::vector<std::string>{});
        if (j.contains("label")) g.label = parse_bool_field(j["label"]);
        g.silver_ids = j.value("silver_ids", std::vector<std::string>{});
        g.pair_id = j.value("pair_id", std::string{});
        if (g.answers.empty() && !g.label) throw std::invalid_argument("row has neither answers nor label");
        out.push_back(std::move(g));
    });
    return out;
}

std::vector<GoldItem> gold_from_qa(const std::vector<QaItem>& qa, const std::vector<SilverRecord>& silver) {
    std::unordered_map<std::string, const SilverRecord*> by_qid;
    for (const auto& r : silver) by_qid.emplace(r.qid, &r);
    std::vector<GoldItem> out;
    for (const auto& q : qa) {
        GoldItem g;
        g.qid = q.qid;
        g.answers = q.answers;
        g.label = q.label;
        g.pair_id = q.pair_id;
        if (auto it = by_qid.find(q.qid); it != by_qid.end()) g.silver_ids = it->second->silver_ids;
        out.push_back(std::move(g));
    }
    return out;
}

nlohmann::ordered_json to_json(const Prediction& p) {
    nlohmann::ordered_json j{{"qid", p.qid}, {"answer", p.answer}};
    j["verdict"] = p.verdict ? nlohmann::ordered_json(*p.verdict) : nlohmann::ordered_json(nullptr);
    j["retrieved_ids"] = p.retrieved_ids;
    return j;
}

nlohmann::ordered_json to_json(const GoldItem& g) {
    nlohmann::ordered_json j{{"qid", g.qid}, {"answers", g.answers}};
    j["label"] = g.label ? nlohmann::ordered_json(*g.label) : nlohmann::ordered_json(nullptr);
    j["silver_ids"] = g.silver_ids;
    j["pair_id"] = g.pair_id;
    return j;
}

EvalReport evaluate(const std::vector<Prediction>& preds, const std::vector<GoldItem>& gold, std::string dataset,
                    const std::vector<std::size_t>& ks) {
    if (preds.empty()) fail(ErrorCode::invalid_argument, "no predictions to evaluate");
    if (ks.empty()) fail(ErrorCode::invalid_config, "k list is empty");
    for (auto k : ks) {
        if (k == 0) fail(ErrorCode::invalid_config, "k values must be >= 1");
    }
    std::unordered_map<std::string, std::size_t> gold_idx;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (!gold_idx.emplace(gold[i].qid, i).second) fail(ErrorCode::duplicate_id, "duplicate gold qid " + gold[i].qid);
    }
    std::unordered_map<std::string, const Prediction*> pred_by_qid;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!gold_idx.count(preds[i].qid)) {
            fail(ErrorCode::schema_mismatch, "prediction row " + std::to_string(i + 1) + ": unknown qid " + preds[i].qid);
        }
        if (!pred_by_qid.emplace(preds[i].qid, &preds[i]).second) {
            fail(ErrorCode::duplicate_id, "prediction row " + std::to_string(i + 1) + ": duplicate qid " + preds[i].qid);
        }
    }

    EvalReport rep;
    rep.dataset = std::move(dataset);
    rep.k_values = ks;
    std::vector<double> em, f1, claim;
    std::map<std::size_t, std::vector<double>> recall;
    std::size_t missing = 0;
    // pair key -> (gold index of true claim, gold index of false claim)
    std::map<std::string, std::vector<std::size_t>> pair_members;
    std::vector<std::size_t> unpaired_claims;

    for (std::size_t gi = 0; gi < gold.size(); ++gi) {
        const auto& g = gold[gi];
        auto it = pred_by_qid.find(g.qid);
        if (it == pred_by_qid.end()) {
            ++missing;
            continue;
        }
        const auto& p = *it->second;
        EvalRow row{g.qid, {}};
        if (!g.answers.empty()) {
            row.metrics["em"] = exact_match(p.answer, g.answers) ? 1.0 : 0.0;
            row.metrics["f1"] = token_f1(p.answer, g.answers);
            em.push_back(row.metrics["em"]);
            f1.push_back(row.metrics["f1"]);
        }
        if (g.label) {
            row.metrics["claim_acc"] = (p.verdict && *p.verdict == *g.label) ? 1.0 : 0.0;
            claim.push_back(row.metrics["claim_acc"]);
            if (g.pair_id.empty()) {
                unpaired_claims.push_back(gi);
            } else {
                pair_members[g.pair_id].push_back(gi);
            }
        }
        if (!g.silver_ids.empty() && !p.retrieved_ids.empty()) {
            std::set<std::string> gs(g.silver_ids.begin(), g.silver_ids.end());
            for (auto k : ks) {
                auto r = recall_at_k(p.retrieved_ids, gs, k);
                row.metrics["recall@" + std::to_string(k)] = *r;
                recall[k].push_back(*r);
            }
        }
        rep.rows.push_back(std::move(row));
    }

    // Claims without pair ids pair up in file order.
    for (std::size_t i = 0; i + 1 < unpaired_claims.size(); i += 2) {
        pair_members["#" + std::to_string(i / 2)] = {unpaired_claims[i], unpaired_claims[i + 1]};
    }
    std::vector<std::pair<bool, bool>> pairs;
    for (const auto& [key, members] : pair_members) {
        if (members.size() != 2 || *gold[members[0]].label == *gold[members[1]].label) {
            log::warn("claim pair " + key + " is not one true and one false claim; skipped");
            continue;
        }
        auto verdict = [&](std::size_t gi) {
            const auto* p = pred_by_qid.at(gold[gi].qid);
            return p->verdict;
        };
        auto t = *gold[members[0]].label ? members[0] : members[1];
        auto f = *gold[members[0]].label ? members[1] : members[0];
        auto vt = verdict(t);
        auto vf = verdict(f);
        // An unparsed verdict never counts as correct.
        pairs.emplace_back(vt.value_or(false), vf.value_or(true));
    }

    if (!em.empty()) {
        rep.metrics["em"] = mean(em);
        rep.metrics["f1"] = mean(f1);
    }
    for (const auto& [k, v] : recall) rep.metrics["recall@" + std::to_string(k)] = mean(v);
    if (!claim.empty()) rep.metrics["claim_acc"] = mean(claim);
    if (!pairs.empty()) rep.metrics["pairwise_acc"] = pairwise_accuracy(pairs);
    rep.counts["queries"] = rep.rows.size();
    rep.counts["missing_predictions"] = missing;
    rep.counts["answer_rows"] = em.size();
    rep.counts["claim_rows"] = claim.size();
    rep.counts["claim_pairs"] = pairs.size();
    rep.counts["recall_rows"] = recall.empty() ? 0 : recall.begin()->second.size();
    return rep;
}

EvalReport run_eval(const EvalConfig& cfg) {
    const auto pred_text = detail::read_file(cfg.predictions, "predictions artifact");
    const auto gold_text = detail::read_file(cfg.gold, "gold file");
    auto preds = parse_predictions_jsonl(pred_text, cfg.predictions.string());
    if (preds.empty()) fail(ErrorCode::schema_mismatch, cfg.predictions.string() + ": prediction file is empty");
    auto gold = parse_gold_jsonl(gold_text, cfg.gold.string());
    return evaluate(preds, gold, cfg.dataset, cfg.ks);
}

nlohmann::ordered_json to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["dataset"] = r.dataset;
    j["k_values"] = r.k_values;
    j["metrics"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.metrics) j["metrics"][k] = v;
    j["counts"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.counts) j["counts"][k] = v;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : r.rows) {
        nlohmann::ordered_json m = nlohmann::ordered_json::object();
        for (const auto& [k, v] : row.metrics) m[k] = v;
        j["rows"].push_back({{"qid", row.qid}, {"metrics", m}});
    }
    return j;
}

std::string render_table(const EvalReport& r) {
    std::vector<std::string> cols;
    for (const char* name : {"em", "f1"}) {
        if (r.metrics.count(name)) cols.emplace_back(name);
    }
    for (auto k : r.k_values) {
        auto name = "recall@" + std::to_string(k);
        if (r.metrics.count(name)) cols.push_back(name);
    }
    for (const char* name : {"claim_acc", "pairwise_acc"}) {
        if (r.metrics.count(name)) cols.emplace_back(name);
    }
    std::ostringstream out;
    out << "dataset: " << r.dataset << "  queries: " << r.counts.at("queries") << '\n';
    for (const auto& c : cols) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%14s", c.c_str());
        out << buf;
    }
    out << '\n';
    for (const auto& c : cols) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%14.2f", 100.0 * r.metrics.at(c));
        out << buf;
    }
    out << '\n';
    return out.str();
}

}  // namespace mia
