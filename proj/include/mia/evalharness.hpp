#pragma once

#include "mia/qa.hpp"
#include "mia/silver.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mia {

// Lowercase (ASCII), drop punctuation, drop the articles a/an/the, collapse
// whitespace.
std::string normalize_answer(std::string_view s);

// Tokens of the normalized answer. CJK ideographs are one token each.
std::vector<std::string> answer_tokens(std::string_view s);

bool exact_match(std::string_view pred, const std::vector<std::string>& golds);
double token_f1(std::string_view pred, const std::vector<std::string>& golds);

// |gold & retrieved[:k]| / |gold|; nullopt when gold is empty.
std::optional<double> recall_at_k(const std::vector<std::string>& retrieved, const std::set<std::string>& gold,
                                  std::size_t k);

// (verdict on the true claim, verdict on its false twin). A pair scores when
// the first is true and the second false.
double pairwise_accuracy(const std::vector<std::pair<bool, bool>>& pairs);

struct Prediction {
    std::string qid;
    std::string answer;
    std::optional<bool> verdict;
    std::vector<std::string> retrieved_ids;
};

struct GoldItem {
    std::string qid;
    std::vector<std::string> answers;
    std::optional<bool> label;
    std::vector<std::string> silver_ids;
    std::string pair_id;
};

// Schema errors carry the 1-based line number.
std::vector<Prediction> parse_predictions_jsonl(std::string_view content, const std::string& where = "predictions");
std::vector<GoldItem> parse_gold_jsonl(std::string_view content, const std::string& where = "gold");

// Gold built from benchmark rows plus silver evidence (matched on qid).
std::vector<GoldItem> gold_from_qa(const std::vector<QaItem>& qa, const std::vector<SilverRecord>& silver);

nlohmann::ordered_json to_json(const Prediction& p);
nlohmann::ordered_json to_json(const GoldItem& g);

inline const std::vector<std::size_t> kDefaultRecallKs = {3, 5, 10};

struct EvalRow {
    std::string qid;
    std::map<std::string, double> metrics;
};

struct EvalReport {
    std::string dataset;
    std::vector<std::size_t> k_values;
    std::map<std::string, double> metrics;  // all rates in [0, 1]
    std::map<std::string, std::size_t> counts;
    std::vector<EvalRow> rows;
};

// Metric names: em, f1 (rows with answers), recall@k (rows with silver ids and
// a retrieval list), claim_acc and pairwise_acc (rows with labels). Gold rows
// without a prediction are counted as missing and skipped.
EvalReport evaluate(const std::vector<Prediction>& preds, const std::vector<GoldItem>& gold, std::string dataset,
                    const std::vector<std::size_t>& ks = kDefaultRecallKs);

struct EvalConfig {
    std::filesystem::path predictions;
    std::filesystem::path gold;
    std::string dataset = "toy";
    std::vector<std::size_t> ks = kDefaultRecallKs;
};

// Reads both files; an empty prediction file is an error.
EvalReport run_eval(const EvalConfig& cfg);

nlohmann::ordered_json to_json(const EvalReport& r);
std::string render_table(const EvalReport& r);

}  // namespace mia
