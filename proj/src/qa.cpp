#include "mia/qa.hpp"

#include "mia/error.hpp"
#include "mia/text.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace mia {

std::string_view to_string(GenTask task) {
    switch (task) {
        case GenTask::narrativeqa: return "narrativeqa";
        case GenTask::detective: return "detective";
        case GenTask::infbench: return "infbench";
        case GenTask::nocha: return "nocha";
    }
    return "narrativeqa";
}

GenTask parse_gen_task(std::string_view s) {
    if (s == "narrativeqa") return GenTask::narrativeqa;
    if (s == "detective") return GenTask::detective;
    if (s == "infbench") return GenTask::infbench;
    if (s == "nocha") return GenTask::nocha;
    fail(ErrorCode::invalid_argument, "unknown task '" + std::string(s) + "'");
}

std::string QaItem::reference_answer() const {
    if (answers.empty()) return {};
    const auto& a = answers.front();
    if (!options.empty() && a.size() == 1 && a[0] >= 'A' && a[0] <= 'Z') {
        auto idx = static_cast<std::size_t>(a[0] - 'A');
        if (idx < options.size()) return options[idx];
    }
    return a;
}

std::string QaItem::options_block() const {
    std::string out;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (i) out += "\n";
        out += static_cast<char>('A' + i);
        out += ". " + options[i];
    }
    return out;
}

std::vector<QaItem> parse_qa_jsonl(std::string_view content) {
    std::vector<QaItem> items;
    std::set<std::string> seen;
    std::istringstream in{std::string(content)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        const auto where = "qa line " + std::to_string(lineno);
        try {
            auto j = nlohmann::json::parse(line);
            QaItem q;
            q.qid = j.at("qid").get<std::string>();
            q.doc_id = j.at("doc_id").get<std::string>();
            q.question = j.at("question").get<std::string>();
            q.task = parse_gen_task(j.value("task", std::string{"narrativeqa"}));
            if (j.contains("answers")) q.answers = j["answers"].get<std::vector<std::string>>();
            if (j.contains("answer")) q.answers.insert(q.answers.begin(), j["answer"].get<std::string>());
            if (j.contains("options")) q.options = j["options"].get<std::vector<std::string>>();
            if (j.contains("label")) {
                const auto& l = j["label"];
                if (l.is_boolean()) {
                    q.label = l.get<bool>();
                } else {
                    auto s = text::to_lower_ascii(l.get<std::string>());
                    if (s != "true" && s != "false") fail(ErrorCode::schema_mismatch, where + ": label must be TRUE or FALSE");
                    q.label = s == "true";
                }
            }
            q.pair_id = j.value("pair_id", std::string{});
            if (q.qid.empty() || q.question.empty()) {
                fail(ErrorCode::schema_mismatch, where + ": qid and question must be nonempty");
            }
            if (q.task == GenTask::nocha && !q.label) {
                fail(ErrorCode::schema_mismatch, where + ": claim rows need a label");
            }
            if (!seen.insert(q.qid).second) fail(ErrorCode::duplicate_id, where + ": duplicate qid " + q.qid);
            items.push_back(std::move(q));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::schema_mismatch, where + ": " + e.what());
        }
    }
    return items;
}

std::vector<QaItem> load_qa_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io_error, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_qa_jsonl(ss.str());
}

}  // namespace mia
