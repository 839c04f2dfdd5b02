#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mia {

// Generation task families. Each has its own prompt variant and answer parser.
enum class GenTask { narrativeqa, detective, infbench, nocha };

std::string_view to_string(GenTask task);
GenTask parse_gen_task(std::string_view s);

// One benchmark question. QA file rows are JSONL:
//   {qid, doc_id, task?, question, answers?[], options?[], label?, pair_id?}
// Multiple-choice answers are option letters; claims carry label TRUE/FALSE.
struct QaItem {
    std::string qid;
    std::string doc_id;
    GenTask task = GenTask::narrativeqa;
    std::string question;
    std::vector<std::string> answers;
    std::vector<std::string> options;
    std::optional<bool> label;
    std::string pair_id;

    // Answer text used for query augmentation: the gold phrase, the text of
    // the gold option for multiple choice, empty for claims.
    std::string reference_answer() const;
    // "A. first\nB. second..." or empty.
    std::string options_block() const;
};

std::vector<QaItem> parse_qa_jsonl(std::string_view content);
std::vector<QaItem> load_qa_jsonl(const std::filesystem::path& path);

}  // namespace mia
