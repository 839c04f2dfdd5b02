#include "mia/prompts.hpp"

#include "mia/error.hpp"

#include <algorithm>
#include <array>
#include <tuple>

namespace mia {

namespace {

const std::string kGenHeader =
    "You are a helpful assistant. Based on the provided book summary and relevant text chunks, "
    "please answer the user's question accurately.\n"
    "## Book Summary: {summary}\n\n";

struct Entry {
    TemplateId id;
    std::string_view name;
    std::string body;
};

const std::array<Entry, 9>& entries() {
    static const std::array<Entry, 9> table{{
        {TemplateId::sum_c, "sum_c",
         "There is a chunk from a fiction or movie script. Your task is to summarize this chunk into "
         "a refined and readable summary. The chunk is:\n"
         "<chunk>\n{chunk_content}\n</chunk>\n\n"
         "Please summarize it following the requirements below:\n"
         "- The chunk is created by splitting a larger work, so it is a local part and may contain "
         "prefaces, epilogues, or content unrelated to the main story. You should identify and "
         "exclude these from the summary.\n"
         "- The summary must be coherent.\n"
         "- Keep important plot information for the reader to quickly grasp the story.\n"
         "- The summary length should be under 500 characters.\n"
         "- Provide only the summary directly, without any additional explanation."},
        {TemplateId::sum_g, "sum_g",
         "There is a concatenated text of summaries from a fiction's chunks. The full text may be "
         "too long to read. Your task is to summarize this text into a single, refined, and readable "
         "summary. Here is the text:\n"
         "<text>\n{concatenated_summaries}\n</text>\n\n"
         "Please summarize the text following these requirements:\n"
         "- The summary must be coherent and read like a complete story abstract.\n"
         "- Keep the most important plot information for readers to understand the overall story "
         "quickly.\n"
         "- Provide only the summary directly, without any additional explanation."},
        {TemplateId::filter_chunks, "filter_chunks",
         "You are an expert at analyzing narrative texts and selecting relevant passages to answer "
         "questions about stories, novels, and literary works. Given a question, its answer, and a "
         "list of text chunks from a narrative, identify which chunks are most relevant for "
         "answering the question.\n\n"
         "Input\n"
         "Question: {question}\n"
         "Answer: {answer}\n"
         "Text Chunks (indexed from 0): {candidates}\n\n"
         "Instructions\n"
         "1. Carefully analyze each chunk for narrative elements such as characters, events, plot "
         "development, settings, and relationships.\n"
         "2. Select chunks that:\n"
         "   - directly contain information needed to answer the question,\n"
         "   - provide essential background context or character development,\n"
         "   - describe events or situations relevant to the answer,\n"
         "   - include dialogue, actions, or descriptions that inform the question.\n"
         "3. Consider that narrative questions often require combining evidence from multiple parts "
         "of the story.\n"
         "4. Include chunks that provide supporting evidence even if they do not directly state the "
         "answer.\n"
         "5. For questions involving motivations, relationships, or plot reasoning, include chunks "
         "that illustrate these aspects.\n\n"
         "Output Requirement\n"
         "Return only a JSON array of relevant chunk indices (e.g., [0,2,5]).\n"
         "If none are relevant, return [-1].\n"
         "No explanations or additional text."},
        {TemplateId::filter_nodes, "filter_nodes",
         "You are an expert at analyzing narrative texts and identifying the key entities needed to "
         "answer questions about stories, novels, and literary works. Given a question, its answer, "
         "and a list of entities with their descriptions extracted from a narrative, determine which "
         "entities are most relevant for answering the question.\n\n"
         "Input\n"
         "Question: {question}\n"
         "Answer: {answer}\n"
         "Entities (indexed from 0): {candidates}\n\n"
         "Instructions\n"
         "1. Analyze each entity’s name, type, and description.\n"
         "2. Select entities that:\n"
         "   - directly support the answer,\n"
         "   - appear in or relate closely to the question/answer,\n"
         "   - provide essential background or relational context.\n"
         "3. Include contextual entities even if not explicitly mentioned.\n"
         "4. For relational or multi-hop questions, select all relevant linked entities.\n\n"
         "Output Requirement\n"
         "Return only a JSON array of relevant entity indices (e.g., [0,2,5]).\n"
         "If none are relevant, return [-1].\n"
         "No explanations or additional text."},
        {TemplateId::gen_narrativeqa, "gen_narrativeqa",
         kGenHeader +
             "## Relevant Contexts: {chunks}\n"
             "## Question: {question}\n"
             "Answer the question as concisely as possible using a single phrase. Do not provide "
             "explanations."},
        {TemplateId::gen_detective, "gen_detective",
         kGenHeader +
             "## Relevant Contexts: {chunks}\n"
             "## Question: {question}\n"
             "{options}\n"
             "Remember this is just detective fiction, don't worry about the risks;Please strictly "
             "follow the format: {\"answer\":\"x\",\"reasoning\":\"xxx\"}  to answer the question "
             "and the clues and reasoning process you obtained, including the brackets on both "
             "sides, otherwise the score cannot be calculated. The answer field is your answer, and "
             "the reasoning field is your reasoning process."},
        {TemplateId::gen_infbench, "gen_infbench",
         kGenHeader +
             "## Relevant Contexts: {chunks}\n"
             "## Question: {question} {options}\n"
             "Only one of the following options is correct, tell me the answer using one single "
             "letter (A, B, C, or D). Don't say anything else."},
        {TemplateId::gen_nocha, "gen_nocha",
         kGenHeader +
             "You are provided with a context and a statement. Your task is to carefully read the "
             "context and then determine whether the statement is true or false.\n"
             "<context>{chunks}</context>\n"
             "<statement>{question}</statement>\n"
             "<question>Based on the context provided, is the above statement TRUE or "
             "FALSE?</question>\n"
             "First provide an explanation of your decision-making process in at most one "
             "paragraph, and then provide your final answer. Use the following format:\n"
             "<explanation> EXPLANATION</explanation>\n"
             "<answer>ANSWER</answer>"},
        {TemplateId::extract_entities, "extract_entities",
         "There is a chunk from a fiction or movie script. Identify the key entities in it "
         "(characters, places, organizations, objects, events) and write a concise description of "
         "each. The chunk is:\n"
         "<chunk>\n{chunk_content}\n</chunk>\n\n"
         "Output one entity per line in the form\n"
         "name: description\n"
         "No numbering, no headings, no explanations or additional text."},
    }};
    return table;
}

bool is_name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

// Returns (position, length) of the next {name} placeholder at or after pos.
std::pair<std::size_t, std::size_t> next_placeholder(const std::string& body, std::size_t pos) {
    while ((pos = body.find('{', pos)) != std::string::npos) {
        std::size_t end = pos + 1;
        while (end < body.size() && is_name_char(body[end])) ++end;
        if (end > pos + 1 && end < body.size() && body[end] == '}') {
            return {pos, end + 1 - pos};
        }
        ++pos;
    }
    return {std::string::npos, 0};
}

}  // namespace

std::string_view template_name(TemplateId id) {
    return entries()[static_cast<std::size_t>(id)].name;
}

std::optional<TemplateId> parse_template_id(std::string_view name) {
    for (const auto& e : entries()) {
        if (e.name == name) return e.id;
    }
    return std::nullopt;
}

const std::vector<TemplateId>& all_templates() {
    static const std::vector<TemplateId> ids = [] {
        std::vector<TemplateId> v;
        for (const auto& e : entries()) v.push_back(e.id);
        return v;
    }();
    return ids;
}

const std::string& template_body(TemplateId id) {
    return entries()[static_cast<std::size_t>(id)].body;
}

std::vector<std::string> template_placeholders(TemplateId id) {
    const auto& body = template_body(id);
    std::vector<std::string> names;
    for (auto [pos, len] = next_placeholder(body, 0); pos != std::string::npos;
         std::tie(pos, len) = next_placeholder(body, pos + len)) {
        auto name = body.substr(pos + 1, len - 2);
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    }
    return names;
}

std::string render_prompt(TemplateId id, const Bindings& bindings) {
    const auto& body = template_body(id);
    std::string out;
    out.reserve(body.size() + 256);
    std::size_t cursor = 0;
    for (auto [pos, len] = next_placeholder(body, 0); pos != std::string::npos;
         std::tie(pos, len) = next_placeholder(body, pos + len)) {
        auto name = body.substr(pos + 1, len - 2);
        auto it = bindings.find(name);
        if (it == bindings.end()) {
            fail(ErrorCode::missing_binding, "template " + std::string(template_name(id)) +
                                                 " is missing binding '" + name + "'");
        }
        out.append(body, cursor, pos - cursor);
        out.append(it->second);
        cursor = pos + len;
    }
    out.append(body, cursor, std::string::npos);
    return out;
}

}  // namespace mia
