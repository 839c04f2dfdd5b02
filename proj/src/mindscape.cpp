#include "mia/mindscape.hpp"

#include "mia/error.hpp"
#include "mia/log.hpp"
#include "mia/parallel.hpp"
#include "mia/prompts.hpp"
#include "mia/text.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

namespace mia {

std::string node_id(std::string_view doc_id, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, ":n%04zu", index);
    return std::string(doc_id) + buf;
}

namespace {

std::string complete_retry_empty_once(LlmGateway& gw, const ChatRequest& req) {
    for (int attempt = 0;; ++attempt) {
        try {
            return text::trim(gw.complete(req).text);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::empty_completion || attempt >= 1) throw;
            log::warn("empty summary completion, asking once more");
        }
    }
}

ChatRequest make_request(LlmGateway& gw, std::string user, const SummarizerOptions& opts) {
    ChatRequest req;
    req.user = std::move(user);
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;
    req.model_tag = gw.model_tag();
    return req;
}

std::string summarize_group(LlmGateway& gw, const std::vector<std::string>& items,
                            const SummarizerOptions& opts) {
    auto prompt = render_prompt(TemplateId::sum_g, {{"concatenated_summaries", text::join(items, "\n")}});
    return complete_retry_empty_once(gw, make_request(gw, std::move(prompt), opts));
}

}  // namespace

std::string summarize_chunk(LlmGateway& gw, const Chunk& chunk, const SummarizerOptions& opts) {
    auto prompt = render_prompt(TemplateId::sum_c, {{"chunk_content", chunk.text}});
    return complete_retry_empty_once(gw, make_request(gw, std::move(prompt), opts));
}

std::vector<std::string> summarize_chunks(LlmGateway& gw, const std::vector<Chunk>& chunks,
                                          const SummarizerOptions& opts) {
    std::vector<std::string> out(chunks.size());
    parallel_for(chunks.size(), gw.parallelism(),
                 [&](std::size_t i) { out[i] = summarize_chunk(gw, chunks[i], opts); });
    return out;
}

std::vector<std::vector<std::size_t>> group_for_budget(const std::vector<std::size_t>& counts,
                                                       std::size_t budget) {
    std::vector<std::vector<std::size_t>> groups;
    std::size_t i = 0;
    while (i < counts.size()) {
        std::vector<std::size_t> g{i};
        std::size_t total = counts[i];
        ++i;
        while (i < counts.size() && (g.size() < 2 || total + counts[i] <= budget)) {
            total += counts[i];
            g.push_back(i);
            ++i;
        }
        groups.push_back(std::move(g));
    }
    if (groups.size() > 1 && groups.back().size() == 1) {
        groups[groups.size() - 2].push_back(groups.back().front());
        groups.pop_back();
    }
    return groups;
}

GlobalSummary build_global_summary(LlmGateway& gw, const std::vector<std::string>& summaries,
                                   const SummarizerOptions& opts) {
    if (summaries.empty()) fail(ErrorCode::invalid_argument, "no chunk summaries to reduce");
    if (opts.budget_tokens == 0) fail(ErrorCode::invalid_config, "summary budget must be positive");

    GlobalSummary result;
    result.levels = 1;
    std::vector<std::string> level = summaries;
    while (true) {
        result.level_sizes.push_back(level.size());
        std::vector<std::size_t> counts;
        counts.reserve(level.size());
        for (const auto& s : level) counts.push_back(count_tokens(s));
        const auto total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});

        if (total <= opts.budget_tokens || level.size() == 1) {
            result.text = summarize_group(gw, level, opts);
            ++result.levels;
            return result;
        }

        const auto groups = group_for_budget(counts, opts.budget_tokens);
        if (groups.size() >= level.size()) {
            fail(ErrorCode::invariant_violation, "summary reduction did not shrink the level");
        }
        std::vector<std::string> next(groups.size());
        parallel_for(groups.size(), gw.parallelism(), [&](std::size_t g) {
            std::vector<std::string> items;
            for (auto idx : groups[g]) items.push_back(level[idx]);
            next[g] = summarize_group(gw, items, opts);
        });
        level = std::move(next);
        ++result.levels;
    }
}

Mindscape build_mindscape(LlmGateway& gw, const std::string& doc_id,
                          const std::vector<Chunk>& chunks, const SummarizerOptions& opts) {
    Mindscape m;
    m.doc_id = doc_id;
    m.summarizer_tag = gw.model_tag();
    m.chunk_summaries = summarize_chunks(gw, chunks, opts);
    auto g = build_global_summary(gw, m.chunk_summaries, opts);
    m.global_summary = std::move(g.text);
    m.levels = g.levels;
    if (m.global_summary.empty()) fail(ErrorCode::empty_completion, "global summary is empty");
    return m;
}

std::vector<Node> parse_entity_lines(std::string_view completion, const std::string& doc_id) {
    std::vector<Node> nodes;
    for (auto& raw : text::split(completion, '\n')) {
        auto line = text::trim(raw);
        // Bullets and "3." / "3)" numbering.
        while (!line.empty() && (line[0] == '-' || line[0] == '*')) line = text::trim(line.substr(1));
        if (line.rfind("•", 0) == 0) line = text::trim(line.substr(std::string_view("•").size()));
        std::size_t d = 0;
        while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
        if (d > 0 && d < line.size() && (line[d] == '.' || line[d] == ')')) {
            line = text::trim(line.substr(d + 1));
        }
        auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        auto name = text::trim(line.substr(0, colon));
        auto desc = text::trim(line.substr(colon + 1));
        // Markdown emphasis around names.
        while (name.size() >= 2 && name.front() == '*' && name.back() == '*') {
            name = text::trim(name.substr(1, name.size() - 2));
        }
        if (name.empty() || desc.empty()) continue;
        nodes.push_back({name, desc, doc_id});
    }
    return nodes;
}

std::vector<Node> merge_entities(const std::vector<Node>& nodes) {
    std::vector<Node> out;
    std::map<std::string, std::size_t> by_key;
    for (const auto& n : nodes) {
        auto key = text::to_lower_ascii(n.name);
        auto it = by_key.find(key);
        if (it == by_key.end()) {
            by_key.emplace(key, out.size());
            out.push_back(n);
        } else if (n.desc.size() > out[it->second].desc.size()) {
            out[it->second].desc = n.desc;
        }
    }
    return out;
}

std::vector<Node> extract_entities(LlmGateway& gw, const std::vector<Chunk>& chunks,
                                   const SummarizerOptions& opts) {
    std::vector<std::vector<Node>> per_chunk(chunks.size());
    parallel_for(chunks.size(), gw.parallelism(), [&](std::size_t i) {
        const auto& c = chunks[i];
        auto prompt = render_prompt(TemplateId::extract_entities, {{"chunk_content", c.text}});
        std::string reply;
        try {
            reply = gw.complete(make_request(gw, std::move(prompt), opts)).text;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::empty_completion) throw;
        }
        per_chunk[i] = parse_entity_lines(reply, c.doc_id);
        if (per_chunk[i].empty()) {
            log::warn("entity extraction: no parseable entities for chunk " + c.id() + ", skipped");
        }
    });
    std::vector<Node> all;
    for (auto& v : per_chunk) all.insert(all.end(), v.begin(), v.end());
    return merge_entities(all);
}

nlohmann::ordered_json to_json(const Mindscape& m) {
    return {{"doc_id", m.doc_id},
            {"chunk_summaries", m.chunk_summaries},
            {"global_summary", m.global_summary},
            {"summarizer_tag", m.summarizer_tag},
            {"levels", m.levels}};
}

Mindscape mindscape_from_json(const nlohmann::json& j) {
    Mindscape m;
    try {
        m.doc_id = j.at("doc_id").get<std::string>();
        m.chunk_summaries = j.at("chunk_summaries").get<std::vector<std::string>>();
        m.global_summary = j.at("global_summary").get<std::string>();
        m.summarizer_tag = j.value("summarizer_tag", std::string{});
        m.levels = j.value("levels", 2);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema_mismatch, std::string("mindscape: ") + e.what());
    }
    if (m.global_summary.empty()) fail(ErrorCode::schema_mismatch, "mindscape: empty global summary");
    return m;
}

void save_mindscape(const Mindscape& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
    out << to_json(m).dump(2) << '\n';
}

Mindscape load_mindscape(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::upstream_missing, "mindscape artifact missing: " + path.string());
    try {
        return mindscape_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::schema_mismatch, path.string() + ": " + e.what());
    }
}

nlohmann::ordered_json to_json(const Node& n, std::size_t index) {
    return {{"id", node_id(n.doc_id, index)}, {"doc_id", n.doc_id}, {"name", n.name}, {"desc", n.desc}};
}

Node node_from_json(const nlohmann::json& j) {
    return {j.at("name").get<std::string>(), j.at("desc").get<std::string>(),
            j.at("doc_id").get<std::string>()};
}

}  // namespace mia
