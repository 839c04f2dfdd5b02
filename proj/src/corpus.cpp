#include "mia/corpus.hpp"

#include "mia/error.hpp"
#include "mia/text.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace mia {

Lang parse_lang(std::string_view s) {
    if (s == "en") return Lang::en;
    if (s == "zh") return Lang::zh;
    return Lang::other;
}

std::string_view to_string(Lang lang) {
    switch (lang) {
        case Lang::en: return "en";
        case Lang::zh: return "zh";
        case Lang::other: return "other";
    }
    return "other";
}

std::string chunk_id(std::string_view doc_id, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, ":c%04zu", index);
    return std::string(doc_id) + buf;
}

std::string Chunk::id() const { return chunk_id(doc_id, index); }

std::vector<TokenOffset> WordTokenizer::tokenize(std::string_view s) const {
    std::vector<TokenOffset> tokens;
    bool in_word = false;
    TokenOffset cur;
    for (const auto& cp : text::decode_utf8(s)) {
        if (text::is_space(cp.value)) {
            if (in_word) tokens.push_back(cur);
            in_word = false;
        } else if (text::is_cjk(cp.value)) {
            if (in_word) tokens.push_back(cur);
            in_word = false;
            tokens.push_back({cp.offset, cp.offset + cp.length});
        } else if (in_word) {
            cur.end = cp.offset + cp.length;
        } else {
            in_word = true;
            cur = {cp.offset, cp.offset + cp.length};
        }
    }
    if (in_word) tokens.push_back(cur);
    return tokens;
}

const Tokenizer& default_tokenizer() {
    static const WordTokenizer tok;
    return tok;
}

std::size_t count_tokens(std::string_view text, const Tokenizer& tok) {
    return tok.tokenize(text).size();
}

void validate(const ChunkingConfig& cfg) {
    if (cfg.size == 0) fail(ErrorCode::invalid_config, "chunk size must be positive");
    if (cfg.overlap >= cfg.size) {
        fail(ErrorCode::invalid_config,
             "chunk overlap (" + std::to_string(cfg.overlap) + ") must be smaller than size (" +
                 std::to_string(cfg.size) + ")");
    }
}

std::vector<TokenSpan> chunk_spans(std::size_t total, const ChunkingConfig& cfg) {
    validate(cfg);
    const std::size_t stride = cfg.size - cfg.overlap;
    std::vector<TokenSpan> spans;
    for (std::size_t start = 0; start < total; start += stride) {
        spans.push_back({start, std::min(start + cfg.size, total)});
        // A start inside the last `overlap` tokens is the short tail; nothing follows it.
        if (start + cfg.overlap >= total) break;
    }
    return spans;
}

std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg,
                                  const Tokenizer& tok) {
    const auto tokens = tok.tokenize(doc.text);
    std::vector<Chunk> chunks;
    std::size_t index = 0;
    for (const auto& span : chunk_spans(tokens.size(), cfg)) {
        Chunk c;
        c.doc_id = doc.id;
        c.index = index++;
        c.token_span = span;
        c.token_count = span.end - span.start;
        const auto begin = tokens[span.start].begin;
        const auto end = tokens[span.end - 1].end;
        c.text = doc.text.substr(begin, end - begin);
        chunks.push_back(std::move(c));
    }
    return chunks;
}

std::vector<Document> parse_documents_jsonl(std::string_view content) {
    std::vector<Document> docs;
    std::set<std::string> seen;
    std::istringstream in{std::string(content)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        const auto where = "corpus line " + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::schema_mismatch, where + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("text") ||
            !j["text"].is_string()) {
            fail(ErrorCode::schema_mismatch, where + ": expected string fields id and text");
        }
        Document d;
        d.id = j["id"].get<std::string>();
        d.title = j.value("title", std::string{});
        d.text = j["text"].get<std::string>();
        d.lang = parse_lang(j.value("lang", std::string{"en"}));
        if (d.id.empty()) fail(ErrorCode::schema_mismatch, where + ": empty id");
        if (text::trim(d.text).empty()) {
            fail(ErrorCode::schema_mismatch, where + ": document '" + d.id + "' has empty text");
        }
        if (!seen.insert(d.id).second) {
            fail(ErrorCode::duplicate_id, where + ": duplicate document id '" + d.id + "'");
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

std::vector<Document> load_documents_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io_error, "cannot open corpus " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_documents_jsonl(ss.str());
}

nlohmann::ordered_json to_json(const Document& doc) {
    return {{"id", doc.id}, {"title", doc.title}, {"text", doc.text}, {"lang", to_string(doc.lang)}};
}

nlohmann::ordered_json to_json(const Chunk& c) {
    return {{"id", c.id()},
            {"doc_id", c.doc_id},
            {"index", c.index},
            {"token_start", c.token_span.start},
            {"token_end", c.token_span.end},
            {"token_count", c.token_count},
            {"text", c.text}};
}

Chunk chunk_from_json(const nlohmann::json& j) {
    Chunk c;
    c.doc_id = j.at("doc_id").get<std::string>();
    c.index = j.at("index").get<std::size_t>();
    c.token_span = {j.at("token_start").get<std::size_t>(), j.at("token_end").get<std::size_t>()};
    c.token_count = j.at("token_count").get<std::size_t>();
    c.text = j.at("text").get<std::string>();
    return c;
}

}  // namespace mia
