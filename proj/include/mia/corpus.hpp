#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mia {

enum class Lang { en, zh, other };

Lang parse_lang(std::string_view s);
std::string_view to_string(Lang lang);

struct Document {
    std::string id;
    std::string title;
    std::string text;
    Lang lang = Lang::en;
};

struct TokenSpan {
    std::size_t start = 0;  // token index, inclusive
    std::size_t end = 0;    // token index, exclusive
};

struct Chunk {
    std::string doc_id;
    std::size_t index = 0;
    TokenSpan token_span;
    std::string text;
    std::size_t token_count = 0;

    std::string id() const;
};

// Stable chunk identifier: "<doc_id>:c0007". Zero padding keeps id order equal
// to positional order for ordinary documents.
std::string chunk_id(std::string_view doc_id, std::size_t index);

// Byte range of one token inside the source text.
struct TokenOffset {
    std::size_t begin = 0;
    std::size_t end = 0;
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<TokenOffset> tokenize(std::string_view text) const = 0;
    virtual std::string name() const = 0;
};

// Default approximate tokenizer. A token is either a single CJK ideograph
// (or kana/hangul syllable) or a maximal run of other non-whitespace code
// points. Punctuation stays attached to its word. Counts are part of the
// artifact contract; changing the rule changes every chunk boundary.
class WordTokenizer final : public Tokenizer {
public:
    std::vector<TokenOffset> tokenize(std::string_view text) const override;
    std::string name() const override { return "word-ideograph-v1"; }
};

const Tokenizer& default_tokenizer();

std::size_t count_tokens(std::string_view text, const Tokenizer& tok = default_tokenizer());

struct ChunkingConfig {
    std::size_t size = 1200;
    std::size_t overlap = 100;
};

// Fixed windows with stride size - overlap. Chunk i covers tokens
// [i*stride, min(i*stride + size, total)); emission stops at the first start
// that is >= total, so short tails are kept.
std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg,
                                  const Tokenizer& tok = default_tokenizer());

// Token-index windows only; chunk_document is this plus text slicing.
// Windows start every size - overlap tokens. The first window starting within
// `overlap` tokens of the end is emitted as a short tail and ends the list.
std::vector<TokenSpan> chunk_spans(std::size_t total_tokens, const ChunkingConfig& cfg);

void validate(const ChunkingConfig& cfg);

// JSONL corpus: one {id, title, text, lang} object per line. Rejects duplicate
// ids and documents whose text is empty after trimming.
std::vector<Document> load_documents_jsonl(const std::filesystem::path& path);
std::vector<Document> parse_documents_jsonl(std::string_view content);

nlohmann::ordered_json to_json(const Document& doc);
nlohmann::ordered_json to_json(const Chunk& chunk);
Chunk chunk_from_json(const nlohmann::json& j);

}  // namespace mia
