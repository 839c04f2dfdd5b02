#include "mia/corpus.hpp"
#include "mia/error.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <nlohmann/json.hpp>

#include <random>
#include <set>

using namespace mia;

namespace {

std::string words(std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
    return s;
}

}  // namespace

TEST_CASE("count_tokens uses the word and ideograph rule") {
    CHECK(count_tokens("") == 0);
    CHECK(count_tokens("the quick fox") == 3);
    CHECK(count_tokens("今天天气很好啊") == 7);
    CHECK(count_tokens("  spaced\tout\nwords  ") == 3);
    CHECK(count_tokens("Hello, world!") == 2);
    CHECK(count_tokens("abc中文def") == 4);
}

TEST_CASE("chunk_spans stride arithmetic") {
    ChunkingConfig cfg{1200, 100};
    auto s = chunk_spans(2400, cfg);
    REQUIRE(s.size() == 3);
    CHECK(s[0].start == 0);
    CHECK(s[1].start == 1100);
    CHECK(s[2].start == 2200);
    CHECK(s[2].end == 2400);

    s = chunk_spans(500, cfg);
    REQUIRE(s.size() == 1);
    CHECK(s[0].start == 0);
    CHECK(s[0].end == 500);

    // The 100-token tail at 1100 is emitted rather than merged.
    s = chunk_spans(1200, cfg);
    REQUIRE(s.size() == 2);
    CHECK(s[0].end == 1200);
    CHECK(s[1].start == 1100);
    CHECK(s[1].end == 1200);

    s = chunk_spans(1150, cfg);
    REQUIRE(s.size() == 2);
    CHECK(s[1].start == 1100);
    CHECK(s[1].end == 1150);

    // overlap > stride: the tail ends the list instead of a run of truncated windows.
    s = chunk_spans(40, ChunkingConfig{30, 23});
    REQUIRE(s.size() == 4);
    CHECK(s[3].start == 21);
    CHECK(s[3].end == 40);

    CHECK(chunk_spans(0, cfg).empty());
}

TEST_CASE("chunking config is validated") {
    CHECK_THROWS_AS(chunk_spans(10, ChunkingConfig{0, 0}), Error);
    CHECK_THROWS_AS(chunk_spans(10, ChunkingConfig{10, 10}), Error);
    CHECK_NOTHROW(chunk_spans(10, ChunkingConfig{10, 9}));
}

TEST_CASE("chunk coverage property over random configs") {
    std::mt19937_64 rng(20241);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t size = 1 + rng() % 60;
        const std::size_t overlap = rng() % size;
        const std::size_t total = rng() % 400;
        const auto spans = chunk_spans(total, {size, overlap});
        std::vector<int> cover(total, 0);
        for (const auto& s : spans) {
            REQUIRE(s.start < s.end);
            REQUIRE(s.end <= total);
            REQUIRE(s.end - s.start <= size);
            for (auto i = s.start; i < s.end; ++i) ++cover[i];
        }
        for (auto c : cover) REQUIRE(c >= 1);
        for (std::size_t i = 0; i + 1 < spans.size(); ++i) {
            const std::size_t shared = spans[i].end > spans[i + 1].start ? spans[i].end - spans[i + 1].start : 0;
            if (i + 2 < spans.size()) {
                REQUIRE(shared == overlap);
            } else {
                REQUIRE(shared <= overlap);
            }
        }
    }
}

TEST_CASE("chunk_document slices the source text") {
    Document d{"doc", "T", words(25), Lang::en};
    auto chunks = chunk_document(d, {10, 2});
    REQUIRE(chunks.size() == 4);
    CHECK(chunks[0].text == "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9");
    CHECK(chunks[1].text.rfind("w8 w9 w10", 0) == 0);
    CHECK(chunks[2].text == "w16 w17 w18 w19 w20 w21 w22 w23 w24");
    CHECK(chunks[3].text == "w24");
    CHECK(chunks[1].id() == "doc:c0001");
    CHECK(chunks[2].token_count == 9);
    // Pure function of its inputs.
    auto again = chunk_document(d, {10, 2});
    for (std::size_t i = 0; i < chunks.size(); ++i) CHECK(again[i].text == chunks[i].text);
}

TEST_CASE("chunk_document keeps multibyte text intact") {
    Document d{"zh", "", "一二三四五六", Lang::zh};
    auto chunks = chunk_document(d, {4, 1});
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].text == "一二三四");
    CHECK(chunks[1].text == "四五六");
}

TEST_CASE("documents JSONL parsing") {
    auto docs = parse_documents_jsonl(
        "{\"id\":\"a\",\"title\":\"A\",\"text\":\"x y\",\"lang\":\"en\"}\n\n{\"id\":\"b\",\"text\":\"z\"}\n");
    REQUIRE(docs.size() == 2);
    CHECK(docs[1].title.empty());
    CHECK(docs[1].lang == Lang::en);
    CHECK_THROWS_AS(parse_documents_jsonl("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n"), Error);
    CHECK_THROWS_AS(parse_documents_jsonl("{\"title\":\"no id\"}\n"), Error);
    CHECK_THROWS_AS(parse_documents_jsonl("not json\n"), Error);
}

TEST_CASE("chunk JSON round trip") {
    Document d{"doc", "", words(12), Lang::en};
    for (const auto& c : chunk_document(d, {5, 1})) {
        auto back = chunk_from_json(nlohmann::json::parse(to_json(c).dump()));
        CHECK(back.id() == c.id());
        CHECK(back.text == c.text);
        CHECK(back.token_span.start == c.token_span.start);
        CHECK(back.token_span.end == c.token_span.end);
    }
}
