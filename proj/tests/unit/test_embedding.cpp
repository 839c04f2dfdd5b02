#include "mia/embedding.hpp"
#include "mia/error.hpp"
#include "mia/mindscape.hpp"
#include "mia/vector_index.hpp"

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace mia;

namespace {

EmbeddingVector unit(std::vector<double> v) { return normalize(std::span<const double>(v)); }

double cosd(const EmbeddingVector& a, const EmbeddingVector& b) { return dot(a.values, b.values); }

class CountingTransport final : public EmbeddingTransport {
public:
    explicit CountingTransport(std::size_t dim) : inner_(1, dim) {}
    std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) override {
        ++calls;
        return inner_.embed(texts);
    }
    int calls = 0;

private:
    MockEmbeddingTransport inner_;
};

}  // namespace

TEST_CASE("mock embeddings are deterministic unit vectors in order") {
    auto e = make_mock_embedder(11, 32);
    auto a = e->embed_texts({"alpha", "beta", "gamma"});
    REQUIRE(a.size() == 3);
    for (const auto& v : a) {
        CHECK(v.dim() == 32);
        CHECK(std::abs(l2_norm(v.values) - 1.0) < 1e-6);
        CHECK(is_unit(v));
    }
    CHECK(e->embed_text("beta").values == a[1].values);
    CHECK(e->embed_text("alpha").values != a[1].values);
    CHECK(e->dim() == 32);
    CHECK(make_mock_embedder(12, 32)->embed_text("alpha").values != a[0].values);
}

TEST_CASE("embedder batches requests") {
    auto t = std::make_unique<CountingTransport>(8);
    auto* raw = t.get();
    EmbedderOptions o;
    o.batch_size = 4;
    Embedder e(std::move(t), o);
    std::vector<std::string> texts;
    for (int i = 0; i < 10; ++i) texts.push_back("t" + std::to_string(i));
    auto v = e.embed_texts(texts);
    CHECK(v.size() == 10);
    CHECK(raw->calls == 3);
    CHECK(v[9].values == e.embed_text("t9").values);
}

TEST_CASE("normalize rejects zero and non-finite vectors") {
    std::vector<double> z{0.0, 0.0};
    CHECK_THROWS_AS(normalize(std::span<const double>(z)), Error);
    std::vector<double> bad{1.0, std::nan("")};
    CHECK_THROWS_AS(normalize(std::span<const double>(bad)), Error);
    auto v = unit({3.0, 4.0});
    CHECK(v.values[0] == Catch::Approx(0.6).margin(1e-7));
    CHECK(v.values[1] == Catch::Approx(0.8).margin(1e-7));
}

TEST_CASE("composed input concatenation order") {
    ControlTokens ct;
    ct.summary_intro = "";
    CHECK(compose_query_input("who?", "S", RetrievalMode::chunk, ct) == ct.inst + "who?" + ct.d_q + "S" + ct.d_c);
    CHECK(compose_query_input("who?", "", RetrievalMode::chunk, ct) == ct.inst + "who?" + ct.d_q + ct.d_c);
    const auto node = compose_query_input("who?", "S", RetrievalMode::node, ct);
    CHECK(node.substr(node.size() - ct.d_n.size()) == ct.d_n);

    ControlTokens def;
    const auto full = compose_query_input("who?", "S", RetrievalMode::chunk, def);
    CHECK(full == def.inst + "who?" + def.d_q + def.summary_intro + "S" + def.d_c);
    CHECK(full.rfind(compose_query_prefix("who?", def), 0) == 0);
    CHECK(def.d_q == "<|endoftext|>");
    CHECK(def.d_n == "<|node_mode|>");
    CHECK(def.d_c == "<|chunk_mode|>");

    ControlTokens clash;
    clash.d_n = clash.d_c;
    CHECK_THROWS_AS(clash.validate(), Error);
    CHECK_THROWS_AS(compose_query_input("", "S", RetrievalMode::chunk, def), Error);
}

TEST_CASE("residual combination arithmetic") {
    const auto hq = unit({1.0, 0.0});
    const auto ht = unit({0.0, 1.0});
    auto m = residual_combine(hq, ht, 0.5);
    CHECK(std::abs(m.values[0] - 0.70710678) < 1e-7);
    CHECK(std::abs(m.values[1] - 0.70710678) < 1e-7);
    CHECK(residual_combine(hq, ht, 1.0).values == hq.values);
    CHECK(residual_combine(hq, ht, 0.0).values == ht.values);
    CHECK(kDefaultResidualWeight == 0.5);
    CHECK_THROWS_AS(residual_combine(hq, ht, 1.5), Error);
    CHECK_THROWS_AS(residual_combine(hq, unit({1, 0, 0}), 0.5), Error);
    // Exact cancellation is an error, not a renormalized zero.
    CHECK_THROWS_AS(residual_combine(hq, unit({-1.0, 0.0}), 0.5), Error);
}

TEST_CASE("conditioned query matches an independent recomputation") {
    auto e = make_mock_embedder(3, 16);
    Mindscape ms;
    ms.doc_id = "d";
    ms.global_summary = "A keeper guards a lighthouse.";
    auto cq = condition_query(*e, "who keeps the light?", ms, RetrievalMode::chunk, 0.5);
    ControlTokens ct;
    const auto hq = e->embed_text(ct.inst + "who keeps the light?" + ct.d_q);
    const auto ht = e->embed_text(cq.composed_input);
    CHECK(cq.h_q.values == hq.values);
    CHECK(cq.h_t.values == ht.values);
    // Oracle: long double mix and norm.
    std::vector<long double> mix(16);
    long double n2 = 0;
    for (std::size_t i = 0; i < 16; ++i) {
        mix[i] = 0.5L * hq.values[i] + 0.5L * ht.values[i];
        n2 += mix[i] * mix[i];
    }
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(std::abs(static_cast<double>(mix[i] / std::sqrt(n2)) - cq.q_tilde.values[i]) < 1e-7);
    }
    CHECK(cq.summary_ref == "d");
    CHECK(!cq.approximation.empty());
}

TEST_CASE("residual identity keeps retrieval unchanged at delta 1") {
    std::mt19937_64 rng(5);
    Collection c("c", 12);
    for (int i = 0; i < 60; ++i) c.insert("id" + std::to_string(i), testing::random_unit(rng, 12));
    for (int t = 0; t < 50; ++t) {
        const auto hq = testing::random_unit(rng, 12);
        const auto ht = testing::random_unit(rng, 12);
        CHECK(c.top_k(residual_combine(hq, ht, 1.0), 7) == c.top_k(hq, 7));
    }
}

TEST_CASE("cosine to h_q is non-decreasing in delta when cos(h_q, h_t) >= 0") {
    std::mt19937_64 rng(6);
    int checked = 0;
    while (checked < 200) {
        const auto hq = testing::random_unit(rng, 8);
        const auto ht = testing::random_unit(rng, 8);
        if (cosd(hq, ht) < 0) continue;
        ++checked;
        double prev = -2.0;
        for (int k = 0; k <= 20; ++k) {
            const double c = cosd(residual_combine(hq, ht, k / 20.0), hq);
            CHECK(c >= prev - 1e-6);
            prev = c;
        }
    }
}

TEST_CASE("retrieval mode names") {
    CHECK(parse_retrieval_mode("chunk") == RetrievalMode::chunk);
    CHECK(parse_retrieval_mode("node") == RetrievalMode::node);
    CHECK(to_string(RetrievalMode::node) == "node");
    CHECK_THROWS_AS(parse_retrieval_mode("graph"), Error);
}
