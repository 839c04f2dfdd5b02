#include "mia/analysis.hpp"
#include "mia/error.hpp"

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace mia;

namespace {

// summary [0,2), four chunks of two tokens, query [10,12).
std::vector<Span> layout() {
    return {{"summary", 0, 2}, {"chunk:a", 2, 4}, {"chunk:b", 4, 6},
            {"chunk:c", 6, 8}, {"chunk:d", 8, 10}, {"query", 10, 12}};
}

AttentionDump random_dump(std::mt19937_64& rng, std::size_t layers = 1) {
    AttentionDump d;
    d.layers = layers;
    d.seq_len = 12;
    d.spans = layout();
    for (std::size_t l = 0; l < layers; ++l) {
        std::vector<double> A(144);
        for (std::size_t r = 0; r < 12; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 12; ++c) s += A[r * 12 + c] = 0.05 + uniform_unit(rng);
            for (std::size_t c = 0; c < 12; ++c) A[r * 12 + c] /= s;
        }
        d.A.push_back(std::move(A));
    }
    return d;
}

AttentionDump uniform_dump() {
    AttentionDump d;
    d.layers = 1;
    d.seq_len = 12;
    d.spans = layout();
    d.A.push_back(std::vector<double>(144, 1.0 / 12.0));
    return d;
}

// Step-by-step recomputation for the fixed layout, chunk order a..d, in long
// double with explicit loops.
double mcea_oracle(const AttentionDump& d, std::size_t layer, const std::vector<int>& rel, const std::vector<int>& noise) {
    using LD = long double;
    LD M[4], S[4];
    for (int c = 0; c < 4; ++c) {
        const int c0 = 2 + 2 * c;
        LD m = 0, s = 0;
        for (int r = c0; r < c0 + 2; ++r)
            for (int k = 0; k < 2; ++k) m += d.A[layer][r * 12 + k];
        for (int r = 10; r < 12; ++r)
            for (int k = c0; k < c0 + 2; ++k) s += d.A[layer][r * 12 + k];
        M[c] = m / 4;
        S[c] = s / 4;
    }
    auto z = [](LD* x, LD* out) {
        LD mu = (x[0] + x[1] + x[2] + x[3]) / 4, var = 0;
        for (int i = 0; i < 4; ++i) var += (x[i] - mu) * (x[i] - mu);
        const LD sd = std::sqrt(var / 4);
        for (int i = 0; i < 4; ++i) out[i] = sd < 1e-12L ? 0 : (x[i] - mu) / sd;
    };
    LD zm[4], zs[4];
    z(M, zm);
    z(S, zs);
    LD a = 0, b = 0;
    for (int i : rel) a += zm[i] * zs[i];
    for (int i : noise) b += zm[i] * zs[i];
    return static_cast<double>(a / rel.size() - b / noise.size());
}

// Angle via Gram-Schmidt in long double.
double angle_oracle(const std::vector<double>& q, const std::vector<std::vector<double>>& vs) {
    using LD = long double;
    std::vector<std::vector<LD>> basis;
    for (const auto& v : vs) {
        std::vector<LD> w(v.begin(), v.end());
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : basis) {
                LD dp = 0;
                for (std::size_t i = 0; i < w.size(); ++i) dp += w[i] * b[i];
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= dp * b[i];
            }
        }
        LD n = 0;
        for (auto x : w) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-9L) continue;
        for (auto& x : w) x /= n;
        basis.push_back(w);
    }
    std::vector<LD> p(q.size(), 0);
    for (const auto& b : basis) {
        LD dp = 0;
        for (std::size_t i = 0; i < q.size(); ++i) dp += q[i] * b[i];
        for (std::size_t i = 0; i < q.size(); ++i) p[i] += dp * b[i];
    }
    LD pn = 0, rn = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        pn += p[i] * p[i];
        rn += (q[i] - p[i]) * (q[i] - p[i]);
    }
    return static_cast<double>(std::atan2(std::sqrt(rn), std::sqrt(pn)) * 180 / 3.14159265358979323846L);
}

}  // namespace

TEST_CASE("uniform attention has zero MCEA") {
    const auto d = uniform_dump();
    const auto m = mcea_layer(d, {"a", "b"}, {"c", "d"});
    REQUIRE(m.size() == 1);
    CHECK(m[0] == 0.0);
}

TEST_CASE("MCEA matches a step-by-step recomputation") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 100; ++t) {
        const auto d = random_dump(rng, 3);
        const auto m = mcea_layer(d, {"a", "c"}, {"b", "d"});
        for (std::size_t l = 0; l < 3; ++l) CHECK(m[l] == Catch::Approx(mcea_oracle(d, l, {0, 2}, {1, 3})).margin(1e-9));
        const auto m2 = mcea_layer(d, {"d"}, {"a", "b", "c"});
        CHECK(m2[0] == Catch::Approx(mcea_oracle(d, 0, {3}, {0, 1, 2})).margin(1e-9));
    }
}

TEST_CASE("hand-built dump") {
    // Chunk a attends to the summary and the query attends to a; the rest
    // are uniform. Then M = (x, u, u, u), S = (y, u', u', u') with x > u and
    // y > u', so z_M(a) = z_S(a) = sqrt(3) and the others are -1/sqrt(3).
    auto d = uniform_dump();
    auto& A = d.A[0];
    for (int r = 2; r < 4; ++r) {
        for (int c = 0; c < 12; ++c) A[r * 12 + c] = c < 2 ? 0.4 : 0.02;
    }
    for (int r = 10; r < 12; ++r) {
        for (int c = 0; c < 12; ++c) A[r * 12 + c] = (c == 2 || c == 3) ? 0.4 : 0.02;
    }
    validate(d);
    const auto m = mcea_layer(d, {"a"}, {"b", "c", "d"});
    CHECK(m[0] == Catch::Approx(3.0 - 1.0 / 3.0).margin(1e-12));
}

TEST_CASE("swapping relevant and noise negates MCEA") {
    std::mt19937_64 rng(32);
    for (int t = 0; t < 50; ++t) {
        const auto d = random_dump(rng, 2);
        const auto a = mcea_layer(d, {"a", "b"}, {"c", "d"});
        const auto b = mcea_layer(d, {"c", "d"}, {"a", "b"});
        for (std::size_t l = 0; l < 2; ++l) CHECK(a[l] == Catch::Approx(-b[l]).margin(1e-12));
    }
}

TEST_CASE("a constant offset leaves MCEA unchanged") {
    std::mt19937_64 rng(33);
    for (int t = 0; t < 50; ++t) {
        const auto d = random_dump(rng);
        auto shifted = d;
        for (auto& x : shifted.A[0]) x += 0.37;
        const auto a = mcea_layer(d, {"a"}, {"b", "c"});
        const auto b = mcea_layer(shifted, {"a"}, {"b", "c"});
        CHECK(a[0] == Catch::Approx(b[0]).margin(1e-9));
    }
}

TEST_CASE("MCEA preconditions") {
    const auto d = uniform_dump();
    CHECK_THROWS_AS(mcea_layer(d, {}, {"a"}), Error);
    CHECK_THROWS_AS(mcea_layer(d, {"a"}, {"a"}), Error);
    try {
        (void)mcea_layer(d, {"zz"}, {"a"});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::missing_span);
        CHECK(std::string(e.what()).find("chunk:zz") != std::string::npos);
    }
    auto nosum = d;
    nosum.spans.erase(nosum.spans.begin());
    CHECK_THROWS_AS(mcea_layer(nosum, {"a"}, {"b"}), Error);
}

TEST_CASE("dump validation") {
    auto d = uniform_dump();
    CHECK_NOTHROW(validate(d));
    auto bad = d;
    bad.A[0][0] += 0.1;
    CHECK_THROWS_AS(validate(bad), Error);
    bad = d;
    bad.spans.push_back({"chunk:e", 9, 11});
    CHECK_THROWS_AS(validate(bad), Error);
    bad = d;
    bad.spans.push_back({"chunk:e", 11, 13});
    CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("projection angle") {
    const std::vector<double> q{1, 0, 0};
    CHECK(projection_angle(q, {{2, 0, 0}}) == Catch::Approx(0.0).margin(1e-9));
    CHECK(projection_angle(q, {{0, 1, 0}, {0, 0, 3}}) == Catch::Approx(90.0).margin(1e-9));
    CHECK(projection_angle({1, 1, 0}, {{1, 0, 0}}) == Catch::Approx(45.0).margin(1e-9));
    CHECK(projection_angle(q, {{0, 0, 0}}) == 90.0);
    CHECK_THROWS_AS(projection_angle({0, 0, 0}, {{1, 0, 0}}), Error);
    CHECK_THROWS_AS(projection_angle(q, {}), Error);
    CHECK_THROWS_AS(projection_angle(q, {{1, 0}}), Error);
}

TEST_CASE("projection angle matches Gram-Schmidt and is invariant") {
    std::mt19937_64 rng(34);
    for (int t = 0; t < 200; ++t) {
        const std::size_t d = 3 + uniform_index(rng, 10);
        const std::size_t n = 1 + uniform_index(rng, d - 1);
        const auto q = testing::random_unit_d(rng, d);
        std::vector<std::vector<double>> vs;
        for (std::size_t j = 0; j < n; ++j) vs.push_back(testing::random_unit_d(rng, d));
        const double a = projection_angle(q, vs);
        CHECK(a == Catch::Approx(angle_oracle(q, vs)).margin(1e-7));
        CHECK(a >= 0.0);
        CHECK(a <= 90.0);

        auto scaled_q = q;
        for (auto& x : scaled_q) x *= 7.5;
        CHECK(projection_angle(scaled_q, vs) == Catch::Approx(a).margin(1e-7));

        // Replacing the chunk set by linear recombinations keeps the span.
        auto mixed = vs;
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < d; ++i) mixed[j][i] = 2.0 * vs[j][i] + (j + 1 < n ? vs[j + 1][i] : 0.0);
        }
        CHECK(projection_angle(q, mixed) == Catch::Approx(a).margin(1e-6));

        // q inside the span.
        std::vector<double> inside(d, 0.0);
        for (const auto& v : vs)
            for (std::size_t i = 0; i < d; ++i) inside[i] += v[i];
        CHECK(projection_angle(inside, vs) == Catch::Approx(0.0).margin(1e-5));
    }
}

TEST_CASE("layer silver ratio") {
    std::mt19937_64 rng(35);
    Collection idx("u", 16);
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) {
        ids.push_back("c" + std::to_string(i));
        idx.insert(ids.back(), testing::random_unit(rng, 16));
    }

    SECTION("one layer gives a one-point curve") {
        HiddenDump h;
        h.layers = 1;
        h.dim = 16;
        h.h = {testing::random_unit_d(rng, 16)};
        const auto r = layer_silver_ratio({h}, idx, {{"c1"}}, 10);
        REQUIRE(r.size() == 1);
        CHECK(r[0] >= 0.0);
        CHECK(r[0] <= 0.1);
    }

    SECTION("exact hit") {
        HiddenDump h;
        h.layers = 2;
        h.dim = 16;
        const auto v5 = *idx.vector("c5");
        h.h = {std::vector<double>(v5.values.begin(), v5.values.end()), testing::random_unit_d(rng, 16)};
        const std::vector<std::vector<std::string>> silver{{"c5"}};
        const auto r = layer_silver_ratio({h}, idx, silver, 1);
        CHECK(r[0] == 1.0);
    }

    SECTION("random silver sets approach |silver| / |C|") {
        std::vector<HiddenDump> dumps;
        std::vector<std::vector<std::string>> silver;
        for (int q = 0; q < 2000; ++q) {
            HiddenDump h;
            h.layers = 2;
            h.dim = 16;
            h.h = {testing::random_unit_d(rng, 16), testing::random_unit_d(rng, 16)};
            dumps.push_back(std::move(h));
            auto pool = ids;
            portable_shuffle(pool.begin(), pool.end(), rng);
            pool.resize(30);
            silver.push_back(pool);
        }
        const auto r = layer_silver_ratio(dumps, idx, silver, 10);
        for (double x : r) {
            CHECK(x == Catch::Approx(0.3).margin(0.02));
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
        }
    }

    SECTION("mismatches") {
        HiddenDump h;
        h.layers = 1;
        h.dim = 8;
        h.h = {testing::random_unit_d(rng, 8)};
        CHECK_THROWS_AS(layer_silver_ratio({h}, idx, {{"c1"}}), Error);
        CHECK_THROWS_AS(layer_silver_ratio({}, idx, {}), Error);
    }
}

TEST_CASE("summary-replaced control") {
    std::mt19937_64 rng(36);
    const auto d = random_dump(rng);
    const auto same = summary_replaced_control(d, d, {"a"}, {"b", "c"});
    CHECK(same[0] == 0.0);

    // Original: chunk a reads the summary and the query reads a. The
    // replacement flattens that structure to uniform.
    auto strong = uniform_dump();
    for (int r = 2; r < 4; ++r)
        for (int c = 0; c < 12; ++c) strong.A[0][r * 12 + c] = c < 2 ? 0.4 : 0.02;
    for (int r = 10; r < 12; ++r)
        for (int c = 0; c < 12; ++c) strong.A[0][r * 12 + c] = (c == 2 || c == 3) ? 0.4 : 0.02;
    const auto delta = summary_replaced_control(strong, uniform_dump(), {"a"}, {"b", "c", "d"});
    CHECK(delta[0] > 0.0);

    auto moved = uniform_dump();
    moved.spans[2] = {"chunk:b", 4, 5};
    try {
        (void)summary_replaced_control(uniform_dump(), moved, {"a"}, {"b"});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::layout_mismatch);
        CHECK(std::string(e.what()).find("chunk:b") != std::string::npos);
    }
    auto shorter = uniform_dump();
    shorter.seq_len = 11;
    CHECK_THROWS_AS(summary_replaced_control(uniform_dump(), shorter, {"a"}, {"b"}), Error);
}

TEST_CASE("dump files round trip") {
    testing::TempDir dir("dump");
    std::mt19937_64 rng(37);
    const auto a = random_dump(rng, 2);
    save_dump(a, dir / "a.bin");
    const auto la = std::get<AttentionDump>(load_dump(dir / "a.bin"));
    CHECK(la.spans == a.spans);
    for (std::size_t i = 0; i < a.A[1].size(); ++i) CHECK(la.A[1][i] == Catch::Approx(a.A[1][i]).margin(1e-7));

    HiddenDump h;
    h.layers = 3;
    h.dim = 5;
    h.spans = {{"query", 0, 4}};
    for (int l = 0; l < 3; ++l) h.h.push_back(testing::random_unit_d(rng, 5));
    save_dump(h, dir / "h.bin");
    const auto lh = std::get<HiddenDump>(load_dump(dir / "h.bin"));
    CHECK(lh.layers == 3);
    CHECK(lh.h[2][4] == Catch::Approx(h.h[2][4]).margin(1e-7));

    const auto bytes = testing::read_all(dir / "a.bin");
    testing::write_all(dir / "t.bin", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_dump(dir / "t.bin"), Error);
    testing::write_all(dir / "m.bin", "nope" + bytes);
    CHECK_THROWS_AS(load_dump(dir / "m.bin"), Error);
}
