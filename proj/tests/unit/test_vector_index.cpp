#include "mia/error.hpp"
#include "mia/vector_index.hpp"

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <thread>

using namespace mia;

namespace {

EmbeddingVector basis(std::size_t d, std::size_t i) {
    std::vector<double> v(d, 0.0);
    v[i] = 1.0;
    return normalize(std::span<const double>(v));
}

// Independent full scan: score every entry, stable sort by (score desc, id asc).
std::vector<std::pair<std::string, double>> brute_force(const std::vector<std::pair<std::string, EmbeddingVector>>& rows,
                                                        const EmbeddingVector& q, std::size_t k) {
    std::vector<std::pair<std::string, double>> all;
    for (const auto& [id, v] : rows) {
        double s = 0.0;
        for (std::size_t i = 0; i < v.values.size(); ++i) s += static_cast<double>(q.values[i]) * v.values[i];
        all.emplace_back(id, s);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    all.resize(std::min(k, all.size()));
    return all;
}

}  // namespace

TEST_CASE("self retrieval ranks first") {
    std::mt19937_64 rng(1);
    Collection c("c", 16);
    std::vector<EmbeddingVector> vs;
    for (int i = 0; i < 20; ++i) {
        vs.push_back(testing::random_unit(rng, 16));
        c.insert("v" + std::to_string(i), vs.back(), "payload " + std::to_string(i));
    }
    auto hits = c.top_k(vs[7], 3);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].id == "v7");
    CHECK(hits[0].score == Catch::Approx(1.0).margin(1e-6));
    CHECK(c.payload("v7") == "payload 7");
    CHECK(!c.payload("nope"));
    CHECK(c.vector("v3")->values == vs[3].values);
}

TEST_CASE("insert preconditions leave the collection unchanged") {
    Collection c("c", 3);
    c.insert("a", basis(3, 0));
    try {
        c.insert("a", basis(3, 1));
        FAIL("duplicate accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::duplicate_id);
    }
    try {
        c.insert("b", basis(4, 1));
        FAIL("wrong dimension accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::dimension_mismatch);
    }
    EmbeddingVector raw{{2.0f, 0.0f, 0.0f}, false};
    CHECK_THROWS_AS(c.insert("c", raw), Error);
    CHECK(c.size() == 1);
    CHECK(c.vector("a")->values == basis(3, 0).values);
    CHECK_THROWS_AS(c.top_k(basis(3, 0), 0), Error);
    CHECK_THROWS_AS(Collection("z", 0), Error);
}

TEST_CASE("orthonormal ties break by id") {
    Collection c("c", 3);
    c.insert("e3", basis(3, 2));
    c.insert("e1", basis(3, 0));
    c.insert("e2", basis(3, 1));
    auto hits = c.top_k(basis(3, 1), 2);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].id == "e2");
    CHECK(hits[0].score == 1.0);
    CHECK(hits[1].id == "e1");
    CHECK(hits[1].score == 0.0);
    CHECK(c.top_k(basis(3, 1), 10).size() == 3);
    CHECK(c.ids() == std::vector<std::string>{"e3", "e1", "e2"});
}

TEST_CASE("top_k equals a brute-force scan") {
    std::mt19937_64 rng(42);
    std::vector<std::pair<std::string, EmbeddingVector>> rows;
    Collection c("c", 24);
    for (int i = 0; i < 50; ++i) {
        rows.emplace_back("id" + std::to_string(i), testing::random_unit(rng, 24));
        c.insert(rows.back().first, rows.back().second);
    }
    for (int t = 0; t < 40; ++t) {
        const auto q = testing::random_unit(rng, 24);
        const auto want = brute_force(rows, q, 10);
        const auto got = c.top_k(q, 10);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].id == want[i].first);
            CHECK(got[i].score == want[i].second);
        }
    }
}

TEST_CASE("save and load round-trip") {
    testing::TempDir dir("idx");
    std::mt19937_64 rng(9);
    Collection c("c", 8);
    for (int i = 0; i < 30; ++i) c.insert("id" + std::to_string(i), testing::random_unit(rng, 8), "p" + std::to_string(i));
    c.save(dir / "c.idx");
    auto bytes = testing::read_all(dir / "c.idx");
    CHECK(bytes.substr(0, 7) == "MIAIDX1");
    auto d = Collection::load(dir / "c.idx");
    CHECK(d.size() == 30);
    CHECK(d.dim() == 8);
    CHECK(d.ids() == c.ids());
    for (int t = 0; t < 20; ++t) {
        const auto q = testing::random_unit(rng, 8);
        CHECK(d.top_k(q, 5) == c.top_k(q, 5));
    }
    CHECK(d.payload("id4") == "p4");

    try {
        Collection::load(dir / "missing.idx");
        FAIL("missing file accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::upstream_missing);
    }
    testing::write_all(dir / "cut.idx", bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(Collection::load(dir / "cut.idx"), Error);
    testing::write_all(dir / "magic.idx", "XXXXXXX" + bytes.substr(7));
    CHECK_THROWS_AS(Collection::load(dir / "magic.idx"), Error);
}

TEST_CASE("concurrent readers see complete entries") {
    Collection c("c", 4);
    std::mt19937_64 rng(3);
    const auto q = testing::random_unit(rng, 4);
    std::vector<EmbeddingVector> vs;
    for (int i = 0; i < 400; ++i) vs.push_back(testing::random_unit(rng, 4));
    std::atomic<bool> done{false};
    std::atomic<int> bad{0};
    std::thread reader([&] {
        while (!done) {
            const auto n = c.size();
            for (const auto& h : c.top_k(q, 1000)) {
                if (!c.contains(h.id)) ++bad;
            }
            if (c.size() < n) ++bad;
        }
    });
    for (int i = 0; i < 400; ++i) c.insert("v" + std::to_string(i), vs[static_cast<std::size_t>(i)]);
    done = true;
    reader.join();
    CHECK(bad == 0);
    CHECK(c.size() == 400);
}
