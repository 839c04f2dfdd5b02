#include "mia/adapter.hpp"
#include "mia/error.hpp"

#include "oracle_adapter.hpp"
#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

using namespace mia;

namespace {

std::vector<double> e(std::size_t d, std::size_t i) {
    std::vector<double> v(d, 0.0);
    v[i] = 1.0;
    return v;
}

ContrastiveTuple tuple(std::vector<double> q, std::vector<double> pos, std::vector<std::vector<double>> negs,
                       EvidenceTask task = EvidenceTask::chunk) {
    ContrastiveTuple t;
    t.q_tilde = std::move(q);
    t.positive = std::move(pos);
    t.negatives = std::move(negs);
    t.task = task;
    return t;
}

// At W = I and tau = 1, one negative orthogonal to q and the positive at
// cosine c give loss log(1 + exp(-c)); solve for c.
ContrastiveTuple tuple_with_loss(double target, EvidenceTask task) {
    const double c = -std::log(std::exp(target) - 1.0);
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    return tuple({1, 0, 0}, {c, s, 0}, {{0, 0, 1}}, task);
}

}  // namespace

TEST_CASE("single negative closed form") {
    auto p = AdapterParams::identity(3);
    p.tau = 1.0;
    const auto t = tuple(e(3, 0), e(3, 0), {e(3, 1)});
    CHECK(infonce_loss(t, p) == Catch::Approx(std::log1p(std::exp(-1.0))).margin(1e-9));
    CHECK(infonce_loss(t, p) == Catch::Approx(0.31326).margin(1e-5));
}

TEST_CASE("no negatives gives zero loss and zero gradient") {
    auto p = AdapterParams::identity(3);
    const std::vector<ContrastiveTuple> batch{tuple(e(3, 0), e(3, 1), {})};
    CHECK(infonce_loss(batch[0], p) == 0.0);
    const auto g = grad_loss(batch, p);
    CHECK(std::all_of(g.dW.begin(), g.dW.end(), [](double x) { return x == 0.0; }));
}

TEST_CASE("small temperature drives a separated loss to zero") {
    auto p = AdapterParams::identity(3);
    p.tau = 1e-3;
    const auto t = tuple(e(3, 0), e(3, 0), {e(3, 1), e(3, 2)});
    CHECK(infonce_loss(t, p) < 1e-12);
}

TEST_CASE("defaults") {
    const auto p = AdapterParams::identity(4);
    CHECK(p.beta == 0.5);
    CHECK(p.is_identity());
    CHECK_FALSE(p.learn_delta);
}

TEST_CASE("multitask weighting") {
    auto p = AdapterParams::identity(3);
    p.tau = 1.0;
    const auto c = tuple_with_loss(0.5, EvidenceTask::chunk);
    const auto n = tuple_with_loss(1.0, EvidenceTask::node);
    REQUIRE(infonce_loss(c, p) == Catch::Approx(0.5).margin(1e-9));
    REQUIRE(infonce_loss(n, p) == Catch::Approx(1.0).margin(1e-9));
    const std::vector<ContrastiveTuple> cs{c}, ns{n};
    p.beta = 0.5;
    CHECK(multitask_loss(cs, ns, p) == Catch::Approx(0.75).margin(1e-9));
    p.beta = 1.0;
    CHECK(multitask_loss(cs, ns, p) == Catch::Approx(0.5).margin(1e-9));
    p.beta = 0.25;
    const std::vector<ContrastiveTuple> mixed{n, c, c};
    CHECK(multitask_loss(mixed, p) == Catch::Approx(0.25 * 0.5 + 0.75 * 1.0).margin(1e-9));
    // An empty side contributes nothing rather than NaN.
    CHECK(multitask_loss(cs, {}, p) == Catch::Approx(0.25 * 0.5).margin(1e-9));
}

TEST_CASE("gradient matches long-double finite differences") {
    std::mt19937_64 rng(20240);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const auto c = oracle::random_case(rng, i);
        const auto g = grad_loss(c.batch, c.params);
        const auto fd = oracle::fd_gradient_extrapolated(c.batch, c.params);
        worst = std::max(worst, oracle::max_relative_error(g, fd, c.params.learn_delta));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("loss agrees with the long-double oracle") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        const auto c = oracle::random_case(rng, i);
        const double ours = multitask_loss(c.batch, c.params);
        const auto ref = static_cast<double>(oracle::multitask(c.batch, oracle::from(c.params)));
        CHECK(ours == Catch::Approx(ref).epsilon(1e-10).margin(1e-12));
        CHECK(ours >= 0.0);
    }
}

TEST_CASE("gradient vanishes at a symmetric stationary point") {
    // Negative identical to the positive: both scores move together.
    auto p = AdapterParams::identity(3);
    p.tau = 0.5;
    const std::vector<ContrastiveTuple> batch{tuple(e(3, 0), e(3, 0), {e(3, 0)})};
    const auto g = grad_loss(batch, p);
    for (double x : g.dW) CHECK(std::abs(x) < 1e-12);
}

TEST_CASE("negative order does not change loss or gradient") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 20; ++i) {
        auto c = oracle::random_case(rng, 2 * i);
        const double before = multitask_loss(c.batch, c.params);
        const auto gb = grad_loss(c.batch, c.params);
        for (auto& t : c.batch) std::reverse(t.negatives.begin(), t.negatives.end());
        CHECK(multitask_loss(c.batch, c.params) == Catch::Approx(before).epsilon(1e-12));
        const auto ga = grad_loss(c.batch, c.params);
        for (std::size_t k = 0; k < ga.dW.size(); ++k) CHECK(ga.dW[k] == Catch::Approx(gb.dW[k]).margin(1e-12));
    }
}

TEST_CASE("learnable delta requires h_q and h_t") {
    auto p = AdapterParams::identity(3);
    p.learn_delta = true;
    const std::vector<ContrastiveTuple> batch{tuple(e(3, 0), e(3, 0), {e(3, 1)})};
    try {
        (void)grad_loss(batch, p);
        FAIL("expected an error");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::invalid_argument);
    }
}

TEST_CASE("parameter and tuple validation") {
    auto p = AdapterParams::identity(3);
    p.tau = 0.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = AdapterParams::identity(3);
    p.beta = 1.5;
    CHECK_THROWS_AS(p.validate(), Error);
    p = AdapterParams::identity(3);
    p.W[4] = std::nan("");
    CHECK_THROWS_AS(p.validate(), Error);

    CHECK_THROWS_AS(validate_tuple(tuple(e(3, 0), e(2, 0), {}), 3), Error);
    CHECK_THROWS_AS(validate_tuple(tuple({2, 0, 0}, e(3, 0), {}), 3), Error);
    CHECK_NOTHROW(validate_tuple(tuple(e(3, 0), e(3, 1), {e(3, 2)}), 3));
}

TEST_CASE("warmup schedule") {
    TrainConfig cfg;
    cfg.lr = 1.0;
    cfg.steps = 100;
    cfg.warmup_ratio = 0.1;
    CHECK(lr_at(cfg, 0) == Catch::Approx(0.1));
    CHECK(lr_at(cfg, 4) == Catch::Approx(0.5));
    CHECK(lr_at(cfg, 9) == Catch::Approx(1.0));
    CHECK(lr_at(cfg, 50) == 1.0);
    cfg.warmup_ratio = 0.0;
    CHECK(lr_at(cfg, 0) == 1.0);
}

TEST_CASE("zero steps keep the identity") {
    SyntheticConfig sc;
    sc.seed = 3;
    const auto data = synthetic_separable(sc);
    TrainConfig cfg;
    cfg.steps = 0;
    const auto res = train(data, AdapterParams::identity(sc.dim), cfg);
    CHECK(res.params.is_identity());
    CHECK(res.trace.empty());
    CHECK(res.final_mean_loss == res.initial_mean_loss);
}

TEST_CASE("training descends on separable data and is deterministic") {
    SyntheticConfig sc;
    sc.seed = 11;
    const auto data = synthetic_separable(sc);
    auto init = AdapterParams::identity(sc.dim);
    init.tau = 0.1;
    TrainConfig cfg;
    cfg.lr = 0.5;
    cfg.steps = 300;
    cfg.batch = 8;
    cfg.seed = 42;
    const auto a = train(data, init, cfg);
    const auto b = train(data, init, cfg);
    CHECK(a.final_mean_loss < 0.5 * a.initial_mean_loss);
    CHECK(a.params.W == b.params.W);
    REQUIRE(a.trace.size() == cfg.steps);
    for (std::size_t i = 1; i < a.trace.size(); ++i) CHECK(a.trace[i].smoothed <= a.trace[i - 1].smoothed);

    cfg.seed = 43;
    const auto c = train(data, init, cfg);
    CHECK(c.params.W != a.params.W);
}

TEST_CASE("training rejects bad inputs") {
    TrainConfig cfg;
    CHECK_THROWS_AS(train({}, AdapterParams::identity(3), cfg), Error);
    const std::vector<ContrastiveTuple> data{tuple(e(3, 0), e(3, 1), {e(3, 2)})};
    cfg.batch = 0;
    CHECK_THROWS_AS(train(data, AdapterParams::identity(3), cfg), Error);
    cfg.batch = 1;
    try {
        (void)train(data, AdapterParams::identity(4), cfg);
        FAIL("expected an error");
    } catch (const Error& err) {
        CHECK(std::string(err.what()).find("tuple 0") != std::string::npos);
    }
}

TEST_CASE("checkpoint round trip") {
    testing::TempDir dir("adapter");
    std::mt19937_64 rng(2);
    auto p = AdapterParams::identity(5);
    for (auto& w : p.W) w += 0.1 * standard_normal(rng);
    p.delta = 0.3;
    p.learn_delta = true;
    p.tau = 0.07;
    p.beta = 0.6;
    save_adapter(p, dir / "a.bin");
    const auto q = load_adapter(dir / "a.bin");
    CHECK(q.dim == 5);
    for (std::size_t i = 0; i < p.W.size(); ++i) CHECK(q.W[i] == Catch::Approx(p.W[i]).margin(1e-7));
    CHECK(q.delta == Catch::Approx(0.3).margin(1e-7));
    CHECK(q.tau == Catch::Approx(0.07).margin(1e-7));
    CHECK(q.beta == Catch::Approx(0.6).margin(1e-7));

    auto bytes = testing::read_all(dir / "a.bin");
    testing::write_all(dir / "b.bin", "XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(load_adapter(dir / "b.bin"), Error);
    testing::write_all(dir / "c.bin", bytes + "z");
    CHECK_THROWS_AS(load_adapter(dir / "c.bin"), Error);
    testing::write_all(dir / "d.bin", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_adapter(dir / "d.bin"), Error);
}

TEST_CASE("identity adapter is a no-op") {
    std::mt19937_64 rng(4);
    const auto q = testing::random_unit(rng, 16);
    const auto out = apply_adapter(AdapterParams::identity(16), q);
    CHECK(out.values == q.values);

    auto p = AdapterParams::identity(16);
    for (auto& w : p.W) w *= 3.0;  // scaling does not change the direction
    const auto scaled = apply_adapter(p, q);
    for (std::size_t i = 0; i < 16; ++i) CHECK(scaled.values[i] == Catch::Approx(q.values[i]).margin(1e-6));
}

TEST_CASE("tuples for a silver record") {
    std::mt19937_64 rng(6);
    Collection units("u", 8);
    for (const char* id : {"c0", "c1", "c2", "c3", "c4"}) units.insert(id, testing::random_unit(rng, 8));
    SilverRecord r;
    r.qid = "q";
    r.task = EvidenceTask::node;
    r.silver_ids = {"c1", "c3"};
    r.hard_neg_ids = {"c0"};
    r.simple_neg_ids = {"c2", "c4"};
    ConditionedQuery cq;
    cq.h_q = testing::random_unit(rng, 8);
    cq.h_t = testing::random_unit(rng, 8);
    cq.q_tilde = testing::random_unit(rng, 8);
    const auto ts = tuples_for_record(r, cq, units);
    REQUIRE(ts.size() == 2);
    CHECK(ts[0].positive == to_double(*units.vector("c1")));
    CHECK(ts[1].positive == to_double(*units.vector("c3")));
    REQUIRE(ts[0].negatives.size() == 3);
    CHECK(ts[0].negatives[0] == to_double(*units.vector("c0")));
    CHECK(ts[0].negatives[2] == to_double(*units.vector("c4")));
    CHECK(ts[0].task == EvidenceTask::node);
    CHECK(ts[0].h_q.has_value());

    r.hard_neg_ids.push_back("ghost");
    try {
        (void)tuples_for_record(r, cq, units);
        FAIL("expected an error");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::not_found);
    }
}
