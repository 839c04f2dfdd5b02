#include "mia/adapter.hpp"

#include "binio.hpp"

#include "mia/digest.hpp"
#include "mia/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mia {

namespace {

constexpr char kMagic[7] = {'M', 'I', 'A', 'A', 'D', 'P', '1'};

double dotd(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dotd(a, a)); }

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// The query the adapter sees: q_tilde, or the residual combination when delta
// is being learned.
struct QueryState {
    std::vector<double> q;
    double v_norm = 1.0;  // |delta*h_q + (1-delta)*h_t| when recombined
};

QueryState query_for(const ContrastiveTuple& t, const AdapterParams& p) {
    if (!p.learn_delta) return {t.q_tilde, 1.0};
    if (!t.h_q || !t.h_t) fail(ErrorCode::invalid_argument, "learnable delta needs h_q and h_t on every tuple");
    std::vector<double> v(p.dim);
    for (std::size_t i = 0; i < p.dim; ++i) v[i] = p.delta * (*t.h_q)[i] + (1.0 - p.delta) * (*t.h_t)[i];
    const double n = norm2(v);
    if (!(n > 0.0)) fail(ErrorCode::zero_vector, "residual combination is zero");
    for (auto& x : v) x /= n;
    return {std::move(v), n};
}

struct Forward {
    QueryState qs;
    std::vector<double> z;
    double u_norm = 0.0;
    std::vector<double> prob;  // softmax over {pos} u negs
    double loss = 0.0;
};

Forward forward(const ContrastiveTuple& t, const AdapterParams& p) {
    Forward f;
    f.qs = query_for(t, p);
    const auto d = p.dim;
    std::vector<double> u(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += p.W[r * d + c] * f.qs.q[c];
        u[r] = s;
    }
    f.u_norm = norm2(u);
    if (!(f.u_norm > 0.0)) fail(ErrorCode::zero_vector, "adapter maps the query to zero");
    f.z = u;
    for (auto& x : f.z) x /= f.u_norm;
    if (t.negatives.empty()) {
        f.prob = {1.0};
        return f;
    }
    std::vector<double> a;
    a.reserve(t.negatives.size() + 1);
    a.push_back(dotd(f.z, t.positive) / p.tau);
    for (const auto& n : t.negatives) a.push_back(dotd(f.z, n) / p.tau);
    const double m = *std::max_element(a.begin(), a.end());
    double sum = 0.0;
    f.prob.resize(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
        f.prob[j] = std::exp(a[j] - m);
        sum += f.prob[j];
    }
    for (auto& x : f.prob) x /= sum;
    f.loss = -(a[0] - m) + std::log(sum);
    if (!std::isfinite(f.loss)) fail(ErrorCode::non_finite, "non-finite InfoNCE loss");
    return f;
}

void check_params(const AdapterParams& p) { p.validate(); }

// Accumulates w * d(loss)/d(W, delta) for one tuple.
void backward(const ContrastiveTuple& t, const AdapterParams& p, const Forward& f, double w,
              AdapterGradient& g) {
    if (t.negatives.empty()) return;
    const auto d = p.dim;
    // dL/dz = sum_j (p_j - [j=0]) d_j / tau. Since sum_j p_j = 1 this equals
    // sum_{j>0} p_j (d_j - d_0) / tau, which avoids forming p_0 - 1 when the
    // positive saturates.
    std::vector<double> gz(d, 0.0);
    for (std::size_t j = 1; j < f.prob.size(); ++j) {
        const double gs = f.prob[j] / p.tau;
        const auto& vec = t.negatives[j - 1];
        for (std::size_t i = 0; i < d; ++i) gz[i] += gs * (vec[i] - t.positive[i]);
    }
    const double zg = dotd(f.z, gz);
    std::vector<double> gu(d);
    for (std::size_t i = 0; i < d; ++i) gu[i] = (gz[i] - f.z[i] * zg) / f.u_norm;
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) g.dW[r * d + c] += w * gu[r] * f.qs.q[c];
    }
    if (p.learn_delta) {
        std::vector<double> gq(d, 0.0);
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t c = 0; c < d; ++c) gq[c] += p.W[r * d + c] * gu[r];
        }
        const double qg = dotd(f.qs.q, gq);
        double dd = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double gv = (gq[i] - f.qs.q[i] * qg) / f.qs.v_norm;
            dd += gv * ((*t.h_q)[i] - (*t.h_t)[i]);
        }
        g.d_delta += w * dd;
    }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_tasks(std::span<const ContrastiveTuple> batch) {
    std::vector<std::size_t> c, n;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        (batch[i].task == EvidenceTask::chunk ? c : n).push_back(i);
    }
    return {c, n};
}

}  // namespace

AdapterParams AdapterParams::identity(std::size_t dim) {
    if (dim == 0) fail(ErrorCode::invalid_argument, "adapter dimension must be positive");
    AdapterParams p;
    p.dim = dim;
    p.W.assign(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) p.W[i * dim + i] = 1.0;
    return p;
}

bool AdapterParams::is_identity() const {
    for (std::size_t r = 0; r < dim; ++r) {
        for (std::size_t c = 0; c < dim; ++c) {
            if (W[r * dim + c] != (r == c ? 1.0 : 0.0)) return false;
        }
    }
    return true;
}

void AdapterParams::validate() const {
    if (dim == 0 || W.size() != dim * dim) fail(ErrorCode::invalid_config, "adapter W shape does not match dim");
    if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorCode::invalid_config, "tau must be > 0");
    if (!(beta >= 0.0 && beta <= 1.0)) fail(ErrorCode::invalid_config, "beta must lie in [0, 1]");
    if (!(delta >= 0.0 && delta <= 1.0)) fail(ErrorCode::invalid_config, "delta must lie in [0, 1]");
    if (!all_finite(W)) fail(ErrorCode::non_finite, "adapter W has non-finite entries");
}

std::vector<double> to_double(const EmbeddingVector& v) { return {v.values.begin(), v.values.end()}; }

void validate_tuple(const ContrastiveTuple& t, std::size_t dim) {
    auto check = [&](const std::vector<double>& v, const char* what) {
        if (v.size() != dim) {
            fail(ErrorCode::dimension_mismatch,
                 std::string(what) + " has dimension " + std::to_string(v.size()) + ", expected " + std::to_string(dim));
        }
        if (!all_finite(v)) fail(ErrorCode::non_finite, std::string(what) + " has non-finite entries");
        if (std::abs(norm2(v) - 1.0) > kUnitNormTolerance) fail(ErrorCode::invalid_argument, std::string(what) + " is not unit length");
    };
    check(t.q_tilde, "q_tilde");
    check(t.positive, "positive");
    for (const auto& n : t.negatives) check(n, "negative");
    if (t.h_q) check(*t.h_q, "h_q");
    if (t.h_t) check(*t.h_t, "h_t");
}

double infonce_loss(const ContrastiveTuple& t, const AdapterParams& p) {
    check_params(p);
    validate_tuple(t, p.dim);
    if (t.negatives.empty()) return 0.0;
    return forward(t, p).loss;
}

double multitask_loss(std::span<const ContrastiveTuple> chunk_batch, std::span<const ContrastiveTuple> node_batch,
                      const AdapterParams& p) {
    if (chunk_batch.empty() && node_batch.empty()) fail(ErrorCode::invalid_argument, "multitask_loss needs a nonempty batch");
    auto mean = [&](std::span<const ContrastiveTuple> b) {
        if (b.empty()) return 0.0;
        double s = 0.0;
        for (const auto& t : b) s += infonce_loss(t, p);
        return s / static_cast<double>(b.size());
    };
    return p.beta * mean(chunk_batch) + (1.0 - p.beta) * mean(node_batch);
}

double multitask_loss(std::span<const ContrastiveTuple> batch, const AdapterParams& p) {
    auto [c, n] = split_tasks(batch);
    std::vector<ContrastiveTuple> cb, nb;
    for (auto i : c) cb.push_back(batch[i]);
    for (auto i : n) nb.push_back(batch[i]);
    return multitask_loss(cb, nb, p);
}

AdapterGradient grad_loss(std::span<const ContrastiveTuple> batch, const AdapterParams& p) {
    check_params(p);
    if (batch.empty()) fail(ErrorCode::invalid_argument, "grad_loss needs a nonempty batch");
    auto [c, n] = split_tasks(batch);
    AdapterGradient g;
    g.dW.assign(p.dim * p.dim, 0.0);
    auto run = [&](const std::vector<std::size_t>& idx, double weight) {
        if (idx.empty()) return;
        const double w = weight / static_cast<double>(idx.size());
        for (auto i : idx) {
            validate_tuple(batch[i], p.dim);
            backward(batch[i], p, forward(batch[i], p), w, g);
            if (!all_finite(g.dW) || !std::isfinite(g.d_delta)) {
                fail(ErrorCode::non_finite, "non-finite gradient at tuple " + std::to_string(i));
            }
        }
    };
    run(c, p.beta);
    run(n, 1.0 - p.beta);
    return g;
}

EmbeddingVector apply_adapter(const AdapterParams& p, const EmbeddingVector& q) {
    if (q.dim() != p.dim) {
        fail(ErrorCode::dimension_mismatch,
             "query dimension " + std::to_string(q.dim()) + " does not match adapter " + std::to_string(p.dim));
    }
    if (p.is_identity()) return q;
    std::vector<double> u(p.dim, 0.0);
    for (std::size_t r = 0; r < p.dim; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < p.dim; ++c) s += p.W[r * p.dim + c] * q.values[c];
        u[r] = s;
    }
    return normalize(std::span<const double>(u));
}

double lr_at(const TrainConfig& cfg, std::size_t step) {
    const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(cfg.steps)));
    if (step < warmup) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    return cfg.lr;
}

TrainResult train(const std::vector<ContrastiveTuple>& dataset, AdapterParams init, const TrainConfig& cfg) {
    if (dataset.empty()) fail(ErrorCode::invalid_argument, "training dataset is empty");
    if (cfg.batch == 0) fail(ErrorCode::invalid_config, "batch size must be >= 1");
    if (!(cfg.lr > 0.0)) fail(ErrorCode::invalid_config, "learning rate must be > 0");
    if (!(cfg.warmup_ratio >= 0.0 && cfg.warmup_ratio <= 1.0)) fail(ErrorCode::invalid_config, "warmup_ratio must lie in [0, 1]");
    init.validate();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        try {
            validate_tuple(dataset[i], init.dim);
        } catch (const Error& e) {
            fail(e.code(), "tuple " + std::to_string(i) + ": " + e.what());
        }
    }

    TrainResult res;
    res.params = std::move(init);
    auto& p = res.params;
    res.initial_mean_loss = multitask_loss(dataset, p);

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    portable_shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;

    double ref = 0.0;
    std::size_t over = 0;
    double ema = 0.0;
    std::vector<ContrastiveTuple> batch;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        batch.clear();
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            if (cursor == order.size()) {
                portable_shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch.push_back(dataset[order[cursor++]]);
        }
        const double loss = multitask_loss(batch, p);
        const auto g = grad_loss(batch, p);
        const double lr = lr_at(cfg, step);
        for (std::size_t i = 0; i < p.W.size(); ++i) p.W[i] -= lr * g.dW[i];
        if (p.learn_delta) p.delta = std::clamp(p.delta - lr * g.d_delta, 0.0, 1.0);

        if (step == 0) ref = loss;
        over = (ref > 0.0 && loss > cfg.divergence_factor * ref) ? over + 1 : 0;
        if (over >= cfg.divergence_patience) {
            fail(ErrorCode::divergence, "loss above " + std::to_string(cfg.divergence_factor) + "x initial for " +
                                            std::to_string(over) + " steps, stopped at step " + std::to_string(step));
        }
        ema = step == 0 ? loss : 0.9 * ema + 0.1 * loss;
        const double smoothed = step == 0 ? ema : std::min(res.trace.back().smoothed, ema);
        res.trace.push_back({step, loss, lr, smoothed});
    }
    res.final_mean_loss = multitask_loss(dataset, p);
    return res;
}

std::string trace_csv(const std::vector<TracePoint>& trace) {
    std::ostringstream out;
    out.precision(9);
    out << "step,loss,lr\n";
    for (const auto& t : trace) out << t.step << ',' << t.loss << ',' << t.lr << '\n';
    return out.str();
}

void save_adapter(const AdapterParams& p, const std::filesystem::path& path) {
    p.validate();
    std::string buf(kMagic, sizeof kMagic);
    detail::put_u32(buf, static_cast<std::uint32_t>(p.dim));
    for (double x : p.W) detail::put_f32(buf, static_cast<float>(x));
    detail::put_f32(buf, static_cast<float>(p.delta));
    detail::put_f32(buf, static_cast<float>(p.tau));
    detail::put_f32(buf, static_cast<float>(p.beta));
    detail::write_file(path, buf);
}

AdapterParams load_adapter(const std::filesystem::path& path) {
    detail::Reader r(detail::read_file(path, "adapter checkpoint"), path.string());
    if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
        fail(ErrorCode::schema_mismatch, path.string() + ": bad adapter magic");
    }
    AdapterParams p;
    p.dim = r.u32();
    if (p.dim == 0 || p.dim > 65536) fail(ErrorCode::schema_mismatch, path.string() + ": implausible dimension");
    r.need(static_cast<std::size_t>(p.dim) * p.dim * 4);
    p.W.resize(p.dim * p.dim);
    for (auto& x : p.W) x = r.f32();
    p.delta = r.f32();
    p.tau = r.f32();
    p.beta = r.f32();
    if (!r.done()) fail(ErrorCode::schema_mismatch, path.string() + ": trailing bytes");
    p.validate();
    return p;
}

std::vector<ContrastiveTuple> tuples_for_record(const SilverRecord& record, const ConditionedQuery& cq,
                                                const Collection& units) {
    auto fetch = [&](const std::string& id) {
        auto v = units.vector(id);
        if (!v) fail(ErrorCode::not_found, "unit " + id + " not in collection " + units.name());
        return to_double(*v);
    };
    std::vector<std::vector<double>> negs;
    for (const auto& id : record.hard_neg_ids) negs.push_back(fetch(id));
    for (const auto& id : record.simple_neg_ids) negs.push_back(fetch(id));
    std::vector<ContrastiveTuple> out;
    for (const auto& id : record.silver_ids) {
        ContrastiveTuple t;
        t.q_tilde = to_double(cq.q_tilde);
        t.positive = fetch(id);
        t.negatives = negs;
        t.task = record.task;
        t.h_q = to_double(cq.h_q);
        t.h_t = to_double(cq.h_t);
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

std::vector<double> gaussian_unit(std::mt19937_64& rng, std::size_t d) {
    std::vector<double> v(d);
    do {
        for (auto& x : v) x = standard_normal(rng);
    } while (norm2(v) < 1e-9);
    const double n = norm2(v);
    for (auto& x : v) x /= n;
    return v;
}

std::vector<double> jitter(std::mt19937_64& rng, const std::vector<double>& c, double noise) {
    std::vector<double> v(c);
    for (auto& x : v) x += noise * standard_normal(rng);
    const double n = norm2(v);
    for (auto& x : v) x /= n;
    return v;
}

}  // namespace

std::vector<ContrastiveTuple> synthetic_separable(const SyntheticConfig& cfg) {
    if (cfg.dim < 2 || cfg.clusters < 2 || cfg.tuples == 0) {
        fail(ErrorCode::invalid_argument, "synthetic set needs dim >= 2, clusters >= 2, tuples >= 1");
    }
    std::mt19937_64 rng(cfg.seed);
    const auto d = cfg.dim;
    // Random orthogonal R via Gram-Schmidt on Gaussian rows.
    std::vector<std::vector<double>> R;
    while (R.size() < d) {
        auto v = gaussian_unit(rng, d);
        for (const auto& b : R) {
            const double s = dotd(v, b);
            for (std::size_t i = 0; i < d; ++i) v[i] -= s * b[i];
        }
        const double n = norm2(v);
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        R.push_back(std::move(v));
    }
    auto rotate = [&](const std::vector<double>& c) {
        std::vector<double> out(d);
        for (std::size_t r = 0; r < d; ++r) out[r] = dotd(R[r], c);
        return out;
    };
    std::vector<std::vector<double>> centres, targets;
    for (std::size_t k = 0; k < cfg.clusters; ++k) {
        centres.push_back(gaussian_unit(rng, d));
        targets.push_back(rotate(centres.back()));
    }
    std::vector<ContrastiveTuple> out;
    for (std::size_t i = 0; i < cfg.tuples; ++i) {
        const auto k = i % cfg.clusters;
        ContrastiveTuple t;
        t.q_tilde = jitter(rng, centres[k], cfg.noise);
        t.positive = jitter(rng, targets[k], cfg.noise);
        for (std::size_t j = 0; j < cfg.clusters; ++j) {
            if (j != k) t.negatives.push_back(jitter(rng, targets[j], cfg.noise));
        }
        t.task = i % 2 == 0 ? EvidenceTask::chunk : EvidenceTask::node;
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace mia
