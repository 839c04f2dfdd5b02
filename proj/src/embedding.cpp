#include "mia/embedding.hpp"

#include "mia/digest.hpp"
#include "mia/error.hpp"
#include "http_post.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <thread>

namespace mia {

double l2_norm(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        fail(ErrorCode::dimension_mismatch, "dot of vectors with dimensions " +
                                                std::to_string(a.size()) + " and " +
                                                std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

EmbeddingVector normalize(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) fail(ErrorCode::non_finite, "vector has a non-finite entry");
        s += x * x;
    }
    const double n = std::sqrt(s);
    if (!(n > 0.0)) fail(ErrorCode::zero_vector, "cannot normalize a zero vector");
    EmbeddingVector out;
    out.values.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.values[i] = static_cast<float>(v[i] / n);
    out.normalized = true;
    return out;
}

EmbeddingVector normalize(std::span<const float> v) {
    std::vector<double> d(v.begin(), v.end());
    return normalize(std::span<const double>(d));
}

bool is_unit(const EmbeddingVector& v, double tol) {
    return std::abs(l2_norm(v.values) - 1.0) <= tol;
}

std::vector<std::vector<float>> MockEmbeddingTransport::embed(const std::vector<std::string>& texts) {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        std::mt19937_64 rng(derive_seed(seed_, sha256_hex(t)));
        std::vector<double> v(dim_);
        for (auto& x : v) x = standard_normal(rng);
        out.push_back(normalize(std::span<const double>(v)).values);
    }
    return out;
}

HttpEmbeddingTransport::HttpEmbeddingTransport(std::string endpoint_url, std::string api_key,
                                               std::string model)
    : endpoint_(parse_endpoint(endpoint_url)), api_key_(std::move(api_key)), model_(std::move(model)) {}

std::vector<std::vector<float>> HttpEmbeddingTransport::embed(const std::vector<std::string>& texts) {
    nlohmann::json body{{"input", texts}, {"model", model_}};
    auto res = detail::post_json(endpoint_, "/embeddings", api_key_, body.dump(),
                                 std::chrono::seconds(120));
    if (!res.connected) throw TransientFailure{false, "transport failure: " + res.error};
    if (res.status == 429) throw TransientFailure{true, "rate limited (HTTP 429)"};
    if (res.status >= 500) throw TransientFailure{false, "server error HTTP " + std::to_string(res.status)};
    if (res.status != 200) {
        fail(ErrorCode::transport_error,
             "embedding endpoint returned HTTP " + std::to_string(res.status) + ": " + res.body);
    }
    std::vector<std::vector<float>> out(texts.size());
    try {
        auto j = nlohmann::json::parse(res.body);
        const auto& data = j.at("data");
        if (data.size() != texts.size()) {
            fail(ErrorCode::transport_error, "embedding response has " + std::to_string(data.size()) +
                                                 " vectors for " + std::to_string(texts.size()) +
                                                 " inputs");
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            auto idx = data[i].value("index", i);
            if (idx >= out.size()) fail(ErrorCode::transport_error, "embedding index out of range");
            out[idx] = data[i].at("embedding").get<std::vector<float>>();
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::transport_error, std::string("malformed embedding response: ") + e.what());
    }
    return out;
}

Embedder::Embedder(std::unique_ptr<EmbeddingTransport> transport, EmbedderOptions options)
    : transport_(std::move(transport)), options_(std::move(options)) {
    if (!transport_) fail(ErrorCode::invalid_config, "embedder needs a transport");
    if (options_.batch_size == 0) options_.batch_size = 1;
    if (!options_.sleeper) {
        options_.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
}

std::size_t Embedder::dim() const {
    std::lock_guard lock(mu_);
    return dim_;
}

std::vector<std::vector<float>> Embedder::embed_batch(const std::vector<std::string>& batch) {
    const auto delays = backoff_schedule(options_.retry);
    TransientFailure last;
    for (std::size_t attempt = 0;; ++attempt) {
        try {
            return transport_->embed(batch);
        } catch (const TransientFailure& tf) {
            last = tf;
        }
        if (attempt >= delays.size()) break;
        options_.sleeper(delays[attempt]);
    }
    fail(last.rate_limited ? ErrorCode::rate_limited : ErrorCode::transport_error,
         last.message + " after " + std::to_string(delays.size() + 1) + " attempts");
}

std::vector<EmbeddingVector> Embedder::embed_texts(const std::vector<std::string>& texts) {
    if (texts.empty()) fail(ErrorCode::invalid_argument, "embed_texts needs at least one text");
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (std::size_t start = 0; start < texts.size(); start += options_.batch_size) {
        const auto end = std::min(texts.size(), start + options_.batch_size);
        std::vector<std::string> batch(texts.begin() + static_cast<long>(start),
                                       texts.begin() + static_cast<long>(end));
        auto raw = embed_batch(batch);
        if (raw.size() != batch.size()) {
            fail(ErrorCode::transport_error, "embedding service returned a short batch");
        }
        for (auto& v : raw) {
            {
                std::lock_guard lock(mu_);
                if (dim_ == 0) dim_ = v.size();
                if (v.size() != dim_ || v.empty()) {
                    fail(ErrorCode::dimension_mismatch,
                         "embedding dimension changed from " + std::to_string(dim_) + " to " +
                             std::to_string(v.size()));
                }
            }
            out.push_back(normalize(std::span<const float>(v)));
        }
    }
    return out;
}

EmbeddingVector Embedder::embed_text(const std::string& text) {
    return std::move(embed_texts({text}).front());
}

std::unique_ptr<Embedder> make_mock_embedder(std::uint64_t seed, std::size_t dim) {
    return std::make_unique<Embedder>(std::make_unique<MockEmbeddingTransport>(seed, dim));
}

std::string_view to_string(RetrievalMode mode) {
    return mode == RetrievalMode::chunk ? "chunk" : "node";
}

RetrievalMode parse_retrieval_mode(std::string_view s) {
    if (s == "chunk") return RetrievalMode::chunk;
    if (s == "node") return RetrievalMode::node;
    fail(ErrorCode::invalid_argument, "unknown retrieval mode '" + std::string(s) + "'");
}

void ControlTokens::validate() const {
    const std::string* toks[] = {&inst, &d_q, &d_n, &d_c};
    for (const auto* t : toks) {
        if (t->empty()) fail(ErrorCode::invalid_config, "control tokens must be nonempty");
    }
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = i + 1; j < 4; ++j) {
            if (*toks[i] == *toks[j]) {
                fail(ErrorCode::invalid_config, "control tokens must be pairwise distinct");
            }
        }
    }
}

std::string compose_query_prefix(const std::string& query, const ControlTokens& ct) {
    return ct.inst + query + ct.d_q;
}

std::string compose_query_input(const std::string& query, const std::string& summary,
                                RetrievalMode mode, const ControlTokens& ct) {
    if (query.empty()) fail(ErrorCode::invalid_argument, "query must be nonempty");
    return compose_query_prefix(query, ct) + ct.summary_intro + summary +
           (mode == RetrievalMode::chunk ? ct.d_c : ct.d_n);
}

EmbeddingVector residual_combine(const EmbeddingVector& h_q, const EmbeddingVector& h_t,
                                 double delta) {
    if (h_q.dim() != h_t.dim()) {
        fail(ErrorCode::dimension_mismatch, "residual_combine: dimensions " +
                                                std::to_string(h_q.dim()) + " and " +
                                                std::to_string(h_t.dim()));
    }
    if (!(delta >= 0.0 && delta <= 1.0)) {
        fail(ErrorCode::invalid_argument, "residual weight must lie in [0, 1]");
    }
    // Endpoints reproduce the input bit for bit so that delta = 1 retrieval is
    // exactly the summary-free retrieval.
    if (delta == 1.0 && h_q.normalized) return h_q;
    if (delta == 0.0 && h_t.normalized) return h_t;
    std::vector<double> mix(h_q.dim());
    for (std::size_t i = 0; i < mix.size(); ++i) {
        mix[i] = delta * static_cast<double>(h_q.values[i]) +
                 (1.0 - delta) * static_cast<double>(h_t.values[i]);
    }
    return normalize(std::span<const double>(mix));
}

ConditionedQuery condition_query(Embedder& embedder, const std::string& query,
                                 const Mindscape& mindscape, RetrievalMode mode, double delta,
                                 const ControlTokens& ct) {
    ct.validate();
    ConditionedQuery cq;
    cq.query = query;
    cq.summary_ref = mindscape.doc_id;
    cq.mode = mode;
    cq.delta = delta;
    cq.composed_input = compose_query_input(query, mindscape.global_summary, mode, ct);
    auto vecs = embedder.embed_texts({compose_query_prefix(query, ct), cq.composed_input});
    cq.h_q = std::move(vecs[0]);
    cq.h_t = std::move(vecs[1]);
    cq.q_tilde = residual_combine(cq.h_q, cq.h_t, delta);
    return cq;
}

}  // namespace mia
