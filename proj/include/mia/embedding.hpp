#pragma once

#include "mia/llm_gateway.hpp"
#include "mia/mindscape.hpp"

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace mia {

struct EmbeddingVector {
    std::vector<float> values;
    bool normalized = false;

    std::size_t dim() const { return values.size(); }
};

inline constexpr double kUnitNormTolerance = 1e-6;

double l2_norm(std::span<const float> v);
double dot(std::span<const float> a, std::span<const float> b);

// Unit-normalizes in double precision. Throws zero_vector for a zero input and
// non_finite for NaN/inf entries.
EmbeddingVector normalize(std::span<const double> v);
EmbeddingVector normalize(std::span<const float> v);

bool is_unit(const EmbeddingVector& v, double tol = kUnitNormTolerance);

class EmbeddingTransport {
public:
    virtual ~EmbeddingTransport() = default;
    // One raw vector per input text, in input order. Throws TransientFailure
    // for retryable conditions.
    virtual std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) = 0;
};

// Seeded pseudo-random unit vector per text digest.
class MockEmbeddingTransport final : public EmbeddingTransport {
public:
    MockEmbeddingTransport(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {}
    std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) override;

private:
    std::uint64_t seed_;
    std::size_t dim_;
};

// OpenAI-compatible POST {base}/embeddings with {input: [...], model}.
class HttpEmbeddingTransport final : public EmbeddingTransport {
public:
    HttpEmbeddingTransport(std::string endpoint_url, std::string api_key, std::string model);
    std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) override;

private:
    Endpoint endpoint_;
    std::string api_key_;
    std::string model_;
};

struct EmbedderOptions {
    std::size_t batch_size = 32;
    RetryPolicy retry;
    std::function<void(std::chrono::milliseconds)> sleeper;
};

class Embedder {
public:
    explicit Embedder(std::unique_ptr<EmbeddingTransport> transport, EmbedderOptions options = {});

    // One L2-normalized vector per text, in input order. The first successful
    // call fixes the session dimension; later mismatches are errors.
    std::vector<EmbeddingVector> embed_texts(const std::vector<std::string>& texts);
    EmbeddingVector embed_text(const std::string& text);

    std::size_t dim() const;

private:
    std::vector<std::vector<float>> embed_batch(const std::vector<std::string>& batch);

    std::unique_ptr<EmbeddingTransport> transport_;
    EmbedderOptions options_;
    mutable std::mutex mu_;
    std::size_t dim_ = 0;
};

std::unique_ptr<Embedder> make_mock_embedder(std::uint64_t seed, std::size_t dim = 64);

enum class RetrievalMode { chunk, node };

std::string_view to_string(RetrievalMode mode);
RetrievalMode parse_retrieval_mode(std::string_view s);

struct ControlTokens {
    std::string inst =
        "Instruct:\nGiven a search query with the book's summary, retrieve relevant chunks or "
        "helpful entity summaries from the given context that answer the query.\nQuery:\n";
    std::string d_q = "<|endoftext|>";
    std::string d_n = "<|node_mode|>";
    std::string d_c = "<|chunk_mode|>";
    // Text between d_q and the summary. Not a control token; may be empty.
    std::string summary_intro =
        "\nHere is the summary providing possibly useful global information. Please encode the "
        "query based on the summary:\nSummary:\n";

    // inst, d_q, d_n, d_c must be nonempty and pairwise distinct.
    void validate() const;
};

// inst + query + d_q + summary_intro + summary + (d_c | d_n).
std::string compose_query_input(const std::string& query, const std::string& summary,
                                RetrievalMode mode, const ControlTokens& ct);

// inst + query + d_q: the prefix whose embedding stands in for h_q.
std::string compose_query_prefix(const std::string& query, const ControlTokens& ct);

// normalize(delta * h_q + (1 - delta) * h_t). delta = 1 and delta = 0 return
// the respective input unchanged when it is already unit length.
EmbeddingVector residual_combine(const EmbeddingVector& h_q, const EmbeddingVector& h_t,
                                 double delta);

inline constexpr double kDefaultResidualWeight = 0.5;

struct ConditionedQuery {
    std::string query;
    std::string summary_ref;  // doc id of the mindscape used
    RetrievalMode mode = RetrievalMode::chunk;
    std::string composed_input;
    EmbeddingVector h_q;
    EmbeddingVector h_t;
    EmbeddingVector q_tilde;
    double delta = kDefaultResidualWeight;
    // Embedding services do not expose delimiter hidden states, so h_q and h_t
    // are whole-sequence embeddings of the prefix and of the composed input.
    std::string approximation = "h_q=embed(inst+query+d_q); h_t=embed(composed_input)";
};

ConditionedQuery condition_query(Embedder& embedder, const std::string& query,
                                 const Mindscape& mindscape, RetrievalMode mode,
                                 double delta = kDefaultResidualWeight,
                                 const ControlTokens& ct = ControlTokens{});

}  // namespace mia
