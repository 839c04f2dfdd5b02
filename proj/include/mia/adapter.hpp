#pragma once

#include "mia/embedding.hpp"
#include "mia/silver.hpp"
#include "mia/vector_index.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mia {

// Linear adapter over frozen conditioned-query embeddings. All arithmetic is
// double; checkpoints store float32.
struct AdapterParams {
    std::size_t dim = 0;
    std::vector<double> W;  // dim x dim, row-major
    double delta = 0.5;
    bool learn_delta = false;
    double tau = 0.01;
    double beta = 0.5;

    static AdapterParams identity(std::size_t dim);
    bool is_identity() const;
    void validate() const;
};

struct ContrastiveTuple {
    std::vector<double> q_tilde;
    std::vector<double> positive;
    std::vector<std::vector<double>> negatives;
    EvidenceTask task = EvidenceTask::chunk;
    // Required when delta is learnable: q_tilde is then recomputed as
    // normalize(delta*h_q + (1-delta)*h_t).
    std::optional<std::vector<double>> h_q;
    std::optional<std::vector<double>> h_t;
};

std::vector<double> to_double(const EmbeddingVector& v);

// Same dimension everywhere, finite, unit norm within kUnitNormTolerance.
void validate_tuple(const ContrastiveTuple& t, std::size_t dim);

double infonce_loss(const ContrastiveTuple& t, const AdapterParams& p);

// beta*mean(chunk losses) + (1-beta)*mean(node losses); an empty side adds 0.
double multitask_loss(std::span<const ContrastiveTuple> chunk_batch,
                      std::span<const ContrastiveTuple> node_batch, const AdapterParams& p);

// Splits a mixed batch by tuple.task and calls the two-batch form.
double multitask_loss(std::span<const ContrastiveTuple> batch, const AdapterParams& p);

struct AdapterGradient {
    std::vector<double> dW;  // row-major, same shape as W
    double d_delta = 0.0;    // zero unless delta is learnable
};

// Exact gradient of the mixed-batch multitask_loss.
AdapterGradient grad_loss(std::span<const ContrastiveTuple> batch, const AdapterParams& p);

// normalize(W q). With W = I the input is returned unchanged.
EmbeddingVector apply_adapter(const AdapterParams& p, const EmbeddingVector& q);

struct TrainConfig {
    double lr = 1e-4;
    std::size_t steps = 2000;
    std::size_t batch = 4;
    std::uint64_t seed = 0;
    double warmup_ratio = 0.1;
    double divergence_factor = 10.0;
    std::size_t divergence_patience = 50;
};

// Linear warmup over ceil(warmup_ratio*steps) steps, then constant.
double lr_at(const TrainConfig& cfg, std::size_t step);

struct TracePoint {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double smoothed = 0.0;  // running minimum of an EMA (alpha 0.1) of loss
};

struct TrainResult {
    AdapterParams params;
    std::vector<TracePoint> trace;
    double initial_mean_loss = 0.0;  // full dataset, before step 0
    double final_mean_loss = 0.0;    // full dataset, after the last step
};

TrainResult train(const std::vector<ContrastiveTuple>& dataset, AdapterParams init, const TrainConfig& cfg);

std::string trace_csv(const std::vector<TracePoint>& trace);

void save_adapter(const AdapterParams& p, const std::filesystem::path& path);
AdapterParams load_adapter(const std::filesystem::path& path);

// One tuple per silver id: positive = that unit's vector, negatives = the
// record's hard and simple negatives. Ids absent from the collection are
// a not_found error.
std::vector<ContrastiveTuple> tuples_for_record(const SilverRecord& record, const ConditionedQuery& cq,
                                                const Collection& units);

struct SyntheticConfig {
    std::size_t dim = 8;
    std::size_t clusters = 4;
    std::size_t tuples = 64;
    double noise = 0.05;
    std::uint64_t seed = 0;
};

// Queries sit near cluster centres c_k, positives near R c_k for a fixed random
// rotation R, negatives near R c_j (j != k). A linear map fits it exactly.
std::vector<ContrastiveTuple> synthetic_separable(const SyntheticConfig& cfg);

}  // namespace mia
