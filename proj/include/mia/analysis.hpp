#pragma once

#include "mia/vector_index.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace mia {

// Half-open token range [start, end) inside a dumped sequence. Span names are
// "summary", "query" and "chunk:<id>".
struct Span {
    std::string name;
    std::size_t start = 0;
    std::size_t end = 0;

    bool operator==(const Span&) const = default;
};

inline constexpr std::string_view kChunkSpanPrefix = "chunk:";

// Head-averaged attention per layer; A[l][row*seq_len + col], row = destination
// token, col = source token.
struct AttentionDump {
    std::size_t layers = 0;
    std::size_t seq_len = 0;
    std::vector<Span> spans;
    std::vector<std::vector<double>> A;

    const Span& span(std::string_view name) const;  // throws missing_span
    double at(std::size_t layer, std::size_t row, std::size_t col) const {
        return A[layer][row * seq_len + col];
    }
};

// Pooling-token hidden state per layer.
struct HiddenDump {
    std::size_t layers = 0;
    std::size_t dim = 0;
    std::vector<Span> spans;
    std::vector<std::vector<double>> h;
};

// Shapes, span bounds and disjointness, and row sums within row_tol.
void validate(const AttentionDump& d, double row_tol = 1e-4);
void validate(const HiddenDump& d);

inline constexpr double kZeroSigma = 1e-12;

// Per-layer MCEA. Chunk statistics are z-scored across every chunk span in the
// dump; relevant and noise ids are chunk ids without the "chunk:" prefix.
std::vector<double> mcea_layer(const AttentionDump& dump, const std::vector<std::string>& relevant,
                               const std::vector<std::string>& noise);

// Angle in degrees between q and its projection onto span(chunks).
double projection_angle(const std::vector<double>& q, const std::vector<std::vector<double>>& chunks);

// Mean over queries of |silver & top_k(h_l)| / |top_k(h_l)| for each layer.
std::vector<double> layer_silver_ratio(const std::vector<HiddenDump>& dumps, const Collection& index,
                                       const std::vector<std::vector<std::string>>& silver_ids, std::size_t k = 10);

// MCEA(original) - MCEA(replaced) per layer. The two dumps must share layers,
// length and span table.
std::vector<double> summary_replaced_control(const AttentionDump& original, const AttentionDump& replaced,
                                             const std::vector<std::string>& relevant,
                                             const std::vector<std::string>& noise);

void save_dump(const AttentionDump& d, const std::filesystem::path& path);
void save_dump(const HiddenDump& d, const std::filesystem::path& path);
std::variant<AttentionDump, HiddenDump> load_dump(const std::filesystem::path& path);

}  // namespace mia
