#include "mia/analysis.hpp"

#include "binio.hpp"

#include "mia/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace mia {

namespace {

constexpr char kMagic[7] = {'M', 'I', 'A', 'D', 'M', 'P', '1'};

void check_spans(const std::vector<Span>& spans, std::size_t limit, const std::string& what) {
    std::set<std::string> names;
    std::vector<Span> sorted = spans;
    for (const auto& s : spans) {
        if (!names.insert(s.name).second) fail(ErrorCode::schema_mismatch, what + ": duplicate span " + s.name);
        if (s.start >= s.end || s.end > limit) {
            fail(ErrorCode::schema_mismatch, what + ": span " + s.name + " [" + std::to_string(s.start) + ", " +
                                                 std::to_string(s.end) + ") outside sequence of " + std::to_string(limit));
        }
    }
    std::sort(sorted.begin(), sorted.end(), [](const Span& a, const Span& b) { return a.start < b.start; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].start < sorted[i - 1].end) {
            fail(ErrorCode::schema_mismatch, what + ": spans " + sorted[i - 1].name + " and " + sorted[i].name + " overlap");
        }
    }
}

// Mean of A[rows, cols] at one layer.
double block_mean(const AttentionDump& d, std::size_t layer, const Span& rows, const Span& cols) {
    double s = 0.0;
    for (std::size_t r = rows.start; r < rows.end; ++r) {
        for (std::size_t c = cols.start; c < cols.end; ++c) s += d.at(layer, r, c);
    }
    return s / static_cast<double>((rows.end - rows.start) * (cols.end - cols.start));
}

std::vector<double> zscores(const std::vector<double>& x) {
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    const double sigma = std::sqrt(var / static_cast<double>(x.size()));
    std::vector<double> z(x.size(), 0.0);
    if (sigma < kZeroSigma) return z;
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - mu) / sigma;
    return z;
}

std::string serialize_header(const char kind[4], std::size_t layers, std::size_t n, const std::vector<Span>& spans) {
    std::string buf(kMagic, sizeof kMagic);
    buf.append(kind, 4);
    detail::put_u32(buf, static_cast<std::uint32_t>(layers));
    detail::put_u32(buf, static_cast<std::uint32_t>(n));
    detail::put_u32(buf, static_cast<std::uint32_t>(spans.size()));
    for (const auto& s : spans) {
        detail::put_str(buf, s.name);
        detail::put_u32(buf, static_cast<std::uint32_t>(s.start));
        detail::put_u32(buf, static_cast<std::uint32_t>(s.end));
    }
    return buf;
}

}  // namespace

const Span& AttentionDump::span(std::string_view name) const {
    for (const auto& s : spans) {
        if (s.name == name) return s;
    }
    fail(ErrorCode::missing_span, "dump has no span named " + std::string(name));
}

void validate(const AttentionDump& d, double row_tol) {
    if (d.layers == 0 || d.seq_len == 0) fail(ErrorCode::schema_mismatch, "attention dump is empty");
    if (d.A.size() != d.layers) fail(ErrorCode::schema_mismatch, "attention dump layer count mismatch");
    for (std::size_t l = 0; l < d.layers; ++l) {
        if (d.A[l].size() != d.seq_len * d.seq_len) {
            fail(ErrorCode::schema_mismatch, "layer " + std::to_string(l) + " matrix is not seq_len x seq_len");
        }
        for (std::size_t r = 0; r < d.seq_len; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < d.seq_len; ++c) {
                const double v = d.at(l, r, c);
                if (!std::isfinite(v)) fail(ErrorCode::non_finite, "non-finite attention at layer " + std::to_string(l));
                s += v;
            }
            if (std::abs(s - 1.0) > row_tol) {
                fail(ErrorCode::schema_mismatch, "layer " + std::to_string(l) + " row " + std::to_string(r) +
                                                     " sums to " + std::to_string(s));
            }
        }
    }
    check_spans(d.spans, d.seq_len, "attention dump");
}

void validate(const HiddenDump& d) {
    if (d.layers == 0 || d.dim == 0) fail(ErrorCode::schema_mismatch, "hidden dump is empty");
    if (d.h.size() != d.layers) fail(ErrorCode::schema_mismatch, "hidden dump layer count mismatch");
    for (const auto& v : d.h) {
        if (v.size() != d.dim) fail(ErrorCode::schema_mismatch, "hidden state dimension mismatch");
        for (double x : v) {
            if (!std::isfinite(x)) fail(ErrorCode::non_finite, "non-finite hidden state");
        }
    }
    check_spans(d.spans, SIZE_MAX, "hidden dump");
}

std::vector<double> mcea_layer(const AttentionDump& dump, const std::vector<std::string>& relevant,
                               const std::vector<std::string>& noise) {
    if (relevant.empty() || noise.empty()) fail(ErrorCode::invalid_argument, "MCEA needs nonempty relevant and noise sets");
    std::set<std::string> rs(relevant.begin(), relevant.end());
    for (const auto& n : noise) {
        if (rs.count(n)) fail(ErrorCode::invalid_argument, "chunk " + n + " is both relevant and noise");
    }
    const auto& summary = dump.span("summary");
    const auto& query = dump.span("query");
    std::vector<const Span*> chunks;
    std::vector<std::string> ids;
    for (const auto& s : dump.spans) {
        if (s.name.rfind(kChunkSpanPrefix, 0) == 0) {
            chunks.push_back(&s);
            ids.push_back(s.name.substr(kChunkSpanPrefix.size()));
        }
    }
    auto index_of = [&](const std::string& id) {
        auto it = std::find(ids.begin(), ids.end(), id);
        if (it == ids.end()) fail(ErrorCode::missing_span, "dump has no span named chunk:" + id);
        return static_cast<std::size_t>(it - ids.begin());
    };
    std::vector<std::size_t> ri, ni;
    for (const auto& id : relevant) ri.push_back(index_of(id));
    for (const auto& id : noise) ni.push_back(index_of(id));
    if (chunks.size() < 2) fail(ErrorCode::invalid_argument, "z-scores need at least two chunk spans");

    std::vector<double> out(dump.layers);
    for (std::size_t l = 0; l < dump.layers; ++l) {
        std::vector<double> M(chunks.size()), S(chunks.size());
        for (std::size_t c = 0; c < chunks.size(); ++c) {
            M[c] = block_mean(dump, l, *chunks[c], summary);
            S[c] = block_mean(dump, l, query, *chunks[c]);
        }
        const auto zm = zscores(M);
        const auto zs = zscores(S);
        auto mean_c = [&](const std::vector<std::size_t>& idx) {
            double s = 0.0;
            for (auto i : idx) s += zm[i] * zs[i];
            return s / static_cast<double>(idx.size());
        };
        out[l] = mean_c(ri) - mean_c(ni);
    }
    return out;
}

double projection_angle(const std::vector<double>& q, const std::vector<std::vector<double>>& chunks) {
    if (chunks.empty()) fail(ErrorCode::invalid_argument, "projection_angle needs at least one chunk vector");
    const auto d = q.size();
    Eigen::Map<const Eigen::VectorXd> qv(q.data(), static_cast<Eigen::Index>(d));
    const double qn = qv.norm();
    if (!(qn > 0.0)) fail(ErrorCode::zero_vector, "projection_angle query is zero");
    Eigen::MatrixXd C(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(chunks.size()));
    for (std::size_t j = 0; j < chunks.size(); ++j) {
        if (chunks[j].size() != d) fail(ErrorCode::dimension_mismatch, "chunk vector dimension differs from query");
        for (std::size_t i = 0; i < d; ++i) C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = chunks[j][i];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    const double smax = sv.size() ? sv(0) : 0.0;
    if (!(smax > 0.0)) return 90.0;  // all chunk vectors are zero: the span is {0}
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > 1e-10 * smax) ++rank;
    const Eigen::MatrixXd B = svd.matrixU().leftCols(rank);
    const Eigen::VectorXd proj = B * (B.transpose() * qv);
    const double resid = (qv - proj).norm();
    return std::atan2(resid, proj.norm()) * 180.0 / std::numbers::pi;
}

std::vector<double> layer_silver_ratio(const std::vector<HiddenDump>& dumps, const Collection& index,
                                       const std::vector<std::vector<std::string>>& silver_ids, std::size_t k) {
    if (dumps.empty()) fail(ErrorCode::invalid_argument, "layer_silver_ratio needs at least one query dump");
    if (dumps.size() != silver_ids.size()) fail(ErrorCode::invalid_argument, "one silver list per query dump required");
    const auto layers = dumps.front().layers;
    std::vector<double> sum(layers, 0.0);
    for (std::size_t qi = 0; qi < dumps.size(); ++qi) {
        const auto& d = dumps[qi];
        validate(d);
        if (d.layers != layers) fail(ErrorCode::schema_mismatch, "query dumps disagree on layer count");
        if (d.dim != index.dim()) {
            fail(ErrorCode::dimension_mismatch, "hidden dimension " + std::to_string(d.dim) + " does not match index " +
                                                    std::to_string(index.dim()));
        }
        std::set<std::string> silver(silver_ids[qi].begin(), silver_ids[qi].end());
        for (std::size_t l = 0; l < layers; ++l) {
            const auto q = normalize(std::span<const double>(d.h[l]));
            const auto hits = index.top_k(q, k);
            std::size_t in = 0;
            for (const auto& h : hits) in += silver.count(h.id);
            sum[l] += hits.empty() ? 0.0 : static_cast<double>(in) / static_cast<double>(hits.size());
        }
    }
    for (auto& s : sum) s /= static_cast<double>(dumps.size());
    return sum;
}

std::vector<double> summary_replaced_control(const AttentionDump& original, const AttentionDump& replaced,
                                             const std::vector<std::string>& relevant,
                                             const std::vector<std::string>& noise) {
    if (original.layers != replaced.layers || original.seq_len != replaced.seq_len) {
        fail(ErrorCode::layout_mismatch, "dumps differ in layer count or sequence length");
    }
    const auto n = std::max(original.spans.size(), replaced.spans.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (i >= original.spans.size() || i >= replaced.spans.size() || !(original.spans[i] == replaced.spans[i])) {
            const auto& name = i < original.spans.size() ? original.spans[i].name : replaced.spans[i].name;
            fail(ErrorCode::layout_mismatch, "span layout differs at span " + name);
        }
    }
    auto a = mcea_layer(original, relevant, noise);
    const auto b = mcea_layer(replaced, relevant, noise);
    for (std::size_t l = 0; l < a.size(); ++l) a[l] -= b[l];
    return a;
}

void save_dump(const AttentionDump& d, const std::filesystem::path& path) {
    validate(d);
    auto buf = serialize_header("ATTN", d.layers, d.seq_len, d.spans);
    for (const auto& layer : d.A) {
        for (double x : layer) detail::put_f32(buf, static_cast<float>(x));
    }
    detail::write_file(path, buf);
}

void save_dump(const HiddenDump& d, const std::filesystem::path& path) {
    validate(d);
    auto buf = serialize_header("HIDN", d.layers, d.dim, d.spans);
    for (const auto& v : d.h) {
        for (double x : v) detail::put_f32(buf, static_cast<float>(x));
    }
    detail::write_file(path, buf);
}

std::variant<AttentionDump, HiddenDump> load_dump(const std::filesystem::path& path) {
    detail::Reader r(detail::read_file(path, "dump"), path.string());
    if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
        fail(ErrorCode::schema_mismatch, path.string() + ": bad dump magic");
    }
    const auto kind = r.bytes(4);
    const std::size_t layers = r.u32();
    const std::size_t n = r.u32();
    const std::size_t nspans = r.u32();
    if (layers > 4096 || n > 65536) fail(ErrorCode::schema_mismatch, path.string() + ": implausible dump shape");
    std::vector<Span> spans;
    for (std::size_t i = 0; i < nspans; ++i) {
        Span s;
        s.name = r.str();
        s.start = r.u32();
        s.end = r.u32();
        spans.push_back(std::move(s));
    }
    auto read_tensor = [&](std::size_t count) {
        r.need(count * 4);
        std::vector<double> v(count);
        for (auto& x : v) x = r.f32();
        return v;
    };
    if (kind == "ATTN") {
        AttentionDump d;
        d.layers = layers;
        d.seq_len = n;
        d.spans = std::move(spans);
        for (std::size_t l = 0; l < layers; ++l) d.A.push_back(read_tensor(n * n));
        if (!r.done()) fail(ErrorCode::schema_mismatch, path.string() + ": trailing bytes");
        validate(d);
        return d;
    }
    if (kind == "HIDN") {
        HiddenDump d;
        d.layers = layers;
        d.dim = n;
        d.spans = std::move(spans);
        for (std::size_t l = 0; l < layers; ++l) d.h.push_back(read_tensor(n));
        if (!r.done()) fail(ErrorCode::schema_mismatch, path.string() + ": trailing bytes");
        validate(d);
        return d;
    }
    fail(ErrorCode::schema_mismatch, path.string() + ": unknown dump kind " + kind);
}

}  // namespace mia
