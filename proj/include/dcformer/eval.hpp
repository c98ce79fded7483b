#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dcformer/common.hpp"
#include "dcformer/rng.hpp"
#include "dcformer/tensor.hpp"

namespace dcformer {

struct RetrievalMeta {
    std::vector<int> ids;
    std::vector<int> cams;
};

struct MapCmcResult {
    double map = 0.0;
    std::vector<double> cmc;  // rank-1..k_max accuracy
    std::size_t evaluated = 0;
    std::size_t skipped = 0;  // queries with no valid cross-camera match
};

namespace evaldetail {

inline std::vector<double> maybe_normalize_rows(const Tensor& emb, bool normalize) {
    std::vector<double> out = emb.values();
    if (!normalize) return out;
    const std::size_t d = emb.shape().back();
    const std::size_t rows = emb.size() / d;
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += out[r * d + j] * out[r * d + j];
        const double inv = 1.0 / std::max(std::sqrt(s), kNormEps);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] *= inv;
    }
    return out;
}

inline double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double c = a[j] - b[j];
        s += c * c;
    }
    return s;
}

}  // namespace evaldetail

// Single-gallery-shot re-ID ranking: per query, gallery entries with the same
// identity AND the same camera are excluded; AP averages precision at the hit
// ranks over all valid matches; CMC[k] is the fraction of evaluated queries
// with a hit in the top k. Queries without any valid match are excluded and
// counted. Ties rank in gallery order (stable), so the result is invariant
// to any strictly monotone transform of the distances.
inline MapCmcResult map_cmc(const Tensor& query_emb, const RetrievalMeta& query_meta,
                            const Tensor& gallery_emb, const RetrievalMeta& gallery_meta,
                            bool normalize = true, std::size_t k_max = 20) {
    require_shape(query_emb.rank() == 2 && gallery_emb.rank() == 2 &&
                      query_emb.dim(1) == gallery_emb.dim(1),
                  "map_cmc: query/gallery embedding dimensions differ");
    const std::size_t nq = query_emb.dim(0), ng = gallery_emb.dim(0);
    require(query_meta.ids.size() == nq && query_meta.cams.size() == nq,
            "map_cmc: query metadata is not row-aligned");
    require(gallery_meta.ids.size() == ng && gallery_meta.cams.size() == ng,
            "map_cmc: gallery metadata is not row-aligned");
    const std::size_t d = query_emb.dim(1);
    const std::vector<double> q = evaldetail::maybe_normalize_rows(query_emb, normalize);
    const std::vector<double> g = evaldetail::maybe_normalize_rows(gallery_emb, normalize);

    MapCmcResult res;
    res.cmc.assign(k_max, 0.0);
    double ap_sum = 0.0;
    std::vector<std::size_t> keep, order;
    std::vector<double> dist;
    for (std::size_t qi = 0; qi < nq; ++qi) {
        keep.clear();
        std::size_t total_matches = 0;
        for (std::size_t gi = 0; gi < ng; ++gi) {
            if (gallery_meta.ids[gi] == query_meta.ids[qi] &&
                gallery_meta.cams[gi] == query_meta.cams[qi])
                continue;
            keep.push_back(gi);
            if (gallery_meta.ids[gi] == query_meta.ids[qi]) ++total_matches;
        }
        if (total_matches == 0) {
            ++res.skipped;
            continue;
        }
        dist.resize(keep.size());
        for (std::size_t i = 0; i < keep.size(); ++i)
            dist[i] = evaldetail::sq_dist(q.data() + qi * d, g.data() + keep[i] * d, d);
        order.resize(keep.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
        double ap = 0.0;
        std::size_t hits = 0, first_hit = keep.size();
        for (std::size_t r = 0; r < order.size(); ++r)
            if (gallery_meta.ids[keep[order[r]]] == query_meta.ids[qi]) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(r + 1);
                if (first_hit == keep.size()) first_hit = r;
            }
        ap_sum += ap / static_cast<double>(total_matches);
        ++res.evaluated;
        for (std::size_t k = 0; k < k_max; ++k)
            if (first_hit <= k) res.cmc[k] += 1.0;
    }
    if (res.evaluated > 0) {
        res.map = ap_sum / static_cast<double>(res.evaluated);
        for (double& v : res.cmc) v /= static_cast<double>(res.evaluated);
    }
    return res;
}

// Mean |cos| between token embeddings over a set of images: symmetric, unit
// diagonal, invariant to per-image token scaling.
inline Tensor token_cosine_matrix(const Tensor& tokens) {
    require_shape(tokens.rank() == 3, "token_cosine_matrix: expected [M, N, D]");
    const std::size_t m = tokens.dim(0), n = tokens.dim(1), d = tokens.dim(2);
    require(m >= 1, "token_cosine_matrix: at least one image required");
    std::vector<double> out(n * n, 0.0);
    const auto& tv = tokens.values();
    for (std::size_t i = 0; i < n; ++i) {
        out[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t s = 0; s < m; ++s) {
                const double* fi = tv.data() + (s * n + i) * d;
                const double* fj = tv.data() + (s * n + j) * d;
                double dot = 0.0, ni = 0.0, nj = 0.0;
                for (std::size_t p = 0; p < d; ++p) {
                    dot += fi[p] * fj[p];
                    ni += fi[p] * fi[p];
                    nj += fj[p] * fj[p];
                }
                acc += std::fabs(dot / (std::max(std::sqrt(ni), kNormEps) *
                                        std::max(std::sqrt(nj), kNormEps)));
            }
            out[i * n + j] = out[j * n + i] = acc / static_cast<double>(m);
        }
    }
    return Tensor({n, n}, std::move(out));
}

// Positive / negative query-gallery distance samples plus shared histogram
// bins. Negatives beyond `cap_negatives` are subsampled with the given seed
// (only part of the negative pairs is kept, the count before capping is
// recorded).
struct DistanceSummary {
    std::vector<double> positive;
    std::vector<double> negative;
    std::size_t negative_total = 0;
    std::vector<double> bin_edges;
    std::vector<std::size_t> positive_counts;
    std::vector<std::size_t> negative_counts;
};

inline DistanceSummary distance_distributions(const Tensor& query_emb,
                                              const RetrievalMeta& query_meta,
                                              const Tensor& gallery_emb,
                                              const RetrievalMeta& gallery_meta,
                                              bool normalize = true,
                                              std::size_t cap_negatives = 20000,
                                              std::uint64_t seed = 0, std::size_t bins = 40) {
    require_shape(query_emb.rank() == 2 && gallery_emb.rank() == 2 &&
                      query_emb.dim(1) == gallery_emb.dim(1),
                  "distance_distributions: embedding dimensions differ");
    const std::size_t nq = query_emb.dim(0), ng = gallery_emb.dim(0);
    const std::size_t d = query_emb.dim(1);
    const std::vector<double> q = evaldetail::maybe_normalize_rows(query_emb, normalize);
    const std::vector<double> g = evaldetail::maybe_normalize_rows(gallery_emb, normalize);

    DistanceSummary out;
    for (std::size_t qi = 0; qi < nq; ++qi)
        for (std::size_t gi = 0; gi < ng; ++gi) {
            const double dist =
                std::sqrt(evaldetail::sq_dist(q.data() + qi * d, g.data() + gi * d, d));
            if (query_meta.ids[qi] == gallery_meta.ids[gi])
                out.positive.push_back(dist);
            else
                out.negative.push_back(dist);
        }
    out.negative_total = out.negative.size();
    if (out.negative.size() > cap_negatives) {
        Rng rng(splitmix64(seed ^ 0xd15ca3d5ULL));
        // partial Fisher-Yates: the first cap_negatives entries become the sample
        for (std::size_t i = 0; i < cap_negatives; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(out.negative.size() - i));
            std::swap(out.negative[i], out.negative[j]);
        }
        out.negative.resize(cap_negatives);
    }

    double max_dist = 0.0;
    for (double v : out.positive) max_dist = std::max(max_dist, v);
    for (double v : out.negative) max_dist = std::max(max_dist, v);
    if (max_dist <= 0.0) max_dist = 1.0;
    out.bin_edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i)
        out.bin_edges[i] = max_dist * static_cast<double>(i) / static_cast<double>(bins);
    out.positive_counts.assign(bins, 0);
    out.negative_counts.assign(bins, 0);
    auto bin_of = [&](double v) {
        std::size_t b = static_cast<std::size_t>(v / max_dist * static_cast<double>(bins));
        return std::min(b, bins - 1);
    };
    for (double v : out.positive) ++out.positive_counts[bin_of(v)];
    for (double v : out.negative) ++out.negative_counts[bin_of(v)];
    return out;
}

// Overlap count between the two distance distributions. The overlap interval
// is [min(negative), max(positive)]; when it is nonempty the confusion is
// the number of positives at or above its lower end plus the number of
// negatives at or below its upper end. Invariant under common positive
// affine rescaling of all distances.
inline long confusion_count(const DistanceSummary& summary) {
    if (summary.positive.empty() || summary.negative.empty())
        throw ContractError("confusion_count: needs nonempty positive and negative samples");
    const double lo = *std::min_element(summary.negative.begin(), summary.negative.end());
    const double hi = *std::max_element(summary.positive.begin(), summary.positive.end());
    if (lo > hi) return 0;
    long count = 0;
    for (double v : summary.positive)
        if (v >= lo) ++count;
    for (double v : summary.negative)
        if (v <= hi) ++count;
    return count;
}

// Deterministic 2-D PCA via power iteration with deflation; the sign of each
// component makes its largest-magnitude loading positive.
struct PcaResult {
    Tensor projected;  // [M, 2]
    std::array<double, 2> eigenvalues{};
    std::array<double, 2> explained_ratio{};  // eigenvalue / total variance
};

inline PcaResult pca_project(const Tensor& embeddings) {
    require_shape(embeddings.rank() == 2, "pca_project: expected [M, D]");
    const std::size_t m = embeddings.dim(0), d = embeddings.dim(1);
    require(m >= 3, "pca_project: need at least 3 rows");

    std::vector<double> centered = embeddings.values();
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) mean += centered[i * d + j];
        mean /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) centered[i * d + j] -= mean;
    }
    // covariance (population)
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            const double va = centered[i * d + a];
            if (va == 0.0) continue;
            for (std::size_t b = a; b < d; ++b) cov[a * d + b] += va * centered[i * d + b];
        }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < a; ++b) cov[a * d + b] = cov[b * d + a];
    for (double& v : cov) v /= static_cast<double>(m);
    double trace = 0.0;
    for (std::size_t a = 0; a < d; ++a) trace += cov[a * d + a];
    if (trace < 1e-18)
        throw ContractError("pca_project: degenerate projection, data has zero variance");

    auto power_iterate = [&](const std::vector<double>& mat) {
        std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d)));
        // a tiny deterministic tilt avoids starting orthogonal to the answer
        for (std::size_t j = 0; j < d; ++j) v[j] += 1e-3 * static_cast<double>(j % 7) / 7.0;
        double norm = 0.0;
        for (double x : v) norm += x * x;
        for (double& x : v) x /= std::sqrt(norm);
        std::vector<double> next(d);
        double eig = 0.0;
        for (int iter = 0; iter < 1000; ++iter) {
            for (std::size_t a = 0; a < d; ++a) {
                double s = 0.0;
                for (std::size_t b = 0; b < d; ++b) s += mat[a * d + b] * v[b];
                next[a] = s;
            }
            double nn = 0.0;
            for (double x : next) nn += x * x;
            nn = std::sqrt(nn);
            if (nn < 1e-30) break;  // eigenvalue ~ 0
            for (std::size_t a = 0; a < d; ++a) next[a] /= nn;
            double delta = 0.0;
            for (std::size_t a = 0; a < d; ++a) delta += std::fabs(next[a] - v[a]);
            v = next;
            eig = nn;
            if (delta < 1e-14) break;
        }
        // fix the sign: largest-magnitude loading positive
        std::size_t arg = 0;
        for (std::size_t a = 1; a < d; ++a)
            if (std::fabs(v[a]) > std::fabs(v[arg])) arg = a;
        if (v[arg] < 0.0)
            for (double& x : v) x = -x;
        return std::make_pair(v, eig);
    };

    auto [v1, e1] = power_iterate(cov);
    std::vector<double> deflated = cov;
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) deflated[a * d + b] -= e1 * v1[a] * v1[b];
    auto [v2, e2] = power_iterate(deflated);

    PcaResult res;
    res.eigenvalues = {e1, e2};
    res.explained_ratio = {e1 / trace, e2 / trace};
    std::vector<double> proj(m * 2);
    for (std::size_t i = 0; i < m; ++i) {
        double x = 0.0, y = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            x += centered[i * d + a] * v1[a];
            y += centered[i * d + a] * v2[a];
        }
        proj[i * 2] = x;
        proj[i * 2 + 1] = y;
    }
    res.projected = Tensor({m, 2}, std::move(proj));
    return res;
}

// --------------------------------------------------------------------------
// Full evaluation report
// --------------------------------------------------------------------------

struct ScopeMetrics {
    std::string name;  // token_<k> or concat
    MapCmcResult ranking;
};

struct EvalReport {
    std::vector<ScopeMetrics> scopes;
    Tensor token_cosine;  // [N, N], computed on the raw (pre-BNNeck) tokens
    DistanceSummary distances;  // on the concatenated retrieval embedding
    long confusion = 0;
    struct PcaPoint {
        int token;
        int identity;
        double x, y;
    };
    std::vector<PcaPoint> pca_points;
    std::array<double, 2> pca_eigenvalues{};
    std::array<double, 2> pca_explained{};
    std::size_t num_query = 0, num_gallery = 0;
    bool normalized = true;
    std::size_t cmc_k_max = 20;

    const MapCmcResult& scope(const std::string& name) const {
        for (const auto& s : scopes)
            if (s.name == name) return s.ranking;
        throw ContractError("EvalReport: no scope named " + name);
    }
};

}  // namespace dcformer
