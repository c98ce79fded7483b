#pragma once

// Brute-force reference implementations used only by tests. Everything here
// is written in the most literal way possible (full enumeration, naive
// sorting, textbook algorithms) and stays independent of the library code it
// checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

namespace oracle {

// Plain triple-loop matrix product, row-major [m,k] x [k,n].
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

inline double sq_dist(const double* x, const double* y, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double c = x[i] - y[i];
        s += c * c;
    }
    return s;
}

// Exhaustive batch-hard mining: per anchor the same-label sample at maximum
// squared distance and the different-label sample at minimum squared
// distance, ties resolved to the lowest index.
struct HardTriplet {
    std::size_t positive;
    std::size_t negative;
};

inline std::vector<HardTriplet> batch_hard(const std::vector<double>& feats, std::size_t b,
                                           std::size_t d, const std::vector<int>& labels) {
    std::vector<HardTriplet> out(b);
    for (std::size_t a = 0; a < b; ++a) {
        double best_pos = -1.0;
        double best_neg = std::numeric_limits<double>::infinity();
        std::size_t pos_idx = a, neg_idx = a;
        bool has_pos = false, has_neg = false;
        for (std::size_t j = 0; j < b; ++j) {
            const double dist = sq_dist(feats.data() + a * d, feats.data() + j * d, d);
            if (labels[j] == labels[a]) {
                if (j == a) continue;
                if (!has_pos || dist > best_pos) {
                    best_pos = dist;
                    pos_idx = j;
                    has_pos = true;
                }
            } else {
                if (!has_neg || dist < best_neg) {
                    best_neg = dist;
                    neg_idx = j;
                    has_neg = true;
                }
            }
        }
        out[a] = {pos_idx, neg_idx};
    }
    return out;
}

// Single-gallery-shot re-ID evaluation by full enumeration: same-id/same-cam
// gallery entries removed per query, the rest sorted by distance (stable in
// gallery order), AP = mean precision at the hit positions.
struct RankedEval {
    double map = 0.0;
    std::vector<double> cmc;
    std::size_t evaluated = 0;
    std::size_t skipped = 0;
};

inline RankedEval map_cmc(const std::vector<double>& query, const std::vector<int>& q_ids,
                          const std::vector<int>& q_cams, const std::vector<double>& gallery,
                          const std::vector<int>& g_ids, const std::vector<int>& g_cams,
                          std::size_t d, std::size_t k_max) {
    const std::size_t nq = q_ids.size(), ng = g_ids.size();
    RankedEval res;
    res.cmc.assign(k_max, 0.0);
    double ap_sum = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
        std::vector<std::size_t> keep;
        for (std::size_t g = 0; g < ng; ++g)
            if (!(g_ids[g] == q_ids[q] && g_cams[g] == q_cams[q])) keep.push_back(g);
        std::size_t total_matches = 0;
        for (std::size_t g : keep)
            if (g_ids[g] == q_ids[q]) ++total_matches;
        if (total_matches == 0) {
            ++res.skipped;
            continue;
        }
        std::vector<double> dist(keep.size());
        for (std::size_t i = 0; i < keep.size(); ++i)
            dist[i] = sq_dist(query.data() + q * d, gallery.data() + keep[i] * d, d);
        std::vector<std::size_t> order(keep.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return dist[x] < dist[y]; });
        double ap = 0.0;
        std::size_t hits = 0;
        std::size_t first_hit = keep.size();
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (g_ids[keep[order[r]]] == q_ids[q]) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(r + 1);
                if (first_hit == keep.size()) first_hit = r;
            }
        }
        ap /= static_cast<double>(total_matches);
        ap_sum += ap;
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

// Mean |cos| between token columns, one pass per image.
inline std::vector<double> token_cosine(const std::vector<double>& tokens, std::size_t m,
                                        std::size_t n, std::size_t d) {
    std::vector<double> out(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) {
                out[i * n + j] = 1.0;
                continue;
            }
            double acc = 0.0;
            for (std::size_t s = 0; s < m; ++s) {
                const double* fi = tokens.data() + (s * n + i) * d;
                const double* fj = tokens.data() + (s * n + j) * d;
                double dot = 0.0, ni = 0.0, nj = 0.0;
                for (std::size_t p = 0; p < d; ++p) {
                    dot += fi[p] * fj[p];
                    ni += fi[p] * fi[p];
                    nj += fj[p] * fj[p];
                }
                acc += std::fabs(dot / (std::max(std::sqrt(ni), 1e-12) *
                                        std::max(std::sqrt(nj), 1e-12)));
            }
            out[i * n + j] = acc / static_cast<double>(m);
        }
    return out;
}

// All query-gallery pair distances split by identity match.
struct PairDists {
    std::vector<double> positive;
    std::vector<double> negative;
};

inline PairDists all_pair_distances(const std::vector<double>& query,
                                    const std::vector<int>& q_ids,
                                    const std::vector<double>& gallery,
                                    const std::vector<int>& g_ids, std::size_t d) {
    PairDists out;
    for (std::size_t q = 0; q < q_ids.size(); ++q)
        for (std::size_t g = 0; g < g_ids.size(); ++g) {
            const double dist =
                std::sqrt(sq_dist(query.data() + q * d, gallery.data() + g * d, d));
            if (q_ids[q] == g_ids[g])
                out.positive.push_back(dist);
            else
                out.negative.push_back(dist);
        }
    return out;
}

// Overlap count between the positive and negative distance samples: the
// overlap interval is [min(neg), max(pos)]; when nonempty, count positives
// >= its lower end plus negatives <= its upper end.
inline long confusion(const std::vector<double>& pos, const std::vector<double>& neg) {
    const double lo = *std::min_element(neg.begin(), neg.end());
    const double hi = *std::max_element(pos.begin(), pos.end());
    if (lo > hi) return 0;
    long count = 0;
    for (double p : pos)
        if (p >= lo) ++count;
    for (double n : neg)
        if (n <= hi) ++count;
    return count;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix; eigenvalues in
// descending order, eigenvectors as columns of v.
inline void jacobi_eig(std::vector<double> a, std::size_t n, std::vector<double>& eigvals,
                       std::vector<double>& eigvecs) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::fabs(a[p * n + q]) < 1e-300) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * a[p * n + q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });
    eigvals.resize(n);
    eigvecs.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        eigvals[i] = a[order[i] * n + order[i]];
        for (std::size_t k = 0; k < n; ++k) eigvecs[k * n + i] = v[k * n + order[i]];
    }
}

}  // namespace oracle
