#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dcformer/config.hpp"
#include "dcformer/ops.hpp"
#include "dcformer/tensor.hpp"

namespace dcformer {

// Pairwise token similarity snapshot: nu[i][j] = batch-mean |cos(f_i, f_j)|
// for i < j, with the matching pair weights.
struct PairSimilarity {
    struct Pair {
        std::size_t i, j;
        double nu = 0.0;
        double omega = 0.0;
    };
    std::size_t num_tokens = 0;
    std::vector<Pair> pairs;

    double max_nu() const {
        double m = 0.0;
        for (const auto& p : pairs) m = std::max(m, p.nu);
        return m;
    }
    double mean_nu() const {
        if (pairs.empty()) return 0.0;
        double s = 0.0;
        for (const auto& p : pairs) s += p.nu;
        return s / static_cast<double>(pairs.size());
    }
};

struct SdcResult {
    Tensor loss;  // scalar, differentiable w.r.t. the tokens
    PairSimilarity sims;
};

namespace detail {

// nu_ij as a tape scalar: |cos| per image, then batch mean.
inline Tensor pair_nu(const Tensor& tokens, std::size_t i, std::size_t j, double eps) {
    const std::size_t b = tokens.dim(0), d = tokens.dim(2);
    Tensor ti = reshape(slice(tokens, 1, i, 1), {b, d});
    Tensor tj = reshape(slice(tokens, 1, j, 1), {b, d});
    Tensor dot = sum_axis(mul(ti, tj), 1);
    Tensor ni = clamp_min(sqrt(sum_axis(mul(ti, ti), 1)), eps);
    Tensor nj = clamp_min(sqrt(sum_axis(mul(tj, tj), 1)), eps);
    return mean_all(abs(div(dot, mul(ni, nj))));
}

inline Tensor stack_pair_scalars(const std::vector<Tensor>& scalars) {
    std::vector<Tensor> parts;
    for (const Tensor& s : scalars) parts.push_back(reshape(s, {1}));
    return concat(parts, 0);
}

}  // namespace detail

// Uniform-mean self-diverse constraint: the mean over all token pairs of the
// batch-averaged |cosine|. Pushes the class tokens pairwise orthogonal.
inline SdcResult sdc_loss(const Tensor& tokens, double eps = kNormEps) {
    require_shape(tokens.rank() == 3, "sdc_loss: expected [B, N, D] tokens");
    const std::size_t n = tokens.dim(1);
    SdcResult res;
    res.sims.num_tokens = n;
    if (n < 2) {
        res.loss = Tensor::scalar(0.0);
        return res;
    }
    std::vector<Tensor> nus;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            Tensor nu = detail::pair_nu(tokens, i, j, eps);
            res.sims.pairs.push_back({i, j, nu.item(), 0.0});
            nus.push_back(nu);
        }
    const double uniform = 1.0 / static_cast<double>(nus.size());
    for (auto& p : res.sims.pairs) p.omega = uniform;
    res.loss = mean_all(detail::stack_pair_scalars(nus));
    return res;
}

// Softmax re-weighting of the pair losses by their own values: pairs that are
// still similar get more weight.
inline PairSimilarity dwc_weights(PairSimilarity sims) {
    require(!sims.pairs.empty(), "dwc_weights: at least one pair required");
    double mx = sims.pairs[0].nu;
    for (const auto& p : sims.pairs) mx = std::max(mx, p.nu);
    double denom = 0.0;
    for (const auto& p : sims.pairs) denom += std::exp(p.nu - mx);
    for (auto& p : sims.pairs) p.omega = std::exp(p.nu - mx) / denom;
    return sims;
}

// Balanced SDC: sum of omega_ij * nu_ij. With DWC disabled this is exactly
// the uniform mean. By default the weights are treated as constants during
// backprop (re-weighting controller); dwc_differentiable lets gradients flow
// through the softmax instead.
inline SdcResult balanced_sdc_loss(const Tensor& tokens, bool dwc_enabled,
                                   bool dwc_differentiable = false, double eps = kNormEps) {
    require_shape(tokens.rank() == 3, "balanced_sdc_loss: expected [B, N, D] tokens");
    const std::size_t n = tokens.dim(1);
    SdcResult res;
    res.sims.num_tokens = n;
    if (n < 2) {
        res.loss = Tensor::scalar(0.0);
        return res;
    }
    std::vector<Tensor> nus;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            Tensor nu = detail::pair_nu(tokens, i, j, eps);
            res.sims.pairs.push_back({i, j, nu.item(), 0.0});
            nus.push_back(nu);
        }
    Tensor nu_vec = detail::stack_pair_scalars(nus);
    if (!dwc_enabled) {
        const double uniform = 1.0 / static_cast<double>(nus.size());
        for (auto& p : res.sims.pairs) p.omega = uniform;
        res.loss = mean_all(nu_vec);
        return res;
    }
    if (dwc_differentiable) {
        Tensor w = softmax(nu_vec, 0);
        for (std::size_t k = 0; k < res.sims.pairs.size(); ++k)
            res.sims.pairs[k].omega = w.values()[k];
        res.loss = sum_all(mul(w, nu_vec));
    } else {
        res.sims = dwc_weights(res.sims);
        const std::size_t num_pairs = res.sims.pairs.size();
        std::vector<double> w(num_pairs);
        for (std::size_t k = 0; k < num_pairs; ++k) w[k] = res.sims.pairs[k].omega;
        res.loss = sum_all(mul(nu_vec, Tensor(Shape{num_pairs}, std::move(w))));
    }
    return res;
}

// Batch-hard mining result. Anchor rows keep batch order; positives and
// negatives are gathered views of the same feature tensor, so gradients reach
// every selected row.
struct TripletBatch {
    Tensor anchors;    // [B, D]
    Tensor positives;  // [B, D]
    Tensor negatives;  // [B, D]
    std::vector<std::size_t> positive_idx, negative_idx;
};

// Per anchor: the same-label sample at maximum squared distance (self
// excluded) and the different-label sample at minimum squared distance; ties
// go to the lowest index. Requires the PK structure: >= 2 samples per
// identity and >= 2 identities.
inline TripletBatch batch_hard_triplets(const Tensor& features, const std::vector<int>& labels) {
    require_shape(features.rank() == 2, "batch_hard_triplets: expected [B, D] features");
    const std::size_t b = features.dim(0), d = features.dim(1);
    require(labels.size() == b, "batch_hard_triplets: label count mismatch");
    {
        std::map<int, std::size_t> counts;
        for (int l : labels) ++counts[l];
        if (counts.size() < 2)
            throw ContractError("batch_hard_triplets: sampler contract violated, need >= 2 "
                                "identities per batch");
        for (const auto& [label, cnt] : counts)
            if (cnt < 2)
                throw ContractError("batch_hard_triplets: sampler contract violated, identity " +
                                    std::to_string(label) + " has a single sample");
    }
    const auto& f = features.values();
    TripletBatch tb;
    tb.positive_idx.resize(b);
    tb.negative_idx.resize(b);
    for (std::size_t a = 0; a < b; ++a) {
        double best_pos = -1.0, best_neg = 0.0;
        std::size_t pos = b, neg = b;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == a) continue;
            double dist = 0.0;
            for (std::size_t p = 0; p < d; ++p) {
                const double c = f[a * d + p] - f[j * d + p];
                dist += c * c;
            }
            if (labels[j] == labels[a]) {
                if (pos == b || dist > best_pos) {
                    best_pos = dist;
                    pos = j;
                }
            } else {
                if (neg == b || dist < best_neg) {
                    best_neg = dist;
                    neg = j;
                }
            }
        }
        tb.positive_idx[a] = pos;
        tb.negative_idx[a] = neg;
    }
    tb.anchors = features;
    tb.positives = select_rows(features, tb.positive_idx);
    tb.negatives = select_rows(features, tb.negative_idx);
    return tb;
}

// Eq.-style soft-margin triplet: mean log(1 + exp(d2_ap - d2_an)) via the
// stable softplus.
inline Tensor soft_margin_triplet_loss(const TripletBatch& tb) {
    Tensor dp = sub(tb.anchors, tb.positives);
    Tensor dn = sub(tb.anchors, tb.negatives);
    Tensor d2ap = sum_axis(mul(dp, dp), 1);
    Tensor d2an = sum_axis(mul(dn, dn), 1);
    return mean_all(softplus(sub(d2ap, d2an)));
}

// Per-token ID loss: mean softmax cross-entropy (optional label smoothing).
inline Tensor id_loss(const Tensor& logits, const std::vector<int>& labels,
                      double label_smoothing = 0.0) {
    return softmax_cross_entropy(logits, labels, label_smoothing);
}

struct LossReport {
    std::vector<double> id_losses;       // per token
    std::vector<double> triplet_losses;  // per token
    double sdc_raw = 0.0;                // uniform-mean SDC value
    double sdc_weighted = 0.0;           // balanced SDC (equals raw when DWC off)
    double total = 0.0;
    PairSimilarity sims;
    Tensor total_tensor;  // scalar on the tape; undefined when nothing is tracked

    bool finite() const {
        auto ok = [](double v) { return std::isfinite(v); };
        for (double v : id_losses)
            if (!ok(v)) return false;
        for (double v : triplet_losses)
            if (!ok(v)) return false;
        return ok(sdc_raw) && ok(sdc_weighted) && ok(total);
    }
};

// The full training objective: mean over tokens of (ID + triplet) plus
// lambda times the balanced SDC. Triplet mining runs on the pre-BNNeck
// features; the logits come from the post-BNNeck classifiers.
inline LossReport total_loss(const Tensor& pre_bn_tokens, const Tensor& logits,
                             const std::vector<int>& labels, const ModelConfig& cfg) {
    require_shape(pre_bn_tokens.rank() == 3 && logits.rank() == 3,
                  "total_loss: expected [B, N, D] tokens and [B, N, K] logits");
    const std::size_t b = pre_bn_tokens.dim(0);
    const std::size_t n = cfg.num_tokens, d = cfg.embed_dim, k = cfg.num_classes;

    LossReport report;
    Tensor head_sum;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor token_sum;
        if (cfg.use_id_loss) {
            Tensor li = id_loss(reshape(slice(logits, 1, i, 1), {b, k}), labels,
                                cfg.label_smoothing);
            report.id_losses.push_back(li.item());
            token_sum = li;
        } else {
            report.id_losses.push_back(0.0);
        }
        if (cfg.use_triplet_loss) {
            Tensor feats = reshape(slice(pre_bn_tokens, 1, i, 1), {b, d});
            Tensor lt = soft_margin_triplet_loss(batch_hard_triplets(feats, labels));
            report.triplet_losses.push_back(lt.item());
            token_sum = token_sum.defined() ? add(token_sum, lt) : lt;
        } else {
            report.triplet_losses.push_back(0.0);
        }
        if (token_sum.defined())
            head_sum = head_sum.defined() ? add(head_sum, token_sum) : token_sum;
    }
    Tensor total = head_sum.defined()
                       ? mul_scalar(head_sum, 1.0 / static_cast<double>(n))
                       : Tensor::scalar(0.0);

    // The pair similarities are always computed (they feed the metrics log);
    // the SDC term joins the objective only when it can act.
    SdcResult sdc = balanced_sdc_loss(pre_bn_tokens, cfg.dwc_enabled, cfg.dwc_differentiable);
    report.sims = sdc.sims;
    report.sdc_weighted = sdc.loss.item();
    report.sdc_raw = sdc.sims.mean_nu();
    if (cfg.lambda > 0.0 && n >= 2) total = add(total, mul_scalar(sdc.loss, cfg.lambda));

    report.total = total.item();
    report.total_tensor = total;
    return report;
}

}  // namespace dcformer
