#pragma once

#include "dcformer/gradcheck_suite.hpp"
#include "dcformer/losses.hpp"
#include "dcformer/vit.hpp"

namespace dcformer {
namespace gradsuite {

inline ModelConfig micro_model_config() {
    ModelConfig cfg;
    cfg.num_tokens = 2;
    cfg.embed_dim = 8;
    cfg.depth = 1;
    cfg.num_heads = 2;
    cfg.image_height = 8;
    cfg.image_width = 8;
    cfg.patch_size = 4;
    cfg.patch_stride = 4;  // C = 4 patches
    cfg.num_channels = 1;
    cfg.num_classes = 2;
    cfg.lambda = 1.0;
    cfg.dwc_enabled = true;
    cfg.dwc_differentiable = true;  // fully finite-difference checkable
    cfg.dropout_rate = 0.0;
    return cfg;
}

// Loss-level checks: Eq.-style SDC variants, triplet with frozen mining,
// ID loss, and the full objective through the micro encoder with respect to
// every learnable parameter.
inline void model_cases(std::vector<Case>& cases) {
    Rng rng(77123);

    // self-diverse constraint (uniform mean)
    {
        Tensor tokens = random_tensor({3, 3, 5}, rng);
        cases.push_back({"loss/sdc", tokens, [](Tape&, const Tensor& x) {
                             return sdc_loss(x).loss;
                         }});
    }

    // balanced SDC, detached weights: the finite-difference oracle holds the
    // pair weights at their x0 values, matching the re-weighting-controller
    // semantics of the default implementation.
    {
        Tensor tokens = random_tensor({2, 4, 6}, rng);
        PairSimilarity sims0 = balanced_sdc_loss(tokens, true, false).sims;
        std::vector<double> w0;
        for (const auto& p : sims0.pairs) w0.push_back(p.omega);
        cases.push_back({"loss/balanced_sdc_detached(frozen-weights)", tokens,
                         [w0](Tape&, const Tensor& x) {
                             const std::size_t n = x.dim(1);
                             std::vector<Tensor> nus;
                             for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t j = i + 1; j < n; ++j)
                                     nus.push_back(detail::pair_nu(x, i, j, kNormEps));
                             Tensor nu_vec = detail::stack_pair_scalars(nus);
                             Tensor w(Shape{w0.size()}, std::vector<double>(w0));
                             return sum_all(mul(nu_vec, w));
                         }});
        cases.push_back({"loss/balanced_sdc_differentiable", tokens,
                         [](Tape&, const Tensor& x) {
                             return balanced_sdc_loss(x, true, true).loss;
                         }});
    }

    // soft-margin triplet with the mining selection frozen at x0 (the
    // selection itself is piecewise constant and oracle-tested separately)
    {
        Tensor feats = random_tensor({8, 4}, rng);
        const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
        TripletBatch tb0 = batch_hard_triplets(feats, labels);
        cases.push_back({"loss/soft_margin_triplet(frozen-selection)", feats,
                         [pos = tb0.positive_idx, neg = tb0.negative_idx](Tape&, const Tensor& x) {
                             TripletBatch tb;
                             tb.anchors = x;
                             tb.positives = select_rows(x, pos);
                             tb.negatives = select_rows(x, neg);
                             return soft_margin_triplet_loss(tb);
                         }});
    }

    // ID loss
    {
        Tensor logits = random_tensor({6, 4}, rng, -2.0, 2.0);
        const std::vector<int> labels{0, 1, 2, 3, 0, 1};
        cases.push_back({"loss/id", logits, [labels](Tape&, const Tensor& x) {
                             return id_loss(x, labels);
                         }});
    }

    // end-to-end micro model: total objective w.r.t. every learnable tensor
    {
        const ModelConfig cfg = micro_model_config();
        Tensor images = random_tensor({4, 1, 8, 8}, rng, -0.5, 0.5);
        const std::vector<int> labels{0, 0, 1, 1};
        EncoderState base = init_state(cfg, 4242);
        auto entries = base.entries();
        for (const auto& e : entries) {
            if (!e.learnable) continue;
            const std::string name = e.name;
            cases.push_back(
                {"e2e_micro/" + name, e.tensor->clone(),
                 [cfg, images, labels, name](Tape&, const Tensor& x) {
                     EncoderState st = init_state(cfg, 4242);
                     for (auto& entry : st.entries())
                         if (entry.name == name) *entry.tensor = x;
                     ForwardOutput fwd = forward(images, st, nullptr, true);
                     HeadsOutput heads = heads_forward(fwd.tokens, st, true);
                     LossReport report = total_loss(fwd.tokens, heads.logits, labels, cfg);
                     return report.total_tensor;
                 }});
        }
        // same micro model with DWC off: Eq.-1-style SDC inside the objective
        cases.push_back(
            {"e2e_micro/uniform_sdc(cls_tokens)", base.cls_tokens.clone(),
             [cfg, images, labels](Tape&, const Tensor& x) {
                 ModelConfig c2 = cfg;
                 c2.dwc_enabled = false;
                 EncoderState st = init_state(c2, 4242);
                 st.cls_tokens = x;
                 ForwardOutput fwd = forward(images, st, nullptr, true);
                 HeadsOutput heads = heads_forward(fwd.tokens, st, true);
                 return total_loss(fwd.tokens, heads.logits, labels, c2).total_tensor;
             }});
    }
}

}  // namespace gradsuite

// The full release-gate suite: every op and every loss.
inline SuiteReport run_full_gradcheck_suite(GradCheckOptions opt = {}) {
    std::vector<gradsuite::Case> cases;
    gradsuite::op_cases(cases);
    gradsuite::model_cases(cases);
    return run_gradcheck_cases(cases, opt);
}

}  // namespace dcformer
