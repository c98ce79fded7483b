#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dcformer/config.hpp"
#include "dcformer/ops.hpp"
#include "dcformer/rng.hpp"
#include "dcformer/tensor.hpp"

namespace dcformer {

// Vision transformer with N learnable class tokens prepended to the patch
// sequence. All tokens are mutually visible in self-attention; the final
// layer's class-token slice (post final norm) is the TokenSet the diversity
// constraint acts on. Each token owns a BNNeck head: batch norm without bias
// followed by a linear classifier.

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerParams {
    Tensor ln1_gamma, ln1_beta;
    AttentionParams attn;
    Tensor ln2_gamma, ln2_beta;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct HeadParams {
    Tensor bn_gamma;
    Tensor bn_running_mean;  // buffer, not learnable
    Tensor bn_running_var;   // buffer, not learnable
    Tensor fc_weight;
    Tensor fc_bias;
};

struct EncoderState {
    ModelConfig cfg;
    Tensor patch_proj_weight;  // [patch_dim, D]
    Tensor patch_proj_bias;    // [D]
    Tensor cls_tokens;         // [N, D]
    Tensor pos_embed;          // [N + C, D]
    std::vector<LayerParams> layers;
    Tensor final_gamma, final_beta;
    std::vector<HeadParams> heads;  // one per class token

    struct Entry {
        std::string name;
        Tensor* tensor;
        bool learnable;
    };

    // Fixed enumeration order: it defines the checkpoint manifest and the
    // optimizer slot layout.
    std::vector<Entry> entries() {
        std::vector<Entry> out;
        out.push_back({"patch_proj.weight", &patch_proj_weight, true});
        out.push_back({"patch_proj.bias", &patch_proj_bias, true});
        out.push_back({"cls_tokens", &cls_tokens, true});
        out.push_back({"pos_embed", &pos_embed, true});
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            LayerParams& lp = layers[l];
            out.push_back({p + "ln1.gamma", &lp.ln1_gamma, true});
            out.push_back({p + "ln1.beta", &lp.ln1_beta, true});
            out.push_back({p + "attn.wq", &lp.attn.wq, true});
            out.push_back({p + "attn.bq", &lp.attn.bq, true});
            out.push_back({p + "attn.wk", &lp.attn.wk, true});
            out.push_back({p + "attn.bk", &lp.attn.bk, true});
            out.push_back({p + "attn.wv", &lp.attn.wv, true});
            out.push_back({p + "attn.bv", &lp.attn.bv, true});
            out.push_back({p + "attn.wo", &lp.attn.wo, true});
            out.push_back({p + "attn.bo", &lp.attn.bo, true});
            out.push_back({p + "ln2.gamma", &lp.ln2_gamma, true});
            out.push_back({p + "ln2.beta", &lp.ln2_beta, true});
            out.push_back({p + "mlp.w1", &lp.mlp_w1, true});
            out.push_back({p + "mlp.b1", &lp.mlp_b1, true});
            out.push_back({p + "mlp.w2", &lp.mlp_w2, true});
            out.push_back({p + "mlp.b2", &lp.mlp_b2, true});
        }
        out.push_back({"final_norm.gamma", &final_gamma, true});
        out.push_back({"final_norm.beta", &final_beta, true});
        for (std::size_t i = 0; i < heads.size(); ++i) {
            const std::string p = "heads." + std::to_string(i) + ".";
            HeadParams& h = heads[i];
            out.push_back({p + "bn.gamma", &h.bn_gamma, true});
            out.push_back({p + "bn.running_mean", &h.bn_running_mean, false});
            out.push_back({p + "bn.running_var", &h.bn_running_var, false});
            out.push_back({p + "fc.weight", &h.fc_weight, true});
            out.push_back({p + "fc.bias", &h.fc_bias, true});
        }
        return out;
    }

    std::vector<Entry> parameters() {
        std::vector<Entry> out;
        for (Entry& e : entries())
            if (e.learnable) out.push_back(e);
        return out;
    }
};

// Truncated-normal weights (std 0.02), identity norms, zero biases;
// deterministic under the seed.
inline EncoderState init_state(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    EncoderState st;
    st.cfg = cfg;
    Rng rng(seed);
    const std::size_t d = cfg.embed_dim;
    const std::size_t hidden = 4 * d;

    auto trunc = [&rng](Shape shape, double stddev = 0.02) {
        std::vector<double> v(numel(shape));
        for (double& x : v) x = rng.truncated_normal(0.0, stddev);
        return Tensor(std::move(shape), std::move(v));
    };

    st.patch_proj_weight = trunc({cfg.patch_dim(), d});
    st.patch_proj_bias = Tensor({d}, 0.0);
    st.cls_tokens = trunc({cfg.num_tokens, d});
    st.pos_embed = trunc({cfg.seq_len(), d});
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        LayerParams lp;
        lp.ln1_gamma = Tensor({d}, 1.0);
        lp.ln1_beta = Tensor({d}, 0.0);
        lp.attn.wq = trunc({d, d});
        lp.attn.bq = Tensor({d}, 0.0);
        lp.attn.wk = trunc({d, d});
        lp.attn.bk = Tensor({d}, 0.0);
        lp.attn.wv = trunc({d, d});
        lp.attn.bv = Tensor({d}, 0.0);
        lp.attn.wo = trunc({d, d});
        lp.attn.bo = Tensor({d}, 0.0);
        lp.ln2_gamma = Tensor({d}, 1.0);
        lp.ln2_beta = Tensor({d}, 0.0);
        lp.mlp_w1 = trunc({d, hidden});
        lp.mlp_b1 = Tensor({hidden}, 0.0);
        lp.mlp_w2 = trunc({hidden, d});
        lp.mlp_b2 = Tensor({d}, 0.0);
        st.layers.push_back(std::move(lp));
    }
    st.final_gamma = Tensor({d}, 1.0);
    st.final_beta = Tensor({d}, 0.0);
    for (std::size_t i = 0; i < cfg.num_tokens; ++i) {
        HeadParams h;
        h.bn_gamma = Tensor({d}, 1.0);
        h.bn_running_mean = Tensor({d}, 0.0);
        h.bn_running_var = Tensor({d}, 1.0);
        h.fc_weight = trunc({d, cfg.num_classes});
        h.fc_bias = Tensor({cfg.num_classes}, 0.0);
        st.heads.push_back(std::move(h));
    }
    return st;
}

// Sliding-window patch extraction + linear projection: [B, ch, H, W] ->
// [B, C, D]. Overlapping when stride < patch size.
inline Tensor patchify(const Tensor& images, const ModelConfig& cfg, const Tensor& proj_weight,
                       const Tensor& proj_bias) {
    require_shape(images.rank() == 4, "patchify: expected [B, ch, H, W], got " +
                                          shape_str(images.shape()));
    require_shape(images.dim(1) == cfg.num_channels && images.dim(2) == cfg.image_height &&
                      images.dim(3) == cfg.image_width,
                  "patchify: image extents " + shape_str(images.shape()) +
                      " do not match the configured geometry");
    const std::size_t b = images.dim(0);
    const std::size_t gh = cfg.grid_h(), gw = cfg.grid_w();
    const std::size_t c = gh * gw;
    const std::size_t ps = cfg.patch_size, stride = cfg.patch_stride;
    const std::size_t ch = cfg.num_channels, h = cfg.image_height, w = cfg.image_width;
    const std::size_t pd = cfg.patch_dim();

    // gather patches into [B*C, patch_dim]; the op-level select handles grads
    std::vector<std::size_t> gather(b * c * pd);
    std::size_t gi = 0;
    for (std::size_t img = 0; img < b; ++img)
        for (std::size_t gy = 0; gy < gh; ++gy)
            for (std::size_t gx = 0; gx < gw; ++gx)
                for (std::size_t cc = 0; cc < ch; ++cc)
                    for (std::size_t py = 0; py < ps; ++py)
                        for (std::size_t px = 0; px < ps; ++px)
                            gather[gi++] = ((img * ch + cc) * h + gy * stride + py) * w +
                                           gx * stride + px;
    Tensor flat_images = reshape(images, {images.size(), 1});
    Tensor patches = reshape(select_rows(flat_images, gather), {b * c, pd});
    Tensor projected = add_bias(matmul(patches, proj_weight), proj_bias);
    return reshape(projected, {b, c, cfg.embed_dim});
}

namespace detail {

inline Tensor linear(const Tensor& x2d, const Tensor& w, const Tensor& bias) {
    return add_bias(matmul(x2d, w), bias);
}

// Full (unmasked) multi-head self-attention over [B, S, D]; class tokens and
// patches attend to everything. Optionally records the attention tensor
// ([B*H, S, S]) for diagnostics.
inline Tensor self_attention(const Tensor& x, const AttentionParams& p, const ModelConfig& cfg,
                             std::size_t batch, Rng* drop_rng, bool training,
                             std::vector<Tensor>* attn_probe) {
    const std::size_t s = cfg.seq_len(), d = cfg.embed_dim;
    const std::size_t nh = cfg.num_heads, hd = d / nh;
    Tensor flat = reshape(x, {batch * s, d});
    auto split_heads = [&](const Tensor& t) {
        return reshape(permute(reshape(t, {batch, s, nh, hd}), {0, 2, 1, 3}), {batch * nh, s, hd});
    };
    Tensor q = split_heads(linear(flat, p.wq, p.bq));
    Tensor k = split_heads(linear(flat, p.wk, p.bk));
    Tensor v = split_heads(linear(flat, p.wv, p.bv));
    Tensor scores = mul_scalar(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(double(hd)));
    Tensor attn = softmax(scores, 2);
    if (attn_probe) attn_probe->push_back(attn);
    if (drop_rng) attn = dropout(attn, cfg.dropout_rate, *drop_rng, training);
    Tensor ctx = matmul(attn, v);  // [B*H, S, hd]
    Tensor merged =
        reshape(permute(reshape(ctx, {batch, nh, s, hd}), {0, 2, 1, 3}), {batch * s, d});
    return reshape(linear(merged, p.wo, p.bo), {batch, s, d});
}

}  // namespace detail

struct ForwardOutput {
    Tensor tokens;        // [B, N, D] class-token slice after the final norm
    Tensor patch_states;  // [B, C, D]
};

// Pre-norm encoder: x += attn(norm(x)); x += mlp(norm(x)); final norm on top.
inline ForwardOutput forward(const Tensor& images, EncoderState& st, Rng* drop_rng = nullptr,
                             bool training = false,
                             std::vector<Tensor>* attn_probe = nullptr) {
    const ModelConfig& cfg = st.cfg;
    const std::size_t b = images.dim(0);
    const std::size_t s = cfg.seq_len(), d = cfg.embed_dim, c = cfg.num_patches();

    Tensor patches = patchify(images, cfg, st.patch_proj_weight, st.patch_proj_bias);
    Tensor x = concat({expand_batch(st.cls_tokens, b), patches}, 1);  // [B, S, D]
    x = add(x, expand_batch(st.pos_embed, b));

    for (LayerParams& lp : st.layers) {
        Tensor h = layer_norm(x, lp.ln1_gamma, lp.ln1_beta);
        x = add(x, detail::self_attention(h, lp.attn, cfg, b, drop_rng, training, attn_probe));
        Tensor h2 = reshape(layer_norm(x, lp.ln2_gamma, lp.ln2_beta), {b * s, d});
        Tensor m = gelu(detail::linear(h2, lp.mlp_w1, lp.mlp_b1));
        if (drop_rng) m = dropout(m, cfg.dropout_rate, *drop_rng, training);
        m = detail::linear(m, lp.mlp_w2, lp.mlp_b2);
        x = add(x, reshape(m, {b, s, d}));
    }
    x = layer_norm(x, st.final_gamma, st.final_beta);

    ForwardOutput out;
    out.tokens = slice(x, 1, 0, cfg.num_tokens);
    out.patch_states = slice(x, 1, cfg.num_tokens, c);
    return out;
}

struct HeadsOutput {
    Tensor logits;   // [B, N, num_classes]
    Tensor pre_bn;   // [B, N, D] — features the triplet loss sees
    Tensor post_bn;  // [B, N, D] — features the ID loss and retrieval see
};

inline HeadsOutput heads_forward(const Tensor& tokens, EncoderState& st, bool training) {
    const ModelConfig& cfg = st.cfg;
    require_shape(tokens.rank() == 3 && tokens.dim(1) == cfg.num_tokens &&
                      tokens.dim(2) == cfg.embed_dim,
                  "heads_forward: expected [B, N, D] tokens");
    const std::size_t b = tokens.dim(0), d = cfg.embed_dim;
    std::vector<Tensor> post_parts, logit_parts;
    for (std::size_t i = 0; i < cfg.num_tokens; ++i) {
        HeadParams& h = st.heads[i];
        Tensor t = reshape(slice(tokens, 1, i, 1), {b, d});
        Tensor post = batch_norm_1d(t, h.bn_gamma, h.bn_running_mean, h.bn_running_var, training);
        Tensor logits = detail::linear(post, h.fc_weight, h.fc_bias);
        post_parts.push_back(reshape(post, {b, 1, d}));
        logit_parts.push_back(reshape(logits, {b, 1, cfg.num_classes}));
    }
    HeadsOutput out;
    out.logits = concat(logit_parts, 1);
    out.pre_bn = tokens;
    out.post_bn = concat(post_parts, 1);
    return out;
}

// Inference embedding: the class tokens concatenated along the feature axis
// in token order.
inline Tensor embed_for_retrieval(const Tensor& post_bn_tokens) {
    require_shape(post_bn_tokens.rank() == 3, "embed_for_retrieval: expected [B, N, D]");
    const std::size_t b = post_bn_tokens.dim(0);
    const std::size_t nd = post_bn_tokens.dim(1) * post_bn_tokens.dim(2);
    return reshape(post_bn_tokens, {b, nd});
}

// Registers every learnable parameter on the tape.
inline void watch_parameters(EncoderState& st, Tape& tape) {
    for (auto& e : st.parameters()) tape.watch(*e.tensor);
}

inline void zero_gradients(EncoderState& st) {
    for (auto& e : st.parameters()) e.tensor->zero_grad();
}

}  // namespace dcformer
