#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dcformer/losses.hpp"
#include "dcformer/ops.hpp"
#include "dcformer/vit.hpp"

using namespace dcformer;

namespace {

ModelConfig small_cfg() {
    ModelConfig cfg;
    cfg.num_tokens = 2;
    cfg.embed_dim = 16;
    cfg.depth = 2;
    cfg.num_heads = 4;
    cfg.image_height = 16;
    cfg.image_width = 16;
    cfg.patch_size = 8;
    cfg.patch_stride = 8;
    cfg.num_channels = 1;
    cfg.num_classes = 4;
    return cfg;
}

Tensor random_images(std::size_t b, const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Shape shape{b, cfg.num_channels, cfg.image_height, cfg.image_width};
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("patchify grid counts for exact and overlapping tiling") {
    ModelConfig cfg = small_cfg();
    CHECK(cfg.num_patches() == 4);  // 16x16, patch 8, stride 8

    ModelConfig overlap = cfg;
    overlap.patch_stride = 4;
    CHECK(overlap.num_patches() == 9);  // ((16-8)/4+1)^2

    EncoderState st = init_state(overlap, 1);
    Tensor imgs = random_images(2, overlap, 2);
    Tensor p = patchify(imgs, overlap, st.patch_proj_weight, st.patch_proj_bias);
    CHECK(p.shape() == Shape{2, 9, overlap.embed_dim});
}

TEST_CASE("patchify of a zero image with zero bias is zero") {
    ModelConfig cfg = small_cfg();
    EncoderState st = init_state(cfg, 3);
    Tensor imgs({1, 1, 16, 16}, 0.0);
    Tensor p = patchify(imgs, cfg, st.patch_proj_weight, st.patch_proj_bias);
    for (double v : p.values()) CHECK(v == 0.0);
}

TEST_CASE("patchify validates geometry") {
    ModelConfig cfg = small_cfg();
    EncoderState st = init_state(cfg, 4);
    Tensor wrong({1, 1, 12, 16}, 0.0);
    CHECK_THROWS_AS(patchify(wrong, cfg, st.patch_proj_weight, st.patch_proj_bias), ShapeError);
}

TEST_CASE("patchify extracts the expected window values") {
    ModelConfig cfg;
    cfg.num_tokens = 1;
    cfg.embed_dim = 1;
    cfg.num_heads = 1;
    cfg.depth = 1;
    cfg.image_height = 8;
    cfg.image_width = 8;
    cfg.patch_size = 4;
    cfg.patch_stride = 4;
    cfg.num_channels = 1;
    cfg.num_classes = 2;
    std::vector<double> img(64);
    for (std::size_t i = 0; i < 64; ++i) img[i] = static_cast<double>(i);
    Tensor images({1, 1, 8, 8}, std::move(img));
    // projection weights of all ones sum the patch pixels
    Tensor w({16, 1}, 1.0);
    Tensor b({1}, 0.0);
    Tensor p = patchify(images, cfg, w, b);
    REQUIRE(p.shape() == Shape{1, 4, 1});
    double expect = 0.0;
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) expect += static_cast<double>(y * 8 + x);
    CHECK(p.values()[0] == expect);
    expect = 0.0;
    for (std::size_t y = 4; y < 8; ++y)
        for (std::size_t x = 4; x < 8; ++x) expect += static_cast<double>(y * 8 + x);
    CHECK(p.values()[3] == expect);
}

TEST_CASE("forward emits B x N x D tokens across random configs") {
    Rng rng(5);
    for (int trial = 0; trial < 4; ++trial) {
        ModelConfig cfg;
        cfg.num_tokens = 1 + rng.below(3);
        cfg.num_heads = 1 + rng.below(2);
        cfg.embed_dim = cfg.num_heads * (4 + 2 * rng.below(3));
        cfg.depth = 1 + rng.below(2);
        cfg.image_height = 16;
        cfg.image_width = 8;
        cfg.patch_size = 4;
        cfg.patch_stride = rng.bernoulli(0.5) ? 4 : 2;
        cfg.num_channels = 1 + rng.below(2);
        cfg.num_classes = 3;
        EncoderState st = init_state(cfg, 100 + trial);
        const std::size_t b = 1 + rng.below(3);
        Tensor imgs = random_images(b, cfg, 200 + trial);
        ForwardOutput out = forward(imgs, st);
        REQUIRE(out.tokens.shape() == Shape{b, cfg.num_tokens, cfg.embed_dim});
        REQUIRE(out.patch_states.shape() == Shape{b, cfg.num_patches(), cfg.embed_dim});
    }
}

TEST_CASE("attention rows are probability distributions") {
    ModelConfig cfg = small_cfg();
    EncoderState st = init_state(cfg, 6);
    Tensor imgs = random_images(3, cfg, 7);
    std::vector<Tensor> attn;
    forward(imgs, st, nullptr, false, &attn);
    REQUIRE(attn.size() == cfg.depth);
    const std::size_t s = cfg.seq_len();
    for (const Tensor& a : attn) {
        REQUIRE(a.shape() == Shape{3 * cfg.num_heads, s, s});
        for (std::size_t row = 0; row < a.size() / s; ++row) {
            double sum = 0.0;
            for (std::size_t k = 0; k < s; ++k) {
                const double v = a.values()[row * s + k];
                REQUIRE(v >= 0.0);
                sum += v;
            }
            REQUIRE(std::fabs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("init_state is deterministic and shaped by the config") {
    ModelConfig cfg = small_cfg();
    cfg.num_tokens = 3;
    cfg.embed_dim = 32;
    cfg.num_heads = 4;
    EncoderState a = init_state(cfg, 42);
    EncoderState b = init_state(cfg, 42);
    EncoderState c = init_state(cfg, 43);
    CHECK(a.cls_tokens.shape() == Shape{3, 32});
    CHECK(a.cls_tokens.values() == b.cls_tokens.values());
    CHECK(a.layers[0].attn.wq.values() == b.layers[0].attn.wq.values());
    CHECK(a.cls_tokens.values() != c.cls_tokens.values());
}

TEST_CASE("identical initial class tokens give identical output tokens") {
    ModelConfig cfg = small_cfg();
    EncoderState st = init_state(cfg, 8);
    const std::size_t d = cfg.embed_dim;
    // tie the token embeddings and their positional slots
    for (std::size_t j = 0; j < d; ++j) {
        st.cls_tokens.values()[d + j] = st.cls_tokens.values()[j];
        st.pos_embed.values()[d + j] = st.pos_embed.values()[j];
    }
    Tensor imgs = random_images(2, cfg, 9);
    ForwardOutput out = forward(imgs, st);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t j = 0; j < d; ++j)
            REQUIRE(out.tokens.at({b, 0, j}) == out.tokens.at({b, 1, j}));
}

TEST_CASE("swapping the two class tokens (with slots and heads) swaps the outputs") {
    ModelConfig cfg = small_cfg();
    EncoderState a = init_state(cfg, 10);
    EncoderState b = init_state(cfg, 10);
    const std::size_t d = cfg.embed_dim;
    for (std::size_t j = 0; j < d; ++j) {
        std::swap(b.cls_tokens.values()[j], b.cls_tokens.values()[d + j]);
        std::swap(b.pos_embed.values()[j], b.pos_embed.values()[d + j]);
    }
    std::swap(b.heads[0], b.heads[1]);
    Tensor imgs = random_images(2, cfg, 11);
    ForwardOutput fa = forward(imgs, a);
    ForwardOutput fb = forward(imgs, b);
    for (std::size_t img = 0; img < 2; ++img)
        for (std::size_t j = 0; j < d; ++j) {
            REQUIRE(fa.tokens.at({img, 0, j}) == fb.tokens.at({img, 1, j}));
            REQUIRE(fa.tokens.at({img, 1, j}) == fb.tokens.at({img, 0, j}));
        }
}

TEST_CASE("heads_forward shapes, batch statistics and eval determinism") {
    ModelConfig cfg = small_cfg();
    EncoderState st = init_state(cfg, 12);
    Tensor imgs = random_images(6, cfg, 13);
    ForwardOutput out = forward(imgs, st);
    HeadsOutput heads = heads_forward(out.tokens, st, true);
    REQUIRE(heads.logits.shape() == Shape{6, cfg.num_tokens, cfg.num_classes});
    REQUIRE(heads.post_bn.shape() == Shape{6, cfg.num_tokens, cfg.embed_dim});

    for (std::size_t t = 0; t < cfg.num_tokens; ++t)
        for (std::size_t j = 0; j < cfg.embed_dim; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < 6; ++i) mean += heads.post_bn.at({i, t, j});
            mean /= 6.0;
            REQUIRE(std::fabs(mean) < 1e-6);
        }

    HeadsOutput e1 = heads_forward(out.tokens, st, false);
    HeadsOutput e2 = heads_forward(out.tokens, st, false);
    CHECK(e1.logits.values() == e2.logits.values());

    Tensor one_img = random_images(1, cfg, 14);
    ForwardOutput tiny = forward(one_img, st);
    CHECK_THROWS_AS(heads_forward(tiny.tokens, st, true), ContractError);
}

TEST_CASE("embed_for_retrieval concatenates tokens in order") {
    Tensor post({2, 3, 4}, 0.0);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t j = 0; j < 4; ++j)
                post.at({b, t, j}) = 100.0 * double(b) + 10.0 * double(t) + double(j);
    Tensor emb = embed_for_retrieval(post);
    REQUIRE(emb.shape() == Shape{2, 12});
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t j = 0; j < 4; ++j)
                REQUIRE(emb.at({b, t * 4 + j}) == post.at({b, t, j}));

    Tensor single({2, 1, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor se = embed_for_retrieval(single);
    CHECK(se.shape() == Shape{2, 4});
    CHECK(se.values() == single.values());
}

TEST_CASE("every learnable parameter receives gradient from the total loss") {
    ModelConfig cfg = small_cfg();
    cfg.lambda = 1.0;
    EncoderState st = init_state(cfg, 15);
    Tensor imgs = random_images(4, cfg, 16);
    const std::vector<int> labels{0, 0, 1, 1};

    auto tape = Tape::make();
    watch_parameters(st, *tape);
    ForwardOutput out = forward(imgs, st, nullptr, true);
    HeadsOutput heads = heads_forward(out.tokens, st, true);
    LossReport report = total_loss(out.tokens, heads.logits, labels, cfg);
    tape->backward(report.total_tensor);

    for (auto& e : st.parameters()) {
        INFO("parameter " << e.name);
        REQUIRE(e.tensor->grad_norm() > 0.0);
    }
}

TEST_CASE("forward is reproducible and finite") {
    ModelConfig cfg = small_cfg();
    EncoderState st = init_state(cfg, 17);
    Tensor imgs = random_images(2, cfg, 18);
    ForwardOutput a = forward(imgs, st);
    ForwardOutput b = forward(imgs, st);
    CHECK(a.tokens.values() == b.tokens.values());
    CHECK(a.tokens.all_finite());
}
