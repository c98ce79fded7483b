#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dcformer/gradcheck_suite_model.hpp"
#include "dcformer/losses.hpp"
#include "oracles.hpp"

using namespace dcformer;

namespace {

Tensor tokens_from(std::vector<double> vals, std::size_t b, std::size_t n, std::size_t d) {
    return Tensor({b, n, d}, std::move(vals));
}

Tensor random_tokens(std::size_t b, std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(b * n * d);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return tokens_from(std::move(v), b, n, d);
}

}  // namespace

TEST_CASE("sdc_loss on orthogonal, identical and mixed tokens") {
    CHECK(sdc_loss(tokens_from({1, 0, 0, 1}, 1, 2, 2)).loss.item() == 0.0);
    CHECK(std::fabs(sdc_loss(tokens_from({1, 0, 1, 0}, 1, 2, 2)).loss.item() - 1.0) < 1e-12);

    const double s = 1.0 / std::sqrt(2.0);
    SdcResult r = sdc_loss(tokens_from({1, 0, 0, 1, s, s}, 1, 3, 2));
    CHECK(std::fabs(r.loss.item() - 0.4714045207910316) < 1e-9);
    REQUIRE(r.sims.pairs.size() == 3);
    CHECK(std::fabs(r.sims.pairs[0].nu - 0.0) < 1e-12);
    CHECK(std::fabs(r.sims.pairs[1].nu - 0.7071067811865475) < 1e-9);
    CHECK(std::fabs(r.sims.pairs[2].nu - 0.7071067811865475) < 1e-9);
}

TEST_CASE("sdc_loss with one token is zero with no pairs") {
    SdcResult r = sdc_loss(random_tokens(3, 1, 4, 1));
    CHECK(r.loss.item() == 0.0);
    CHECK(r.sims.pairs.empty());
}

TEST_CASE("sdc_loss is scale and permutation invariant") {
    Rng rng(2);
    Tensor t = random_tokens(4, 3, 6, 3);
    const double base = sdc_loss(t).loss.item();

    // scaling any token leaves the loss unchanged
    Tensor scaled = t.clone();
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t j = 0; j < 6; ++j) scaled.at({b, 1, j}) *= 7.3;
    CHECK(std::fabs(sdc_loss(scaled).loss.item() - base) < 1e-9);

    // permuting token order leaves the loss unchanged
    Tensor perm = t.clone();
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t j = 0; j < 6; ++j) {
            perm.at({b, 0, j}) = t.at({b, 2, j});
            perm.at({b, 2, j}) = t.at({b, 0, j});
        }
    CHECK(std::fabs(sdc_loss(perm).loss.item() - base) < 1e-9);
}

TEST_CASE("dwc_weights: uniform, single pair, and the softmax example") {
    PairSimilarity equal;
    equal.num_tokens = 3;
    equal.pairs = {{0, 1, 0.5, 0}, {0, 2, 0.5, 0}, {1, 2, 0.5, 0}};
    PairSimilarity w = dwc_weights(equal);
    for (const auto& p : w.pairs) CHECK(std::fabs(p.omega - 1.0 / 3.0) < 1e-12);

    PairSimilarity single;
    single.num_tokens = 2;
    single.pairs = {{0, 1, 0.42, 0}};
    CHECK(std::fabs(dwc_weights(single).pairs[0].omega - 1.0) < 1e-15);

    PairSimilarity mixed;
    mixed.num_tokens = 3;
    mixed.pairs = {{0, 1, 0.0, 0}, {0, 2, 0.0, 0}, {1, 2, 1.0, 0}};
    PairSimilarity wm = dwc_weights(mixed);
    CHECK(std::fabs(wm.pairs[0].omega - 0.21194155761708547) < 1e-12);
    CHECK(std::fabs(wm.pairs[1].omega - 0.21194155761708547) < 1e-12);
    CHECK(std::fabs(wm.pairs[2].omega - 0.5761168847658291) < 1e-12);
}

TEST_CASE("dwc weights sum to one and are monotone in nu") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        PairSimilarity sims;
        sims.num_tokens = 5;
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = i + 1; j < 5; ++j)
                sims.pairs.push_back({i, j, rng.uniform(0.0, 1.0), 0.0});
        PairSimilarity w = dwc_weights(sims);
        double sum = 0.0;
        for (const auto& p : w.pairs) {
            CHECK(p.omega > 0.0);
            sum += p.omega;
        }
        REQUIRE(std::fabs(sum - 1.0) < 1e-9);
        for (std::size_t a = 0; a < w.pairs.size(); ++a)
            for (std::size_t b = 0; b < w.pairs.size(); ++b)
                if (w.pairs[a].nu > w.pairs[b].nu) REQUIRE(w.pairs[a].omega > w.pairs[b].omega);
    }
}

TEST_CASE("balanced_sdc_loss: collapse to the uniform mean and the weighted example") {
    // all pairs at the same nu: weighted sum equals the plain mean
    Tensor t = tokens_from({1, 0, 1, 0, 1, 0}, 1, 3, 2);  // all pairs nu = 1
    SdcResult balanced = balanced_sdc_loss(t, true);
    SdcResult uniform = sdc_loss(t);
    CHECK(std::fabs(balanced.loss.item() - uniform.loss.item()) < 1e-9);
    CHECK(std::fabs(balanced.loss.item() - 1.0) < 1e-9);

    // nu = (0, 0, 1): weighted loss exceeds the unweighted mean
    Tensor m = tokens_from({1, 0, 0, 1, 0, 2}, 1, 3, 2);
    SdcResult r = balanced_sdc_loss(m, true);
    CHECK(std::fabs(r.loss.item() - 0.5761168847658291) < 1e-9);
    CHECK(r.loss.item() > sdc_loss(m).loss.item());
    CHECK(std::fabs(sdc_loss(m).loss.item() - 1.0 / 3.0) < 1e-9);

    // N = 2: balanced equals plain SDC exactly
    Tensor two = random_tokens(3, 2, 5, 5);
    CHECK(std::fabs(balanced_sdc_loss(two, true).loss.item() - sdc_loss(two).loss.item()) <
          1e-12);

    // DWC off: balanced falls back to the uniform mean
    Tensor any = random_tokens(2, 4, 5, 6);
    CHECK(std::fabs(balanced_sdc_loss(any, false).loss.item() - sdc_loss(any).loss.item()) <
          1e-12);
}

TEST_CASE("balanced SDC dominates the uniform mean unless all pairs are equal") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor t = random_tokens(2, 4, 6, 700 + trial);
        const double weighted = balanced_sdc_loss(t, true).loss.item();
        const double uniform = sdc_loss(t).loss.item();
        REQUIRE(weighted >= uniform - 1e-12);
    }
}

TEST_CASE("batch_hard_triplets on separated clusters") {
    // two identities, two samples each, far apart
    Tensor f({4, 2}, {0, 0, 0.1, 0, 10, 0, 10.1, 0});
    const std::vector<int> labels{0, 0, 1, 1};
    TripletBatch tb = batch_hard_triplets(f, labels);
    // negatives always cross-cluster
    CHECK(tb.negative_idx[0] == 2);
    CHECK(tb.negative_idx[1] == 2);
    CHECK(tb.negative_idx[2] == 1);
    CHECK(tb.negative_idx[3] == 1);
    // positives are the same-label partners
    CHECK(tb.positive_idx[0] == 1);
    CHECK(tb.positive_idx[1] == 0);
    CHECK(tb.positive_idx[2] == 3);
    CHECK(tb.positive_idx[3] == 2);
}

TEST_CASE("batch_hard_triplets picks the distant positive") {
    // anchor 0 has a coincident positive (1) and a distant positive (2)
    Tensor f({4, 1}, {0.0, 0.0, 5.0, 100.0});
    const std::vector<int> labels{0, 0, 0, 1};
    CHECK_THROWS_AS(batch_hard_triplets(f, labels), ContractError);  // id 1 has one sample

    Tensor g({5, 1}, {0.0, 0.0, 5.0, 100.0, 101.0});
    const std::vector<int> labels2{0, 0, 0, 1, 1};
    TripletBatch tb = batch_hard_triplets(g, labels2);
    CHECK(tb.positive_idx[0] == 2);
}

TEST_CASE("batch_hard_triplets matches the exhaustive scan oracle") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t ids = 2 + rng.below(4);
        const std::size_t per = 2 + rng.below(3);
        const std::size_t b = ids * per;
        const std::size_t d = 1 + rng.below(6);
        std::vector<double> vals(b * d);
        for (double& v : vals) v = rng.uniform(-1.0, 1.0);
        std::vector<int> labels(b);
        for (std::size_t i = 0; i < b; ++i) labels[i] = static_cast<int>(i / per);
        Tensor f({b, d}, vals);
        TripletBatch tb = batch_hard_triplets(f, labels);
        auto expect = oracle::batch_hard(vals, b, d, labels);
        for (std::size_t i = 0; i < b; ++i) {
            REQUIRE(tb.positive_idx[i] == expect[i].positive);
            REQUIRE(tb.negative_idx[i] == expect[i].negative);
        }
    }
}

TEST_CASE("soft_margin_triplet_loss values") {
    // d2_ap == d2_an -> log 2
    TripletBatch tb;
    tb.anchors = Tensor({1, 2}, {0, 0});
    tb.positives = Tensor({1, 2}, {1, 0});
    tb.negatives = Tensor({1, 2}, {0, 1});
    CHECK(std::fabs(soft_margin_triplet_loss(tb).item() - 0.6931471805599453) < 1e-9);

    // f_a=(0,0), f_p=(1,0), f_n=(2,0): log(1 + e^{1-4})
    TripletBatch tb2;
    tb2.anchors = Tensor({1, 2}, {0, 0});
    tb2.positives = Tensor({1, 2}, {1, 0});
    tb2.negatives = Tensor({1, 2}, {2, 0});
    CHECK(std::fabs(soft_margin_triplet_loss(tb2).item() - 0.04858735157374196) < 1e-9);

    // a 50-unit gap saturates to the gap itself without overflow
    TripletBatch tb3;
    tb3.anchors = Tensor({1, 1}, {0.0});
    tb3.positives = Tensor({1, 1}, {std::sqrt(50.0)});
    tb3.negatives = Tensor({1, 1}, {0.0});
    const double v = soft_margin_triplet_loss(tb3).item();
    CHECK(std::isfinite(v));
    CHECK(std::fabs(v - 50.0) < 1e-9);
}

TEST_CASE("soft_margin_triplet_loss is positive and monotone") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        TripletBatch tb;
        tb.anchors = Tensor({1, 1}, {0.0});
        const double dp = rng.uniform(0.1, 2.0), dn = rng.uniform(0.1, 2.0);
        tb.positives = Tensor({1, 1}, {dp});
        tb.negatives = Tensor({1, 1}, {dn});
        const double base = soft_margin_triplet_loss(tb).item();
        REQUIRE(base > 0.0);

        TripletBatch harder = tb;
        harder.positives = Tensor({1, 1}, {dp * 1.1});  // larger d2_ap
        REQUIRE(soft_margin_triplet_loss(harder).item() > base);

        TripletBatch easier = tb;
        easier.negatives = Tensor({1, 1}, {dn * 1.1});  // larger d2_an
        REQUIRE(soft_margin_triplet_loss(easier).item() < base);
    }
}

TEST_CASE("total_loss composition") {
    ModelConfig cfg;
    cfg.num_tokens = 2;
    cfg.embed_dim = 4;
    cfg.num_heads = 2;
    cfg.num_classes = 3;
    cfg.lambda = 1.0;
    cfg.dwc_enabled = true;

    Rng rng(10);
    const std::size_t b = 6;
    std::vector<double> tv(b * 2 * 4), lv(b * 2 * 3);
    for (double& v : tv) v = rng.uniform(-1.0, 1.0);
    for (double& v : lv) v = rng.uniform(-1.0, 1.0);
    Tensor tokens({b, 2, 4}, tv);
    Tensor logits({b, 2, 3}, lv);
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};

    LossReport r = total_loss(tokens, logits, labels, cfg);

    // hand-compose the objective from independently computed parts
    auto ce = [&](std::size_t token) {
        double total = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            double denom = 0.0;
            for (std::size_t k = 0; k < 3; ++k)
                denom += std::exp(logits.at({i, token, k}));
            total += std::log(denom) - logits.at({i, token, static_cast<std::size_t>(labels[i])});
        }
        return total / static_cast<double>(b);
    };
    auto triplet = [&](std::size_t token) {
        std::vector<double> feats(b * 4);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < 4; ++j) feats[i * 4 + j] = tokens.at({i, token, j});
        auto hard = oracle::batch_hard(feats, b, 4, labels);
        double total = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            const double dap =
                oracle::sq_dist(feats.data() + i * 4, feats.data() + hard[i].positive * 4, 4);
            const double dan =
                oracle::sq_dist(feats.data() + i * 4, feats.data() + hard[i].negative * 4, 4);
            total += std::log1p(std::exp(dap - dan));
        }
        return total / static_cast<double>(b);
    };
    // SDC with DWC weights, by direct evaluation
    std::vector<double> nu;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = i + 1; j < 2; ++j) {
            double acc = 0.0;
            for (std::size_t s = 0; s < b; ++s) {
                double dot = 0, ni = 0, nj = 0;
                for (std::size_t p = 0; p < 4; ++p) {
                    dot += tokens.at({s, i, p}) * tokens.at({s, j, p});
                    ni += tokens.at({s, i, p}) * tokens.at({s, i, p});
                    nj += tokens.at({s, j, p}) * tokens.at({s, j, p});
                }
                acc += std::fabs(dot / (std::sqrt(ni) * std::sqrt(nj)));
            }
            nu.push_back(acc / static_cast<double>(b));
        }
    double wdenom = 0.0;
    for (double v : nu) wdenom += std::exp(v);
    double sdc = 0.0;
    for (double v : nu) sdc += std::exp(v) / wdenom * v;

    const double expect =
        0.5 * ((ce(0) + triplet(0)) + (ce(1) + triplet(1))) + cfg.lambda * sdc;
    CHECK(std::fabs(r.total - expect) < 1e-9);

    // the report reproduces the composition from its own parts
    double recompose = 0.0;
    for (std::size_t t = 0; t < 2; ++t) recompose += r.id_losses[t] + r.triplet_losses[t];
    recompose = recompose / 2.0 + cfg.lambda * r.sdc_weighted;
    CHECK(std::fabs(r.total - recompose) < 1e-9);
    for (double v : r.id_losses) CHECK(v >= 0.0);
    for (double v : r.triplet_losses) CHECK(v >= 0.0);
    CHECK(r.finite());
}

TEST_CASE("total_loss with one token reduces to the single-head objective") {
    ModelConfig cfg;
    cfg.num_tokens = 1;
    cfg.embed_dim = 4;
    cfg.num_heads = 2;
    cfg.num_classes = 2;
    cfg.lambda = 1.0;

    Tensor tokens = random_tokens(4, 1, 4, 11);
    Rng rng(12);
    std::vector<double> lv(4 * 1 * 2);
    for (double& v : lv) v = rng.uniform(-1.0, 1.0);
    Tensor logits({4, 1, 2}, lv);
    const std::vector<int> labels{0, 0, 1, 1};

    LossReport r = total_loss(tokens, logits, labels, cfg);
    CHECK(std::fabs(r.total - (r.id_losses[0] + r.triplet_losses[0])) < 1e-9);
    CHECK(r.sims.pairs.empty());
    CHECK(r.sdc_weighted == 0.0);
}

TEST_CASE("total_loss with lambda zero is the mean of the head losses") {
    ModelConfig cfg;
    cfg.num_tokens = 2;
    cfg.embed_dim = 4;
    cfg.num_heads = 2;
    cfg.num_classes = 2;
    cfg.lambda = 0.0;

    Tensor tokens = random_tokens(4, 2, 4, 13);
    Rng rng(14);
    std::vector<double> lv(4 * 2 * 2);
    for (double& v : lv) v = rng.uniform(-1.0, 1.0);
    Tensor logits({4, 2, 2}, lv);
    const std::vector<int> labels{0, 0, 1, 1};

    LossReport r = total_loss(tokens, logits, labels, cfg);
    double expect = 0.0;
    for (std::size_t t = 0; t < 2; ++t) expect += r.id_losses[t] + r.triplet_losses[t];
    expect /= 2.0;
    CHECK(std::fabs(r.total - expect) < 1e-9);
    // the similarity snapshot is still recorded
    CHECK(r.sims.pairs.size() == 1);
}

TEST_CASE("loss and model gradient suite passes at the release tolerance") {
    std::vector<gradsuite::Case> cases;
    gradsuite::model_cases(cases);
    auto report = run_gradcheck_cases(cases);
    for (const auto& c : report.checks) {
        INFO(c.name << ": " << c.result.summary());
        CHECK(c.result.pass);
    }
    REQUIRE(report.pass());
}
