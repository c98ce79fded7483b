#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dcformer/ops.hpp"
#include "dcformer/rng.hpp"
#include "oracles.hpp"

using namespace dcformer;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("matmul identity and orthogonal cases") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor m({2, 2}, {1, 2, 3, 4});
    Tensor r = matmul(eye, m);
    CHECK(r.values() == std::vector<double>{1, 2, 3, 4});

    Tensor a({1, 2}, {1, 0});
    Tensor b({2, 1}, {0, 1});
    CHECK(matmul(a, b).item() == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({4, 2}, rng);
    Tensor c = matmul(a, b);
    auto expect = oracle::matmul(a.values(), b.values(), 3, 4, 2);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(std::fabs(c.values()[i] - expect[i]) < 1e-12);
}

TEST_CASE("matmul matches oracle on random shapes up to 16") {
    Rng rng(12);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t m = 1 + rng.below(16), k = 1 + rng.below(16), n = 1 + rng.below(16);
        Tensor a = rand_tensor({m, k}, rng);
        Tensor b = rand_tensor({k, n}, rng);
        Tensor c = matmul(a, b);
        auto expect = oracle::matmul(a.values(), b.values(), m, k, n);
        for (std::size_t i = 0; i < expect.size(); ++i)
            REQUIRE(std::fabs(c.values()[i] - expect[i]) < 1e-12);
    }
}

TEST_CASE("batched matmul equals per-batch oracle") {
    Rng rng(13);
    Tensor a = rand_tensor({3, 2, 4}, rng);
    Tensor b = rand_tensor({3, 4, 5}, rng);
    Tensor c = matmul(a, b);
    for (std::size_t l = 0; l < 3; ++l) {
        std::vector<double> al(a.values().begin() + l * 8, a.values().begin() + (l + 1) * 8);
        std::vector<double> bl(b.values().begin() + l * 20, b.values().begin() + (l + 1) * 20);
        auto expect = oracle::matmul(al, bl, 2, 4, 5);
        for (std::size_t i = 0; i < expect.size(); ++i)
            REQUIRE(std::fabs(c.values()[l * 10 + i] - expect[i]) < 1e-12);
    }
}

TEST_CASE("matmul rejects mismatched shapes") {
    Tensor a({2, 3}, 1.0);
    Tensor b({2, 2}, 1.0);
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("softmax equal inputs and stability") {
    Tensor x({3}, {0, 0, 0});
    Tensor y = softmax(x, 0);
    for (double v : y.values()) CHECK(std::fabs(v - 1.0 / 3.0) < 1e-15);

    Tensor z({3}, {0, 0, 1});
    Tensor s = softmax(z, 0);
    CHECK(std::fabs(s.values()[0] - 0.21194155761708547) < 1e-12);
    CHECK(std::fabs(s.values()[1] - 0.21194155761708547) < 1e-12);
    CHECK(std::fabs(s.values()[2] - 0.5761168847658291) < 1e-12);

    Tensor big({2}, {1000, 0});
    Tensor sb = softmax(big, 0);
    CHECK(std::isfinite(sb.values()[0]));
    CHECK(std::fabs(sb.values()[0] - 1.0) < 1e-12);
    CHECK(sb.values()[1] < 1e-300);
}

TEST_CASE("softmax rows sum to one and are shift-invariant") {
    Rng rng(21);
    Tensor x = rand_tensor({4, 2, 5}, rng, -4.0, 4.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        Tensor y = softmax(x, axis);
        const auto g = detail::axis_geom(x.shape(), axis);
        for (std::size_t o = 0; o < g.outer; ++o)
            for (std::size_t in = 0; in < g.inner; ++in) {
                double s = 0.0;
                for (std::size_t k = 0; k < g.n; ++k) {
                    const double v = y.values()[(o * g.n + k) * g.inner + in];
                    CHECK(v >= 0.0);
                    s += v;
                }
                REQUIRE(std::fabs(s - 1.0) < 1e-9);
            }
    }
    Tensor shifted = add_scalar(x, 3.7);
    Tensor y0 = softmax(x, 2);
    Tensor y1 = softmax(shifted, 2);
    for (std::size_t i = 0; i < y0.size(); ++i)
        REQUIRE(std::fabs(y0.values()[i] - y1.values()[i]) < 1e-9);
}

TEST_CASE("layer_norm constant row collapses to beta") {
    Tensor x({2, 4}, 3.5);
    Tensor gamma({4}, 1.0);
    Tensor beta({4}, 0.0);
    Tensor y = layer_norm(x, gamma, beta);
    for (double v : y.values()) CHECK(std::fabs(v) < 1e-9);
}

TEST_CASE("layer_norm normalizes a (1,-1) row exactly") {
    Tensor x({1, 2}, {1, -1});
    Tensor gamma({2}, 1.0);
    Tensor beta({2}, 0.0);
    Tensor y = layer_norm(x, gamma, beta, 1e-12);
    CHECK(std::fabs(y.values()[0] - 1.0) < 1e-6);
    CHECK(std::fabs(y.values()[1] + 1.0) < 1e-6);
}

TEST_CASE("batch_norm_1d training statistics") {
    Rng rng(31);
    Tensor x = rand_tensor({8, 4}, rng, -2.0, 2.0);
    Tensor gamma({4}, 1.0);
    Tensor rm({4}, 0.0), rv({4}, 1.0);
    Tensor y = batch_norm_1d(x, gamma, rm, rv, true);
    // recompute statistics of the output independently
    for (std::size_t j = 0; j < 4; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 8; ++i) mean += y.values()[i * 4 + j];
        mean /= 8.0;
        double var = 0.0;
        for (std::size_t i = 0; i < 8; ++i) {
            const double c = y.values()[i * 4 + j] - mean;
            var += c * c;
        }
        var /= 8.0;
        CHECK(std::fabs(mean) < 1e-9);
        CHECK(std::fabs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("batch_norm_1d passes through an already normalized batch") {
    // columns with exact zero mean / unit (population) variance
    Tensor x({2, 3}, {1, -1, 1, -1, 1, -1});
    Tensor gamma({3}, 1.0);
    Tensor rm({3}, 0.0), rv({3}, 1.0);
    Tensor y = batch_norm_1d(x, gamma, rm, rv, true);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(std::fabs(y.values()[i] - x.values()[i]) < 1e-4);
}

TEST_CASE("batch_norm_1d degenerate constant column") {
    Tensor x({4, 2}, {5, 1, 5, 2, 5, 3, 5, 4});
    Tensor gamma({2}, 1.0);
    Tensor rm({2}, 0.0), rv({2}, 1.0);
    Tensor y = batch_norm_1d(x, gamma, rm, rv, true);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::fabs(y.values()[i * 2]) < 1e-9);
}

TEST_CASE("batch_norm_1d rejects tiny training batches and stays deterministic in eval") {
    Tensor x({1, 2}, {1, 2});
    Tensor gamma({2}, 1.0);
    Tensor rm({2}, 0.0), rv({2}, 1.0);
    CHECK_THROWS_AS(batch_norm_1d(x, gamma, rm, rv, true), ContractError);
    Tensor y1 = batch_norm_1d(x, gamma, rm, rv, false);
    Tensor y2 = batch_norm_1d(x, gamma, rm, rv, false);
    CHECK(y1.values() == y2.values());
}

TEST_CASE("batch_norm_1d updates running statistics with momentum") {
    Tensor x({4, 1}, {1, 2, 3, 4});  // mean 2.5, population var 1.25, unbiased 5/3
    Tensor gamma({1}, 1.0);
    Tensor rm({1}, 0.0), rv({1}, 1.0);
    batch_norm_1d(x, gamma, rm, rv, true, 0.1);
    CHECK(std::fabs(rm.values()[0] - 0.25) < 1e-12);
    CHECK(std::fabs(rv.values()[0] - (0.9 + 0.1 * (1.25 * 4.0 / 3.0))) < 1e-12);
}

TEST_CASE("cosine_similarity basics") {
    CHECK(cosine_similarity(Tensor({2}, {1, 0}), Tensor({2}, {0, 1})).item() == 0.0);
    CHECK(std::fabs(cosine_similarity(Tensor({2}, {2, 0}), Tensor({2}, {5, 0})).item() - 1.0) <
          1e-12);
    CHECK(std::fabs(cosine_similarity(Tensor({2}, {1, 0}), Tensor({2}, {1, 1})).item() -
                    0.7071067811865475) < 1e-12);
}

TEST_CASE("cosine_similarity is scale invariant") {
    Rng rng(41);
    for (int t = 0; t < 20; ++t) {
        Tensor u = rand_tensor({6}, rng);
        Tensor v = rand_tensor({6}, rng);
        const double alpha = rng.uniform(0.1, 10.0), beta = rng.uniform(0.1, 10.0);
        Tensor us = mul_scalar(u, alpha);
        Tensor vs = mul_scalar(v, beta);
        REQUIRE(std::fabs(cosine_similarity(u, v).item() - cosine_similarity(us, vs).item()) <
                1e-12);
    }
}

TEST_CASE("cosine_similarity guards zero vectors with eps") {
    Tensor z({3}, 0.0);
    Tensor v({3}, {1, 2, 3});
    const double c = cosine_similarity(z, v).item();
    CHECK(std::isfinite(c));
    CHECK(c == 0.0);
}

TEST_CASE("structural ops round values correctly") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(reshape(x, {3, 2}).values() == x.values());
    CHECK(transpose(x).values() == std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK(slice(x, 1, 1, 2).values() == std::vector<double>{2, 3, 5, 6});
    Tensor y({2, 1}, {9, 10});
    CHECK(concat({x, y}, 1).values() == std::vector<double>{1, 2, 3, 9, 4, 5, 6, 10});
    CHECK(select_rows(x, {1, 1, 0}).values() == std::vector<double>{4, 5, 6, 4, 5, 6, 1, 2, 3});
    Tensor t({2}, {7, 8});
    CHECK(expand_batch(t, 3).values() == std::vector<double>{7, 8, 7, 8, 7, 8});
    Tensor b({3}, {10, 20, 30});
    CHECK(add_bias(x, b).values() == std::vector<double>{11, 22, 33, 14, 25, 36});
}

TEST_CASE("permute moves data as expected") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor p = permute(x, {1, 0});
    CHECK(p.shape() == Shape{3, 2});
    CHECK(p.values() == std::vector<double>{1, 4, 2, 5, 3, 6});

    Tensor c({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    Tensor q = permute(c, {2, 0, 1});
    CHECK(q.shape() == Shape{2, 2, 2});
    // q[i][j][k] = c[j][k][i]
    CHECK(q.values() == std::vector<double>{0, 2, 4, 6, 1, 3, 5, 7});
}

TEST_CASE("reductions") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum_all(x).item() == 21.0);
    CHECK(mean_all(x).item() == 3.5);
    CHECK(sum_axis(x, 0).values() == std::vector<double>{5, 7, 9});
    CHECK(sum_axis(x, 1).values() == std::vector<double>{6, 15});
}

TEST_CASE("squared_euclidean_distance_matrix matches direct evaluation") {
    Rng rng(51);
    Tensor x = rand_tensor({5, 3}, rng);
    Tensor d2 = squared_euclidean_distance_matrix(x);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            const double expect =
                oracle::sq_dist(x.values().data() + i * 3, x.values().data() + j * 3, 3);
            REQUIRE(std::fabs(d2.values()[i * 5 + j] - expect) < 1e-12);
        }
}

TEST_CASE("softplus saturates without overflow") {
    Tensor x({3}, {50.0, 0.0, -50.0});
    Tensor y = softplus(x);
    CHECK(std::fabs(y.values()[0] - 50.0) < 1e-9);
    CHECK(std::fabs(y.values()[1] - 0.6931471805599453) < 1e-12);
    CHECK(y.values()[2] < 1e-20);
}

TEST_CASE("softmax_cross_entropy against direct log-sum-exp") {
    Rng rng(61);
    Tensor logits = rand_tensor({4, 5}, rng, -3.0, 3.0);
    const std::vector<int> labels{2, 0, 4, 1};
    const double got = softmax_cross_entropy(logits, labels).item();
    double expect = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        double denom = 0.0;
        for (std::size_t k = 0; k < 5; ++k) denom += std::exp(logits.values()[i * 5 + k]);
        expect += std::log(denom) - logits.values()[i * 5 + labels[i]];
    }
    expect /= 4.0;
    CHECK(std::fabs(got - expect) < 1e-10);

    // uniform logits -> ln K
    Tensor uni({2, 7}, 0.3);
    CHECK(std::fabs(softmax_cross_entropy(uni, {0, 6}).item() - 1.9459101490553132) < 1e-12);

    // saturated correct logit -> ~0
    Tensor sat({1, 3}, {20.0, 0.0, 0.0});
    CHECK(softmax_cross_entropy(sat, {0}).item() < 1e-8);

    CHECK_THROWS_AS(softmax_cross_entropy(uni, {0, 7}), ContractError);
}

TEST_CASE("l2_norm") {
    Tensor x({3}, {3, 0, 4});
    CHECK(std::fabs(l2_norm(x).item() - 5.0) < 1e-12);
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor x({2, 2}, {1, 2, 3, 4});
    CHECK(x.at({1, 0}) == 3.0);
    CHECK_THROWS_AS(x.item(), ContractError);
    CHECK(Tensor::scalar(7.0).item() == 7.0);
}
