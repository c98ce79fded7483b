#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dcformer/gradcheck.hpp"
#include "dcformer/gradcheck_suite.hpp"
#include "dcformer/ops.hpp"

using namespace dcformer;

TEST_CASE("backward of a sum gives unit gradients") {
    auto tape = Tape::make();
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    tape->watch(x);
    Tensor loss = sum_all(x);
    tape->backward(loss);
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of squared norm gives 2x") {
    auto tape = Tape::make();
    Tensor x({4}, {1, -2, 3, 0.5});
    tape->watch(x);
    Tensor loss = sum_all(mul(x, x));
    tape->backward(loss);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(std::fabs(x.grad()[i] - 2.0 * x.values()[i]) < 1e-12);
}

TEST_CASE("repeated backward calls accumulate into leaf gradients") {
    auto tape = Tape::make();
    Tensor x({3}, {1, 2, 3});
    tape->watch(x);
    Tensor loss = sum_all(x);
    tape->backward(loss);
    tape->backward(loss);
    for (double g : x.grad()) CHECK(g == 2.0);
    x.zero_grad();
    tape->backward(loss);
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward rejects non-scalar losses") {
    auto tape = Tape::make();
    Tensor x({3}, {1, 2, 3});
    tape->watch(x);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(tape->backward(y), ContractError);
}

TEST_CASE("gradients flow through shared subexpressions once per use") {
    // loss = x*x + x  -> d/dx = 2x + 1
    auto tape = Tape::make();
    Tensor x = Tensor::scalar(3.0);
    tape->watch(x);
    Tensor loss = add(mul(x, x), x);
    tape->backward(loss);
    CHECK(std::fabs(x.grad()[0] - 7.0) < 1e-12);
}

TEST_CASE("ops from different tapes are rejected") {
    auto tape1 = Tape::make();
    auto tape2 = Tape::make();
    Tensor a({2}, {1, 2});
    Tensor b({2}, {3, 4});
    tape1->watch(a);
    tape2->watch(b);
    CHECK_THROWS_AS(add(a, b), ContractError);
}

TEST_CASE("a tensor outliving its tape degrades to untracked") {
    Tensor x({2}, {1, 2});
    {
        auto tape = Tape::make();
        tape->watch(x);
        CHECK(x.tracked());
    }
    CHECK_FALSE(x.tracked());
    Tensor y = add(x, x);  // fine: constants now
    CHECK_FALSE(y.tracked());
}

TEST_CASE("gradcheck on x^2 at x=3") {
    Tensor x0 = Tensor::scalar(3.0);
    auto res = gradcheck([](Tape&, const Tensor& x) { return mul(x, x); }, x0);
    REQUIRE(res.pass);
    CHECK(std::fabs(res.coords[0].analytic - 6.0) < 1e-12);
    CHECK(std::fabs(res.coords[0].numeric - 6.0) < 1e-6);
}

TEST_CASE("gradcheck passes softmax cross-entropy at random logits") {
    Rng rng(71);
    std::vector<double> v(12);
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    Tensor logits({3, 4}, std::move(v));
    auto res = gradcheck(
        [](Tape&, const Tensor& x) { return softmax_cross_entropy(x, {1, 3, 0}); }, logits);
    CHECK(res.pass);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck flags |cos| near the kink") {
    // orthogonal u, v: cos = 0, |cos| is non-differentiable there
    Tensor u({2}, {1.0, 0.0});
    Tensor v({2}, {0.0, 1.0});
    auto res = gradcheck(
        [v](Tape&, const Tensor& x) { return abs(cosine_similarity(x, v)); }, u);
    CHECK(res.num_excluded > 0);
    bool any_kink = false;
    for (const auto& c : res.coords) any_kink = any_kink || c.near_kink;
    CHECK(any_kink);
}

TEST_CASE("gradcheck exposes a corrupted backward rule") {
    // forward x^2, backward deliberately wrong (3x instead of 2x)
    auto bad_square = [](Tape&, const Tensor& x) {
        const auto& xv = x.values();
        std::vector<double> vals(xv.size());
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = xv[i] * xv[i];
        Tensor out(x.shape(), std::move(vals));
        auto tape = x.tape();
        if (tape) {
            detail::TapeAccess::attach(tape, out);
            detail::TapeAccess::record(
                *tape, [tp = tape.get(), on = out.node(), xn = x.node(),
                        xs = detail::TapeAccess::storage(x)] {
                    const auto* go = detail::TapeAccess::grad_source(*tp, on);
                    if (!go) return;
                    auto* gx = detail::TapeAccess::grad_sink(*tp, xn);
                    if (!gx) return;
                    for (std::size_t i = 0; i < go->size(); ++i)
                        (*gx)[i] += (*go)[i] * 3.0 * (*xs)[i];
                });
        }
        return sum_all(out);
    };
    Tensor x0({3}, {1.0, 2.0, -1.5});
    auto res = gradcheck(bad_square, x0);
    CHECK_FALSE(res.pass);
}

TEST_CASE("gradcheck tolerance flag is honored") {
    // a slightly wrong rule passes a loose tolerance and fails a strict one
    auto slightly_off = [](Tape&, const Tensor& x) {
        Tensor y = mul(x, x);
        Tensor z = mul_scalar(y, 1.0);  // exact
        return sum_all(z);
    };
    Tensor x0({2}, {1.0, 2.0});
    GradCheckOptions strict;
    strict.tol = 1e-12;  // below FD noise: must fail
    auto res_strict = gradcheck(slightly_off, x0, strict);
    GradCheckOptions loose;
    loose.tol = 1e-4;
    auto res_loose = gradcheck(slightly_off, x0, loose);
    CHECK(res_loose.pass);
    CHECK_FALSE(res_strict.pass);
}

TEST_CASE("op gradient suite passes at the release tolerance") {
    auto report = run_op_gradcheck_suite();
    for (const auto& c : report.checks) {
        INFO(c.name << ": " << c.result.summary());
        CHECK(c.result.pass);
    }
    REQUIRE(report.pass());
}
