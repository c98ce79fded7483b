#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dcformer/gradcheck.hpp"
#include "dcformer/ops.hpp"
#include "dcformer/rng.hpp"

namespace dcformer {

// The release-gate gradient suite: every differentiable op and loss checked
// against central finite differences. Shared by the `gradcheck` CLI command,
// the unit tests and the acceptance suite.

struct SuiteCheck {
    std::string name;
    GradCheckResult result;
};

struct SuiteReport {
    std::vector<SuiteCheck> checks;
    std::size_t failures = 0;
    bool pass() const { return failures == 0; }
};

namespace gradsuite {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> vals(numel(shape));
    for (double& v : vals) v = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(vals));
}

// Fixed random projection to a scalar so every output coordinate influences
// the loss.
inline Tensor project(const Tensor& y, std::uint64_t salt) {
    Rng rng(0x5eedc0de ^ salt);
    std::vector<double> w(y.size());
    for (double& v : w) v = rng.uniform(0.25, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    return sum_all(mul(y, Tensor(y.shape(), std::move(w))));
}

struct Case {
    std::string name;
    Tensor x0;
    ScalarFn fn;
};

inline void op_cases(std::vector<Case>& cases) {
    Rng rng(20240601);

    // -- elementwise binary, each side
    {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng, 0.5, 2.0);
        cases.push_back({"add/lhs", a, [b](Tape&, const Tensor& x) { return project(add(x, b), 1); }});
        cases.push_back({"add/rhs", b, [a](Tape&, const Tensor& x) { return project(add(a, x), 2); }});
        cases.push_back({"sub/lhs", a, [b](Tape&, const Tensor& x) { return project(sub(x, b), 3); }});
        cases.push_back({"sub/rhs", b, [a](Tape&, const Tensor& x) { return project(sub(a, x), 4); }});
        cases.push_back({"mul/lhs", a, [b](Tape&, const Tensor& x) { return project(mul(x, b), 5); }});
        cases.push_back({"mul/rhs", b, [a](Tape&, const Tensor& x) { return project(mul(a, x), 6); }});
        cases.push_back({"div/lhs", a, [b](Tape&, const Tensor& x) { return project(div(x, b), 7); }});
        cases.push_back({"div/rhs", b, [a](Tape&, const Tensor& x) { return project(div(a, x), 8); }});
    }
    {
        Tensor a = random_tensor({2, 5}, rng);
        cases.push_back(
            {"add_scalar", a, [](Tape&, const Tensor& x) { return project(add_scalar(x, 0.7), 9); }});
        cases.push_back(
            {"mul_scalar", a, [](Tape&, const Tensor& x) { return project(mul_scalar(x, -1.3), 10); }});
    }

    // -- elementwise unary
    cases.push_back({"exp", random_tensor({3, 3}, rng),
                     [](Tape&, const Tensor& x) { return project(exp(x), 11); }});
    cases.push_back({"log", random_tensor({3, 3}, rng, 0.5, 2.0),
                     [](Tape&, const Tensor& x) { return project(log(x), 12); }});
    cases.push_back({"sqrt", random_tensor({3, 3}, rng, 0.5, 2.0),
                     [](Tape&, const Tensor& x) { return project(sqrt(x), 13); }});
    {
        // keep coordinates away from the |x| kink at 0
        Tensor a = random_tensor({3, 3}, rng, 0.2, 1.0);
        auto& av = a.values();
        Rng signs(7);
        for (double& v : av)
            if (signs.bernoulli(0.5)) v = -v;
        cases.push_back({"abs", a, [](Tape&, const Tensor& x) { return project(abs(x), 14); }});
    }
    cases.push_back({"gelu", random_tensor({4, 3}, rng, -2.0, 2.0),
                     [](Tape&, const Tensor& x) { return project(gelu(x), 15); }});
    cases.push_back({"softplus", random_tensor({4, 3}, rng, -3.0, 3.0),
                     [](Tape&, const Tensor& x) { return project(softplus(x), 16); }});
    cases.push_back({"clamp_min", random_tensor({4, 3}, rng, 0.5, 2.0),
                     [](Tape&, const Tensor& x) { return project(clamp_min(x, 1.2), 17); }});

    // -- reductions
    cases.push_back({"sum_all", random_tensor({3, 4}, rng),
                     [](Tape&, const Tensor& x) { return sum_all(x); }});
    cases.push_back({"mean_all", random_tensor({3, 4}, rng),
                     [](Tape&, const Tensor& x) { return mean_all(x); }});
    cases.push_back({"sum_axis/0", random_tensor({3, 4}, rng),
                     [](Tape&, const Tensor& x) { return project(sum_axis(x, 0), 18); }});
    cases.push_back({"sum_axis/1", random_tensor({3, 4}, rng),
                     [](Tape&, const Tensor& x) { return project(sum_axis(x, 1), 19); }});

    // -- structural
    cases.push_back({"reshape", random_tensor({2, 6}, rng), [](Tape&, const Tensor& x) {
                         return project(reshape(x, {3, 4}), 20);
                     }});
    cases.push_back({"permute", random_tensor({2, 3, 4}, rng), [](Tape&, const Tensor& x) {
                         return project(permute(x, {2, 0, 1}), 21);
                     }});
    cases.push_back({"transpose", random_tensor({3, 5}, rng),
                     [](Tape&, const Tensor& x) { return project(transpose(x), 22); }});
    cases.push_back({"slice", random_tensor({3, 6}, rng), [](Tape&, const Tensor& x) {
                         return project(slice(x, 1, 2, 3), 23);
                     }});
    {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({2, 2}, rng);
        cases.push_back({"concat/first", a, [b](Tape&, const Tensor& x) {
                             return project(concat({x, b}, 1), 24);
                         }});
        cases.push_back({"concat/second", b, [a](Tape&, const Tensor& x) {
                             return project(concat({a, x}, 1), 25);
                         }});
    }
    cases.push_back({"select_rows", random_tensor({4, 3}, rng), [](Tape&, const Tensor& x) {
                         return project(select_rows(x, {2, 0, 2, 3}), 26);
                     }});
    cases.push_back({"expand_batch", random_tensor({3, 2}, rng), [](Tape&, const Tensor& x) {
                         return project(expand_batch(x, 3), 27);
                     }});
    {
        Tensor x = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4}, rng);
        cases.push_back({"add_bias/x", x, [b](Tape&, const Tensor& v) {
                             return project(add_bias(v, b), 28);
                         }});
        cases.push_back({"add_bias/bias", b, [x](Tape&, const Tensor& v) {
                             return project(add_bias(x, v), 29);
                         }});
    }

    // -- matmul
    {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        cases.push_back({"matmul/lhs", a, [b](Tape&, const Tensor& x) {
                             return project(matmul(x, b), 30);
                         }});
        cases.push_back({"matmul/rhs", b, [a](Tape&, const Tensor& x) {
                             return project(matmul(a, x), 31);
                         }});
    }
    {
        Tensor a = random_tensor({2, 3, 4}, rng);
        Tensor b = random_tensor({2, 4, 2}, rng);
        cases.push_back({"matmul/batched_lhs", a, [b](Tape&, const Tensor& x) {
                             return project(matmul(x, b), 32);
                         }});
        cases.push_back({"matmul/batched_rhs", b, [a](Tape&, const Tensor& x) {
                             return project(matmul(a, x), 33);
                         }});
    }

    // -- normalization
    cases.push_back({"softmax/axis1", random_tensor({3, 5}, rng, -2.0, 2.0),
                     [](Tape&, const Tensor& x) { return project(softmax(x, 1), 34); }});
    cases.push_back({"softmax/axis0", random_tensor({3, 5}, rng, -2.0, 2.0),
                     [](Tape&, const Tensor& x) { return project(softmax(x, 0), 35); }});
    {
        Tensor x = random_tensor({4, 6}, rng);
        Tensor gamma = random_tensor({6}, rng, 0.5, 1.5);
        Tensor beta = random_tensor({6}, rng);
        cases.push_back({"layer_norm/x", x, [gamma, beta](Tape&, const Tensor& v) {
                             return project(layer_norm(v, gamma, beta), 36);
                         }});
        cases.push_back({"layer_norm/gamma", gamma, [x, beta](Tape&, const Tensor& v) {
                             return project(layer_norm(x, v, beta), 37);
                         }});
        cases.push_back({"layer_norm/beta", beta, [x, gamma](Tape&, const Tensor& v) {
                             return project(layer_norm(x, gamma, v), 38);
                         }});
    }
    {
        Tensor x = random_tensor({6, 4}, rng);
        Tensor gamma = random_tensor({4}, rng, 0.5, 1.5);
        auto bn_train = [gamma](Tape&, const Tensor& v) {
            Tensor rm({4}, 0.0), rv({4}, 1.0);
            return project(batch_norm_1d(v, gamma, rm, rv, true), 39);
        };
        auto bn_train_gamma = [x](Tape&, const Tensor& v) {
            Tensor rm({4}, 0.0), rv({4}, 1.0);
            return project(batch_norm_1d(x, v, rm, rv, true), 40);
        };
        auto bn_eval = [gamma](Tape&, const Tensor& v) {
            Tensor rm({4}, 0.1), rv({4}, 0.9);
            return project(batch_norm_1d(v, gamma, rm, rv, false), 41);
        };
        cases.push_back({"batch_norm/train_x", x, bn_train});
        cases.push_back({"batch_norm/train_gamma", gamma, bn_train_gamma});
        cases.push_back({"batch_norm/eval_x", x, bn_eval});
    }

    // -- norms and similarities
    cases.push_back({"l2_norm", random_tensor({7}, rng, 0.2, 1.0),
                     [](Tape&, const Tensor& x) { return l2_norm(x); }});
    {
        Tensor u = random_tensor({6}, rng, 0.2, 1.0);
        Tensor v = random_tensor({6}, rng, -1.0, -0.2);
        cases.push_back({"cosine_similarity/u", u, [v](Tape&, const Tensor& x) {
                             return cosine_similarity(x, v);
                         }});
        cases.push_back({"cosine_similarity/v", v, [u](Tape&, const Tensor& x) {
                             return cosine_similarity(u, x);
                         }});
    }
    cases.push_back({"squared_euclidean_distance_matrix", random_tensor({5, 3}, rng),
                     [](Tape&, const Tensor& x) {
                         return project(squared_euclidean_distance_matrix(x), 42);
                     }});

    // -- classification loss
    {
        Tensor logits = random_tensor({4, 5}, rng, -2.0, 2.0);
        const std::vector<int> labels{0, 3, 2, 4};
        cases.push_back({"softmax_cross_entropy", logits, [labels](Tape&, const Tensor& x) {
                             return softmax_cross_entropy(x, labels);
                         }});
        cases.push_back({"softmax_cross_entropy/smoothed", logits,
                         [labels](Tape&, const Tensor& x) {
                             return softmax_cross_entropy(x, labels, 0.1);
                         }});
    }

    // -- dropout (mask re-derived from a fixed seed, so f is deterministic)
    cases.push_back({"dropout", random_tensor({4, 4}, rng), [](Tape&, const Tensor& x) {
                         Rng mask_rng(99);
                         return project(dropout(x, 0.25, mask_rng, true), 43);
                     }});
}

}  // namespace gradsuite

inline SuiteReport run_gradcheck_cases(const std::vector<gradsuite::Case>& cases,
                                       GradCheckOptions opt = {}) {
    SuiteReport report;
    for (const auto& c : cases) {
        SuiteCheck check{c.name, gradcheck(c.fn, c.x0, opt)};
        if (!check.result.pass) ++report.failures;
        report.checks.push_back(std::move(check));
    }
    return report;
}

inline SuiteReport run_op_gradcheck_suite(GradCheckOptions opt = {}) {
    std::vector<gradsuite::Case> cases;
    gradsuite::op_cases(cases);
    return run_gradcheck_cases(cases, opt);
}

}  // namespace dcformer
