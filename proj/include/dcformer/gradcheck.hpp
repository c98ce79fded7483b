#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dcformer/ops.hpp"
#include "dcformer/tensor.hpp"

namespace dcformer {

// Builds a scalar loss from a watched copy of x on the given tape.
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

struct GradCheckOptions {
    double step = 1e-5;
    double tol = 1e-4;
    // relative disagreement of the one-sided differences above which a
    // coordinate is reported as sitting near a kink and excluded
    double kink_threshold = 1e-2;
    // floor of the relative-error denominator
    double denom_floor = 1e-6;
};

struct GradCheckResult {
    struct Coord {
        std::size_t index;
        double analytic;
        double numeric;
        double rel_err;
        bool near_kink;
    };
    std::vector<Coord> coords;
    double max_rel_err = 0.0;   // over non-excluded coordinates
    std::size_t worst_index = 0;
    std::size_t num_excluded = 0;
    bool pass = false;

    std::string summary() const {
        std::ostringstream os;
        os << (pass ? "pass" : "FAIL") << " max_rel_err=" << max_rel_err << " at coord "
           << worst_index << " (" << num_excluded << " near-kink excluded, " << coords.size()
           << " total)";
        return os.str();
    }
};

namespace detail {

inline double eval_scalar(const ScalarFn& f, const Tensor& x) {
    auto tape = Tape::make();
    Tensor x_in = x.clone();
    Tensor y = f(*tape, x_in);
    require(y.size() == 1, "gradcheck: function must be scalar-valued");
    return y.item();
}

}  // namespace detail

// Compares the tape gradient of f at x0 against central finite differences,
// coordinate by coordinate. Coordinates where the one-sided differences
// disagree (non-differentiable within `step`) are reported and excluded from
// the pass criterion.
inline GradCheckResult gradcheck(const ScalarFn& f, const Tensor& x0,
                                 GradCheckOptions opt = {}) {
    GradCheckResult res;

    // analytic gradient via one tape pass
    std::vector<double> analytic;
    {
        auto tape = Tape::make();
        Tensor x = x0.clone();
        tape->watch(x);
        Tensor y = f(*tape, x);
        require(y.size() == 1, "gradcheck: function must be scalar-valued");
        tape->backward(y);
        analytic = x.grad();
    }

    const double f0 = detail::eval_scalar(f, x0);
    const double h = opt.step;

    Tensor x_work = x0.clone();
    auto& xv = x_work.values();
    res.coords.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double orig = xv[i];
        xv[i] = orig + h;
        const double fp = detail::eval_scalar(f, x_work);
        xv[i] = orig - h;
        const double fm = detail::eval_scalar(f, x_work);
        xv[i] = orig;

        const double central = (fp - fm) / (2.0 * h);
        const double dplus = (fp - f0) / h;
        const double dminus = (f0 - fm) / h;
        const bool kink = std::fabs(dplus - dminus) >
                          opt.kink_threshold * std::max({1.0, std::fabs(dplus), std::fabs(dminus)});
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(central), opt.denom_floor});
        const double rel = std::fabs(analytic[i] - central) / denom;

        res.coords[i] = {i, analytic[i], central, rel, kink};
        if (kink) {
            ++res.num_excluded;
        } else if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_index = i;
        }
    }
    res.pass = res.max_rel_err < opt.tol;
    return res;
}

}  // namespace dcformer
