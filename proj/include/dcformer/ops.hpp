#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dcformer/common.hpp"
#include "dcformer/rng.hpp"
#include "dcformer/tensor.hpp"

namespace dcformer {

constexpr double kNormEps = 1e-12;   // norm denominators
constexpr double kLayerNormEps = 1e-5;
constexpr double kBatchNormEps = 1e-5;

namespace detail {

// Per-op recording helper. Ops compute forward values first, then commit a
// backward rule that reads the output gradient and accumulates into input
// sinks. Inputs not tracked on the shared tape resolve to node -1, whose
// sink is null.
struct Recorder {
    std::shared_ptr<Tape> tape;

    explicit Recorder(std::initializer_list<const Tensor*> inputs)
        : tape(TapeAccess::joint_tape(inputs)) {}

    explicit operator bool() const { return static_cast<bool>(tape); }

    int node(const Tensor& t) const {
        return (tape && t.tape() == tape) ? t.node() : -1;
    }

    template <typename Body>
    void commit(Tensor& out, Body&& body) {
        if (!tape) return;
        TapeAccess::attach(tape, out);
        TapeAccess::record(*tape,
                           [tp = tape.get(), on = out.node(), body = std::forward<Body>(body)] {
                               const std::vector<double>* go = TapeAccess::grad_source(*tp, on);
                               if (!go) return;
                               body(*tp, *go);
                           });
    }

    static std::vector<double>* sink(Tape& tp, int node) {
        return TapeAccess::grad_sink(tp, node);
    }
};

inline std::shared_ptr<std::vector<double>> storage(const Tensor& t) {
    return TapeAccess::storage(t);
}

// outer stride / extent / inner stride decomposition around one axis
struct AxisGeom {
    std::size_t outer, n, inner;
};

inline AxisGeom axis_geom(const Shape& shape, std::size_t axis) {
    require_shape(axis < shape.size(), "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
    AxisGeom g{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) g.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) g.inner *= shape[i];
    return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_shape(a.shape() == b.shape(),
                  "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> vals(av.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = av[i] + bv[i];
    Tensor out(a.shape(), std::move(vals));
    detail::Recorder rec({&a, &b});
    rec.commit(out, [an = rec.node(a), bn = rec.node(b)](Tape& tp, const std::vector<double>& go) {
        if (auto* ga = detail::Recorder::sink(tp, an))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
        if (auto* gb = detail::Recorder::sink(tp, bn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i];
    });
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_shape(a.shape() == b.shape(),
                  "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> vals(av.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = av[i] - bv[i];
    Tensor out(a.shape(), std::move(vals));
    detail::Recorder rec({&a, &b});
    rec.commit(out, [an = rec.node(a), bn = rec.node(b)](Tape& tp, const std::vector<double>& go) {
        if (auto* ga = detail::Recorder::sink(tp, an))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
        if (auto* gb = detail::Recorder::sink(tp, bn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] -= go[i];
    });
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    require_shape(a.shape() == b.shape(),
                  "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> vals(av.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = av[i] * bv[i];
    Tensor out(a.shape(), std::move(vals));
    detail::Recorder rec({&a, &b});
    rec.commit(out, [an = rec.node(a), bn = rec.node(b), as = detail::storage(a),
                     bs = detail::storage(b)](Tape& tp, const std::vector<double>& go) {
        if (auto* ga = detail::Recorder::sink(tp, an))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * (*bs)[i];
        if (auto* gb = detail::Recorder::sink(tp, bn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * (*as)[i];
    });
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    require_shape(a.shape() == b.shape(),
                  "div: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> vals(av.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = av[i] / bv[i];
    Tensor out(a.shape(), std::move(vals));
    detail::Recorder rec({&a, &b});
    rec.commit(out, [an = rec.node(a), bn = rec.node(b), as = detail::storage(a),
                     bs = detail::storage(b)](Tape& tp, const std::vector<double>& go) {
        if (auto* ga = detail::Recorder::sink(tp, an))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] / (*bs)[i];
        if (auto* gb = detail::Recorder::sink(tp, bn))
            for (std::size_t i = 0; i < go.size(); ++i)
                (*gb)[i] -= go[i] * (*as)[i] / ((*bs)[i] * (*bs)[i]);
    });
    return out;
}

inline Tensor add_scalar(const Tensor& a, double s) {
    const auto& av = a.values();
    std::vector<double> vals(av.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = av[i] + s;
    Tensor out(a.shape(), std::move(vals));
    detail::Recorder rec({&a});
    rec.commit(out, [an = rec.node(a)](Tape& tp, const std::vector<double>& go) {
        if (auto* ga = detail::Recorder::sink(tp, an))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    });
    return out;
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    const auto& av = a.values();
    std::vector<double> vals(av.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = av[i] * s;
    Tensor out(a.shape(), std::move(vals));
    detail::Recorder rec({&a});
    rec.commit(out, [an = rec.node(a), s](Tape& tp, const std::vector<double>& go) {
        if (auto* ga = detail::Recorder::sink(tp, an))
            for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * s;
    });
    return out;
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise transcendental / nonlinearities
// ---------------------------------------------------------------------------

inline Tensor exp(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> vals(xv.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = std::exp(xv[i]);
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), ys = detail::storage(out)](Tape& tp,
                                                                  const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * (*ys)[i];
    });
    return out;
}

inline Tensor log(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> vals(xv.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = std::log(xv[i]);
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), xs = detail::storage(x)](Tape& tp,
                                                                const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] / (*xs)[i];
    });
    return out;
}

inline Tensor sqrt(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> vals(xv.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = std::sqrt(xv[i]);
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), ys = detail::storage(out)](Tape& tp,
                                                                  const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * 0.5 / (*ys)[i];
    });
    return out;
}

// Subgradient at 0 is defined as 0, which keeps gradients bounded when the
// argument sits exactly on the kink.
inline Tensor abs(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> vals(xv.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = std::fabs(xv[i]);
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), xs = detail::storage(x)](Tape& tp,
                                                                const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double v = (*xs)[i];
                (*gx)[i] += go[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
            }
    });
    return out;
}

inline Tensor clamp_min(const Tensor& x, double lo) {
    const auto& xv = x.values();
    std::vector<double> vals(xv.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = std::max(xv[i], lo);
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), xs = detail::storage(x), lo](
                        Tape& tp, const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            for (std::size_t i = 0; i < go.size(); ++i)
                if ((*xs)[i] > lo) (*gx)[i] += go[i];
    });
    return out;
}

// Exact gelu: x * Phi(x) with the Gaussian CDF.
inline Tensor gelu(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> vals(xv.size());
    for (std::size_t i = 0; i < vals.size(); ++i)
        vals[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * M_SQRT1_2));
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), xs = detail::storage(x)](Tape& tp,
                                                                const std::vector<double>& go) {
        auto* gx = detail::Recorder::sink(tp, xn);
        if (!gx) return;
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < go.size(); ++i) {
            const double v = (*xs)[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            (*gx)[i] += go[i] * (cdf + v * pdf);
        }
    });
    return out;
}

// log(1 + exp(x)) in the overflow-safe form.
inline Tensor softplus(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> vals(xv.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double v = xv[i];
        vals[i] = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), xs = detail::storage(x)](Tape& tp,
                                                                const std::vector<double>& go) {
        auto* gx = detail::Recorder::sink(tp, xn);
        if (!gx) return;
        for (std::size_t i = 0; i < go.size(); ++i) {
            const double v = (*xs)[i];
            const double sig = v > 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                       : std::exp(v) / (1.0 + std::exp(v));
            (*gx)[i] += go[i] * sig;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
    const auto& xv = x.values();
    double s = 0.0;
    for (double v : xv) s += v;
    Tensor out = Tensor::scalar(s);
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x)](Tape& tp, const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            for (double& g : *gx) g += go[0];
    });
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    require(x.size() > 0, "mean_all: empty tensor");
    const double inv = 1.0 / static_cast<double>(x.size());
    const auto& xv = x.values();
    double s = 0.0;
    for (double v : xv) s += v;
    Tensor out = Tensor::scalar(s * inv);
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), inv](Tape& tp, const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            for (double& g : *gx) g += go[0] * inv;
    });
    return out;
}

inline Tensor sum_axis(const Tensor& x, std::size_t axis) {
    const auto g = detail::axis_geom(x.shape(), axis);
    Shape out_shape;
    for (std::size_t i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape = {1};
    const auto& xv = x.values();
    std::vector<double> vals(g.outer * g.inner, 0.0);
    for (std::size_t o = 0; o < g.outer; ++o)
        for (std::size_t k = 0; k < g.n; ++k) {
            const std::size_t base = (o * g.n + k) * g.inner;
            for (std::size_t in = 0; in < g.inner; ++in)
                vals[o * g.inner + in] += xv[base + in];
        }
    Tensor out(out_shape, std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), g](Tape& tp, const std::vector<double>& go) {
        auto* gx = detail::Recorder::sink(tp, xn);
        if (!gx) return;
        for (std::size_t o = 0; o < g.outer; ++o)
            for (std::size_t k = 0; k < g.n; ++k) {
                const std::size_t base = (o * g.n + k) * g.inner;
                for (std::size_t in = 0; in < g.inner; ++in)
                    (*gx)[base + in] += go[o * g.inner + in];
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape new_shape) {
    require_shape(numel(new_shape) == x.size(),
                  "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    Tensor out = detail::TapeAccess::alias(std::move(new_shape), detail::storage(x));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x)](Tape& tp, const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i];
    });
    return out;
}

namespace detail {

inline std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

// dst[i0,...,ik] = src[i_{axes[0]}, ... ] permutation copy, used forward and
// (with inverse axes) backward.
inline void permute_copy(const std::vector<double>& src, const Shape& src_shape,
                         const std::vector<std::size_t>& axes, std::vector<double>& dst,
                         bool accumulate) {
    const std::size_t r = src_shape.size();
    Shape dst_shape(r);
    for (std::size_t i = 0; i < r; ++i) dst_shape[i] = src_shape[axes[i]];
    const auto src_strides = row_major_strides(src_shape);
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) step[i] = src_strides[axes[i]];
    std::vector<std::size_t> coord(r, 0);
    std::size_t src_idx = 0;
    const std::size_t total = src.size();
    for (std::size_t d = 0; d < total; ++d) {
        if (accumulate)
            dst[d] += src[src_idx];
        else
            dst[d] = src[src_idx];
        for (std::size_t i = r; i-- > 0;) {
            ++coord[i];
            src_idx += step[i];
            if (coord[i] < dst_shape[i]) break;
            src_idx -= step[i] * dst_shape[i];
            coord[i] = 0;
        }
    }
}

}  // namespace detail

inline Tensor permute(const Tensor& x, std::vector<std::size_t> axes) {
    const std::size_t r = x.rank();
    require_shape(axes.size() == r, "permute: axes rank mismatch");
    std::vector<bool> seen(r, false);
    for (std::size_t a : axes) {
        require_shape(a < r && !seen[a], "permute: axes must be a permutation");
        seen[a] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
    std::vector<double> vals(x.size());
    detail::permute_copy(x.values(), x.shape(), axes, vals, false);
    Tensor out(out_shape, std::move(vals));
    detail::Recorder rec({&x});
    std::vector<std::size_t> inv(r);
    for (std::size_t i = 0; i < r; ++i) inv[axes[i]] = i;
    rec.commit(out, [xn = rec.node(x), inv, out_shape](Tape& tp, const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            detail::permute_copy(go, out_shape, inv, *gx, true);
    });
    return out;
}

inline Tensor transpose(const Tensor& x) {
    require_shape(x.rank() == 2, "transpose: expected rank-2, got " + shape_str(x.shape()));
    return permute(x, {1, 0});
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    const auto g = detail::axis_geom(x.shape(), axis);
    require_shape(start + len <= g.n, "slice: range [" + std::to_string(start) + ", " +
                                          std::to_string(start + len) + ") exceeds extent " +
                                          std::to_string(g.n));
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    const auto& xv = x.values();
    std::vector<double> vals(g.outer * len * g.inner);
    for (std::size_t o = 0; o < g.outer; ++o)
        for (std::size_t k = 0; k < len; ++k) {
            const std::size_t src = (o * g.n + start + k) * g.inner;
            const std::size_t dst = (o * len + k) * g.inner;
            std::copy(xv.begin() + src, xv.begin() + src + g.inner, vals.begin() + dst);
        }
    Tensor out(out_shape, std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), g, start, len](Tape& tp, const std::vector<double>& go) {
        auto* gx = detail::Recorder::sink(tp, xn);
        if (!gx) return;
        for (std::size_t o = 0; o < g.outer; ++o)
            for (std::size_t k = 0; k < len; ++k) {
                const std::size_t dst = (o * g.n + start + k) * g.inner;
                const std::size_t src = (o * len + k) * g.inner;
                for (std::size_t in = 0; in < g.inner; ++in) (*gx)[dst + in] += go[src + in];
            }
    });
    return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    require(!parts.empty(), "concat: no inputs");
    const std::size_t r = parts[0].rank();
    Shape out_shape = parts[0].shape();
    std::size_t total_n = 0;
    for (const Tensor& p : parts) {
        require_shape(p.rank() == r, "concat: rank mismatch");
        for (std::size_t i = 0; i < r; ++i)
            require_shape(i == axis || p.dim(i) == out_shape[i],
                          "concat: off-axis extent mismatch");
        total_n += p.dim(axis);
    }
    out_shape[axis] = total_n;
    const auto g = detail::axis_geom(out_shape, axis);
    std::vector<double> vals(numel(out_shape));
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t pn = p.dim(axis);
        const auto& pv = p.values();
        for (std::size_t o = 0; o < g.outer; ++o)
            for (std::size_t k = 0; k < pn; ++k) {
                const std::size_t src = (o * pn + k) * g.inner;
                const std::size_t dst = (o * g.n + offset + k) * g.inner;
                std::copy(pv.begin() + src, pv.begin() + src + g.inner, vals.begin() + dst);
            }
        offset += pn;
    }
    Tensor out(out_shape, std::move(vals));
    std::shared_ptr<Tape> tape;
    for (const Tensor& p : parts) {
        auto tp = p.tape();
        if (tp) {
            require(!tape || tape == tp, "concat: inputs recorded on different tapes");
            tape = tp;
        }
    }
    if (tape) {
        detail::TapeAccess::attach(tape, out);
        struct PartRef {
            int node;
            std::size_t n, offset;
        };
        std::vector<PartRef> refs;
        std::size_t off = 0;
        for (const Tensor& p : parts) {
            const bool on_tape = p.tape() == tape;
            refs.push_back({on_tape ? p.node() : -1, p.dim(axis), off});
            off += p.dim(axis);
        }
        detail::TapeAccess::record(
            *tape, [tp = tape.get(), on = out.node(), refs, g]() {
                const std::vector<double>* go = detail::TapeAccess::grad_source(*tp, on);
                if (!go) return;
                for (const auto& ref : refs) {
                    auto* gp = detail::TapeAccess::grad_sink(*tp, ref.node);
                    if (!gp) continue;
                    for (std::size_t o = 0; o < g.outer; ++o)
                        for (std::size_t k = 0; k < ref.n; ++k) {
                            const std::size_t src = (o * g.n + ref.offset + k) * g.inner;
                            const std::size_t dst = (o * ref.n + k) * g.inner;
                            for (std::size_t in = 0; in < g.inner; ++in)
                                (*gp)[dst + in] += (*go)[src + in];
                        }
                }
            });
    }
    return out;
}

// Gather along axis 0. Backward scatter-adds rows, so repeated indices are
// fine.
inline Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
    require_shape(x.rank() >= 1, "select_rows: rank-0 input");
    const std::size_t rows = x.dim(0);
    const std::size_t inner = x.size() / std::max<std::size_t>(rows, 1);
    for (std::size_t idx : indices)
        require_shape(idx < rows, "select_rows: index " + std::to_string(idx) + " out of range");
    Shape out_shape = x.shape();
    out_shape[0] = indices.size();
    const auto& xv = x.values();
    std::vector<double> vals(indices.size() * inner);
    for (std::size_t k = 0; k < indices.size(); ++k)
        std::copy(xv.begin() + indices[k] * inner, xv.begin() + (indices[k] + 1) * inner,
                  vals.begin() + k * inner);
    Tensor out(out_shape, std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), indices, inner](Tape& tp, const std::vector<double>& go) {
        auto* gx = detail::Recorder::sink(tp, xn);
        if (!gx) return;
        for (std::size_t k = 0; k < indices.size(); ++k)
            for (std::size_t in = 0; in < inner; ++in)
                (*gx)[indices[k] * inner + in] += go[k * inner + in];
    });
    return out;
}

// Prepends a batch axis by repetition: [rest...] -> [B, rest...].
inline Tensor expand_batch(const Tensor& x, std::size_t batch) {
    require(batch > 0, "expand_batch: batch must be positive");
    Shape out_shape;
    out_shape.push_back(batch);
    for (std::size_t d : x.shape()) out_shape.push_back(d);
    const auto& xv = x.values();
    std::vector<double> vals(batch * xv.size());
    for (std::size_t b = 0; b < batch; ++b)
        std::copy(xv.begin(), xv.end(), vals.begin() + b * xv.size());
    Tensor out(out_shape, std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out,
               [xn = rec.node(x), batch, n = xv.size()](Tape& tp, const std::vector<double>& go) {
                   auto* gx = detail::Recorder::sink(tp, xn);
                   if (!gx) return;
                   for (std::size_t b = 0; b < batch; ++b)
                       for (std::size_t i = 0; i < n; ++i) (*gx)[i] += go[b * n + i];
               });
    return out;
}

// x[..., D] + bias[D], broadcast over leading axes.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_shape(bias.rank() == 1 && x.rank() >= 1 && x.shape().back() == bias.dim(0),
                  "add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                      shape_str(x.shape()));
    const std::size_t d = bias.dim(0);
    const std::size_t rows = x.size() / d;
    const auto& xv = x.values();
    const auto& bv = bias.values();
    std::vector<double> vals(xv.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) vals[r * d + j] = xv[r * d + j] + bv[j];
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x, &bias});
    rec.commit(out, [xn = rec.node(x), bn = rec.node(bias), rows, d](
                        Tape& tp, const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i];
        if (auto* gb = detail::Recorder::sink(tp, bn))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) (*gb)[j] += go[r * d + j];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Matrix multiplication
// ---------------------------------------------------------------------------

namespace detail {

inline void matmul_forward(const double* a, const double* b, double* c, std::size_t m,
                           std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

// [.., m, k] x [.., k, n] -> [.., m, n]; leading (batch) extents must match
// exactly. Rank-2 inputs are the plain matrix product.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_shape(a.rank() >= 2 && b.rank() >= 2, "matmul: inputs must have rank >= 2");
    require_shape(a.rank() == b.rank(), "matmul: rank mismatch " + shape_str(a.shape()) +
                                            " vs " + shape_str(b.shape()));
    const std::size_t r = a.rank();
    for (std::size_t i = 0; i + 2 < r; ++i)
        require_shape(a.dim(i) == b.dim(i), "matmul: batch extent mismatch");
    const std::size_t m = a.dim(r - 2), k = a.dim(r - 1);
    const std::size_t k2 = b.dim(r - 2), n = b.dim(r - 1);
    require_shape(k == k2, "matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                               shape_str(b.shape()));
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < r; ++i) batch *= a.dim(i);
    Shape out_shape = a.shape();
    out_shape[r - 1] = n;
    out_shape[r - 2] = m;
    std::vector<double> vals(batch * m * n, 0.0);
    const double* ap = a.data();
    const double* bp = b.data();
    for (std::size_t l = 0; l < batch; ++l)
        detail::matmul_forward(ap + l * m * k, bp + l * k * n, vals.data() + l * m * n, m, k, n);
    Tensor out(out_shape, std::move(vals));
    detail::Recorder rec({&a, &b});
    rec.commit(out, [an = rec.node(a), bn = rec.node(b), as = detail::storage(a),
                     bs = detail::storage(b), batch, m, k, n](Tape& tp,
                                                              const std::vector<double>& go) {
        auto* ga = detail::Recorder::sink(tp, an);
        auto* gb = detail::Recorder::sink(tp, bn);
        for (std::size_t l = 0; l < batch; ++l) {
            const double* g = go.data() + l * m * n;
            if (ga) {
                // dA = dC * B^T
                const double* bp = bs->data() + l * k * n;
                double* gap = ga->data() + l * m * k;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* grow = g + i * n;
                        const double* brow = bp + p * n;
                        for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                        gap[i * k + p] += s;
                    }
            }
            if (gb) {
                // dB = A^T * dC
                const double* ap = as->data() + l * m * k;
                double* gbp = gb->data() + l * k * n;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = ap[i * k + p];
                        if (av == 0.0) continue;
                        const double* grow = g + i * n;
                        double* gbrow = gbp + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Numerically stable softmax along `axis` (max subtraction per slice).
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto g = detail::axis_geom(x.shape(), axis);
    const auto& xv = x.values();
    std::vector<double> vals(xv.size());
    for (std::size_t o = 0; o < g.outer; ++o)
        for (std::size_t in = 0; in < g.inner; ++in) {
            const std::size_t base = o * g.n * g.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < g.n; ++k) mx = std::max(mx, xv[base + k * g.inner]);
            double denom = 0.0;
            for (std::size_t k = 0; k < g.n; ++k) {
                const double e = std::exp(xv[base + k * g.inner] - mx);
                vals[base + k * g.inner] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (std::size_t k = 0; k < g.n; ++k) vals[base + k * g.inner] *= inv;
        }
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), ys = detail::storage(out), g](
                        Tape& tp, const std::vector<double>& go) {
        auto* gx = detail::Recorder::sink(tp, xn);
        if (!gx) return;
        const auto& y = *ys;
        for (std::size_t o = 0; o < g.outer; ++o)
            for (std::size_t in = 0; in < g.inner; ++in) {
                const std::size_t base = o * g.n * g.inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < g.n; ++k) {
                    const std::size_t idx = base + k * g.inner;
                    dot += go[idx] * y[idx];
                }
                for (std::size_t k = 0; k < g.n; ++k) {
                    const std::size_t idx = base + k * g.inner;
                    (*gx)[idx] += y[idx] * (go[idx] - dot);
                }
            }
    });
    return out;
}

// Layer norm over the last axis with affine parameters gamma/beta of shape [D].
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = kLayerNormEps) {
    require_shape(x.rank() >= 1, "layer_norm: rank-0 input");
    const std::size_t d = x.shape().back();
    require_shape(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
                  "layer_norm: gamma/beta must have shape [" + std::to_string(d) + "]");
    const std::size_t rows = x.size() / d;
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<double> vals(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j)
            vals[r * d + j] = gv[j] * ((row[j] - mean) * inv) + bv[j];
    }
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x, &gamma, &beta});
    rec.commit(out, [xn = rec.node(x), gn = rec.node(gamma), bn = rec.node(beta),
                     xs = detail::storage(x), gs = detail::storage(gamma), rows, d,
                     eps](Tape& tp, const std::vector<double>& go) {
        auto* gx = detail::Recorder::sink(tp, xn);
        auto* gg = detail::Recorder::sink(tp, gn);
        auto* gb = detail::Recorder::sink(tp, bn);
        if (!gx && !gg && !gb) return;
        std::vector<double> xhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = xs->data() + r * d;
            const double* grow = go.data() + r * d;
            double mean = 0.0;
            for (std::size_t j = 0; j < d; ++j) mean += row[j];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double c = row[j] - mean;
                var += c * c;
            }
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t j = 0; j < d; ++j) xhat[j] = (row[j] - mean) * inv;
            if (gb)
                for (std::size_t j = 0; j < d; ++j) (*gb)[j] += grow[j];
            if (gg)
                for (std::size_t j = 0; j < d; ++j) (*gg)[j] += grow[j] * xhat[j];
            if (gx) {
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dxh = grow[j] * (*gs)[j];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xhat[j];
                }
                mean_dxhat /= static_cast<double>(d);
                mean_dxhat_xhat /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const double dxh = grow[j] * (*gs)[j];
                    (*gx)[r * d + j] += inv * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                }
            }
        }
    });
    return out;
}

// BNNeck-style 1-D batch norm: per-feature normalization with a learnable
// gain and no bias. Training mode uses batch statistics and updates the
// running buffers in place (they are plain tensors, never tracked); eval mode
// normalizes with the running statistics.
inline Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, Tensor& running_mean,
                            Tensor& running_var, bool training, double momentum = 0.1,
                            double eps = kBatchNormEps) {
    require_shape(x.rank() == 2, "batch_norm_1d: expected [B, D], got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), d = x.dim(1);
    require_shape(gamma.shape() == Shape{d} && running_mean.shape() == Shape{d} &&
                      running_var.shape() == Shape{d},
                  "batch_norm_1d: parameter shape mismatch");
    if (training && b < 2)
        throw ContractError("batch_norm_1d: batch too small, training mode needs B >= 2");
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    if (training) {
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) mean[j] += xv[i * d + j];
        for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double c = xv[i * d + j] - mean[j];
                var[j] += c * c;
            }
        for (std::size_t j = 0; j < d; ++j) var[j] /= static_cast<double>(b);
        auto& rm = running_mean.values();
        auto& rv = running_var.values();
        const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
        for (std::size_t j = 0; j < d; ++j) {
            rm[j] = (1.0 - momentum) * rm[j] + momentum * mean[j];
            rv[j] = (1.0 - momentum) * rv[j] + momentum * var[j] * unbias;
        }
    } else {
        mean = running_mean.values();
        var = running_var.values();
    }
    std::vector<double> inv(d);
    for (std::size_t j = 0; j < d; ++j) inv[j] = 1.0 / std::sqrt(var[j] + eps);
    std::vector<double> vals(xv.size());
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j)
            vals[i * d + j] = gv[j] * (xv[i * d + j] - mean[j]) * inv[j];
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x, &gamma});
    rec.commit(out, [xn = rec.node(x), gn = rec.node(gamma), xs = detail::storage(x),
                     gs = detail::storage(gamma), mean, inv, b, d,
                     training](Tape& tp, const std::vector<double>& go) {
        auto* gx = detail::Recorder::sink(tp, xn);
        auto* gg = detail::Recorder::sink(tp, gn);
        if (!gx && !gg) return;
        std::vector<double> xhat(b * d);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j)
                xhat[i * d + j] = ((*xs)[i * d + j] - mean[j]) * inv[j];
        if (gg)
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < d; ++j) (*gg)[j] += go[i * d + j] * xhat[i * d + j];
        if (!gx) return;
        if (!training) {
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    (*gx)[i * d + j] += go[i * d + j] * (*gs)[j] * inv[j];
            return;
        }
        // batch statistics couple the rows
        std::vector<double> mean_dxhat(d, 0.0), mean_dxhat_xhat(d, 0.0);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double dxh = go[i * d + j] * (*gs)[j];
                mean_dxhat[j] += dxh;
                mean_dxhat_xhat[j] += dxh * xhat[i * d + j];
            }
        for (std::size_t j = 0; j < d; ++j) {
            mean_dxhat[j] /= static_cast<double>(b);
            mean_dxhat_xhat[j] /= static_cast<double>(b);
        }
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double dxh = go[i * d + j] * (*gs)[j];
                (*gx)[i * d + j] +=
                    inv[j] * (dxh - mean_dxhat[j] - xhat[i * d + j] * mean_dxhat_xhat[j]);
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Norms and similarities
// ---------------------------------------------------------------------------

inline Tensor l2_norm(const Tensor& x) {
    const auto& xv = x.values();
    double s = 0.0;
    for (double v : xv) s += v * v;
    const double norm = std::sqrt(s);
    Tensor out = Tensor::scalar(norm);
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), xs = detail::storage(x), norm](
                        Tape& tp, const std::vector<double>& go) {
        auto* gx = detail::Recorder::sink(tp, xn);
        if (!gx) return;
        const double inv = 1.0 / std::max(norm, kNormEps);
        for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += go[0] * (*xs)[i] * inv;
    });
    return out;
}

// dot(u,v) / (max(|u|,eps) * max(|v|,eps)) for two vectors.
inline Tensor cosine_similarity(const Tensor& u, const Tensor& v, double eps = kNormEps) {
    require_shape(u.rank() == 1 && v.rank() == 1 && u.dim(0) == v.dim(0),
                  "cosine_similarity: expected equal-length vectors, got " +
                      shape_str(u.shape()) + " and " + shape_str(v.shape()));
    const auto& uv = u.values();
    const auto& vv = v.values();
    double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
    for (std::size_t i = 0; i < uv.size(); ++i) {
        dot += uv[i] * vv[i];
        nu2 += uv[i] * uv[i];
        nv2 += vv[i] * vv[i];
    }
    const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
    const double a = std::max(nu, eps), bden = std::max(nv, eps);
    const double cosv = dot / (a * bden);
    Tensor out = Tensor::scalar(cosv);
    detail::Recorder rec({&u, &v});
    rec.commit(out, [un = rec.node(u), vn = rec.node(v), us = detail::storage(u),
                     vs = detail::storage(v), nu, nv, a, bden, cosv,
                     eps](Tape& tp, const std::vector<double>& go) {
        auto* gu = detail::Recorder::sink(tp, un);
        auto* gv = detail::Recorder::sink(tp, vn);
        const double inv_ab = 1.0 / (a * bden);
        for (std::size_t i = 0; i < us->size(); ++i) {
            if (gu) {
                double d = (*vs)[i] * inv_ab;
                if (nu > eps) d -= cosv * (*us)[i] / (nu * a);
                (*gu)[i] += go[0] * d;
            }
            if (gv) {
                double d = (*us)[i] * inv_ab;
                if (nv > eps) d -= cosv * (*vs)[i] / (nv * bden);
                (*gv)[i] += go[0] * d;
            }
        }
    });
    return out;
}

// All-pairs squared Euclidean distances of the rows of x: out[i][j] =
// ||x_i - x_j||^2.
inline Tensor squared_euclidean_distance_matrix(const Tensor& x) {
    require_shape(x.rank() == 2, "squared_euclidean_distance_matrix: expected [B, D], got " +
                                     shape_str(x.shape()));
    const std::size_t b = x.dim(0), d = x.dim(1);
    const auto& xv = x.values();
    std::vector<double> vals(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = i + 1; j < b; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < d; ++p) {
                const double c = xv[i * d + p] - xv[j * d + p];
                s += c * c;
            }
            vals[i * b + j] = s;
            vals[j * b + i] = s;
        }
    Tensor out(Shape{b, b}, std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), xs = detail::storage(x), b, d](
                        Tape& tp, const std::vector<double>& go) {
        auto* gx = detail::Recorder::sink(tp, xn);
        if (!gx) return;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < b; ++j) {
                if (i == j) continue;
                const double c = 2.0 * (go[i * b + j] + go[j * b + i]);
                if (c == 0.0) continue;
                for (std::size_t p = 0; p < d; ++p)
                    (*gx)[i * d + p] += c * ((*xs)[i * d + p] - (*xs)[j * d + p]);
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Classification loss and dropout
// ---------------------------------------------------------------------------

// Mean softmax cross-entropy over the batch, computed through log-sum-exp.
// With label_smoothing s the target is (1-s)*onehot + s/K.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                    double label_smoothing = 0.0) {
    require_shape(logits.rank() == 2, "softmax_cross_entropy: expected [B, K] logits");
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    require(labels.size() == b, "softmax_cross_entropy: label count mismatch");
    for (int y : labels)
        require(y >= 0 && static_cast<std::size_t>(y) < k,
                "softmax_cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                    std::to_string(k) + ")");
    const double s = label_smoothing;
    const auto& zv = logits.values();
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = zv.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0, zsum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            denom += std::exp(row[j] - mx);
            zsum += row[j];
        }
        const double lse = mx + std::log(denom);
        total += lse - (1.0 - s) * row[labels[i]] - (s / static_cast<double>(k)) * zsum;
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(b));
    detail::Recorder rec({&logits});
    rec.commit(out, [zn = rec.node(logits), zs = detail::storage(logits), labels, b, k,
                     s](Tape& tp, const std::vector<double>& go) {
        auto* gz = detail::Recorder::sink(tp, zn);
        if (!gz) return;
        const double scale = go[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
            const double* row = zs->data() + i * k;
            double mx = row[0];
            for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
            for (std::size_t j = 0; j < k; ++j) {
                const double p = std::exp(row[j] - mx) / denom;
                const double target =
                    (1.0 - s) * (static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0) +
                    s / static_cast<double>(k);
                (*gz)[i * k + j] += scale * (p - target);
            }
        }
    });
    return out;
}

// Inverted dropout; identity in eval mode or at rate 0.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
    require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
    if (!training || rate == 0.0) return x;
    const double keep = 1.0 - rate;
    const auto& xv = x.values();
    auto mask = std::make_shared<std::vector<double>>(xv.size());
    std::vector<double> vals(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        (*mask)[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
        vals[i] = xv[i] * (*mask)[i];
    }
    Tensor out(x.shape(), std::move(vals));
    detail::Recorder rec({&x});
    rec.commit(out, [xn = rec.node(x), mask](Tape& tp, const std::vector<double>& go) {
        if (auto* gx = detail::Recorder::sink(tp, xn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * (*mask)[i];
    });
    return out;
}

inline bool all_finite(const Tensor& t) { return t.all_finite(); }

}  // namespace dcformer
