#ifndef MOON_OPS_HPP
#define MOON_OPS_HPP

#include <Eigen/Dense>
#include <cmath>

#include "moon/tape.hpp"

namespace moon {

template <class Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using EMap = Eigen::Map<EMat<Real>>;
template <class Real>
using ECMap = Eigen::Map<const EMat<Real>>;

template <class Real>
inline EMap<Real> as_mat(Tensor<Real>& t, int rows, int cols) {
    return EMap<Real>(t.ptr(), rows, cols);
}
template <class Real>
inline ECMap<Real> as_mat(const Tensor<Real>& t, int rows, int cols) {
    return ECMap<Real>(t.ptr(), rows, cols);
}

namespace ops {

// ---- elementwise arithmetic ----

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
    Tape<Real>& t = *a.tape;
    check(a.val().same_shape(b.val()), "add: shape mismatch " + a.val().shape_str() + " vs " + b.val().shape_str());
    Tensor<Real> out = a.val();
    const Tensor<Real>& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    int id = t.push(std::move(out), a.rg() || b.rg());
    t.set_backward(id, [aid = a.id, bid = b.id, arg = a.rg(), brg = b.rg(), id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        if (arg) { auto& ga = tp.grad(aid); for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i]; }
        if (brg) { auto& gb = tp.grad(bid); for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i]; }
    });
    return {&t, id};
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
    Tape<Real>& t = *a.tape;
    check(a.val().same_shape(b.val()), "sub: shape mismatch");
    Tensor<Real> out = a.val();
    const Tensor<Real>& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    int id = t.push(std::move(out), a.rg() || b.rg());
    t.set_backward(id, [aid = a.id, bid = b.id, arg = a.rg(), brg = b.rg(), id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        if (arg) { auto& ga = tp.grad(aid); for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i]; }
        if (brg) { auto& gb = tp.grad(bid); for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i]; }
    });
    return {&t, id};
}

template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
    Tape<Real>& t = *a.tape;
    check(a.val().same_shape(b.val()), "mul: shape mismatch");
    Tensor<Real> out = a.val();
    const Tensor<Real>& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    int id = t.push(std::move(out), a.rg() || b.rg());
    t.set_backward(id, [aid = a.id, bid = b.id, arg = a.rg(), brg = b.rg(), id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        const Tensor<Real>& av = tp.val(aid);
        const Tensor<Real>& bvv = tp.val(bid);
        if (arg) { auto& ga = tp.grad(aid); for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bvv[i]; }
        if (brg) { auto& gb = tp.grad(bid); for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i]; }
    });
    return {&t, id};
}

// elementwise a / b
template <class Real>
Var<Real> div(Var<Real> a, Var<Real> b) {
    Tape<Real>& t = *a.tape;
    check(a.val().same_shape(b.val()), "div: shape mismatch");
    Tensor<Real> out = a.val();
    const Tensor<Real>& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] /= bv[i];
    int id = t.push(std::move(out), a.rg() || b.rg());
    t.set_backward(id, [aid = a.id, bid = b.id, arg = a.rg(), brg = b.rg(), id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        const Tensor<Real>& av = tp.val(aid);
        const Tensor<Real>& bvv = tp.val(bid);
        if (arg) { auto& ga = tp.grad(aid); for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / bvv[i]; }
        if (brg) { auto& gb = tp.grad(bid); for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i] * av[i] / (bvv[i] * bvv[i]); }
    });
    return {&t, id};
}

template <class Real>
Var<Real> scale(Var<Real> a, Real c) {
    Tape<Real>& t = *a.tape;
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x *= c;
    int id = t.push(std::move(out), a.rg());
    t.set_backward(id, [aid = a.id, c, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& ga = tp.grad(aid);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
    });
    return {&t, id};
}

template <class Real>
Var<Real> neg(Var<Real> a) { return scale(a, Real(-1)); }

template <class Real>
Var<Real> add_const(Var<Real> a, Real c) {
    Tape<Real>& t = *a.tape;
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x += c;
    int id = t.push(std::move(out), a.rg());
    t.set_backward(id, [aid = a.id, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& ga = tp.grad(aid);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
    return {&t, id};
}

// ---- activations ----

template <class Real>
Var<Real> relu(Var<Real> a) {
    Tape<Real>& t = *a.tape;
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x = x > Real(0) ? x : Real(0);
    int id = t.push(std::move(out), a.rg());
    t.set_backward(id, [aid = a.id, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        const Tensor<Real>& av = tp.val(aid);
        auto& ga = tp.grad(aid);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += av[i] > Real(0) ? g[i] : Real(0);
    });
    return {&t, id};
}

template <class Real>
Var<Real> gelu(Var<Real> a) {
    Tape<Real>& t = *a.tape;
    Tensor<Real> out = a.val();
    for (auto& x : out.data) {
        Real cdf = Real(0.5) * (Real(1) + Real(std::erf(double(x) * 0.7071067811865475)));
        x = x * cdf;
    }
    int id = t.push(std::move(out), a.rg());
    t.set_backward(id, [aid = a.id, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        const Tensor<Real>& av = tp.val(aid);
        auto& ga = tp.grad(aid);
        for (int64_t i = 0; i < g.numel(); ++i) {
            double x = double(av[i]);
            double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
            double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
            ga[i] += g[i] * Real(cdf + x * pdf);
        }
    });
    return {&t, id};
}

template <class Real>
Var<Real> sigmoid(Var<Real> a) {
    Tape<Real>& t = *a.tape;
    Tensor<Real> out = a.val();
    for (auto& x : out.data) {
        double v = double(x);
        x = Real(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
    }
    int id = t.push(std::move(out), a.rg());
    t.set_backward(id, [aid = a.id, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        const Tensor<Real>& ov = tp.val(id);
        auto& ga = tp.grad(aid);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * ov[i] * (Real(1) - ov[i]);
    });
    return {&t, id};
}

// log(1 + e^x), numerically stable
template <class Real>
Var<Real> softplus(Var<Real> a) {
    Tape<Real>& t = *a.tape;
    Tensor<Real> out = a.val();
    for (auto& x : out.data) {
        double v = double(x);
        x = Real(v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)));
    }
    int id = t.push(std::move(out), a.rg());
    t.set_backward(id, [aid = a.id, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        const Tensor<Real>& av = tp.val(aid);
        auto& ga = tp.grad(aid);
        for (int64_t i = 0; i < g.numel(); ++i) {
            double v = double(av[i]);
            double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            ga[i] += g[i] * Real(s);
        }
    });
    return {&t, id};
}

template <class Real>
Var<Real> sqrt_elem(Var<Real> a) {
    Tape<Real>& t = *a.tape;
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x = Real(std::sqrt(double(x)));
    int id = t.push(std::move(out), a.rg());
    t.set_backward(id, [aid = a.id, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        const Tensor<Real>& ov = tp.val(id);
        auto& ga = tp.grad(aid);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * Real(0.5) / ov[i];
    });
    return {&t, id};
}

// ---- matrix ops ----

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
    Tape<Real>& t = *a.tape;
    check(a.val().rank() == 2 && b.val().rank() == 2 && a.val().dim(1) == b.val().dim(0),
          "matmul: incompatible shapes " + a.val().shape_str() + " x " + b.val().shape_str());
    int n = a.val().dim(0), k = a.val().dim(1), m = b.val().dim(1);
    Tensor<Real> out({n, m});
    as_mat(out, n, m).noalias() = as_mat(a.val(), n, k) * as_mat(b.val(), k, m);
    int id = t.push(std::move(out), a.rg() || b.rg());
    t.set_backward(id, [aid = a.id, bid = b.id, arg = a.rg(), brg = b.rg(), n, k, m, id](Tape<Real>& tp) {
        auto g = as_mat(tp.grad(id), n, m);
        if (arg) as_mat(tp.grad(aid), n, k).noalias() += g * as_mat(tp.val(bid), k, m).transpose();
        if (brg) as_mat(tp.grad(bid), k, m).noalias() += as_mat(tp.val(aid), n, k).transpose() * g;
    });
    return {&t, id};
}

// x[N,K] * w[K,M] + b[M]; pass b.id < 0 to skip bias
template <class Real>
Var<Real> linear(Var<Real> x, Var<Real> w, Var<Real> b) {
    Tape<Real>& t = *x.tape;
    check(x.val().rank() == 2 && w.val().rank() == 2 && x.val().dim(1) == w.val().dim(0),
          "linear: incompatible shapes");
    int n = x.val().dim(0), k = x.val().dim(1), m = w.val().dim(1);
    bool has_bias = b.id >= 0;
    if (has_bias) check(b.val().numel() == m, "linear: bias size mismatch");
    Tensor<Real> out({n, m});
    auto om = as_mat(out, n, m);
    om.noalias() = as_mat(x.val(), n, k) * as_mat(w.val(), k, m);
    if (has_bias) om.rowwise() += Eigen::Map<const Eigen::RowVector<Real, Eigen::Dynamic>>(b.val().ptr(), m);
    bool rg = x.rg() || w.rg() || (has_bias && b.rg());
    int id = t.push(std::move(out), rg);
    t.set_backward(id, [xid = x.id, wid = w.id, bid = b.id, xrg = x.rg(), wrg = w.rg(),
                        brg = has_bias && b.rg(), n, k, m, id](Tape<Real>& tp) {
        auto g = as_mat(tp.grad(id), n, m);
        if (xrg) as_mat(tp.grad(xid), n, k).noalias() += g * as_mat(tp.val(wid), k, m).transpose();
        if (wrg) as_mat(tp.grad(wid), k, m).noalias() += as_mat(tp.val(xid), n, k).transpose() * g;
        if (brg) Eigen::Map<Eigen::RowVector<Real, Eigen::Dynamic>>(tp.grad(bid).ptr(), m) += g.colwise().sum();
    });
    return {&t, id};
}

template <class Real>
Var<Real> linear(Var<Real> x, Var<Real> w) {
    return linear(x, w, Var<Real>{x.tape, -1});
}

// broadcast row vector v[C] over rows of x[N,C]
template <class Real>
Var<Real> add_rowvec(Var<Real> x, Var<Real> v) {
    Tape<Real>& t = *x.tape;
    int n = x.val().rows(), c = x.val().cols();
    check(v.val().numel() == c, "add_rowvec: size mismatch");
    Tensor<Real> out = x.val();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[int64_t(i) * c + j] += v.val()[j];
    int id = t.push(std::move(out), x.rg() || v.rg());
    t.set_backward(id, [xid = x.id, vid = v.id, xrg = x.rg(), vrg = v.rg(), n, c, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        if (xrg) { auto& gx = tp.grad(xid); for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i]; }
        if (vrg) {
            auto& gv = tp.grad(vid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) gv[j] += g[int64_t(i) * c + j];
        }
    });
    return {&t, id};
}

// x[N,C] / v[C] per column
template <class Real>
Var<Real> div_rowvec(Var<Real> x, Var<Real> v) {
    Tape<Real>& t = *x.tape;
    int n = x.val().rows(), c = x.val().cols();
    check(v.val().numel() == c, "div_rowvec: size mismatch");
    Tensor<Real> out = x.val();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[int64_t(i) * c + j] /= v.val()[j];
    int id = t.push(std::move(out), x.rg() || v.rg());
    t.set_backward(id, [xid = x.id, vid = v.id, xrg = x.rg(), vrg = v.rg(), n, c, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        const Tensor<Real>& vv = tp.val(vid);
        if (xrg) {
            auto& gx = tp.grad(xid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) gx[int64_t(i) * c + j] += g[int64_t(i) * c + j] / vv[j];
        }
        if (vrg) {
            auto& gv = tp.grad(vid);
            const Tensor<Real>& xv = tp.val(xid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    int64_t p = int64_t(i) * c + j;
                    gv[j] -= g[p] * xv[p] / (vv[j] * vv[j]);
                }
        }
    });
    return {&t, id};
}

// ---- shape ops ----

template <class Real>
Var<Real> reshape(Var<Real> x, std::vector<int> shape) {
    Tape<Real>& t = *x.tape;
    check(Tensor<Real>::count(shape) == x.val().numel(), "reshape: element count mismatch");
    Tensor<Real> out(std::move(shape), x.val().data);
    int id = t.push(std::move(out), x.rg());
    t.set_backward(id, [xid = x.id, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& gx = tp.grad(xid);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
    return {&t, id};
}

template <class Real>
Var<Real> concat_cols(Var<Real> a, Var<Real> b) {
    Tape<Real>& t = *a.tape;
    check(a.val().rank() == 2 && b.val().rank() == 2 && a.val().dim(0) == b.val().dim(0),
          "concat_cols: row mismatch");
    int n = a.val().dim(0), ca = a.val().dim(1), cb = b.val().dim(1);
    Tensor<Real> out({n, ca + cb});
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.val().ptr() + int64_t(i) * ca, ca, out.ptr() + int64_t(i) * (ca + cb));
        std::copy_n(b.val().ptr() + int64_t(i) * cb, cb, out.ptr() + int64_t(i) * (ca + cb) + ca);
    }
    int id = t.push(std::move(out), a.rg() || b.rg());
    t.set_backward(id, [aid = a.id, bid = b.id, arg = a.rg(), brg = b.rg(), n, ca, cb, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        if (arg) {
            auto& ga = tp.grad(aid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < ca; ++j) ga[int64_t(i) * ca + j] += g[int64_t(i) * (ca + cb) + j];
        }
        if (brg) {
            auto& gb = tp.grad(bid);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < cb; ++j) gb[int64_t(i) * cb + j] += g[int64_t(i) * (ca + cb) + ca + j];
        }
    });
    return {&t, id};
}

// columns [c0, c1) of x[N,C]
template <class Real>
Var<Real> slice_cols(Var<Real> x, int c0, int c1) {
    Tape<Real>& t = *x.tape;
    check(x.val().rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= x.val().dim(1), "slice_cols: bad range");
    int n = x.val().dim(0), c = x.val().dim(1), w = c1 - c0;
    Tensor<Real> out({n, w});
    for (int i = 0; i < n; ++i)
        std::copy_n(x.val().ptr() + int64_t(i) * c + c0, w, out.ptr() + int64_t(i) * w);
    int id = t.push(std::move(out), x.rg());
    t.set_backward(id, [xid = x.id, n, c, c0, w, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& gx = tp.grad(xid);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j) gx[int64_t(i) * c + c0 + j] += g[int64_t(i) * w + j];
    });
    return {&t, id};
}

// append a constant 1 column: [N,C] -> [N,C+1]
template <class Real>
Var<Real> append_ones_col(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    int n = x.val().rows(), c = x.val().cols();
    Tensor<Real> out({n, c + 1});
    for (int i = 0; i < n; ++i) {
        std::copy_n(x.val().ptr() + int64_t(i) * c, c, out.ptr() + int64_t(i) * (c + 1));
        out[int64_t(i) * (c + 1) + c] = Real(1);
    }
    int id = t.push(std::move(out), x.rg());
    t.set_backward(id, [xid = x.id, n, c, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& gx = tp.grad(xid);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) gx[int64_t(i) * c + j] += g[int64_t(i) * (c + 1) + j];
    });
    return {&t, id};
}

// [N, r*cols] -> [N, cols], summing the r rank slices: out[n,d] = sum_i x[n, i*cols + d]
template <class Real>
Var<Real> sum_rank_groups(Var<Real> x, int r, int cols) {
    Tape<Real>& t = *x.tape;
    check(x.val().rank() == 2 && x.val().dim(1) == r * cols, "sum_rank_groups: shape mismatch");
    int n = x.val().dim(0);
    Tensor<Real> out({n, cols});
    for (int i = 0; i < n; ++i)
        for (int g = 0; g < r; ++g)
            for (int d = 0; d < cols; ++d)
                out[int64_t(i) * cols + d] += x.val()[int64_t(i) * r * cols + g * cols + d];
    int id = t.push(std::move(out), x.rg());
    t.set_backward(id, [xid = x.id, n, r, cols, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& gx = tp.grad(xid);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < r; ++k)
                for (int d = 0; d < cols; ++d)
                    gx[int64_t(i) * r * cols + k * cols + d] += g[int64_t(i) * cols + d];
    });
    return {&t, id};
}

// ---- reductions ----

template <class Real>
Var<Real> sum_all(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    Real s = 0;
    for (auto v : x.val().data) s += v;
    int id = t.push(Tensor<Real>({1}, {s}), x.rg());
    t.set_backward(id, [xid = x.id, id](Tape<Real>& tp) {
        Real g = tp.grad(id)[0];
        auto& gx = tp.grad(xid);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
    return {&t, id};
}

template <class Real>
Var<Real> mean_all(Var<Real> x) {
    return scale(sum_all(x), Real(1) / Real(x.val().numel()));
}

// column means of x[N,C] -> [C]
template <class Real>
Var<Real> col_mean(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    int n = x.val().rows(), c = x.val().cols();
    Tensor<Real> out({c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[j] += x.val()[int64_t(i) * c + j];
    for (int j = 0; j < c; ++j) out[j] /= Real(n);
    int id = t.push(std::move(out), x.rg());
    t.set_backward(id, [xid = x.id, n, c, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& gx = tp.grad(xid);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) gx[int64_t(i) * c + j] += g[j] / Real(n);
    });
    return {&t, id};
}

template <class Real>
Var<Real> col_sum(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    int n = x.val().rows(), c = x.val().cols();
    Tensor<Real> out({c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[j] += x.val()[int64_t(i) * c + j];
    int id = t.push(std::move(out), x.rg());
    t.set_backward(id, [xid = x.id, n, c, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& gx = tp.grad(xid);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) gx[int64_t(i) * c + j] += g[j];
    });
    return {&t, id};
}

// mean over groups of `rows_per_group` consecutive rows: [G*T, C] -> [G, C]
template <class Real>
Var<Real> group_mean_rows(Var<Real> x, int rows_per_group) {
    Tape<Real>& t = *x.tape;
    int n = x.val().rows(), c = x.val().cols();
    check(rows_per_group > 0 && n % rows_per_group == 0, "group_mean_rows: rows not divisible");
    int groups = n / rows_per_group;
    Tensor<Real> out({groups, c});
    for (int gi = 0; gi < groups; ++gi)
        for (int r = 0; r < rows_per_group; ++r)
            for (int j = 0; j < c; ++j)
                out[int64_t(gi) * c + j] += x.val()[(int64_t(gi) * rows_per_group + r) * c + j];
    for (auto& v : out.data) v /= Real(rows_per_group);
    int id = t.push(std::move(out), x.rg());
    t.set_backward(id, [xid = x.id, groups, rows_per_group, c, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& gx = tp.grad(xid);
        for (int gi = 0; gi < groups; ++gi)
            for (int r = 0; r < rows_per_group; ++r)
                for (int j = 0; j < c; ++j)
                    gx[(int64_t(gi) * rows_per_group + r) * c + j] += g[int64_t(gi) * c + j] / Real(rows_per_group);
    });
    return {&t, id};
}

// ---- row softmax ----

template <class Real>
Var<Real> row_softmax(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    int n = x.val().rows(), c = x.val().cols();
    Tensor<Real> out = x.val();
    for (int i = 0; i < n; ++i) {
        Real* row = out.ptr() + int64_t(i) * c;
        Real mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        Real s = 0;
        for (int j = 0; j < c; ++j) { row[j] = Real(std::exp(double(row[j] - mx))); s += row[j]; }
        for (int j = 0; j < c; ++j) row[j] /= s;
    }
    int id = t.push(std::move(out), x.rg());
    t.set_backward(id, [xid = x.id, n, c, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        const Tensor<Real>& p = tp.val(id);
        auto& gx = tp.grad(xid);
        for (int i = 0; i < n; ++i) {
            const Real* pr = p.ptr() + int64_t(i) * c;
            const Real* gr = g.ptr() + int64_t(i) * c;
            Real dot = 0;
            for (int j = 0; j < c; ++j) dot += pr[j] * gr[j];
            Real* gxr = gx.ptr() + int64_t(i) * c;
            for (int j = 0; j < c; ++j) gxr[j] += pr[j] * (gr[j] - dot);
        }
    });
    return {&t, id};
}

// ---- layer norm over the last (channel) axis of token rows ----

template <class Real>
Var<Real> layernorm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Real eps = Real(1e-5)) {
    Tape<Real>& t = *x.tape;
    int64_t total = x.val().numel();
    int c = x.val().shape.back();
    check(gamma.val().numel() == c && beta.val().numel() == c, "layernorm: affine size mismatch");
    int n = int(total / c);
    Tensor<Real> out = x.val();
    Tensor<Real> inv_std({n});
    Tensor<Real> xhat({n, c});
    for (int i = 0; i < n; ++i) {
        Real* row = out.ptr() + int64_t(i) * c;
        Real mu = 0;
        for (int j = 0; j < c; ++j) mu += row[j];
        mu /= Real(c);
        Real var = 0;
        for (int j = 0; j < c; ++j) { Real d = row[j] - mu; var += d * d; }
        var /= Real(c);
        Real is = Real(1) / Real(std::sqrt(double(var + eps)));
        inv_std[i] = is;
        for (int j = 0; j < c; ++j) {
            Real h = (row[j] - mu) * is;
            xhat[int64_t(i) * c + j] = h;
            row[j] = gamma.val()[j] * h + beta.val()[j];
        }
    }
    int id = t.push(std::move(out), x.rg() || gamma.rg() || beta.rg());
    if (t.recording)
        t.set_backward(id, [xid = x.id, gid = gamma.id, bid = beta.id, xrg = x.rg(),
                            grg = gamma.rg(), brg = beta.rg(), n, c, inv_std, xhat, id](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad(id);
            const Tensor<Real>& gam = tp.val(gid);
            if (grg) {
                auto& gg = tp.grad(gid);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j) gg[j] += g[int64_t(i) * c + j] * xhat[int64_t(i) * c + j];
            }
            if (brg) {
                auto& gb = tp.grad(bid);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j) gb[j] += g[int64_t(i) * c + j];
            }
            if (xrg) {
                auto& gx = tp.grad(xid);
                for (int i = 0; i < n; ++i) {
                    Real mean_d = 0, mean_dh = 0;
                    for (int j = 0; j < c; ++j) {
                        Real d = g[int64_t(i) * c + j] * gam[j];
                        mean_d += d;
                        mean_dh += d * xhat[int64_t(i) * c + j];
                    }
                    mean_d /= Real(c);
                    mean_dh /= Real(c);
                    for (int j = 0; j < c; ++j) {
                        Real d = g[int64_t(i) * c + j] * gam[j];
                        gx[int64_t(i) * c + j] += inv_std[i] * (d - mean_d - xhat[int64_t(i) * c + j] * mean_dh);
                    }
                }
            }
        });
    return {&t, id};
}

} // namespace ops
} // namespace moon

#endif
