#ifndef MOON_NN_HPP
#define MOON_NN_HPP

#include <cmath>

#include "moon/attention.hpp"
#include "moon/ops3d.hpp"

namespace moon {

// Dense layer with He-uniform ("conv") or scaled-normal ("attention/linear")
// initialization. A 1x1x1 convolution on token rows is the same thing.
template <class Real>
struct Linear {
    Param<Real> w, b;
    bool has_bias = true;

    void init(Rng& rng, int fan_in, int fan_out, bool bias, bool conv_style, double gain = 1.0) {
        has_bias = bias;
        w.init_shape({fan_in, fan_out});
        if (conv_style) {
            double bound = gain * std::sqrt(6.0 / fan_in);
            w.fill_uniform(rng, -bound, bound);
        } else {
            w.fill_normal(rng, 0.0, gain / std::sqrt(double(fan_in)));
        }
        if (has_bias) {
            b.init_shape({fan_out});
            b.fill_const(Real(0));
        }
    }

    Var<Real> operator()(Tape<Real>& t, Var<Real> x) {
        if (has_bias) return ops::linear(x, w.use(t), b.use(t));
        return ops::linear(x, w.use(t));
    }

    void collect(const std::string& prefix, ParamList<Real>& out) {
        w.name = prefix + ".w";
        out.push_back(&w);
        if (has_bias) {
            b.name = prefix + ".b";
            out.push_back(&b);
        }
    }
};

template <class Real>
struct LayerNorm {
    Param<Real> gamma, beta;

    void init(int c) {
        gamma.init_shape({c});
        gamma.fill_const(Real(1));
        beta.init_shape({c});
        beta.fill_const(Real(0));
    }

    Var<Real> operator()(Tape<Real>& t, Var<Real> x) {
        return ops::layernorm(x, gamma.use(t), beta.use(t));
    }

    void collect(const std::string& prefix, ParamList<Real>& out) {
        gamma.name = prefix + ".gamma";
        beta.name = prefix + ".beta";
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

namespace ops {

// reshape a [B,H,W,D,C] map to token rows [B*H*W*D, C]
template <class Real>
Var<Real> to_tokens(Var<Real> x) {
    const auto& s = x.val().shape;
    check(s.size() == 5, "to_tokens: expected [B,H,W,D,C]");
    return reshape(x, {int(s[0]) * s[1] * s[2] * s[3], s[4]});
}

template <class Real>
Var<Real> to_map(Var<Real> tokens, int b, Dims3 d, int c) {
    return reshape(tokens, {b, d.h, d.w, d.d, c});
}

// broadcast-add a [T,C] embedding over each of the B token groups
template <class Real>
Var<Real> add_tiled_rows(Var<Real> x, Var<Real> p, int batch) {
    Tape<Real>& t = *x.tape;
    int n = x.val().rows(), c = x.val().cols();
    check(p.val().rank() == 2 && p.val().dim(1) == c && n == batch * p.val().dim(0),
          "add_tiled_rows: shape mismatch");
    int rows = p.val().dim(0);
    Tensor<Real> out = x.val();
    for (int bb = 0; bb < batch; ++bb)
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < c; ++j) out[(int64_t(bb) * rows + i) * c + j] += p.val()[int64_t(i) * c + j];
    int id = t.push(std::move(out), x.rg() || p.rg());
    t.set_backward(id, [xid = x.id, pid = p.id, xrg = x.rg(), prg = p.rg(), batch, rows, c, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        if (xrg) {
            auto& gx = tp.grad(xid);
            for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        }
        if (prg) {
            auto& gp = tp.grad(pid);
            for (int bb = 0; bb < batch; ++bb)
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < c; ++j) gp[int64_t(i) * c + j] += g[(int64_t(bb) * rows + i) * c + j];
        }
    });
    return {&t, id};
}

} // namespace ops
} // namespace moon

#endif
