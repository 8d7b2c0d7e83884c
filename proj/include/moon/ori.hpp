#ifndef MOON_ORI_HPP
#define MOON_ORI_HPP

#include "moon/nn.hpp"

namespace moon {

namespace ops {

// Adaptive average pooling onto the stage's common interaction grid.
template <class Real>
Var<Real> pool_to_common_grid(Var<Real> f, Dims3 grid) {
    return adaptive_avg_pool3d(f, grid);
}

} // namespace ops

// One esophagus<->partner interaction: pool both maps to the common grid,
// concatenate channels, run self-attention over every grid token, project by
// W_P, split the halves back, refine each with a pointwise convolution and
// interpolate to the native stage dims as residual deltas.
template <class Real>
struct OriPair {
    int channels = 0;
    int heads = 1;
    Dims3 grid{4, 4, 4};
    Linear<Real> wq, wk, wv; // 2C -> 2C token transforms
    Param<Real> wp;          // 2C x 2C projection matrix
    Linear<Real> conv_e, conv_x; // pointwise C -> C refinements

    void init(Rng& rng, int c, int n_heads, Dims3 g) {
        channels = c;
        heads = n_heads;
        grid = g;
        int c2 = 2 * c;
        wq.init(rng, c2, c2, false, false);
        wk.init(rng, c2, c2, false, false);
        wv.init(rng, c2, c2, false, false);
        wp.init_shape({c2, c2});
        wp.fill_normal(rng, 0.0, 1.0 / std::sqrt(double(c2)));
        // refinement convs start near zero: the residual deltas grow from an
        // identity-like state instead of perturbing early training
        conv_e.init(rng, c, c, true, true, 0.1);
        conv_x.init(rng, c, c, true, true, 0.1);
    }

    void collect(const std::string& p, ParamList<Real>& out) {
        wq.collect(p + ".wq", out);
        wk.collect(p + ".wk", out);
        wv.collect(p + ".wv", out);
        wp.name = p + ".wp";
        out.push_back(&wp);
        conv_e.collect(p + ".conv_e", out);
        conv_x.collect(p + ".conv_x", out);
    }
};

namespace ops {

template <class Real>
std::pair<Var<Real>, Var<Real>> ori_interact(Tape<Real>& t, Var<Real> f_e, Var<Real> f_x,
                                             OriPair<Real>& pair, int batch) {
    const auto& se = f_e.val().shape;
    const auto& sx = f_x.val().shape;
    check(se.size() == 5 && sx.size() == 5, "ori_interact: expected feature maps");
    check(se[4] == sx[4] && se[4] == pair.channels, "ori_interact: channel count mismatch");
    int c = pair.channels;
    Dims3 dims_e{se[1], se[2], se[3]}, dims_x{sx[1], sx[2], sx[3]};
    Dims3 g = pair.grid;
    int tokens = g.h * g.w * g.d;

    Var<Real> pe = pool_to_common_grid(f_e, g);
    Var<Real> px = pool_to_common_grid(f_x, g);
    Var<Real> x_s = concat_cols(to_tokens(pe), to_tokens(px)); // [B*T, 2C]

    Var<Real> att = multihead_attention(pair.wq(t, x_s), pair.wk(t, x_s), pair.wv(t, x_s), batch, pair.heads);
    Var<Real> x_p = matmul(att, pair.wp.use(t)); // T_S W_P

    Var<Real> half_e = pair.conv_e(t, slice_cols(x_p, 0, c));
    Var<Real> half_x = pair.conv_x(t, slice_cols(x_p, c, 2 * c));

    Var<Real> de = upsample_trilinear(to_map(half_e, batch, Dims3{g.h, g.w, g.d}, c), dims_e);
    Var<Real> dx = upsample_trilinear(to_map(half_x, batch, Dims3{g.h, g.w, g.d}, c), dims_x);
    (void)tokens;
    return {de, dx};
}

// Residual interaction of one stage: (E,L) and (E,S) pairs; the esophageal
// deltas are averaged so magnitude matches single-pair operation.
template <class Real>
std::array<Var<Real>, 3> apply_ori_stage(Tape<Real>& t, Var<Real> f_e, Var<Real> f_l, Var<Real> f_s,
                                         OriPair<Real>& pair_el, OriPair<Real>& pair_es, int batch) {
    auto [de_l, dl] = ori_interact(t, f_e, f_l, pair_el, batch);
    auto [de_s, ds] = ori_interact(t, f_e, f_s, pair_es, batch);
    Var<Real> f_e2 = add(f_e, scale(add(de_l, de_s), Real(0.5)));
    Var<Real> f_l2 = add(f_l, dl);
    Var<Real> f_s2 = add(f_s, ds);
    return {f_e2, f_l2, f_s2};
}

} // namespace ops

// ORI parameters for one stage (both pairs).
template <class Real>
struct OriStage {
    OriPair<Real> el, es;

    void init(Rng& rng, int c, int heads, Dims3 grid) {
        el.init(rng, c, heads, grid);
        es.init(rng, c, heads, grid);
    }
    void collect(const std::string& p, ParamList<Real>& out) {
        el.collect(p + ".el", out);
        es.collect(p + ".es", out);
    }
};

} // namespace moon

#endif
