#ifndef MOON_HFE_HPP
#define MOON_HFE_HPP

#include "moon/nn.hpp"

namespace moon {

// Hierarchical feature enhancement of the esophagus branch: queries from the
// intermediate stage, keys from the deeper stage, values from the deepest;
// cross-attention output is refined pointwise and added back onto F3.
template <class Real>
struct HfeParams {
    int channels = 0;
    int heads = 1;
    Linear<Real> adapt1, adapt2; // 1x1x1 convs after pooling F1/F2 to F3 dims
    Linear<Real> wq, wk, wv;
    Linear<Real> out_conv;

    void init(Rng& rng, int c1, int c2, int c3, int n_heads) {
        channels = c3;
        heads = n_heads;
        adapt1.init(rng, c1, c3, true, true);
        adapt2.init(rng, c2, c3, true, true);
        wq.init(rng, c3, c3, false, false);
        wk.init(rng, c3, c3, false, false);
        wv.init(rng, c3, c3, false, false);
        out_conv.init(rng, c3, c3, true, true, 0.1); // near-zero residual start
    }

    void collect(const std::string& p, ParamList<Real>& out) {
        adapt1.collect(p + ".adapt1", out);
        adapt2.collect(p + ".adapt2", out);
        wq.collect(p + ".wq", out);
        wk.collect(p + ".wk", out);
        wv.collect(p + ".wv", out);
        out_conv.collect(p + ".out_conv", out);
    }
};

namespace ops {

template <class Real>
Var<Real> hfe_enhance(Tape<Real>& t, Var<Real> f1, Var<Real> f2, Var<Real> f3, HfeParams<Real>& hfe,
                      int batch) {
    const auto& s3 = f3.val().shape;
    check(s3.size() == 5, "hfe_enhance: expected feature maps");
    check(s3[4] == hfe.channels, "hfe_enhance: channel count mismatch");
    Dims3 dims{s3[1], s3[2], s3[3]};

    Var<Real> a1 = hfe.adapt1(t, to_tokens(adaptive_avg_pool3d(f1, dims)));
    Var<Real> a2 = hfe.adapt2(t, to_tokens(adaptive_avg_pool3d(f2, dims)));
    Var<Real> v3 = to_tokens(f3);

    Var<Real> att = multihead_attention(hfe.wq(t, a1), hfe.wk(t, a2), hfe.wv(t, v3), batch, hfe.heads);
    Var<Real> refined = hfe.out_conv(t, att);
    return add(f3, to_map(refined, batch, dims, hfe.channels));
}

} // namespace ops
} // namespace moon

#endif
