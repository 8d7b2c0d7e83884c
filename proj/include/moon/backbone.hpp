#ifndef MOON_BACKBONE_HPP
#define MOON_BACKBONE_HPP

#include "moon/dataset.hpp"
#include "moon/nn.hpp"

namespace moon {

// Staged 3D encoder: non-overlapping patchify transitions, depthwise-conv
// blocks in the two shallow stages, self-attention blocks in the two deep
// stages, a learned additive position embedding per global stage.
struct EncoderConfig {
    std::array<int, 4> channels{16, 32, 64, 64};
    std::array<int, 4> blocks{1, 1, 1, 1};
    std::array<Dims3, 4> strides{Dims3{2, 2, 2}, Dims3{2, 2, 2}, Dims3{1, 1, 1}, Dims3{1, 1, 1}};
    int heads = 4;
    int mlp_ratio = 2;
    Dims3 input_dims{0, 0, 0};

    static bool stage_is_global(int s) { return s >= 2; }

    void validate() const {
        for (int s = 0; s < 4; ++s) {
            check(channels[size_t(s)] >= 1 && blocks[size_t(s)] >= 0, "encoder: bad widths/blocks");
            const Dims3& st = strides[size_t(s)];
            check(st.h >= 1 && st.w >= 1 && st.d >= 1, "encoder: strides must be >= 1");
            if (stage_is_global(s))
                check(channels[size_t(s)] % heads == 0, "encoder: channels must divide by head count");
        }
        check(heads >= 1 && mlp_ratio >= 1, "encoder: bad heads/mlp_ratio");
    }

    Dims3 stage_dims(int s, Dims3 in) const {
        Dims3 d = in;
        for (int i = 0; i <= s; ++i) {
            const Dims3& st = strides[size_t(i)];
            d = {(d.h + st.h - 1) / st.h, (d.w + st.w - 1) / st.w, (d.d + st.d - 1) / st.d};
        }
        return d;
    }
};

// Stride schedule that halves aggressively while keeping every ORI-visible
// stage (2..4) at or above the common-grid floor of 4 voxels per axis.
inline EncoderConfig default_encoder_config(Dims3 roi_dims) {
    EncoderConfig cfg;
    cfg.input_dims = roi_dims;
    auto pick = [](int cur, bool first) {
        if (first) {
            if (cur >= 32) return 4;
            if (cur >= 12) return 2;
            return 1;
        }
        return (cur + 1) / 2 >= 4 ? 2 : 1;
    };
    Dims3 cur = roi_dims;
    for (int s = 0; s < 4; ++s) {
        Dims3 st{1, 1, 1};
        if (s < 3) {
            st.h = pick(cur.h, s == 0);
            st.w = pick(cur.w, s == 0);
            st.d = pick(cur.d, s == 0);
        }
        cfg.strides[size_t(s)] = st;
        cur = {(cur.h + st.h - 1) / st.h, (cur.w + st.w - 1) / st.w, (cur.d + st.d - 1) / st.d};
    }
    return cfg;
}

template <class Real>
struct StagePyramid {
    Var<Real> f1, f2, f3; // stages 2, 3, 4 (post-interaction when ORI runs)
    Var<Real> pooled;     // global-average embedding of f3
};

namespace detail {

template <class Real>
struct EncoderBlock {
    bool global = false;
    int heads = 1;
    int channels = 0;
    Param<Real> dw_w, dw_b; // local
    LayerNorm<Real> ln_attn;
    Linear<Real> wq, wk, wv, wo; // global
    LayerNorm<Real> ln_mlp;
    Linear<Real> fc1, fc2;

    void init(Rng& rng, int c, bool is_global, int n_heads, int mlp_ratio) {
        global = is_global;
        heads = n_heads;
        channels = c;
        if (global) {
            ln_attn.init(c);
            wq.init(rng, c, c, false, false);
            wk.init(rng, c, c, false, false);
            wv.init(rng, c, c, false, false);
            wo.init(rng, c, c, true, false);
        } else {
            dw_w.init_shape({27, c});
            double bound = std::sqrt(6.0 / 27.0);
            dw_w.fill_uniform(rng, -bound, bound);
            dw_b.init_shape({c});
            dw_b.fill_const(Real(0));
        }
        ln_mlp.init(c);
        fc1.init(rng, c, c * mlp_ratio, true, false);
        fc2.init(rng, c * mlp_ratio, c, true, false);
    }

    // x is a [B,h,w,d,C] map
    Var<Real> forward(Tape<Real>& t, Var<Real> x, int batch) {
        const auto& s = x.val().shape;
        Dims3 dims{s[1], s[2], s[3]};
        int c = s[4];
        if (!global) x = ops::add(x, ops::dwconv3(x, dw_w.use(t), dw_b.use(t)));
        Var<Real> tok = ops::to_tokens(x);
        if (global) {
            Var<Real> h = ln_attn(t, tok);
            Var<Real> att = ops::multihead_attention(wq(t, h), wk(t, h), wv(t, h), batch, heads);
            tok = ops::add(tok, wo(t, att));
        }
        tok = ops::add(tok, fc2(t, ops::gelu(fc1(t, ln_mlp(t, tok)))));
        return ops::to_map(tok, batch, dims, c);
    }

    void collect(const std::string& p, ParamList<Real>& out) {
        if (global) {
            ln_attn.collect(p + ".ln_attn", out);
            wq.collect(p + ".wq", out);
            wk.collect(p + ".wk", out);
            wv.collect(p + ".wv", out);
            wo.collect(p + ".wo", out);
        } else {
            dw_w.name = p + ".dw.w";
            dw_b.name = p + ".dw.b";
            out.push_back(&dw_w);
            out.push_back(&dw_b);
        }
        ln_mlp.collect(p + ".ln_mlp", out);
        fc1.collect(p + ".fc1", out);
        fc2.collect(p + ".fc2", out);
    }
};

template <class Real>
struct EncoderStage {
    Dims3 stride;
    bool global = false;
    int channels = 0;
    Param<Real> embed_w, embed_b;
    LayerNorm<Real> embed_ln;
    Param<Real> pos; // [T,C], global stages
    Dims3 pos_dims;
    std::vector<EncoderBlock<Real>> blocks;

    void init(Rng& rng, int c_in, int c_out, Dims3 st, bool is_global, int n_blocks, int heads,
              int mlp_ratio, Dims3 configured_dims) {
        stride = st;
        global = is_global;
        channels = c_out;
        int k = st.h * st.w * st.d * c_in;
        embed_w.init_shape({k, c_out});
        double bound = std::sqrt(6.0 / k);
        embed_w.fill_uniform(rng, -bound, bound);
        embed_b.init_shape({c_out});
        embed_b.fill_const(Real(0));
        embed_ln.init(c_out);
        if (global) {
            pos_dims = configured_dims;
            pos.init_shape({pos_dims.h * pos_dims.w * pos_dims.d, c_out});
            pos.fill_normal(rng, 0.0, 0.02);
        }
        blocks.resize(size_t(n_blocks));
        for (auto& b : blocks) b.init(rng, c_out, is_global, heads, mlp_ratio);
    }

    Var<Real> forward(Tape<Real>& t, Var<Real> x, int batch) {
        x = ops::patch_embed(x, embed_w.use(t), embed_b.use(t), stride);
        const auto& s = x.val().shape;
        Dims3 dims{s[1], s[2], s[3]};
        Var<Real> tok = embed_ln(t, ops::to_tokens(x));
        if (global) {
            Var<Real> p = pos.use(t);
            if (!(dims == pos_dims)) {
                // off-schedule input dims: resample the embedding grid
                Var<Real> pm = ops::reshape(p, {1, pos_dims.h, pos_dims.w, pos_dims.d, channels});
                p = ops::to_tokens(ops::upsample_trilinear(pm, dims));
            }
            tok = ops::add_tiled_rows(tok, p, batch);
        }
        x = ops::to_map(tok, batch, dims, channels);
        for (auto& b : blocks) x = b.forward(t, x, batch);
        return x;
    }

    void collect(const std::string& p, ParamList<Real>& out) {
        embed_w.name = p + ".embed.w";
        embed_b.name = p + ".embed.b";
        out.push_back(&embed_w);
        out.push_back(&embed_b);
        embed_ln.collect(p + ".embed_ln", out);
        if (global) {
            pos.name = p + ".pos";
            out.push_back(&pos);
        }
        for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(p + ".blk" + std::to_string(i), out);
    }
};

} // namespace detail

template <class Real>
struct Encoder {
    EncoderConfig cfg;
    std::array<detail::EncoderStage<Real>, 4> stages;

    void init(Rng& rng, const EncoderConfig& c) {
        cfg = c;
        cfg.validate();
        int c_in = 1;
        for (int s = 0; s < 4; ++s) {
            stages[size_t(s)].init(rng, c_in, cfg.channels[size_t(s)], cfg.strides[size_t(s)],
                                   EncoderConfig::stage_is_global(s), cfg.blocks[size_t(s)], cfg.heads,
                                   cfg.mlp_ratio, cfg.stage_dims(s, cfg.input_dims));
            c_in = cfg.channels[size_t(s)];
        }
    }

    void check_input(const Tensor<Real>& x) const {
        check(x.rank() == 5 && x.dim(4) == 1, "encoder: input must be [B,H,W,D,1]");
        int ph = 1, pw = 1, pd = 1;
        for (const Dims3& st : cfg.strides) {
            ph *= st.h;
            pw *= st.w;
            pd *= st.d;
        }
        if (x.dim(1) < ph || x.dim(2) < pw || x.dim(3) < pd)
            throw ContractError("encoder: input volume smaller than total stride product");
    }

    Var<Real> forward_stage(Tape<Real>& t, int s, Var<Real> x, int batch) {
        return stages[size_t(s)].forward(t, x, batch);
    }

    // Full per-branch pass without cross-organ interaction.
    StagePyramid<Real> encode(Tape<Real>& t, Var<Real> x, int batch) {
        check_input(x.val());
        StagePyramid<Real> pyr;
        x = forward_stage(t, 0, x, batch);
        pyr.f1 = x = forward_stage(t, 1, x, batch);
        pyr.f2 = x = forward_stage(t, 2, x, batch);
        pyr.f3 = x = forward_stage(t, 3, x, batch);
        pyr.pooled = pool(t, pyr.f3, batch);
        return pyr;
    }

    static Var<Real> pool(Tape<Real>& t, Var<Real> f3, int batch) {
        Var<Real> tok = ops::to_tokens(f3);
        return ops::group_mean_rows(tok, tok.val().dim(0) / batch);
    }

    void collect(const std::string& p, ParamList<Real>& out) {
        for (int s = 0; s < 4; ++s) stages[size_t(s)].collect(p + ".s" + std::to_string(s + 1), out);
    }
};

} // namespace moon

#endif
