#ifndef MOON_MODEL_HPP
#define MOON_MODEL_HPP

#include "moon/backbone.hpp"
#include "moon/heads.hpp"
#include "moon/hfe.hpp"
#include "moon/ori.hpp"

namespace moon {

struct ModelConfig {
    std::array<int, 4> channels{16, 32, 64, 64};
    std::array<int, 4> blocks{1, 1, 1, 1};
    int heads = 4;
    int mlp_ratio = 2;
    std::array<Dims3, 3> roi_dims{Dims3{10, 10, 25}, Dims3{64, 49, 9}, Dims3{38, 49, 6}};
    Dims3 ori_grid{4, 4, 4};
    bool use_ori = true;
    bool use_hfe = true;
    FusionKind fusion = FusionKind::Concat;
    int lowrank_rank = 4;
    int single_organ = -1; // -1 = multi-organ, else Organ index
    uint64_t init_seed = 1;

    EncoderConfig encoder_config(int organ) const {
        EncoderConfig e = default_encoder_config(roi_dims[size_t(organ)]);
        e.channels = channels;
        e.blocks = blocks;
        e.heads = heads;
        e.mlp_ratio = mlp_ratio;
        return e;
    }

    bool multi_organ() const { return single_organ < 0; }

    void validate() const {
        check(single_organ >= -1 && single_organ < 3, "model: bad single_organ");
        check(lowrank_rank >= 1, "model: lowrank rank must be >= 1");
        if (multi_organ() && use_ori) {
            for (int o = 0; o < 3; ++o) {
                EncoderConfig e = encoder_config(o);
                for (int s = 1; s < 4; ++s) {
                    Dims3 d = e.stage_dims(s, e.input_dims);
                    check(d.h >= ori_grid.h && d.w >= ori_grid.w && d.d >= ori_grid.d,
                          "model: stage dims fall below the ORI common grid for organ " +
                              std::string(to_string(Organ(o))));
                }
            }
        }
    }
};

// Per-branch final-stage features plus all logits of one forward pass.
template <class Real>
struct ModelOutput {
    Var<Real> h_e, h_l, h_s; // branch ordinal logits [n,2]
    Var<Real> h_f;           // fused logits [n,2]
    std::array<Var<Real>, 3> f3;     // pre-pooling final maps (Grad-CAM targets)
    std::array<Var<Real>, 3> pooled; // branch embeddings [n,C]
};

template <class Real>
struct MoonModel {
    ModelConfig cfg;
    std::array<Encoder<Real>, 3> enc;
    std::array<OriStage<Real>, 3> ori; // after stages 2,3,4
    HfeParams<Real> hfe;
    std::array<BranchHead<Real>, 3> head;
    FusionParams<Real> fusion;

    void init(const ModelConfig& c) {
        cfg = c;
        cfg.validate();
        // the interaction modules draw from their own stream so that ablated
        // and full models share identical backbone/head initial weights at a
        // given seed
        Rng rng(hash_combine(cfg.init_seed, 0x4d4f4f4eull)); // "MOON"
        Rng module_rng(hash_combine(cfg.init_seed, 0x4f52492full)); // "ORI/"
        if (cfg.multi_organ()) {
            for (int o = 0; o < 3; ++o) enc[size_t(o)].init(rng, cfg.encoder_config(o));
            if (cfg.use_ori)
                for (int s = 0; s < 3; ++s)
                    ori[size_t(s)].init(module_rng, cfg.channels[size_t(s + 1)], cfg.heads, cfg.ori_grid);
            if (cfg.use_hfe)
                hfe.init(module_rng, cfg.channels[1], cfg.channels[2], cfg.channels[3], cfg.heads);
            // modules refine an already-learnable backbone; they train at
            // half rate so early epochs match the module-free path
            ParamList<Real> slow;
            for (int s = 0; s < 3; ++s)
                if (cfg.use_ori) ori[size_t(s)].collect("tmp", slow);
            if (cfg.use_hfe) hfe.collect("tmp", slow);
            for (Param<Real>* p : slow) p->lr_scale = 0.5;
            for (int o = 0; o < 3; ++o) head[size_t(o)].init(rng, cfg.channels[3]);
            fusion.init(rng, cfg.fusion, cfg.channels[3], cfg.lowrank_rank);
        } else {
            int o = cfg.single_organ;
            enc[size_t(o)].init(rng, cfg.encoder_config(o));
            head[size_t(o)].init(rng, cfg.channels[3]);
        }
    }

    ParamList<Real> params() {
        ParamList<Real> out;
        if (cfg.multi_organ()) {
            const char* tag[3] = {"enc_e", "enc_l", "enc_s"};
            for (int o = 0; o < 3; ++o) enc[size_t(o)].collect(tag[size_t(o)], out);
            if (cfg.use_ori)
                for (int s = 0; s < 3; ++s) ori[size_t(s)].collect("ori.s" + std::to_string(s + 2), out);
            if (cfg.use_hfe) hfe.collect("hfe", out);
            const char* htag[3] = {"head_e", "head_l", "head_s"};
            for (int o = 0; o < 3; ++o) head[size_t(o)].collect(htag[size_t(o)], out);
            fusion.collect("fusion", out);
        } else {
            int o = cfg.single_organ;
            enc[size_t(o)].collect("enc_single", out);
            head[size_t(o)].collect("head_single", out);
        }
        return out;
    }

    int64_t param_count() {
        int64_t n = 0;
        for (Param<Real>* p : params()) n += p->value.numel();
        return n;
    }

    // organs[o] is a [B,H,W,D,1] stack; unused organs may be empty in
    // single-organ mode.
    ModelOutput<Real> forward(Tape<Real>& t, const std::array<Tensor<Real>, 3>& organs) {
        if (!cfg.multi_organ()) {
            int o = cfg.single_organ;
            int batch = organs[size_t(o)].dim(0);
            enc[size_t(o)].check_input(organs[size_t(o)]);
            Var<Real> x = constant(t, organs[size_t(o)]);
            StagePyramid<Real> pyr = enc[size_t(o)].encode(t, x, batch);
            Var<Real> logits = head[size_t(o)](t, pyr.pooled);
            ModelOutput<Real> out;
            out.h_e = out.h_l = out.h_s = out.h_f = logits;
            out.f3[size_t(o)] = pyr.f3;
            out.pooled[size_t(o)] = pyr.pooled;
            return out;
        }

        int batch = organs[0].dim(0);
        check(organs[1].dim(0) == batch && organs[2].dim(0) == batch, "model: organ batch mismatch");
        std::array<Var<Real>, 3> x;
        for (int o = 0; o < 3; ++o) {
            enc[size_t(o)].check_input(organs[size_t(o)]);
            x[size_t(o)] = constant(t, organs[size_t(o)]);
            x[size_t(o)] = enc[size_t(o)].forward_stage(t, 0, x[size_t(o)], batch);
        }
        std::array<Var<Real>, 3> f1, f2, f3;
        for (int s = 1; s < 4; ++s) {
            for (int o = 0; o < 3; ++o) x[size_t(o)] = enc[size_t(o)].forward_stage(t, s, x[size_t(o)], batch);
            if (cfg.use_ori) {
                auto r = ops::apply_ori_stage(t, x[0], x[1], x[2], ori[size_t(s - 1)].el,
                                              ori[size_t(s - 1)].es, batch);
                x = {r[0], r[1], r[2]};
            }
            (s == 1 ? f1 : s == 2 ? f2 : f3) = x;
        }
        if (cfg.use_hfe) f3[0] = ops::hfe_enhance(t, f1[0], f2[0], f3[0], hfe, batch);

        ModelOutput<Real> out;
        out.f3 = f3;
        for (int o = 0; o < 3; ++o) out.pooled[size_t(o)] = Encoder<Real>::pool(t, f3[size_t(o)], batch);
        out.h_e = head[0](t, out.pooled[0]);
        out.h_l = head[1](t, out.pooled[1]);
        out.h_s = head[2](t, out.pooled[2]);
        out.h_f = ops::fuse(t, fusion, out.pooled[0], out.pooled[1], out.pooled[2], out.h_e, out.h_l, out.h_s);
        return out;
    }
};

} // namespace moon

#endif
