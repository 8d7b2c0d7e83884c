#ifndef MOON_HEADS_HPP
#define MOON_HEADS_HPP

#include "moon/dataset.hpp"
#include "moon/nn.hpp"

namespace moon {

enum class FusionKind : int { Concat = 0, PredSum = 1, LowRank = 2, FiLM = 3 };

const char* to_string(FusionKind k);
FusionKind fusion_from_string(const std::string& s);

inline const char* to_string(FusionKind k) {
    switch (k) {
        case FusionKind::Concat: return "concat";
        case FusionKind::PredSum: return "predsum";
        case FusionKind::LowRank: return "lowrank";
        case FusionKind::FiLM: return "film";
    }
    return "?";
}

inline FusionKind fusion_from_string(const std::string& s) {
    if (s == "concat") return FusionKind::Concat;
    if (s == "predsum") return FusionKind::PredSum;
    if (s == "lowrank") return FusionKind::LowRank;
    if (s == "film") return FusionKind::FiLM;
    throw ContractError("unknown fusion strategy: " + s);
}

// Affine map from a pooled embedding to the two ordinal threshold logits.
template <class Real>
struct BranchHead {
    Linear<Real> fc;
    void init(Rng& rng, int c) { fc.init(rng, c, kNumThresholds, true, false); }
    Var<Real> operator()(Tape<Real>& t, Var<Real> pooled) { return fc(t, pooled); }
    void collect(const std::string& p, ParamList<Real>& out) { fc.collect(p + ".fc", out); }
};

// Parameters for the four fusion strategies. Only the active strategy's
// parameters are allocated.
template <class Real>
struct FusionParams {
    FusionKind kind = FusionKind::Concat;
    int rank = 4;
    int channels = 0;
    Linear<Real> concat_fc;                  // 3C -> 2
    std::array<Param<Real>, 3> lowrank_u;    // [C+1, rank*2] per modality
    Linear<Real> film_gamma, film_beta;      // 2C -> C generators from (e_L, e_S)
    Linear<Real> film_head;                  // C -> 2

    void init(Rng& rng, FusionKind k, int c, int r) {
        kind = k;
        rank = r;
        channels = c;
        switch (kind) {
            case FusionKind::Concat:
                concat_fc.init(rng, 3 * c, kNumThresholds, true, false);
                break;
            case FusionKind::PredSum:
                break;
            case FusionKind::LowRank:
                check(rank >= 1, "fusion: lowrank rank must be >= 1");
                for (auto& u : lowrank_u) {
                    u.init_shape({c + 1, rank * kNumThresholds});
                    u.fill_normal(rng, 0.0, 1.0 / std::sqrt(double(c + 1)));
                }
                break;
            case FusionKind::FiLM:
                film_gamma.init(rng, 2 * c, c, true, false);
                film_gamma.b.fill_const(Real(1)); // identity modulation at init
                film_beta.init(rng, 2 * c, c, true, false);
                film_head.init(rng, c, kNumThresholds, true, false);
                break;
        }
    }

    void collect(const std::string& p, ParamList<Real>& out) {
        switch (kind) {
            case FusionKind::Concat:
                concat_fc.collect(p + ".concat_fc", out);
                break;
            case FusionKind::PredSum:
                break;
            case FusionKind::LowRank:
                for (int m = 0; m < 3; ++m) {
                    lowrank_u[size_t(m)].name = p + ".lowrank_u" + std::to_string(m);
                    out.push_back(&lowrank_u[size_t(m)]);
                }
                break;
            case FusionKind::FiLM:
                film_gamma.collect(p + ".film_gamma", out);
                film_beta.collect(p + ".film_beta", out);
                film_head.collect(p + ".film_head", out);
                break;
        }
    }
};

namespace ops {

// Unified logits H_F from branch embeddings (Concat/LowRank/FiLM) or branch
// logits (PredSum).
template <class Real>
Var<Real> fuse(Tape<Real>& t, FusionParams<Real>& fp, Var<Real> e_e, Var<Real> e_l, Var<Real> e_s,
               Var<Real> h_e, Var<Real> h_l, Var<Real> h_s) {
    switch (fp.kind) {
        case FusionKind::Concat:
            return fp.concat_fc(t, concat_cols(concat_cols(e_e, e_l), e_s));
        case FusionKind::PredSum:
            return add(add(h_e, h_l), h_s);
        case FusionKind::LowRank: {
            Var<Real> z0 = matmul(append_ones_col(e_e), fp.lowrank_u[0].use(t));
            Var<Real> z1 = matmul(append_ones_col(e_l), fp.lowrank_u[1].use(t));
            Var<Real> z2 = matmul(append_ones_col(e_s), fp.lowrank_u[2].use(t));
            return sum_rank_groups(mul(mul(z0, z1), z2), fp.rank, kNumThresholds);
        }
        case FusionKind::FiLM: {
            Var<Real> ctx = concat_cols(e_l, e_s);
            Var<Real> gamma = fp.film_gamma(t, ctx);
            Var<Real> beta = fp.film_beta(t, ctx);
            return fp.film_head(t, add(mul(e_e, gamma), beta));
        }
    }
    throw ContractError("fuse: unknown strategy");
}

} // namespace ops

// Prefix decoding: count the longest run of thresholds with sigma(h) > 0.5
// (i.e. h > 0) starting at the first, then offset the grade.
inline Grade ordinal_decode(double h1, double h2) {
    check(std::isfinite(h1) && std::isfinite(h2), "ordinal_decode: non-finite logits");
    int k = 0;
    if (h1 > 0) {
        k = 1;
        if (h2 > 0) k = 2;
    }
    return Grade(1 + k);
}

inline double task_score(double h1, double h2, Task task) {
    double h = task == Task::GeG2 ? h1 : h2;
    check(std::isfinite(h), "task_score: non-finite logit");
    return h >= 0 ? 1.0 / (1.0 + std::exp(-h)) : std::exp(h) / (1.0 + std::exp(h));
}

} // namespace moon

#endif
