#ifndef MOON_OPS3D_HPP
#define MOON_OPS3D_HPP

#include <array>

#include "moon/ops.hpp"

namespace moon {

// Spatial dims of a [B,H,W,D,C] feature map.
struct Dims3 {
    int h = 0, w = 0, d = 0;
    bool operator==(const Dims3&) const = default;
    int64_t count() const { return int64_t(h) * w * d; }
};

namespace ops {

inline void check_map5(const std::vector<int>& s, const char* who) {
    check(s.size() == 5, std::string(who) + ": expected [B,H,W,D,C] tensor");
}

// Depthwise 3x3x3 convolution, zero padded (same size). w is [27,C], b is [C].
template <class Real>
Var<Real> dwconv3(Var<Real> x, Var<Real> w, Var<Real> b) {
    Tape<Real>& t = *x.tape;
    check_map5(x.val().shape, "dwconv3");
    int B = x.val().dim(0), H = x.val().dim(1), W = x.val().dim(2), D = x.val().dim(3), C = x.val().dim(4);
    check(w.val().numel() == 27 * C && b.val().numel() == C, "dwconv3: weight shape mismatch");
    Tensor<Real> out(x.val().shape);
    const Real* xp = x.val().ptr();
    const Real* wp = w.val().ptr();
    const Real* bp = b.val().ptr();
    Real* op = out.ptr();
    auto idx = [&](int bb, int i, int j, int k) {
        return (((int64_t(bb) * H + i) * W + j) * D + k) * C;
    };
    for (int bb = 0; bb < B; ++bb)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int k = 0; k < D; ++k) {
                    Real* orow = op + idx(bb, i, j, k);
                    for (int c = 0; c < C; ++c) orow[c] = bp[c];
                    int o = 0;
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj)
                            for (int dk = -1; dk <= 1; ++dk, ++o) {
                                int ii = i + di, jj = j + dj, kk = k + dk;
                                if (ii < 0 || ii >= H || jj < 0 || jj >= W || kk < 0 || kk >= D) continue;
                                const Real* xrow = xp + idx(bb, ii, jj, kk);
                                const Real* wrow = wp + int64_t(o) * C;
                                for (int c = 0; c < C; ++c) orow[c] += wrow[c] * xrow[c];
                            }
                }
    int id = t.push(std::move(out), x.rg() || w.rg() || b.rg());
    t.set_backward(id, [xid = x.id, wid = w.id, bid = b.id, xrg = x.rg(), wrg = w.rg(), brg = b.rg(),
                        B, H, W, D, C, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        const Real* gp = g.ptr();
        const Real* xp2 = tp.val(xid).ptr();
        const Real* wp2 = tp.val(wid).ptr();
        auto idx = [&](int bb, int i, int j, int k) {
            return (((int64_t(bb) * H + i) * W + j) * D + k) * C;
        };
        Real* gxp = xrg ? tp.grad(xid).ptr() : nullptr;
        Real* gwp = wrg ? tp.grad(wid).ptr() : nullptr;
        Real* gbp = brg ? tp.grad(bid).ptr() : nullptr;
        for (int bb = 0; bb < B; ++bb)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    for (int k = 0; k < D; ++k) {
                        const Real* grow = gp + idx(bb, i, j, k);
                        if (gbp)
                            for (int c = 0; c < C; ++c) gbp[c] += grow[c];
                        int o = 0;
                        for (int di = -1; di <= 1; ++di)
                            for (int dj = -1; dj <= 1; ++dj)
                                for (int dk = -1; dk <= 1; ++dk, ++o) {
                                    int ii = i + di, jj = j + dj, kk = k + dk;
                                    if (ii < 0 || ii >= H || jj < 0 || jj >= W || kk < 0 || kk >= D) continue;
                                    int64_t xoff = idx(bb, ii, jj, kk);
                                    const Real* wrow = wp2 + int64_t(o) * C;
                                    if (gxp)
                                        for (int c = 0; c < C; ++c) gxp[xoff + c] += wrow[c] * grow[c];
                                    if (gwp)
                                        for (int c = 0; c < C; ++c) gwp[int64_t(o) * C + c] += xp2[xoff + c] * grow[c];
                                }
                    }
    });
    return {&t, id};
}

// Non-overlapping patchify convolution: kernel == stride, implicit zero pad up
// to the next multiple of the stride. w is [kh*kw*kd*Cin, Cout], b is [Cout].
// Output is [B, ceil(H/kh), ceil(W/kw), ceil(D/kd), Cout].
template <class Real>
Var<Real> patch_embed(Var<Real> x, Var<Real> w, Var<Real> b, Dims3 k) {
    Tape<Real>& t = *x.tape;
    check_map5(x.val().shape, "patch_embed");
    int B = x.val().dim(0), H = x.val().dim(1), W = x.val().dim(2), D = x.val().dim(3), Cin = x.val().dim(4);
    check(k.h >= 1 && k.w >= 1 && k.d >= 1, "patch_embed: bad kernel");
    int K = k.h * k.w * k.d * Cin;
    check(w.val().rank() == 2 && w.val().dim(0) == K, "patch_embed: weight rows != kernel volume");
    int Cout = w.val().dim(1);
    check(b.val().numel() == Cout, "patch_embed: bias size mismatch");
    int Ho = (H + k.h - 1) / k.h, Wo = (W + k.w - 1) / k.w, Do = (D + k.d - 1) / k.d;
    int64_t n_out = int64_t(B) * Ho * Wo * Do;

    // gather patches (zero fill outside the volume)
    Tensor<Real> cols({int(n_out), K});
    const Real* xp = x.val().ptr();
    int64_t row = 0;
    for (int bb = 0; bb < B; ++bb)
        for (int oi = 0; oi < Ho; ++oi)
            for (int oj = 0; oj < Wo; ++oj)
                for (int ok = 0; ok < Do; ++ok, ++row) {
                    Real* dst = cols.ptr() + row * K;
                    int p = 0;
                    for (int di = 0; di < k.h; ++di)
                        for (int dj = 0; dj < k.w; ++dj)
                            for (int dk = 0; dk < k.d; ++dk, p += Cin) {
                                int ii = oi * k.h + di, jj = oj * k.w + dj, kk = ok * k.d + dk;
                                if (ii >= H || jj >= W || kk >= D) continue;
                                const Real* src = xp + (((int64_t(bb) * H + ii) * W + jj) * D + kk) * Cin;
                                std::copy_n(src, Cin, dst + p);
                            }
                }

    Tensor<Real> out({B, Ho, Wo, Do, Cout});
    auto om = as_mat(out, int(n_out), Cout);
    om.noalias() = as_mat(cols, int(n_out), K) * as_mat(w.val(), K, Cout);
    om.rowwise() += Eigen::Map<const Eigen::RowVector<Real, Eigen::Dynamic>>(b.val().ptr(), Cout);

    int id = t.push(std::move(out), x.rg() || w.rg() || b.rg());
    if (t.recording)
        t.set_backward(id, [xid = x.id, wid = w.id, bid = b.id, xrg = x.rg(), wrg = w.rg(), brg = b.rg(),
                            cols = std::move(cols), B, H, W, D, Cin, Ho, Wo, Do, Cout, K, k, n_out, id](Tape<Real>& tp) {
            auto g = as_mat(tp.grad(id), int(n_out), Cout);
            if (wrg) as_mat(tp.grad(wid), K, Cout).noalias() += as_mat(cols, int(n_out), K).transpose() * g;
            if (brg)
                Eigen::Map<Eigen::RowVector<Real, Eigen::Dynamic>>(tp.grad(bid).ptr(), Cout) += g.colwise().sum();
            if (xrg) {
                EMat<Real> gcols(int(n_out), K);
                gcols.noalias() = g * as_mat(tp.val(wid), K, Cout).transpose();
                Real* gxp = tp.grad(xid).ptr();
                int64_t row = 0;
                for (int bb = 0; bb < B; ++bb)
                    for (int oi = 0; oi < Ho; ++oi)
                        for (int oj = 0; oj < Wo; ++oj)
                            for (int ok = 0; ok < Do; ++ok, ++row) {
                                const Real* src = gcols.data() + row * K;
                                int p = 0;
                                for (int di = 0; di < k.h; ++di)
                                    for (int dj = 0; dj < k.w; ++dj)
                                        for (int dk = 0; dk < k.d; ++dk, p += Cin) {
                                            int ii = oi * k.h + di, jj = oj * k.w + dj, kk = ok * k.d + dk;
                                            if (ii >= H || jj >= W || kk >= D) continue;
                                            Real* dst = gxp + (((int64_t(bb) * H + ii) * W + jj) * D + kk) * Cin;
                                            for (int c = 0; c < Cin; ++c) dst[c] += src[p + c];
                                        }
                            }
            }
        });
    return {&t, id};
}

// Adaptive average pooling to a target grid. Blocks tile the source exactly:
// axis boundaries at floor(i*S/G). Requires grid <= source dims.
template <class Real>
Var<Real> adaptive_avg_pool3d(Var<Real> x, Dims3 grid) {
    Tape<Real>& t = *x.tape;
    check_map5(x.val().shape, "adaptive_avg_pool3d");
    int B = x.val().dim(0), H = x.val().dim(1), W = x.val().dim(2), D = x.val().dim(3), C = x.val().dim(4);
    check(grid.h >= 1 && grid.w >= 1 && grid.d >= 1, "adaptive_avg_pool3d: bad grid");
    check(grid.h <= H && grid.w <= W && grid.d <= D,
          "adaptive_avg_pool3d: grid larger than source dims");
    auto lo = [](int i, int S, int G) { return int(int64_t(i) * S / G); };
    Tensor<Real> out({B, grid.h, grid.w, grid.d, C});
    const Real* xp = x.val().ptr();
    Real* op = out.ptr();
    for (int bb = 0; bb < B; ++bb)
        for (int gi = 0; gi < grid.h; ++gi)
            for (int gj = 0; gj < grid.w; ++gj)
                for (int gk = 0; gk < grid.d; ++gk) {
                    int i0 = lo(gi, H, grid.h), i1 = lo(gi + 1, H, grid.h);
                    int j0 = lo(gj, W, grid.w), j1 = lo(gj + 1, W, grid.w);
                    int k0 = lo(gk, D, grid.d), k1 = lo(gk + 1, D, grid.d);
                    Real inv = Real(1) / Real(int64_t(i1 - i0) * (j1 - j0) * (k1 - k0));
                    Real* orow = op + ((((int64_t(bb) * grid.h + gi) * grid.w + gj) * grid.d + gk)) * C;
                    for (int i = i0; i < i1; ++i)
                        for (int j = j0; j < j1; ++j)
                            for (int k = k0; k < k1; ++k) {
                                const Real* xrow = xp + (((int64_t(bb) * H + i) * W + j) * D + k) * C;
                                for (int c = 0; c < C; ++c) orow[c] += xrow[c];
                            }
                    for (int c = 0; c < C; ++c) orow[c] *= inv;
                }
    int id = t.push(std::move(out), x.rg());
    t.set_backward(id, [xid = x.id, B, H, W, D, C, grid, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& gx = tp.grad(xid);
        auto lo = [](int i, int S, int G) { return int(int64_t(i) * S / G); };
        for (int bb = 0; bb < B; ++bb)
            for (int gi = 0; gi < grid.h; ++gi)
                for (int gj = 0; gj < grid.w; ++gj)
                    for (int gk = 0; gk < grid.d; ++gk) {
                        int i0 = lo(gi, H, grid.h), i1 = lo(gi + 1, H, grid.h);
                        int j0 = lo(gj, W, grid.w), j1 = lo(gj + 1, W, grid.w);
                        int k0 = lo(gk, D, grid.d), k1 = lo(gk + 1, D, grid.d);
                        Real inv = Real(1) / Real(int64_t(i1 - i0) * (j1 - j0) * (k1 - k0));
                        const Real* grow = g.ptr() + ((((int64_t(bb) * grid.h + gi) * grid.w + gj) * grid.d + gk)) * C;
                        for (int i = i0; i < i1; ++i)
                            for (int j = j0; j < j1; ++j)
                                for (int k = k0; k < k1; ++k) {
                                    Real* gxrow = gx.ptr() + (((int64_t(bb) * H + i) * W + j) * D + k) * C;
                                    for (int c = 0; c < C; ++c) gxrow[c] += grow[c] * inv;
                                }
                    }
    });
    return {&t, id};
}

// Trilinear resampling to target spatial dims (half-pixel centers, edge clamp).
template <class Real>
Var<Real> upsample_trilinear(Var<Real> x, Dims3 to) {
    Tape<Real>& t = *x.tape;
    check_map5(x.val().shape, "upsample_trilinear");
    int B = x.val().dim(0), H = x.val().dim(1), W = x.val().dim(2), D = x.val().dim(3), C = x.val().dim(4);
    check(to.h >= 1 && to.w >= 1 && to.d >= 1, "upsample_trilinear: bad dims");

    struct Tap { int lo, hi; Real frac; };
    auto make_taps = [](int S, int T) {
        std::vector<Tap> taps(static_cast<size_t>(T));
        for (int o = 0; o < T; ++o) {
            double src = (double(o) + 0.5) * double(S) / double(T) - 0.5;
            if (src < 0) src = 0;
            if (src > S - 1) src = S - 1;
            int lo = int(src);
            if (lo > S - 2) lo = S >= 2 ? S - 2 : 0;
            double f = src - lo;
            int hi = S >= 2 ? lo + 1 : 0;
            taps[size_t(o)] = {lo, hi, Real(f)};
        }
        return taps;
    };
    auto th = make_taps(H, to.h), tw = make_taps(W, to.w), td = make_taps(D, to.d);

    Tensor<Real> out({B, to.h, to.w, to.d, C});
    const Real* xp = x.val().ptr();
    Real* op = out.ptr();
    auto src_off = [&](int bb, int i, int j, int k) {
        return (((int64_t(bb) * H + i) * W + j) * D + k) * C;
    };
    for (int bb = 0; bb < B; ++bb)
        for (int oi = 0; oi < to.h; ++oi)
            for (int oj = 0; oj < to.w; ++oj)
                for (int ok = 0; ok < to.d; ++ok) {
                    const Tap &a = th[size_t(oi)], &b = tw[size_t(oj)], &c3 = td[size_t(ok)];
                    Real* orow = op + ((((int64_t(bb) * to.h + oi) * to.w + oj) * to.d + ok)) * C;
                    for (int ci = 0; ci < 2; ++ci)
                        for (int cj = 0; cj < 2; ++cj)
                            for (int ck = 0; ck < 2; ++ck) {
                                Real wgt = (ci ? a.frac : Real(1) - a.frac) * (cj ? b.frac : Real(1) - b.frac) *
                                           (ck ? c3.frac : Real(1) - c3.frac);
                                if (wgt == Real(0)) continue;
                                const Real* xrow = xp + src_off(bb, ci ? a.hi : a.lo, cj ? b.hi : b.lo, ck ? c3.hi : c3.lo);
                                for (int cc = 0; cc < C; ++cc) orow[cc] += wgt * xrow[cc];
                            }
                }
    int id = t.push(std::move(out), x.rg());
    t.set_backward(id, [xid = x.id, B, H, W, D, C, to, th, tw, td, id](Tape<Real>& tp) {
        const Tensor<Real>& g = tp.grad(id);
        auto& gx = tp.grad(xid);
        auto src_off = [&](int bb, int i, int j, int k) {
            return (((int64_t(bb) * H + i) * W + j) * D + k) * C;
        };
        for (int bb = 0; bb < B; ++bb)
            for (int oi = 0; oi < to.h; ++oi)
                for (int oj = 0; oj < to.w; ++oj)
                    for (int ok = 0; ok < to.d; ++ok) {
                        const auto &a = th[size_t(oi)], &b = tw[size_t(oj)], &c3 = td[size_t(ok)];
                        const Real* grow = g.ptr() + ((((int64_t(bb) * to.h + oi) * to.w + oj) * to.d + ok)) * C;
                        for (int ci = 0; ci < 2; ++ci)
                            for (int cj = 0; cj < 2; ++cj)
                                for (int ck = 0; ck < 2; ++ck) {
                                    Real wgt = (ci ? a.frac : Real(1) - a.frac) * (cj ? b.frac : Real(1) - b.frac) *
                                               (ck ? c3.frac : Real(1) - c3.frac);
                                    if (wgt == Real(0)) continue;
                                    Real* gxrow = gx.ptr() + src_off(bb, ci ? a.hi : a.lo, cj ? b.hi : b.lo, ck ? c3.hi : c3.lo);
                                    for (int cc = 0; cc < C; ++cc) gxrow[cc] += wgt * grow[cc];
                                }
                    }
    });
    return {&t, id};
}

} // namespace ops
} // namespace moon

#endif
