#include "moon/augment.hpp"

#include <algorithm>
#include <cmath>

#include "moon/rng.hpp"
#include "moon/tensor.hpp"

namespace moon {

RoiVolume flip_axis(const RoiVolume& vol, int axis) {
    check(axis >= 0 && axis < 3, "flip_axis: axis must be 0..2");
    RoiVolume out = vol;
    for (int i = 0; i < vol.h; ++i)
        for (int j = 0; j < vol.w; ++j)
            for (int k = 0; k < vol.d; ++k) {
                int si = axis == 0 ? vol.h - 1 - i : i;
                int sj = axis == 1 ? vol.w - 1 - j : j;
                int sk = axis == 2 ? vol.d - 1 - k : k;
                out.at(i, j, k) = vol.at(si, sj, sk);
            }
    return out;
}

RoiVolume zoom_same_grid(const RoiVolume& vol, double factor) {
    check(factor > 0, "zoom_same_grid: factor must be positive");
    RoiVolume out = vol;
    double ch = (vol.h - 1) / 2.0, cw = (vol.w - 1) / 2.0, cd = (vol.d - 1) / 2.0;
    auto clampf = [](double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); };
    for (int i = 0; i < vol.h; ++i)
        for (int j = 0; j < vol.w; ++j)
            for (int k = 0; k < vol.d; ++k) {
                double si = clampf(ch + (i - ch) / factor, 0, vol.h - 1);
                double sj = clampf(cw + (j - cw) / factor, 0, vol.w - 1);
                double sk = clampf(cd + (k - cd) / factor, 0, vol.d - 1);
                int i0 = std::min(int(si), vol.h >= 2 ? vol.h - 2 : 0);
                int j0 = std::min(int(sj), vol.w >= 2 ? vol.w - 2 : 0);
                int k0 = std::min(int(sk), vol.d >= 2 ? vol.d - 2 : 0);
                double ti = si - i0, tj = sj - j0, tk = sk - k0;
                double acc = 0;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int c = 0; c < 2; ++c) {
                            int ii = std::min(i0 + a, vol.h - 1);
                            int jj = std::min(j0 + b, vol.w - 1);
                            int kk = std::min(k0 + c, vol.d - 1);
                            acc += double(vol.at(ii, jj, kk)) * (a ? ti : 1 - ti) * (b ? tj : 1 - tj) *
                                   (c ? tk : 1 - tk);
                        }
                out.at(i, j, k) = float(acc);
            }
    return out;
}

RoiVolume augment(const RoiVolume& vol, uint64_t seed, const AugmentConfig& cfg, bool* clamped) {
    if (clamped) *clamped = false;
    if (!cfg.enabled) return vol;
    Rng rng(hash_combine(seed, 0xau));
    RoiVolume out = vol;

    if (cfg.spatial_scale > 0) {
        double factor = rng.uniform(1.0 - cfg.spatial_scale, 1.0 + cfg.spatial_scale);
        out = zoom_same_grid(out, factor);
    }
    for (int axis = 0; axis < 3; ++axis)
        if (cfg.flip_axes[size_t(axis)] && rng.bernoulli(0.5)) out = flip_axis(out, axis);

    for (int c = 0; c < cfg.cutout_count; ++c) {
        int dims[3] = {out.h, out.w, out.d};
        int size[3];
        for (int a = 0; a < 3; ++a) {
            size[a] = std::max(1, int(std::lround(cfg.cutout_fraction * dims[a])));
            if (size[a] > dims[a]) {
                size[a] = dims[a];
                if (clamped) *clamped = true;
            }
        }
        int lo[3];
        for (int a = 0; a < 3; ++a) lo[a] = rng.uniform_int(0, dims[a] - size[a]);
        for (int i = lo[0]; i < lo[0] + size[0]; ++i)
            for (int j = lo[1]; j < lo[1] + size[1]; ++j)
                for (int k = lo[2]; k < lo[2] + size[2]; ++k) out.at(i, j, k) = 0.f;
    }

    if (cfg.intensity_scale > 0) {
        float gain = float(rng.uniform(1.0 - cfg.intensity_scale, 1.0 + cfg.intensity_scale));
        for (auto& v : out.data) v *= gain;
    }
    return out;
}

} // namespace moon
