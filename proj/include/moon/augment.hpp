#ifndef MOON_AUGMENT_HPP
#define MOON_AUGMENT_HPP

#include "moon/volume.hpp"

namespace moon {

struct AugmentConfig {
    bool enabled = true;
    double spatial_scale = 0.10;   // random zoom factor in [1-s, 1+s]
    double intensity_scale = 0.05; // random gain in [1-s, 1+s]
    std::array<bool, 3> flip_axes{true, true, true}; // flipped with p = 0.5 each
    int cutout_count = 1;
    double cutout_fraction = 0.10; // box edge as a fraction of each dim
};

// Deterministic in (vol, seed, cfg). Disabled config returns the input
// bit-exactly. Oversized cutouts are clamped; *clamped reports that.
RoiVolume augment(const RoiVolume& vol, uint64_t seed, const AugmentConfig& cfg, bool* clamped = nullptr);

// axis 0 = H, 1 = W, 2 = D
RoiVolume flip_axis(const RoiVolume& vol, int axis);

// Zoom about the volume center by `factor`, resampled onto the same grid
// (trilinear, edge clamp).
RoiVolume zoom_same_grid(const RoiVolume& vol, double factor);

} // namespace moon

#endif
