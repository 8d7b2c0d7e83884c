#include "moon/gradcam.hpp"

#include <algorithm>
#include <filesystem>

namespace moon {

double localization_score(const RoiVolume& heat, const RoiVolume& mask, double fraction) {
    check(heat.h == mask.h && heat.w == mask.w && heat.d == mask.d,
          "localization_score: heat/mask dims differ");
    check(fraction > 0 && fraction < 1, "localization_score: fraction in (0,1)");
    int64_t n = heat.numel();
    int64_t top = std::max<int64_t>(1, int64_t(double(n) * fraction));
    std::vector<float> vals(heat.data.begin(), heat.data.end());
    std::nth_element(vals.begin(), vals.begin() + (n - top), vals.end());
    float threshold = vals[size_t(n - top)];
    double mass = 0, inside = 0;
    for (int64_t i = 0; i < n; ++i) {
        float v = heat.data[size_t(i)];
        if (v >= threshold && v > 0.f) {
            mass += v;
            if (mask.data[size_t(i)] > 0.5f) inside += v;
        }
    }
    return mass > 0 ? inside / mass : 0.0;
}

void write_pgm_slices(const RoiVolume& vol, const std::string& dir, const std::string& base) {
    std::filesystem::create_directories(dir);
    float lo = vol.data[0], hi = vol.data[0];
    for (float v : vol.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    float span = hi - lo > 0 ? hi - lo : 1.f;
    for (int k = 0; k < vol.d; ++k) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_z%03d.pgm", base.c_str(), k);
        std::ofstream f(std::filesystem::path(dir) / name, std::ios::binary | std::ios::trunc);
        f << "P5\n" << vol.w << " " << vol.h << "\n255\n";
        for (int i = 0; i < vol.h; ++i)
            for (int j = 0; j < vol.w; ++j) {
                float v = (vol.at(i, j, k) - lo) / span;
                f.put(char(uint8_t(std::lround(v * 255.f))));
            }
    }
}

} // namespace moon
