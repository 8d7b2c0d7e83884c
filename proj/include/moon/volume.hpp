#ifndef MOON_VOLUME_HPP
#define MOON_VOLUME_HPP

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace moon {

// Raised on malformed volume files; carries the byte offset of the defect.
struct FormatError : std::runtime_error {
    int64_t offset;
    FormatError(const std::string& msg, int64_t off)
        : std::runtime_error(msg + " (byte offset " + std::to_string(off) + ")"), offset(off) {}
};

// One organ's 3D intensity array. Voxels are normalized HU-like float32,
// stored row-major with H outermost and D innermost.
struct RoiVolume {
    int h = 0, w = 0, d = 0;
    std::array<float, 3> spacing{1.f, 1.f, 1.f};
    std::vector<float> data;

    int64_t numel() const { return int64_t(h) * w * d; }
    float& at(int i, int j, int k) { return data[(int64_t(i) * w + j) * size_t(d) + k]; }
    float at(int i, int j, int k) const { return data[(int64_t(i) * w + j) * size_t(d) + k]; }

    // dims >= 1, payload matches, all intensities finite
    void validate() const;
};

// File format: magic "MOONVOL1", then little-endian u32 H,W,D, f32 sx,sy,sz,
// then H*W*D f32 intensities.
void write_volume(const RoiVolume& vol, const std::string& path);
RoiVolume read_volume(const std::string& path);

} // namespace moon

#endif
