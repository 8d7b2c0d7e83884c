#include "moon/volume.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "moon/tensor.hpp"

namespace moon {

static const char kMagic[8] = {'M', 'O', 'O', 'N', 'V', 'O', 'L', '1'};
static const int64_t kHeaderBytes = 8 + 12 + 12;

void RoiVolume::validate() const {
    check(h >= 1 && w >= 1 && d >= 1, "volume: dims must be >= 1");
    check(int64_t(data.size()) == numel(), "volume: payload size does not match dims");
    for (float v : data)
        check(std::isfinite(v), "volume: non-finite intensity");
    for (float s : spacing)
        check(std::isfinite(s) && s > 0.f, "volume: spacing must be positive and finite");
}

static void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char(uint8_t(v >> (8 * i))));
}
static void put_f32(std::string& buf, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(buf, v);
}
static uint32_t get_u32(const std::string& buf, int64_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[size_t(off + i)])) << (8 * i);
    return v;
}
static float get_f32(const std::string& buf, int64_t off) {
    uint32_t v = get_u32(buf, off);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

void write_volume(const RoiVolume& vol, const std::string& path) {
    vol.validate();
    std::string buf;
    buf.reserve(size_t(kHeaderBytes + 4 * vol.numel()));
    buf.append(kMagic, 8);
    put_u32(buf, uint32_t(vol.h));
    put_u32(buf, uint32_t(vol.w));
    put_u32(buf, uint32_t(vol.d));
    for (float s : vol.spacing) put_f32(buf, s);
    for (float v : vol.data) put_f32(buf, v);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_volume: cannot open " + path);
    f.write(buf.data(), std::streamsize(buf.size()));
    if (!f) throw std::runtime_error("write_volume: short write to " + path);
}

RoiVolume read_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_volume: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (int64_t(buf.size()) < 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw FormatError("read_volume: bad magic in " + path, 0);
    if (int64_t(buf.size()) < kHeaderBytes)
        throw FormatError("read_volume: truncated header in " + path, int64_t(buf.size()));

    RoiVolume vol;
    vol.h = int(get_u32(buf, 8));
    vol.w = int(get_u32(buf, 12));
    vol.d = int(get_u32(buf, 16));
    if (vol.h < 1 || vol.w < 1 || vol.d < 1)
        throw FormatError("read_volume: zero dimension in " + path, 8);
    for (int i = 0; i < 3; ++i) vol.spacing[size_t(i)] = get_f32(buf, 20 + 4 * i);

    int64_t expected = kHeaderBytes + 4 * vol.numel();
    if (int64_t(buf.size()) != expected)
        throw FormatError("read_volume: dim/payload mismatch in " + path + ": dims declare " +
                              std::to_string(vol.numel()) + " voxels, payload holds " +
                              std::to_string((int64_t(buf.size()) - kHeaderBytes) / 4),
                          std::min(int64_t(buf.size()), expected));

    vol.data.resize(size_t(vol.numel()));
    for (int64_t i = 0; i < vol.numel(); ++i) vol.data[size_t(i)] = get_f32(buf, kHeaderBytes + 4 * i);
    vol.validate();
    return vol;
}

} // namespace moon
