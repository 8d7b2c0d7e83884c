#ifndef MOON_CHECKPOINT_HPP
#define MOON_CHECKPOINT_HPP

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "moon/tape.hpp"
#include "moon/volume.hpp"

namespace moon {

// Container: magic "MOONCKP1", u32 version, u32 scalar size (4|8),
// u64 header length, JSON header {"meta": ..., "arrays": [{name, shape}]},
// then raw little-endian payloads in array order.
namespace ckpt {

constexpr char kMagic[8] = {'M', 'O', 'O', 'N', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

template <class T>
void put_pod(std::string& buf, T v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));
}

template <class T>
T get_pod(const std::string& buf, size_t& off) {
    T v;
    if (off + sizeof(T) > buf.size()) throw FormatError("checkpoint: truncated", int64_t(off));
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

} // namespace ckpt

template <class Real>
void save_checkpoint(const std::string& path, const ParamList<Real>& params, const nlohmann::json& meta) {
    nlohmann::json header;
    header["meta"] = meta;
    header["arrays"] = nlohmann::json::array();
    for (const Param<Real>* p : params) {
        check(!p->name.empty(), "checkpoint: unnamed parameter");
        header["arrays"].push_back({{"name", p->name}, {"shape", p->value.shape}});
    }
    std::string hs = header.dump();

    std::string buf;
    buf.append(ckpt::kMagic, 8);
    ckpt::put_pod<uint32_t>(buf, ckpt::kVersion);
    ckpt::put_pod<uint32_t>(buf, uint32_t(sizeof(Real)));
    ckpt::put_pod<uint64_t>(buf, uint64_t(hs.size()));
    buf += hs;
    for (const Param<Real>* p : params)
        buf.append(reinterpret_cast<const char*>(p->value.ptr()), size_t(p->value.numel()) * sizeof(Real));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(buf.data(), std::streamsize(buf.size()));
    if (!f) throw std::runtime_error("save_checkpoint: short write to " + path);
}

// Loads into an already-built parameter list (names and shapes must match
// exactly); returns the stored meta JSON.
template <class Real>
nlohmann::json load_checkpoint(const std::string& path, const ParamList<Real>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), ckpt::kMagic, 8) != 0)
        throw FormatError("checkpoint: bad magic in " + path, 0);
    size_t off = 8;
    uint32_t version = ckpt::get_pod<uint32_t>(buf, off);
    check(version == ckpt::kVersion, "checkpoint: unsupported version");
    uint32_t scalar = ckpt::get_pod<uint32_t>(buf, off);
    check(scalar == sizeof(Real), "checkpoint: scalar width mismatch (file " + std::to_string(scalar) +
                                      ", expected " + std::to_string(sizeof(Real)) + ")");
    uint64_t hlen = ckpt::get_pod<uint64_t>(buf, off);
    if (off + hlen > buf.size()) throw FormatError("checkpoint: truncated header", int64_t(buf.size()));
    nlohmann::json header = nlohmann::json::parse(buf.substr(off, hlen));
    off += size_t(hlen);

    const auto& arrays = header.at("arrays");
    check(arrays.size() == params.size(), "checkpoint: parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& a = arrays[i];
        check(a.at("name").get<std::string>() == params[i]->name,
              "checkpoint: parameter name mismatch at index " + std::to_string(i) + " (file " +
                  a.at("name").get<std::string>() + ", model " + params[i]->name + ")");
        check(a.at("shape").get<std::vector<int>>() == params[i]->value.shape,
              "checkpoint: shape mismatch for " + params[i]->name);
        size_t bytes = size_t(params[i]->value.numel()) * sizeof(Real);
        if (off + bytes > buf.size()) throw FormatError("checkpoint: truncated payload", int64_t(off));
        std::memcpy(params[i]->value.ptr(), buf.data() + off, bytes);
        off += bytes;
    }
    check(off == buf.size(), "checkpoint: trailing bytes");
    return header.at("meta");
}

} // namespace moon

#endif
