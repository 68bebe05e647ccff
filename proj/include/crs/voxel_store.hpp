#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "crs/binio.hpp"
#include "crs/errors.hpp"

namespace crs {

/// 3D intensity grid, normalized to [0, 1], C-order (z-major, then y, then x).
struct Volume {
    int z = 0, y = 0, x = 0;
    std::vector<double> data;
    std::optional<std::array<double, 3>> voxel_size_nm;  // (z, y, x)

    Volume() = default;
    Volume(int z_, int y_, int x_, double fill = 0.0)
        : z(z_), y(y_), x(x_), data(static_cast<std::size_t>(z_) * y_ * x_, fill) {
        if (z_ < 1 || y_ < 1 || x_ < 1) throw shape_error("volume dims must be >= 1");
    }

    double& at(int zi, int yi, int xi) { return data[(static_cast<std::size_t>(zi) * y + yi) * x + xi]; }
    [[nodiscard]] double at(int zi, int yi, int xi) const {
        return data[(static_cast<std::size_t>(zi) * y + yi) * x + xi];
    }
    [[nodiscard]] std::size_t size() const { return data.size(); }
};

/// 3D instance-id grid; 0 is background.
struct LabelMap {
    int z = 0, y = 0, x = 0;
    std::vector<std::uint32_t> data;

    LabelMap() = default;
    LabelMap(int z_, int y_, int x_, std::uint32_t fill = 0)
        : z(z_), y(y_), x(x_), data(static_cast<std::size_t>(z_) * y_ * x_, fill) {
        if (z_ < 1 || y_ < 1 || x_ < 1) throw shape_error("label map dims must be >= 1");
    }

    std::uint32_t& at(int zi, int yi, int xi) {
        return data[(static_cast<std::size_t>(zi) * y + yi) * x + xi];
    }
    [[nodiscard]] std::uint32_t at(int zi, int yi, int xi) const {
        return data[(static_cast<std::size_t>(zi) * y + yi) * x + xi];
    }
    [[nodiscard]] std::size_t size() const { return data.size(); }
};

/// Single 2D image frame.
struct Frame {
    int h = 0, w = 0;
    std::vector<double> data;

    Frame() = default;
    Frame(int h_, int w_, double fill = 0.0)
        : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_, fill) {}

    double& at(int yi, int xi) { return data[static_cast<std::size_t>(yi) * w + xi]; }
    [[nodiscard]] double at(int yi, int xi) const { return data[static_cast<std::size_t>(yi) * w + xi]; }
};

/// Single 2D id map.
struct LabelMap2D {
    int h = 0, w = 0;
    std::vector<std::uint32_t> data;

    LabelMap2D() = default;
    LabelMap2D(int h_, int w_, std::uint32_t fill = 0)
        : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_, fill) {}

    std::uint32_t& at(int yi, int xi) { return data[static_cast<std::size_t>(yi) * w + xi]; }
    [[nodiscard]] std::uint32_t at(int yi, int xi) const {
        return data[static_cast<std::size_t>(yi) * w + xi];
    }
    [[nodiscard]] bool operator==(const LabelMap2D& o) const = default;

    [[nodiscard]] std::vector<std::uint32_t> distinct_nonzero_ids() const {
        std::set<std::uint32_t> s;
        for (std::uint32_t v : data)
            if (v != 0) s.insert(v);
        return {s.begin(), s.end()};
    }
};

// ---------------------------------------------------------------------------
// VOL1 container: "VOL1" magic, dims (z, y, x) as little-endian u64, a dtype
// byte, then the raw C-order payload. Dtype 0 = u8 intensity (stored value /
// 255 on read), 1 = u32 instance id, 2 = f32. A JSON sidecar
// `<path>.meta.json` carries voxel size when present.
// ---------------------------------------------------------------------------

enum class VolDtype : std::uint8_t { u8 = 0, label_u32 = 1, f32 = 2 };

inline constexpr char kVolMagic[4] = {'V', 'O', 'L', '1'};
inline constexpr std::size_t kVolHeaderBytes = 4 + 3 * 8 + 1;

inline void write_volume(const std::string& path, const Volume& v, VolDtype dtype = VolDtype::f32) {
    if (dtype == VolDtype::label_u32)
        throw encoding_error("intensity volume cannot be written with the label dtype");
    std::string bytes;
    bytes.reserve(kVolHeaderBytes + v.size() * (dtype == VolDtype::u8 ? 1 : 4));
    bytes.append(kVolMagic, 4);
    put_u64le(bytes, static_cast<std::uint64_t>(v.z));
    put_u64le(bytes, static_cast<std::uint64_t>(v.y));
    put_u64le(bytes, static_cast<std::uint64_t>(v.x));
    put_u8(bytes, static_cast<std::uint8_t>(dtype));
    for (double d : v.data) {
        if (dtype == VolDtype::u8) {
            if (!(d >= 0.0 && d <= 1.0))
                throw encoding_error("intensity " + std::to_string(d) + " outside [0,1] for u8 payload");
            put_u8(bytes, static_cast<std::uint8_t>(std::lround(d * 255.0)));
        } else {
            put_f32le(bytes, static_cast<float>(d));
        }
    }
    write_file_bytes(path, bytes);
    if (v.voxel_size_nm) {
        nlohmann::json meta = {{"voxel_size_nm", {(*v.voxel_size_nm)[0], (*v.voxel_size_nm)[1],
                                                  (*v.voxel_size_nm)[2]}}};
        write_file_bytes(path + ".meta.json", meta.dump(2) + "\n");
    }
}

inline void write_volume(const std::string& path, const LabelMap& l) {
    std::string bytes;
    bytes.reserve(kVolHeaderBytes + l.size() * 4);
    bytes.append(kVolMagic, 4);
    put_u64le(bytes, static_cast<std::uint64_t>(l.z));
    put_u64le(bytes, static_cast<std::uint64_t>(l.y));
    put_u64le(bytes, static_cast<std::uint64_t>(l.x));
    put_u8(bytes, static_cast<std::uint8_t>(VolDtype::label_u32));
    for (std::uint32_t v : l.data) put_u32le(bytes, v);
    write_file_bytes(path, bytes);
}

using VolumeOrLabels = std::variant<Volume, LabelMap>;

inline VolumeOrLabels read_volume(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < kVolHeaderBytes || std::memcmp(bytes.data(), kVolMagic, 4) != 0)
        throw format_error("not a VOL1 file: " + path);
    const std::uint64_t z = get_u64le(bytes.data() + 4);
    const std::uint64_t y = get_u64le(bytes.data() + 12);
    const std::uint64_t x = get_u64le(bytes.data() + 20);
    const std::uint8_t code = bytes[28];
    if (z < 1 || y < 1 || x < 1) throw format_error("VOL1 dims must be >= 1: " + path);
    if (code > 2) throw format_error("VOL1 unknown dtype code " + std::to_string(code) + ": " + path);
    const std::size_t voxels = static_cast<std::size_t>(z) * y * x;
    const std::size_t bpv = code == 0 ? 1 : 4;
    if (bytes.size() != kVolHeaderBytes + voxels * bpv)
        throw format_error("VOL1 payload size mismatch (" + std::to_string(bytes.size()) +
                           " bytes for " + std::to_string(voxels) + " voxels): " + path);
    const unsigned char* p = bytes.data() + kVolHeaderBytes;
    if (code == static_cast<std::uint8_t>(VolDtype::label_u32)) {
        LabelMap l(static_cast<int>(z), static_cast<int>(y), static_cast<int>(x));
        for (std::size_t i = 0; i < voxels; ++i) l.data[i] = get_u32le(p + i * 4);
        return l;
    }
    Volume v(static_cast<int>(z), static_cast<int>(y), static_cast<int>(x));
    if (code == static_cast<std::uint8_t>(VolDtype::u8)) {
        for (std::size_t i = 0; i < voxels; ++i) v.data[i] = static_cast<double>(p[i]) / 255.0;
    } else {
        for (std::size_t i = 0; i < voxels; ++i) v.data[i] = static_cast<double>(get_f32le(p + i * 4));
    }
    std::error_code ec;
    if (std::filesystem::exists(path + ".meta.json", ec)) {
        try {
            auto mbytes = read_file_bytes(path + ".meta.json");
            auto meta = nlohmann::json::parse(mbytes.begin(), mbytes.end());
            if (meta.contains("voxel_size_nm")) {
                auto vs = meta["voxel_size_nm"].get<std::vector<double>>();
                if (vs.size() == 3) v.voxel_size_nm = std::array<double, 3>{vs[0], vs[1], vs[2]};
            }
        } catch (const nlohmann::json::exception& e) {
            throw format_error("bad sidecar " + path + ".meta.json: " + e.what());
        }
    }
    return v;
}

inline Volume read_intensity_volume(const std::string& path) {
    auto v = read_volume(path);
    if (!std::holds_alternative<Volume>(v))
        throw format_error("expected an intensity volume (dtype 0 or 2): " + path);
    return std::get<Volume>(std::move(v));
}

inline LabelMap read_label_volume(const std::string& path) {
    auto v = read_volume(path);
    if (!std::holds_alternative<LabelMap>(v))
        throw format_error("expected a label volume (dtype 1): " + path);
    return std::get<LabelMap>(std::move(v));
}

// ---------------------------------------------------------------------------
// Slicing.
// ---------------------------------------------------------------------------

inline Frame slice_frame(const Volume& v, int zi) {
    if (zi < 0 || zi >= v.z) throw bounds_error("frame index " + std::to_string(zi) + " out of range");
    Frame f(v.y, v.x);
    std::copy(v.data.begin() + static_cast<std::ptrdiff_t>(zi) * v.y * v.x,
              v.data.begin() + static_cast<std::ptrdiff_t>(zi + 1) * v.y * v.x, f.data.begin());
    return f;
}

inline LabelMap2D slice_labels(const LabelMap& l, int zi) {
    if (zi < 0 || zi >= l.z) throw bounds_error("label slice " + std::to_string(zi) + " out of range");
    LabelMap2D m(l.y, l.x);
    std::copy(l.data.begin() + static_cast<std::ptrdiff_t>(zi) * l.y * l.x,
              l.data.begin() + static_cast<std::ptrdiff_t>(zi + 1) * l.y * l.x, m.data.begin());
    return m;
}

struct SequenceView {
    std::vector<Frame> frames;
    LabelMap2D reference;  // label slice at the first frame
    int z_start = 0;
};

/// `length` consecutive frames along z starting at z_start, plus the label
/// slice at z_start as the reference.
inline SequenceView extract_sequence(const Volume& v, const LabelMap& l, int z_start, int length) {
    if (v.z != l.z || v.y != l.y || v.x != l.x)
        throw shape_error("volume and label map shapes differ");
    if (length < 1 || z_start < 0 || z_start + length > v.z)
        throw bounds_error("sequence [" + std::to_string(z_start) + "," +
                           std::to_string(z_start + length) + ") out of depth " + std::to_string(v.z));
    SequenceView s;
    s.z_start = z_start;
    s.frames.reserve(static_cast<std::size_t>(length));
    for (int t = 0; t < length; ++t) s.frames.push_back(slice_frame(v, z_start + t));
    s.reference = slice_labels(l, z_start);
    return s;
}

/// Level 0 is the input; level i+1 keeps the top-left sample of each 2x2
/// block of level i. Instance ids pass through untouched, so no level can
/// contain an id absent from the input.
inline std::vector<LabelMap2D> label_pyramid(const LabelMap2D& l, int levels) {
    if (levels < 1) throw shape_error("label_pyramid: levels must be >= 1");
    const int factor = 1 << (levels - 1);
    if (l.h % factor != 0 || l.w % factor != 0)
        throw shape_error("label_pyramid: dims (" + std::to_string(l.h) + "," + std::to_string(l.w) +
                          ") not divisible by " + std::to_string(factor));
    std::vector<LabelMap2D> out;
    out.reserve(static_cast<std::size_t>(levels));
    out.push_back(l);
    for (int i = 1; i < levels; ++i) {
        const LabelMap2D& prev = out.back();
        LabelMap2D next(prev.h / 2, prev.w / 2);
        for (int yy = 0; yy < next.h; ++yy)
            for (int xx = 0; xx < next.w; ++xx) next.at(yy, xx) = prev.at(2 * yy, 2 * xx);
        out.push_back(std::move(next));
    }
    return out;
}

} // namespace crs
