#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dressi {

// Pixel element types. Channel count is fixed per tag.
enum class VType : uint8_t { F32, Vec2, Vec3, Vec4, Mat4, I32, IVec3 };

constexpr int channel_count(VType t) {
    switch (t) {
        case VType::F32: return 1;
        case VType::Vec2: return 2;
        case VType::Vec3: return 3;
        case VType::Vec4: return 4;
        case VType::Mat4: return 16;
        case VType::I32: return 1;
        case VType::IVec3: return 3;
    }
    return 0;
}

constexpr bool is_integer(VType t) { return t == VType::I32 || t == VType::IVec3; }
constexpr bool is_float(VType t) { return !is_integer(t); }

inline const char* vtype_name(VType t) {
    switch (t) {
        case VType::F32: return "float";
        case VType::Vec2: return "vec2";
        case VType::Vec3: return "vec3";
        case VType::Vec4: return "vec4";
        case VType::Mat4: return "mat4";
        case VType::I32: return "int";
        case VType::IVec3: return "ivec3";
    }
    return "?";
}

// Returns the vector type with n float channels.
inline VType float_vtype(int n) {
    switch (n) {
        case 1: return VType::F32;
        case 2: return VType::Vec2;
        case 3: return VType::Vec3;
        case 4: return VType::Vec4;
        case 16: return VType::Mat4;
    }
    throw std::invalid_argument("float_vtype: unsupported channel count " + std::to_string(n));
}

struct ImgSize {
    int width = 1;
    int height = 1;

    bool operator==(const ImgSize&) const = default;
    int64_t pixels() const { return int64_t(width) * height; }
    bool is_uniform() const { return width == 1 && height == 1; }
    std::string str() const { return std::to_string(width) + "x" + std::to_string(height); }
};

// A W x H array of typed pixels, the universal value container: vertex
// buffers, textures, matrices and rendered images all live here.
// Float tags store 64-bit values, integer tags store 32-bit ints.
// Row-major, top-left origin; pixel centers sit at ((i+0.5)/W, (j+0.5)/H)
// in normalized [0,1] screen coordinates.
class ImageBuffer {
public:
    ImageBuffer() = default;

    ImageBuffer(VType vtype, ImgSize size) : vtype_(vtype), size_(size) {
        if (size.width < 1 || size.height < 1)
            throw std::invalid_argument("ImageBuffer: size must be at least 1x1");
        const size_t n = size_t(size.pixels()) * channel_count(vtype);
        if (is_integer(vtype))
            i32_.assign(n, 0);
        else
            f64_.assign(n, 0.0);
    }

    VType vtype() const { return vtype_; }
    ImgSize size() const { return size_; }
    int width() const { return size_.width; }
    int height() const { return size_.height; }
    int channels() const { return channel_count(vtype_); }
    int64_t pixel_count() const { return size_.pixels(); }
    size_t value_count() const { return size_t(size_.pixels()) * channels(); }
    bool empty() const { return f64_.empty() && i32_.empty(); }

    double get(int x, int y, int c) const {
        const size_t i = flat(x, y, c);
        return is_integer(vtype_) ? double(i32_[i]) : f64_[i];
    }
    void set(int x, int y, int c, double v) {
        const size_t i = flat(x, y, c);
        if (is_integer(vtype_))
            i32_[i] = int32_t(std::llround(v));
        else
            f64_[i] = v;
    }
    int32_t get_i(int x, int y, int c) const {
        const size_t i = flat(x, y, c);
        return is_integer(vtype_) ? i32_[i] : int32_t(std::llround(f64_[i]));
    }

    // Flat-index access (value index = (y*W + x)*channels + c).
    double at(size_t i) const { return is_integer(vtype_) ? double(i32_[i]) : f64_[i]; }
    void put(size_t i, double v) {
        if (is_integer(vtype_))
            i32_[i] = int32_t(std::llround(v));
        else
            f64_[i] = v;
    }

    std::span<double> floats() { return f64_; }
    std::span<const double> floats() const { return f64_; }
    std::span<int32_t> ints() { return i32_; }
    std::span<const int32_t> ints() const { return i32_; }

    void fill(std::span<const double> per_channel) {
        if (int(per_channel.size()) != channels())
            throw std::invalid_argument("fill: arity mismatch, expected " +
                                        std::to_string(channels()) + " channels, got " +
                                        std::to_string(per_channel.size()));
        for (int64_t p = 0; p < pixel_count(); ++p)
            for (int c = 0; c < channels(); ++c) put(size_t(p) * channels() + c, per_channel[c]);
    }

    bool all_finite() const {
        for (double v : f64_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const ImageBuffer& o) const {
        return vtype_ == o.vtype_ && size_ == o.size_ && f64_ == o.f64_ && i32_ == o.i32_;
    }

private:
    size_t flat(int x, int y, int c) const {
        return (size_t(y) * size_.width + x) * channels() + c;
    }

    VType vtype_ = VType::F32;
    ImgSize size_{1, 1};
    std::vector<double> f64_;
    std::vector<int32_t> i32_;
};

inline ImageBuffer new_image(VType vtype, ImgSize size, std::initializer_list<double> fill) {
    ImageBuffer img(vtype, size);
    img.fill(std::span<const double>(fill.begin(), fill.size()));
    return img;
}

inline ImageBuffer new_image(VType vtype, ImgSize size, std::span<const double> fill) {
    ImageBuffer img(vtype, size);
    img.fill(fill);
    return img;
}

// Channel-wise relative comparison: max |a-b| / max(1,|b|) <= tol.
inline bool approx_equal(const ImageBuffer& a, const ImageBuffer& b, double tol) {
    if (a.vtype() != b.vtype() || a.size() != b.size())
        throw std::invalid_argument("approx_equal: shape mismatch (" + a.size().str() + " vs " +
                                    b.size().str() + ")");
    for (size_t i = 0; i < a.value_count(); ++i) {
        const double av = a.at(i), bv = b.at(i);
        if (std::abs(av - bv) / std::max(1.0, std::abs(bv)) > tol) return false;
    }
    return true;
}

inline double max_rel_diff(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.vtype() != b.vtype() || a.size() != b.size())
        throw std::invalid_argument("max_rel_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.value_count(); ++i)
        m = std::max(m, std::abs(a.at(i) - b.at(i)) / std::max(1.0, std::abs(b.at(i))));
    return m;
}

}  // namespace dressi
