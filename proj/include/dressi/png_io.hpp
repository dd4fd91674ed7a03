#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "dressi/image.hpp"

namespace dressi {

// 8-bit RGB/RGBA PNG round-trip over zlib, sRGB-encoded on disk and linear
// in memory.

namespace png_detail {

inline double linear_to_srgb(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

inline double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

inline uint32_t read_u32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}

inline void write_chunk(std::vector<uint8_t>& out, const char type[4],
                        const std::vector<uint8_t>& data) {
    put_u32(out, uint32_t(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc =
        uint32_t(::crc32(0, out.data() + start, uInt(out.size() - start)));
    put_u32(out, crc);
}

inline uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return uint8_t(a);
    if (pb <= pc) return uint8_t(b);
    return uint8_t(c);
}

}  // namespace png_detail

inline void save_png(const std::string& path, const ImageBuffer& img, bool srgb = true) {
    using namespace png_detail;
    if (!is_float(img.vtype())) throw std::invalid_argument("save_png: float image required");
    const int W = img.width(), H = img.height();
    const int ch = img.vtype() == VType::Vec4 ? 4 : 3;

    auto channel_at = [&](int x, int y, int c) -> double {
        if (img.vtype() == VType::F32) return img.get(x, y, 0);
        if (c < img.channels()) return img.get(x, y, c);
        return 1.0;
    };

    std::vector<uint8_t> raw;
    raw.reserve(size_t(H) * (1 + size_t(W) * ch));
    for (int y = 0; y < H; ++y) {
        raw.push_back(0);  // filter: none
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < ch; ++c) {
                double v = channel_at(x, y, c);
                if (srgb && c < 3) v = linear_to_srgb(v);
                raw.push_back(uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
            }
    }

    uLongf zcap = compressBound(uLong(raw.size()));
    std::vector<uint8_t> zdata(zcap);
    if (compress2(zdata.data(), &zcap, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw std::runtime_error("save_png: deflate failed");
    zdata.resize(zcap);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, uint32_t(W));
    put_u32(ihdr, uint32_t(H));
    ihdr.push_back(8);                       // bit depth
    ihdr.push_back(ch == 4 ? 6 : 2);         // color type
    ihdr.push_back(0), ihdr.push_back(0), ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", zdata);
    write_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
}

inline ImageBuffer load_png(const std::string& path, bool srgb = true) {
    using namespace png_detail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_png: cannot open " + path);
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
    if (data.size() < 8 || std::memcmp(data.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
        throw std::runtime_error("load_png: not a png file");

    int W = 0, H = 0, depth = 0, color = 0;
    std::vector<uint8_t> zdata;
    size_t pos = 8;
    while (pos + 8 <= data.size()) {
        const uint32_t len = read_u32(&data[pos]);
        const std::string type(reinterpret_cast<const char*>(&data[pos + 4]), 4);
        const uint8_t* payload = &data[pos + 8];
        if (type == "IHDR") {
            W = int(read_u32(payload));
            H = int(read_u32(payload + 4));
            depth = payload[8];
            color = payload[9];
            if (depth != 8) throw std::runtime_error("load_png: only 8-bit images supported");
            if (color != 2 && color != 6)
                throw std::runtime_error("load_png: only RGB/RGBA images supported");
            if (payload[12] != 0) throw std::runtime_error("load_png: interlacing unsupported");
        } else if (type == "IDAT") {
            zdata.insert(zdata.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (W <= 0 || H <= 0) throw std::runtime_error("load_png: missing IHDR");

    const int ch = color == 6 ? 4 : 3;
    const size_t stride = size_t(W) * ch;
    std::vector<uint8_t> raw(size_t(H) * (stride + 1));
    uLongf rawlen = uLongf(raw.size());
    if (uncompress(raw.data(), &rawlen, zdata.data(), uLong(zdata.size())) != Z_OK ||
        rawlen != raw.size())
        throw std::runtime_error("load_png: inflate failed");

    // undo scanline filters in place
    std::vector<uint8_t> prev(stride, 0);
    ImageBuffer img(ch == 4 ? VType::Vec4 : VType::Vec3, {W, H});
    for (int y = 0; y < H; ++y) {
        const uint8_t filter = raw[size_t(y) * (stride + 1)];
        uint8_t* row = &raw[size_t(y) * (stride + 1) + 1];
        for (size_t i = 0; i < stride; ++i) {
            const int a = i >= size_t(ch) ? row[i - ch] : 0;
            const int b = prev[i];
            const int c = i >= size_t(ch) ? prev[i - ch] : 0;
            switch (filter) {
                case 0: break;
                case 1: row[i] = uint8_t(row[i] + a); break;
                case 2: row[i] = uint8_t(row[i] + b); break;
                case 3: row[i] = uint8_t(row[i] + (a + b) / 2); break;
                case 4: row[i] = uint8_t(row[i] + paeth(a, b, c)); break;
                default: throw std::runtime_error("load_png: bad filter byte");
            }
        }
        std::memcpy(prev.data(), row, stride);
        for (int x = 0; x < W; ++x)
            for (int cidx = 0; cidx < ch; ++cidx) {
                double v = row[size_t(x) * ch + cidx] / 255.0;
                if (srgb && cidx < 3) v = srgb_to_linear(v);
                img.set(x, y, cidx, v);
            }
    }
    return img;
}

}  // namespace dressi
