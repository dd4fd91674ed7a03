#pragma once

#include <algorithm>
#include <random>

#include "dressi/image.hpp"
#include "dressi/kernels.hpp"
#include "dressi/sobol.hpp"

namespace dressi {

// Texture-space lookup table mapping each texel to the screen position that
// sampled it last, plus the per-frame write count (an integer add, which the
// graphics pipeline supports even where atomic float adds are missing).
// Later writes win, which is why the write order is disrupted per frame.
struct InverseUvTexture {
    ImageBuffer positions;  // Vec2, texture-sized, screen positions in [0,1]^2
    std::vector<uint8_t> valid;
    std::vector<int32_t> counts;

    InverseUvTexture() = default;
    explicit InverseUvTexture(ImgSize tex_size)
        : positions(VType::Vec2, tex_size),
          valid(size_t(tex_size.pixels()), 0),
          counts(size_t(tex_size.pixels()), 0) {}
};

namespace texgrad_detail {

// Footprint of one bilinear texture fetch: 4 corner texels and weights.
struct Footprint {
    int x[2], y[2];
    double wx[2], wy[2];
};

inline Footprint footprint(const ImgSize& tex, double u, double v) {
    Footprint fp;
    double fx, fy;
    kern::bilinear_setup(std::clamp(u, 0.0, 1.0), tex.width, fp.x[0], fp.x[1], fx);
    kern::bilinear_setup(std::clamp(v, 0.0, 1.0), tex.height, fp.y[0], fp.y[1], fy);
    fp.wx[0] = 1.0 - fx, fp.wx[1] = fx;
    fp.wy[0] = 1.0 - fy, fp.wy[1] = fy;
    return fp;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline double hash_unit(uint64_t a, uint64_t b) {
    return double(splitmix64(a * 0x9e3779b97f4a7c15ull + b) >> 11) * 0x1.0p-53;
}

}  // namespace texgrad_detail

// Iterates screen pixels (in a per-frame disrupted order when jitter is on);
// each fetches its UV at a Sobol-jittered position and stores that position
// at one texel of its bilinear footprint, chosen with probability equal to
// the texel's bilinear coefficient. Later writes overwrite earlier ones; the
// per-texel write count survives as an integer accumulator.
inline InverseUvTexture compute_inverse_uv(const ImageBuffer& uv_image, ImgSize tex_size,
                                           uint64_t frame, bool jitter = true,
                                           const ImageBuffer* valid_mask = nullptr) {
    using namespace texgrad_detail;
    if (uv_image.vtype() != VType::Vec2)
        throw std::invalid_argument("compute_inverse_uv: uv image must be vec2");
    InverseUvTexture inv(tex_size);
    const int W = uv_image.width(), H = uv_image.height();
    const int64_t n = int64_t(W) * H;
    Sobol2D sobol;
    const uint64_t base = frame * uint64_t(n);

    // a constant sampling order leads to an imbalance; key the order and the
    // footprint choice off the frame
    auto order = std::vector<int32_t>(size_t(n));
    for (int64_t i = 0; i < n; ++i) order[size_t(i)] = int32_t(i);
    if (jitter) {
        std::mt19937 perm(uint32_t(splitmix64(frame + 1)));
        std::shuffle(order.begin(), order.end(), perm);
    }

    for (int64_t oi = 0; oi < n; ++oi) {
        const int64_t i = order[size_t(oi)];
        if (valid_mask && valid_mask->at(size_t(i)) == 0.0) continue;
        const int x = int(i % W), y = int(i / W);
        double jx = 0.0, jy = 0.0;
        if (jitter) {
            double sx, sy;
            sobol.sample(uint32_t(base + uint64_t(i)), sx, sy);
            jx = (sx - 0.5) / W;
            jy = (sy - 0.5) / H;
        }
        const double px = (x + 0.5) / W + jx;
        const double py = (y + 0.5) / H + jy;
        double uv[2];
        kern::texture_bilinear(uv_image, std::clamp(px, 0.0, 1.0), std::clamp(py, 0.0, 1.0), uv);
        const auto fp = footprint(tex_size, uv[0], uv[1]);

        const double pick = hash_unit(jitter ? base + uint64_t(i) : uint64_t(i), 0x7ea1);
        double cdf = 0.0;
        int tx = fp.x[1], ty = fp.y[1];
        for (int cy = 0; cy < 2 && pick >= cdf; ++cy)
            for (int cx = 0; cx < 2; ++cx) {
                cdf += fp.wx[cx] * fp.wy[cy];
                if (pick < cdf) {
                    tx = fp.x[cx];
                    ty = fp.y[cy];
                    break;
                }
            }

        inv.positions.set(tx, ty, 0, px);
        inv.positions.set(tx, ty, 1, py);
        const size_t t = size_t(ty) * tex_size.width + tx;
        inv.valid[t] = 1;
        inv.counts[t] += 1;
    }
    return inv;
}

// Per texel: read the upstream gradient at the stored screen position and
// scale it by the write count. Because texels are addressed with probability
// equal to their bilinear coefficient, the per-frame expectation of
// count * grad equals the dense bilinear scatter sum; invalid texels
// contribute zero.
inline ImageBuffer gather_texture_gradient(const InverseUvTexture& inv,
                                           const ImageBuffer& screen_grad,
                                           const ImageBuffer& uv_image) {
    (void)uv_image;  // the sample weight is already encoded in the addressing
    const ImgSize tex_size = inv.positions.size();
    ImageBuffer out(screen_grad.vtype(), tex_size);
    const int ch = out.channels();
    for (int ty = 0; ty < tex_size.height; ++ty) {
        for (int tx = 0; tx < tex_size.width; ++tx) {
            const size_t t = size_t(ty) * tex_size.width + tx;
            if (!inv.valid[t]) continue;
            const double px = inv.positions.get(tx, ty, 0);
            const double py = inv.positions.get(tx, ty, 1);
            double g[16];
            kern::texture_bilinear(screen_grad, std::clamp(px, 0.0, 1.0),
                                   std::clamp(py, 0.0, 1.0), g);
            for (int c = 0; c < ch; ++c) out.set(tx, ty, c, g[c] * inv.counts[t]);
        }
    }
    return out;
}

// Exact dense scatter-add: every screen pixel deposits its gradient into its
// four bilinear texels, row-major accumulation order. This is the reference
// the jitter-averaged gather path is validated against.
inline ImageBuffer scatter_gradient_oracle(const ImageBuffer& screen_grad,
                                           const ImageBuffer& uv_image, ImgSize tex_size,
                                           const ImageBuffer* valid_mask = nullptr) {
    using texgrad_detail::footprint;
    if (uv_image.vtype() != VType::Vec2)
        throw std::invalid_argument("scatter_gradient_oracle: uv image must be vec2");
    ImageBuffer out(screen_grad.vtype(), tex_size);
    const int ch = out.channels();
    const int W = uv_image.width(), H = uv_image.height();
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const int64_t i = int64_t(y) * W + x;
            if (valid_mask && valid_mask->at(size_t(i)) == 0.0) continue;
            const auto fp = footprint(tex_size, uv_image.get(x, y, 0), uv_image.get(x, y, 1));
            for (int cy = 0; cy < 2; ++cy)
                for (int cx = 0; cx < 2; ++cx) {
                    const double w = fp.wx[cx] * fp.wy[cy];
                    if (w == 0.0) continue;
                    for (int c = 0; c < ch; ++c) {
                        const double cur = out.get(fp.x[cx], fp.y[cy], c);
                        out.set(fp.x[cx], fp.y[cy], c,
                                cur + screen_grad.get(x, y, c) * w);
                    }
                }
        }
    }
    return out;
}

}  // namespace dressi
