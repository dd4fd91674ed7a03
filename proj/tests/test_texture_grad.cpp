#include <doctest.h>

#include "dressi/texture_grad.hpp"
#include "support/testutil.hpp"

using namespace dressi;
using namespace testutil;

namespace {

// smooth, slightly warped uv field covering most of the texture
ImageBuffer smooth_uv(ImgSize screen) {
    ImageBuffer uv(VType::Vec2, screen);
    for (int y = 0; y < screen.height; ++y)
        for (int x = 0; x < screen.width; ++x) {
            const double px = (x + 0.5) / screen.width, py = (y + 0.5) / screen.height;
            uv.set(x, y, 0, 0.05 + 0.9 * px + 0.02 * std::sin(2 * M_PI * py));
            uv.set(x, y, 1, 0.05 + 0.9 * py + 0.02 * std::cos(2 * M_PI * px));
        }
    return uv;
}

}  // namespace

TEST_CASE("identity uv map without jitter inverts to pixel centers") {
    const ImgSize size{8, 8};
    ImageBuffer uv(VType::Vec2, size);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            uv.set(x, y, 0, (x + 0.5) / 8);
            uv.set(x, y, 1, (y + 0.5) / 8);
        }
    InverseUvTexture inv = compute_inverse_uv(uv, size, 0, /*jitter=*/false);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            CHECK(inv.valid[size_t(y) * 8 + x] == 1);
            CHECK(inv.positions.get(x, y, 0) == doctest::Approx((x + 0.5) / 8));
            CHECK(inv.positions.get(x, y, 1) == doctest::Approx((y + 0.5) / 8));
        }
}

TEST_CASE("contended texel keeps the last writer; jitter varies the survivor") {
    const ImgSize screen{8, 8};
    const ImgSize tex{4, 4};
    ImageBuffer uv(VType::Vec2, screen);
    uv.fill(std::array<double, 2>{0.1, 0.1});  // everyone addresses texel (0,0)

    InverseUvTexture inv0 = compute_inverse_uv(uv, tex, 0, false);
    int valid_count = 0;
    for (uint8_t v : inv0.valid) valid_count += v;
    CHECK(valid_count == 1);  // one survivor per frame
    // without jitter the survivor is the last pixel in row-major order
    CHECK(inv0.positions.get(0, 0, 0) == doctest::Approx((7 + 0.5) / 8));
    CHECK(inv0.positions.get(0, 0, 1) == doctest::Approx((7 + 0.5) / 8));

    // with jitter the stored position varies across frames
    std::set<double> stored;
    for (uint64_t frame = 0; frame < 8; ++frame) {
        InverseUvTexture inv = compute_inverse_uv(uv, tex, frame, true);
        stored.insert(inv.positions.get(0, 0, 0));
    }
    CHECK(stored.size() > 1);
}

TEST_CASE("uncovered texels are invalid and contribute zero gradient") {
    const ImgSize screen{4, 4};
    const ImgSize tex{8, 8};
    ImageBuffer uv(VType::Vec2, screen);
    uv.fill(std::array<double, 2>{0.2, 0.2});  // upper-left area only
    InverseUvTexture inv = compute_inverse_uv(uv, tex, 0, false);
    ImageBuffer grad(VType::F32, screen);
    grad.fill(std::array<double, 1>{1.0});
    ImageBuffer gtex = gather_texture_gradient(inv, grad, uv);
    CHECK(gtex.get(7, 7, 0) == 0.0);
    CHECK(inv.valid[63] == 0);
}

TEST_CASE("weight-1 sample lands the full gradient on its texel") {
    const ImgSize screen{1, 1};
    const ImgSize tex{4, 4};
    ImageBuffer uv(VType::Vec2, screen);
    uv.set(0, 0, 0, (2 + 0.5) / 4);  // texel (2,1) center
    uv.set(0, 0, 1, (1 + 0.5) / 4);
    InverseUvTexture inv = compute_inverse_uv(uv, tex, 0, false);
    ImageBuffer grad(VType::F32, screen);
    grad.set(0, 0, 0, 3.5);
    ImageBuffer gtex = gather_texture_gradient(inv, grad, uv);
    CHECK(gtex.get(2, 1, 0) == doctest::Approx(3.5));

    ImageBuffer oracle = scatter_gradient_oracle(grad, uv, tex);
    CHECK(approx_equal(gtex, oracle, 1e-12));  // single contributor: paths agree
}

TEST_CASE("zero screen gradient gives zero texture gradient") {
    const ImgSize screen{8, 8};
    const ImgSize tex{4, 4};
    ImageBuffer uv = smooth_uv(screen);
    InverseUvTexture inv = compute_inverse_uv(uv, tex, 3, true);
    ImageBuffer grad(VType::Vec3, screen);  // zeros
    ImageBuffer gtex = gather_texture_gradient(inv, grad, uv);
    for (size_t i = 0; i < gtex.value_count(); ++i) CHECK(gtex.at(i) == 0.0);
}

TEST_CASE("scatter oracle: disjoint deposits sum and mass is conserved") {
    const ImgSize screen{2, 1};
    const ImgSize tex{8, 8};
    ImageBuffer uv(VType::Vec2, screen);
    uv.set(0, 0, 0, (1 + 0.5) / 8), uv.set(0, 0, 1, (1 + 0.5) / 8);
    uv.set(1, 0, 0, (5 + 0.5) / 8), uv.set(1, 0, 1, (6 + 0.5) / 8);
    ImageBuffer grad(VType::F32, screen);
    grad.set(0, 0, 0, 2.0);
    grad.set(1, 0, 0, 5.0);
    ImageBuffer out = scatter_gradient_oracle(grad, uv, tex);
    CHECK(out.get(1, 1, 0) == doctest::Approx(2.0));
    CHECK(out.get(5, 6, 0) == doctest::Approx(5.0));

    // conservation: bilinear weights sum to one per contributing pixel
    double total = 0;
    for (size_t i = 0; i < out.value_count(); ++i) total += out.at(i);
    CHECK(total == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("jitter-averaged gather converges to the scatter oracle") {
    const ImgSize screen{32, 32};
    const ImgSize tex{16, 16};
    ImageBuffer uv = smooth_uv(screen);
    // smooth upstream gradient, the regime optimization actually produces
    ImageBuffer grad(VType::F32, screen);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            grad.set(x, y, 0,
                     std::sin(2 * M_PI * (x + 0.5) / 32) * std::cos(2 * M_PI * (y + 0.5) / 32) +
                         0.3);

    ImageBuffer oracle = scatter_gradient_oracle(grad, uv, tex);

    auto averaged = [&](bool jitter, int frames) {
        ImageBuffer acc(VType::F32, tex);
        for (int f = 0; f < frames; ++f) {
            InverseUvTexture inv = compute_inverse_uv(uv, tex, uint64_t(f), jitter);
            ImageBuffer g = gather_texture_gradient(inv, grad, uv);
            for (size_t i = 0; i < acc.value_count(); ++i) acc.put(i, acc.at(i) + g.at(i));
        }
        for (size_t i = 0; i < acc.value_count(); ++i) acc.put(i, acc.at(i) / frames);
        return acc;
    };

    auto rel_err = [&](const ImageBuffer& got) {
        double num = 0, den = 0;
        for (size_t i = 0; i < got.value_count(); ++i) {
            num += (got.at(i) - oracle.at(i)) * (got.at(i) - oracle.at(i));
            den += oracle.at(i) * oracle.at(i);
        }
        return std::sqrt(num / den);
    };

    const double err_jitter = rel_err(averaged(true, 256));
    const double err_static = rel_err(averaged(false, 256));
    INFO("jittered err=", err_jitter, " static err=", err_static);
    CHECK(err_jitter <= 0.10);
    CHECK(err_static > err_jitter);  // constant sampling order leaves an imbalance
}
