#include <doctest.h>

#include "dressi/hardsoftras.hpp"
#include "dressi/scene.hpp"
#include "dressi/session.hpp"
#include "support/oracle.hpp"
#include "support/testutil.hpp"

using namespace dressi;
using namespace testutil;

namespace {

// evaluates the Enlarge op for one triangle, returns the 6 output vertices
// as screen-space xy (w already 1)
std::vector<std::array<double, 2>> run_enlarge(const double tri[3][4], double r,
                                               double threshold = 30.0) {
    Graph g;
    Variable p0 = g.add_input(VType::Vec4, {1, 1});
    Variable p1 = g.add_input(VType::Vec4, {1, 1});
    Variable p2 = g.add_input(VType::Vec4, {1, 1});
    Variable out = ops::enlarge(p0, p1, p2, r, threshold);
    auto mk = [&](const double* v) {
        ImageBuffer b(VType::Vec4, {1, 1});
        for (int c = 0; c < 4; ++c) b.put(c, v[c]);
        return b;
    };
    ImageBuffer res = run_one(out, {{p0, mk(tri[0])}, {p1, mk(tri[1])}, {p2, mk(tri[2])}});
    std::vector<std::array<double, 2>> verts;
    for (int i = 0; i < 6; ++i)
        verts.push_back({res.get(i, 0, 0) * 0.5 + 0.5, res.get(i, 0, 1) * 0.5 + 0.5});
    return verts;
}

// screen-space triangle -> clip vertices (w=1)
void screen_tri_clip(const double s[3][2], double tri[3][4], double z = 0.0) {
    for (int k = 0; k < 3; ++k) {
        tri[k][0] = s[k][0] * 2 - 1;
        tri[k][1] = s[k][1] * 2 - 1;
        tri[k][2] = z;
        tri[k][3] = 1.0;
    }
}

bool in_enlarged_union(const std::vector<std::array<double, 2>>& ev, double px, double py) {
    const bool t0 = oracle::point_in_triangle(ev[0][0], ev[0][1], ev[1][0], ev[1][1], ev[2][0],
                                              ev[2][1], px, py);
    const bool t1 = oracle::point_in_triangle(ev[3][0], ev[3][1], ev[4][0], ev[4][1], ev[5][0],
                                              ev[5][1], px, py);
    return t0 || t1;
}

}  // namespace

TEST_CASE("shift: paper values and branch boundary") {
    Graph g;
    Variable depth = g.add_input(VType::F32, {1, 1});
    Variable dist = g.add_input(VType::F32, {1, 1});
    Variable s = build_shift(depth, dist);
    auto shift = [&](double d, double q) {
        return run_one(s, {{depth, new_image(VType::F32, {1, 1}, {d})},
                           {dist, new_image(VType::F32, {1, 1}, {q})}})
            .at(0);
    };
    CHECK(shift(0.4, 0.2) == doctest::Approx(0.2));     // hard branch
    CHECK(shift(0.4, -0.3) == doctest::Approx(0.65));   // soft branch
    CHECK(shift(1.0, 0.0) == doctest::Approx(0.5));     // hard face wins ties
    CHECK(shift(0.0, -1e-9) > 0.5);
}

TEST_CASE("shift ordering: no soft fragment depth-beats a hard fragment") {
    Graph g;
    Variable depth = g.add_input(VType::F32, {64, 64});
    Variable dist = g.add_input(VType::F32, {64, 64});
    Variable s = build_shift(depth, dist);
    std::mt19937 rng(77);
    ImageBuffer db = random_image(VType::F32, {64, 64}, rng, 0.0, 1.0);
    ImageBuffer qb = random_image(VType::F32, {64, 64}, rng, -1.0, 1.0);
    ImageBuffer out = run_one(s, {{depth, db}, {dist, qb}});
    for (size_t i = 0; i < out.value_count(); ++i) {
        if (qb.at(i) >= 0)
            CHECK(out.at(i) <= 0.5);
        else
            CHECK(out.at(i) >= 0.5);
    }
}

TEST_CASE("enlarge: zero radius reproduces the input triangle") {
    const double s[3][2] = {{0.3, 0.3}, {0.7, 0.3}, {0.5, 0.65}};
    double tri[3][4];
    screen_tri_clip(s, tri);
    auto ev = run_enlarge(tri, 0.0);
    for (int k = 0; k < 3; ++k) {
        CHECK(ev[k][0] == doctest::Approx(s[k][0]).epsilon(1e-12));
        CHECK(ev[k][1] == doctest::Approx(s[k][1]).epsilon(1e-12));
    }
    // second primitive is degenerate (all at the origin sentinel)
    CHECK(ev[3][0] == doctest::Approx(0.5));  // 0 in ndc maps to 0.5 in screen
    CHECK(ev[4][0] == doctest::Approx(0.5));
}

TEST_CASE("enlarge: equilateral vertices move r/sin(30deg) outward") {
    const double cx = 0.5, cy = 0.5, rad = 0.2;
    double s[3][2];
    for (int k = 0; k < 3; ++k) {
        const double a = M_PI / 2 + k * 2 * M_PI / 3;
        s[k][0] = cx + rad * std::cos(a);
        s[k][1] = cy + rad * std::sin(a);
    }
    double tri[3][4];
    screen_tri_clip(s, tri);
    auto ev = run_enlarge(tri, 0.1);
    for (int k = 0; k < 3; ++k) {
        const double moved = std::hypot(ev[k][0] - s[k][0], ev[k][1] - s[k][1]);
        CHECK(moved == doctest::Approx(0.1 / std::sin(M_PI / 6)).epsilon(1e-9));  // 0.2
        // direction: away from the centroid
        const double ox = s[k][0] - cx, oy = s[k][1] - cy;
        const double dx = ev[k][0] - s[k][0], dy = ev[k][1] - s[k][1];
        CHECK(ox * dx + oy * dy > 0);
    }
}

TEST_CASE("enlarge: slivers take the expanded bounding-box path") {
    // 10 degree minimum angle
    const double s[3][2] = {{0.2, 0.5}, {0.8, 0.5}, {0.75, 0.5 + 0.55 * std::tan(10 * M_PI / 180)}};
    double tri[3][4];
    screen_tri_clip(s, tri);
    auto ev = run_enlarge(tri, 0.05);
    // both primitives are live and axis-aligned
    const double xs[6] = {ev[0][0], ev[1][0], ev[2][0], ev[3][0], ev[4][0], ev[5][0]};
    const double xmin = *std::min_element(xs, xs + 6), xmax = *std::max_element(xs, xs + 6);
    CHECK(xmin == doctest::Approx(0.2 - 0.05));
    CHECK(xmax == doctest::Approx(0.8 + 0.05));
    for (double px = 0.16; px < 0.84; px += 0.05)
        CHECK(in_enlarged_union(ev, px, 0.5));
}

TEST_CASE("enlarge coverage: points within r lie inside the enlarged union") {
    std::mt19937 rng(5150);
    std::uniform_real_distribution<double> pos(0.15, 0.85);
    int tested = 0;
    for (int t = 0; t < 12; ++t) {
        double s[3][2];
        for (auto& v : s) {
            v[0] = pos(rng);
            v[1] = pos(rng);
        }
        const double r = 0.04;
        double tri[3][4];
        screen_tri_clip(s, tri);
        auto ev = run_enlarge(tri, r);
        std::uniform_real_distribution<double> off(-r, r);
        for (int i = 0; i < 800; ++i) {
            const double px = pos(rng) + off(rng), py = pos(rng) + off(rng);
            const double d = oracle::signed_triangle_distance(px, py, s[0][0], s[0][1], s[1][0],
                                                              s[1][1], s[2][0], s[2][1]);
            if (d < -r || d > 0) continue;  // want points outside but within r
            INFO("tri ", t, " point (", px, ",", py, ") dist ", d);
            CHECK(in_enlarged_union(ev, px, py));
            ++tested;
        }
    }
    CHECK(tested > 500);
}

namespace {

struct DistFixture {
    Graph g;
    Variable clip, idx;
    Variable dist;
    Variable b0, b1, b2;
    ImgSize target{2, 2};

    DistFixture() {
        clip = g.add_input(VType::Vec4, {3, 1});
        idx = g.add_input(VType::IVec3, target);
        Variable cov = ops::broadcast(ops::constant(g, 1.0), target);
        dist = build_signed_dist(clip, idx, cov, target);
        Barycentric b = build_barycentric(clip, idx, cov, target);
        b0 = b.b0, b1 = b.b1, b2 = b.b2;
    }

    std::vector<std::pair<Variable, ImageBuffer>> bindings(const double s[3][2]) {
        double tri[3][4];
        screen_tri_clip(s, tri);
        ImageBuffer cb(VType::Vec4, {3, 1});
        for (int k = 0; k < 3; ++k)
            for (int c = 0; c < 4; ++c) cb.set(k, 0, c, tri[k][c]);
        ImageBuffer ib(VType::IVec3, target);
        for (int64_t p = 0; p < ib.pixel_count(); ++p)
            for (int c = 0; c < 3; ++c) ib.put(size_t(p) * 3 + c, c);
        return {{clip, cb}, {idx, ib}};
    }
};

}  // namespace

TEST_CASE("signed distance matches the point-to-segment oracle") {
    DistFixture fx;
    // triangle (0,0),(1,0),(0,1) in screen space; 2x2 pixel centers at 0.25/0.75
    const double s[3][2] = {{0, 0}, {1, 0}, {0, 1}};
    ImageBuffer out = run_one(fx.dist, fx.bindings(s));
    CHECK(out.get(0, 0, 0) == doctest::Approx(0.25).epsilon(1e-9));  // frozen oracle value
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            const double px = (x + 0.5) / 2, py = (y + 0.5) / 2;
            const double ref =
                oracle::signed_triangle_distance(px, py, s[0][0], s[0][1], s[1][0], s[1][1],
                                                 s[2][0], s[2][1]);
            CHECK(out.get(x, y, 0) == doctest::Approx(ref).epsilon(1e-9));
        }
}

TEST_CASE("signed distance is zero on the boundary") {
    Graph g;
    Variable clip = g.add_input(VType::Vec4, {3, 1});
    Variable idx = g.add_input(VType::IVec3, {1, 1});
    Variable cov = ops::broadcast(ops::constant(g, 1.0), {1, 1});
    Variable dist = build_signed_dist(clip, idx, cov, {1, 1});
    // 1x1 target: the single pixel center is (0.5, 0.5); put an edge there
    const double s[3][2] = {{0.2, 0.5}, {0.8, 0.5}, {0.5, 0.9}};
    double tri[3][4];
    screen_tri_clip(s, tri);
    ImageBuffer cb(VType::Vec4, {3, 1});
    for (int k = 0; k < 3; ++k)
        for (int c = 0; c < 4; ++c) cb.set(k, 0, c, tri[k][c]);
    ImageBuffer ib(VType::IVec3, {1, 1});
    for (int c = 0; c < 3; ++c) ib.put(c, c);
    ImageBuffer out = run_one(dist, {{clip, cb}, {idx, ib}});
    CHECK(out.at(0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("barycentric interpolation: vertex, centroid, affine extrapolation") {
    DistFixture fx;
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> pos(0.05, 0.95);
    for (int trial = 0; trial < 10; ++trial) {
        double s[3][2];
        for (auto& v : s) {
            v[0] = pos(rng);
            v[1] = pos(rng);
        }
        auto outs = run_graph({fx.b0, fx.b1, fx.b2}, fx.bindings(s));
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                const double px = (x + 0.5) / 2, py = (y + 0.5) / 2;
                auto ref = oracle::solve_barycentric(px, py, s[0][0], s[0][1], s[1][0], s[1][1],
                                                     s[2][0], s[2][1]);
                CHECK(outs[0].get(x, y, 0) == doctest::Approx(ref[0]).epsilon(1e-7));
                CHECK(outs[1].get(x, y, 0) == doctest::Approx(ref[1]).epsilon(1e-7));
                CHECK(outs[2].get(x, y, 0) == doctest::Approx(ref[2]).epsilon(1e-7));
            }
    }
}

TEST_CASE("blend: sigmoid midpoint and binary occupancy") {
    Graph g;
    Variable bg = g.add_input(VType::Vec3, {1, 1});
    const ImgSize target{2, 2};
    auto constant_img = [&](double v) { return ops::broadcast(ops::constant(g, v), target); };
    Variable c1 = ops::splat(constant_img(0.8), VType::Vec3);
    Variable c2 = ops::splat(constant_img(0.2), VType::Vec3);
    Variable one = constant_img(1.0);
    Variable zero_dist = constant_img(0.0);

    HardSoftRasParams params = HardSoftRasParams::softras_mode(0.07, 2);  // E == 1
    BlendResult blend = build_blend({c1, c2}, {one, one}, {zero_dist, zero_dist}, bg, params,
                                    target);
    auto outs = run_graph({blend.color, blend.silhouette},
                          {{bg, new_image(VType::Vec3, {1, 1}, {0, 0, 0})}});
    // D_k = sigmoid(0) = 0.5 for both layers
    CHECK(outs[1].get(0, 0, 0) == doctest::Approx(0.75));          // 1 - (1-0.5)^2
    CHECK(outs[0].get(0, 0, 0) == doctest::Approx(0.5));           // (0.5*0.8+0.5*0.2)/1.0
}

TEST_CASE("blend: non-edge branch equals hard rasterization") {
    // E == 0 everywhere when the hard stencil has no boundary
    Graph g;
    Variable bg = g.add_input(VType::Vec3, {1, 1});
    const ImgSize target{4, 4};
    auto constant_img = [&](double v) { return ops::broadcast(ops::constant(g, v), target); };
    Variable c1 = ops::splat(constant_img(0.6), VType::Vec3);
    Variable one = constant_img(1.0);
    Variable dist_inside = constant_img(0.3);  // fully hard coverage

    HardSoftRasParams params;
    params.r = 0.07;
    params.K = 1;
    BlendResult blend = build_blend({c1}, {one}, {dist_inside}, bg, params, target);
    auto outs = run_graph({blend.color, blend.silhouette, blend.edge_mask},
                          {{bg, new_image(VType::Vec3, {1, 1}, {0, 0, 0})}});
    for (int64_t p = 0; p < 16; ++p) {
        CHECK(outs[2].at(size_t(p)) == 0.0);                      // no boundary -> E == 0
        CHECK(outs[0].at(size_t(p) * 3) == doctest::Approx(0.6));  // S^H * C_1
        CHECK(outs[1].at(size_t(p)) == 1.0);
    }
}

TEST_CASE("edge mask bands") {
    Graph g;
    const ImgSize target{16, 16};
    Variable sh = g.add_input(VType::F32, target);

    SUBCASE("constant coverage has no boundary") {
        Variable mask = build_edge_mask(sh, 1.0 / 16, target);
        ImageBuffer out = run_one(mask, {{sh, new_image(VType::F32, target, {1.0})}});
        for (size_t i = 0; i < out.value_count(); ++i) CHECK(out.at(i) == 0.0);
    }
    SUBCASE("a vertical step with delta=1px marks the two-pixel band") {
        ImageBuffer step(VType::F32, target);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) step.set(x, y, 0, x < 8 ? 1.0 : 0.0);
        Variable mask = build_edge_mask(sh, 1.0 / 16, target);
        ImageBuffer out = run_one(mask, {{sh, step}});
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                CHECK(out.get(x, y, 0) == ((x == 7 || x == 8) ? 1.0 : 0.0));
    }
    SUBCASE("wider delta matches the morphological dilation oracle") {
        ImageBuffer blob(VType::F32, target);
        for (int y = 5; y < 11; ++y)
            for (int x = 4; x < 12; ++x) blob.set(x, y, 0, 1.0);
        const double delta = 3.0 / 16;
        Variable mask = build_edge_mask(sh, delta, target);
        ImageBuffer out = run_one(mask, {{sh, blob}});

        // oracle: boundary detection then 3x3 dilation
        ImageBuffer boundary(VType::F32, target);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                double m = 0;
                const int n[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
                for (auto& d : n) {
                    const int nx = std::clamp(x + d[0], 0, 15), ny = std::clamp(y + d[1], 0, 15);
                    m = std::max(m, std::abs(blob.get(x, y, 0) - blob.get(nx, ny, 0)));
                }
                boundary.set(x, y, 0, m);
            }
        ImageBuffer ref = oracle::dilate3x3(boundary, int(std::lround(delta * 16)) - 1);
        CHECK(approx_equal(out, ref, 0.0));
    }
}

TEST_CASE("full render smoke: icosphere silhouette is sane") {
    Graph g;
    MeshBuffers mesh = make_icosphere(1);
    SceneVars scene;
    scene.vtx_pos = g.add_input(VType::Vec3, mesh.positions.size(), "vtx_pos");
    scene.vtx_uv = g.add_input(VType::Vec2, mesh.uvs.size(), "vtx_uv");
    scene.faces = g.add_input(VType::IVec3, mesh.faces.size(), "faces");
    scene.model_mat = g.add_input(VType::Mat4, {1, 1}, "model");
    scene.view_mat = g.add_input(VType::Mat4, {1, 1}, "view");
    scene.prj_mat = g.add_input(VType::Mat4, {1, 1}, "prj");
    scene.albedo = g.add_input(VType::Vec3, {8, 8}, "albedo");
    scene.background = g.add_input(VType::Vec3, {1, 1}, "bg");

    const ImgSize target{32, 32};
    HardSoftRasParams params;
    params.r = HardSoftRasParams::pixels_to_norm(2.0, target);
    params.K = 2;
    RenderResult render = build_render(scene, params, ShadingMode::Unlit, target);

    CompiledPlan plan = compile({render.rgba, render.silhouette});
    ExecutionContext ctx;
    install_plan(plan, ctx);
    upload(scene.vtx_pos, mesh.positions, ctx);
    upload(scene.vtx_uv, mesh.uvs, ctx);
    upload(scene.faces, mesh.faces, ctx);
    upload(scene.model_mat, mat4_image(mat4_identity()), ctx);
    upload(scene.view_mat, mat4_image(make_look_at({0, 0, 2.5}, {0, 0, 0}, {0, 1, 0})), ctx);
    upload(scene.prj_mat, mat4_image(make_perspective(60, 1, 0.1, 10)), ctx);
    upload(scene.albedo, make_checkerboard(8, 4), ctx);
    upload(scene.background, new_image(VType::Vec3, {1, 1}, {0, 0, 0}), ctx);
    execute_step(plan, ctx);

    ImageBuffer sil = download(render.silhouette, ctx);
    double inside = 0, border_pixels = 0;
    for (size_t i = 0; i < sil.value_count(); ++i) {
        CHECK(sil.at(i) >= 0.0);
        CHECK(sil.at(i) <= 1.0);
        if (sil.at(i) > 0.9) ++inside;
        if (sil.at(i) > 0.05 && sil.at(i) < 0.95) ++border_pixels;
    }
    CHECK(inside > 100);        // the sphere covers a solid chunk of 32x32
    CHECK(border_pixels > 10);  // soft transition exists at the silhouette
    // center pixel is fully covered, corner is background
    CHECK(sil.get(16, 16, 0) == doctest::Approx(1.0));
    CHECK(sil.get(0, 0, 0) == doctest::Approx(0.0));
}
