#include <doctest.h>

#include "dressi/compiler.hpp"
#include "support/oracle.hpp"
#include "support/testutil.hpp"

using namespace dressi;
using namespace testutil;

TEST_CASE("elementwise broadcast semantics") {
    Graph g;
    Variable x = g.add_input(VType::F32, {2, 2});
    Variable y = g.add_input(VType::F32, {1, 1});
    Variable z = ops::mul(x, y);
    CHECK(z.size() == ImgSize{2, 2});

    ImageBuffer out = run_one(z, {{x, new_image(VType::F32, {2, 2}, {3.0})},
                                  {y, new_image(VType::F32, {1, 1}, {2.0})}});
    CHECK(approx_equal(out, new_image(VType::F32, {2, 2}, {6.0}), 0.0));
}

TEST_CASE("mix with t=0 returns the first input") {
    Graph g;
    Variable a = g.add_input(VType::Vec3, {3, 3});
    Variable b = g.add_input(VType::Vec3, {3, 3});
    Variable t = ops::constant(g, 0.0);
    Variable m = ops::mix(a, b, t);
    std::mt19937 rng(1);
    ImageBuffer ia = random_image(VType::Vec3, {3, 3}, rng);
    ImageBuffer ib = random_image(VType::Vec3, {3, 3}, rng);
    ImageBuffer out = run_one(m, {{a, ia}, {b, ib}});
    CHECK(approx_equal(out, ia, 0.0));
}

TEST_CASE("add of two images of ones") {
    Graph g;
    Variable a = g.add_input(VType::F32, {4, 4});
    Variable b = g.add_input(VType::F32, {4, 4});
    ImageBuffer ones = new_image(VType::F32, {4, 4}, {1.0});
    ImageBuffer out = run_one(ops::add(a, b), {{a, ones}, {b, ones}});
    CHECK(approx_equal(out, new_image(VType::F32, {4, 4}, {2.0}), 0.0));
}

TEST_CASE("reductions") {
    Graph g;
    Variable x = g.add_input(VType::F32, {2, 2});
    ImageBuffer img(VType::F32, {2, 2});
    img.set(0, 0, 0, 1), img.set(1, 0, 0, 2), img.set(0, 1, 0, 3), img.set(1, 1, 0, 4);

    SUBCASE("mean of 2x2") {
        ImageBuffer out = run_one(ops::mean(x), {{x, img}});
        CHECK(out.get(0, 0, 0) == doctest::Approx(2.5));
    }
    SUBCASE("sum_pixel_wise of [A,B] equals Add(A,B)") {
        Variable b = g.add_input(VType::F32, {2, 2});
        Variable s = ops::sum_pixel_wise({x, b});
        Variable a = ops::add(x, b);
        auto outs = run_graph({s, a}, {{x, img}, {b, img}});
        CHECK(approx_equal(outs[0], outs[1], 0.0));
    }
    SUBCASE("mean of 1x1 is identity") {
        Variable v = g.add_input(VType::F32, {1, 1});
        ImageBuffer one = new_image(VType::F32, {1, 1}, {7.25});
        ImageBuffer out = run_one(ops::mean(v), {{v, one}});
        CHECK(out.get(0, 0, 0) == 7.25);
    }
}

TEST_CASE("texture sampling forward semantics") {
    Graph g;
    Variable tex = g.add_input(VType::F32, {2, 2});
    ImageBuffer timg(VType::F32, {2, 2});
    timg.set(0, 0, 0, 1), timg.set(1, 0, 0, 2), timg.set(0, 1, 0, 3), timg.set(1, 1, 0, 4);

    SUBCASE("texel center returns that texel") {
        Variable uv = g.add_input(VType::Vec2, {1, 1});
        ImageBuffer uvb = new_image(VType::Vec2, {1, 1}, {0.25, 0.25});
        ImageBuffer out = run_one(ops::texture_sample(tex, uv), {{tex, timg}, {uv, uvb}});
        CHECK(out.get(0, 0, 0) == doctest::Approx(1.0));
    }
    SUBCASE("midpoint of four texels averages them") {
        Variable uv = g.add_input(VType::Vec2, {1, 1});
        ImageBuffer uvb = new_image(VType::Vec2, {1, 1}, {0.5, 0.5});
        ImageBuffer out = run_one(ops::texture_sample(tex, uv), {{tex, timg}, {uv, uvb}});
        CHECK(out.get(0, 0, 0) == doctest::Approx(2.5));
    }
    SUBCASE("1x1 texture returns its only texel for any uv") {
        Variable t1 = g.add_input(VType::Vec3, {1, 1});
        Variable uv = g.add_input(VType::Vec2, {2, 2});
        std::mt19937 rng(3);
        ImageBuffer uvb = random_image(VType::Vec2, {2, 2}, rng, 0.0, 1.0);
        ImageBuffer texel = new_image(VType::Vec3, {1, 1}, {0.3, 0.6, 0.9});
        ImageBuffer out = run_one(ops::texture_sample(t1, uv), {{t1, texel}, {uv, uvb}});
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x)
                for (int c = 0; c < 3; ++c)
                    CHECK(out.get(x, y, c) == doctest::Approx(texel.get(0, 0, c)));
    }
    SUBCASE("integer texture rejected") {
        Variable it = g.add_input(VType::IVec3, {2, 2});
        Variable uv = g.add_input(VType::Vec2, {1, 1});
        CHECK_THROWS_AS(ops::texture_sample(it, uv), std::invalid_argument);
    }
}

TEST_CASE("rasterize: full-screen triangle with constant attribute") {
    Graph g;
    Variable verts = g.add_input(VType::Vec4, {3, 1});
    Variable attr = g.add_input(VType::F32, {3, 1});
    Variable img = ops::rasterize(verts, attr, {8, 8});

    ImageBuffer vb(VType::Vec4, {3, 1});
    // one triangle covering the whole [-1,1] ndc square
    const double v[3][4] = {{-3, -1, 0, 1}, {3, -1, 0, 1}, {0, 4, 0, 1}};
    for (int k = 0; k < 3; ++k)
        for (int c = 0; c < 4; ++c) vb.set(k, 0, c, v[k][c]);
    ImageBuffer ab = new_image(VType::F32, {3, 1}, {5.0});

    ImageBuffer out = run_one(img, {{verts, vb}, {attr, ab}});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) CHECK(out.get(x, y, 0) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("rasterize: zero triangles leaves the background sentinel") {
    Graph g;
    Variable verts = g.add_input(VType::Vec4, {3, 1});
    Variable attr = g.add_input(VType::IVec3, {3, 1});
    Variable img = ops::rasterize(verts, attr, {4, 4});
    ImageBuffer vb(VType::Vec4, {3, 1});  // w=0 everywhere -> culled
    ImageBuffer ab(VType::IVec3, {3, 1});
    ImageBuffer out = run_one(img, {{verts, vb}, {attr, ab}});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(out.get_i(x, y, 0) == -1);
}

TEST_CASE("rasterize: two disjoint triangles match the half-space oracle") {
    Graph g;
    Variable verts = g.add_input(VType::Vec4, {6, 1});
    Variable attr = g.add_input(VType::F32, {6, 1});
    Variable img = ops::rasterize(verts, attr, {16, 16});

    const oracle::Vec4d t0[3] = {{-0.9, -0.9, 0, 1}, {-0.1, -0.9, 0, 1}, {-0.5, -0.1, 0, 1}};
    const oracle::Vec4d t1[3] = {{0.1, 0.1, 0, 1}, {0.9, 0.15, 0, 1}, {0.55, 0.9, 0, 1}};
    ImageBuffer vb(VType::Vec4, {6, 1});
    ImageBuffer ab(VType::F32, {6, 1});
    auto put = [&](int i, const oracle::Vec4d& v, double a) {
        vb.set(i, 0, 0, v.x), vb.set(i, 0, 1, v.y), vb.set(i, 0, 2, v.z), vb.set(i, 0, 3, v.w);
        ab.set(i, 0, 0, a);
    };
    for (int k = 0; k < 3; ++k) put(k, t0[k], 7.0);
    for (int k = 0; k < 3; ++k) put(3 + k, t1[k], 9.0);

    ImageBuffer out = run_one(img, {{verts, vb}, {attr, ab}});
    auto ref = oracle::rasterize({{t0[0], t0[1], t0[2]}, {t1[0], t1[1], t1[2]}},
                                 {{7.0}, {9.0}}, 1, 16, 16, 0.0);
    CHECK(approx_equal(out, ref.color, 1e-12));
}

TEST_CASE("peel depth stencil values") {
    Graph g;
    Variable depth = g.add_input(VType::F32, {2, 2});
    Variable prev = g.add_input(VType::F32, {2, 2});
    Variable st = ops::peel_depth(depth, prev);

    auto run = [&](double d, double p) {
        return run_one(st, {{depth, new_image(VType::F32, {2, 2}, {d})},
                            {prev, new_image(VType::F32, {2, 2}, {p})}})
            .get(0, 0, 0);
    };
    CHECK(run(0.3, 0.0) == 1.0);   // strictly behind the previous layer
    CHECK(run(0.3, 0.3) == 0.0);   // <= discards
    CHECK(run(0.3, 0.9) == 0.0);
}

TEST_CASE("infer_output_shape") {
    Graph g;
    Variable a = g.add_input(VType::F32, {4, 4});
    Variable b = g.add_input(VType::F32, {1, 1});
    auto [vt, sz] = ops::infer_output_shape("Mul", {a, b});
    CHECK(vt == VType::F32);
    CHECK(sz == ImgSize{4, 4});

    Variable v3 = g.add_input(VType::Vec3, {2, 2});
    Variable f = g.add_input(VType::F32, {2, 2});
    auto [vt2, sz2] = ops::infer_output_shape("Vec4", {v3, f});
    CHECK(vt2 == VType::Vec4);
    CHECK(sz2 == ImgSize{2, 2});

    Variable big = g.add_input(VType::F32, {8, 8});
    CHECK_THROWS_AS(ops::infer_output_shape("Add", {a, big}), std::invalid_argument);
    CHECK_THROWS_AS(ops::build_elementwise("Nope", {a}), std::invalid_argument);
}

TEST_CASE("graph wiring: creator and users are cross-referenced") {
    Graph g;
    Variable x = g.add_input(VType::F32, {2, 2});
    Variable y = ops::sin(x);
    REQUIRE(y.creator() != nullptr);
    CHECK(y.creator()->inputs[0] == x.node);
    bool found = false;
    for (FunctionNode* u : x.node->users)
        if (u == y.creator()) found = true;
    CHECK(found);
}

TEST_CASE("snippet markers recover the arity of the elementwise library") {
    Graph g;
    Variable a = g.add_input(VType::F32, {2, 2});
    Variable b = g.add_input(VType::F32, {2, 2});
    Variable c = g.add_input(VType::F32, {2, 2});
    const std::vector<std::pair<std::string, Variables>> cases = {
        {"Add", {a, b}}, {"Sub", {a, b}}, {"Mul", {a, b}}, {"Div", {a, b}},
        {"Neg", {a}},    {"Abs", {a}},    {"Exp", {a}},    {"Sin", {a}},
        {"Cos", {a}},    {"Sqrt", {a}},   {"Min", {a, b}}, {"Max", {a, b}},
        {"Mix", {a, b, c}}, {"Less", {a, b}}, {"GreaterEq", {a, b}},
    };
    for (const auto& [name, xs] : cases) {
        Variable y = ops::build_elementwise(name, xs);
        CHECK(snippet_arity(y.creator()->snippet) == int(xs.size()));
        // rendering with concrete names produces one assignment statement
        std::vector<std::string> names;
        for (size_t i = 0; i < xs.size(); ++i) names.push_back("n" + std::to_string(i));
        std::string line = render_snippet(y.creator()->snippet, names, "out");
        CHECK(line.find("out=") != std::string::npos);
        CHECK(line.find('{') == std::string::npos);
    }
}
