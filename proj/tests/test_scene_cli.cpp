#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dressi/tasks.hpp"
#include "support/testutil.hpp"

using namespace dressi;
using namespace testutil;

namespace fs = std::filesystem;

namespace {
fs::path tmpdir() {
    auto p = fs::temp_directory_path() / "dressi_scene_cli_test";
    fs::create_directories(p);
    return p;
}
}  // namespace

TEST_CASE("mesh loading") {
    const auto dir = tmpdir();
    SUBCASE("unit quad round trip") {
        MeshBuffers quad = make_quad();
        save_mesh((dir / "quad.obj").string(), quad);
        MeshBuffers again = load_mesh((dir / "quad.obj").string());
        CHECK(again.vertex_count() == 4);
        CHECK(again.face_count() == 2);
        CHECK(approx_equal(again.positions, quad.positions, 0.0));
        CHECK(approx_equal(again.uvs, quad.uvs, 0.0));
        CHECK(approx_equal(again.faces, quad.faces, 0.0));
    }
    SUBCASE("missing uvs fall back to zeros with a warning flag") {
        std::ofstream f(dir / "nouv.obj");
        f << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        f.close();
        MeshBuffers m = load_mesh((dir / "nouv.obj").string());
        CHECK(m.uvs_missing);
        for (size_t i = 0; i < m.uvs.value_count(); ++i) CHECK(m.uvs.at(i) == 0.0);
    }
    SUBCASE("non-triangle faces are rejected") {
        std::ofstream f(dir / "quadface.obj");
        f << "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        f.close();
        CHECK_THROWS_AS(load_mesh((dir / "quadface.obj").string()), std::runtime_error);
    }
    SUBCASE("out-of-range indices are rejected") {
        std::ofstream f(dir / "badidx.obj");
        f << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n";
        f.close();
        CHECK_THROWS_AS(load_mesh((dir / "badidx.obj").string()), std::runtime_error);
    }
}

TEST_CASE("png io") {
    const auto dir = tmpdir();
    SUBCASE("rgb round trip within quantization") {
        std::mt19937 rng(17);
        ImageBuffer img = random_image(VType::Vec3, {9, 7}, rng, 0.0, 1.0);
        save_png((dir / "rt.png").string(), img);
        ImageBuffer back = load_png((dir / "rt.png").string());
        REQUIRE(back.size() == img.size());
        for (size_t i = 0; i < img.value_count(); ++i)
            CHECK(back.at(i) == doctest::Approx(img.at(i)).epsilon(0).scale(0).epsilon(1e9));
        double max_err = 0;
        for (size_t i = 0; i < img.value_count(); ++i)
            max_err = std::max(max_err, std::abs(back.at(i) - img.at(i)));
        CHECK(max_err < 0.011);  // 8-bit sRGB quantization bound in linear space
    }
    SUBCASE("rgba alpha preserved") {
        ImageBuffer img = new_image(VType::Vec4, {4, 4}, {0.2, 0.4, 0.6, 0.31});
        save_png((dir / "rgba.png").string(), img);
        ImageBuffer back = load_png((dir / "rgba.png").string());
        CHECK(back.vtype() == VType::Vec4);
        CHECK(std::abs(back.get(0, 0, 3) - 0.31) < 1.0 / 255 + 1e-9);
    }
    SUBCASE("16-bit input rejected") {
        // take a valid file, flip the bit-depth byte and patch the CRC
        ImageBuffer img = new_image(VType::Vec3, {2, 2}, {0.5, 0.5, 0.5});
        save_png((dir / "depth16.png").string(), img);
        std::ifstream in(dir / "depth16.png", std::ios::binary);
        std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
        in.close();
        data[8 + 8 + 8] = 16;  // IHDR bit depth
        std::ofstream out(dir / "depth16.png", std::ios::binary);
        out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
        out.close();
        CHECK_THROWS_WITH_AS(load_png((dir / "depth16.png").string()),
                             doctest::Contains("8-bit"), std::runtime_error);
    }
}

TEST_CASE("config parsing and asset specs") {
    json j = {{"task", "optimize-texture"}, {"width", 96},       {"K", 3},
              {"lr", 0.5},                  {"seed", 42},        {"loss", "l2_color"},
              {"background", {1.0, 0.0, 0.0}}};
    RunConfig cfg = parse_config(j);
    CHECK(cfg.task == "optimize-texture");
    CHECK(cfg.width == 96);
    CHECK(cfg.height == 128);  // untouched default
    CHECK(cfg.K == 3);
    CHECK(cfg.lr == 0.5);
    CHECK(cfg.seed == 42);
    CHECK(cfg.background[0] == 1.0);

    MeshBuffers ell = resolve_mesh_spec("builtin:ellipsoid:1:2.0:1.0:1.0");
    MeshBuffers ico = resolve_mesh_spec("builtin:icosphere:1");
    CHECK(ell.vertex_count() == ico.vertex_count());
    double max_x = 0;
    for (int i = 0; i < ell.vertex_count(); ++i)
        max_x = std::max(max_x, std::abs(ell.positions.get(i, 0, 0)));
    CHECK(max_x == doctest::Approx(2.0).epsilon(0.01));

    ImageBuffer checker = resolve_texture_spec("checker:16:4");
    CHECK(checker.size() == ImgSize{16, 16});
    ImageBuffer flat = resolve_texture_spec("flat:0.2,0.3,0.4:8");
    CHECK(flat.get(3, 3, 2) == doctest::Approx(0.4));
}

TEST_CASE("scene save/load round trip") {
    const auto dir = (tmpdir() / "scene").string();
    MeshBuffers mesh = make_icosphere(1);
    ImageBuffer albedo = make_checkerboard(16, 4);
    save_scene(dir, mesh, &albedo);
    LoadedScene back = load_scene(dir);
    CHECK(approx_equal(back.mesh.positions, mesh.positions, 0.0));  // text format is exact
    CHECK(approx_equal(back.mesh.faces, mesh.faces, 0.0));
    REQUIRE(back.albedo.size() == albedo.size());
    double max_err = 0;
    for (size_t i = 0; i < albedo.value_count(); ++i)
        max_err = std::max(max_err, std::abs(back.albedo.at(i) - albedo.at(i)));
    CHECK(max_err < 0.011);  // within png quantization
}

TEST_CASE("render task determinism: same config and seed, identical bytes") {
    auto run = [](const std::string& out) {
        RunConfig cfg;
        cfg.task = "render";
        cfg.width = cfg.height = 48;
        cfg.views = 2;
        cfg.mesh = "builtin:icosphere:1";
        cfg.albedo = "checker:16:4";
        cfg.out_dir = out;
        cfg.seed = 7;
        run_task(cfg);
    };
    const auto a = (tmpdir() / "det_a").string(), b = (tmpdir() / "det_b").string();
    run(a);
    run(b);
    for (int k = 0; k < 2; ++k) {
        const std::string name = "/render_view" + std::to_string(k) + ".png";
        std::ifstream fa(a + name, std::ios::binary), fb(b + name, std::ios::binary);
        std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        REQUIRE(!da.empty());
        CHECK(da == db);
    }
}

TEST_CASE("optimize task determinism: loss columns repeat exactly") {
    auto run = [](const std::string& out) {
        RunConfig cfg;
        cfg.task = "optimize-texture";
        cfg.mesh = "builtin:quad";
        cfg.albedo = "flat:0.5,0.5,0.5:16";
        cfg.target_albedo = "checker:16:4";
        cfg.width = cfg.height = 32;
        cfg.views = 2;
        cfg.orbit_arc_deg = 40;
        cfg.loss = "l2_color";
        cfg.iterations = 6;
        cfg.log_every = 0;
        cfg.out_dir = out;
        return run_task(cfg);
    };
    TaskResult r1 = run((tmpdir() / "opt_a").string());
    TaskResult r2 = run((tmpdir() / "opt_b").string());
    REQUIRE(r1.log.loss.size() == r2.log.loss.size());
    for (size_t i = 0; i < r1.log.loss.size(); ++i) {
        CHECK(r1.log.loss[i] == r2.log.loss[i]);  // bit-identical
        CHECK(r1.log.kernels[i] == r2.log.kernels[i]);
    }
}

TEST_CASE("csv schema") {
    IterationLog log;
    StepStats st;
    st.executed_kernels = 5;
    log.append(0.25, st, 7, 3, 1.5);
    const auto path = (tmpdir() / "log.csv").string();
    log.write_csv(path);
    std::ifstream in(path);
    std::string l1, l2, l3;
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    CHECK(l1 == "# dressi-csv v1");
    CHECK(l2 == "iteration,loss,executed_kernels,substages,stages,wall_ms");
    CHECK(l3.rfind("0,0.25,5,7,3,", 0) == 0);
}

TEST_CASE("unknown task is rejected") {
    RunConfig cfg;
    cfg.task = "frobnicate";
    CHECK_THROWS_AS(run_task(cfg), std::invalid_argument);
}
