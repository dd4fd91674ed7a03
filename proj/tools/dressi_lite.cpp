#include <CLI11.hpp>

#include "dressi/tasks.hpp"

int main(int argc, char** argv) {
    CLI::App app{"dressi-lite: differentiable rasterization engine"};
    app.require_subcommand(0, 0);

    std::string task;
    std::string config_path, out_dir, profile, mode, loss, mesh, albedo;
    uint64_t seed = 0;
    int iterations = -1, views = -1, width = -1, height = -1, K = -1;
    double r_px = -1, lr = -1;
    bool no_cache = false, no_jitter = false;

    app.add_option("task", task,
                   "render | gradcheck | optimize-geometry | optimize-texture | "
                   "optimize-normalmap | compile-report")
        ->required();
    app.add_option("--config", config_path, "JSON configuration file");
    auto* oseed = app.add_option("--seed", seed, "seed for all stochastic elements");
    auto* oout = app.add_option("--out", out_dir, "output directory");
    auto* oprofile = app.add_option("--profile", profile,
                                    "hardware profile: unbounded|desktop|laptop|mobile");
    auto* oiter = app.add_option("--iterations", iterations);
    auto* oviews = app.add_option("--views", views);
    auto* owidth = app.add_option("--width", width);
    auto* oheight = app.add_option("--height", height);
    auto* oK = app.add_option("-K,--peel-buffers", K);
    auto* orpx = app.add_option("--r-px", r_px, "blur radius in pixels");
    auto* olr = app.add_option("--lr", lr);
    auto* omode = app.add_option("--mode", mode, "default|aa|softras");
    auto* oloss = app.add_option("--loss", loss);
    auto* omesh = app.add_option("--mesh", mesh);
    auto* oalbedo = app.add_option("--albedo", albedo);
    app.add_flag("--no-cache", no_cache, "disable the reactive cache");
    app.add_flag("--no-jitter", no_jitter, "disable inverse-UV jitter");

    CLI11_PARSE(app, argc, argv);

    try {
        dressi::RunConfig cfg;
        if (!config_path.empty()) cfg = dressi::load_config(config_path);
        cfg.task = task;
        if (*oseed) cfg.seed = seed;
        if (*oout) cfg.out_dir = out_dir;
        if (*oprofile) cfg.profile = profile;
        if (*oiter) cfg.iterations = iterations;
        if (*oviews) cfg.views = views;
        if (*owidth) cfg.width = width;
        if (*oheight) cfg.height = height;
        if (*oK) cfg.K = K;
        if (*orpx) cfg.r_px = r_px;
        if (*olr) cfg.lr = lr;
        if (*omode) cfg.mode = mode;
        if (*oloss) cfg.loss = loss;
        if (*omesh) cfg.mesh = mesh;
        if (*oalbedo) cfg.albedo = albedo;
        if (no_cache) cfg.cache = false;
        if (no_jitter) cfg.jitter = false;
        return dressi::run_task(cfg).exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
