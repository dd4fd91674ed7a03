#pragma once

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dressi/gradcheck.hpp"
#include "dressi/hardsoftras.hpp"
#include "dressi/png_io.hpp"
#include "dressi/scene.hpp"
#include "dressi/session.hpp"

namespace dressi {

using json = nlohmann::json;

// ---- run configuration ----

struct RunConfig {
    std::string task = "render";
    std::string mesh = "builtin:icosphere:2";
    std::string target_mesh = "builtin:ellipsoid:2:1.25:0.8:1.0";
    std::string albedo = "flat:0.5,0.5,0.5:64";   // path | flat:r,g,b:SIZE | checker:SIZE:CELLS
    std::string target_albedo = "checker:64:8";
    bool use_normal_map = false;
    int normal_map_size = 64;
    std::array<double, 3> background{0, 0, 0};
    std::array<double, 3> light_dir{-0.3, -0.4, -1.0};
    std::array<double, 3> light_color{1, 1, 1};
    std::string shading = "unlit";  // unlit | lambert

    int width = 128, height = 128;
    std::string mode = "default";  // default | aa | softras
    double r_px = 3.0;
    int K = 2;
    double sigma_px = -1;  // default r/7
    double delta_px = -1;  // default r
    bool shift = true;
    bool jitter = true;

    std::string profile = "unbounded";
    std::string optimizer = "adam";  // adam | sgd
    double lr = 0.02;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double laplacian_weight = 0.0;
    double laplacian_gamma = 0.999;
    std::string loss = "l2_silhouette";  // l1_color | l2_color | l2_silhouette | l2_color_silhouette

    int iterations = 500;
    int views = 6;
    std::string views_mode = "round_robin";  // round_robin | random
    double orbit_radius = 2.8;
    double orbit_elevation_deg = 20.0;
    double orbit_start_deg = 90.0;  // +z axis
    double orbit_arc_deg = 360.0;
    double fov_deg = 45.0;
    int texture_size = 64;

    uint64_t seed = 0;
    bool cache = true;
    int threads = -1;
    int log_every = 1;
    std::string out_dir = "out";
};

inline RunConfig parse_config(const json& j, RunConfig cfg = {}) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("task", cfg.task);
    get("mesh", cfg.mesh);
    get("target_mesh", cfg.target_mesh);
    get("albedo", cfg.albedo);
    get("target_albedo", cfg.target_albedo);
    get("use_normal_map", cfg.use_normal_map);
    get("normal_map_size", cfg.normal_map_size);
    get("background", cfg.background);
    get("light_dir", cfg.light_dir);
    get("light_color", cfg.light_color);
    get("shading", cfg.shading);
    get("width", cfg.width);
    get("height", cfg.height);
    get("mode", cfg.mode);
    get("r_px", cfg.r_px);
    get("K", cfg.K);
    get("sigma_px", cfg.sigma_px);
    get("delta_px", cfg.delta_px);
    get("shift", cfg.shift);
    get("jitter", cfg.jitter);
    get("profile", cfg.profile);
    get("optimizer", cfg.optimizer);
    get("lr", cfg.lr);
    get("beta1", cfg.beta1);
    get("beta2", cfg.beta2);
    get("eps", cfg.eps);
    get("laplacian_weight", cfg.laplacian_weight);
    get("laplacian_gamma", cfg.laplacian_gamma);
    get("loss", cfg.loss);
    get("iterations", cfg.iterations);
    get("views", cfg.views);
    get("views_mode", cfg.views_mode);
    get("orbit_radius", cfg.orbit_radius);
    get("orbit_elevation_deg", cfg.orbit_elevation_deg);
    get("orbit_start_deg", cfg.orbit_start_deg);
    get("orbit_arc_deg", cfg.orbit_arc_deg);
    get("fov_deg", cfg.fov_deg);
    get("texture_size", cfg.texture_size);
    get("seed", cfg.seed);
    get("cache", cfg.cache);
    get("threads", cfg.threads);
    get("log_every", cfg.log_every);
    get("out", cfg.out_dir);
    return cfg;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_config: cannot open " + path);
    json j;
    in >> j;
    return parse_config(j, std::move(base));
}

// ---- asset resolution ----

inline MeshBuffers resolve_mesh_spec(const std::string& spec) {
    if (spec.rfind("builtin:ellipsoid", 0) == 0) {
        int sub = 2;
        double sx = 1, sy = 1, sz = 1;
        std::sscanf(spec.c_str(), "builtin:ellipsoid:%d:%lf:%lf:%lf", &sub, &sx, &sy, &sz);
        MeshBuffers m = make_icosphere(sub);
        for (int i = 0; i < m.vertex_count(); ++i) {
            m.positions.set(i, 0, 0, m.positions.get(i, 0, 0) * sx);
            m.positions.set(i, 0, 1, m.positions.get(i, 0, 1) * sy);
            m.positions.set(i, 0, 2, m.positions.get(i, 0, 2) * sz);
        }
        return m;
    }
    // sphere with radial ridges: fine silhouette detail at a few pixels scale
    if (spec.rfind("builtin:bumpy", 0) == 0) {
        int sub = 3;
        double amp = 0.12;
        std::sscanf(spec.c_str(), "builtin:bumpy:%d:%lf", &sub, &amp);
        MeshBuffers m = make_icosphere(sub);
        for (int i = 0; i < m.vertex_count(); ++i) {
            const double x = m.positions.get(i, 0, 0);
            const double y = m.positions.get(i, 0, 1);
            const double z = m.positions.get(i, 0, 2);
            const double az = std::atan2(z, x);
            const double scale = 1.0 + amp * std::sin(4.0 * std::asin(std::clamp(y, -1.0, 1.0))) *
                                            std::cos(5.0 * az);
            m.positions.set(i, 0, 0, x * scale);
            m.positions.set(i, 0, 1, y * scale);
            m.positions.set(i, 0, 2, z * scale);
        }
        return m;
    }
    return resolve_mesh(spec);
}

inline ImageBuffer resolve_texture_spec(const std::string& spec) {
    if (spec.rfind("checker:", 0) == 0) {
        int size = 64, cells = 8;
        std::sscanf(spec.c_str(), "checker:%d:%d", &size, &cells);
        return make_checkerboard(size, cells);
    }
    if (spec.rfind("flat:", 0) == 0) {
        double r = 0.5, g = 0.5, b = 0.5;
        int size = 64;
        std::sscanf(spec.c_str(), "flat:%lf,%lf,%lf:%d", &r, &g, &b, &size);
        return new_image(VType::Vec3, {size, size}, {r, g, b});
    }
    return load_png(spec);
}

// Ripple height field encoded as an object-space normal map.
inline ImageBuffer make_ripple_normal_map(int size) {
    ImageBuffer img(VType::Vec3, {size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = (x + 0.5) / size, v = (y + 0.5) / size;
            const double hx = 0.6 * std::cos(6 * M_PI * u) * 6 * M_PI * 0.04;
            const double hy = 0.6 * std::cos(4 * M_PI * v) * 4 * M_PI * 0.04;
            double n[3] = {-hx, -hy, 1.0};
            const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
            for (int c = 0; c < 3; ++c) img.set(x, y, c, n[c] / len * 0.5 + 0.5);
        }
    return img;
}

// ---- scene graph assembly ----

struct TaskScene {
    std::unique_ptr<Graph> graph;
    SceneVars vars;
    MeshBuffers mesh;
    ImageBuffer albedo;
    ImageBuffer normal_map;
    std::vector<Mat4> views;
    Mat4 proj;
    HardSoftRasParams params;
    ShadingMode shading = ShadingMode::Unlit;
    ImgSize target{128, 128};
    RenderResult render;
};

inline std::vector<Mat4> make_orbit_views(const RunConfig& cfg) {
    std::vector<Mat4> views;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> az_dist(0, 2 * M_PI);
    std::uniform_real_distribution<double> el_dist(-M_PI / 4, M_PI / 4);
    for (int k = 0; k < std::max(1, cfg.views); ++k) {
        double az, el;
        if (cfg.views_mode == "random") {
            az = az_dist(rng);
            el = el_dist(rng);
        } else {
            const int n = std::max(1, cfg.views);
            const double span = cfg.orbit_arc_deg >= 360.0 ? double(n) : double(std::max(1, n - 1));
            az = (cfg.orbit_start_deg + cfg.orbit_arc_deg * k / span) * M_PI / 180.0;
            el = cfg.orbit_elevation_deg * M_PI / 180.0;
        }
        const double r = cfg.orbit_radius;
        std::array<double, 3> eye = {r * std::cos(el) * std::cos(az), r * std::sin(el),
                                     r * std::cos(el) * std::sin(az)};
        views.push_back(make_look_at(eye, {0, 0, 0}, {0, 1, 0}));
    }
    return views;
}

inline HardSoftRasParams params_from_config(const RunConfig& cfg, ImgSize target) {
    HardSoftRasParams p;
    if (cfg.mode == "aa") {
        p = HardSoftRasParams::aa_mode(target, cfg.r_px);
    } else if (cfg.mode == "softras") {
        p = HardSoftRasParams::softras_mode(HardSoftRasParams::pixels_to_norm(cfg.r_px, target),
                                            cfg.K);
    } else {
        p.r = HardSoftRasParams::pixels_to_norm(cfg.r_px, target);
        p.K = cfg.K;
    }
    if (cfg.sigma_px > 0) p.sigma = HardSoftRasParams::pixels_to_norm(cfg.sigma_px, target);
    if (cfg.delta_px >= 0) p.delta = HardSoftRasParams::pixels_to_norm(cfg.delta_px, target);
    p.shift_enabled = cfg.shift;
    p.jitter = cfg.jitter;
    return p;
}

inline TaskScene build_task_scene(const RunConfig& cfg, const std::string& mesh_spec,
                                  const std::string& albedo_spec,
                                  const ImageBuffer* normal_map = nullptr) {
    TaskScene ts;
    ts.graph = std::make_unique<Graph>();
    Graph& g = *ts.graph;
    ts.mesh = resolve_mesh_spec(mesh_spec);
    ts.albedo = resolve_texture_spec(albedo_spec);
    ts.target = {cfg.width, cfg.height};
    ts.params = params_from_config(cfg, ts.target);
    ts.shading = cfg.shading == "lambert" ? ShadingMode::Lambert : ShadingMode::Unlit;
    ts.views = make_orbit_views(cfg);
    ts.proj = make_perspective(cfg.fov_deg, double(cfg.width) / cfg.height, 0.1, 100.0);

    ts.vars.vtx_pos = g.add_input(VType::Vec3, ts.mesh.positions.size(), "vtx_pos");
    ts.vars.vtx_uv = g.add_input(VType::Vec2, ts.mesh.uvs.size(), "vtx_uv");
    ts.vars.faces = g.add_input(VType::IVec3, ts.mesh.faces.size(), "faces");
    ts.vars.model_mat = g.add_input(VType::Mat4, {1, 1}, "model_mat");
    ts.vars.view_mat = g.add_input(VType::Mat4, {1, 1}, "view_mat");
    ts.vars.prj_mat = g.add_input(VType::Mat4, {1, 1}, "prj_mat");
    ts.vars.albedo = g.add_input(VType::Vec3, ts.albedo.size(), "albedo");
    ts.vars.background = g.add_input(VType::Vec3, {1, 1}, "background");
    if (normal_map) {
        ts.normal_map = *normal_map;
        ts.vars.normal_map = g.add_input(VType::Vec3, ts.normal_map.size(), "normal_map");
    }
    if (ts.shading == ShadingMode::Lambert) {
        ts.vars.light_dir = g.add_input(VType::Vec3, {1, 1}, "light_dir");
        ts.vars.light_color = g.add_input(VType::Vec3, {1, 1}, "light_color");
    }
    ts.render = build_render(ts.vars, ts.params, ts.shading, ts.target);
    return ts;
}

inline void upload_scene_inputs(Session& session, const TaskScene& ts, const RunConfig& cfg) {
    session.upload_input(ts.vars.vtx_pos, ts.mesh.positions);
    session.upload_input(ts.vars.vtx_uv, ts.mesh.uvs);
    session.upload_input(ts.vars.faces, ts.mesh.faces);
    session.upload_input(ts.vars.model_mat, mat4_image(mat4_identity()));
    session.upload_input(ts.vars.view_mat, mat4_image(ts.views[0]));
    session.upload_input(ts.vars.prj_mat, mat4_image(ts.proj));
    session.upload_input(ts.vars.albedo, ts.albedo);
    session.upload_input(ts.vars.background,
                         new_image(VType::Vec3, {1, 1},
                                   {cfg.background[0], cfg.background[1], cfg.background[2]}));
    if (ts.vars.normal_map) session.upload_input(ts.vars.normal_map, ts.normal_map);
    if (ts.vars.light_dir) {
        session.upload_input(ts.vars.light_dir,
                             new_image(VType::Vec3, {1, 1},
                                       {cfg.light_dir[0], cfg.light_dir[1], cfg.light_dir[2]}));
        session.upload_input(
            ts.vars.light_color,
            new_image(VType::Vec3, {1, 1},
                      {cfg.light_color[0], cfg.light_color[1], cfg.light_color[2]}));
    }
}

inline SessionOptions session_options(const RunConfig& cfg) {
    SessionOptions so;
    so.profile = HardwareProfile::by_name(cfg.profile);
    so.cache = cfg.cache;
    so.threads = cfg.threads;
    return so;
}

// Renders every configured view of a scene at fixed parameters.
struct ViewImages {
    std::vector<ImageBuffer> color;       // Vec3
    std::vector<ImageBuffer> silhouette;  // F32
    std::vector<ImageBuffer> uv;          // Vec2, front layer
};

inline ViewImages render_views(TaskScene& ts, const RunConfig& cfg) {
    Session session(*ts.graph, session_options(cfg));
    session.add_output(ts.render.color);
    session.add_output(ts.render.silhouette);
    session.add_output(ts.render.passes[0].uv);
    upload_scene_inputs(session, ts, cfg);
    ViewImages out;
    for (const Mat4& view : ts.views) {
        session.upload_input(ts.vars.view_mat, mat4_image(view));
        session.exec_eval();
        out.color.push_back(session.read(ts.render.color));
        out.silhouette.push_back(session.read(ts.render.silhouette));
        out.uv.push_back(session.read(ts.render.passes[0].uv));
    }
    return out;
}

// ---- loss construction ----

struct LossSetup {
    Variable loss;
    Variable target_color;  // bound only when used
    Variable target_sil;
};

inline LossSetup build_loss(const RunConfig& cfg, TaskScene& ts) {
    Graph& g = *ts.graph;
    LossSetup ls;
    Variable color_term, sil_term;
    if (cfg.loss == "l1_color" || cfg.loss == "l2_color" || cfg.loss == "l2_color_silhouette") {
        ls.target_color = g.add_input(VType::Vec3, ts.target, "target_color");
        Variable d = ops::sub(ts.render.color, ls.target_color);
        color_term = cfg.loss == "l1_color" ? ops::mean(ops::abs(d)) : ops::mean(ops::mul(d, d));
    }
    if (cfg.loss == "l2_silhouette" || cfg.loss == "l2_color_silhouette") {
        ls.target_sil = g.add_input(VType::F32, ts.target, "target_sil");
        Variable d = ops::sub(ts.render.silhouette, ls.target_sil);
        sil_term = ops::mean(ops::mul(d, d));
    }
    if (color_term && sil_term)
        ls.loss = ops::add(color_term, sil_term);
    else if (color_term)
        ls.loss = color_term;
    else if (sil_term)
        ls.loss = sil_term;
    else
        throw std::invalid_argument("build_loss: unknown loss " + cfg.loss);
    return ls;
}

// ---- CSV log ----

struct IterationLog {
    std::vector<double> loss;
    std::vector<int64_t> kernels;
    std::vector<size_t> substages, stages;
    std::vector<double> wall_ms;

    void append(double l, const StepStats& st, size_t nsub, size_t nstage, double ms) {
        loss.push_back(l);
        kernels.push_back(st.executed_kernels);
        substages.push_back(nsub);
        stages.push_back(nstage);
        wall_ms.push_back(ms);
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        out << "# dressi-csv v1\n";
        out << "iteration,loss,executed_kernels,substages,stages,wall_ms\n";
        out.precision(17);
        for (size_t i = 0; i < loss.size(); ++i)
            out << i << "," << loss[i] << "," << kernels[i] << "," << substages[i] << ","
                << stages[i] << "," << wall_ms[i] << "\n";
    }
};

struct TaskResult {
    int exit_code = 0;
    IterationLog log;
    std::map<std::string, double> metrics;
};

// ---- tasks ----

inline TaskResult run_render(const RunConfig& cfg) {
    TaskResult res;
    std::filesystem::create_directories(cfg.out_dir);
    ImageBuffer normal = make_ripple_normal_map(cfg.normal_map_size);
    TaskScene ts = build_task_scene(cfg, cfg.mesh, cfg.albedo,
                                    cfg.use_normal_map ? &normal : nullptr);
    Session session(*ts.graph, session_options(cfg));
    session.add_output(ts.render.rgba);
    upload_scene_inputs(session, ts, cfg);
    for (size_t k = 0; k < ts.views.size(); ++k) {
        session.upload_input(ts.vars.view_mat, mat4_image(ts.views[k]));
        session.exec_eval();
        save_png(cfg.out_dir + "/render_view" + std::to_string(k) + ".png",
                 session.read(ts.render.rgba));
    }
    std::cout << "wrote " << ts.views.size() << " renders to " << cfg.out_dir << "\n";
    return res;
}

inline TaskResult run_gradcheck_task(const RunConfig& cfg) {
    TaskResult res;
    std::filesystem::create_directories(cfg.out_dir);
    GradCheckReport report = run_gradcheck(cfg.seed, 100);
    std::ofstream csv(cfg.out_dir + "/gradcheck.csv");
    csv << "# dressi-csv v1\nop,cases,max_rel_err,pass\n";
    std::cout << "op                max_rel_err  result\n";
    for (const auto& row : report.rows) {
        std::printf("%-18s %.3e    %s\n", row.op.c_str(), row.max_rel_err,
                    row.pass ? "pass" : "FAIL");
        csv << row.op << "," << row.cases << "," << row.max_rel_err << ","
            << (row.pass ? "pass" : "fail") << "\n";
    }
    res.exit_code = report.all_pass ? 0 : 1;
    res.metrics["all_pass"] = report.all_pass ? 1.0 : 0.0;
    return res;
}

struct OptimizeLoop {
    Session* session;
    LossSetup* loss;
    TaskScene* scene;
    const ViewImages* targets;
    const RunConfig* cfg;

    // one optimization step against view k's target
    double step(int iteration, IterationLog& log) {
        const size_t k = size_t(iteration) % scene->views.size();
        session->upload_input(scene->vars.view_mat, mat4_image(scene->views[k]));
        if (loss->target_color)
            session->upload_input(loss->target_color, targets->color[k]);
        if (loss->target_sil) session->upload_input(loss->target_sil, targets->silhouette[k]);
        const auto t0 = std::chrono::steady_clock::now();
        session->exec_step();
        const auto t1 = std::chrono::steady_clock::now();
        const double l = session->read(loss->loss).at(0);
        log.append(l, session->ctx().last_stats, session->active_substage_count(),
                   session->stage_count(),
                   std::chrono::duration<double, std::milli>(t1 - t0).count());
        return l;
    }
};

inline TaskResult run_optimize_geometry(const RunConfig& cfg) {
    TaskResult res;
    std::filesystem::create_directories(cfg.out_dir);

    TaskScene target_scene = build_task_scene(cfg, cfg.target_mesh, cfg.albedo);
    ViewImages targets = render_views(target_scene, cfg);

    TaskScene ts = build_task_scene(cfg, cfg.mesh, cfg.albedo);
    LossSetup ls = build_loss(cfg, ts);
    set_requires_grad_recursively(ts.vars.vtx_pos);

    Variable total = ls.loss;
    LaplacianRegularizer reg;
    if (cfg.laplacian_weight > 0) {
        reg = build_laplacian_reg(ts.vars.vtx_pos, ts.mesh.faces, cfg.laplacian_weight,
                                  cfg.laplacian_gamma);
        total = ops::add(ls.loss, reg.loss);
    }
    BackwardResult bwd = build_backward(total);
    OptimizerUpdate upd = cfg.optimizer == "sgd"
                              ? build_sgd(bwd.input_vars, bwd.input_grad_vars, cfg.lr)
                              : build_adam(bwd.input_vars, bwd.input_grad_vars,
                                           {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});

    Session session(*ts.graph, session_options(cfg));
    session.set_loss(total);
    session.add_output(ls.loss);
    session.add_output(ts.render.rgba);
    session.add_update_pairs(upd.pairs);
    session.add_initial_state(upd.initial_state);
    if (cfg.laplacian_weight > 0) {
        session.add_update_pairs({reg.weight_pair});
        session.add_initial_state(reg.initial_state);
    }
    upload_scene_inputs(session, ts, cfg);

    OptimizeLoop loop{&session, &ls, &ts, &targets, &cfg};
    for (int it = 0; it < cfg.iterations; ++it) {
        const double l = loop.step(it, res.log);
        if (cfg.log_every > 0 && it % std::max(1, cfg.iterations / 10) == 0)
            std::cout << "iter " << it << " loss " << l << "\n";
    }

    // first/last full view cycles characterize convergence
    const size_t cycle = ts.views.size();
    auto cycle_mean = [&](size_t begin) {
        double s = 0;
        for (size_t i = 0; i < cycle; ++i) s += res.log.loss[begin + i];
        return s / cycle;
    };
    if (res.log.loss.size() >= 2 * cycle) {
        res.metrics["loss_first_cycle"] = cycle_mean(0);
        res.metrics["loss_last_cycle"] = cycle_mean(res.log.loss.size() - cycle);
    }

    MeshBuffers out_mesh = ts.mesh;
    out_mesh.positions = session.read(ts.vars.vtx_pos);
    save_mesh(cfg.out_dir + "/final_mesh.obj", out_mesh);
    res.log.write_csv(cfg.out_dir + "/optimize-geometry.csv");

    session.upload_input(ts.vars.view_mat, mat4_image(ts.views[0]));
    if (ls.target_sil) session.upload_input(ls.target_sil, targets.silhouette[0]);
    if (ls.target_color) session.upload_input(ls.target_color, targets.color[0]);
    session.exec_eval();
    save_png(cfg.out_dir + "/final_render.png", session.read(ts.render.rgba));
    return res;
}

inline TaskResult run_optimize_texture(const RunConfig& cfg) {
    TaskResult res;
    std::filesystem::create_directories(cfg.out_dir);

    TaskScene target_scene = build_task_scene(cfg, cfg.mesh, cfg.target_albedo);
    ViewImages targets = render_views(target_scene, cfg);
    ImageBuffer gt_albedo = target_scene.albedo;

    TaskScene ts = build_task_scene(cfg, cfg.mesh, cfg.albedo);
    LossSetup ls = build_loss(cfg, ts);
    set_requires_grad_recursively(ts.vars.albedo);

    BackwardResult bwd = build_backward(ls.loss);
    OptimizerUpdate upd = cfg.optimizer == "sgd"
                              ? build_sgd(bwd.input_vars, bwd.input_grad_vars, cfg.lr)
                              : build_adam(bwd.input_vars, bwd.input_grad_vars,
                                           {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});

    Session session(*ts.graph, session_options(cfg));
    session.set_loss(ls.loss);
    session.add_update_pairs(upd.pairs);
    session.add_initial_state(upd.initial_state);
    session.add_output(ts.render.passes[0].uv);
    upload_scene_inputs(session, ts, cfg);

    OptimizeLoop loop{&session, &ls, &ts, &targets, &cfg};
    for (int it = 0; it < cfg.iterations; ++it) {
        const double l = loop.step(it, res.log);
        if (cfg.log_every > 0 && it % std::max(1, cfg.iterations / 10) == 0)
            std::cout << "iter " << it << " loss " << l << "\n";
    }

    // texel coverage union over views (front layer, bilinear footprints)
    ImageBuffer albedo_now = session.read(ts.vars.albedo);
    const ImgSize tex = albedo_now.size();
    ImageBuffer coverage(VType::F32, tex);
    for (size_t k = 0; k < ts.views.size(); ++k) {
        ImageBuffer ones(VType::F32, targets.uv[k].size());
        ones.fill(std::array<double, 1>{1.0});
        ImageBuffer mask(VType::F32, targets.silhouette[k].size());
        for (size_t i = 0; i < mask.value_count(); ++i)
            mask.put(i, targets.silhouette[k].at(i) > 0.5 ? 1.0 : 0.0);
        ImageBuffer mass = scatter_gradient_oracle(ones, targets.uv[k], tex, &mask);
        for (size_t i = 0; i < coverage.value_count(); ++i)
            coverage.put(i, coverage.at(i) + mass.at(i));
    }

    double mse = 0;
    int64_t covered = 0;
    for (int64_t p = 0; p < tex.pixels(); ++p) {
        if (coverage.at(size_t(p)) < 0.5) continue;
        ++covered;
        for (int c = 0; c < 3; ++c) {
            const double d = albedo_now.at(size_t(p) * 3 + c) - gt_albedo.at(size_t(p) * 3 + c);
            mse += d * d;
        }
    }
    if (covered > 0) mse /= double(covered * 3);
    res.metrics["covered_texels"] = double(covered);
    res.metrics["psnr_covered"] = mse > 0 ? 10.0 * std::log10(1.0 / mse) : 99.0;

    save_png(cfg.out_dir + "/final_albedo.png", albedo_now);
    res.log.write_csv(cfg.out_dir + "/optimize-texture.csv");
    std::cout << "psnr on covered texels: " << res.metrics["psnr_covered"] << " dB ("
              << covered << " texels)\n";
    return res;
}

inline TaskResult run_optimize_normalmap(const RunConfig& cfg) {
    TaskResult res;
    std::filesystem::create_directories(cfg.out_dir);

    ImageBuffer gt_normal = make_ripple_normal_map(cfg.normal_map_size);
    RunConfig target_cfg = cfg;
    target_cfg.shading = "lambert";
    TaskScene target_scene = build_task_scene(target_cfg, cfg.mesh, cfg.albedo, &gt_normal);
    ViewImages targets = render_views(target_scene, target_cfg);

    ImageBuffer flat_normal =
        new_image(VType::Vec3, {cfg.normal_map_size, cfg.normal_map_size}, {0.5, 0.5, 1.0});
    TaskScene ts = build_task_scene(target_cfg, cfg.mesh, cfg.albedo, &flat_normal);
    RunConfig loss_cfg = cfg;
    loss_cfg.loss = "l2_color";
    LossSetup ls = build_loss(loss_cfg, ts);
    set_requires_grad_recursively(ts.vars.normal_map);

    BackwardResult bwd = build_backward(ls.loss);
    OptimizerUpdate upd = build_adam(bwd.input_vars, bwd.input_grad_vars,
                                     {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});

    Session session(*ts.graph, session_options(target_cfg));
    session.set_loss(ls.loss);
    session.add_update_pairs(upd.pairs);
    session.add_initial_state(upd.initial_state);
    upload_scene_inputs(session, ts, target_cfg);

    OptimizeLoop loop{&session, &ls, &ts, &targets, &cfg};
    for (int it = 0; it < cfg.iterations; ++it) {
        loop.step(it, res.log);
        // per-pixel unit-norm constraint re-applied every iteration
        ImageBuffer nm = session.read(ts.vars.normal_map);
        for (int64_t p = 0; p < nm.pixel_count(); ++p) {
            double n[3];
            for (int c = 0; c < 3; ++c) n[c] = nm.at(size_t(p) * 3 + c) * 2.0 - 1.0;
            const double len = std::max(1e-9, std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]));
            for (int c = 0; c < 3; ++c) nm.put(size_t(p) * 3 + c, n[c] / len * 0.5 + 0.5);
        }
        session.upload_input(ts.vars.normal_map, nm);
    }

    // cosine dissimilarity against the ground-truth map
    ImageBuffer nm = session.read(ts.vars.normal_map);
    double dissim = 0;
    for (int64_t p = 0; p < nm.pixel_count(); ++p) {
        double a[3], b[3], dot = 0;
        for (int c = 0; c < 3; ++c) {
            a[c] = nm.at(size_t(p) * 3 + c) * 2 - 1;
            b[c] = gt_normal.at(size_t(p) * 3 + c) * 2 - 1;
            dot += a[c] * b[c];
        }
        dissim += 1.0 - dot;
    }
    res.metrics["cosine_dissimilarity"] = dissim / double(nm.pixel_count());
    save_png(cfg.out_dir + "/final_normal_map.png", nm);
    res.log.write_csv(cfg.out_dir + "/optimize-normalmap.csv");
    std::cout << "cosine dissimilarity: " << res.metrics["cosine_dissimilarity"] << "\n";
    return res;
}

// Substage/stage counts per hardware profile before and after the reactive
// cache warms up, for the geometry and texture workloads.
inline TaskResult run_compile_report(const RunConfig& base_cfg) {
    TaskResult res;
    std::filesystem::create_directories(base_cfg.out_dir);
    std::ofstream csv(base_cfg.out_dir + "/compile-report.csv");
    csv << "# dressi-csv v1\n";
    csv << "profile,task,substages_before,stages_before,substages_after,stages_after\n";
    std::cout << "profile     task      substages(before->after)  stages(before->after)\n";

    const std::vector<std::string> profiles = {"unbounded", "desktop", "laptop", "mobile"};
    for (const std::string& prof : profiles) {
        for (const std::string& which : {std::string("geometry"), std::string("texture")}) {
            RunConfig cfg = base_cfg;
            cfg.profile = prof;
            cfg.width = cfg.height = 64;
            cfg.views = 1;
            cfg.iterations = 8;
            cfg.K = 2;
            cfg.loss = which == "geometry" ? "l2_silhouette" : "l2_color";
            cfg.out_dir = base_cfg.out_dir + "/report_tmp";

            TaskScene target_scene = build_task_scene(cfg, cfg.target_mesh, cfg.target_albedo);
            ViewImages targets = render_views(target_scene, cfg);
            TaskScene ts = build_task_scene(cfg, cfg.mesh, cfg.albedo);
            LossSetup ls = build_loss(cfg, ts);
            set_requires_grad_recursively(which == "geometry" ? ts.vars.vtx_pos : ts.vars.albedo);
            BackwardResult bwd = build_backward(ls.loss);
            OptimizerUpdate upd = build_adam(bwd.input_vars, bwd.input_grad_vars, {cfg.lr});

            Session session(*ts.graph, session_options(cfg));
            session.set_loss(ls.loss);
            session.add_update_pairs(upd.pairs);
            session.add_initial_state(upd.initial_state);
            upload_scene_inputs(session, ts, cfg);

            size_t sub_before = 0, stage_before = 0, sub_after = 0, stage_after = 0;
            OptimizeLoop loop{&session, &ls, &ts, &targets, &cfg};
            IterationLog log;
            for (int it = 0; it < cfg.iterations; ++it) {
                loop.step(it, log);
                if (it == 0) {
                    sub_before = session.active_substage_count();
                    stage_before = session.stage_count();
                }
            }
            sub_after = session.active_substage_count();
            stage_after = session.stage_count();

            csv << prof << "," << which << "," << sub_before << "," << stage_before << ","
                << sub_after << "," << stage_after << "\n";
            std::printf("%-11s %-9s %4zu -> %-4zu              %4zu -> %zu\n", prof.c_str(),
                        which.c_str(), sub_before, sub_after, stage_before, stage_after);
            res.metrics[prof + "_" + which + "_before"] = double(sub_before);
            res.metrics[prof + "_" + which + "_after"] = double(sub_after);
        }
    }
    return res;
}

inline TaskResult run_task(const RunConfig& cfg) {
    if (cfg.task == "render") return run_render(cfg);
    if (cfg.task == "gradcheck") return run_gradcheck_task(cfg);
    if (cfg.task == "optimize-geometry") return run_optimize_geometry(cfg);
    if (cfg.task == "optimize-texture") return run_optimize_texture(cfg);
    if (cfg.task == "optimize-normalmap") return run_optimize_normalmap(cfg);
    if (cfg.task == "compile-report") return run_compile_report(cfg);
    throw std::invalid_argument("run_task: unknown task " + cfg.task);
}

// ---- scene persistence ----

inline void save_scene(const std::string& dir, const MeshBuffers& mesh,
                       const ImageBuffer* albedo = nullptr,
                       const ImageBuffer* normal_map = nullptr) {
    std::filesystem::create_directories(dir);
    save_mesh(dir + "/mesh.obj", mesh);
    if (albedo) save_png(dir + "/albedo.png", *albedo);
    if (normal_map) save_png(dir + "/normal_map.png", *normal_map);
}

struct LoadedScene {
    MeshBuffers mesh;
    ImageBuffer albedo;
    ImageBuffer normal_map;
};

inline LoadedScene load_scene(const std::string& dir) {
    LoadedScene s;
    s.mesh = load_mesh(dir + "/mesh.obj");
    if (std::filesystem::exists(dir + "/albedo.png")) s.albedo = load_png(dir + "/albedo.png");
    if (std::filesystem::exists(dir + "/normal_map.png"))
        s.normal_map = load_png(dir + "/normal_map.png");
    return s;
}

}  // namespace dressi
