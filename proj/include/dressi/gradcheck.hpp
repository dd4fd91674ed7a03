#pragma once

#include <random>

#include "dressi/autodiff.hpp"
#include "dressi/executor.hpp"

namespace dressi {

// Reverse-mode vs central finite differences, one row per differentiable op.
// Loss is mean(op(...) * projection) with a random fixed projection so every
// output channel receives a distinct upstream gradient.

struct GradCheckRow {
    std::string op;
    int cases = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckRow> rows;
    bool all_pass = true;
};

namespace gradcheck_detail {

struct CaseGraph {
    Graph graph;
    Variable loss;
    Variables params;
    std::vector<std::pair<Variable, ImageBuffer>> bindings;
};

using CaseBuilder = std::function<void(CaseGraph&, std::mt19937&)>;

inline ImageBuffer rand_img(VType vt, ImgSize size, std::mt19937& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    ImageBuffer img(vt, size);
    for (size_t i = 0; i < img.value_count(); ++i) img.put(i, dist(rng));
    return img;
}

inline Variable param(CaseGraph& cg, VType vt, ImgSize size, std::mt19937& rng, double lo = -2.0,
                      double hi = 2.0) {
    Variable v = cg.graph.add_input(vt, size, "p" + std::to_string(cg.params.size()));
    cg.params.push_back(v);
    cg.bindings.push_back({v, rand_img(vt, size, rng, lo, hi)});
    return v;
}

inline Variable fixed(CaseGraph& cg, VType vt, ImgSize size, std::mt19937& rng, double lo = -2.0,
                      double hi = 2.0) {
    Variable v = cg.graph.add_input(vt, size, "c");
    cg.bindings.push_back({v, rand_img(vt, size, rng, lo, hi)});
    return v;
}

inline void finish(CaseGraph& cg, Variable y, std::mt19937& rng) {
    Variable proj = fixed(cg, y.vtype(), y.size(), rng, -1.0, 1.0);
    cg.loss = ops::mean(ops::mul(y, proj));
}

// Central finite difference on every channel of every parameter.
inline double check_case(CaseGraph& cg, double h, double tol) {
    for (Variable p : cg.params) set_requires_grad_recursively(p);
    BackwardResult bwd = build_backward(cg.loss);

    Variables ad_outs{cg.loss};
    for (Variable gv : bwd.input_grad_vars) ad_outs.push_back(gv);
    CompiledPlan full = compile(ad_outs);
    CompiledPlan loss_only = compile({cg.loss});

    ExecutionContext ctx(1);
    install_plan(full, ctx);
    install_plan(loss_only, ctx);
    for (const auto& [v, b] : cg.bindings) upload(v, b, ctx);
    execute_step(full, ctx);

    std::unordered_map<const VariableNode*, ImageBuffer> ad_grads;
    for (size_t i = 0; i < bwd.input_vars.size(); ++i)
        ad_grads[bwd.input_vars[i].node] = download(bwd.input_grad_vars[i], ctx);

    double max_rel = 0.0;
    for (auto& [pvar, base] : cg.bindings) {
        if (!pvar.node->is_param) continue;
        const ImageBuffer& ad = ad_grads.at(pvar.node);
        for (size_t i = 0; i < base.value_count(); ++i) {
            const double v0 = base.at(i);
            ImageBuffer probe = base;
            probe.put(i, v0 + h);
            upload(pvar, probe, ctx);
            execute_step(loss_only, ctx);
            const double lp = download(cg.loss, ctx).at(0);
            probe.put(i, v0 - h);
            upload(pvar, probe, ctx);
            execute_step(loss_only, ctx);
            const double lm = download(cg.loss, ctx).at(0);
            probe.put(i, v0);
            upload(pvar, probe, ctx);
            const double fd = (lp - lm) / (2 * h);
            const double rel = std::abs(ad.at(i) - fd) / std::max(1.0, std::abs(fd));
            max_rel = std::max(max_rel, rel);
        }
    }
    (void)tol;
    return max_rel;
}

inline std::vector<std::pair<std::string, CaseBuilder>> case_table() {
    using CB = CaseBuilder;
    const ImgSize sz{2, 2};
    std::vector<std::pair<std::string, CB>> t;

    auto binary = [sz](Variable (*op)(Variable, Variable)) {
        return [op, sz](CaseGraph& cg, std::mt19937& rng) {
            Variable a = param(cg, VType::F32, sz, rng);
            Variable b = param(cg, VType::F32, sz, rng);
            finish(cg, op(a, b), rng);
        };
    };
    auto unary = [sz](Variable (*op)(Variable), double lo, double hi) {
        return [op, sz, lo, hi](CaseGraph& cg, std::mt19937& rng) {
            Variable a = param(cg, VType::F32, sz, rng, lo, hi);
            finish(cg, op(a), rng);
        };
    };

    t.push_back({"Add", binary(&ops::add)});
    t.push_back({"Sub", binary(&ops::sub)});
    t.push_back({"Mul", binary(&ops::mul)});
    t.push_back({"Div", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable a = param(cg, VType::F32, sz, rng);
                     Variable b = param(cg, VType::F32, sz, rng, 0.5, 2.0);
                     finish(cg, ops::div(a, b), rng);
                 }});
    t.push_back({"Neg", unary(&ops::neg, -2, 2)});
    t.push_back({"Abs", unary(&ops::abs, 0.2, 2.0)});
    t.push_back({"Exp", unary(&ops::exp, -2, 1)});
    t.push_back({"Sin", unary(&ops::sin, -2, 2)});
    t.push_back({"Cos", unary(&ops::cos, -2, 2)});
    t.push_back({"Sqrt", unary(&ops::sqrt, 0.3, 2.0)});
    auto gapped = [sz](Variable (*op)(Variable, Variable)) {
        return [op, sz](CaseGraph& cg, std::mt19937& rng) {
            Variable a = param(cg, VType::F32, sz, rng);
            // keep operands separated so the kink is out of FD reach
            CaseGraph& g = cg;
            ImageBuffer& ib = g.bindings.back().second;
            ImageBuffer other = ib;
            std::uniform_real_distribution<double> off(0.05, 1.0);
            for (size_t i = 0; i < other.value_count(); ++i)
                other.put(i, other.at(i) + (rng() & 1 ? off(rng) : -off(rng)));
            Variable b = g.graph.add_input(VType::F32, sz, "p1");
            g.params.push_back(b);
            g.bindings.push_back({b, other});
            finish(g, op(a, b), rng);
        };
    };
    t.push_back({"Min", gapped(&ops::min)});
    t.push_back({"Max", gapped(&ops::max)});
    t.push_back({"Mix", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable a = param(cg, VType::Vec3, sz, rng);
                     Variable b = param(cg, VType::Vec3, sz, rng);
                     Variable s = param(cg, VType::F32, sz, rng, 0.0, 1.0);
                     finish(cg, ops::mix(a, b, s), rng);
                 }});
    t.push_back({"Mean", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable a = param(cg, VType::Vec3, sz, rng);
                     finish(cg, ops::mean(a), rng);
                 }});
    t.push_back({"SumPixels", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable a = param(cg, VType::Vec2, sz, rng);
                     finish(cg, ops::reduce_sum(a), rng);
                 }});
    t.push_back({"Broadcast", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable a = param(cg, VType::F32, {1, 1}, rng);
                     finish(cg, ops::broadcast(a, sz), rng);
                 }});
    t.push_back({"Splat", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable a = param(cg, VType::F32, sz, rng);
                     finish(cg, ops::splat(a, VType::Vec3), rng);
                 }});
    t.push_back({"ChannelSum", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable a = param(cg, VType::Vec4, sz, rng);
                     finish(cg, ops::channel_sum(a), rng);
                 }});
    t.push_back({"Vec2", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable x = param(cg, VType::F32, sz, rng);
                     Variable y = param(cg, VType::F32, sz, rng);
                     finish(cg, ops::vec2(x, y), rng);
                 }});
    t.push_back({"Vec3", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable x = param(cg, VType::F32, sz, rng);
                     Variable y = param(cg, VType::F32, sz, rng);
                     Variable z = param(cg, VType::F32, sz, rng);
                     finish(cg, ops::vec3(x, y, z), rng);
                 }});
    t.push_back({"Vec4", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable v = param(cg, VType::Vec3, sz, rng);
                     Variable w = param(cg, VType::F32, sz, rng);
                     finish(cg, ops::vec4(v, w), rng);
                 }});
    t.push_back({"GetX", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable v = param(cg, VType::Vec3, sz, rng);
                     finish(cg, ops::get_x(v), rng);
                 }});
    t.push_back({"GetY", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable v = param(cg, VType::Vec2, sz, rng);
                     finish(cg, ops::get_y(v), rng);
                 }});
    t.push_back({"GetZ", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable v = param(cg, VType::Vec4, sz, rng);
                     finish(cg, ops::get_z(v), rng);
                 }});
    t.push_back({"GetW", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable v = param(cg, VType::Vec4, sz, rng);
                     finish(cg, ops::get_w(v), rng);
                 }});
    t.push_back({"GetXYZ", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable v = param(cg, VType::Vec4, sz, rng);
                     finish(cg, ops::get_xyz(v), rng);
                 }});
    t.push_back({"Dot", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable a = param(cg, VType::Vec3, sz, rng);
                     Variable b = param(cg, VType::Vec3, sz, rng);
                     finish(cg, ops::dot(a, b), rng);
                 }});
    t.push_back({"MatVec", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable m = param(cg, VType::Mat4, {1, 1}, rng);
                     Variable v = param(cg, VType::Vec4, sz, rng);
                     finish(cg, ops::mat_vec(m, v), rng);
                 }});
    t.push_back({"MatMul", [](CaseGraph& cg, std::mt19937& rng) {
                     Variable a = param(cg, VType::Mat4, {1, 1}, rng);
                     Variable b = param(cg, VType::Mat4, {1, 1}, rng);
                     finish(cg, ops::mat_mul(a, b), rng);
                 }});
    t.push_back({"Transpose", [](CaseGraph& cg, std::mt19937& rng) {
                     Variable m = param(cg, VType::Mat4, {1, 1}, rng);
                     finish(cg, ops::transpose(m), rng);
                 }});
    t.push_back({"Outer", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable a = param(cg, VType::Vec4, sz, rng);
                     Variable b = param(cg, VType::Vec4, sz, rng);
                     finish(cg, ops::outer(a, b), rng);
                 }});
    t.push_back({"SetFragDepth", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable d = param(cg, VType::F32, sz, rng, 0.0, 1.0);
                     finish(cg, ops::set_frag_depth(d), rng);
                 }});
    t.push_back({"TextureSample", [](CaseGraph& cg, std::mt19937& rng) {
                     // samples at distinct texel centers (bilinear weight 1):
                     // the single-frame inverse-UV gather is exact there; the
                     // four-texel spreading regime is covered by the
                     // jitter-averaged scatter-oracle comparison
                     Variable tex = param(cg, VType::F32, {4, 4}, rng);
                     ImageBuffer uvb(VType::Vec2, {2, 2});
                     std::vector<int> cells{0, 1, 2, 3};
                     std::shuffle(cells.begin(), cells.end(), rng);
                     const int cx[4] = {0, 2, 1, 3};
                     const int cy[4] = {0, 2, 3, 1};
                     for (int i = 0; i < 4; ++i) {
                         uvb.set(i % 2, i / 2, 0, (cx[cells[i]] + 0.5) / 4.0);
                         uvb.set(i % 2, i / 2, 1, (cy[cells[i]] + 0.5) / 4.0);
                     }
                     Variable uv = cg.graph.add_input(VType::Vec2, {2, 2}, "uv");
                     cg.bindings.push_back({uv, uvb});
                     finish(cg, ops::texture_sample(tex, uv, /*jitter=*/false), rng);
                 }});
    t.push_back({"IndexedRead", [sz](CaseGraph& cg, std::mt19937& rng) {
                     Variable attr = param(cg, VType::Vec2, {5, 1}, rng);
                     ImageBuffer idx(VType::IVec3, sz);
                     std::uniform_int_distribution<int> pick(0, 4);
                     for (size_t i = 0; i < idx.value_count(); ++i) idx.put(i, pick(rng));
                     Variable iv = cg.graph.add_input(VType::IVec3, sz, "idx");
                     cg.bindings.push_back({iv, idx});
                     finish(cg, ops::indexed_read(attr, iv, int(rng() % 3)), rng);
                 }});
    t.push_back({"VertexNormals", [](CaseGraph& cg, std::mt19937& rng) {
                     Variable pos = param(cg, VType::Vec4, {5, 1}, rng);
                     ImageBuffer faces(VType::IVec3, {3, 1});
                     const int f[3][3] = {{0, 1, 2}, {2, 1, 3}, {3, 4, 0}};
                     for (int i = 0; i < 3; ++i)
                         for (int c = 0; c < 3; ++c) faces.set(i, 0, c, f[i][c]);
                     Variable fv = cg.graph.add_input(VType::IVec3, {3, 1}, "faces");
                     cg.bindings.push_back({fv, faces});
                     finish(cg, ops::vertex_normals(pos, fv), rng);
                 }});
    t.push_back({"UniformLaplacian", [](CaseGraph& cg, std::mt19937& rng) {
                     auto adj = std::make_shared<MeshAdjacency>();
                     // 4-cycle plus a chord
                     adj->offsets = {0, 3, 5, 8, 10};
                     adj->neighbors = {1, 3, 2, 0, 2, 1, 3, 0, 2, 0};
                     Variable v = param(cg, VType::Vec3, {4, 1}, rng);
                     finish(cg, ops::uniform_laplacian(v, adj), rng);
                 }});
    return t;
}

}  // namespace gradcheck_detail

inline GradCheckReport run_gradcheck(uint64_t seed, int cases_per_op = 100, double h = 1e-5,
                                     double tol = 1e-4) {
    using namespace gradcheck_detail;
    GradCheckReport report;
    auto table = case_table();
    for (size_t op_idx = 0; op_idx < table.size(); ++op_idx) {
        GradCheckRow row;
        row.op = table[op_idx].first;
        row.cases = cases_per_op;
        for (int c = 0; c < cases_per_op; ++c) {
            std::mt19937 rng(uint32_t(seed + op_idx * 7919 + c));
            CaseGraph cg;
            table[op_idx].second(cg, rng);
            row.max_rel_err = std::max(row.max_rel_err, check_case(cg, h, tol));
        }
        row.pass = row.max_rel_err <= tol;
        report.all_pass = report.all_pass && row.pass;
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace dressi
