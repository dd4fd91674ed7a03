#pragma once

// Seeded random computational graphs with mixed sizes and types, kept inside
// every op's domain (no divide-by-zero, no sqrt of negatives) so any packing
// of them must execute cleanly.

#include <memory>
#include <random>

#include "dressi/ops.hpp"

namespace randgraph {

using namespace dressi;

struct RandomGraph {
    std::unique_ptr<Graph> graph;
    std::vector<std::pair<Variable, ImageBuffer>> bindings;
    Variables outputs;
};

inline RandomGraph build(uint32_t seed, int max_nodes, bool with_raster = true) {
    RandomGraph rg;
    rg.graph = std::make_unique<Graph>();
    Graph& g = *rg.graph;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> val(-2.0, 2.0);

    const ImgSize sizes[3] = {{1, 1}, {5, 3}, {8, 8}};
    auto rand_size = [&]() { return sizes[rng() % 3]; };

    std::vector<Variable> floats;  // all float-typed vars
    auto bind_input = [&](VType vt, ImgSize sz, double lo, double hi) {
        Variable v = g.add_input(vt, sz);
        ImageBuffer b(vt, sz);
        std::uniform_real_distribution<double> d(lo, hi);
        for (size_t i = 0; i < b.value_count(); ++i) b.put(i, d(rng));
        rg.bindings.push_back({v, b});
        return v;
    };

    for (int i = 0; i < 4; ++i) floats.push_back(bind_input(VType::F32, rand_size(), -2, 2));
    floats.push_back(bind_input(VType::Vec3, rand_size(), -2, 2));
    floats.push_back(bind_input(VType::Vec2, rand_size(), 0, 1));
    Variable tex_leaf = bind_input(VType::F32, {4, 4}, -1, 1);

    auto pick_float = [&](ImgSize* want = nullptr) -> Variable {
        for (int tries = 0; tries < 64; ++tries) {
            Variable v = floats[rng() % floats.size()];
            if (!want || v.size() == *want || v.size().is_uniform()) return v;
        }
        return ops::constant(g, 0.25 + unit(rng));  // 1x1 broadcasts anywhere
    };
    auto pick_scalar = [&](ImgSize* want = nullptr) -> Variable {
        for (int tries = 0; tries < 64; ++tries) {
            Variable v = floats[rng() % floats.size()];
            if (v.vtype() != VType::F32) continue;
            if (!want || v.size() == *want || v.size().is_uniform()) return v;
        }
        return ops::constant(g, 0.25 + unit(rng));
    };

    const uint32_t start_nodes = g.node_count();
    while (int(g.node_count() - start_nodes) < max_nodes * 2) {
        Variable out;
        switch (rng() % 14) {
            case 0: {
                Variable a = pick_float();
                ImgSize sz = a.size();
                Variable b = pick_scalar(&sz);
                out = (rng() & 1) ? ops::add(a, b) : ops::sub(a, b);
                break;
            }
            case 1: {
                Variable a = pick_float();
                ImgSize sz = a.size();
                out = ops::mul(a, pick_scalar(&sz));
                break;
            }
            case 2: {
                Variable a = pick_float();
                ImgSize sz = a.size();
                Variable b = pick_scalar(&sz);
                out = ops::div(a, ops::add(ops::abs(b), ops::constant(g, 0.5)));
                break;
            }
            case 3: {
                Variable a = pick_float();
                out = (rng() & 1) ? ops::sin(a) : ops::cos(a);
                break;
            }
            case 4:
                out = ops::sqrt(ops::add(ops::abs(pick_float()), ops::constant(g, 0.1)));
                break;
            case 5: {
                Variable a = pick_scalar();
                ImgSize sz = a.size();
                Variable b = pick_scalar(&sz);
                out = (rng() & 1) ? ops::min(a, b) : ops::max(a, b);
                break;
            }
            case 6: {
                Variable a = pick_scalar();
                ImgSize sz = a.size();
                out = ops::mix(a, pick_scalar(&sz), pick_scalar(&sz));
                break;
            }
            case 7: {
                Variable a = pick_scalar();
                ImgSize sz = a.size();
                out = ops::greater_eq(a, pick_scalar(&sz));
                break;
            }
            case 8: {
                Variable a = pick_scalar();
                ImgSize sz = a.size();
                out = ops::vec2(a, pick_scalar(&sz));
                break;
            }
            case 9: {
                Variable a = pick_float();
                if (a.vtype() == VType::F32)
                    out = ops::splat(a, VType::Vec3);
                else
                    out = ops::channel_sum(a);
                break;
            }
            case 10: {
                Variable a = pick_float();
                out = a.size().is_uniform() ? ops::broadcast(a, rand_size()) : ops::mean(a);
                break;
            }
            case 11: {
                Variable a = pick_float();
                out = a.size().is_uniform() ? ops::reduce_sum(pick_float()) : ops::reduce_sum(a);
                break;
            }
            case 12: {
                // uv anywhere; the sampler clamps at borders
                Variable a = pick_scalar();
                ImgSize sz = a.size();
                Variable uv = ops::vec2(a, pick_scalar(&sz));
                out = ops::texture_sample(tex_leaf, uv, false);
                break;
            }
            case 13: {
                Variable a = pick_float();
                if (a.size().is_uniform()) {
                    out = ops::neg(a);
                } else {
                    const int dx = int(rng() % 3) - 1, dy = int(rng() % 3) - 1;
                    out = ops::shift_read(a, dx, dy);
                }
                break;
            }
        }
        if (out) floats.push_back(out);
    }

    if (with_raster && (rng() & 1)) {
        Variable verts = bind_input(VType::Vec4, {6, 1}, -1, 1);
        // keep w positive so triangles rasterize
        ImageBuffer& vb = rg.bindings.back().second;
        for (int i = 0; i < 6; ++i) vb.set(i, 0, 3, 1.0);
        Variable attr = bind_input(VType::F32, {6, 1}, -1, 1);
        Variable img = ops::rasterize(verts, attr, {8, 8});
        floats.push_back(ops::sin(img));
    }

    for (Variable v : floats)
        if (v.node->users.empty()) rg.outputs.push_back(v);
    if (rg.outputs.empty()) rg.outputs.push_back(floats.back());
    return rg;
}

}  // namespace randgraph
