#pragma once

#include "dressi/ops.hpp"

namespace dressi {

// Rendering parameters. sigma defaults to r/7 and delta to r.
struct HardSoftRasParams {
    double r = 0.01;  // blur radius in normalized screen units
    int K = 2;        // peel buffer count
    double sigma = -1.0;
    double delta = -1.0;
    double obtuse_angle_threshold = 30.0;  // degrees
    bool shift_enabled = true;             // pseudo-occlusion prevention
    bool edge_mask_full = false;           // SoftRas mode: E == 1 everywhere
    bool jitter = true;                    // inverse-UV Sobol jitter

    double sigma_or_default() const { return sigma > 0 ? sigma : r / 7.0; }
    double delta_or_default() const { return delta >= 0 ? delta : r; }

    static double pixels_to_norm(double px, ImgSize size) {
        return px / std::max(size.width, size.height);
    }
    // delta = 1px, K = 1
    static HardSoftRasParams aa_mode(ImgSize size, double r_px = 1.0) {
        HardSoftRasParams p;
        p.r = pixels_to_norm(r_px, size);
        p.K = 1;
        p.delta = pixels_to_norm(1.0, size);
        return p;
    }
    // blend inside silhouettes as well
    static HardSoftRasParams softras_mode(double r_norm, int K) {
        HardSoftRasParams p;
        p.r = r_norm;
        p.K = K;
        p.edge_mask_full = true;
        return p;
    }
};

enum class ShadingMode { Unlit, Lambert };

// Graph inputs describing one scene (see scene.hpp for buffer loading).
struct SceneVars {
    Variable vtx_pos;  // Vec3, one vertex per pixel
    Variable vtx_uv;   // Vec2
    Variable faces;    // IVec3, one face per pixel
    Variable model_mat, view_mat, prj_mat;  // 1x1 Mat4
    Variable albedo;      // float texture
    Variable normal_map;  // optional Vec3 texture
    Variable background;  // 1x1 Vec3
    Variable light_dir, light_color;  // 1x1 Vec3 (Lambert mode)
};

struct RasterPass {
    Variable stencil;    // survivor mask, 0 where uncovered or peeled
    Variable edge_dist;  // signed distance to the hard face, positive inside
    Variable world_pos;  // Vec3
    Variable world_nor;  // Vec3 (unnormalized interpolation)
    Variable uv;         // Vec2
    Variable prj_depth;  // shifted depth, 2.0 where this layer is empty
    Variable indices;    // rasterized original vertex indices
    Variable coverage;   // fragment-written mask
};

namespace hsr {

inline Variable normalize3(Variable v) {
    Graph& g = *v.node->graph;
    Variable len = ops::sqrt(ops::add(ops::dot(v, v), ops::constant(g, 1e-24)));
    return ops::div(v, ops::splat(len, VType::Vec3));
}

inline Variable sigmoid(Variable x) {
    Graph& g = *x.node->graph;
    return ops::div(ops::constant(g, 1.0),
                    ops::add(ops::constant(g, 1.0), ops::exp(ops::neg(x))));
}

inline Variable clamp01(Variable x) {
    Graph& g = *x.node->graph;
    return ops::min(ops::max(x, ops::constant(g, 0.0)), ops::constant(g, 1.0));
}

// Screen-space position of a clip-space point, guarded against w<=0 at
// uncovered pixels (their indices read zero vertices).
struct ScreenCorner {
    Variable x, y, z;  // screen xy in [0,1], ndc z
};

inline ScreenCorner screen_corner(Variable clip, Variable guard_mask) {
    Graph& g = *clip.node->graph;
    Variable w = ops::get_w(clip);
    Variable w_safe = ops::mix(ops::constant(g, 1.0), w, guard_mask);
    auto to01 = [&](Variable c) {
        return ops::add(ops::mul(ops::div(c, w_safe), ops::constant(g, 0.5)),
                        ops::constant(g, 0.5));
    };
    return {to01(ops::get_x(clip)), to01(ops::get_y(clip)), ops::div(ops::get_z(clip), w_safe)};
}

}  // namespace hsr

// Screen-space enlargement of projected triangles. Every face emits two
// primitives (six vertices); each output vertex carries the source face's
// original vertex indices as a flat attribute.
struct EnlargedGeometry {
    Variable vertices;     // Vec4, 6F x 1
    Variable vertex_idxs;  // IVec3, 6F x 1
};

inline EnlargedGeometry enlarge_triangles(Variable tri_prj0, Variable tri_prj1, Variable tri_prj2,
                                          Variable faces, const HardSoftRasParams& params) {
    EnlargedGeometry out;
    out.vertices =
        ops::enlarge(tri_prj0, tri_prj1, tri_prj2, params.r, params.obtuse_angle_threshold);
    out.vertex_idxs = ops::stretch_read(faces, 6);
    return out;
}

// Signed Euclidean distance in normalized screen units from the pixel center
// to the boundary of the original (hard) triangle: point-to-segment distance
// over the three edges, sign from the winding of the half-space tests.
inline Variable build_signed_dist(Variable clip_positions, Variable screen_vtx_idxs,
                                  Variable coverage, ImgSize target) {
    Graph& g = *clip_positions.node->graph;
    Variable p = ops::screen_pos(g, target);
    Variable px = ops::get_x(p), py = ops::get_y(p);

    hsr::ScreenCorner c[3];
    for (int k = 0; k < 3; ++k) {
        Variable corner = ops::indexed_read(clip_positions, screen_vtx_idxs, k);
        c[k] = hsr::screen_corner(corner, coverage);
    }

    Variable dmin, всё;
    (void)всё;
    Variable cross[3], dist[3];
    for (int e = 0; e < 3; ++e) {
        const int a = e, b = (e + 1) % 3;
        Variable ex = ops::sub(c[b].x, c[a].x);
        Variable ey = ops::sub(c[b].y, c[a].y);
        Variable rx = ops::sub(px, c[a].x);
        Variable ry = ops::sub(py, c[a].y);
        Variable len2 = ops::max(ops::add(ops::mul(ex, ex), ops::mul(ey, ey)),
                                 ops::constant(g, 1e-24));
        Variable t = hsr::clamp01(
            ops::div(ops::add(ops::mul(rx, ex), ops::mul(ry, ey)), len2));
        Variable dx = ops::sub(rx, ops::mul(t, ex));
        Variable dy = ops::sub(ry, ops::mul(t, ey));
        dist[e] = ops::sqrt(
            ops::add(ops::add(ops::mul(dx, dx), ops::mul(dy, dy)), ops::constant(g, 1e-24)));
        cross[e] = ops::sub(ops::mul(ex, ry), ops::mul(ey, rx));
    }
    dmin = ops::min(dist[0], ops::min(dist[1], dist[2]));

    Variable zero = ops::constant(g, 0.0);
    Variable all_pos = ops::mul(ops::mul(ops::greater_eq(cross[0], zero),
                                         ops::greater_eq(cross[1], zero)),
                                ops::greater_eq(cross[2], zero));
    Variable all_neg = ops::mul(ops::mul(ops::greater_eq(zero, cross[0]),
                                         ops::greater_eq(zero, cross[1])),
                                ops::greater_eq(zero, cross[2]));
    Variable inside = ops::min(ops::add(all_pos, all_neg), ops::constant(g, 1.0));
    return ops::mix(ops::neg(dmin), dmin, inside);
}

// Screen-space barycentric coordinates of the pixel center with respect to
// the original triangle, extended affinely outside the hard face. Degenerate
// triangles yield zero weights.
struct Barycentric {
    Variable b0, b1, b2;
};

inline Barycentric build_barycentric(Variable clip_positions, Variable screen_vtx_idxs,
                                     Variable coverage, ImgSize target) {
    Graph& g = *clip_positions.node->graph;
    Variable p = ops::screen_pos(g, target);
    Variable px = ops::get_x(p), py = ops::get_y(p);

    hsr::ScreenCorner c[3];
    for (int k = 0; k < 3; ++k)
        c[k] = hsr::screen_corner(ops::indexed_read(clip_positions, screen_vtx_idxs, k), coverage);

    Variable m00 = ops::sub(c[0].x, c[2].x), m01 = ops::sub(c[1].x, c[2].x);
    Variable m10 = ops::sub(c[0].y, c[2].y), m11 = ops::sub(c[1].y, c[2].y);
    Variable det = ops::sub(ops::mul(m00, m11), ops::mul(m01, m10));
    Variable ok = ops::greater_eq(ops::abs(det), ops::constant(g, 1e-12));
    Variable det_safe = ops::mix(ops::constant(g, 1.0), det, ok);

    Variable rx = ops::sub(px, c[2].x), ry = ops::sub(py, c[2].y);
    Barycentric b;
    b.b0 = ops::mul(ops::div(ops::sub(ops::mul(rx, m11), ops::mul(m01, ry)), det_safe), ok);
    b.b1 = ops::mul(ops::div(ops::sub(ops::mul(m00, ry), ops::mul(rx, m10)), det_safe), ok);
    b.b2 = ops::mul(ops::sub(ops::constant(g, 1.0), ops::add(b.b0, b.b1)), ok);
    return b;
}

// attribute = b0*a0 + b1*a1 + b2*a2 with per-pixel original-vertex lookups
inline Variable build_barycentric_interp(Variable vtx_attr, Variable screen_vtx_idxs,
                                         const Barycentric& b) {
    Variable a0 = ops::indexed_read(vtx_attr, screen_vtx_idxs, 0);
    Variable a1 = ops::indexed_read(vtx_attr, screen_vtx_idxs, 1);
    Variable a2 = ops::indexed_read(vtx_attr, screen_vtx_idxs, 2);
    return ops::add(ops::add(ops::mul(b.b0, a0), ops::mul(b.b1, a1)), ops::mul(b.b2, a2));
}

// Shift(depth, dist): 0.5*depth on hard faces (dist >= 0), 0.5*|dist| + 0.5
// on soft faces, so no soft fragment can depth-beat a hard fragment.
inline Variable build_shift(Variable depth, Variable dist) {
    Graph& g = *depth.node->graph;
    Variable soft = ops::add(ops::mul(ops::abs(dist), ops::constant(g, 0.5)),
                             ops::constant(g, 0.5));
    Variable hard = ops::mul(depth, ops::constant(g, 0.5));
    Variable is_hard = ops::greater_eq(dist, ops::constant(g, 0.0));
    return ops::mix(soft, hard, is_hard);
}

// One peel layer: enlarge -> rasterize indices -> signed distance ->
// barycentric attribute interpolation -> Shift -> fragment depth -> peel.
inline RasterPass build_rasterize_pass(const SceneVars& scene, const HardSoftRasParams& params,
                                       Variable prev_prj_depth, ImgSize target) {
    Graph& g = *scene.vtx_pos.node->graph;

    Variable pos4 = ops::vec4(scene.vtx_pos, ops::constant(g, 1.0));
    Variable world4 = ops::mat_vec(scene.model_mat, pos4);
    Variable vtx_nor = hsr::normalize3(ops::vertex_normals(world4, scene.faces));
    Variable clip = ops::mat_vec(ops::mat_mul(scene.prj_mat, scene.view_mat), world4);

    Variable tri0 = ops::indexed_read(clip, scene.faces, 0);
    Variable tri1 = ops::indexed_read(clip, scene.faces, 1);
    Variable tri2 = ops::indexed_read(clip, scene.faces, 2);
    EnlargedGeometry enlarged = enlarge_triangles(tri0, tri1, tri2, scene.faces, params);

    RasterPass pass;
    pass.indices = ops::rasterize(enlarged.vertices, enlarged.vertex_idxs, target);
    pass.coverage =
        ops::greater_eq(ops::get_lane_i(pass.indices, 0), ops::constant(g, 0.0));

    pass.edge_dist = build_signed_dist(clip, pass.indices, pass.coverage, target);
    Barycentric bary = build_barycentric(clip, pass.indices, pass.coverage, target);

    Variable prj_pos = build_barycentric_interp(clip, pass.indices, bary);
    pass.world_pos = ops::get_xyz(build_barycentric_interp(world4, pass.indices, bary));
    pass.world_nor = build_barycentric_interp(vtx_nor, pass.indices, bary);
    pass.uv = build_barycentric_interp(scene.vtx_uv, pass.indices, bary);

    // affine-extended barycentrics can drive the interpolated w through zero
    // on soft-region pixels; their depth comes from the soft Shift branch, so
    // clamping w keeps the hard branch intact and the division finite
    Variable w = ops::get_w(prj_pos);
    Variable w_safe = ops::max(ops::mix(ops::constant(g, 1.0), w, pass.coverage),
                               ops::constant(g, 1e-6));
    Variable depth01 = hsr::clamp01(ops::add(
        ops::mul(ops::div(ops::get_z(prj_pos), w_safe), ops::constant(g, 0.5)),
        ops::constant(g, 0.5)));

    Variable shifted = params.shift_enabled ? build_shift(depth01, pass.edge_dist) : depth01;
    Variable depth_set = ops::set_frag_depth(shifted);
    Variable stencil_raw = ops::peel_depth(depth_set, prev_prj_depth);
    ops::bind_raster_program(pass.indices, depth_set, stencil_raw);

    pass.stencil = ops::mul(stencil_raw, pass.coverage);
    // empty layers block everything behind them (exhausted surface list)
    pass.prj_depth = ops::mix(ops::constant(g, 2.0), depth_set, pass.stencil);
    return pass;
}

// Binary band of width delta around the silhouette boundary of the hard
// stencil: 4-neighbor edge detection, then iterative 3x3 dilation.
inline Variable build_edge_mask(Variable hard_stencil, double delta, ImgSize target) {
    Graph& g = *hard_stencil.node->graph;
    const int dydx[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
    Variable boundary;
    for (auto& d : dydx) {
        Variable diff = ops::abs(ops::sub(hard_stencil, ops::shift_read(hard_stencil, d[0], d[1])));
        boundary = boundary ? ops::max(boundary, diff) : diff;
    }
    const int steps =
        std::max(0, int(std::lround(delta * std::max(target.width, target.height))) - 1);
    Variable mask = boundary;
    for (int s = 0; s < steps; ++s) {
        Variable next = mask;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0) continue;
                next = ops::max(next, ops::shift_read(mask, dx, dy));
            }
        mask = next;
    }
    (void)g;
    return mask;
}

// Eqs. 4-6: D_k = sigmoid(dist_k / sigma) masked by the survivor stencil;
// weighted color averaging and binary occupancy blending on the edge band,
// front hard fragment elsewhere, background where nothing renders.
struct BlendResult {
    Variable color;       // Vec3
    Variable silhouette;  // F32
    Variable edge_mask;
};

inline BlendResult build_blend(const std::vector<Variable>& shaded,
                               const std::vector<Variable>& stencils,
                               const std::vector<Variable>& edge_dists, Variable background,
                               const HardSoftRasParams& params, ImgSize target) {
    Graph& g = *background.node->graph;
    const int K = int(shaded.size());
    const double sigma = params.sigma_or_default();

    Variables weights, weighted_cols;
    for (int k = 0; k < K; ++k) {
        Variable masked_dist = ops::mul(edge_dists[k], stencils[k]);
        Variable prob = hsr::sigmoid(ops::div(masked_dist, ops::constant(g, sigma)));
        Variable d = ops::mul(prob, stencils[k]);
        weights.push_back(d);
        weighted_cols.push_back(ops::mul(ops::splat(d, VType::Vec3), shaded[k]));
    }
    Variable den = ops::sum_pixel_wise(weights);
    Variable num = ops::sum_pixel_wise(weighted_cols);
    Variable has_weight = ops::greater_eq(den, ops::constant(g, 1e-12));
    Variable den_safe = ops::mix(ops::constant(g, 1.0), den, has_weight);
    Variable color_edge =
        ops::mix(background, ops::div(num, ops::splat(den_safe, VType::Vec3)),
                 ops::splat(has_weight, VType::Vec3));

    Variable hard = ops::mul(ops::greater_eq(edge_dists[0], ops::constant(g, 0.0)), stencils[0]);
    Variable color_flat = ops::mix(background, shaded[0], ops::splat(hard, VType::Vec3));

    Variable transparent = ops::constant(g, 1.0);
    for (int k = 0; k < K; ++k)
        transparent = ops::mul(transparent, ops::sub(ops::constant(g, 1.0), weights[k]));
    Variable sil_edge = ops::sub(ops::constant(g, 1.0), transparent);

    BlendResult out;
    out.edge_mask = params.edge_mask_full
                        ? ops::broadcast(ops::constant(g, 1.0), target)
                        : build_edge_mask(hard, params.delta_or_default(), target);
    out.color = ops::mix(color_flat, color_edge, ops::splat(out.edge_mask, VType::Vec3));
    out.silhouette = ops::mix(hard, sil_edge, out.edge_mask);
    return out;
}

// Deferred shading of one peel layer's G-buffers.
inline Variable build_shading(const SceneVars& scene, const RasterPass& pass, ShadingMode mode,
                              const HardSoftRasParams& params) {
    Graph& g = *scene.vtx_pos.node->graph;
    Variable albedo = ops::texture_sample(scene.albedo, pass.uv, params.jitter);
    if (scene.albedo.vtype() == VType::F32) albedo = ops::splat(albedo, VType::Vec3);
    if (mode == ShadingMode::Unlit) return albedo;

    Variable n;
    if (scene.normal_map) {
        Variable sampled = ops::texture_sample(scene.normal_map, pass.uv, params.jitter);
        n = hsr::normalize3(ops::sub(ops::mul(sampled, ops::constant(g, 2.0)),
                                     ops::constant(g, 1.0)));
    } else {
        n = hsr::normalize3(pass.world_nor);
    }
    Variable l = hsr::normalize3(ops::neg(scene.light_dir));
    Variable ndotl = ops::max(ops::dot(n, l), ops::constant(g, 0.0));
    Variable lit = ops::add(ops::mul(scene.light_color, ops::splat(ndotl, VType::Vec3)),
                            ops::splat(ops::constant(g, 0.1), VType::Vec3));
    return ops::mul(albedo, lit);
}

struct RenderResult {
    Variable rgba;        // Vec4 (color, silhouette)
    Variable color;       // Vec3
    Variable silhouette;  // F32
    std::vector<RasterPass> passes;
};

// The complete rendering process: K peel layers threaded through the shifted
// depth, per-layer shading, and edge-masked blending.
inline RenderResult build_render(const SceneVars& scene, const HardSoftRasParams& params,
                                 ShadingMode mode, ImgSize target) {
    Graph& g = *scene.vtx_pos.node->graph;
    RenderResult out;
    Variable prev_depth = ops::constant(g, 0.0);
    std::vector<Variable> shaded, stencils, dists;
    for (int k = 0; k < std::max(1, params.K); ++k) {
        RasterPass pass = build_rasterize_pass(scene, params, prev_depth, target);
        prev_depth = pass.prj_depth;
        shaded.push_back(build_shading(scene, pass, mode, params));
        stencils.push_back(pass.stencil);
        dists.push_back(pass.edge_dist);
        out.passes.push_back(pass);
    }
    BlendResult blend = build_blend(shaded, stencils, dists, scene.background, params, target);
    out.color = blend.color;
    out.silhouette = blend.silhouette;
    out.rgba = ops::vec4(blend.color, blend.silhouette);
    return out;
}

}  // namespace dressi
