#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "dressi/graph.hpp"

namespace dressi::ops {

namespace detail {

inline Graph& graph_of(const Variables& xs) {
    if (xs.empty() || !xs[0]) throw std::invalid_argument("op: missing input variable");
    return *xs[0].node->graph;
}

inline void require_float(const Variable& x, const char* op) {
    if (!is_float(x.vtype()))
        throw std::invalid_argument(std::string(op) + ": integer input not supported");
}

// Broadcast rule: all non-1x1 inputs share one size; 1x1 broadcasts.
inline ImgSize common_size(const Variables& xs, const char* op) {
    ImgSize out{1, 1};
    for (const Variable& x : xs) {
        if (x.size().is_uniform()) continue;
        if (out.is_uniform())
            out = x.size();
        else if (!(out == x.size()))
            throw std::invalid_argument(std::string(op) + ": incompatible sizes " + out.str() +
                                        " vs " + x.size().str());
    }
    return out;
}

// (F32, VecN) pairs splat the scalar across channels.
inline VType combine_float(VType a, VType b, const char* op) {
    if (a == b) return a;
    if (a == VType::F32) return b;
    if (b == VType::F32) return a;
    throw std::invalid_argument(std::string(op) + ": vtype mismatch (" + vtype_name(a) + ", " +
                                vtype_name(b) + ")");
}

inline Variable make(Graph& g, OpKind op, std::string snippet, ShaderKind kind,
                     const Variables& xs, std::vector<ArgAccess> access, OpPayload payload,
                     BackwardBuilder bwd, VType vt, ImgSize sz) {
    if (access.empty()) access.assign(xs.size(), ArgAccess::SamePixel);
    FunctionNode* f = g.new_function(op, std::move(snippet), kind, xs, std::move(access),
                                     std::move(payload), std::move(bwd), vt, sz);
    return Variable(f->output);
}

}  // namespace detail

Variable add(Variable a, Variable b);
Variable sub(Variable a, Variable b);
Variable mul(Variable a, Variable b);
Variable div(Variable a, Variable b);
Variable neg(Variable a);
Variable abs(Variable a);
Variable exp(Variable a);
Variable sin(Variable a);
Variable cos(Variable a);
Variable sqrt(Variable a);
Variable min(Variable a, Variable b);
Variable max(Variable a, Variable b);
Variable mix(Variable a, Variable b, Variable t);
Variable less(Variable a, Variable b);
Variable greater_eq(Variable a, Variable b);
Variable sign(Variable x);
Variable constant(Graph& g, double v);
Variable splat(Variable s, VType vt);
Variable channel_sum(Variable v);
Variable broadcast(Variable s, ImgSize size);
Variable reduce_sum(Variable v);
Variable transpose(Variable m);
Variable mat_vec(Variable m, Variable v);
Variable mat_mul(Variable a, Variable b);
Variable outer(Variable a, Variable b);
Variable get_x(Variable v);
Variable get_y(Variable v);
Variable get_z(Variable v);
Variable get_w(Variable v);
Variable get_xyz(Variable v);
Variable vec2(Variable x, Variable y);
Variable vec3(Variable x, Variable y, Variable z);
Variable vec4(Variable xyz, Variable w);

// ---- elementwise arithmetic ----

inline Variable add(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    require_float(a, "Add"), require_float(b, "Add");
    return make(graph_of(xs), OpKind::Add, "{y}={x0}+{x1};", ShaderKind::FRAG, xs, {}, {},
                [](const Variables&, Variable, Variable gy, int) { return gy; },
                combine_float(a.vtype(), b.vtype(), "Add"), common_size(xs, "Add"));
}

inline Variable sub(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    require_float(a, "Sub"), require_float(b, "Sub");
    return make(graph_of(xs), OpKind::Sub, "{y}={x0}-{x1};", ShaderKind::FRAG, xs, {}, {},
                [](const Variables&, Variable, Variable gy, int i) {
                    return i == 0 ? gy : neg(gy);
                },
                combine_float(a.vtype(), b.vtype(), "Sub"), common_size(xs, "Sub"));
}

inline Variable mul(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    require_float(a, "Mul"), require_float(b, "Mul");
    return make(graph_of(xs), OpKind::Mul, "{y}={x0}*{x1};", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int i) {
                    return mul(gy, in[i == 0 ? 1 : 0]);
                },
                combine_float(a.vtype(), b.vtype(), "Mul"), common_size(xs, "Mul"));
}

inline Variable div(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    require_float(a, "Div"), require_float(b, "Div");
    return make(graph_of(xs), OpKind::Div, "{y}={x0}/{x1};", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int i) {
                    if (i == 0) return div(gy, in[1]);
                    return neg(div(mul(gy, in[0]), mul(in[1], in[1])));
                },
                combine_float(a.vtype(), b.vtype(), "Div"), common_size(xs, "Div"));
}

inline Variable neg(Variable a) {
    using namespace detail;
    Variables xs{a};
    require_float(a, "Neg");
    return make(graph_of(xs), OpKind::Neg, "{y}=-{x0};", ShaderKind::FRAG, xs, {}, {},
                [](const Variables&, Variable, Variable gy, int) { return neg(gy); }, a.vtype(),
                a.size());
}

inline Variable sign(Variable a) {
    using namespace detail;
    Variables xs{a};
    require_float(a, "Sign");
    return make(graph_of(xs), OpKind::Sign, "{y}=sign({x0});", ShaderKind::FRAG, xs, {}, {},
                nullptr, a.vtype(), a.size());
}

inline Variable abs(Variable a) {
    using namespace detail;
    Variables xs{a};
    require_float(a, "Abs");
    return make(graph_of(xs), OpKind::Abs, "{y}=abs({x0});", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int) {
                    return mul(gy, sign(in[0]));  // subgradient 0 at the kink
                },
                a.vtype(), a.size());
}

inline Variable exp(Variable a) {
    using namespace detail;
    Variables xs{a};
    require_float(a, "Exp");
    return make(graph_of(xs), OpKind::Exp, "{y}=exp({x0});", ShaderKind::FRAG, xs, {}, {},
                [](const Variables&, Variable y, Variable gy, int) { return mul(gy, y); },
                a.vtype(), a.size());
}

inline Variable sin(Variable a) {
    using namespace detail;
    Variables xs{a};
    require_float(a, "Sin");
    return make(graph_of(xs), OpKind::Sin, "{y}=sin({x0});", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int) {
                    return mul(gy, cos(in[0]));
                },
                a.vtype(), a.size());
}

inline Variable cos(Variable a) {
    using namespace detail;
    Variables xs{a};
    require_float(a, "Cos");
    return make(graph_of(xs), OpKind::Cos, "{y}=cos({x0});", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int) {
                    return neg(mul(gy, sin(in[0])));
                },
                a.vtype(), a.size());
}

inline Variable sqrt(Variable a) {
    using namespace detail;
    Variables xs{a};
    require_float(a, "Sqrt");
    return make(graph_of(xs), OpKind::Sqrt, "{y}=sqrt({x0});", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable y, Variable gy, int) {
                    return div(gy, mul(constant(*in[0].node->graph, 2.0), y));
                },
                a.vtype(), a.size());
}

inline Variable min(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    require_float(a, "Min"), require_float(b, "Min");
    return make(graph_of(xs), OpKind::Min, "{y}=min({x0},{x1});", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int i) {
                    Variable take0 = greater_eq(in[1], in[0]);  // ties go to x0
                    if (i == 0) return mul(gy, take0);
                    return mul(gy, sub(constant(*in[0].node->graph, 1.0), take0));
                },
                combine_float(a.vtype(), b.vtype(), "Min"), common_size(xs, "Min"));
}

inline Variable max(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    require_float(a, "Max"), require_float(b, "Max");
    return make(graph_of(xs), OpKind::Max, "{y}=max({x0},{x1});", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int i) {
                    Variable take0 = greater_eq(in[0], in[1]);
                    if (i == 0) return mul(gy, take0);
                    return mul(gy, sub(constant(*in[0].node->graph, 1.0), take0));
                },
                combine_float(a.vtype(), b.vtype(), "Max"), common_size(xs, "Max"));
}

// y = a*(1-t) + b*t
inline Variable mix(Variable a, Variable b, Variable t) {
    using namespace detail;
    Variables xs{a, b, t};
    require_float(a, "Mix"), require_float(b, "Mix"), require_float(t, "Mix");
    VType vt = combine_float(a.vtype(), b.vtype(), "Mix");
    vt = combine_float(vt, t.vtype(), "Mix");
    if (a.vtype() != b.vtype())
        throw std::invalid_argument("Mix: endpoint vtypes differ");
    return make(graph_of(xs), OpKind::Mix, "{y}=mix({x0},{x1},{x2});", ShaderKind::FRAG, xs, {},
                {},
                [](const Variables& in, Variable, Variable gy, int i) {
                    Graph& g = *in[0].node->graph;
                    if (i == 0) return mul(gy, sub(constant(g, 1.0), in[2]));
                    if (i == 1) return mul(gy, in[2]);
                    return mul(gy, sub(in[1], in[0]));
                },
                vt, common_size(xs, "Mix"));
}

// ---- comparisons (0/1 masks, componentwise, no backward) ----

inline Variable less(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    require_float(a, "Less"), require_float(b, "Less");
    return make(graph_of(xs), OpKind::Less, "{y}=float({x0}<{x1});", ShaderKind::FRAG, xs, {}, {},
                nullptr, combine_float(a.vtype(), b.vtype(), "Less"), common_size(xs, "Less"));
}

inline Variable greater_eq(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    require_float(a, "GreaterEq"), require_float(b, "GreaterEq");
    return make(graph_of(xs), OpKind::GreaterEq, "{y}=float({x0}>={x1});", ShaderKind::FRAG, xs,
                {}, {}, nullptr, combine_float(a.vtype(), b.vtype(), "GreaterEq"),
                common_size(xs, "GreaterEq"));
}

// ---- constants and coordinates ----

inline Variable constant(Graph& g, double v) {
    OpPayload p;
    p.scalar = v;
    std::ostringstream s;
    s << "{y}=float(" << v << ");";
    return detail::make(g, OpKind::FloatConst, s.str(), ShaderKind::FRAG, {}, {}, p, nullptr,
                        VType::F32, {1, 1});
}

// Pixel centers in normalized [0,1]^2 screen space.
inline Variable screen_pos(Graph& g, ImgSize size) {
    OpPayload p;
    p.out_size = size;
    return detail::make(g, OpKind::ScreenPos, "{y}=screen_pos();", ShaderKind::FRAG, {}, {}, p,
                        nullptr, VType::Vec2, size);
}

// ---- shape and channel plumbing ----

inline Variable broadcast(Variable s, ImgSize size) {
    using namespace detail;
    if (!s.size().is_uniform()) throw std::invalid_argument("Broadcast: input must be 1x1");
    OpPayload p;
    p.out_size = size;
    Variables xs{s};
    return make(*s.node->graph, OpKind::Broadcast, "{y}={x0};", ShaderKind::FRAG, xs, {}, p,
                [](const Variables&, Variable, Variable gy, int) { return reduce_sum(gy); },
                s.vtype(), size);
}

inline Variable splat(Variable s, VType vt) {
    using namespace detail;
    if (s.vtype() != VType::F32) throw std::invalid_argument("Splat: input must be float scalar");
    if (!is_float(vt) || vt == VType::F32) throw std::invalid_argument("Splat: bad target vtype");
    OpPayload p;
    p.out_vtype = vt;
    Variables xs{s};
    std::string code = std::string("{y}=") + vtype_name(vt) + "({x0});";
    return make(*s.node->graph, OpKind::Splat, code, ShaderKind::FRAG, xs, {}, p,
                [](const Variables&, Variable, Variable gy, int) { return channel_sum(gy); },
                vt, s.size());
}

inline Variable channel_sum(Variable v) {
    using namespace detail;
    require_float(v, "ChannelSum");
    if (v.vtype() == VType::F32) throw std::invalid_argument("ChannelSum: input already scalar");
    Variables xs{v};
    std::string code = std::string("{y}=dot({x0},") + vtype_name(v.vtype()) + "(1.0));";
    return make(*v.node->graph, OpKind::ChannelSum, code, ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int) {
                    return splat(gy, in[0].vtype());
                },
                VType::F32, v.size());
}

namespace detail {
inline Variable extract(Variable v, OpKind k, int lane, const char* code) {
    require_float(v, "Get");
    if (channel_count(v.vtype()) <= lane || v.vtype() == VType::F32 || v.vtype() == VType::Mat4)
        throw std::invalid_argument("Get: component out of range for vtype");
    Variables xs{v};
    return make(*v.node->graph, k, code, ShaderKind::FRAG, xs, {}, {},
                [lane](const Variables& in, Variable, Variable gy, int) -> Variable {
                    Graph& g = *in[0].node->graph;
                    Variable z = mul(gy, constant(g, 0.0));
                    switch (in[0].vtype()) {
                        case VType::Vec2: return lane == 0 ? vec2(gy, z) : vec2(z, gy);
                        case VType::Vec3:
                            if (lane == 0) return vec3(gy, z, z);
                            if (lane == 1) return vec3(z, gy, z);
                            return vec3(z, z, gy);
                        case VType::Vec4: {
                            if (lane == 3) return vec4(vec3(z, z, z), gy);
                            Variable v3 = lane == 0   ? vec3(gy, z, z)
                                          : lane == 1 ? vec3(z, gy, z)
                                                      : vec3(z, z, gy);
                            return vec4(v3, z);
                        }
                        default: return {};
                    }
                },
                VType::F32, v.size());
}
}  // namespace detail

inline Variable get_x(Variable v) { return detail::extract(v, OpKind::GetX, 0, "{y}={x0}.x;"); }
inline Variable get_y(Variable v) { return detail::extract(v, OpKind::GetY, 1, "{y}={x0}.y;"); }
inline Variable get_z(Variable v) { return detail::extract(v, OpKind::GetZ, 2, "{y}={x0}.z;"); }
inline Variable get_w(Variable v) { return detail::extract(v, OpKind::GetW, 3, "{y}={x0}.w;"); }

inline Variable get_xyz(Variable v) {
    using namespace detail;
    if (v.vtype() != VType::Vec4) throw std::invalid_argument("GetXYZ: input must be vec4");
    Variables xs{v};
    return make(*v.node->graph, OpKind::GetXYZ, "{y}={x0}.xyz;", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int) {
                    Variable z = mul(get_x(gy), constant(*in[0].node->graph, 0.0));
                    return vec4(gy, z);
                },
                VType::Vec3, v.size());
}

// Integer vector lane as float (exact for 32-bit ints).
inline Variable get_lane_i(Variable v, int lane) {
    using namespace detail;
    if (!is_integer(v.vtype()) || lane >= channel_count(v.vtype()))
        throw std::invalid_argument("GetXI: bad integer lane");
    OpPayload p;
    p.component = lane;
    Variables xs{v};
    std::ostringstream s;
    s << "{y}=float({x0}[" << lane << "]);";
    return make(*v.node->graph, OpKind::GetXI, s.str(), ShaderKind::FRAG, xs, {}, p, nullptr,
                VType::F32, v.size());
}

inline Variable vec2(Variable x, Variable y) {
    using namespace detail;
    Variables xs{x, y};
    if (x.vtype() != VType::F32 || y.vtype() != VType::F32)
        throw std::invalid_argument("Vec2: scalar components required");
    return make(graph_of(xs), OpKind::Vec2C, "{y}=vec2({x0},{x1});", ShaderKind::FRAG, xs, {}, {},
                [](const Variables&, Variable, Variable gy, int i) {
                    return i == 0 ? get_x(gy) : get_y(gy);
                },
                VType::Vec2, common_size(xs, "Vec2"));
}

inline Variable vec3(Variable x, Variable y, Variable z) {
    using namespace detail;
    Variables xs{x, y, z};
    for (const Variable& v : xs)
        if (v.vtype() != VType::F32) throw std::invalid_argument("Vec3: scalar components required");
    return make(graph_of(xs), OpKind::Vec3C, "{y}=vec3({x0},{x1},{x2});", ShaderKind::FRAG, xs, {},
                {},
                [](const Variables&, Variable, Variable gy, int i) {
                    return i == 0 ? get_x(gy) : i == 1 ? get_y(gy) : get_z(gy);
                },
                VType::Vec3, common_size(xs, "Vec3"));
}

inline Variable vec4(Variable xyz, Variable w) {
    using namespace detail;
    Variables xs{xyz, w};
    if (xyz.vtype() != VType::Vec3 || w.vtype() != VType::F32)
        throw std::invalid_argument("Vec4: expects (vec3, float)");
    return make(graph_of(xs), OpKind::Vec4C, "{y}=vec4({x0},{x1});", ShaderKind::FRAG, xs, {}, {},
                [](const Variables&, Variable, Variable gy, int i) -> Variable {
                    return i == 0 ? get_xyz(gy) : get_w(gy);
                },
                VType::Vec4, common_size(xs, "Vec4"));
}

inline Variable dot(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    if (a.vtype() != b.vtype() || a.vtype() == VType::F32 || a.vtype() == VType::Mat4 ||
        !is_float(a.vtype()))
        throw std::invalid_argument("Dot: expects two equal vector types");
    return make(graph_of(xs), OpKind::Dot, "{y}=dot({x0},{x1});", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int i) {
                    return mul(splat(gy, in[0].vtype()), in[i == 0 ? 1 : 0]);
                },
                VType::F32, common_size(xs, "Dot"));
}

// ---- matrices (row-major mat4) ----

inline Variable transpose(Variable m) {
    using namespace detail;
    if (m.vtype() != VType::Mat4) throw std::invalid_argument("Transpose: expects mat4");
    Variables xs{m};
    return make(*m.node->graph, OpKind::Transpose, "{y}=transpose({x0});", ShaderKind::FRAG, xs,
                {}, {},
                [](const Variables&, Variable, Variable gy, int) { return transpose(gy); },
                VType::Mat4, m.size());
}

inline Variable mat_vec(Variable m, Variable v) {
    using namespace detail;
    Variables xs{m, v};
    if (m.vtype() != VType::Mat4 || v.vtype() != VType::Vec4)
        throw std::invalid_argument("MatVec: expects (mat4, vec4)");
    return make(graph_of(xs), OpKind::MatVec, "{y}={x0}*{x1};", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int i) {
                    if (i == 0) return outer(gy, in[1]);
                    return mat_vec(transpose(in[0]), gy);
                },
                VType::Vec4, common_size(xs, "MatVec"));
}

inline Variable mat_mul(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    if (a.vtype() != VType::Mat4 || b.vtype() != VType::Mat4)
        throw std::invalid_argument("MatMul: expects (mat4, mat4)");
    return make(graph_of(xs), OpKind::MatMul, "{y}={x0}*{x1};", ShaderKind::FRAG, xs, {}, {},
                [](const Variables& in, Variable, Variable gy, int i) {
                    if (i == 0) return mat_mul(gy, transpose(in[1]));
                    return mat_mul(transpose(in[0]), gy);
                },
                VType::Mat4, common_size(xs, "MatMul"));
}

inline Variable outer(Variable a, Variable b) {
    using namespace detail;
    Variables xs{a, b};
    if (a.vtype() != VType::Vec4 || b.vtype() != VType::Vec4)
        throw std::invalid_argument("Outer: expects (vec4, vec4)");
    return make(graph_of(xs), OpKind::Outer, "{y}=outerProduct({x0},{x1});", ShaderKind::FRAG, xs,
                {}, {},
                [](const Variables& in, Variable, Variable gy, int i) {
                    if (i == 0) return mat_vec(gy, in[1]);
                    return mat_vec(transpose(gy), in[0]);
                },
                VType::Mat4, common_size(xs, "Outer"));
}

// ---- reductions ----

// Per-channel sum over all pixels, 1x1 output.
inline Variable reduce_sum(Variable v) {
    using namespace detail;
    require_float(v, "SumPixels");
    Variables xs{v};
    return make(*v.node->graph, OpKind::SumPixels, "{y}=sum_pixels({x0});", ShaderKind::FRAG, xs,
                {ArgAccess::RawRead}, {},
                [](const Variables& in, Variable, Variable gy, int) {
                    return broadcast(gy, in[0].size());
                },
                v.vtype(), ImgSize{1, 1});
}

// Mean over all pixels and channels, scalar output.
inline Variable mean(Variable v) {
    using namespace detail;
    require_float(v, "Mean");
    Variables xs{v};
    return make(*v.node->graph, OpKind::Mean, "{y}=mean_pixels({x0});", ShaderKind::FRAG, xs,
                {ArgAccess::RawRead}, {},
                [](const Variables& in, Variable, Variable gy, int) {
                    Graph& g = *in[0].node->graph;
                    const double n =
                        double(in[0].size().pixels()) * channel_count(in[0].vtype());
                    Variable gs = broadcast(mul(gy, constant(g, 1.0 / n)), in[0].size());
                    if (in[0].vtype() != VType::F32) return splat(gs, in[0].vtype());
                    return gs;
                },
                VType::F32, ImgSize{1, 1});
}

// Channel-wise pixel sum of same-shape variables, realized as an Add tree.
inline Variable sum_pixel_wise(const Variables& vs) {
    if (vs.empty()) throw std::invalid_argument("SumPixelWise: empty list");
    Variables level = vs;
    while (level.size() > 1) {
        Variables next;
        for (size_t i = 0; i + 1 < level.size(); i += 2) next.push_back(add(level[i], level[i + 1]));
        if (level.size() & 1) next.push_back(level.back());
        level = std::move(next);
    }
    return level[0];
}

// ---- gathers ----

// out[p] = attr[idx[p][lane]]; negative or out-of-range indices read zero.
inline Variable indexed_read(Variable attr, Variable idx, int lane) {
    using namespace detail;
    Variables xs{attr, idx};
    if (!is_integer(idx.vtype())) throw std::invalid_argument("IndexedRead: integer index image required");
    if (lane >= channel_count(idx.vtype())) throw std::invalid_argument("IndexedRead: bad lane");
    OpPayload p;
    p.component = lane;
    std::ostringstream s;
    s << "{y}=fetch({x0},{x1}[" << lane << "]);";
    return make(graph_of(xs), OpKind::IndexedRead, s.str(), ShaderKind::FRAG, xs,
                {ArgAccess::RawRead, ArgAccess::SamePixel}, p,
                [lane](const Variables& in, Variable, Variable gy, int i) -> Variable {
                    if (i != 0 || !is_float(in[0].vtype())) return {};
                    OpPayload sp;
                    sp.component = lane;
                    sp.out_size = in[0].size();
                    sp.out_vtype = in[0].vtype();
                    Variables sxs{gy, in[1]};
                    return make(*in[0].node->graph, OpKind::IndexScatterAdd,
                                "{y}=scatter_add({x0},{x1});", ShaderKind::COMP, sxs,
                                {ArgAccess::RawRead, ArgAccess::RawRead}, sp, nullptr,
                                in[0].vtype(), in[0].size());
                },
                attr.vtype(), idx.size());
}

// Bilinear texture sampling, clamp-to-edge, texel centers at (i+0.5)/W.
// The backward path for the texture input goes through the inverse-UV table.
inline Variable texture_sample(Variable tex, Variable uv, bool jitter = true) {
    using namespace detail;
    Variables xs{tex, uv};
    require_float(tex, "TextureSample");
    if (uv.vtype() != VType::Vec2) throw std::invalid_argument("TextureSample: uv must be vec2");
    return make(graph_of(xs), OpKind::TextureSample, "{y}=texture({x0},{x1});", ShaderKind::FRAG,
                xs, {ArgAccess::Sampled, ArgAccess::SamePixel}, {},
                [jitter](const Variables& in, Variable, Variable gy, int i) -> Variable {
                    if (i != 0) return {};
                    OpPayload gp;
                    gp.out_size = in[0].size();
                    gp.out_vtype = in[0].vtype();
                    gp.jitter = jitter;
                    Variables gxs{in[1], gy};
                    return make(*in[0].node->graph, OpKind::TextureGrad,
                                "{y}=texture_grad({x0},{x1});", ShaderKind::COMP, gxs,
                                {ArgAccess::RawRead, ArgAccess::RawRead}, gp, nullptr,
                                in[0].vtype(), in[0].size());
                },
                tex.vtype(), uv.size());
}

// Reads the same image at a fixed pixel offset, clamped at borders.
inline Variable shift_read(Variable img, int dx, int dy) {
    using namespace detail;
    OpPayload p;
    p.dx = dx, p.dy = dy;
    Variables xs{img};
    std::ostringstream s;
    s << "{y}=fetch_offset({x0}," << dx << "," << dy << ");";
    return make(*img.node->graph, OpKind::ShiftRead, s.str(), ShaderKind::FRAG, xs,
                {ArgAccess::RawRead}, p, nullptr, img.vtype(), img.size());
}

// out[q] = src[q / factor]; flattens to a (pixels*factor) x 1 image.
inline Variable stretch_read(Variable src, int factor) {
    using namespace detail;
    if (factor < 1) throw std::invalid_argument("StretchRead: factor must be >= 1");
    OpPayload p;
    p.factor = factor;
    Variables xs{src};
    std::ostringstream s;
    s << "{y}=fetch_stretched({x0}," << factor << ");";
    return make(*src.node->graph, OpKind::StretchRead, s.str(), ShaderKind::FRAG, xs,
                {ArgAccess::RawRead}, p, nullptr, src.vtype(),
                ImgSize{int(src.size().pixels()) * factor, 1});
}

// ---- rasterization pipeline ----

// Screen-space triangle enlargement. Inputs are the three per-face clip-space
// corner images; each face emits two primitives (6 vertices, degenerate where
// unused) so the output shape stays static.
inline Variable enlarge(Variable p0, Variable p1, Variable p2, double radius,
                        double obtuse_threshold_deg = 30.0) {
    using namespace detail;
    Variables xs{p0, p1, p2};
    for (const Variable& v : xs)
        if (v.vtype() != VType::Vec4) throw std::invalid_argument("Enlarge: vec4 corners required");
    if (!(p0.size() == p1.size()) || !(p0.size() == p2.size()))
        throw std::invalid_argument("Enlarge: corner image sizes differ");
    OpPayload p;
    p.radius = radius;
    p.obtuse_threshold_deg = obtuse_threshold_deg;
    std::ostringstream s;
    s << "{y}=enlarge({x0},{x1},{x2}," << radius << ");";
    return make(graph_of(xs), OpKind::Enlarge, s.str(), ShaderKind::FRAG, xs,
                {ArgAccess::RawRead, ArgAccess::RawRead, ArgAccess::RawRead}, p, nullptr,
                VType::Vec4, ImgSize{int(p0.size().pixels()) * 6, 1});
}

// Hardware-rasterizer stand-in: draws triangles from a flat vec4 clip-position
// buffer and writes one attribute. Float attributes are perspective-correct
// interpolated; integer attributes take the first vertex of the triangle.
// No backward pass.
inline Variable rasterize(Variable clip_positions, Variable attr, ImgSize target) {
    using namespace detail;
    Variables xs{clip_positions, attr};
    if (clip_positions.vtype() != VType::Vec4)
        throw std::invalid_argument("Rasterize: vec4 vertex positions required");
    if (clip_positions.size().pixels() % 3 != 0)
        throw std::invalid_argument("Rasterize: vertex count not divisible by 3");
    if (attr.size().pixels() != clip_positions.size().pixels())
        throw std::invalid_argument("Rasterize: attribute count must match vertex count");
    OpPayload p;
    p.out_size = target;
    return make(graph_of(xs), OpKind::Rasterize, "{y}={x1};", ShaderKind::RASTER, xs,
                {ArgAccess::VertexBuffer, ArgAccess::VertexBuffer}, p, nullptr, attr.vtype(),
                target);
}

// Depth-peel stencil: inside a raster substage a fragment with
// frag_depth <= prev is discarded; as a plain image op this evaluates to the
// survivor mask (frag_depth > prev).
inline Variable peel_depth(Variable frag_depth, Variable prev_frag_depth) {
    using namespace detail;
    Variables xs{frag_depth, prev_frag_depth};
    if (frag_depth.vtype() != VType::F32 || prev_frag_depth.vtype() != VType::F32)
        throw std::invalid_argument("PeelDepth: float depths required");
    return make(graph_of(xs), OpKind::PeelDepth, "if({x0}<={x1})discard; {y}=1.0;",
                ShaderKind::FRAG, xs, {}, {}, nullptr, VType::F32,
                common_size(xs, "PeelDepth"));
}

// Declares the fragment depth used by the raster depth test; identity value.
inline Variable set_frag_depth(Variable depth) {
    using namespace detail;
    if (depth.vtype() != VType::F32) throw std::invalid_argument("SetFragDepth: float required");
    Variables xs{depth};
    return make(*depth.node->graph, OpKind::SetFragDepth, "{y}={x0};gl_FragDepth={y};",
                ShaderKind::FRAG, xs, {}, {},
                [](const Variables&, Variable, Variable gy, int) { return gy; }, VType::F32,
                depth.size());
}

// Links a rasterize output to the graph slice that provides its fragment
// depth and discard test; registers the slice's external inputs on the
// rasterize node so packing orders them first.
void bind_raster_program(Variable raster_out, Variable frag_depth, Variable discard_stencil);

inline void bind_raster_program(Variable raster_out, Variable frag_depth,
                                Variable discard_stencil) {
    FunctionNode* r = raster_out.creator();
    if (!r || r->op != OpKind::Rasterize)
        throw std::invalid_argument("bind_raster_program: not a rasterize output");
    if (frag_depth.vtype() != VType::F32)
        throw std::invalid_argument("bind_raster_program: frag depth must be float");
    r->raster_depth = frag_depth.node;
    r->raster_discard = discard_stencil ? discard_stencil.node : nullptr;

    // The depth/discard slice runs per fragment, so everything it reads from
    // outside the slice must exist before the raster substage executes.
    std::unordered_map<const VariableNode*, bool> memo;
    std::function<bool(const VariableNode*)> reaches = [&](const VariableNode* v) -> bool {
        if (v == raster_out.node) return true;
        auto it = memo.find(v);
        if (it != memo.end()) return it->second;
        memo[v] = false;  // guards self-recursion; graph is a DAG
        bool hit = false;
        if (v->creator)
            for (const VariableNode* in : v->creator->inputs)
                if (reaches(in)) {
                    hit = true;
                    break;
                }
        memo[v] = hit;
        return hit;
    };

    std::set<VariableNode*> externals;
    std::set<const FunctionNode*> seen;
    std::function<void(VariableNode*)> visit = [&](VariableNode* v) {
        if (v == raster_out.node || !v->creator) return;
        FunctionNode* f = v->creator;
        if (seen.count(f)) return;
        seen.insert(f);
        for (VariableNode* in : f->inputs) {
            if (in == raster_out.node) continue;
            if (reaches(in))
                visit(in);
            else
                externals.insert(in);
        }
    };
    if (frag_depth.node && reaches(frag_depth.node)) visit(frag_depth.node);
    if (discard_stencil && reaches(discard_stencil.node)) visit(discard_stencil.node);

    std::vector<VariableNode*> ordered(externals.begin(), externals.end());
    std::sort(ordered.begin(), ordered.end(),
              [](const VariableNode* a, const VariableNode* b) { return a->id < b->id; });
    for (VariableNode* e : ordered) {
        if (std::find(r->inputs.begin(), r->inputs.end(), e) != r->inputs.end()) continue;
        r->inputs.push_back(e);
        r->arg_access.push_back(ArgAccess::RawRead);
        e->users.push_back(r);
    }
}

// ---- mesh connectivity ops ----

// Area-weighted vertex normals accumulated from face cross products.
inline Variable vertex_normals(Variable pos4, Variable faces) {
    using namespace detail;
    Variables xs{pos4, faces};
    if (pos4.vtype() != VType::Vec4 || faces.vtype() != VType::IVec3)
        throw std::invalid_argument("VertexNormals: expects (vec4 positions, ivec3 faces)");
    return make(graph_of(xs), OpKind::VertexNormals, "{y}=vertex_normals({x0},{x1});",
                ShaderKind::COMP, xs, {ArgAccess::RawRead, ArgAccess::RawRead}, {},
                [](const Variables& in, Variable, Variable gy, int i) -> Variable {
                    if (i != 0) return {};
                    Variables bxs{in[0], in[1], gy};
                    return make(*in[0].node->graph, OpKind::VertexNormalsBwd,
                                "{y}=vertex_normals_bwd({x0},{x1},{x2});", ShaderKind::COMP, bxs,
                                {ArgAccess::RawRead, ArgAccess::RawRead, ArgAccess::RawRead}, {},
                                nullptr, VType::Vec4, in[0].size());
                },
                VType::Vec3, pos4.size());
}

// L(v) = mean(neighbors) - v with uniform weights.
inline Variable uniform_laplacian(Variable vtx, std::shared_ptr<const MeshAdjacency> adj) {
    using namespace detail;
    if (vtx.vtype() != VType::Vec3) throw std::invalid_argument("UniformLaplacian: vec3 required");
    if (!adj || adj->vertex_count() != vtx.size().pixels())
        throw std::invalid_argument("UniformLaplacian: adjacency size mismatch");
    OpPayload p;
    p.adjacency = adj;
    Variables xs{vtx};
    return make(*vtx.node->graph, OpKind::UniformLaplacian, "{y}=laplacian({x0});",
                ShaderKind::FRAG, xs, {ArgAccess::RawRead}, p,
                [adj](const Variables& in, Variable, Variable gy, int) {
                    OpPayload bp;
                    bp.adjacency = adj;
                    Variables bxs{gy};
                    return make(*in[0].node->graph, OpKind::UniformLaplacianT,
                                "{y}=laplacian_t({x0});", ShaderKind::FRAG, bxs,
                                {ArgAccess::RawRead}, bp, nullptr, VType::Vec3, in[0].size());
                },
                VType::Vec3, vtx.size());
}

// ---- operator sugar ----

inline Variable operator+(Variable a, Variable b) { return add(a, b); }
inline Variable operator-(Variable a, Variable b) { return sub(a, b); }
inline Variable operator*(Variable a, Variable b) { return mul(a, b); }
inline Variable operator/(Variable a, Variable b) { return div(a, b); }
inline Variable operator-(Variable a) { return neg(a); }
inline Variable operator+(Variable a, double c) { return add(a, constant(*a.node->graph, c)); }
inline Variable operator-(Variable a, double c) { return sub(a, constant(*a.node->graph, c)); }
inline Variable operator*(Variable a, double c) { return mul(a, constant(*a.node->graph, c)); }
inline Variable operator/(Variable a, double c) { return div(a, constant(*a.node->graph, c)); }
inline Variable operator+(double c, Variable a) { return add(constant(*a.node->graph, c), a); }
inline Variable operator-(double c, Variable a) { return sub(constant(*a.node->graph, c), a); }
inline Variable operator*(double c, Variable a) { return mul(constant(*a.node->graph, c), a); }
inline Variable operator/(double c, Variable a) { return div(constant(*a.node->graph, c), a); }

// ---- name-keyed entry points ----

inline Variable build_elementwise(const std::string& name, const Variables& xs) {
    auto need = [&](size_t n) {
        if (xs.size() != n)
            throw std::invalid_argument("build_elementwise: " + name + " expects " +
                                        std::to_string(n) + " inputs");
    };
    if (name == "Add") return need(2), add(xs[0], xs[1]);
    if (name == "Sub") return need(2), sub(xs[0], xs[1]);
    if (name == "Mul") return need(2), mul(xs[0], xs[1]);
    if (name == "Div") return need(2), div(xs[0], xs[1]);
    if (name == "Neg") return need(1), neg(xs[0]);
    if (name == "Abs") return need(1), abs(xs[0]);
    if (name == "Exp") return need(1), exp(xs[0]);
    if (name == "Sin") return need(1), sin(xs[0]);
    if (name == "Cos") return need(1), cos(xs[0]);
    if (name == "Sqrt") return need(1), sqrt(xs[0]);
    if (name == "Min") return need(2), min(xs[0], xs[1]);
    if (name == "Max") return need(2), max(xs[0], xs[1]);
    if (name == "Mix") return need(3), mix(xs[0], xs[1], xs[2]);
    if (name == "Sign") return need(1), sign(xs[0]);
    if (name == "Less") return need(2), less(xs[0], xs[1]);
    if (name == "GreaterEq") return need(2), greater_eq(xs[0], xs[1]);
    if (name == "Vec2") return need(2), vec2(xs[0], xs[1]);
    if (name == "Vec3") return need(3), vec3(xs[0], xs[1], xs[2]);
    if (name == "Vec4") return need(2), vec4(xs[0], xs[1]);
    if (name == "GetX") return need(1), get_x(xs[0]);
    if (name == "GetY") return need(1), get_y(xs[0]);
    if (name == "GetZ") return need(1), get_z(xs[0]);
    if (name == "GetW") return need(1), get_w(xs[0]);
    if (name == "GetXYZ") return need(1), get_xyz(xs[0]);
    if (name == "Dot") return need(2), dot(xs[0], xs[1]);
    throw std::invalid_argument("build_elementwise: unknown op " + name);
}

enum class ReductionKind { SumPixelWise, Mean };

inline Variable build_reduction(ReductionKind kind, Variable x) {
    if (kind == ReductionKind::Mean) return mean(x);
    return reduce_sum(x);
}

// Deterministic shape/type inference without building a node.
inline std::pair<VType, ImgSize> infer_output_shape(const std::string& name,
                                                    const Variables& xs) {
    Graph probe;
    Variables clones;
    clones.reserve(xs.size());
    for (const Variable& x : xs) clones.push_back(probe.add_input(x.vtype(), x.size()));
    Variable y = build_elementwise(name, clones);
    return {y.vtype(), y.size()};
}

}  // namespace dressi::ops
