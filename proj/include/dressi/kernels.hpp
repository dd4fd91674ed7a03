#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <unordered_map>

#include "dressi/graph.hpp"
#include "dressi/sobol.hpp"

namespace dressi {

// One fused kernel compiled to a flat register tape. The same instruction
// semantics back fused substages, naive per-function execution and
// compile-time constant folding, so all three paths agree bitwise.

using Reg = std::array<double, 16>;

struct TapeInstr {
    OpKind op{};
    int16_t dst = -1;
    int16_t a = -1, b = -1, c = -1;  // source registers
    int16_t h0 = -1, h1 = -1, h2 = -1;  // buffer handles for gathers
    int8_t dst_ch = 1, a_ch = 1, b_ch = 1, c_ch = 1;
    const FunctionNode* fn = nullptr;
};

struct KernelProgram {
    struct Load {
        int16_t reg;
        int16_t handle;
        int8_t ch;
    };
    std::vector<TapeInstr> instrs;
    std::vector<Load> uniform_loads;  // 1x1 same-pixel inputs, loaded once
    std::vector<Load> pixel_loads;    // full-size same-pixel inputs, per pixel
    std::vector<std::pair<int16_t, int16_t>> outputs;  // reg -> out slot
    std::vector<const VariableNode*> handle_vars;      // gather/load sources
    std::vector<const VariableNode*> out_vars;
    int reg_count = 0;
    ImgSize domain{1, 1};
};

struct EvalEnv {
    const std::vector<const ImageBuffer*>* handles = nullptr;
    int px = 0, py = 0;
    ImgSize domain{1, 1};
    bool fragment_mode = false;  // PeelDepth discards instead of masking
    bool discarded = false;
};

namespace kern {

inline double src(const Reg& r, int c, int nch) { return r[nch == 1 ? 0 : c]; }

[[noreturn]] inline void exec_error(const FunctionNode* fn, const std::string& what) {
    throw std::runtime_error("executor: " + what + " in " + op_name(fn->op) + " (function #" +
                             std::to_string(fn->id) + ")");
}

inline void bilinear_setup(double u, int extent, int& i0, int& i1, double& f) {
    double x = u * extent - 0.5;
    double fl = std::floor(x);
    f = x - fl;
    i0 = std::clamp(int(fl), 0, extent - 1);
    i1 = std::clamp(int(fl) + 1, 0, extent - 1);
}

inline void texture_bilinear(const ImageBuffer& tex, double u, double v, double* out) {
    int x0, x1, y0, y1;
    double fx, fy;
    bilinear_setup(u, tex.width(), x0, x1, fx);
    bilinear_setup(v, tex.height(), y0, y1, fy);
    const int ch = tex.channels();
    for (int c = 0; c < ch; ++c) {
        const double v00 = tex.get(x0, y0, c), v10 = tex.get(x1, y0, c);
        const double v01 = tex.get(x0, y1, c), v11 = tex.get(x1, y1, c);
        out[c] = (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy;
    }
}

// Screen-space enlargement for one face: acute faces move vertices along the
// outward interior-angle bisector by r/sin(angle/2) (the exact offset
// triangle), sliver faces fall back to an r-expanded bounding box split into
// two triangles. Emits 6 vertices per face, unused slots degenerate at 0.
inline void enlarge_face(const double p[3][4], double radius, double obtuse_deg, double w_eps,
                         int slot, double* out) {
    for (int c = 0; c < 4; ++c) out[c] = 0.0;
    double s[3][3];  // screen xy + ndc z
    for (int v = 0; v < 3; ++v) {
        const double w = p[v][3];
        if (w <= w_eps) return;  // culled whole
        s[v][0] = p[v][0] / w * 0.5 + 0.5;
        s[v][1] = p[v][1] / w * 0.5 + 0.5;
        s[v][2] = p[v][2] / w;
    }
    const double e0x = s[1][0] - s[0][0], e0y = s[1][1] - s[0][1];
    const double e1x = s[2][0] - s[0][0], e1y = s[2][1] - s[0][1];
    const double area2 = e0x * e1y - e0y * e1x;
    if (area2 == 0.0) return;  // degenerate

    double min_angle = 1e9;
    double angle[3];
    for (int v = 0; v < 3; ++v) {
        const int a = (v + 1) % 3, b = (v + 2) % 3;
        const double ux = s[a][0] - s[v][0], uy = s[a][1] - s[v][1];
        const double vx = s[b][0] - s[v][0], vy = s[b][1] - s[v][1];
        const double lu = std::hypot(ux, uy), lv = std::hypot(vx, vy);
        if (lu == 0.0 || lv == 0.0) return;
        double cosang = std::clamp((ux * vx + uy * vy) / (lu * lv), -1.0, 1.0);
        angle[v] = std::acos(cosang);
        min_angle = std::min(min_angle, angle[v]);
    }

    const double obtuse_rad = obtuse_deg * M_PI / 180.0;
    if (min_angle >= obtuse_rad || radius == 0.0) {
        if (slot >= 3) return;  // second primitive unused on the acute path
        const int v = slot;
        const int a = (v + 1) % 3, b = (v + 2) % 3;
        double ux = s[a][0] - s[v][0], uy = s[a][1] - s[v][1];
        double vx = s[b][0] - s[v][0], vy = s[b][1] - s[v][1];
        const double lu = std::hypot(ux, uy), lv = std::hypot(vx, vy);
        // inward bisector of the interior angle
        double bx = ux / lu + vx / lv, by = uy / lu + vy / lv;
        const double lb = std::hypot(bx, by);
        double ox = s[v][0], oy = s[v][1];
        if (lb > 0.0 && radius > 0.0) {
            const double d = radius / std::sin(angle[v] * 0.5);
            ox -= bx / lb * d;
            oy -= by / lb * d;
        }
        out[0] = ox * 2.0 - 1.0;
        out[1] = oy * 2.0 - 1.0;
        out[2] = s[v][2];
        out[3] = 1.0;
        return;
    }

    // bounding box expanded by r, as two triangles
    double xmin = s[0][0], xmax = s[0][0], ymin = s[0][1], ymax = s[0][1];
    for (int v = 1; v < 3; ++v) {
        xmin = std::min(xmin, s[v][0]), xmax = std::max(xmax, s[v][0]);
        ymin = std::min(ymin, s[v][1]), ymax = std::max(ymax, s[v][1]);
    }
    xmin -= radius, xmax += radius, ymin -= radius, ymax += radius;
    const double zc = (s[0][2] + s[1][2] + s[2][2]) / 3.0;
    double bx[6] = {xmin, xmax, xmax, xmin, xmax, xmin};
    double by[6] = {ymin, ymin, ymax, ymin, ymax, ymax};
    out[0] = bx[slot] * 2.0 - 1.0;
    out[1] = by[slot] * 2.0 - 1.0;
    out[2] = zc;
    out[3] = 1.0;
}

inline void eval_instr(const TapeInstr& in, Reg* regs, EvalEnv& env) {
    Reg& d = regs[in.dst];
    const int n = in.dst_ch;
    switch (in.op) {
        case OpKind::Add: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            for (int c = 0; c < n; ++c) d[c] = src(A, c, in.a_ch) + src(B, c, in.b_ch);
            break;
        }
        case OpKind::Sub: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            for (int c = 0; c < n; ++c) d[c] = src(A, c, in.a_ch) - src(B, c, in.b_ch);
            break;
        }
        case OpKind::Mul: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            for (int c = 0; c < n; ++c) d[c] = src(A, c, in.a_ch) * src(B, c, in.b_ch);
            break;
        }
        case OpKind::Div: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            for (int c = 0; c < n; ++c) {
                const double q = src(B, c, in.b_ch);
                if (q == 0.0) exec_error(in.fn, "division by zero");
                d[c] = src(A, c, in.a_ch) / q;
            }
            break;
        }
        case OpKind::Neg:
            for (int c = 0; c < n; ++c) d[c] = -regs[in.a][c];
            break;
        case OpKind::Abs:
            for (int c = 0; c < n; ++c) d[c] = std::abs(regs[in.a][c]);
            break;
        case OpKind::Exp:
            for (int c = 0; c < n; ++c) d[c] = std::exp(regs[in.a][c]);
            break;
        case OpKind::Sin:
            for (int c = 0; c < n; ++c) d[c] = std::sin(regs[in.a][c]);
            break;
        case OpKind::Cos:
            for (int c = 0; c < n; ++c) d[c] = std::cos(regs[in.a][c]);
            break;
        case OpKind::Sqrt:
            for (int c = 0; c < n; ++c) {
                if (regs[in.a][c] < 0.0) exec_error(in.fn, "sqrt of negative value");
                d[c] = std::sqrt(regs[in.a][c]);
            }
            break;
        case OpKind::Sign:
            for (int c = 0; c < n; ++c)
                d[c] = regs[in.a][c] > 0.0 ? 1.0 : (regs[in.a][c] < 0.0 ? -1.0 : 0.0);
            break;
        case OpKind::Min: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            for (int c = 0; c < n; ++c) d[c] = std::min(src(A, c, in.a_ch), src(B, c, in.b_ch));
            break;
        }
        case OpKind::Max: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            for (int c = 0; c < n; ++c) d[c] = std::max(src(A, c, in.a_ch), src(B, c, in.b_ch));
            break;
        }
        case OpKind::Mix: {
            const Reg &A = regs[in.a], &B = regs[in.b], &T = regs[in.c];
            for (int c = 0; c < n; ++c) {
                const double t = src(T, c, in.c_ch);
                d[c] = src(A, c, in.a_ch) * (1.0 - t) + src(B, c, in.b_ch) * t;
            }
            break;
        }
        case OpKind::Less: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            for (int c = 0; c < n; ++c)
                d[c] = src(A, c, in.a_ch) < src(B, c, in.b_ch) ? 1.0 : 0.0;
            break;
        }
        case OpKind::GreaterEq: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            for (int c = 0; c < n; ++c)
                d[c] = src(A, c, in.a_ch) >= src(B, c, in.b_ch) ? 1.0 : 0.0;
            break;
        }
        case OpKind::FloatConst:
            d[0] = in.fn->payload.scalar;
            break;
        case OpKind::ScreenPos:
            d[0] = (env.px + 0.5) / env.domain.width;
            d[1] = (env.py + 0.5) / env.domain.height;
            break;
        case OpKind::Broadcast:
        case OpKind::SetFragDepth:
            for (int c = 0; c < n; ++c) d[c] = regs[in.a][c];
            break;
        case OpKind::Splat:
            for (int c = 0; c < n; ++c) d[c] = regs[in.a][0];
            break;
        case OpKind::ChannelSum: {
            double s = 0.0;
            for (int c = 0; c < in.a_ch; ++c) s += regs[in.a][c];
            d[0] = s;
            break;
        }
        case OpKind::Vec2C:
            d[0] = regs[in.a][0], d[1] = regs[in.b][0];
            break;
        case OpKind::Vec3C:
            d[0] = regs[in.a][0], d[1] = regs[in.b][0], d[2] = regs[in.c][0];
            break;
        case OpKind::Vec4C:
            d[0] = regs[in.a][0], d[1] = regs[in.a][1], d[2] = regs[in.a][2];
            d[3] = regs[in.b][0];
            break;
        case OpKind::GetX:
            d[0] = regs[in.a][0];
            break;
        case OpKind::GetY:
            d[0] = regs[in.a][1];
            break;
        case OpKind::GetZ:
            d[0] = regs[in.a][2];
            break;
        case OpKind::GetW:
            d[0] = regs[in.a][3];
            break;
        case OpKind::GetXYZ:
            d[0] = regs[in.a][0], d[1] = regs[in.a][1], d[2] = regs[in.a][2];
            break;
        case OpKind::GetXI:
            d[0] = regs[in.a][in.fn->payload.component];
            break;
        case OpKind::Dot: {
            double s = 0.0;
            for (int c = 0; c < in.a_ch; ++c) s += regs[in.a][c] * regs[in.b][c];
            d[0] = s;
            break;
        }
        case OpKind::MatVec: {
            const Reg &M = regs[in.a], &V = regs[in.b];
            double r[4];
            for (int i = 0; i < 4; ++i)
                r[i] = M[i * 4] * V[0] + M[i * 4 + 1] * V[1] + M[i * 4 + 2] * V[2] +
                       M[i * 4 + 3] * V[3];
            for (int i = 0; i < 4; ++i) d[i] = r[i];
            break;
        }
        case OpKind::MatMul: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            double r[16];
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    double s = 0.0;
                    for (int k = 0; k < 4; ++k) s += A[i * 4 + k] * B[k * 4 + j];
                    r[i * 4 + j] = s;
                }
            for (int i = 0; i < 16; ++i) d[i] = r[i];
            break;
        }
        case OpKind::Transpose: {
            const Reg& M = regs[in.a];
            double r[16];
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) r[i * 4 + j] = M[j * 4 + i];
            for (int i = 0; i < 16; ++i) d[i] = r[i];
            break;
        }
        case OpKind::Outer: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            double r[16];
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) r[i * 4 + j] = A[i] * B[j];
            for (int i = 0; i < 16; ++i) d[i] = r[i];
            break;
        }
        case OpKind::SumPixels: {
            const ImageBuffer& img = *(*env.handles)[in.h0];
            for (int c = 0; c < n; ++c) d[c] = 0.0;
            const int ch = img.channels();
            for (int64_t p = 0; p < img.pixel_count(); ++p)
                for (int c = 0; c < ch; ++c) d[c] += img.at(size_t(p) * ch + c);
            break;
        }
        case OpKind::Mean: {
            const ImageBuffer& img = *(*env.handles)[in.h0];
            double s = 0.0;
            for (size_t i = 0; i < img.value_count(); ++i) s += img.at(i);
            d[0] = s / double(img.value_count());
            break;
        }
        case OpKind::IndexedRead: {
            const ImageBuffer& attr = *(*env.handles)[in.h0];
            const int64_t idx = int64_t(std::llround(regs[in.a][in.fn->payload.component]));
            if (idx < 0 || idx >= attr.pixel_count()) {
                for (int c = 0; c < n; ++c) d[c] = 0.0;
            } else {
                const int ch = attr.channels();
                for (int c = 0; c < n; ++c) d[c] = attr.at(size_t(idx) * ch + c);
            }
            break;
        }
        case OpKind::TextureSample: {
            const ImageBuffer& tex = *(*env.handles)[in.h0];
            double u = std::clamp(regs[in.a][0], 0.0, 1.0);
            double v = std::clamp(regs[in.a][1], 0.0, 1.0);
            texture_bilinear(tex, u, v, d.data());
            break;
        }
        case OpKind::ShiftRead: {
            const ImageBuffer& img = *(*env.handles)[in.h0];
            const int x = std::clamp(env.px + in.fn->payload.dx, 0, img.width() - 1);
            const int y = std::clamp(env.py + in.fn->payload.dy, 0, img.height() - 1);
            for (int c = 0; c < n; ++c) d[c] = img.get(x, y, c);
            break;
        }
        case OpKind::StretchRead: {
            const ImageBuffer& img = *(*env.handles)[in.h0];
            const int64_t p = (int64_t(env.py) * env.domain.width + env.px) / in.fn->payload.factor;
            const int ch = img.channels();
            for (int c = 0; c < n; ++c) d[c] = img.at(size_t(p) * ch + c);
            break;
        }
        case OpKind::Enlarge: {
            const ImageBuffer& b0 = *(*env.handles)[in.h0];
            const ImageBuffer& b1 = *(*env.handles)[in.h1];
            const ImageBuffer& b2 = *(*env.handles)[in.h2];
            const int64_t q = int64_t(env.py) * env.domain.width + env.px;
            const int64_t face = q / 6;
            const int slot = int(q % 6);
            double p[3][4];
            for (int c = 0; c < 4; ++c) {
                p[0][c] = b0.at(size_t(face) * 4 + c);
                p[1][c] = b1.at(size_t(face) * 4 + c);
                p[2][c] = b2.at(size_t(face) * 4 + c);
            }
            enlarge_face(p, in.fn->payload.radius, in.fn->payload.obtuse_threshold_deg,
                         in.fn->payload.w_eps, slot, d.data());
            break;
        }
        case OpKind::PeelDepth: {
            const Reg &A = regs[in.a], &B = regs[in.b];
            const double depth = src(A, 0, in.a_ch), prev = src(B, 0, in.b_ch);
            if (env.fragment_mode && depth <= prev) {
                env.discarded = true;
                return;
            }
            d[0] = depth <= prev ? 0.0 : 1.0;
            break;
        }
        case OpKind::UniformLaplacian: {
            const ImageBuffer& pos = *(*env.handles)[in.h0];
            const MeshAdjacency& adj = *in.fn->payload.adjacency;
            const int64_t vtx = int64_t(env.py) * env.domain.width + env.px;
            const int32_t begin = adj.offsets[vtx], end = adj.offsets[vtx + 1];
            for (int c = 0; c < 3; ++c) d[c] = 0.0;
            if (begin == end) break;  // isolated vertex
            for (int32_t k = begin; k < end; ++k) {
                const size_t nb = size_t(adj.neighbors[k]) * 3;
                for (int c = 0; c < 3; ++c) d[c] += pos.at(nb + c);
            }
            const double inv = 1.0 / (end - begin);
            for (int c = 0; c < 3; ++c) d[c] = d[c] * inv - pos.at(size_t(vtx) * 3 + c);
            break;
        }
        case OpKind::UniformLaplacianT: {
            // adjoint of the uniform Laplacian (adjacency is symmetric)
            const ImageBuffer& gin = *(*env.handles)[in.h0];
            const MeshAdjacency& adj = *in.fn->payload.adjacency;
            const int64_t vtx = int64_t(env.py) * env.domain.width + env.px;
            const int32_t begin = adj.offsets[vtx], end = adj.offsets[vtx + 1];
            for (int c = 0; c < 3; ++c) d[c] = 0.0;
            for (int32_t k = begin; k < end; ++k) {
                const int32_t nb = adj.neighbors[k];
                const int32_t ndeg = adj.offsets[nb + 1] - adj.offsets[nb];
                if (ndeg == 0) continue;
                for (int c = 0; c < 3; ++c) d[c] += gin.at(size_t(nb) * 3 + c) / ndeg;
            }
            if (begin != end)
                for (int c = 0; c < 3; ++c) d[c] -= gin.at(size_t(vtx) * 3 + c);
            break;
        }
        default:
            exec_error(in.fn, "op not valid inside a fused kernel");
    }
}

inline void run_program(const KernelProgram& prog, Reg* regs,
                        const std::vector<const ImageBuffer*>& handles, EvalEnv& env) {
    for (const auto& ld : prog.pixel_loads) {
        const ImageBuffer& img = *handles[ld.handle];
        const size_t base = (size_t(env.py) * img.width() + env.px) * ld.ch;
        for (int c = 0; c < ld.ch; ++c) regs[ld.reg][c] = img.at(base + c);
    }
    for (const TapeInstr& in : prog.instrs) {
        eval_instr(in, regs, env);
        if (env.discarded) return;
    }
}

inline void load_uniforms(const KernelProgram& prog, Reg* regs,
                          const std::vector<const ImageBuffer*>& handles) {
    for (const auto& ld : prog.uniform_loads)
        for (int c = 0; c < ld.ch; ++c) regs[ld.reg][c] = handles[ld.handle]->at(c);
}

}  // namespace kern

// Compiles a function list (execution order) into a register tape. Variables
// in `injected` are provided by the caller as preset registers.
class ProgramBuilder {
public:
    using Resolver = std::function<const VariableNode*(const VariableNode*)>;

    ProgramBuilder(Resolver resolve, ImgSize domain) : resolve_(std::move(resolve)) {
        prog_.domain = domain;
    }

    int inject(const VariableNode* v) {
        const VariableNode* cv = resolve_(v);
        int reg = alloc_reg();
        reg_of_[cv] = reg;
        return reg;
    }

    void add_function(const FunctionNode* f) {
        TapeInstr in;
        in.op = f->op;
        in.fn = f;
        in.dst_ch = int8_t(channel_count(f->output->vtype));
        int16_t srcs[3] = {-1, -1, -1};
        int8_t chs[3] = {1, 1, 1};
        int nsrc = 0, nhandle = 0;
        int16_t handles[3] = {-1, -1, -1};
        for (size_t i = 0; i < f->inputs.size(); ++i) {
            const VariableNode* x = resolve_(f->inputs[i]);
            const ArgAccess acc = f->arg_access[i];
            if (acc == ArgAccess::SamePixel) {
                if (nsrc < 3) {
                    srcs[nsrc] = int16_t(reg_for_input(x));
                    chs[nsrc] = int8_t(channel_count(x->vtype));
                    ++nsrc;
                }
            } else if (acc == ArgAccess::RawRead || acc == ArgAccess::Sampled) {
                if (nhandle < 3) handles[nhandle++] = int16_t(handle_for(x));
            }
            // VertexBuffer inputs belong to the raster head, not the tape.
        }
        in.a = srcs[0], in.b = srcs[1], in.c = srcs[2];
        in.a_ch = chs[0], in.b_ch = chs[1], in.c_ch = chs[2];
        in.h0 = handles[0], in.h1 = handles[1], in.h2 = handles[2];
        const VariableNode* y = resolve_(f->output);
        int reg = alloc_reg();
        reg_of_[y] = reg;
        in.dst = int16_t(reg);
        prog_.instrs.push_back(in);
    }

    void add_output(const VariableNode* v) {
        const VariableNode* cv = resolve_(v);
        auto it = reg_of_.find(cv);
        if (it == reg_of_.end())
            throw std::logic_error("ProgramBuilder: output not produced in program");
        prog_.outputs.push_back({int16_t(it->second), int16_t(prog_.out_vars.size())});
        prog_.out_vars.push_back(cv);
    }

    int reg_of(const VariableNode* v) const {
        auto it = reg_of_.find(resolve_(v));
        if (it == reg_of_.end()) throw std::logic_error("ProgramBuilder: unknown variable");
        return it->second;
    }

    KernelProgram finish() {
        prog_.reg_count = next_reg_;
        return std::move(prog_);
    }

private:
    int alloc_reg() { return next_reg_++; }

    int handle_for(const VariableNode* v) {
        auto it = handle_of_.find(v);
        if (it != handle_of_.end()) return it->second;
        int h = int(prog_.handle_vars.size());
        prog_.handle_vars.push_back(v);
        handle_of_[v] = h;
        return h;
    }

    int reg_for_input(const VariableNode* v) {
        auto it = reg_of_.find(v);
        if (it != reg_of_.end()) return it->second;
        // external same-pixel input: becomes a load
        int reg = alloc_reg();
        reg_of_[v] = reg;
        KernelProgram::Load ld{int16_t(reg), int16_t(handle_for(v)),
                               int8_t(channel_count(v->vtype))};
        if (v->size.is_uniform() && !(prog_.domain == ImgSize{1, 1}))
            prog_.uniform_loads.push_back(ld);
        else
            prog_.pixel_loads.push_back(ld);
        return reg;
    }

    Resolver resolve_;
    KernelProgram prog_;
    std::unordered_map<const VariableNode*, int> reg_of_;
    std::unordered_map<const VariableNode*, int> handle_of_;
    int next_reg_ = 0;
};

}  // namespace dressi
