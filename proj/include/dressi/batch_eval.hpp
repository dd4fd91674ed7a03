#pragma once

#include "dressi/kernels.hpp"

namespace dressi {

// Lane-batched tape evaluation for full-resolution fragment substages. Eight
// consecutive pixels of one row share each instruction dispatch; every lane
// computes exactly the per-pixel arithmetic of kern::eval_instr, so results
// are bit-identical to the scalar path.

namespace batch {

constexpr int kLanes = 8;

// value(reg, ch, lane) = regs[(reg*16 + ch)*kLanes + lane]
inline double* slot(double* regs, int reg, int ch) {
    return regs + (size_t(reg) * 16 + ch) * kLanes;
}

struct HandleView {
    const double* f64 = nullptr;
    const int32_t* i32 = nullptr;
    const ImageBuffer* img = nullptr;
    int ch = 1;
    int width = 1, height = 1;
    int64_t pixels = 1;

    double load(size_t value_index) const {
        return f64 ? f64[value_index] : double(i32[value_index]);
    }
};

inline HandleView view_of(const ImageBuffer& b) {
    HandleView h;
    h.img = &b;
    h.ch = b.channels();
    h.width = b.width();
    h.height = b.height();
    h.pixels = b.pixel_count();
    if (is_integer(b.vtype()))
        h.i32 = b.ints().data();
    else
        h.f64 = b.floats().data();
    return h;
}

// One batch of `count <= kLanes` pixels starting at (px0, py).
struct LaneCtx {
    int px0 = 0, py = 0, count = kLanes;
    ImgSize domain{1, 1};
};

inline void eval_batch(const TapeInstr& in, double* regs, const std::vector<HandleView>& handles,
                       const LaneCtx& lc) {
    const int n = in.dst_ch;
    const int count = lc.count;
    double* D = slot(regs, in.dst, 0);

    auto src_ptr = [&](int reg, int reg_ch, int c) {
        return slot(regs, reg, reg_ch == 1 ? 0 : c);
    };

    switch (in.op) {
#define DRESSI_BIN(OPK, EXPR)                                             \
    case OpKind::OPK: {                                                   \
        for (int c = 0; c < n; ++c) {                                     \
            const double* A = src_ptr(in.a, in.a_ch, c);                  \
            const double* B = src_ptr(in.b, in.b_ch, c);                  \
            double* O = D + size_t(c) * kLanes;                           \
            for (int l = 0; l < count; ++l) {                             \
                const double av = A[l], bv = B[l];                        \
                (void)av;                                                 \
                (void)bv;                                                 \
                O[l] = (EXPR);                                            \
            }                                                             \
        }                                                                 \
        break;                                                            \
    }
        DRESSI_BIN(Add, av + bv)
        DRESSI_BIN(Sub, av - bv)
        DRESSI_BIN(Mul, av * bv)
        DRESSI_BIN(Min, std::min(av, bv))
        DRESSI_BIN(Max, std::max(av, bv))
        DRESSI_BIN(Less, av < bv ? 1.0 : 0.0)
        DRESSI_BIN(GreaterEq, av >= bv ? 1.0 : 0.0)
#undef DRESSI_BIN
        case OpKind::Div:
            for (int c = 0; c < n; ++c) {
                const double* A = src_ptr(in.a, in.a_ch, c);
                const double* B = src_ptr(in.b, in.b_ch, c);
                double* O = D + size_t(c) * kLanes;
                for (int l = 0; l < count; ++l) {
                    if (B[l] == 0.0) kern::exec_error(in.fn, "division by zero");
                    O[l] = A[l] / B[l];
                }
            }
            break;
        case OpKind::Neg:
            for (int c = 0; c < n; ++c)
                for (int l = 0; l < count; ++l)
                    D[c * kLanes + l] = -slot(regs, in.a, c)[l];
            break;
        case OpKind::Abs:
            for (int c = 0; c < n; ++c)
                for (int l = 0; l < count; ++l)
                    D[c * kLanes + l] = std::abs(slot(regs, in.a, c)[l]);
            break;
        case OpKind::Exp:
            for (int c = 0; c < n; ++c)
                for (int l = 0; l < count; ++l)
                    D[c * kLanes + l] = std::exp(slot(regs, in.a, c)[l]);
            break;
        case OpKind::Sin:
            for (int c = 0; c < n; ++c)
                for (int l = 0; l < count; ++l)
                    D[c * kLanes + l] = std::sin(slot(regs, in.a, c)[l]);
            break;
        case OpKind::Cos:
            for (int c = 0; c < n; ++c)
                for (int l = 0; l < count; ++l)
                    D[c * kLanes + l] = std::cos(slot(regs, in.a, c)[l]);
            break;
        case OpKind::Sqrt:
            for (int c = 0; c < n; ++c)
                for (int l = 0; l < count; ++l) {
                    const double v = slot(regs, in.a, c)[l];
                    if (v < 0.0) kern::exec_error(in.fn, "sqrt of negative value");
                    D[c * kLanes + l] = std::sqrt(v);
                }
            break;
        case OpKind::Sign:
            for (int c = 0; c < n; ++c)
                for (int l = 0; l < count; ++l) {
                    const double v = slot(regs, in.a, c)[l];
                    D[c * kLanes + l] = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                }
            break;
        case OpKind::Mix:
            for (int c = 0; c < n; ++c) {
                const double* A = src_ptr(in.a, in.a_ch, c);
                const double* B = src_ptr(in.b, in.b_ch, c);
                const double* T = src_ptr(in.c, in.c_ch, c);
                double* O = D + size_t(c) * kLanes;
                for (int l = 0; l < count; ++l) O[l] = A[l] * (1.0 - T[l]) + B[l] * T[l];
            }
            break;
        case OpKind::FloatConst:
            for (int l = 0; l < count; ++l) D[l] = in.fn->payload.scalar;
            break;
        case OpKind::ScreenPos:
            for (int l = 0; l < count; ++l) {
                D[l] = (lc.px0 + l + 0.5) / lc.domain.width;
                D[kLanes + l] = (lc.py + 0.5) / lc.domain.height;
            }
            break;
        case OpKind::Broadcast:
        case OpKind::SetFragDepth:
            for (int c = 0; c < n; ++c)
                for (int l = 0; l < count; ++l) D[c * kLanes + l] = slot(regs, in.a, c)[l];
            break;
        case OpKind::Splat:
            for (int c = 0; c < n; ++c)
                for (int l = 0; l < count; ++l) D[c * kLanes + l] = slot(regs, in.a, 0)[l];
            break;
        case OpKind::ChannelSum:
            for (int l = 0; l < count; ++l) {
                double s = 0;
                for (int c = 0; c < in.a_ch; ++c) s += slot(regs, in.a, c)[l];
                D[l] = s;
            }
            break;
        case OpKind::Vec2C:
            for (int l = 0; l < count; ++l) {
                D[l] = slot(regs, in.a, 0)[l];
                D[kLanes + l] = slot(regs, in.b, 0)[l];
            }
            break;
        case OpKind::Vec3C:
            for (int l = 0; l < count; ++l) {
                D[l] = slot(regs, in.a, 0)[l];
                D[kLanes + l] = slot(regs, in.b, 0)[l];
                D[2 * kLanes + l] = slot(regs, in.c, 0)[l];
            }
            break;
        case OpKind::Vec4C:
            for (int c = 0; c < 3; ++c)
                for (int l = 0; l < count; ++l) D[c * kLanes + l] = slot(regs, in.a, c)[l];
            for (int l = 0; l < count; ++l) D[3 * kLanes + l] = slot(regs, in.b, 0)[l];
            break;
        case OpKind::GetX:
        case OpKind::GetY:
        case OpKind::GetZ:
        case OpKind::GetW: {
            const int lane = in.op == OpKind::GetX   ? 0
                             : in.op == OpKind::GetY ? 1
                             : in.op == OpKind::GetZ ? 2
                                                     : 3;
            for (int l = 0; l < count; ++l) D[l] = slot(regs, in.a, lane)[l];
            break;
        }
        case OpKind::GetXYZ:
            for (int c = 0; c < 3; ++c)
                for (int l = 0; l < count; ++l) D[c * kLanes + l] = slot(regs, in.a, c)[l];
            break;
        case OpKind::GetXI:
            for (int l = 0; l < count; ++l)
                D[l] = slot(regs, in.a, in.fn->payload.component)[l];
            break;
        case OpKind::Dot:
            for (int l = 0; l < count; ++l) {
                double s = 0;
                for (int c = 0; c < in.a_ch; ++c)
                    s += slot(regs, in.a, c)[l] * slot(regs, in.b, c)[l];
                D[l] = s;
            }
            break;
        case OpKind::MatVec:
            for (int l = 0; l < count; ++l) {
                double r[4];
                for (int i = 0; i < 4; ++i) {
                    r[i] = 0;
                    for (int k = 0; k < 4; ++k)
                        r[i] += slot(regs, in.a, i * 4 + k)[l] * slot(regs, in.b, k)[l];
                }
                for (int i = 0; i < 4; ++i) D[i * kLanes + l] = r[i];
            }
            break;
        case OpKind::MatMul:
            for (int l = 0; l < count; ++l) {
                double r[16];
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 4; ++j) {
                        double s = 0;
                        for (int k = 0; k < 4; ++k)
                            s += slot(regs, in.a, i * 4 + k)[l] * slot(regs, in.b, k * 4 + j)[l];
                        r[i * 4 + j] = s;
                    }
                for (int i = 0; i < 16; ++i) D[i * kLanes + l] = r[i];
            }
            break;
        case OpKind::Transpose:
            for (int l = 0; l < count; ++l)
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 4; ++j)
                        D[(i * 4 + j) * kLanes + l] = slot(regs, in.a, j * 4 + i)[l];
            break;
        case OpKind::Outer:
            for (int l = 0; l < count; ++l)
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 4; ++j)
                        D[(i * 4 + j) * kLanes + l] =
                            slot(regs, in.a, i)[l] * slot(regs, in.b, j)[l];
            break;
        case OpKind::IndexedRead: {
            const HandleView& attr = handles[in.h0];
            const int comp = in.fn->payload.component;
            for (int l = 0; l < count; ++l) {
                const int64_t idx = int64_t(std::llround(slot(regs, in.a, comp)[l]));
                if (idx < 0 || idx >= attr.pixels) {
                    for (int c = 0; c < n; ++c) D[c * kLanes + l] = 0.0;
                } else {
                    for (int c = 0; c < n; ++c)
                        D[c * kLanes + l] = attr.load(size_t(idx) * attr.ch + c);
                }
            }
            break;
        }
        case OpKind::TextureSample: {
            const HandleView& tex = handles[in.h0];
            for (int l = 0; l < count; ++l) {
                double out[16];
                kern::texture_bilinear(*tex.img, std::clamp(slot(regs, in.a, 0)[l], 0.0, 1.0),
                                       std::clamp(slot(regs, in.a, 1)[l], 0.0, 1.0), out);
                for (int c = 0; c < n; ++c) D[c * kLanes + l] = out[c];
            }
            break;
        }
        case OpKind::ShiftRead: {
            const HandleView& img = handles[in.h0];
            const int y = std::clamp(lc.py + in.fn->payload.dy, 0, img.height - 1);
            for (int l = 0; l < count; ++l) {
                const int x = std::clamp(lc.px0 + l + in.fn->payload.dx, 0, img.width - 1);
                const size_t base = (size_t(y) * img.width + x) * img.ch;
                for (int c = 0; c < n; ++c) D[c * kLanes + l] = img.load(base + c);
            }
            break;
        }
        case OpKind::StretchRead: {
            const HandleView& img = handles[in.h0];
            for (int l = 0; l < count; ++l) {
                const int64_t p =
                    (int64_t(lc.py) * lc.domain.width + lc.px0 + l) / in.fn->payload.factor;
                for (int c = 0; c < n; ++c) D[c * kLanes + l] = img.load(size_t(p) * img.ch + c);
            }
            break;
        }
        case OpKind::Enlarge: {
            const HandleView &b0 = handles[in.h0], &b1 = handles[in.h1], &b2 = handles[in.h2];
            for (int l = 0; l < count; ++l) {
                const int64_t q = int64_t(lc.py) * lc.domain.width + lc.px0 + l;
                const int64_t face = q / 6;
                double p[3][4], out[4];
                for (int c = 0; c < 4; ++c) {
                    p[0][c] = b0.load(size_t(face) * 4 + c);
                    p[1][c] = b1.load(size_t(face) * 4 + c);
                    p[2][c] = b2.load(size_t(face) * 4 + c);
                }
                kern::enlarge_face(p, in.fn->payload.radius, in.fn->payload.obtuse_threshold_deg,
                                   in.fn->payload.w_eps, int(q % 6), out);
                for (int c = 0; c < 4; ++c) D[c * kLanes + l] = out[c];
            }
            break;
        }
        case OpKind::PeelDepth:
            for (int l = 0; l < count; ++l) {
                const double depth = src_ptr(in.a, in.a_ch, 0)[l];
                const double prev = src_ptr(in.b, in.b_ch, 0)[l];
                D[l] = depth <= prev ? 0.0 : 1.0;
            }
            break;
        case OpKind::UniformLaplacian: {
            const HandleView& pos = handles[in.h0];
            const MeshAdjacency& adj = *in.fn->payload.adjacency;
            for (int l = 0; l < count; ++l) {
                const int64_t vtx = int64_t(lc.py) * lc.domain.width + lc.px0 + l;
                const int32_t begin = adj.offsets[vtx], end = adj.offsets[vtx + 1];
                double acc[3] = {0, 0, 0};
                if (begin != end) {
                    for (int32_t k = begin; k < end; ++k) {
                        const size_t nb = size_t(adj.neighbors[k]) * 3;
                        for (int c = 0; c < 3; ++c) acc[c] += pos.load(nb + c);
                    }
                    const double inv = 1.0 / (end - begin);
                    for (int c = 0; c < 3; ++c)
                        acc[c] = acc[c] * inv - pos.load(size_t(vtx) * 3 + c);
                }
                for (int c = 0; c < 3; ++c) D[c * kLanes + l] = acc[c];
            }
            break;
        }
        case OpKind::UniformLaplacianT: {
            const HandleView& gin = handles[in.h0];
            const MeshAdjacency& adj = *in.fn->payload.adjacency;
            for (int l = 0; l < count; ++l) {
                const int64_t vtx = int64_t(lc.py) * lc.domain.width + lc.px0 + l;
                const int32_t begin = adj.offsets[vtx], end = adj.offsets[vtx + 1];
                double acc[3] = {0, 0, 0};
                for (int32_t k = begin; k < end; ++k) {
                    const int32_t nb = adj.neighbors[k];
                    const int32_t ndeg = adj.offsets[nb + 1] - adj.offsets[nb];
                    if (!ndeg) continue;
                    for (int c = 0; c < 3; ++c) acc[c] += gin.load(size_t(nb) * 3 + c) / ndeg;
                }
                if (begin != end)
                    for (int c = 0; c < 3; ++c) acc[c] -= gin.load(size_t(vtx) * 3 + c);
                for (int c = 0; c < 3; ++c) D[c * kLanes + l] = acc[c];
            }
            break;
        }
        default:
            kern::exec_error(in.fn, "op not valid inside a batched kernel");
    }
}

}  // namespace batch

}  // namespace dressi
