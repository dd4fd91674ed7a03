#pragma once

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>

#include "dressi/batch_eval.hpp"
#include "dressi/compiler.hpp"
#include "dressi/texture_grad.hpp"

namespace dressi {

// Persistent worker pool; row ranges are fixed per worker count so results
// do not depend on scheduling.
class ThreadPool {
public:
    explicit ThreadPool(int threads) {
        const int n = std::max(1, threads) - 1;
        for (int i = 0; i < n; ++i)
            workers_.emplace_back([this, i] { worker_loop(i); });
    }
    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    int width() const { return int(workers_.size()) + 1; }

    // fn(begin, end, worker_index); worker 0 is the calling thread
    void parallel_for(int64_t count, const std::function<void(int64_t, int64_t, int)>& fn) {
        const int n = width();
        if (count <= 0) return;
        if (n == 1 || count < 2 * n) {
            fn(0, count, 0);
            return;
        }
        const int64_t chunk = (count + n - 1) / n;
        {
            std::lock_guard<std::mutex> lk(mu_);
            task_ = &fn;
            count_ = count;
            chunk_ = chunk;
            pending_ = int(workers_.size());
            ++generation_;
        }
        cv_.notify_all();
        fn(0, std::min(chunk, count), 0);
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        task_ = nullptr;
    }

private:
    void worker_loop(int index) {
        uint64_t seen = 0;
        while (true) {
            const std::function<void(int64_t, int64_t, int)>* task = nullptr;
            int64_t begin = 0, end = 0;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                task = task_;
                begin = chunk_ * (index + 1);
                end = std::min(begin + chunk_, count_);
            }
            if (task && begin < end) (*task)(begin, end, index + 1);
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int64_t, int64_t, int)>* task_ = nullptr;
    int64_t count_ = 0, chunk_ = 0;
    int pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

struct StepStats {
    int64_t executed_kernels = 0;
    int64_t skipped_kernels = 0;
    int64_t executed_raster = 0;
    int64_t executed_comp = 0;
};

// Variable -> buffer bindings plus the frame counter that drives the
// inverse-UV jitter. Buffers persist across steps and double as the cache.
class ExecutionContext {
public:
    explicit ExecutionContext(int threads = default_threads())
        : pool(std::max(1, threads)) {}

    static int default_threads() {
        const unsigned n = std::thread::hardware_concurrency();
        return int(std::clamp(n, 1u, 8u));
    }

    std::unordered_map<const VariableNode*, ImageBuffer> buffers;
    std::unordered_map<const VariableNode*, const VariableNode*> alias;
    uint64_t rng_frame_counter = 0;
    bool cache_enabled = true;
    bool f32_mode = false;
    StepStats last_stats;
    ThreadPool pool;

    const VariableNode* canon(const VariableNode* v) const {
        auto it = alias.find(v);
        while (it != alias.end()) {
            v = it->second;
            it = alias.find(v);
        }
        return v;
    }

    const ImageBuffer* find(const VariableNode* v) const {
        auto it = buffers.find(canon(v));
        return it == buffers.end() ? nullptr : &it->second;
    }
};

inline void install_plan(const CompiledPlan& plan, ExecutionContext& ctx) {
    for (const auto& [v, a] : plan.alias) ctx.alias[v] = a;
    for (const auto& [v, buf] : plan.folded) {
        ctx.buffers[v] = buf;
        const_cast<VariableNode*>(v)->dirty = false;
    }
}

// Upload marks the variable dirty so the next plan_rebuild sees the change.
inline void upload(Variable var, const ImageBuffer& img, ExecutionContext& ctx) {
    if (!var) throw std::invalid_argument("upload: null variable");
    if (img.vtype() != var.vtype() || !(img.size() == var.size()))
        throw std::invalid_argument("upload: buffer shape does not match variable");
    ctx.buffers[ctx.canon(var.node)] = img;
    var.set_dirty(true);
}

inline ImageBuffer download(Variable var, const ExecutionContext& ctx) {
    if (!var) throw std::invalid_argument("download: null variable");
    const ImageBuffer* buf = ctx.find(var.node);
    if (!buf) throw std::runtime_error("download: variable has no buffer (never executed?)");
    return *buf;
}

namespace exec_detail {

inline bool frame_dependent(const SubStage& s) {
    for (const FunctionNode* f : s.funcs)
        if (f->op == OpKind::TextureGrad && f->payload.jitter) return true;
    return false;
}

inline std::vector<const VariableNode*> substage_inputs(const SubStage& s) {
    std::vector<const VariableNode*> ins;
    for (const auto* cls : {&s.vtx_vars, &s.inp_vars, &s.tex_vars, &s.slt_vars, &s.uif_vars})
        for (const VariableNode* v : *cls) ins.push_back(v);
    return ins;
}

inline ImageBuffer& ensure_out(ExecutionContext& ctx, const VariableNode* v) {
    ImageBuffer& buf = ctx.buffers[v];
    if (buf.empty() || buf.vtype() != v->vtype || !(buf.size() == v->size))
        buf = ImageBuffer(v->vtype, v->size);
    return buf;
}

inline void round_to_f32(ImageBuffer& buf) {
    if (is_integer(buf.vtype())) return;
    for (double& v : buf.floats()) v = double(float(v));
}

inline std::vector<const ImageBuffer*> bind_handles(const KernelProgram& prog,
                                                    ExecutionContext& ctx,
                                                    const char* what) {
    std::vector<const ImageBuffer*> handles;
    handles.reserve(prog.handle_vars.size());
    for (const VariableNode* v : prog.handle_vars) {
        const ImageBuffer* buf = ctx.find(v);
        if (!buf)
            throw std::runtime_error(std::string("executor: unbound input for ") + what +
                                     (v->name.empty() ? "" : " (" + v->name + ")"));
        handles.push_back(buf);
    }
    return handles;
}

inline void run_fragment_program(const SubStage& s, ExecutionContext& ctx) {
    const KernelProgram& prog = s.body;
    if (prog.instrs.empty() && prog.outputs.empty()) return;
    auto handles = bind_handles(prog, ctx, "fragment substage");

    std::vector<ImageBuffer*> outs;
    for (const VariableNode* v : prog.out_vars) outs.push_back(&ensure_out(ctx, v));

    const int W = s.domain.width, H = s.domain.height;

    if (s.domain.pixels() == 1) {  // uniform-domain kernels (incl. reductions)
        std::vector<Reg> regs(prog.reg_count);
        EvalEnv env;
        env.handles = &handles;
        env.domain = s.domain;
        kern::load_uniforms(prog, regs.data(), handles);
        kern::run_program(prog, regs.data(), handles, env);
        for (const auto& [reg, slot] : prog.outputs)
            for (int c = 0; c < outs[slot]->channels(); ++c) outs[slot]->put(c, regs[reg][c]);
        return;
    }

    using batch::kLanes;
    std::vector<batch::HandleView> views;
    views.reserve(handles.size());
    for (const ImageBuffer* b : handles) views.push_back(batch::view_of(*b));

    struct OutView {
        double* f64;
        int32_t* i32;
        int ch;
    };
    std::vector<OutView> out_views;
    for (ImageBuffer* b : outs) {
        OutView ov{nullptr, nullptr, b->channels()};
        if (is_integer(b->vtype()))
            ov.i32 = b->ints().data();
        else
            ov.f64 = b->floats().data();
        out_views.push_back(ov);
    }

    const int nworkers = ctx.pool.width();
    const size_t regfile = size_t(prog.reg_count) * 16 * kLanes;
    std::vector<std::vector<double>> reg_files(nworkers);
    for (auto& rf : reg_files) {
        rf.assign(regfile, 0.0);
        // uniforms replicate across lanes once per worker
        for (const auto& ld : prog.uniform_loads)
            for (int c = 0; c < ld.ch; ++c) {
                const double v = handles[ld.handle]->at(c);
                double* dst = batch::slot(rf.data(), ld.reg, c);
                for (int l = 0; l < kLanes; ++l) dst[l] = v;
            }
    }

    ctx.pool.parallel_for(H, [&](int64_t y0, int64_t y1, int worker) {
        double* regs = reg_files[worker].data();
        batch::LaneCtx lc;
        lc.domain = s.domain;
        for (int64_t y = y0; y < y1; ++y) {
            lc.py = int(y);
            for (int x0 = 0; x0 < W; x0 += kLanes) {
                lc.px0 = x0;
                lc.count = std::min(kLanes, W - x0);
                for (const auto& ld : prog.pixel_loads) {
                    const batch::HandleView& hv = views[ld.handle];
                    const size_t base = (size_t(y) * hv.width + x0) * hv.ch;
                    for (int c = 0; c < ld.ch; ++c) {
                        double* dst = batch::slot(regs, ld.reg, c);
                        for (int l = 0; l < lc.count; ++l)
                            dst[l] = hv.load(base + size_t(l) * hv.ch + c);
                    }
                }
                for (const TapeInstr& in : prog.instrs) batch::eval_batch(in, regs, views, lc);
                for (const auto& [reg, slot] : prog.outputs) {
                    OutView& ov = out_views[slot];
                    const size_t base = (size_t(y) * W + x0) * ov.ch;
                    for (int c = 0; c < ov.ch; ++c) {
                        const double* sv = batch::slot(regs, reg, c);
                        if (ov.f64) {
                            for (int l = 0; l < lc.count; ++l)
                                ov.f64[base + size_t(l) * ov.ch + c] = sv[l];
                        } else {
                            for (int l = 0; l < lc.count; ++l)
                                ov.i32[base + size_t(l) * ov.ch + c] =
                                    int32_t(std::llround(sv[l]));
                        }
                    }
                }
            }
        }
    });
}

// Top-left fill rule helpers; coordinates are pixel units, y down.
struct ScreenVert {
    double x, y, z, w;
};

inline double edge_fn(const ScreenVert& a, const ScreenVert& b, double px, double py) {
    return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

inline bool top_left(const ScreenVert& a, const ScreenVert& b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    return (dy == 0.0 && dx < 0.0) || dy < 0.0;
}

inline void run_raster_substage(const SubStage& s, ExecutionContext& ctx) {
    const FunctionNode* r = s.raster;
    const VariableNode* verts_var = r->inputs[0];
    const VariableNode* attr_var = r->inputs[1];
    const ImageBuffer* verts = ctx.find(verts_var);
    const ImageBuffer* attr = ctx.find(attr_var);
    if (!verts || !attr) throw std::runtime_error("executor: unbound raster vertex buffers");

    const VariableNode* out_var = ctx.canon(r->output);
    ImageBuffer& out = ensure_out(ctx, out_var);
    const bool int_attr = is_integer(out.vtype());
    const double sentinel = int_attr ? -1.0 : 0.0;
    const int ch = out.channels();
    for (size_t i = 0; i < out.value_count(); ++i) out.put(i, sentinel);

    const int W = s.domain.width, H = s.domain.height;
    std::vector<double> depth_buf(size_t(W) * H, std::numeric_limits<double>::infinity());

    using batch::kLanes;
    const bool has_slice = s.slice_attr_reg >= 0;
    std::vector<const ImageBuffer*> slice_handles;
    std::vector<batch::HandleView> slice_views;
    std::vector<double> slice_regs;
    int discard_reg = -1;
    if (has_slice) {
        slice_handles = bind_handles(s.slice, ctx, "raster slice");
        for (const ImageBuffer* b : slice_handles) slice_views.push_back(batch::view_of(*b));
        slice_regs.assign(size_t(s.slice.reg_count) * 16 * kLanes, 0.0);
        for (const auto& ld : s.slice.uniform_loads)
            for (int c = 0; c < ld.ch; ++c) {
                const double v = slice_handles[ld.handle]->at(c);
                double* dst = batch::slot(slice_regs.data(), ld.reg, c);
                for (int l = 0; l < kLanes; ++l) dst[l] = v;
            }
        discard_reg = s.slice_discard_reg;  // stencil register, 0 where peeled
    }

    const int64_t tri_count = verts->pixel_count() / 3;
    const size_t plane = size_t(W) * H;
    const int nworkers = ctx.pool.width();

    // triangles are partitioned across workers into private planes and merged
    // by (depth, triangle index), reproducing the sequential strict-less /
    // earlier-triangle-wins rule exactly
    struct WorkerPlane {
        std::vector<double> depth;
        std::vector<int64_t> tri;
        std::vector<double> attr;
    };
    std::vector<WorkerPlane> planes(nworkers);
    std::vector<std::vector<double>> worker_regs(nworkers);
    for (auto& wr : worker_regs) wr = slice_regs;

    ctx.pool.parallel_for(tri_count, [&](int64_t t0, int64_t t1, int worker) {
        WorkerPlane& wp = planes[worker];
        wp.depth.assign(plane, std::numeric_limits<double>::infinity());
        wp.tri.assign(plane, std::numeric_limits<int64_t>::max());
        wp.attr.assign(plane * ch, 0.0);
        double* slice_reg_file = worker_regs[worker].empty() ? nullptr : worker_regs[worker].data();
    for (int64_t t = t0; t < t1; ++t) {
        ScreenVert sv[3];
        bool cull = false;
        for (int k = 0; k < 3; ++k) {
            const size_t base = size_t(3 * t + k) * 4;
            const double w = verts->at(base + 3);
            if (w <= 1e-6) {
                cull = true;
                break;
            }
            sv[k].x = (verts->at(base + 0) / w * 0.5 + 0.5) * W;
            sv[k].y = (verts->at(base + 1) / w * 0.5 + 0.5) * H;
            sv[k].z = verts->at(base + 2) / w;
            sv[k].w = w;
        }
        if (cull) continue;

        int order[3] = {0, 1, 2};
        double area2 = edge_fn(sv[0], sv[1], sv[2].x, sv[2].y);
        if (area2 == 0.0) continue;
        if (area2 < 0.0) {
            std::swap(order[1], order[2]);
            area2 = -area2;
        }
        const ScreenVert &a = sv[order[0]], &b = sv[order[1]], &c = sv[order[2]];
        const bool tl0 = top_left(a, b), tl1 = top_left(b, c), tl2 = top_left(c, a);

        const int x0 = std::max(0, int(std::floor(std::min({a.x, b.x, c.x}) - 0.5)));
        const int x1 = std::min(W - 1, int(std::ceil(std::max({a.x, b.x, c.x}))));
        const int y0 = std::max(0, int(std::floor(std::min({a.y, b.y, c.y}) - 0.5)));
        const int y1 = std::min(H - 1, int(std::ceil(std::max({a.y, b.y, c.y}))));

        double tri_attr_flat[16];
        if (int_attr) {
            const size_t base = size_t(3 * t) * ch;  // first vertex of the triangle
            for (int cc = 0; cc < ch; ++cc) tri_attr_flat[cc] = attr->at(base + cc);
        }

        for (int py = y0; py <= y1; ++py) {
            const double cy = py + 0.5;
            for (int px_base = x0; px_base <= x1; px_base += kLanes) {
                const int count = std::min(kLanes, x1 - px_base + 1);
                bool covered[batch::kLanes];
                double frag_attr[16][batch::kLanes];
                double lane_depth[batch::kLanes];
                int n_covered = 0;
                for (int l = 0; l < count; ++l) {
                    const double cx = px_base + l + 0.5;
                    const double e0 = edge_fn(a, b, cx, cy);
                    const double e1 = edge_fn(b, c, cx, cy);
                    const double e2 = edge_fn(c, a, cx, cy);
                    const bool in0 = e0 > 0.0 || (e0 == 0.0 && tl0);
                    const bool in1 = e1 > 0.0 || (e1 == 0.0 && tl1);
                    const bool in2 = e2 > 0.0 || (e2 == 0.0 && tl2);
                    covered[l] = in0 && in1 && in2;
                    if (!covered[l]) continue;
                    ++n_covered;

                    double wts[3];
                    wts[order[0]] = e1 / area2;
                    wts[order[1]] = e2 / area2;
                    wts[order[2]] = e0 / area2;
                    if (int_attr) {
                        for (int cc = 0; cc < ch; ++cc) frag_attr[cc][l] = tri_attr_flat[cc];
                    } else {
                        double pc[3], denom = 0.0;
                        for (int k = 0; k < 3; ++k) {
                            pc[k] = wts[k] / sv[k].w;
                            denom += pc[k];
                        }
                        for (int cc = 0; cc < ch; ++cc) {
                            double v = 0.0;
                            for (int k = 0; k < 3; ++k)
                                v += pc[k] * attr->at(size_t(3 * t + k) * ch + cc);
                            frag_attr[cc][l] = v / denom;
                        }
                    }
                    if (!has_slice) {
                        const double z = wts[0] * sv[0].z + wts[1] * sv[1].z + wts[2] * sv[2].z;
                        lane_depth[l] = z * 0.5 + 0.5;
                    }
                }
                if (!n_covered) continue;

                if (has_slice) {
                    batch::LaneCtx lc;
                    lc.px0 = px_base;
                    lc.py = py;
                    lc.count = count;
                    lc.domain = s.domain;
                    double* regs = slice_reg_file;
                    for (const auto& ld : s.slice.pixel_loads) {
                        const batch::HandleView& hv = slice_views[ld.handle];
                        const size_t base = (size_t(py) * hv.width + px_base) * hv.ch;
                        for (int cc = 0; cc < ld.ch; ++cc) {
                            double* dst = batch::slot(regs, ld.reg, cc);
                            for (int l = 0; l < count; ++l)
                                dst[l] = hv.load(base + size_t(l) * hv.ch + cc);
                        }
                    }
                    int first_covered = 0;
                    while (!covered[first_covered]) ++first_covered;
                    for (int cc = 0; cc < ch; ++cc) {
                        double* dst = batch::slot(regs, s.slice_attr_reg, cc);
                        for (int l = 0; l < count; ++l)
                            dst[l] = covered[l] ? frag_attr[cc][l] : frag_attr[cc][first_covered];
                    }
                    for (const TapeInstr& in : s.slice.instrs)
                        batch::eval_batch(in, regs, slice_views, lc);
                    const double* depth_lane = batch::slot(regs, s.slice_depth_reg, 0);
                    const double* discard_lane =
                        discard_reg >= 0 ? batch::slot(regs, discard_reg, 0) : nullptr;
                    for (int l = 0; l < count; ++l) {
                        if (!covered[l]) continue;
                        if (discard_lane && discard_lane[l] == 0.0) {
                            covered[l] = false;  // peeled fragment
                            continue;
                        }
                        lane_depth[l] = depth_lane[l];
                    }
                }

                for (int l = 0; l < count; ++l) {
                    if (!covered[l]) continue;
                    const size_t pix = size_t(py) * W + px_base + l;
                    if (lane_depth[l] < wp.depth[pix]) {
                        wp.depth[pix] = lane_depth[l];
                        wp.tri[pix] = t;
                        for (int cc = 0; cc < ch; ++cc)
                            wp.attr[pix * ch + cc] = frag_attr[cc][l];
                    }
                }
            }
        }
    }
    });

    for (size_t pix = 0; pix < plane; ++pix) {
        int best = -1;
        for (int w = 0; w < nworkers; ++w) {
            const WorkerPlane& wp = planes[w];
            if (wp.tri.empty() || wp.tri[pix] == std::numeric_limits<int64_t>::max()) continue;
            if (best < 0 || wp.depth[pix] < planes[best].depth[pix] ||
                (wp.depth[pix] == planes[best].depth[pix] && wp.tri[pix] < planes[best].tri[pix]))
                best = w;
        }
        if (best < 0) continue;
        depth_buf[pix] = planes[best].depth[pix];
        for (int cc = 0; cc < ch; ++cc)
            out.put(pix * ch + cc, planes[best].attr[pix * ch + cc]);
    }
}

inline void run_comp_substage(const SubStage& s, ExecutionContext& ctx) {
    const FunctionNode* f = s.comp;
    std::vector<const ImageBuffer*> ins;
    for (const VariableNode* x : f->inputs) {
        const ImageBuffer* b = ctx.find(x);
        if (!b) throw std::runtime_error("executor: unbound input for compute substage");
        ins.push_back(b);
    }
    const VariableNode* out_var = ctx.canon(f->output);

    switch (f->op) {
        case OpKind::TextureGrad: {
            const ImageBuffer& uv = *ins[0];
            const ImageBuffer& gy = *ins[1];
            InverseUvTexture inv = compute_inverse_uv(uv, f->payload.out_size,
                                                      ctx.rng_frame_counter, f->payload.jitter);
            ctx.buffers[out_var] = gather_texture_gradient(inv, gy, uv);
            break;
        }
        case OpKind::IndexScatterAdd: {
            const ImageBuffer& gy = *ins[0];
            const ImageBuffer& idx = *ins[1];
            ImageBuffer& out = ensure_out(ctx, out_var);
            for (size_t i = 0; i < out.value_count(); ++i) out.put(i, 0.0);
            const int ch = out.channels();
            const int ich = idx.channels();
            const int comp = f->payload.component;
            for (int64_t p = 0; p < idx.pixel_count(); ++p) {
                const int64_t target = idx.get_i(int(p % idx.width()), int(p / idx.width()), comp);
                if (target < 0 || target >= out.pixel_count()) continue;
                for (int c = 0; c < ch; ++c) {
                    const size_t o = size_t(target) * ch + c;
                    out.put(o, out.at(o) + gy.at(size_t(p) * ch + c));
                }
            }
            (void)ich;
            break;
        }
        case OpKind::VertexNormals: {
            const ImageBuffer& pos = *ins[0];
            const ImageBuffer& faces = *ins[1];
            ImageBuffer& out = ensure_out(ctx, out_var);
            for (size_t i = 0; i < out.value_count(); ++i) out.put(i, 0.0);
            for (int64_t fidx = 0; fidx < faces.pixel_count(); ++fidx) {
                int64_t vi[3];
                for (int k = 0; k < 3; ++k) vi[k] = faces.at(size_t(fidx) * 3 + k);
                if (vi[0] < 0 || vi[1] < 0 || vi[2] < 0) continue;
                double p0[3], p1[3], p2[3];
                for (int c = 0; c < 3; ++c) {
                    p0[c] = pos.at(size_t(vi[0]) * 4 + c);
                    p1[c] = pos.at(size_t(vi[1]) * 4 + c);
                    p2[c] = pos.at(size_t(vi[2]) * 4 + c);
                }
                const double u[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
                const double v[3] = {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
                const double n[3] = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                                     u[0] * v[1] - u[1] * v[0]};
                for (int k = 0; k < 3; ++k)
                    for (int c = 0; c < 3; ++c) {
                        const size_t o = size_t(vi[k]) * 3 + c;
                        out.put(o, out.at(o) + n[c]);
                    }
            }
            break;
        }
        case OpKind::VertexNormalsBwd: {
            const ImageBuffer& pos = *ins[0];
            const ImageBuffer& faces = *ins[1];
            const ImageBuffer& gnor = *ins[2];
            ImageBuffer& out = ensure_out(ctx, out_var);
            for (size_t i = 0; i < out.value_count(); ++i) out.put(i, 0.0);
            for (int64_t fidx = 0; fidx < faces.pixel_count(); ++fidx) {
                int64_t vi[3];
                for (int k = 0; k < 3; ++k) vi[k] = faces.at(size_t(fidx) * 3 + k);
                if (vi[0] < 0 || vi[1] < 0 || vi[2] < 0) continue;
                double p0[3], p1[3], p2[3], G[3];
                for (int c = 0; c < 3; ++c) {
                    p0[c] = pos.at(size_t(vi[0]) * 4 + c);
                    p1[c] = pos.at(size_t(vi[1]) * 4 + c);
                    p2[c] = pos.at(size_t(vi[2]) * 4 + c);
                    G[c] = gnor.at(size_t(vi[0]) * 3 + c) + gnor.at(size_t(vi[1]) * 3 + c) +
                           gnor.at(size_t(vi[2]) * 3 + c);
                }
                const double u[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
                const double v[3] = {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
                // n = u x v: dL/du = v x G, dL/dv = G x u
                const double du[3] = {v[1] * G[2] - v[2] * G[1], v[2] * G[0] - v[0] * G[2],
                                      v[0] * G[1] - v[1] * G[0]};
                const double dv[3] = {G[1] * u[2] - G[2] * u[1], G[2] * u[0] - G[0] * u[2],
                                      G[0] * u[1] - G[1] * u[0]};
                for (int c = 0; c < 3; ++c) {
                    const size_t o1 = size_t(vi[1]) * 4 + c, o2 = size_t(vi[2]) * 4 + c,
                                 o0 = size_t(vi[0]) * 4 + c;
                    out.put(o1, out.at(o1) + du[c]);
                    out.put(o2, out.at(o2) + dv[c]);
                    out.put(o0, out.at(o0) - du[c] - dv[c]);
                }
            }
            break;
        }
        default:
            throw std::logic_error("executor: unknown compute op");
    }
}

}  // namespace exec_detail

// Runs each stage's substages in order. Clean substages whose outputs are
// cached are skipped when the reactive cache is enabled.
inline void execute_step(const CompiledPlan& plan, ExecutionContext& ctx) {
    using namespace exec_detail;
    StepStats stats;

    for (const Stage& stage : plan.stages) {
        for (int si : stage.substages) {
            const SubStage& s = plan.substages[si];

            bool dirty = false;
            for (const VariableNode* v : substage_inputs(s))
                if (v->dirty) {
                    dirty = true;
                    break;
                }
            bool outs_cached = true;
            for (const VariableNode* v : s.out_vars)
                if (!ctx.find(v)) {
                    outs_cached = false;
                    break;
                }
            if (ctx.cache_enabled && !dirty && outs_cached && !frame_dependent(s)) {
                ++stats.skipped_kernels;
                continue;
            }

            if (s.comp) {
                run_comp_substage(s, ctx);
                ++stats.executed_comp;
            } else {
                if (s.raster) {
                    run_raster_substage(s, ctx);
                    ++stats.executed_raster;
                }
                run_fragment_program(s, ctx);
            }
            ++stats.executed_kernels;

            for (const VariableNode* v : s.out_vars) {
                const_cast<VariableNode*>(v)->dirty = true;
                ImageBuffer& buf = ctx.buffers.at(v);
                if (ctx.f32_mode) round_to_f32(buf);
                if (is_float(buf.vtype()) && !buf.all_finite())
                    throw std::runtime_error("executor: non-finite value produced (substage " +
                                             std::to_string(si) + ")");
            }
        }
    }
    ctx.last_stats = stats;
}

}  // namespace dressi
