#pragma once

#include <deque>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_set>

#include "dressi/kernels.hpp"
#include "dressi/ops.hpp"

namespace dressi {

// Simulated device constraint set. Counts are per substage (one subpass).
struct HardwareProfile {
    std::string name = "unbounded";
    int64_t max_input_attachments = 1 << 20;
    int64_t max_texture_samplers = 1 << 20;
    int64_t max_sampled_images = 1 << 20;
    int64_t max_uniforms = 1 << 20;
    int64_t max_output_attachments = 1 << 20;
    int64_t max_total_bindings = -1;  // defaults to the sum of the limits above

    int64_t total_limit() const {
        if (max_total_bindings > 0) return max_total_bindings;
        return max_input_attachments + max_texture_samplers + max_sampled_images + max_uniforms +
               max_output_attachments;
    }

    void validate() const {
        if (max_input_attachments < 1 || max_texture_samplers < 1 || max_sampled_images < 1 ||
            max_uniforms < 1 || max_output_attachments < 1)
            throw std::invalid_argument("HardwareProfile: all limits must be >= 1");
    }

    static HardwareProfile unbounded() { return {}; }
    static HardwareProfile desktop() {
        return {"desktop", 1048576, 32, 32, 4096, 8, -1};
    }
    static HardwareProfile laptop() { return {"laptop", 8, 16, 16, 1024, 8, -1}; }
    static HardwareProfile mobile() { return {"mobile", 4, 8, 8, 512, 4, -1}; }
    static HardwareProfile by_name(const std::string& n) {
        if (n == "unbounded") return unbounded();
        if (n == "desktop") return desktop();
        if (n == "laptop") return laptop();
        if (n == "mobile") return mobile();
        throw std::invalid_argument("unknown hardware profile: " + n);
    }
};

// A fused group of functions executable as one fragment kernel (or one
// rasterization subpass / one compute dispatch).
struct SubStage {
    std::vector<const VariableNode*> vtx_vars, inp_vars, tex_vars, slt_vars, uif_vars, out_vars,
        gen_vars;
    std::vector<const FunctionNode*> funcs;  // execution order
    std::string kernel_text;
    ImgSize domain{1, 1};

    // runtime artifacts
    KernelProgram body;
    KernelProgram slice;  // raster fragment depth/discard program
    int slice_attr_reg = -1;
    int slice_depth_reg = -1;
    int slice_discard_reg = -1;
    const FunctionNode* raster = nullptr;
    const FunctionNode* comp = nullptr;

    ShaderKind kind() const {
        if (raster) return ShaderKind::RASTER;
        if (comp) return ShaderKind::COMP;
        return ShaderKind::FRAG;
    }
};

// A render-pass group: ordered substages sharing one output image size.
struct Stage {
    std::vector<int> substages;  // indices into CompiledPlan::substages
    std::vector<const VariableNode*> inp_vars, out_vars;
    ImgSize domain{1, 1};
    ShaderKind kind = ShaderKind::FRAG;
};

struct CompiledPlan {
    HardwareProfile profile;
    std::vector<SubStage> substages;  // execution order
    std::vector<Stage> stages;        // execution order
    std::unordered_map<const VariableNode*, const VariableNode*> alias;
    std::vector<std::pair<const VariableNode*, ImageBuffer>> folded;
    std::vector<const VariableNode*> outputs;

    const VariableNode* canon(const VariableNode* v) const {
        auto it = alias.find(v);
        while (it != alias.end()) {
            v = it->second;
            it = alias.find(v);
        }
        return v;
    }
    size_t substage_count() const { return substages.size(); }
    size_t stage_count() const { return stages.size(); }
};

struct CompileOptions {
    HardwareProfile profile;
    bool naive = false;  // one function per substage, constraints ignored
    bool fold_constants = true;
    bool deduplicate = true;
    std::function<bool(const VariableNode*)> is_clean_cached;  // reactive-cache removal
};

// ---- rebuild policy (two-phase reactive cache) ----

struct RebuildPolicy {
    int fast_rebuild_count = 2;
    int full_rebuild_count = 5;
    int graph_static_counter = 0;

    void validate() const {
        if (fast_rebuild_count >= full_rebuild_count)
            throw std::invalid_argument("RebuildPolicy: fast_rebuild_count must be < full_rebuild_count");
    }
};

enum class RebuildAction { None, FastRebuild, FullRebuild, InitialBuild };

inline const char* rebuild_action_name(RebuildAction a) {
    switch (a) {
        case RebuildAction::None: return "none";
        case RebuildAction::FastRebuild: return "fast";
        case RebuildAction::FullRebuild: return "full";
        case RebuildAction::InitialBuild: return "initial";
    }
    return "?";
}

// Counter resets whenever any input's dirty status changed; fast-rebuild
// fires exactly when the counter reaches fast_rebuild_count, full-rebuild at
// full_rebuild_count.
inline RebuildAction plan_rebuild(RebuildPolicy& policy, bool dirty_inputs_changed,
                                  bool built_once = true) {
    policy.validate();
    if (!built_once) {
        policy.graph_static_counter = 0;
        return RebuildAction::InitialBuild;
    }
    if (dirty_inputs_changed) {
        policy.graph_static_counter = 0;
        return RebuildAction::None;
    }
    ++policy.graph_static_counter;
    if (policy.graph_static_counter == policy.fast_rebuild_count) return RebuildAction::FastRebuild;
    if (policy.graph_static_counter == policy.full_rebuild_count) return RebuildAction::FullRebuild;
    return RebuildAction::None;
}

// ---- snippet utilities ----

// Highest input marker index + 1; "{y}={x0}+{x1};" -> 2.
inline int snippet_arity(const std::string& snippet) {
    int arity = 0;
    for (size_t i = 0; i + 3 < snippet.size(); ++i) {
        if (snippet[i] == '{' && snippet[i + 1] == 'x') {
            size_t j = i + 2;
            int num = 0;
            bool any = false;
            while (j < snippet.size() && isdigit(snippet[j])) num = num * 10 + (snippet[j++] - '0'), any = true;
            if (any && j < snippet.size() && snippet[j] == '}') arity = std::max(arity, num + 1);
        }
    }
    return arity;
}

inline std::string render_snippet(const std::string& snippet,
                                  const std::vector<std::string>& input_names,
                                  const std::string& out_name) {
    std::string out;
    out.reserve(snippet.size() + 16);
    for (size_t i = 0; i < snippet.size();) {
        if (snippet[i] == '{') {
            size_t close = snippet.find('}', i);
            if (close != std::string::npos) {
                std::string marker = snippet.substr(i + 1, close - i - 1);
                if (marker == "y") {
                    out += out_name;
                    i = close + 1;
                    continue;
                }
                if (marker.size() > 1 && marker[0] == 'x') {
                    int idx = std::atoi(marker.c_str() + 1);
                    if (idx >= 0 && idx < int(input_names.size())) {
                        out += input_names[idx];
                        i = close + 1;
                        continue;
                    }
                }
            }
        }
        out += snippet[i++];
    }
    return out;
}

namespace compiler_detail {

using VSet = std::vector<const VariableNode*>;  // insertion-ordered, deduplicated

inline bool contains(const VSet& s, const VariableNode* v) {
    return std::find(s.begin(), s.end(), v) != s.end();
}
inline void insert(VSet& s, const VariableNode* v) {
    if (!contains(s, v)) s.push_back(v);
}
inline void erase(VSet& s, const VariableNode* v) {
    auto it = std::find(s.begin(), s.end(), v);
    if (it != s.end()) s.erase(it);
}

struct PackState {
    VSet vtx, inp, tex, slt, uif, out, gen;
    std::vector<const FunctionNode*> funcs;  // execution order, new funcs prepended
    bool empty() const { return funcs.empty(); }
};

// Output domain: the common non-1x1 size of generated variables.
inline std::optional<ImgSize> gen_domain(const PackState& s) {
    ImgSize d{1, 1};
    for (const VariableNode* v : s.gen) {
        if (v->size.is_uniform()) continue;
        if (d.is_uniform())
            d = v->size;
        else if (!(d == v->size))
            return std::nullopt;
    }
    return d;
}

}  // namespace compiler_detail

// Deterministic listing for one substage: declarations per I/O class, then
// one assignment per function in execution order, markers replaced by stable
// generated names (v0, v1, ...).
std::string render_kernel_text(
    const SubStage& s,
    const std::function<const VariableNode*(const VariableNode*)>& resolve = nullptr);

// Greedy stage packing over the `keep` subset of substages.
std::vector<Stage> pack_substages_into_stages(const std::vector<SubStage>& substages,
                                              const std::vector<int>& keep);

// All constraints a packed substage must satisfy under a profile: uniform
// output size, uniform shader kind except a RASTER head with a FRAG body,
// vertex/texture/raw-read inputs produced elsewhere, and the I/O count limits.
inline bool substage_limits_satisfied(const compiler_detail::PackState& s,
                                      const HardwareProfile& profile) {
    using namespace compiler_detail;
    if (s.funcs.empty()) return true;

    int comp = 0, raster = 0;
    for (const FunctionNode* f : s.funcs) {
        if (f->shader_kind == ShaderKind::COMP) ++comp;
        if (f->shader_kind == ShaderKind::RASTER) ++raster;
    }
    if (comp > 0 && s.funcs.size() != 1) return false;
    if (raster > 1) return false;
    if (raster == 1 && s.funcs.front()->shader_kind != ShaderKind::RASTER) return false;

    ImgSize out_size{1, 1};
    bool first = true;
    for (const VariableNode* v : s.out) {
        if (first)
            out_size = v->size, first = false;
        else if (!(v->size == out_size))
            return false;
    }
    auto dom = gen_domain(s);
    if (!dom.has_value()) return false;
    // reductions loop over their whole input; they only fuse with other
    // uniform-sized work, never into a full-resolution kernel
    for (const FunctionNode* f : s.funcs)
        if ((f->op == OpKind::SumPixels || f->op == OpKind::Mean) && !dom->is_uniform())
            return false;

    for (const VariableNode* v : s.vtx)
        if (contains(s.gen, v)) return false;
    for (const VariableNode* v : s.tex)
        if (contains(s.gen, v)) return false;
    for (const VariableNode* v : s.slt)
        if (contains(s.gen, v)) return false;

    if (int64_t(s.inp.size()) > profile.max_input_attachments) return false;
    if (int64_t(s.tex.size()) > profile.max_texture_samplers) return false;
    if (int64_t(s.slt.size()) > profile.max_sampled_images) return false;
    if (int64_t(s.uif.size()) > profile.max_uniforms) return false;
    if (int64_t(s.out.size()) > profile.max_output_attachments) return false;
    const int64_t total = int64_t(s.inp.size() + s.tex.size() + s.slt.size() + s.uif.size() +
                                  s.out.size() + s.vtx.size());
    if (total > profile.total_limit()) return false;
    return true;
}

inline bool substage_limits_satisfied(const SubStage& s, const HardwareProfile& profile) {
    compiler_detail::PackState ps;
    ps.vtx = s.vtx_vars;
    ps.inp = s.inp_vars;
    ps.tex = s.tex_vars;
    ps.slt = s.slt_vars;
    ps.uif = s.uif_vars;
    ps.out = s.out_vars;
    ps.gen = s.gen_vars;
    ps.funcs = s.funcs;
    return substage_limits_satisfied(ps, profile);
}

class Compiler {
public:
    explicit Compiler(CompileOptions opts) : opts_(std::move(opts)) {
        opts_.profile.validate();
    }

    CompiledPlan compile(const Variables& outputs) {
        plan_ = CompiledPlan{};
        plan_.profile = opts_.profile;
        for (const Variable& v : outputs) {
            if (!v) throw std::invalid_argument("compile: null output");
            plan_.outputs.push_back(v.node);
        }

        auto work = collect(plan_.outputs);
        if (opts_.fold_constants) fold(work);
        if (opts_.deduplicate) deduplicate(work);
        // canonical outputs after dedup
        for (auto& o : plan_.outputs) o = plan_.canon(o);
        work = collect(plan_.outputs);

        pack_substages(work);
        pack_stages();
        finalize();
        return std::move(plan_);
    }

private:
    const VariableNode* canon(const VariableNode* v) const { return plan_.canon(v); }

    bool stop_at(const VariableNode* v) const {
        if (folded_.count(v)) return true;
        if (!v->creator) return true;
        if (opts_.is_clean_cached && opts_.is_clean_cached(v)) return true;
        return false;
    }

    // Needed functions, ascending id.
    std::vector<FunctionNode*> collect(const std::vector<const VariableNode*>& outs) {
        std::set<FunctionNode*> seen;
        std::vector<const VariableNode*> stack(outs.begin(), outs.end());
        while (!stack.empty()) {
            const VariableNode* v = canon(stack.back());
            stack.pop_back();
            if (stop_at(v)) continue;
            FunctionNode* f = v->creator;
            if (seen.count(f)) continue;
            seen.insert(f);
            for (const VariableNode* x : f->inputs) stack.push_back(x);
        }
        std::vector<FunctionNode*> work(seen.begin(), seen.end());
        std::sort(work.begin(), work.end(),
                  [](const FunctionNode* a, const FunctionNode* b) { return a->id < b->id; });
        return work;
    }

    bool const_valued(const VariableNode* v) const {
        if (folded_.count(v)) return true;
        return v->creator && v->creator->op == OpKind::FloatConst;
    }

    ImageBuffer const_value(const VariableNode* v) const {
        auto it = folded_.find(v);
        if (it != folded_.end()) return it->second;
        ImageBuffer b(VType::F32, {1, 1});
        b.put(0, v->creator->payload.scalar);
        return b;
    }

    // Precomputes 1x1 constant subgraphs with the executor's own kernels.
    void fold(std::vector<FunctionNode*>& work) {
        for (FunctionNode* f : work) {
            if (f->op == OpKind::FloatConst || f->shader_kind != ShaderKind::FRAG) continue;
            if (!f->output->size.is_uniform()) continue;
            bool all_const = !f->inputs.empty();
            for (const VariableNode* x : f->inputs)
                if (!const_valued(x)) {
                    all_const = false;
                    break;
                }
            if (!all_const) continue;
            folded_[f->output] = eval_const(f);
        }
        for (auto& [v, buf] : folded_) plan_.folded.push_back({v, buf});
        std::sort(plan_.folded.begin(), plan_.folded.end(),
                  [](const auto& a, const auto& b) { return a.first->id < b.first->id; });
    }

    ImageBuffer eval_const(const FunctionNode* f) {
        ProgramBuilder pb([this](const VariableNode* v) { return canon(v); }, f->output->size);
        pb.add_function(f);
        pb.add_output(f->output);
        KernelProgram prog = pb.finish();

        std::vector<ImageBuffer> storage;
        storage.reserve(prog.handle_vars.size());
        std::vector<const ImageBuffer*> handles;
        for (const VariableNode* v : prog.handle_vars) {
            storage.push_back(const_value(v));
            handles.push_back(&storage.back());
        }
        // distinct vectors may reallocate; rebind after fill
        handles.clear();
        for (ImageBuffer& b : storage) handles.push_back(&b);

        std::vector<Reg> regs(prog.reg_count);
        EvalEnv env;
        env.handles = &handles;
        env.domain = prog.domain;
        kern::load_uniforms(prog, regs.data(), handles);
        kern::run_program(prog, regs.data(), handles, env);

        ImageBuffer out(f->output->vtype, f->output->size);
        const auto [reg, slot] = prog.outputs.at(0);
        for (int c = 0; c < out.channels(); ++c) out.put(c, regs[reg][c]);
        return out;
    }

    struct DedupKey {
        OpKind op;
        std::vector<uint32_t> input_ids;
        std::string payload;
        bool operator<(const DedupKey& o) const {
            return std::tie(op, input_ids, payload) < std::tie(o.op, o.input_ids, o.payload);
        }
    };

    std::string payload_key(const FunctionNode* f) const {
        std::ostringstream s;
        const OpPayload& p = f->payload;
        s << p.scalar << '|' << p.component << '|' << p.dx << ',' << p.dy << '|' << p.factor
          << '|' << p.out_size.width << 'x' << p.out_size.height << '|' << int(p.out_vtype)
          << '|' << p.radius << '|' << p.obtuse_threshold_deg << '|' << p.jitter << '|'
          << p.adjacency.get();
        if (f->raster_depth) s << "|d" << canon(f->raster_depth)->id;
        if (f->raster_discard) s << "|s" << canon(f->raster_discard)->id;
        return s.str();
    }

    void deduplicate(std::vector<FunctionNode*>& work) {
        std::map<DedupKey, const VariableNode*> canon_of;
        for (FunctionNode* f : work) {
            if (folded_.count(f->output)) continue;
            DedupKey key{f->op, {}, payload_key(f)};
            for (const VariableNode* x : f->inputs) key.input_ids.push_back(canon(x)->id);
            auto [it, inserted] = canon_of.insert({key, f->output});
            if (!inserted) plan_.alias[f->output] = it->second;
        }
    }

    // ---- substage packing ----

    struct WorkGraph {
        std::vector<FunctionNode*> funcs;
        std::unordered_map<const FunctionNode*, int> remaining_consumers;
        std::unordered_map<const VariableNode*, FunctionNode*> producer;
    };

    void pack_substages(std::vector<FunctionNode*>& work) {
        using namespace compiler_detail;

        std::unordered_map<const VariableNode*, int> consumers;
        std::unordered_map<const VariableNode*, FunctionNode*> producer;
        for (FunctionNode* f : work) producer[canon(f->output)] = f;
        for (FunctionNode* f : work)
            for (const VariableNode* x : f->inputs) consumers[canon(x)]++;

        std::set<FunctionNode*> remaining(work.begin(), work.end());
        std::set<const VariableNode*> used;
        for (const VariableNode* o : plan_.outputs) used.insert(o);

        std::vector<PackState> packed_rev;
        PackState active;

        auto push_front = [&](FunctionNode* f, const PackState& base) {
            PackState s = base;
            for (size_t i = 0; i < f->inputs.size(); ++i) {
                const VariableNode* x = canon(f->inputs[i]);
                switch (f->arg_access[i]) {
                    case ArgAccess::VertexBuffer: insert(s.vtx, x); break;
                    case ArgAccess::Sampled: insert(s.tex, x); break;
                    case ArgAccess::RawRead: insert(s.slt, x); break;
                    case ArgAccess::SamePixel:
                        if (x->size.is_uniform())
                            insert(s.uif, x);
                        else
                            insert(s.inp, x);
                        break;
                }
            }
            const VariableNode* y = canon(f->output);
            erase(s.inp, y);
            erase(s.uif, y);
            if (used.count(y)) insert(s.out, y);
            insert(s.gen, y);
            s.funcs.insert(s.funcs.begin(), f);
            return s;
        };

        auto edge_count = [&](const FunctionNode* f) {
            int n = 0;
            auto in_state = [&](const VariableNode* v) {
                return contains(active.gen, v) || contains(active.inp, v) ||
                       contains(active.uif, v) || contains(active.tex, v) ||
                       contains(active.slt, v) || contains(active.vtx, v) ||
                       contains(active.out, v);
            };
            std::set<const VariableNode*> counted;
            for (const VariableNode* x : f->inputs) {
                const VariableNode* cx = canon(x);
                if (counted.insert(cx).second && in_state(cx)) ++n;
            }
            const VariableNode* y = canon(f->output);
            if (counted.insert(y).second && in_state(y)) ++n;
            return n;
        };

        auto close_active = [&]() {
            if (active.empty()) return;
            for (const VSet* cls : {&active.vtx, &active.inp, &active.tex, &active.slt, &active.uif})
                for (const VariableNode* v : *cls) used.insert(v);
            packed_rev.push_back(std::move(active));
            active = PackState{};
        };

        if (opts_.naive) {
            // one substage per function, unbounded constraints
            auto order = topo_order(work, producer);
            std::vector<PackState> states;
            for (auto it = order.rbegin(); it != order.rend(); ++it) {
                PackState s = push_front(*it, PackState{});
                for (const VSet* cls : {&s.vtx, &s.inp, &s.tex, &s.slt, &s.uif})
                    for (const VariableNode* v : *cls) used.insert(v);
                // outputs recomputed against final used set below
                states.push_back(std::move(s));
            }
            for (PackState& s : states) {
                s.out.clear();
                const VariableNode* y = canon(s.funcs[0]->output);
                if (used.count(y)) insert(s.out, y);
            }
            std::reverse(states.begin(), states.end());
            emit_substages(states);
            return;
        }

        while (!remaining.empty()) {
            std::vector<FunctionNode*> candidates;
            for (FunctionNode* f : remaining)
                if (consumers[canon(f->output)] == 0) candidates.push_back(f);
            if (candidates.empty())
                throw std::logic_error("pack: no sink candidates (graph inconsistency)");

            std::vector<std::pair<int, FunctionNode*>> scored;
            for (FunctionNode* f : candidates) scored.push_back({edge_count(f), f});
            std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second->id > b.second->id;
            });

            bool found = false;
            for (auto& [score, f] : scored) {
                PackState trial = push_front(f, active);
                // packer policy: the rasterization drawcall stays alone in its
                // substage so static-geometry branches remain cacheable as a
                // unit (the validity check itself still admits a fused body)
                bool raster_mix = false;
                if (trial.funcs.size() > 1)
                    for (const FunctionNode* tf : trial.funcs)
                        if (tf->shader_kind == ShaderKind::RASTER) raster_mix = true;
                if (!raster_mix && substage_limits_satisfied(trial, opts_.profile)) {
                    active = std::move(trial);
                    remaining.erase(f);
                    for (const VariableNode* x : f->inputs) consumers[canon(x)]--;
                    found = true;
                    break;
                }
            }
            if (!found) {
                if (active.empty()) {
                    throw std::runtime_error(
                        "pack: function cannot satisfy the hardware profile alone (op " +
                        std::string(op_name(scored[0].second->op)) + ")");
                }
                close_active();
            }
        }
        close_active();

        std::reverse(packed_rev.begin(), packed_rev.end());
        emit_substages(packed_rev);
    }

    std::vector<FunctionNode*> topo_order(
        const std::vector<FunctionNode*>& work,
        const std::unordered_map<const VariableNode*, FunctionNode*>& producer) const {
        std::unordered_map<FunctionNode*, int> indegree;
        std::unordered_map<FunctionNode*, std::vector<FunctionNode*>> consumers;
        std::set<FunctionNode*> inwork(work.begin(), work.end());
        for (FunctionNode* f : work) {
            int deg = 0;
            for (const VariableNode* x : f->inputs) {
                auto it = producer.find(canon(x));
                if (it == producer.end()) continue;
                if (inwork.count(it->second)) {
                    ++deg;
                    consumers[it->second].push_back(f);
                }
            }
            indegree[f] = deg;
        }
        auto cmp = [](FunctionNode* a, FunctionNode* b) { return a->id > b->id; };
        std::priority_queue<FunctionNode*, std::vector<FunctionNode*>, decltype(cmp)> q(cmp);
        for (FunctionNode* f : work)
            if (indegree[f] == 0) q.push(f);
        std::vector<FunctionNode*> order;
        while (!q.empty()) {
            FunctionNode* f = q.top();
            q.pop();
            order.push_back(f);
            for (FunctionNode* g : consumers[f])
                if (--indegree[g] == 0) q.push(g);
        }
        if (order.size() != work.size()) throw std::logic_error("topo_order: cycle detected");
        return order;
    }

    void emit_substages(std::vector<compiler_detail::PackState>& states);
    void pack_stages();
    void finalize();
    void build_slice(SubStage& s);
    void render_kernel_text(SubStage& s);

    CompileOptions opts_;
    CompiledPlan plan_;
    std::unordered_map<const VariableNode*, ImageBuffer> folded_;
};

inline CompiledPlan compile(const Variables& outputs, const CompileOptions& opts = {}) {
    Compiler c(opts);
    return c.compile(outputs);
}

}  // namespace dressi

#include "dressi/compiler_impl.hpp"
