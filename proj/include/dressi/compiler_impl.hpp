#pragma once

// Implementation half of compiler.hpp (packing output, stage packing, kernel
// text and program finalization). Kept separate to keep the interface legible.

namespace dressi {

inline void Compiler::emit_substages(std::vector<compiler_detail::PackState>& states) {
    for (auto& st : states) {
        SubStage s;
        s.vtx_vars = st.vtx;
        s.inp_vars = st.inp;
        s.tex_vars = st.tex;
        s.slt_vars = st.slt;
        s.uif_vars = st.uif;
        s.out_vars = st.out;
        s.gen_vars = st.gen;
        s.funcs = st.funcs;
        auto dom = compiler_detail::gen_domain(st);
        if (!dom) throw std::logic_error("emit_substages: inconsistent generated sizes");
        s.domain = *dom;
        if (!s.funcs.empty() && s.funcs.front()->shader_kind == ShaderKind::RASTER)
            s.raster = s.funcs.front();
        if (!s.funcs.empty() && s.funcs.front()->shader_kind == ShaderKind::COMP)
            s.comp = s.funcs.front();
        plan_.substages.push_back(std::move(s));
    }
}

inline void Compiler::pack_stages() {
    std::vector<int> all(plan_.substages.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
    plan_.stages = pack_substages_into_stages(plan_.substages, all);
}

// Greedy stage packing over a subset of substages (the full set on initial
// and full rebuilds, the dirty subset on fast rebuilds). Stage constraints:
// members share one output size, compute substages stay alone, dependency
// order is preserved.
inline std::vector<Stage> pack_substages_into_stages(const std::vector<SubStage>& substages,
                                                     const std::vector<int>& keep) {
    using namespace compiler_detail;

    std::unordered_map<const VariableNode*, int> producer;
    for (int i : keep)
        for (const VariableNode* v : substages[i].gen_vars) producer[v] = i;

    auto substage_inputs = [&](int i) {
        std::vector<const VariableNode*> ins;
        const SubStage& s = substages[i];
        for (const auto* cls : {&s.vtx_vars, &s.inp_vars, &s.tex_vars, &s.slt_vars, &s.uif_vars})
            for (const VariableNode* v : *cls) ins.push_back(v);
        return ins;
    };

    std::unordered_map<int, int> consumers;  // pending consumers of each substage's outputs
    for (int i : keep) consumers[i] = 0;
    for (int i : keep)
        for (const VariableNode* v : substage_inputs(i)) {
            auto it = producer.find(v);
            if (it != producer.end() && it->second != i) ++consumers[it->second];
        }

    std::set<int> remaining(keep.begin(), keep.end());

    struct ActiveStage {
        std::vector<int> members;  // execution order (prepend)
        std::set<const VariableNode*> touched;
        ImgSize domain{1, 1};
        bool has_comp = false;
        bool empty() const { return members.empty(); }
    };

    std::vector<ActiveStage> packed_rev;
    ActiveStage active;

    auto try_push = [&](int i, const ActiveStage& base) -> std::optional<ActiveStage> {
        const SubStage& s = substages[i];
        const bool comp = s.kind() == ShaderKind::COMP;
        if (!base.empty()) {
            if (comp || base.has_comp) return std::nullopt;
            if (!(base.domain == s.domain)) return std::nullopt;
        }
        ActiveStage next = base;
        next.members.insert(next.members.begin(), i);
        next.domain = s.domain;
        next.has_comp = comp;
        for (const VariableNode* v : substage_inputs(i)) next.touched.insert(v);
        for (const VariableNode* v : s.out_vars) next.touched.insert(v);
        return next;
    };

    auto edge_count = [&](int i) {
        int score = 0;
        const SubStage& s = substages[i];
        std::set<const VariableNode*> mine;
        for (const VariableNode* v : substage_inputs(i)) mine.insert(v);
        for (const VariableNode* v : s.out_vars) mine.insert(v);
        for (const VariableNode* v : mine)
            if (active.touched.count(v)) ++score;
        return score;
    };

    while (!remaining.empty()) {
        std::vector<int> candidates;
        for (int i : remaining)
            if (consumers[i] == 0) candidates.push_back(i);
        if (candidates.empty()) throw std::logic_error("pack_stages: no sink candidates");

        std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
            const int ea = edge_count(a), eb = edge_count(b);
            if (ea != eb) return ea > eb;
            return a > b;
        });

        bool found = false;
        for (int i : candidates) {
            auto trial = try_push(i, active);
            if (trial) {
                active = std::move(*trial);
                remaining.erase(i);
                for (const VariableNode* v : substage_inputs(i)) {
                    auto it = producer.find(v);
                    if (it != producer.end() && it->second != i) --consumers[it->second];
                }
                found = true;
                break;
            }
        }
        if (!found) {
            packed_rev.push_back(std::move(active));
            active = ActiveStage{};
        }
    }
    if (!active.empty()) packed_rev.push_back(std::move(active));

    std::vector<Stage> stages;
    for (auto it = packed_rev.rbegin(); it != packed_rev.rend(); ++it) {
        Stage st;
        st.substages = it->members;
        st.domain = it->domain;
        std::set<const VariableNode*> gen_inside;
        for (int i : st.substages)
            for (const VariableNode* v : substages[i].gen_vars) gen_inside.insert(v);
        std::set<const VariableNode*> seen;
        for (int i : st.substages) {
            for (const VariableNode* v : substage_inputs(i))
                if (!gen_inside.count(v) && seen.insert(v).second) st.inp_vars.push_back(v);
            for (const VariableNode* v : substages[i].out_vars)
                if (seen.insert(v).second) st.out_vars.push_back(v);
            if (substages[i].comp) st.kind = ShaderKind::COMP;
            if (substages[i].raster && st.kind == ShaderKind::FRAG) st.kind = ShaderKind::RASTER;
        }
        stages.push_back(std::move(st));
    }
    return stages;
}

inline void Compiler::finalize() {
    auto resolve = [this](const VariableNode* v) { return canon(v); };

    for (SubStage& s : plan_.substages) {
        // static IR checks: per-pixel kernels read only substage inputs at
        // their own pixel, gathers never target in-substage results
        std::set<const VariableNode*> gen(s.gen_vars.begin(), s.gen_vars.end());
        for (const FunctionNode* f : s.funcs) {
            for (size_t i = 0; i < f->inputs.size(); ++i) {
                const VariableNode* x = canon(f->inputs[i]);
                if (f->arg_access[i] == ArgAccess::SamePixel && !x->size.is_uniform() &&
                    !(x->size == s.domain) && f->shader_kind != ShaderKind::COMP)
                    throw std::logic_error("finalize: same-pixel input size mismatch");
                if ((f->arg_access[i] == ArgAccess::RawRead ||
                     f->arg_access[i] == ArgAccess::Sampled) &&
                    gen.count(x))
                    throw std::logic_error("finalize: gather reads in-substage result");
            }
        }
        // execution order sanity inside the substage
        std::set<const VariableNode*> produced;
        for (const FunctionNode* f : s.funcs) {
            for (size_t i = 0; i < f->inputs.size(); ++i) {
                const VariableNode* x = canon(f->inputs[i]);
                if (f->arg_access[i] == ArgAccess::SamePixel && gen.count(x) && !produced.count(x))
                    throw std::logic_error("finalize: substage functions out of order");
            }
            produced.insert(canon(f->output));
        }

        render_kernel_text(s);

        if (s.comp) continue;

        // fused fragment body (raster head excluded; it runs as phase A)
        ProgramBuilder body(resolve, s.domain);
        for (const FunctionNode* f : s.funcs) {
            if (f->shader_kind == ShaderKind::RASTER) continue;
            body.add_function(f);
        }
        std::set<const VariableNode*> body_gen;
        for (const FunctionNode* f : s.funcs)
            if (f->shader_kind != ShaderKind::RASTER) body_gen.insert(canon(f->output));
        for (const VariableNode* v : s.out_vars)
            if (body_gen.count(v)) body.add_output(v);
        s.body = body.finish();

        if (s.raster && s.raster->raster_depth) build_slice(s);
    }
}

inline void Compiler::build_slice(SubStage& s) {
    const FunctionNode* r = s.raster;
    const VariableNode* attr_out = canon(r->output);
    const VariableNode* depth_var = canon(r->raster_depth);
    const VariableNode* discard_var = r->raster_discard ? canon(r->raster_discard) : nullptr;

    // slice functions: descendants of the raster output feeding depth/discard
    std::unordered_map<const VariableNode*, bool> memo;
    std::function<bool(const VariableNode*)> reaches = [&](const VariableNode* v) -> bool {
        if (v == attr_out) return true;
        auto it = memo.find(v);
        if (it != memo.end()) return it->second;
        memo[v] = false;
        bool hit = false;
        if (v->creator)
            for (const VariableNode* in : v->creator->inputs)
                if (reaches(canon(in))) {
                    hit = true;
                    break;
                }
        memo[v] = hit;
        return hit;
    };

    std::vector<const FunctionNode*> slice;
    std::set<const FunctionNode*> seen;
    std::function<void(const VariableNode*)> gather = [&](const VariableNode* v) {
        if (v == attr_out || !v->creator || !reaches(v)) return;
        const FunctionNode* f = v->creator;
        if (seen.count(f)) return;
        seen.insert(f);
        for (const VariableNode* in : f->inputs) gather(canon(in));
        slice.push_back(f);  // postorder = topological
    };
    gather(depth_var);
    if (discard_var) gather(discard_var);

    auto resolve = [this](const VariableNode* v) { return canon(v); };
    ProgramBuilder pb(resolve, s.domain);
    s.slice_attr_reg = pb.inject(attr_out);
    for (const FunctionNode* f : slice) pb.add_function(f);
    s.slice_depth_reg = pb.reg_of(depth_var);
    if (discard_var) s.slice_discard_reg = pb.reg_of(discard_var);
    s.slice = pb.finish();
}

inline void Compiler::render_kernel_text(SubStage& s) {
    s.kernel_text =
        dressi::render_kernel_text(s, [this](const VariableNode* v) { return canon(v); });
}

inline std::string render_kernel_text(
    const SubStage& s,
    const std::function<const VariableNode*(const VariableNode*)>& resolve_in) {
    std::function<const VariableNode*(const VariableNode*)> canon = resolve_in;
    if (!canon) canon = [](const VariableNode* v) { return v; };
    std::unordered_map<const VariableNode*, std::string> names;
    int next = 0;
    auto assign = [&](const std::vector<const VariableNode*>& vars) {
        std::vector<const VariableNode*> sorted = vars;
        std::sort(sorted.begin(), sorted.end(),
                  [](const VariableNode* a, const VariableNode* b) { return a->id < b->id; });
        for (const VariableNode* v : sorted)
            if (!names.count(v)) names[v] = "v" + std::to_string(next++);
    };
    assign(s.vtx_vars);
    assign(s.inp_vars);
    assign(s.tex_vars);
    assign(s.slt_vars);
    assign(s.uif_vars);
    for (const FunctionNode* f : s.funcs) {
        const VariableNode* y = canon(f->output);
        if (!names.count(y)) names[y] = "v" + std::to_string(next++);
    }

    const char* kind = s.comp ? "comp" : (s.raster ? "raster" : "frag");
    std::ostringstream text;
    text << "substage " << kind << " " << s.domain.str() << " {\n";
    auto declare = [&](const char* cls, const std::vector<const VariableNode*>& vars) {
        std::vector<const VariableNode*> sorted = vars;
        std::sort(sorted.begin(), sorted.end(),
                  [](const VariableNode* a, const VariableNode* b) { return a->id < b->id; });
        for (const VariableNode* v : sorted)
            text << "  " << cls << " " << vtype_name(v->vtype) << " " << names[v] << ";\n";
    };
    declare("vtx", s.vtx_vars);
    declare("inp", s.inp_vars);
    declare("tex", s.tex_vars);
    declare("slt", s.slt_vars);
    declare("uif", s.uif_vars);
    declare("out", s.out_vars);
    text << "  main {\n";
    for (const FunctionNode* f : s.funcs) {
        std::vector<std::string> in_names;
        for (const VariableNode* x : f->inputs) {
            const VariableNode* cx = canon(x);
            auto it = names.find(cx);
            in_names.push_back(it != names.end() ? it->second : "?");
        }
        text << "    " << render_snippet(f->snippet, in_names, names[canon(f->output)]) << "\n";
    }
    text << "  }\n}\n";
    return text.str();
}

}  // namespace dressi
