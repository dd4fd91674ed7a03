#pragma once

// Exhaustive minimum-substage search for tiny graphs, used to bound the
// greedy packer. Constraint semantics are re-derived here independently of
// the compiler's PackState bookkeeping.

#include <map>
#include <optional>

#include "dressi/compiler.hpp"

namespace packoracle {

using namespace dressi;

struct TinyGraph {
    std::vector<const FunctionNode*> funcs;        // topological order
    std::set<const VariableNode*> required_outputs;
};

// Validity of one substage candidate (a set of functions) on its own.
inline bool subset_valid(const TinyGraph& tg, uint32_t mask, uint32_t packed_later,
                         const HardwareProfile& profile) {
    std::set<const VariableNode*> gen;
    int comp = 0, raster = 0;
    for (size_t i = 0; i < tg.funcs.size(); ++i)
        if (mask & (1u << i)) {
            gen.insert(tg.funcs[i]->output);
            if (tg.funcs[i]->shader_kind == ShaderKind::COMP) ++comp;
            if (tg.funcs[i]->shader_kind == ShaderKind::RASTER) ++raster;
        }
    const int count = int(gen.size());
    if (comp > 0 && count != 1) return false;
    if (raster > 1) return false;

    std::set<const VariableNode*> vtx, inp, tex, slt, uif, outs;
    ImgSize domain{1, 1};
    for (size_t i = 0; i < tg.funcs.size(); ++i) {
        if (!(mask & (1u << i))) continue;
        const FunctionNode* f = tg.funcs[i];
        if (!f->output->size.is_uniform()) {
            if (domain.is_uniform())
                domain = f->output->size;
            else if (!(domain == f->output->size))
                return false;
        }
        for (size_t a = 0; a < f->inputs.size(); ++a) {
            const VariableNode* x = f->inputs[a];
            switch (f->arg_access[a]) {
                case ArgAccess::VertexBuffer:
                    if (gen.count(x)) return false;
                    vtx.insert(x);
                    break;
                case ArgAccess::Sampled:
                    if (gen.count(x)) return false;
                    tex.insert(x);
                    break;
                case ArgAccess::RawRead:
                    if (gen.count(x)) return false;
                    slt.insert(x);
                    break;
                case ArgAccess::SamePixel:
                    if (gen.count(x)) break;  // fused internally
                    if (x->size.is_uniform())
                        uif.insert(x);
                    else
                        inp.insert(x);
                    break;
            }
        }
    }
    // outputs: generated vars consumed by later substages or required
    for (size_t i = 0; i < tg.funcs.size(); ++i) {
        if (!(mask & (1u << i))) continue;
        const VariableNode* y = tg.funcs[i]->output;
        bool needed = tg.required_outputs.count(y) > 0;
        for (size_t j = 0; j < tg.funcs.size() && !needed; ++j)
            if (packed_later & (1u << j))
                for (const VariableNode* x : tg.funcs[j]->inputs)
                    if (x == y) needed = true;
        if (needed) outs.insert(y);
    }
    ImgSize out_size{1, 1};
    bool first = true;
    for (const VariableNode* v : outs) {
        if (first)
            out_size = v->size, first = false;
        else if (!(v->size == out_size))
            return false;
    }
    if (int64_t(inp.size()) > profile.max_input_attachments) return false;
    if (int64_t(tex.size()) > profile.max_texture_samplers) return false;
    if (int64_t(slt.size()) > profile.max_sampled_images) return false;
    if (int64_t(uif.size()) > profile.max_uniforms) return false;
    if (int64_t(outs.size()) > profile.max_output_attachments) return false;
    if (int64_t(inp.size() + tex.size() + slt.size() + uif.size() + outs.size() + vtx.size()) >
        profile.total_limit())
        return false;
    return true;
}

// Minimum substage count over all valid ordered partitions, packing from the
// end of the graph like the engine does.
inline int min_substages(const TinyGraph& tg, const HardwareProfile& profile) {
    const int n = int(tg.funcs.size());
    if (n > 16) throw std::invalid_argument("packoracle: graph too large");
    std::map<uint32_t, int> memo;

    // consumer masks: bit j of consumers[i] set when func j consumes func i's output
    std::vector<uint32_t> consumers(n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (j != i)
                for (const VariableNode* x : tg.funcs[j]->inputs)
                    if (x == tg.funcs[i]->output) consumers[i] |= 1u << j;

    std::function<int(uint32_t)> solve = [&](uint32_t remaining) -> int {
        if (!remaining) return 0;
        auto it = memo.find(remaining);
        if (it != memo.end()) return it->second;
        // candidates for the LAST substage: subsets L of remaining such that
        // no function of remaining\L consumes an output of L
        std::vector<int> idxs;
        for (int i = 0; i < n; ++i)
            if (remaining & (1u << i)) idxs.push_back(i);
        int best = 1 << 20;
        const uint32_t packed_later = ~remaining;  // already placed after us
        // enumerate non-empty subsets of remaining
        for (uint32_t L = remaining; L; L = (L - 1) & remaining) {
            bool closed = true;
            for (int i : idxs)
                if (L & (1u << i))
                    if (consumers[i] & (remaining & ~L)) {
                        closed = false;
                        break;
                    }
            if (!closed) continue;
            if (!subset_valid(tg, L, packed_later, profile)) continue;
            best = std::min(best, 1 + solve(remaining & ~L));
        }
        memo[remaining] = best;
        return best;
    };
    return solve(n == 32 ? ~0u : ((1u << n) - 1));
}

}  // namespace packoracle
