#pragma once

#include <queue>
#include <unordered_map>
#include <unordered_set>

#include "dressi/ops.hpp"

namespace dressi {

struct BackwardResult {
    Variables input_vars;       // parameter leaves, ascending creation order
    Variables input_grad_vars;  // parallel gradients, same vtype and size
};

// Marks var as an optimization target and flags everything it transitively
// feeds as grad-reachable. Idempotent.
inline void set_requires_grad_recursively(Variable var) {
    if (!var) throw std::invalid_argument("set_requires_grad_recursively: null variable");
    var.node->is_param = true;
    std::vector<VariableNode*> stack{var.node};
    while (!stack.empty()) {
        VariableNode* v = stack.back();
        stack.pop_back();
        if (v->requires_grad && v != var.node) continue;
        v->requires_grad = true;
        for (FunctionNode* user : v->users)
            if (!user->output->requires_grad) stack.push_back(user->output);
    }
}

// Test hook: gradients must not depend on the traversal order among ready
// functions, so both tie-break directions are exposed.
enum class TraversalOrder { LatestFirst, EarliestFirst };

namespace detail {

inline Variable zeros_like(Variable v) {
    Graph& g = *v.node->graph;
    Variable z = ops::constant(g, 0.0);
    if (v.vtype() != VType::F32) z = ops::splat(z, v.vtype());
    if (!v.size().is_uniform()) z = ops::broadcast(z, v.size());
    return z;
}

// Shape the raw contribution onto the input it belongs to: broadcast inputs
// take pixel-summed gradients, channel-splat inputs take channel sums.
inline Variable adapt_gradient(Variable gx, Variable x) {
    if (gx.vtype() != x.vtype()) {
        if (x.vtype() == VType::F32 && is_float(gx.vtype()))
            gx = ops::channel_sum(gx);
        else
            throw std::logic_error("adapt_gradient: vtype mismatch");
    }
    if (!(gx.size() == x.size())) {
        if (x.size().is_uniform())
            gx = ops::reduce_sum(gx);
        else if (gx.size().is_uniform())
            gx = ops::broadcast(gx, x.size());
        else
            throw std::logic_error("adapt_gradient: size mismatch");
    }
    return gx;
}

}  // namespace detail

// Reverse-mode backward graph construction. Seeds dL/dL = 1, walks creators
// in latest-created-first order among functions whose downstream gradients
// are all collected, sums multiple contributions per variable, and stops at
// functions without a backward builder.
inline BackwardResult build_backward(Variable loss,
                                     TraversalOrder order = TraversalOrder::LatestFirst) {
    if (!loss) throw std::invalid_argument("build_backward: null loss");
    if (loss.vtype() != VType::F32 || !loss.size().is_uniform())
        throw std::invalid_argument("build_backward: loss must be a 1x1 float");
    Graph& g = *loss.node->graph;

    if (!loss.creator()) {
        if (!loss.node->is_param)
            throw std::invalid_argument("build_backward: no grad-reachable inputs");
        return {{loss}, {ops::constant(g, 1.0)}};
    }
    if (!loss.requires_grad())
        throw std::invalid_argument("build_backward: no grad-reachable inputs");

    // Differentiable functions on live loss->parameter paths.
    std::unordered_set<FunctionNode*> live;
    {
        std::vector<FunctionNode*> work;
        if (loss.creator()->backward) work.push_back(loss.creator());
        while (!work.empty()) {
            FunctionNode* f = work.back();
            work.pop_back();
            if (live.count(f)) continue;
            live.insert(f);
            for (VariableNode* x : f->inputs)
                if (x->requires_grad && x->creator && x->creator->backward)
                    work.push_back(x->creator);
        }
    }
    if (live.empty()) throw std::invalid_argument("build_backward: no grad-reachable inputs");

    // How many gradient contributions each variable still waits for.
    std::unordered_map<VariableNode*, int> pending;
    for (FunctionNode* f : live)
        for (VariableNode* x : f->inputs)
            if (x->requires_grad) pending[x]++;

    // Contributions keyed by the id of the function that produced them, so
    // the summation tree is identical for any valid traversal order.
    using Contribution = std::pair<uint32_t, Variable>;
    std::unordered_map<VariableNode*, std::vector<Contribution>> collected;
    collected[loss.node].push_back({0, ops::constant(g, 1.0)});

    auto sum_contributions = [](std::vector<Contribution>& cs) {
        std::sort(cs.begin(), cs.end(),
                  [](const Contribution& a, const Contribution& b) { return a.first < b.first; });
        Variables vs;
        vs.reserve(cs.size());
        for (auto& c : cs) vs.push_back(c.second);
        return ops::sum_pixel_wise(vs);
    };

    auto later = [order](const FunctionNode* a, const FunctionNode* b) {
        return order == TraversalOrder::LatestFirst ? a->id < b->id : a->id > b->id;
    };
    auto cmp = [&](FunctionNode* a, FunctionNode* b) { return later(a, b); };
    std::priority_queue<FunctionNode*, std::vector<FunctionNode*>, decltype(cmp)> ready(cmp);
    std::unordered_set<FunctionNode*> queued;

    auto finalize = [&](VariableNode* v) {
        if (pending.count(v) && pending[v] > 0) return;
        if (v->creator && live.count(v->creator) && !queued.count(v->creator)) {
            queued.insert(v->creator);
            ready.push(v->creator);
        }
    };
    finalize(loss.node);

    while (!ready.empty()) {
        FunctionNode* f = ready.top();
        ready.pop();

        auto it = collected.find(f->output);
        const bool has_grad = it != collected.end() && !it->second.empty();
        Variable gy;
        if (has_grad) {
            gy = sum_contributions(it->second);
            collected.erase(it);
        }

        Variables xs;
        xs.reserve(f->inputs.size());
        for (VariableNode* x : f->inputs) xs.emplace_back(x);
        Variable y(f->output);

        for (size_t i = 0; i < f->inputs.size(); ++i) {
            VariableNode* x = f->inputs[i];
            if (!x->requires_grad) continue;
            if (has_grad) {
                Variable gx = f->backward(xs, y, gy, int(i));
                if (gx)
                    collected[x].push_back(
                        {f->id * 8 + uint32_t(i), detail::adapt_gradient(gx, Variable(x))});
            }
            if (--pending[x] == 0) finalize(x);
        }
    }

    // Parameters feeding the loss, including those whose every path ends at a
    // non-differentiable function; the latter get zero gradients.
    BackwardResult result;
    std::vector<VariableNode*> params;
    {
        std::unordered_set<const VariableNode*> seen;
        std::vector<const VariableNode*> stack{loss.node};
        while (!stack.empty()) {
            const VariableNode* v = stack.back();
            stack.pop_back();
            if (!seen.insert(v).second) continue;
            if (v->is_param) params.push_back(const_cast<VariableNode*>(v));
            if (v->creator)
                for (const VariableNode* x : v->creator->inputs) stack.push_back(x);
        }
    }
    std::sort(params.begin(), params.end(),
              [](const VariableNode* a, const VariableNode* b) { return a->id < b->id; });

    for (VariableNode* p : params) {
        result.input_vars.emplace_back(p);
        auto it = collected.find(p);
        if (it != collected.end() && !it->second.empty())
            result.input_grad_vars.push_back(sum_contributions(it->second));
        else
            result.input_grad_vars.push_back(detail::zeros_like(Variable(p)));
    }
    if (result.input_vars.empty())
        throw std::invalid_argument("build_backward: no grad-reachable inputs");
    return result;
}

}  // namespace dressi
