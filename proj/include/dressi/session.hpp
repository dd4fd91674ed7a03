#pragma once

#include "dressi/autodiff.hpp"
#include "dressi/executor.hpp"
#include "dressi/optimizers.hpp"

namespace dressi {

struct SessionOptions {
    HardwareProfile profile;
    RebuildPolicy policy;
    bool cache = true;
    bool fold_constants = true;
    bool deduplicate = true;
    bool f32_mode = false;
    int threads = -1;  // -1: hardware default
};

// Owns one optimization/rendering loop over a built graph: rebuild policy,
// plan compilation, execution, in-place parameter updates and the dirty
// bookkeeping that drives the reactive cache.
class Session {
public:
    Session(Graph& graph, SessionOptions opts = {})
        : graph_(graph),
          opts_(std::move(opts)),
          ctx_(opts_.threads > 0 ? opts_.threads : ExecutionContext::default_threads()) {
        ctx_.cache_enabled = opts_.cache;
        ctx_.f32_mode = opts_.f32_mode;
    }

    void set_loss(Variable loss) { loss_ = loss; }
    Variable loss() const { return loss_; }

    void add_output(Variable v) { extra_outputs_.push_back(v); }

    void add_update_pairs(const std::vector<std::pair<Variable, Variable>>& pairs) {
        for (auto& p : pairs) update_pairs_.push_back(p);
    }

    void add_initial_state(const std::vector<std::pair<Variable, ImageBuffer>>& state) {
        for (auto& [v, b] : state) upload(v, b, ctx_);
    }

    void upload_input(Variable v, const ImageBuffer& b) { upload(v, b, ctx_); }
    ImageBuffer read(Variable v) const { return download(v, ctx_); }

    ExecutionContext& ctx() { return ctx_; }
    const CompiledPlan& plan() const { return plan_; }
    RebuildAction last_action() const { return last_action_; }

    size_t substage_count() const { return plan_.substage_count(); }
    size_t active_substage_count() const {
        size_t n = 0;
        for (const Stage& st : plan_.stages) n += st.substages.size();
        return n;
    }
    size_t stage_count() const { return plan_.stage_count(); }

    Variables outputs() const {
        Variables outs;
        for (auto& [in, upd] : update_pairs_) outs.push_back(upd);
        if (loss_) outs.push_back(loss_);
        for (Variable v : extra_outputs_) outs.push_back(v);
        return outs;
    }

    void exec_step() {
        std::vector<uint8_t> snapshot;
        snapshot.reserve(graph_.inputs().size());
        for (const VariableNode* v : graph_.inputs()) snapshot.push_back(v->dirty ? 1 : 0);
        const bool changed = built_ && snapshot != input_dirty_snapshot_;
        input_dirty_snapshot_ = std::move(snapshot);

        last_action_ = plan_rebuild(opts_.policy, changed, built_);
        switch (last_action_) {
            case RebuildAction::InitialBuild: full_compile(/*prune_clean=*/false); break;
            case RebuildAction::FullRebuild: full_compile(/*prune_clean=*/true); break;
            case RebuildAction::FastRebuild: fast_repack(); break;
            case RebuildAction::None: break;
        }

        execute_step(plan_, ctx_);
        ++ctx_.rng_frame_counter;

        // the optimizer's updated variables overwrite their paired inputs
        for (auto& [in, upd] : update_pairs_) {
            const ImageBuffer* b = ctx_.find(upd.node);
            if (!b) throw std::runtime_error("session: updated variable was not computed");
            ctx_.buffers[in.node] = *b;
        }

        for (const auto& v : graph_.variables()) v->dirty = false;
        for (auto& [in, upd] : update_pairs_) in.node->dirty = true;
        built_ = true;
    }

    // Runs the current plan without applying updates or advancing the
    // rebuild bookkeeping; used for evaluation renders at fixed parameters.
    void exec_eval() {
        if (!built_) {
            last_action_ = plan_rebuild(opts_.policy, false, false);
            full_compile(false);
            built_ = true;
            input_dirty_snapshot_.clear();
            for (const VariableNode* v : graph_.inputs())
                input_dirty_snapshot_.push_back(v->dirty ? 1 : 0);
        }
        std::vector<std::pair<VariableNode*, bool>> saved;
        for (const auto& v : graph_.variables()) saved.push_back({v.get(), v->dirty});
        const bool cache = ctx_.cache_enabled;
        ctx_.cache_enabled = false;  // evaluation must not trust stale caches
        execute_step(plan_, ctx_);
        ctx_.cache_enabled = cache;
        for (auto& [v, d] : saved) v->dirty = d;
    }

private:
    std::shared_ptr<std::unordered_set<const VariableNode*>> effective_dirty() const {
        auto dirty = std::make_shared<std::unordered_set<const VariableNode*>>();
        std::unordered_map<const VariableNode*, bool> memo;
        std::function<bool(const VariableNode*)> walk = [&](const VariableNode* v) -> bool {
            auto it = memo.find(v);
            if (it != memo.end()) return it->second;
            memo[v] = v->dirty;
            bool d = v->dirty;
            if (!d && v->creator)
                for (const VariableNode* x : v->creator->inputs)
                    if (walk(x)) {
                        d = true;
                        break;
                    }
            memo[v] = d;
            if (d) dirty->insert(v);
            return d;
        };
        for (const auto& v : graph_.variables()) walk(v.get());
        return dirty;
    }

    void full_compile(bool prune_clean) {
        CompileOptions co;
        co.profile = opts_.profile;
        co.fold_constants = opts_.fold_constants;
        co.deduplicate = opts_.deduplicate;
        if (prune_clean && opts_.cache) {
            auto dirty = effective_dirty();
            ExecutionContext* ctx = &ctx_;
            co.is_clean_cached = [dirty, ctx](const VariableNode* v) {
                return dirty->count(v) == 0 && ctx->find(v) != nullptr;
            };
        }
        plan_ = compile(outputs(), co);
        install_plan(plan_, ctx_);
    }

    void fast_repack() {
        auto dirty = effective_dirty();
        std::vector<int> keep;
        for (size_t i = 0; i < plan_.substages.size(); ++i) {
            const SubStage& s = plan_.substages[i];
            bool is_dirty = exec_detail::frame_dependent(s);
            for (const VariableNode* v : exec_detail::substage_inputs(s))
                is_dirty = is_dirty || dirty->count(v) > 0;
            for (const VariableNode* v : s.out_vars)
                is_dirty = is_dirty || ctx_.find(v) == nullptr;
            if (is_dirty) keep.push_back(int(i));
        }
        plan_.stages = pack_substages_into_stages(plan_.substages, keep);
    }

    Graph& graph_;
    SessionOptions opts_;
    ExecutionContext ctx_;
    CompiledPlan plan_;
    Variable loss_;
    Variables extra_outputs_;
    std::vector<std::pair<Variable, Variable>> update_pairs_;
    std::vector<uint8_t> input_dirty_snapshot_;
    RebuildAction last_action_ = RebuildAction::InitialBuild;
    bool built_ = false;
};

}  // namespace dressi
