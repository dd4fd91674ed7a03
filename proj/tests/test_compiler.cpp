#include <doctest.h>

#include "support/packoracle.hpp"
#include "support/randgraph.hpp"
#include "support/testutil.hpp"

using namespace dressi;
using namespace testutil;

TEST_CASE("a same-size elementwise chain fuses into one substage") {
    Graph g;
    Variable x = g.add_input(VType::F32, {4, 4});
    Variable y = x;
    for (int i = 0; i < 10; ++i) y = (i & 1) ? ops::sin(y) : ops::cos(y);
    CompiledPlan plan = compile({y});
    CHECK(plan.substage_count() == 1);
    CHECK(plan.stage_count() == 1);
}

TEST_CASE("a mid-chain size change forces a substage boundary") {
    Graph g;
    Variable x = g.add_input(VType::F32, {4, 4});
    Variable a = ops::sin(ops::cos(x));
    Variable m = ops::mean(a);              // 1x1 from here on
    Variable out = ops::exp(ops::neg(m));
    CompiledPlan plan = compile({out});
    CHECK(plan.substage_count() >= 2);
    for (const SubStage& s : plan.substages) {
        ImgSize sz{-1, -1};
        for (const VariableNode* v : s.out_vars) {
            if (sz.width < 0) sz = v->size;
            CHECK(v->size == sz);
        }
    }
}

TEST_CASE("input attachment limits split substages") {
    Graph g;
    Variables ins;
    for (int i = 0; i < 6; ++i) ins.push_back(g.add_input(VType::F32, {8, 8}));
    Variable y = ins[0];
    for (int i = 1; i < 6; ++i) y = ops::add(y, ins[i]);

    CompileOptions mobile;
    mobile.profile = HardwareProfile::mobile();  // 4 input attachments
    CompiledPlan plan = compile({y}, mobile);
    CHECK(plan.substage_count() >= 2);
    for (const SubStage& s : plan.substages) {
        CHECK(substage_limits_satisfied(s, mobile.profile));
        CHECK(int64_t(s.inp_vars.size()) <= 4);
    }

    // exhaustive oracle: constraints hold and greedy is no better than optimal
    packoracle::TinyGraph tg;
    for (const auto& f : g.functions()) tg.funcs.push_back(f.get());
    tg.required_outputs.insert(y.node);
    const int optimal = packoracle::min_substages(tg, mobile.profile);
    CHECK(int(plan.substage_count()) >= optimal);
    CHECK(optimal >= 2);
}

TEST_CASE("exhaustive oracle on random 10-node graphs") {
    for (uint32_t seed = 0; seed < 6; ++seed) {
        auto rg = randgraph::build(900 + seed, 5, /*with_raster=*/false);
        CompileOptions opts;
        opts.profile = HardwareProfile::mobile();
        opts.fold_constants = false;  // keep the oracle graph identical
        opts.deduplicate = false;
        CompiledPlan plan = compile(rg.outputs, opts);

        packoracle::TinyGraph tg;
        // only functions the plan needs (dead code never packs)
        std::set<const FunctionNode*> needed;
        for (const SubStage& s : plan.substages)
            for (const FunctionNode* f : s.funcs) needed.insert(f);
        for (const auto& f : rg.graph->functions())
            if (needed.count(f.get())) tg.funcs.push_back(f.get());
        if (tg.funcs.size() > 14) continue;
        for (Variable v : rg.outputs) tg.required_outputs.insert(v.node);

        const int optimal = packoracle::min_substages(tg, opts.profile);
        INFO("seed=", seed, " greedy=", plan.substage_count(), " optimal=", optimal);
        CHECK(int(plan.substage_count()) >= optimal);
        for (const SubStage& s : plan.substages)
            CHECK(substage_limits_satisfied(s, opts.profile));
    }
}

TEST_CASE("substage_limits_satisfied spec cases") {
    using compiler_detail::PackState;
    HardwareProfile p = HardwareProfile::laptop();

    SUBCASE("empty substage is satisfied") { CHECK(substage_limits_satisfied(PackState{}, p)); }

    SUBCASE("a substage generating its own texture input fails") {
        Graph g;
        Variable tex = g.add_input(VType::F32, {4, 4});
        Variable uv = g.add_input(VType::Vec2, {4, 4});
        Variable s = ops::texture_sample(tex, uv);
        PackState ps;
        ps.funcs = {s.creator()};
        ps.tex = {tex.node};
        ps.gen = {tex.node, s.node};  // pretend the texture was generated here
        CHECK_FALSE(substage_limits_satisfied(ps, p));
    }

    SUBCASE("raster head followed by fragment body is allowed") {
        Graph g;
        Variable verts = g.add_input(VType::Vec4, {3, 1});
        Variable attr = g.add_input(VType::F32, {3, 1});
        Variable img = ops::rasterize(verts, attr, {4, 4});
        Variable shaded = ops::sin(img);
        PackState ps;
        ps.funcs = {img.creator(), shaded.creator()};
        ps.vtx = {verts.node, attr.node};
        ps.gen = {img.node, shaded.node};
        ps.out = {shaded.node};
        CHECK(substage_limits_satisfied(ps, p));

        // fragment body before the raster head is not
        PackState bad = ps;
        std::swap(bad.funcs[0], bad.funcs[1]);
        CHECK_FALSE(substage_limits_satisfied(bad, p));
    }
}

TEST_CASE("stage packing") {
    SUBCASE("two same-size dependent substages share one stage") {
        Graph g;
        Variable x = g.add_input(VType::F32, {4, 4});
        Variable a = ops::sin(x);
        Variable b = ops::cos(ops::shift_read(a, 1, 0));  // raw read forces a substage split
        CompiledPlan plan = compile({b});
        REQUIRE(plan.substage_count() == 2);
        CHECK(plan.stage_count() == 1);
        CHECK(plan.stages[0].substages.size() == 2);
    }
    SUBCASE("substages with different output sizes get separate stages") {
        Graph g;
        Variable x = g.add_input(VType::F32, {4, 4});
        Variable a = ops::sin(x);
        Variable m = ops::exp(ops::mean(a));
        CompiledPlan plan = compile({m, a});
        CHECK(plan.stage_count() >= 2);
        for (const Stage& st : plan.stages)
            for (int si : st.substages) CHECK(plan.substages[si].domain == st.domain);
    }
    SUBCASE("a compute substage is alone in its stage") {
        Graph g;
        Variable tex = g.add_input(VType::F32, {4, 4});
        set_requires_grad_recursively(tex);
        Variable uv = g.add_input(VType::Vec2, {4, 4});
        Variable sampled = ops::texture_sample(tex, uv);
        Variable loss = ops::mean(sampled);
        BackwardResult bwd = build_backward(loss);
        CompiledPlan plan = compile({loss, bwd.input_grad_vars[0]});
        bool found_comp = false;
        for (const Stage& st : plan.stages) {
            bool has_comp = false;
            for (int si : st.substages) has_comp = has_comp || plan.substages[si].comp;
            if (has_comp) {
                found_comp = true;
                CHECK(st.substages.size() == 1);
            }
        }
        CHECK(found_comp);
    }
}

TEST_CASE("kernel text") {
    SUBCASE("add then sin golden") {
        Graph g;
        Variable a = g.add_input(VType::F32, {4, 4});
        Variable b = g.add_input(VType::F32, {4, 4});
        Variable y = ops::sin(ops::add(a, b));
        CompiledPlan plan = compile({y});
        REQUIRE(plan.substage_count() == 1);
        const std::string expected =
            "substage frag 4x4 {\n"
            "  inp float v0;\n"
            "  inp float v1;\n"
            "  out float v3;\n"
            "  main {\n"
            "    v2=v0+v1;\n"
            "    v3=sin(v2);\n"
            "  }\n"
            "}\n";
        CHECK(plan.substages[0].kernel_text == expected);

        // identical build produces byte-identical text
        Graph g2;
        Variable a2 = g2.add_input(VType::F32, {4, 4});
        Variable b2 = g2.add_input(VType::F32, {4, 4});
        CompiledPlan plan2 = compile({ops::sin(ops::add(a2, b2))});
        CHECK(plan2.substages[0].kernel_text == plan.substages[0].kernel_text);
    }
    SUBCASE("empty substage renders the header only") {
        SubStage empty;
        CHECK(render_kernel_text(empty) == "substage frag 1x1 {\n  main {\n  }\n}\n");
    }
    SUBCASE("duplicate elimination renders each unique expression once") {
        Graph g;
        Variable a = g.add_input(VType::F32, {4, 4});
        Variable b = g.add_input(VType::F32, {4, 4});
        Variable s1 = ops::add(a, b);
        Variable s2 = ops::add(a, b);  // duplicate
        Variable y = ops::mul(ops::sin(s1), ops::cos(s2));
        CompiledPlan plan = compile({y});
        size_t adds = 0;
        for (const SubStage& s : plan.substages)
            for (const FunctionNode* f : s.funcs)
                if (f->op == OpKind::Add) ++adds;
        CHECK(adds == 1);
    }
}

TEST_CASE("constant folding precomputes constant subgraphs") {
    Graph g;
    Variable x = g.add_input(VType::F32, {4, 4});
    Variable c = ops::mul(ops::constant(g, 2.0), ops::constant(g, 3.0));
    Variable y = ops::mul(x, c);
    CompiledPlan plan = compile({y});
    REQUIRE(plan.folded.size() == 1);
    CHECK(plan.folded[0].second.at(0) == 6.0);
    // the fold result feeds the kernel as a uniform, not as a computed node
    for (const SubStage& s : plan.substages)
        for (const FunctionNode* f : s.funcs) CHECK(f->output != c.node);

    ImageBuffer out = run_one(y, {{x, new_image(VType::F32, {4, 4}, {1.5})}});
    CHECK(approx_equal(out, new_image(VType::F32, {4, 4}, {9.0}), 0.0));
}

TEST_CASE("plan_rebuild counter semantics") {
    RebuildPolicy policy;  // fast=2, full=5
    CHECK(plan_rebuild(policy, false, /*built_once=*/false) == RebuildAction::InitialBuild);
    CHECK(plan_rebuild(policy, true) == RebuildAction::None);   // change resets
    CHECK(policy.graph_static_counter == 0);
    CHECK(plan_rebuild(policy, false) == RebuildAction::None);  // counter 1
    CHECK(plan_rebuild(policy, false) == RebuildAction::FastRebuild);  // counter 2
    CHECK(plan_rebuild(policy, false) == RebuildAction::None);  // 3
    CHECK(plan_rebuild(policy, false) == RebuildAction::None);  // 4
    CHECK(plan_rebuild(policy, false) == RebuildAction::FullRebuild);  // 5
    CHECK(plan_rebuild(policy, false) == RebuildAction::None);  // 6
    CHECK(plan_rebuild(policy, true) == RebuildAction::None);   // reset again
    CHECK(policy.graph_static_counter == 0);

    RebuildPolicy bad;
    bad.fast_rebuild_count = 5;
    bad.full_rebuild_count = 5;
    CHECK_THROWS_AS(plan_rebuild(bad, false), std::invalid_argument);
}

TEST_CASE("fusion soundness on random graphs") {
    const std::vector<HardwareProfile> profiles = {
        HardwareProfile::unbounded(), HardwareProfile::desktop(), HardwareProfile::laptop(),
        HardwareProfile::mobile()};
    int monotone_violations = 0;
    for (uint32_t seed = 0; seed < 40; ++seed) {
        auto rg = randgraph::build(seed, 40);

        CompileOptions naive;
        naive.naive = true;
        naive.fold_constants = false;
        naive.deduplicate = false;
        CompiledPlan ref_plan = compile(rg.outputs, naive);
        ExecutionContext ref_ctx(1);
        install_plan(ref_plan, ref_ctx);
        for (auto& [v, b] : rg.bindings) upload(v, b, ref_ctx);
        execute_step(ref_plan, ref_ctx);
        std::vector<ImageBuffer> ref_outs;
        for (Variable o : rg.outputs) ref_outs.push_back(download(o, ref_ctx));

        std::vector<size_t> counts;
        for (const HardwareProfile& prof : profiles) {
            CompileOptions opts;
            opts.profile = prof;
            CompiledPlan plan = compile(rg.outputs, opts);
            counts.push_back(plan.substage_count());

            size_t func_count = 0;
            for (const SubStage& s : plan.substages) {
                CHECK(substage_limits_satisfied(s, prof));
                func_count += s.funcs.size();
            }
            CHECK(plan.substage_count() <= func_count);  // greedy <= naive

            ExecutionContext ctx(1);
            install_plan(plan, ctx);
            for (auto& [v, b] : rg.bindings) upload(v, b, ctx);
            execute_step(plan, ctx);
            for (size_t i = 0; i < rg.outputs.size(); ++i) {
                ImageBuffer got = download(rg.outputs[i], ctx);
                INFO("seed=", seed, " profile=", prof.name, " output=", i);
                CHECK(approx_equal(got, ref_outs[i], 0.0));  // bit-identical
            }
        }
        // profiles listed loose-to-tight; counts must not decrease
        if (!(counts[3] >= counts[2] && counts[2] >= counts[0])) ++monotone_violations;
    }
    CHECK(monotone_violations == 0);
}
