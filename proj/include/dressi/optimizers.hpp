#pragma once

#include "dressi/ops.hpp"

namespace dressi {

// Optimizers are expressed as graph nodes: every update rule returns
// (input, updated) pairs that the session overwrites in place each step.
struct OptimizerUpdate {
    std::vector<std::pair<Variable, Variable>> pairs;  // parameter pairs first
    std::vector<std::pair<Variable, ImageBuffer>> initial_state;
};

// x' = x - lr * g
inline OptimizerUpdate build_sgd(const Variables& params, const Variables& grads, double lr) {
    if (params.size() != grads.size())
        throw std::invalid_argument("build_sgd: parameter/gradient length mismatch");
    OptimizerUpdate upd;
    for (size_t i = 0; i < params.size(); ++i) {
        Graph& g = *params[i].node->graph;
        Variable x = params[i];
        Variable next = ops::sub(x, ops::mul(grads[i], ops::constant(g, lr)));
        upd.pairs.push_back({x, next});
    }
    return upd;
}

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard biased-moment update with bias correction, kept entirely in-graph:
// the moments and the step counter are inputs updated in place.
inline OptimizerUpdate build_adam(const Variables& params, const Variables& grads,
                                  const AdamConfig& cfg = {}) {
    if (params.size() != grads.size())
        throw std::invalid_argument("build_adam: parameter/gradient length mismatch");
    if (params.empty()) return {};
    OptimizerUpdate upd;
    Graph& g = *params[0].node->graph;

    Variable t = g.add_input(VType::F32, {1, 1}, "adam_t");
    Variable t_next = ops::add(t, ops::constant(g, 1.0));
    Variable corr1 =
        ops::sub(ops::constant(g, 1.0), ops::exp(ops::mul(t_next, ops::constant(g, std::log(cfg.beta1)))));
    Variable corr2 =
        ops::sub(ops::constant(g, 1.0), ops::exp(ops::mul(t_next, ops::constant(g, std::log(cfg.beta2)))));

    std::vector<std::pair<Variable, Variable>> state_pairs;
    for (size_t i = 0; i < params.size(); ++i) {
        Variable x = params[i], grad = grads[i];
        Variable m = g.add_input(x.vtype(), x.size(), "adam_m" + std::to_string(i));
        Variable v = g.add_input(x.vtype(), x.size(), "adam_v" + std::to_string(i));

        Variable m_next = ops::add(ops::mul(m, ops::constant(g, cfg.beta1)),
                                   ops::mul(grad, ops::constant(g, 1.0 - cfg.beta1)));
        Variable v_next = ops::add(ops::mul(v, ops::constant(g, cfg.beta2)),
                                   ops::mul(ops::mul(grad, grad), ops::constant(g, 1.0 - cfg.beta2)));
        Variable m_hat = ops::div(m_next, corr1);
        Variable v_hat = ops::div(v_next, corr2);
        Variable step = ops::div(ops::mul(m_hat, ops::constant(g, cfg.lr)),
                                 ops::add(ops::sqrt(v_hat), ops::constant(g, cfg.eps)));
        upd.pairs.push_back({x, ops::sub(x, step)});

        state_pairs.push_back({m, m_next});
        state_pairs.push_back({v, v_next});
        upd.initial_state.push_back({m, ImageBuffer(x.vtype(), x.size())});
        upd.initial_state.push_back({v, ImageBuffer(x.vtype(), x.size())});
    }
    for (auto& p : state_pairs) upd.pairs.push_back(p);
    upd.pairs.push_back({t, t_next});
    upd.initial_state.push_back({t, ImageBuffer(VType::F32, {1, 1})});
    return upd;
}

// Uniform-weight Laplacian regularizer: loss = weight * mean ||mean(nbr)-v||^2
// with an in-graph exponentially decaying weight (factor gamma per step).
struct LaplacianRegularizer {
    Variable loss;                            // scheduled regularization term
    std::pair<Variable, Variable> weight_pair;  // decays in place
    std::vector<std::pair<Variable, ImageBuffer>> initial_state;
    std::shared_ptr<const MeshAdjacency> adjacency;
};

inline std::shared_ptr<MeshAdjacency> adjacency_from_faces(const ImageBuffer& faces,
                                                           int vertex_count) {
    if (faces.vtype() != VType::IVec3)
        throw std::invalid_argument("adjacency_from_faces: ivec3 faces required");
    std::vector<std::set<int32_t>> nbrs(vertex_count);
    for (int64_t f = 0; f < faces.pixel_count(); ++f) {
        int32_t vi[3];
        for (int k = 0; k < 3; ++k) {
            vi[k] = faces.at(size_t(f) * 3 + k);
            if (vi[k] < 0 || vi[k] >= vertex_count)
                throw std::invalid_argument("adjacency_from_faces: face index out of range");
        }
        for (int k = 0; k < 3; ++k) {
            nbrs[vi[k]].insert(vi[(k + 1) % 3]);
            nbrs[vi[k]].insert(vi[(k + 2) % 3]);
        }
    }
    auto adj = std::make_shared<MeshAdjacency>();
    adj->offsets.push_back(0);
    for (int v = 0; v < vertex_count; ++v) {
        for (int32_t n : nbrs[v]) adj->neighbors.push_back(n);
        adj->offsets.push_back(int32_t(adj->neighbors.size()));
    }
    return adj;
}

inline LaplacianRegularizer build_laplacian_reg(Variable vtx_pos, const ImageBuffer& faces,
                                                double initial_weight, double gamma) {
    Graph& g = *vtx_pos.node->graph;
    LaplacianRegularizer reg;
    reg.adjacency = adjacency_from_faces(faces, int(vtx_pos.size().pixels()));
    Variable lap = ops::uniform_laplacian(vtx_pos, reg.adjacency);
    Variable sq = ops::mean(ops::dot(lap, lap));

    Variable w = g.add_input(VType::F32, {1, 1}, "laplacian_w");
    reg.loss = ops::mul(sq, w);
    reg.weight_pair = {w, ops::mul(w, ops::constant(g, gamma))};
    reg.initial_state.push_back({w, new_image(VType::F32, {1, 1}, {initial_weight})});
    return reg;
}

}  // namespace dressi
