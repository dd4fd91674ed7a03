#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dressi/image.hpp"

namespace dressi {

class Graph;
struct FunctionNode;
struct VariableNode;

enum class ShaderKind : uint8_t { FRAG, COMP, RASTER };

// How a function reads one of its inputs. Drives substage I/O classification:
// VertexBuffer -> vtx_vars, Sampled -> tex_vars, RawRead -> slt_vars,
// SamePixel -> uif_vars (1x1) or inp_vars.
enum class ArgAccess : uint8_t { SamePixel, Sampled, RawRead, VertexBuffer };

enum class OpKind : uint16_t {
    Add, Sub, Mul, Div, Neg, Abs, Exp, Sin, Cos, Sqrt, Min, Max, Mix, Sign,
    Less, GreaterEq,
    FloatConst, ScreenPos,
    Broadcast, Splat, ChannelSum,
    Vec2C, Vec3C, Vec4C, GetX, GetY, GetZ, GetW, GetXYZ, GetXI,
    Dot,
    MatVec, MatMul, Transpose, Outer,
    SumPixels, Mean,
    IndexedRead, TextureSample, ShiftRead, StretchRead,
    Enlarge, Rasterize, PeelDepth, SetFragDepth,
    VertexNormals, VertexNormalsBwd, UniformLaplacian, UniformLaplacianT,
    TextureGrad, IndexScatterAdd,
};

const char* op_name(OpKind k);

// Static per-vertex neighbor lists (CSR) shared by the Laplacian ops.
struct MeshAdjacency {
    std::vector<int32_t> offsets;  // size = vertex count + 1
    std::vector<int32_t> neighbors;
    int vertex_count() const { return int(offsets.size()) - 1; }
};

struct OpPayload {
    double scalar = 0.0;             // FloatConst value
    int component = 0;               // IndexedRead corner, GetXI lane
    int dx = 0, dy = 0;              // ShiftRead offset
    int factor = 1;                  // StretchRead repetition
    ImgSize out_size{1, 1};          // Rasterize / ScreenPos / Broadcast / scatter targets
    VType out_vtype = VType::F32;    // Splat / scatter output type
    double radius = 0.0;             // Enlarge blur radius (normalized units)
    double obtuse_threshold_deg = 30.0;
    double w_eps = 1e-6;             // Enlarge near-plane cull
    bool jitter = true;              // TextureGrad Sobol jitter
    std::shared_ptr<const MeshAdjacency> adjacency;
};

struct Variable {
    VariableNode* node = nullptr;

    Variable() = default;
    Variable(VariableNode* n) : node(n) {}

    explicit operator bool() const { return node != nullptr; }
    bool operator==(const Variable&) const = default;

    VType vtype() const;
    ImgSize size() const;
    bool requires_grad() const;
    bool dirty() const;
    void set_dirty(bool d) const;
    FunctionNode* creator() const;
    uint32_t id() const;
};

using Variables = std::vector<Variable>;

// Builds the backward graph for one input of a function. Returns a null
// Variable for non-differentiable paths.
using BackwardBuilder =
    std::function<Variable(const Variables& xs, Variable y, Variable gy, int input_index)>;

struct VariableNode {
    Graph* graph = nullptr;
    VType vtype = VType::F32;
    ImgSize size{1, 1};
    FunctionNode* creator = nullptr;
    std::vector<FunctionNode*> users;
    bool requires_grad = false;  // grad-reachable
    bool is_param = false;       // optimization target leaf
    bool dirty = true;
    uint32_t id = 0;
    std::string name;
};

struct FunctionNode {
    Graph* graph = nullptr;
    OpKind op{};
    std::string snippet;  // forward template, markers {x0},{x1},..,{y}
    ShaderKind shader_kind = ShaderKind::FRAG;
    std::vector<VariableNode*> inputs;
    std::vector<ArgAccess> arg_access;
    VariableNode* output = nullptr;
    BackwardBuilder backward;  // absent for non-differentiable functions
    OpPayload payload;
    uint32_t id = 0;

    // Set on Rasterize nodes whose fragment competition is driven by a
    // graph-built depth/discard slice (see hardsoftras).
    VariableNode* raster_depth = nullptr;
    VariableNode* raster_discard = nullptr;

    bool differentiable_input(int idx) const { return backward && idx < int(inputs.size()); }
};

class Graph {
public:
    Variable add_input(VType vtype, ImgSize size, std::string name = "") {
        VariableNode* v = new_var(vtype, size);
        v->name = std::move(name);
        inputs_.push_back(v);
        return Variable(v);
    }

    VariableNode* new_var(VType vtype, ImgSize size) {
        auto v = std::make_unique<VariableNode>();
        v->graph = this;
        v->vtype = vtype;
        v->size = size;
        v->id = next_id_++;
        vars_.push_back(std::move(v));
        return vars_.back().get();
    }

    FunctionNode* new_function(OpKind op, std::string snippet, ShaderKind kind,
                               const Variables& inputs, std::vector<ArgAccess> access,
                               OpPayload payload, BackwardBuilder backward, VType out_vtype,
                               ImgSize out_size) {
        auto f = std::make_unique<FunctionNode>();
        f->graph = this;
        f->op = op;
        f->snippet = std::move(snippet);
        f->shader_kind = kind;
        f->payload = std::move(payload);
        f->backward = std::move(backward);
        f->arg_access = std::move(access);
        f->id = next_id_++;
        bool grad = false;
        for (const Variable& x : inputs) {
            if (!x.node) throw std::invalid_argument("new_function: null input variable");
            if (x.node->graph != this)
                throw std::invalid_argument("new_function: input from another graph");
            // Construction order makes cycles impossible; keep the DAG assert explicit.
            if (x.node->id >= next_id_ - 1)
                throw std::logic_error("new_function: cyclic edge detected");
            f->inputs.push_back(x.node);
            grad = grad || x.node->requires_grad;
        }
        VariableNode* y = new_var(out_vtype, out_size);
        y->creator = f.get();
        y->requires_grad = grad;  // grad-reachable even past non-differentiable ops
        f->output = y;
        for (VariableNode* x : f->inputs) x->users.push_back(f.get());
        funcs_.push_back(std::move(f));
        return funcs_.back().get();
    }

    const std::deque<std::unique_ptr<FunctionNode>>& functions() const { return funcs_; }
    const std::deque<std::unique_ptr<VariableNode>>& variables() const { return vars_; }
    const std::vector<VariableNode*>& inputs() const { return inputs_; }
    uint32_t node_count() const { return next_id_; }

private:
    std::deque<std::unique_ptr<VariableNode>> vars_;
    std::deque<std::unique_ptr<FunctionNode>> funcs_;
    std::vector<VariableNode*> inputs_;
    uint32_t next_id_ = 0;
};

inline VType Variable::vtype() const { return node->vtype; }
inline ImgSize Variable::size() const { return node->size; }
inline bool Variable::requires_grad() const { return node->requires_grad; }
inline bool Variable::dirty() const { return node->dirty; }
inline void Variable::set_dirty(bool d) const { node->dirty = d; }
inline FunctionNode* Variable::creator() const { return node->creator; }
inline uint32_t Variable::id() const { return node->id; }

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Add: return "Add";
        case OpKind::Sub: return "Sub";
        case OpKind::Mul: return "Mul";
        case OpKind::Div: return "Div";
        case OpKind::Neg: return "Neg";
        case OpKind::Abs: return "Abs";
        case OpKind::Exp: return "Exp";
        case OpKind::Sin: return "Sin";
        case OpKind::Cos: return "Cos";
        case OpKind::Sqrt: return "Sqrt";
        case OpKind::Min: return "Min";
        case OpKind::Max: return "Max";
        case OpKind::Mix: return "Mix";
        case OpKind::Sign: return "Sign";
        case OpKind::Less: return "Less";
        case OpKind::GreaterEq: return "GreaterEq";
        case OpKind::FloatConst: return "Float";
        case OpKind::ScreenPos: return "ScreenPos";
        case OpKind::Broadcast: return "Broadcast";
        case OpKind::Splat: return "Splat";
        case OpKind::ChannelSum: return "ChannelSum";
        case OpKind::Vec2C: return "Vec2";
        case OpKind::Vec3C: return "Vec3";
        case OpKind::Vec4C: return "Vec4";
        case OpKind::GetX: return "GetX";
        case OpKind::GetY: return "GetY";
        case OpKind::GetZ: return "GetZ";
        case OpKind::GetW: return "GetW";
        case OpKind::GetXYZ: return "GetXYZ";
        case OpKind::GetXI: return "GetXI";
        case OpKind::Dot: return "Dot";
        case OpKind::MatVec: return "MatVec";
        case OpKind::MatMul: return "MatMul";
        case OpKind::Transpose: return "Transpose";
        case OpKind::Outer: return "Outer";
        case OpKind::SumPixels: return "SumPixels";
        case OpKind::Mean: return "Mean";
        case OpKind::IndexedRead: return "IndexedRead";
        case OpKind::TextureSample: return "TextureSample";
        case OpKind::ShiftRead: return "ShiftRead";
        case OpKind::StretchRead: return "StretchRead";
        case OpKind::Enlarge: return "Enlarge";
        case OpKind::Rasterize: return "Rasterize";
        case OpKind::PeelDepth: return "PeelDepth";
        case OpKind::SetFragDepth: return "SetFragDepth";
        case OpKind::VertexNormals: return "VertexNormals";
        case OpKind::VertexNormalsBwd: return "VertexNormalsBwd";
        case OpKind::UniformLaplacian: return "UniformLaplacian";
        case OpKind::UniformLaplacianT: return "UniformLaplacianT";
        case OpKind::TextureGrad: return "TextureGrad";
        case OpKind::IndexScatterAdd: return "IndexScatterAdd";
    }
    return "?";
}

}  // namespace dressi
