#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sipit/matrix.hpp"
#include "sipit/model.hpp"

namespace sipit::grad {

// Gradient container: one tensor per ModelParams field, same shapes.
using ParamGrads = model::ModelParams;

enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Hadamard,
    Scale,
    AddRowBroadcast,
    SoftmaxRows,
    RowNormalize,
    LayerNormRows,
    ActivationMap,
    GatherRows,
    ConcatCols,
    ConcatRows,
    TakeRow,
    CrossEntropyLogits,
    SqDistHalf,
};

struct Node {
    Op op = Op::Leaf;
    int a = -1, b = -1, c = -1;      // input node ids (layer norm uses all three)
    std::vector<int> list;           // concat_cols inputs
    Matrix val;                      // recorded output
    Matrix aux;                      // saved forward by-products (LN stats, softmax, row sums)
    Matrix cst;                      // constant payload (loss targets)
    std::vector<std::int32_t> ids;   // gather indices
    std::size_t row = 0;             // take_row index
    double scalar = 0.0;             // scale factor
    double eps = 0.0;                // layer norm epsilon
    Activation act = Activation::Tanh;
    bool needs_grad = false;         // leaves: collect gradient?
};

// Records primitive ops in forward order with their saved inputs; backward
// walks them in exact reverse order. Node ids are creation indices, so the
// graph is topologically sorted by construction.
class Tape {
public:
    int leaf(Matrix value, bool needs_grad = false);
    int mat_mul(int a, int b);
    int transpose(int a);
    int add(int a, int b);
    int sub(int a, int b);
    int hadamard(int a, int b);
    int scale(int a, double c);
    int add_row_broadcast(int x, int row);
    int softmax_rows(int a);
    int row_normalize(int a);
    int layer_norm_rows(int x, int gamma, int beta, double eps);
    int activation_map(int a, Activation act);
    int gather_rows(int a, std::vector<std::int32_t> ids);
    int concat_cols(std::vector<int> parts);
    int concat_rows(int top, int bottom);
    int take_row(int a, std::size_t i);
    // loss = logsumexp(z) - <target, z>; gradient is softmax(z) - target.
    int cross_entropy_logits(int z, Matrix target);
    // loss = 0.5 * ||x - target||²; gradient is x - target.
    int sq_dist_half(int x, Matrix target);

    const Matrix& val(int i) const { return nodes_[static_cast<std::size_t>(i)].val; }
    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return nodes_.size(); }

    // Gradients of the scalar at `root` (1×1) w.r.t. every node; entries are
    // empty matrices where no gradient flowed.
    std::vector<Matrix> backward(int root) const;

    // Recomputes every node from its inputs and verifies the recorded values
    // are reproduced bit-exactly; throws NumericError on any mismatch.
    void replay_and_check() const;

private:
    std::vector<Node> nodes_;
    int push(Node n);
    Matrix compute(const Node& n, Matrix* aux_out) const;
};

struct LossAndGrads {
    double loss = 0.0;
    ParamGrads grads;
};

// Reverse-mode gradient of the cross-entropy loss CE(f(s; θ), target) with
// respect to every parameter tensor.
LossAndGrads grad_loss_params(const model::TokenSeq& s, const Matrix& target,
                              const model::ModelParams& p, const model::ModelConfig& cfg);

// Forward-only loss through the plain kernel path (no tape); the
// finite-difference oracle drives this, so analytic gradients are checked
// against an independently computed objective.
double cross_entropy_loss(const model::TokenSeq& s, const Matrix& target,
                          const model::ModelParams& p, const model::ModelConfig& cfg);

struct ValueAndGrad {
    double value = 0.0;
    Matrix grad;  // 1×d
};

// Gradient of 0.5·||F(e; prefix, t) - target||² with respect to the injected
// row e (the continuous one-step map at layer `layer`).
ValueAndGrad grad_distance_embedding(const Matrix& e, const model::TokenSeq& prefix,
                                     std::uint32_t t, std::uint32_t layer, const Matrix& target,
                                     const model::ModelParams& p, const model::ModelConfig& cfg);

// Same, reusing precomputed prefix states (the inversion hot path).
ValueAndGrad grad_distance_embedding_cached(const model::HiddenStates& prefix_hs, const Matrix& e,
                                            std::uint32_t t, std::uint32_t layer,
                                            const Matrix& target, const model::ModelParams& p,
                                            const model::ModelConfig& cfg);

double distance_objective(const Matrix& e, const model::TokenSeq& prefix, std::uint32_t t,
                          std::uint32_t layer, const Matrix& target, const model::ModelParams& p,
                          const model::ModelConfig& cfg);

// Central finite differences: (f(x+h·e_i) - f(x-h·e_i)) / 2h per coordinate.
std::vector<double> finite_diff_oracle(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h);

}  // namespace sipit::grad
