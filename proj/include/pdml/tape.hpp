#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pdml/param_store.hpp"
#include "pdml/tensor.hpp"

namespace pdml {

/// Minimal reverse-mode tape over dense double tensors.
///
/// Usage: build one forward program per batch by chaining op calls, each of
/// which evaluates eagerly and records a node. backward(root) then fills
/// per-node adjoints for everything the (scalar) root depends on; adjoints of
/// parameter leaves are the gradients. backward may be called repeatedly with
/// different roots on the same tape, which is how per-loss-term gradients are
/// obtained from one shared forward pass.
///
/// The op set is deliberately closed around what the model needs; custom()
/// admits fused ops whose forward value is computed by the caller and whose
/// backward is a callback. Values are never mutated after recording, and
/// parameter values must not change between forward and backward.
class Tape {
public:
    using NodeId = std::size_t;

    explicit Tape(ParamStore* params = nullptr) : params_(params) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves.
    NodeId param(const std::string& name);
    NodeId constant(Tensor value);

    /// Pointwise 1x1 convolution: x [P, cin] with w [cout, cin], b [cout]
    /// gives [P, cout]. Equivalent to a shared dense layer per position.
    NodeId conv1x1(NodeId x, NodeId w, NodeId b);

    /// 3x3 convolution with zero padding over images of rows x cols
    /// positions: x [P, cin] where P = batch * rows * cols, w
    /// [cout, cin, 3, 3], b [cout], result [P, cout].
    NodeId conv3x3(NodeId x, NodeId w, NodeId b, std::size_t rows, std::size_t cols);

    NodeId relu(NodeId x);

    /// softplus(x) + floor, the positive variance activation.
    NodeId softplus_floor(NodeId x, double floor);

    /// Row gather: result row i = x row rows[i]. Backward scatters.
    NodeId gather_rows(NodeId x, std::vector<std::size_t> rows);

    /// Mean softmax cross-entropy over rows of logits [N, K]; labels are
    /// 0-based class indices. Scalar result.
    NodeId ce_mean(NodeId logits, std::vector<std::size_t> labels);

    /// Scalar linear combination sum_i coeffs[i] * terms[i].
    NodeId combine(std::vector<NodeId> terms, std::vector<double> coeffs);

    /// exp of a 1-element tensor (positivity reparameterization).
    NodeId exp_scalar(NodeId x);

    // Small scalar ops used by gradient-check fixtures.
    NodeId half_sum_squares(NodeId x);
    NodeId mul_scalars(NodeId a, NodeId b);

    /// Fused op: value was computed by the caller from the inputs' values;
    /// backward receives the tape and the node id, reads adjoint(self), and
    /// must accumulate into adjoint(input) for each input it differentiates.
    using BackwardFn = std::function<void(Tape&, NodeId)>;
    NodeId custom(Tensor value, std::vector<NodeId> inputs, BackwardFn backward);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    std::size_t node_count() const { return nodes_.size(); }

    /// Reverse sweep from a scalar root. Previous adjoints are discarded;
    /// only ancestors of the root are touched.
    void backward(NodeId root);

    /// Adjoint of a node after backward. Zero tensor if the node was not an
    /// ancestor of the last root.
    const Tensor& adjoint(NodeId id) const;
    Tensor& adjoint_mut(NodeId id);

    /// Calls fn(name, adjoint) for every parameter leaf that was an ancestor
    /// of the last backward root.
    void for_each_param_adjoint(
        const std::function<void(const std::string&, const Tensor&)>& fn) const;

    /// Adds every parameter-leaf adjoint into the store's grad accumulators.
    void accumulate_param_grads(double scale = 1.0);

private:
    enum class Op {
        leaf_param,
        leaf_const,
        conv1x1,
        conv3x3,
        relu,
        softplus_floor,
        gather_rows,
        ce_mean,
        combine,
        exp_scalar,
        half_sum_squares,
        mul_scalars,
        custom
    };

    struct Node {
        Op op;
        std::vector<NodeId> inputs;
        Tensor value{std::vector<std::size_t>{0}};
        Tensor adj{std::vector<std::size_t>{0}};
        bool live = false;  // ancestor of the last backward root
        // Op extras; only the relevant ones are filled.
        std::size_t rows = 0, cols = 0;      // conv3x3 geometry
        double c0 = 0.0;                     // softplus floor
        std::vector<std::size_t> index;      // gather rows / ce labels
        std::vector<double> coeffs;          // combine coefficients
        Tensor aux{std::vector<std::size_t>{0}};  // cached softmax
        BackwardFn custom_backward;
        std::string param_name;
    };

    NodeId push(Node node);
    void backward_node(NodeId id);
    const Node& node(NodeId id) const { return nodes_[id]; }

    ParamStore* params_ = nullptr;
    std::vector<Node> nodes_;
    Tensor zero_scalar_{std::vector<std::size_t>{1}};
};

}  // namespace pdml
