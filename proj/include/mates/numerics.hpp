#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace mates {

// Dense 64-bit float tensor, row-major. Rank is 1 or 2; scalars use shape {1}.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape_, double fill = 0.0);
    static Tensor scalar(double v);
    static Tensor vec(std::int64_t n, double fill = 0.0);
    static Tensor matrix(std::int64_t r, std::int64_t c, double fill = 0.0);

    std::int64_t numel() const;
    bool is_matrix() const { return shape.size() == 2; }
    std::int64_t rows() const;
    std::int64_t cols() const;
    double& at(std::int64_t i, std::int64_t j);
    double at(std::int64_t i, std::int64_t j) const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
};

std::string shape_str(const Tensor& t);

// One recorded primitive application. `value` is the forward result; `backprop`
// scatters the node's gradient into its inputs' gradients (accumulating).
// Cached intermediates live in the backprop closure.
struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backprop;

    void ensure_grad();
};

using NodeRef = std::shared_ptr<Node>;

// Dynamic tape, rebuilt per forward pass. Nodes are stored in creation order,
// which is a topological order by construction, so backward() is a single
// reverse sweep visiting each node once. Policy: build a fresh tape per
// forward pass and call backward() once; clear() resets for reuse.
class Tape {
  public:
    NodeRef leaf(Tensor value);
    NodeRef emplace(Tensor value, std::vector<NodeRef> inputs, std::function<void(Node&)> backprop);
    void backward(const NodeRef& root);
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

  private:
    std::vector<NodeRef> nodes_;
};

// Primitives. Each checks its shape contract and records the gradient rule.
NodeRef matmul(Tape& tape, const NodeRef& a, const NodeRef& b);
// a [m×k] times b-transpose where b is [n×k]; avoids materializing bᵀ callers-side.
NodeRef matmul_nt(Tape& tape, const NodeRef& a, const NodeRef& b);
NodeRef add(Tape& tape, const NodeRef& a, const NodeRef& b);
// Row-wise bias addition, the only broadcast: a [m×n] + bias [n].
NodeRef add_rowwise(Tape& tape, const NodeRef& a, const NodeRef& bias);
NodeRef mul(Tape& tape, const NodeRef& a, const NodeRef& b);
NodeRef scale(Tape& tape, const NodeRef& a, double c);
NodeRef softmax_rows(Tape& tape, const NodeRef& a);
NodeRef layernorm(Tape& tape, const NodeRef& a, const NodeRef& gain, const NodeRef& bias);
NodeRef gelu(Tape& tape, const NodeRef& a);
// Square score matrix; entries with column > row are masked to -inf (no grad).
NodeRef causal_mask(Tape& tape, const NodeRef& scores);
NodeRef mean_all(Tape& tape, const NodeRef& a);
NodeRef sum_all(Tape& tape, const NodeRef& a);
NodeRef embedding_gather(Tape& tape, const NodeRef& table, const std::vector<std::int32_t>& ids);
// Mean over rows of -log softmax(logits)[target]; gradient (softmax - onehot)/n.
NodeRef softmax_cross_entropy(Tape& tape, const NodeRef& logits,
                              const std::vector<std::int32_t>& targets);
NodeRef slice_block(Tape& tape, const NodeRef& a, std::int64_t r0, std::int64_t r1,
                    std::int64_t c0, std::int64_t c1);
NodeRef concat_cols(Tape& tape, const std::vector<NodeRef>& parts);
NodeRef concat_rows(Tape& tape, const std::vector<NodeRef>& parts);

inline constexpr double kGeluCubicCoeff = 0.044715;
inline constexpr double kLayernormEps = 1e-5;

}  // namespace mates
