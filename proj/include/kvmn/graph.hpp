#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kvmn/tensor.hpp"

namespace kvmn {

/// Handle to a node inside one Graph. Only meaningful for the graph that
/// issued it.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const noexcept { return id != UINT32_MAX; }
  friend bool operator==(Var a, Var b) = default;
};

enum class Op : std::uint8_t {
  Input,
  Param,
  MatMul,
  Add,
  Mul,
  Tanh,
  Sigmoid,
  Softmax,
  LogSoftmax,
  Concat,
  WeightedSum,
  Mean,
  Log,
  Negate,
  Sum,
  Scale,
  Gather,
  Stack,
  Transpose,
};

std::string_view op_name(Op op);

/// Tape of differentiable operations, rebuilt for every forward pass.
///
/// Nodes are appended in evaluation order, so insertion order is a valid
/// topological order and backward() simply walks the tape in reverse.
/// Parameter leaves refer to caller-owned tensors without copying them; their
/// gradients are added into Tensor::grad by flush_param_grads().
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Constant leaf owned by the graph. Gradients are only tracked for it when
  /// `requires_grad` is set.
  Var input(Tensor value, bool requires_grad = false);
  /// Leaf bound to an external parameter tensor. Repeated calls with the same
  /// tensor return the same node so fan-out accumulates in one place.
  Var param(const Tensor& tensor);

  // Differentiable operation catalogue.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);  // equal shapes, or matrix + row-vector broadcast
  Var mul(Var a, Var b);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softmax(Var a);      // over the last axis
  Var log_softmax(Var a);  // over the last axis
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }
  Var weighted_sum(Var weights, Var rows);  // weights[T], rows[T x d] -> [d]
  Var mean(Var a);                          // over the first axis
  Var log(Var a);
  Var negate(Var a);
  Var sum(Var a);
  Var scale(Var a, double factor);
  Var gather(Var a, std::size_t index);  // row of a matrix, element of a vector
  Var stack(std::span<const Var> rows);
  Var transpose(Var a);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() target with respect to `v`; empty when
  /// the node did not require a gradient.
  std::span<const double> grad(Var v) const;
  Op op(Var v) const { return node(v).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar node. Throws StateError if called again
  /// before reset_grads().
  void backward(Var loss, bool flush_params = true);
  /// Adds accumulated parameter-leaf gradients into the bound tensors.
  void flush_param_grads() const;
  void reset_grads();

 private:
  struct Node {
    Op op = Op::Input;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    const Tensor* external = nullptr;
    std::vector<double> grad;
    std::size_t aux = 0;
    double scalar = 0.0;
    bool needs_grad = false;
  };

  const Node& node(Var v) const;
  const Tensor& value_of(std::uint32_t id) const;
  Var push(Op op, std::vector<std::uint32_t> inputs, Tensor value, std::size_t aux = 0, double scalar = 0.0);
  std::vector<double>& grad_buffer(std::uint32_t id);
  void backprop_node(std::uint32_t id);

  std::deque<Node> nodes_;  // deque: value() references survive later pushes
  std::unordered_map<const Tensor*, std::uint32_t> param_index_;
  bool backward_done_ = false;
};

/// Finite-difference gradient check.
///
/// `build` must deterministically construct a scalar loss on the graph it is
/// handed, reading the current contents of `params`. Returns the maximum over
/// all parameter entries of |analytic - numeric| / max(1, |analytic|, |numeric|)
/// using central differences with step `eps`.
double grad_check(const std::function<Var(Graph&)>& build, std::span<Tensor* const> params, double eps = 1e-5);

}  // namespace kvmn
