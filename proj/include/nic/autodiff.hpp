#pragma once

// Reverse-mode differentiation over a linear tape.
//
// Every op appends one node holding its output value, the ids of its inputs
// and a backward closure; inputs always precede the node that consumes them,
// so a single reverse sweep visits each node once in topological order. A
// tape built with record_gradients = false keeps values only (inference),
// and runs exactly the same kernels as a training tape.

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nic/tensor.hpp"

namespace nic::ad {

struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor<T> value) { return push("constant", std::move(value), {}, nullptr, false); }

  Var parameter(Tensor<T> value) { return push("parameter", std::move(value), {}, nullptr, record_); }

  // Appends an op node. backward is dropped when no input needs a gradient.
  Var record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs,
             Backward backward) {
    return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
  }

  Var record(std::string_view op, Tensor<T> value, const std::vector<Var>& inputs,
             Backward backward) {
    bool needs = false;
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (Var v : inputs) {
      if (!v.valid()) {
        ids.push_back(-1);
        continue;
      }
      check(v);
      ids.push_back(v.id);
      needs = needs || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    needs = needs && record_;
    return push(op, std::move(value), std::move(ids), needs ? std::move(backward) : nullptr, needs);
  }

  const Tensor<T>& value(Var v) const {
    check(v);
    return nodes_[static_cast<std::size_t>(v.id)].value;
  }

  bool requires_grad(Var v) const {
    return v.valid() && nodes_.at(static_cast<std::size_t>(v.id)).requires_grad;
  }

  std::string_view op_name(Var v) const {
    check(v);
    return nodes_[static_cast<std::size_t>(v.id)].op;
  }

  const std::vector<int>& inputs(Var v) const {
    check(v);
    return nodes_[static_cast<std::size_t>(v.id)].inputs;
  }

  // Adds g into the gradient slot of v. No-op for vars without gradients.
  void accumulate(Var v, const Tensor<T>& g) {
    if (!requires_grad(v)) return;
    Node& node = nodes_[static_cast<std::size_t>(v.id)];
    require_shape(g.shape() == node.value.shape(),
                  "gradient " + shape_string(g.shape()) + " for " + std::string(node.op) + " output " +
                      shape_string(node.value.shape()));
    if (node.grad.empty() && !node.value.empty()) {
      node.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
  }

  void backward(Var loss) {
    check(loss);
    if (nodes_[static_cast<std::size_t>(loss.id)].value.size() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_string(value(loss).shape()));
    }
    for (Node& node : nodes_) node.grad = Tensor<T>();
    Node& root = nodes_[static_cast<std::size_t>(loss.id)];
    if (!root.requires_grad) return;
    root.grad = Tensor<T>(root.value.shape(), T(1));
    for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.backward || node.grad.empty()) continue;
      node.backward(*this, node.grad);
    }
  }

  // Gradient of the last backward() with respect to v; zeros when v did not
  // contribute to the loss.
  Tensor<T> grad(Var v) const {
    check(v);
    const Node& node = nodes_[static_cast<std::size_t>(v.id)];
    return node.grad.empty() ? Tensor<T>(node.value.shape()) : node.grad;
  }

  std::vector<Tensor<T>> gradients(Var loss, std::span<const Var> params) {
    backward(loss);
    std::vector<Tensor<T>> out;
    out.reserve(params.size());
    for (Var p : params) out.push_back(grad(p));
    return out;
  }

 private:
  struct Node {
    std::string_view op;
    std::vector<int> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    bool requires_grad = false;
  };

  void check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw ContractError("variable " + std::to_string(v.id) + " does not belong to this tape");
    }
  }

  Var push(std::string_view op, Tensor<T> value, std::vector<int> inputs, Backward backward,
           bool requires_grad) {
    if (!value.all_finite()) {
      throw ValueError(std::string(op) + " produced non-finite values");
    }
    nodes_.push_back(Node{op, std::move(inputs), std::move(value), Tensor<T>(), std::move(backward),
                          requires_grad});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  // deque: values stay addressable while later ops append nodes.
  std::deque<Node> nodes_;
  bool record_;
};

// Differentiable ops. Shapes follow nic::kernels; bias vars may be invalid
// (no bias).
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, int stride);

template <typename T>
Var conv2d_transpose(Tape<T>& tape, Var x, Var w, Var b, int stride);

template <typename T>
Var gdn(Tape<T>& tape, Var x, Var beta, Var gamma);

template <typename T>
Var igdn(Tape<T>& tape, Var x, Var beta, Var gamma);

// y[c] = scale[c] * x[c] + shift[c]
template <typename T>
Var channel_affine(Tape<T>& tape, Var x, Var scale, Var shift);

template <typename T>
Var concat(Tape<T>& tape, const std::vector<Var>& parts, std::size_t axis);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var add_constant(Tape<T>& tape, Var a, const Tensor<T>& c);

template <typename T>
Var scale(Tape<T>& tape, Var a, double factor);

template <typename T>
Var sum(Tape<T>& tape, Var a);

// mean((a - target)^2) as a scalar.
template <typename T>
Var mse(Tape<T>& tape, Var a, const Tensor<T>& target);

// sum(-log2(a)) as a scalar; a must be positive.
template <typename T>
Var neg_log2_sum(Tape<T>& tape, Var a);

}  // namespace nic::ad
