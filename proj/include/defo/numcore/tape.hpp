#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "defo/numcore/tensor.hpp"

// Finite-value guard after every recorded op. On in debug builds; release
// builds opt in with -DDEFO_CHECK_FINITE.
#if !defined(NDEBUG) && !defined(DEFO_CHECK_FINITE)
#define DEFO_CHECK_FINITE 1
#endif

namespace defo {

template <class T>
class basic_tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
template <class T>
struct basic_var {
  basic_tape<T>* tape = nullptr;
  std::size_t id = 0;

  const basic_tensor<T>& value() const { return tape->node_at(id).value(); }
  const shape_t& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const { return tape->node_at(id).requires_grad; }
};

/// Linear record of a computation. Node ids are assigned in creation order,
/// so visiting ids from the root downwards is a reverse topological order.
template <class T>
class basic_tape {
 public:
  using tensor_type = basic_tensor<T>;
  using var = basic_var<T>;
  using backward_fn = std::function<void(basic_tape&, std::size_t)>;

  struct node {
    tensor_type own;
    const tensor_type* ext = nullptr;
    tensor_type* param = nullptr;
    std::vector<T> grad;
    std::vector<std::size_t> inputs;
    backward_fn backward;
    const char* op = "leaf";
    bool requires_grad = false;

    const tensor_type& value() const { return ext ? *ext : own; }
  };

  basic_tape() = default;
  basic_tape(const basic_tape&) = delete;
  basic_tape& operator=(const basic_tape&) = delete;

  /// Leaf bound to an external tensor. If `t.requires_grad`, backward
  /// accumulates into `t.grad`. `t` must outlive the tape.
  var leaf(tensor_type& t) {
    node n;
    n.ext = &t;
    n.requires_grad = t.requires_grad;
    if (t.requires_grad) n.param = &t;
    return push(std::move(n));
  }

  /// Read-only leaf referencing external storage; never receives gradient.
  var constant_ref(const tensor_type& t) {
    node n;
    n.ext = &t;
    return push(std::move(n));
  }

  var constant(tensor_type t) {
    node n;
    n.own = std::move(t);
    return push(std::move(n));
  }

  /// Records an op result. The backward closure is dropped when no input needs gradient.
  var record(const char* op, tensor_type value, std::vector<std::size_t> inputs, backward_fn fn) {
#ifdef DEFO_CHECK_FINITE
    if (!value.all_finite()) throw numeric_error(std::string(op) + ": non-finite output");
#endif
    node n;
    n.own = std::move(value);
    n.op = op;
    for (auto i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    n.inputs = std::move(inputs);
    return push(std::move(n));
  }

  /// Reverse sweep from a scalar root. Leaf gradients accumulate into the bound tensors.
  void backward(var root) {
    if (root.tape != this) throw dimension_error("backward: root belongs to another tape");
    if (root.size() != 1) {
      throw dimension_error("backward: root must be scalar, got " + shape_str(root.shape()));
    }
    for (auto& n : nodes_) n.grad.clear();
    if (!nodes_[root.id].requires_grad) return;
    grad(root.id).assign(1, T{1});
    for (std::size_t i = root.id + 1; i-- > 0;) {
      node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto& g = n.param->grad;
        if (g.size() != n.grad.size()) g.assign(n.grad.size(), T{0});
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
      }
    }
  }

  /// Gradient buffer of node `id`, zero-allocated on first touch.
  std::vector<T>& grad(std::size_t id) {
    node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value().size(), T{0});
    return n.grad;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const node& node_at(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  var push(node n) {
    nodes_.push_back(std::move(n));
    return var{this, nodes_.size() - 1};
  }

  std::deque<node> nodes_;
};

using Tape = basic_tape<double>;
using Var = basic_var<double>;

}  // namespace defo
