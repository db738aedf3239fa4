#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lfuse/nn/tensor.hpp"

namespace lfuse::nn {

template <typename T>
class Tape;

/// Handle to a node on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return tape->value(id); }
  int rows() const { return value().rows; }
  int cols() const { return value().cols; }
  T scalar() const { return value().data.at(0); }
  bool valid() const noexcept { return tape != nullptr && id >= 0; }
};

/// Reverse-mode record of primitive applications.
///
/// Nodes are appended in evaluation order, so parents always carry smaller
/// ids and reverse id order is a valid reverse topological order. Each node
/// keeps the closure that produced its value; `replay()` re-runs them in order
/// and reproduces every value bit-exactly (dropout masks are stored in the
/// closures, not redrawn).
///
/// With `record_grad == false` no adjoint closures are kept and `backward`
/// is unavailable; use this for inference.
template <typename T>
class Tape {
 public:
  using Forward = std::function<void(Tape&, Tensor<T>&)>;
  using Backward = std::function<void(Tape&, const Tensor<T>& grad, const Tensor<T>& value)>;

  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool record_grad() const noexcept { return record_grad_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// Leaf bound to parameter `idx` of `ps`. One leaf per parameter per tape.
  Var<T> param(ParamSet<T>& ps, int idx) {
    const auto key = std::make_pair(static_cast<const void*>(&ps), idx);
    for (const auto& [k, id] : param_leaves_)
      if (k == key) return {this, id};
    Node n;
    const auto& p = ps[idx];
    n.value = Tensor<T>(p.rows, p.cols, p.values);
    n.requires_grad = record_grad_;
    n.param_set = &ps;
    n.param_index = idx;
    ParamSet<T>* psp = &ps;
    n.forward = [psp, idx](Tape&, Tensor<T>& out) {
      const auto& q = (*psp)[idx];
      out = Tensor<T>(q.rows, q.cols, q.values);
    };
    Var<T> v = push(std::move(n));
    param_leaves_.emplace_back(key, v.id);
    return v;
  }

  /// Appends a node computed by `fwd` from `parents`. `bwd` receives the node's
  /// gradient and value and must add parent contributions through `grad(parent_id)`.
  Var<T> make(std::vector<int> parents, Forward fwd, Backward bwd) {
    Node n;
    for (int p : parents) {
      if (p < 0 || p >= static_cast<int>(nodes_.size())) throw Error("tape: parent id out of range");
      n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    }
    n.parents = std::move(parents);
    fwd(*this, n.value);
    n.forward = std::move(fwd);
    if (n.requires_grad) n.backward = std::move(bwd);
    return push(std::move(n));
  }

  const Tensor<T>& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of node `id`, zero-initialized on first access.
  Tensor<T>& grad(int id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.rows, n.value.cols);
    return n.grad;
  }
  bool has_grad(int id) const { return nodes_[id].grad.size() == nodes_[id].value.size() && nodes_[id].value.size() > 0; }

  /// Seeds d(loss)/d(loss) = 1 and propagates adjoints to every node.
  void backward(Var<T> loss) {
    if (!record_grad_) throw Error("tape: backward on an inference-only tape");
    if (loss.tape != this) throw Error("tape: loss belongs to another tape");
    if (value(loss.id).size() != 1) throw InvalidArgument("tape: backward requires a scalar loss");
    grad(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.backward || !has_grad(id)) continue;
      for (int p : n.parents)
        if (p >= id) throw Error("tape: cycle detected");
      // nodes_ is not resized during backward, so `n` stays valid while
      // the closure allocates parent gradients
      n.backward(*this, n.grad, n.value);
    }
  }

  /// Adds leaf gradients into the parameter buffers of their ParamSets.
  void accumulate_param_grads() {
    for (const auto& [key, id] : param_leaves_) {
      if (!has_grad(id)) continue;
      const Node& n = nodes_[id];
      auto& p = (*n.param_set)[n.param_index];
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  }

  /// Adds leaf gradients into `out` (indexed like the ParamSet `ps`).
  void accumulate_param_grads(const ParamSet<T>& ps, GradSet<T>& out) const {
    for (const auto& [key, id] : param_leaves_) {
      if (key.first != static_cast<const void*>(&ps)) continue;
      const Node& n = nodes_[id];
      if (n.grad.size() != n.value.size()) continue;
      auto& g = out.grads[key.second];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }

  /// Recomputes every node value from its stored closure. Returns true when all
  /// recomputed values equal the recorded ones bit for bit.
  bool replay() {
    bool identical = true;
    for (auto& n : nodes_) {
      if (!n.forward) continue;
      Tensor<T> out;
      n.forward(*this, out);
      if (out.data != n.value.data) identical = false;
      n.value = std::move(out);
    }
    return identical;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> parents;
    Forward forward;
    Backward backward;
    bool requires_grad = false;
    ParamSet<T>* param_set = nullptr;
    int param_index = -1;
  };

  Var<T> push(Node&& n) {
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  bool record_grad_;
  std::vector<Node> nodes_;
  std::vector<std::pair<std::pair<const void*, int>, int>> param_leaves_;
};

}  // namespace lfuse::nn
