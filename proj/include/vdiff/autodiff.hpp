#pragma once

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vdiff/tensor.hpp"

namespace vdiff {

/// One node of the reverse-mode tape. Interior nodes are created per forward
/// evaluation; parameter leaves live across steps and keep their gradient
/// buffers until zero_grad.
struct Node {
  Tensor value;
  Tensor grad;                 // allocated lazily, same shape as value
  bool requires_grad = false;
  bool grad_ready = false;
  std::string name;            // set for parameter leaves
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& ensure_grad() {
    if (!grad_ready) {
      grad = Tensor::zeros(value.shape());
      grad_ready = true;
    }
    return grad;
  }

  void clear_grad() {
    grad = Tensor();
    grad_ready = false;
  }
};

/// Value-semantics handle to a tape node.
class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& tensor() const { return node_->value; }
  Tensor& tensor_mut() { return node_->value; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  std::int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Tensor& grad() const {
    if (!node_->grad_ready) throw std::logic_error("value: gradient not computed");
    return node_->grad;
  }
  bool has_grad() const { return node_->grad_ready; }
  const std::string& name() const { return node_->name; }
  std::shared_ptr<Node> node() const { return node_; }
  Node* raw() const { return node_.get(); }

 private:
  std::shared_ptr<Node> node_;
};

inline Value constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = false;
  return Value(std::move(n));
}

inline Value constant_scalar(double v) { return constant(Tensor::scalar(v)); }

inline Value parameter(Tensor t, std::string name = {}) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  n->name = std::move(name);
  return Value(std::move(n));
}

namespace detail {

inline Value make_op(Tensor out, std::vector<Value> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return Value(std::move(n));
}

}  // namespace detail

/// Reverse pass from a scalar root. Seeds d(root)/d(root) = 1 and walks the
/// tape in reverse topological order. Returns the set of visited nodes so
/// callers can distinguish unreachable parameters from zero gradients.
inline std::unordered_set<const Node*> backward(const Value& root) {
  if (root.numel() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                root.tensor().shape_str());
  }
  // Iterative post-order DFS; visitation order is fixed by parent order, so
  // gradient accumulation is deterministic.
  std::vector<Node*> order;
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.raw(), 0);
  seen.insert(root.raw());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad_ready) n->backward(*n);
  }
  return seen;
}

/// Named trainable parameters. std::map keeps iteration order deterministic.
class ParamStore {
 public:
  Value add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
    Value v = parameter(std::move(init), name);
    params_.emplace(name, v);
    return v;
  }

  const Value& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("param store: unknown name " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& [name, v] : params_) v.node()->clear_grad();
  }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Value> params_;
};

/// Gradient of a scalar loss with respect to named parameters. Parameters the
/// loss never touched come back as zeros and are listed in `unreachable`.
struct Gradient {
  std::map<std::string, Tensor> by_name;
  std::vector<std::string> unreachable;
};

inline Gradient grad(const Value& loss, const ParamStore& params) {
  const auto visited = backward(loss);
  Gradient g;
  for (const auto& [name, v] : params) {
    if (visited.count(v.raw()) && v.has_grad()) {
      g.by_name.emplace(name, v.grad());
    } else {
      g.by_name.emplace(name, Tensor::zeros(v.shape()));
      g.unreachable.push_back(name);
    }
  }
  return g;
}

}  // namespace vdiff
