#ifndef SCP_AUTOGRAD_HPP_
#define SCP_AUTOGRAD_HPP_

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scp/tensor.hpp"

namespace scp {

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

/**
 * One vertex of the reverse-mode graph. `backward_fn` reads this node's
 * accumulated gradient and adds into the parents' gradients.
 */
template <typename T>
struct Node {
  std::string op;
  BasicTensor<T> value;
  BasicTensor<T> grad;  // empty until something flows into it
  std::vector<Var<T>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  /// Gradient buffer of the same shape as `value`, zero-initialized on first use.
  BasicTensor<T>& grad_buffer() {
    if (grad.empty()) grad = BasicTensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
};

template <typename T>
Var<T> make_leaf(BasicTensor<T> value, bool requires_grad, std::string op = "leaf") {
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

template <typename T>
Var<T> constant(BasicTensor<T> value) {
  return make_leaf(std::move(value), false, "constant");
}

template <typename T>
Var<T> parameter(BasicTensor<T> value) {
  return make_leaf(std::move(value), true, "parameter");
}

/// Creates an interior node; requires_grad is inherited from the parents.
template <typename T>
Var<T> make_node(std::string op, BasicTensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  node->value = std::move(value);
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
  node->parents = std::move(parents);
  if (node->requires_grad) node->backward_fn = std::move(backward_fn);
  return node;
}

/**
 * Reverse-mode sweep from a scalar loss. Every node reachable from `loss`
 * is visited exactly once in reverse topological order, so gradients of
 * shared subexpressions are summed before they are propagated further.
 */
template <typename T>
void backward(const Var<T>& loss);

// Elementwise and reduction primitives.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> sum(const Var<T>& a);

}  // namespace scp

#endif  // SCP_AUTOGRAD_HPP_
