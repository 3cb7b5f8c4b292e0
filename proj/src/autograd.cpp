#include "scp/autograd.hpp"

#include <unordered_set>
#include <utility>

namespace scp {

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a->value.shape() != b->value.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->value.shape()) +
                     " vs " + shape_str(b->value.shape()));
  }
}

// Iterative post-order DFS; recursion would overflow on long chains.
template <typename T>
std::vector<Node<T>*> topological_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

template <typename T>
void backward(const Var<T>& loss) {
  if (loss->value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss->value.shape()));
  }
  if (!loss->requires_grad) return;
  auto order = topological_order(loss.get());
  loss->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
  }
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  BasicTensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      auto& g = parent->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  BasicTensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    auto& lhs = self.parents[0];
    auto& rhs = self.parents[1];
    if (lhs->requires_grad) {
      auto& g = lhs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * rhs->value[i];
    }
    if (rhs->requires_grad) {
      auto& g = rhs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * lhs->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  BasicTensor<T> out = a->value;
  for (auto& v : out.storage()) v *= factor;
  return make_node<T>("scale", std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  BasicTensor<T> out = a->value;
  for (auto& v : out.storage()) v *= v;
  return make_node<T>("square", std::move(out), {a}, [](Node<T>& self) {
    auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T{2} * x[i] * self.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (T v : a->value.data()) total += v;
  return make_node<T>("sum", BasicTensor<T>({1}, std::vector<T>{total}), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T upstream = self.grad[0];
    for (auto& v : g.storage()) v += upstream;
  });
}

#define SCP_INSTANTIATE(T)                                   \
  template void backward<T>(const Var<T>&);                  \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);      \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);      \
  template Var<T> scale<T>(const Var<T>&, T);                \
  template Var<T> square<T>(const Var<T>&);                  \
  template Var<T> sum<T>(const Var<T>&);

SCP_INSTANTIATE(float)
SCP_INSTANTIATE(double)
#undef SCP_INSTANTIATE

}  // namespace scp
