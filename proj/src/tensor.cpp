#include "cascade3d/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include "cascade3d/errors.hpp"

namespace cascade3d::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t numel(const Shape& s) noexcept {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  for (auto d : shape)
    if (d <= 0) throw ValidationError("tensor dimensions must be positive, got " + to_string(shape));
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value.assign(static_cast<std::size_t>(nn::numel(shape)), value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::span<const T> values, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != nn::numel(shape))
    throw ValidationError("value count " + std::to_string(values.size()) + " does not match shape " +
                          to_string(shape));
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value.assign(values.begin(), values.end());
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
void Tensor<T>::zero_grad() const {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->value.size() != 1) throw ValidationError("item() on a tensor with " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<Node<T>>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

template <typename T>
void Tensor<T>::backward() const {
  if (node_->value.size() != 1) throw ValidationError("backward() needs a scalar output");
  // Iterative post-order DFS; reversed it is a valid reverse-mode order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward && n.grad.size() == n.value.size()) {
      n.backward(n);
      // Interior gradients are dead once propagated; only leaves keep theirs.
      if (&n != node_.get()) TrackedVector<T>().swap(n.grad);
    }
  }
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<Tensor<T>> parents, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value.assign(static_cast<std::size_t>(numel(node->shape)), T(0));
  const bool track = g_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const Tensor<T>& p) {
                       return p.defined() && p.requires_grad();
                     });
  if (track) {
    node->requires_grad = true;
    for (auto& p : parents)
      if (p.defined()) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(Shape, std::vector<Tensor<float>>, std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<Tensor<double>>, std::function<void(Node<double>&)>);

}  // namespace cascade3d::nn
