#include "lifwav/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace lifwav {

std::string to_string(const Shape& s) {
  std::string out = "[" + std::to_string(s.length) + ", " + std::to_string(s.channels);
  if (s.taps != 1) out += ", " + std::to_string(s.taps);
  return out + "]";
}

namespace {

thread_local bool g_grad_enabled = true;
thread_local FlopCounter* g_flop_counter = nullptr;
std::string g_gradient_fault;

template <typename T>
void require_finite(std::span<const T> values, const char* what) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericalError(std::string(what) + ": non-finite value");
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_gradient_fault(std::string op_name) { g_gradient_fault = std::move(op_name); }
const std::string& gradient_fault() { return g_gradient_fault; }

FlopCounter::FlopCounter() : previous_(g_flop_counter) { g_flop_counter = this; }
FlopCounter::~FlopCounter() { g_flop_counter = previous_; }
std::uint64_t FlopCounter::total() const { return total_; }

void count_flops(std::uint64_t n) {
  if (g_flop_counter != nullptr) g_flop_counter->total_ += n;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  return from(shape, std::vector<T>(shape.size(), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape.length == 0 || shape.channels == 0 || shape.taps == 0) {
    throw DimensionError("tensor shape " + to_string(shape) + " has an empty dimension");
  }
  if (values.size() != shape.size()) {
    throw DimensionError("tensor of shape " + to_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  require_finite<T>(values, "tensor construction");
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::column(std::vector<T> values, bool requires_grad) {
  const Shape s{values.size(), 1};
  return from(s, std::move(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from(Shape{1, 1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
std::vector<detail::Node<T>*> topological_order(const Tensor<T>& root) {
  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<const NodeT*> seen;
  // Iterative post-order DFS; graphs are deep (one node per op).
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1) {
    throw ContractError("backward() requires a scalar, got shape " + to_string(shape()));
  }
  if (!requires_grad()) return;
  auto order = topological_order(*this);
  for (auto* n : order) {
    if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), T(0));
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    if (!g_gradient_fault.empty() && g_gradient_fault == n->op) {
      for (T& g : n->grad) g *= T(1.5);
    }
    n->backward(*n);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape();
  node->value = node_->value;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto copy = detach();
  copy.node_->requires_grad = requires_grad();
  return copy;
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto* in : inputs) any = any || in->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto* in : inputs) node->parents.push_back(in->node());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      const std::vector<Tensor<T>>& inputs, BackwardFn<T> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(Shape, std::vector<float>, const char*,
                                   std::initializer_list<const Tensor<float>*>, BackwardFn<float>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*,
                                    std::initializer_list<const Tensor<double>*>, BackwardFn<double>);
template Tensor<float> make_result(Shape, std::vector<float>, const char*,
                                   const std::vector<Tensor<float>>&, BackwardFn<float>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*,
                                    const std::vector<Tensor<double>>&, BackwardFn<double>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template std::vector<detail::Node<float>*> topological_order(const Tensor<float>&);
template std::vector<detail::Node<double>*> topological_order(const Tensor<double>&);

}  // namespace lifwav
