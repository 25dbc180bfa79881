#pragma once

// Reverse-mode autodiff over small 1-D multi-channel tensors.
//
// A Tensor is a shared handle to a graph node. Activations have logical shape
// [length, channels] and are stored channel-major (index = c * length + t), so
// that per-channel time series are contiguous. Convolution kernels use the
// extra `taps` dimension: [out, in, k] stored row-major.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lifwav/errors.hpp"

namespace lifwav {

struct Shape {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t taps = 1;

  [[nodiscard]] constexpr std::size_t size() const { return length * channels * taps; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
  [[nodiscard]] bool is_leaf() const { return !backward; }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  // Single-channel tensor [values.size(), 1].
  static Tensor column(std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Shape& shape() const { return node_->shape; }
  [[nodiscard]] std::size_t length() const { return node_->shape.length; }
  [[nodiscard]] std::size_t channels() const { return node_->shape.channels; }
  [[nodiscard]] std::size_t size() const { return node_->value.size(); }

  [[nodiscard]] std::span<const T> data() const { return node_->value; }
  // Writable view of the values. Only meaningful on leaves (parameters, inputs).
  [[nodiscard]] std::span<T> mutable_data() { return node_->value; }
  [[nodiscard]] T at(std::size_t t, std::size_t c) const { return node_->value[c * length() + t]; }
  [[nodiscard]] T item() const;

  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  [[nodiscard]] bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Gradient buffer; empty span before the first backward reaching this node.
  [[nodiscard]] std::span<const T> grad() const { return node_->grad; }
  [[nodiscard]] std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  // Populates gradients of every grad-requiring leaf reachable from this
  // scalar. Leaf gradients accumulate across calls.
  void backward() const;

  // Same values, cut from the graph.
  [[nodiscard]] Tensor detach() const;
  [[nodiscard]] Tensor clone() const;
  [[nodiscard]] const char* op_name() const { return node_->op; }

  [[nodiscard]] const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

// Nodes reachable from `root` in topological order (inputs before outputs),
// each exactly once.
template <typename T>
std::vector<detail::Node<T>*> topological_order(const Tensor<T>& root);

bool grad_enabled();

// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Test hook: scales the upstream gradient seen by every node produced by the
// named op. Empty string disables it.
void set_gradient_fault(std::string op_name);
const std::string& gradient_fault();

// Floating-point operations recorded by forward kernels while enabled.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;
  [[nodiscard]] std::uint64_t total() const;

 private:
  FlopCounter* previous_;
  std::uint64_t total_ = 0;
  friend void count_flops(std::uint64_t);
};

void count_flops(std::uint64_t n);

namespace detail {

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

// Wraps a freshly computed value into a tensor, attaching it to the graph when
// grad mode is on and some input requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> backward);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      const std::vector<Tensor<T>>& inputs, BackwardFn<T> backward);

}  // namespace detail

}  // namespace lifwav
