#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace rrnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown when operand shapes are incompatible for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown by backward() on misuse of the tape (non-scalar loss, reuse).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown when a computation produces non-finite values where finite ones are required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
struct Node;

/// Hands out gradient buffers for the parents of a node during backward.
/// A null span means the parent does not take part in differentiation.
template <typename T>
class GradSink {
 public:
  virtual ~GradSink() = default;
  virtual std::span<T> parent(std::size_t index) = 0;
};

template <typename T>
using BackwardFn = std::function<void(std::span<const T> grad_out, GradSink<T>& sink)>;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn<T> backward;
};

}  // namespace detail

template <typename T>
class Gradients;

/// Dense row-major N-d array with optional reverse-mode gradient tracking.
///
/// A Tensor is a cheap shared handle. Values produced by operations are never
/// modified afterwards; leaf tensors (parameters) may be updated in place by
/// an optimizer through mutable_data().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  /// Builds a non-leaf result. Backward is recorded only if a parent requires grad.
  static Tensor make_result(Shape shape, std::vector<T> values,
                            std::vector<Tensor> parents, detail::BackwardFn<T> backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_ ? node_->value.size() : 0; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_ && !node_->backward; }

  std::span<const T> data() const;
  /// In-place access for leaf tensors only.
  std::span<T> mutable_data();
  std::vector<T> to_vector() const;

  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  /// Copy of the values with no history; keeps requires_grad of the argument.
  Tensor detach(bool requires_grad = false) const;

  template <typename U>
  Tensor<U> cast(bool requires_grad = false) const {
    std::vector<U> out(numel());
    auto src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return Tensor<U>::from(shape(), std::move(out), requires_grad);
  }

  const detail::Node<T>* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node<T>> node_;
};

/// Gradients of a scalar loss with respect to every requires_grad leaf reached.
template <typename T>
class Gradients {
 public:
  /// Gradient of `t`; zeros of t's shape when t was not on the loss path.
  Tensor<T> of(const Tensor<T>& t) const;
  std::span<const T> raw(const Tensor<T>& t) const;
  bool contains(const Tensor<T>& t) const;
  std::size_t size() const { return grads_.size(); }

  void insert(const detail::Node<T>* id, std::vector<T> grad);

 private:
  std::unordered_map<const detail::Node<T>*, std::vector<T>> grads_;
};

/// Reverse-mode sweep from a scalar loss. Each loss can be differentiated once.
template <typename T>
Gradients<T> backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace rrnet
