#include "rrnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace rrnet {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape, std::size_t count) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != count) {
    throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(count));
  }
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> values(shape_numel(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  check_shape(shape, values.size());
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                                 detail::BackwardFn<T> backward) {
  check_shape(shape, values.size());
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  bool any = std::any_of(parents.begin(), parents.end(),
                         [](const Tensor& p) { return p.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
  }
  return Tensor(std::move(node));
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return shape()[axis];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) return {};
  return node_->value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) return {};
  if (node_->backward) throw TapeError("mutable_data() is only available on leaf tensors");
  return node_->value;
}

template <typename T>
std::vector<T> Tensor<T>::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank does not match " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape()[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
    flat = flat * shape()[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

template <typename T>
Tensor<T> Tensor<T>::detach(bool requires_grad) const {
  return from(shape(), to_vector(), requires_grad);
}

template <typename T>
Tensor<T> Gradients<T>::of(const Tensor<T>& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor<T>::zeros(t.shape());
  return Tensor<T>::from(t.shape(), it->second);
}

template <typename T>
std::span<const T> Gradients<T>::raw(const Tensor<T>& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return {};
  return it->second;
}

template <typename T>
bool Gradients<T>::contains(const Tensor<T>& t) const {
  return grads_.count(t.id()) != 0;
}

template <typename T>
void Gradients<T>::insert(const detail::Node<T>* id, std::vector<T> grad) {
  grads_[id] = std::move(grad);
}

namespace {

template <typename T>
class MapSink final : public detail::GradSink<T> {
 public:
  MapSink(detail::Node<T>& node, std::unordered_map<detail::Node<T>*, std::vector<T>>& grads)
      : node_(node), grads_(grads) {}

  std::span<T> parent(std::size_t index) override {
    auto* p = node_.parents.at(index).get();
    if (!p->requires_grad) return {};
    auto& g = grads_[p];
    if (g.empty()) g.assign(p->value.size(), T(0));
    return g;
  }

 private:
  detail::Node<T>& node_;
  std::unordered_map<detail::Node<T>*, std::vector<T>>& grads_;
};

}  // namespace

template <typename T>
Gradients<T> backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw TapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto* root = loss.node().get();
  if (root->consumed) throw TapeError("backward() already ran on this loss; run the forward pass again");
  root->consumed = true;

  Gradients<T> result;
  if (!root->requires_grad) return result;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<detail::Node<T>*, std::vector<T>> grads;
  grads[root] = std::vector<T>{T(1)};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    auto g = grads.find(node);
    if (g == grads.end()) continue;
    if (node->backward) {
      std::vector<T> gout = std::move(g->second);
      grads.erase(g);
      MapSink<T> sink(*node, grads);
      node->backward(gout, sink);
    } else {
      result.insert(node, std::move(g->second));
      grads.erase(g);
    }
  }
  return result;
}

template class Tensor<float>;
template class Tensor<double>;
template class Gradients<float>;
template class Gradients<double>;
template Gradients<float> backward(const Tensor<float>&);
template Gradients<double> backward(const Tensor<double>&);

}  // namespace rrnet
