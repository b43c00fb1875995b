#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rrnet/tensor.hpp"

namespace rrnet {

enum class InitKind { xavier, constant_zero };

/// Xavier/Glorot uniform draw in +-sqrt(6 / (fan_in + fan_out)).
/// For rank >= 3 shapes the leading dims form the receptive field and the
/// last two are (in, out), i.e. fan_in = prod(leading) * shape[-2].
/// Rank-1 shapes are biases and come back as zeros.
template <typename T>
Tensor<T> xavier_init(const Shape& shape, std::uint64_t seed, bool requires_grad = true);

double xavier_bound(const Shape& shape);

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> value;
  InitKind init = InitKind::xavier;
};

/// Ordered, uniquely named parameter collection.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  /// Creates a parameter; the init seed depends on (store seed, insertion index).
  const Tensor<T>& create(const std::string& name, const Shape& shape, InitKind init);
  /// Inserts an existing tensor (used when loading checkpoints).
  void insert(const std::string& name, Tensor<T> value, InitKind init = InitKind::xavier);

  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  const std::vector<NamedParam<T>>& entries() const { return params_; }
  std::vector<NamedParam<T>>& entries() { return params_; }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out(seed_);
    for (const auto& p : params_) out.insert(p.name, p.value.template cast<U>(true), p.init);
    return out;
  }

  /// Deep copy with fresh leaf tensors.
  ParamStore clone() const { return cast<T>(); }

 private:
  std::uint64_t seed_ = 0;
  std::vector<NamedParam<T>> params_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace rrnet
