#include "rrnet/params.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "rrnet/optim.hpp"

namespace rrnet {

double xavier_bound(const Shape& shape) {
  if (shape.size() < 2) return 0.0;
  std::size_t receptive = 1;
  for (std::size_t i = 0; i + 2 < shape.size(); ++i) receptive *= shape[i];
  const double fan_in = static_cast<double>(receptive * shape[shape.size() - 2]);
  const double fan_out = static_cast<double>(receptive * shape[shape.size() - 1]);
  return std::sqrt(6.0 / (fan_in + fan_out));
}

template <typename T>
Tensor<T> xavier_init(const Shape& shape, std::uint64_t seed, bool requires_grad) {
  if (shape.size() < 2) return Tensor<T>::zeros(shape, requires_grad);
  const double bound = xavier_bound(shape);
  std::mt19937_64 gen(seed);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) {
    // 53 random bits -> [0,1); mt19937_64 output is fixed by the standard
    const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
    v = static_cast<T>((2.0 * u - 1.0) * bound);
  }
  return Tensor<T>::from(shape, std::move(values), requires_grad);
}

template <typename T>
const Tensor<T>& ParamStore<T>::create(const std::string& name, const Shape& shape, InitKind init) {
  const std::uint64_t seed = seed_ * 0x9E3779B97F4A7C15ULL + (params_.size() + 1) * 0xBF58476D1CE4E5B9ULL;
  Tensor<T> value = init == InitKind::xavier ? xavier_init<T>(shape, seed, true)
                                             : Tensor<T>::zeros(shape, true);
  insert(name, std::move(value), init);
  return params_.back().value;
}

template <typename T>
void ParamStore<T>::insert(const std::string& name, Tensor<T> value, InitKind init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  params_.push_back({name, std::move(value), init});
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.value;
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename T>
bool ParamStore<T>::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

double LrSchedule::at(std::uint64_t step) const {
  if (total_steps == 0) return final_lr;
  const double frac = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  // written as a convex combination so both endpoints are reproduced exactly
  return initial_lr * (1 - frac) + final_lr * frac;
}

template <typename T>
AdamState<T> make_adam_state(const ParamStore<T>& params, LrSchedule schedule) {
  AdamState<T> s;
  s.schedule = schedule;
  for (const auto& p : params.entries()) {
    s.first_moment.emplace_back(p.value.numel(), T(0));
    s.second_moment.emplace_back(p.value.numel(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(ParamStore<T>& params, const std::vector<std::vector<T>>& grads, AdamState<T>& state,
               const AdamHyper& hyper) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.first_moment.size() != entries.size()) {
    throw ShapeError("adam_step: " + std::to_string(entries.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " +
                     std::to_string(state.first_moment.size()) + " moment slots");
  }
  const double lr = state.current_lr();
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto w = entries[i].value.mutable_data();
    const auto& g = grads[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != w.size() || v.size() != w.size() || (!g.empty() && g.size() != w.size())) {
      throw ShapeError("adam_step: size mismatch for parameter '" + entries[i].name + "'");
    }
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
      const double mj = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
      const double vj = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      w[j] = static_cast<T>(w[j] - lr * mhat / (std::sqrt(vhat) + hyper.eps));
    }
  }
}

template Tensor<float> xavier_init(const Shape&, std::uint64_t, bool);
template Tensor<double> xavier_init(const Shape&, std::uint64_t, bool);
template class ParamStore<float>;
template class ParamStore<double>;
template AdamState<float> make_adam_state(const ParamStore<float>&, LrSchedule);
template AdamState<double> make_adam_state(const ParamStore<double>&, LrSchedule);
template void adam_step(ParamStore<float>&, const std::vector<std::vector<float>>&, AdamState<float>&,
                        const AdamHyper&);
template void adam_step(ParamStore<double>&, const std::vector<std::vector<double>>&, AdamState<double>&,
                        const AdamHyper&);

}  // namespace rrnet
