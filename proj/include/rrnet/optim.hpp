#pragma once

#include <cstdint>
#include <vector>

#include "rrnet/params.hpp"

namespace rrnet {

/// Linear decay from initial_lr to final_lr over total_steps updates.
struct LrSchedule {
  double initial_lr = 5e-5;
  double final_lr = 5e-7;
  std::uint64_t total_steps = 35000;

  double at(std::uint64_t step) const;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step_count = 0;
  LrSchedule schedule;

  /// Learning rate the next update will use.
  double current_lr() const { return schedule.at(step_count); }
};

template <typename T>
AdamState<T> make_adam_state(const ParamStore<T>& params, LrSchedule schedule);

/// One bias-corrected ADAM update over every parameter, in store order.
/// grads[i] is the gradient for params.entries()[i]; an empty entry is treated as zero.
template <typename T>
void adam_step(ParamStore<T>& params, const std::vector<std::vector<T>>& grads, AdamState<T>& state,
               const AdamHyper& hyper = {});

extern template AdamState<float> make_adam_state(const ParamStore<float>&, LrSchedule);
extern template AdamState<double> make_adam_state(const ParamStore<double>&, LrSchedule);
extern template void adam_step(ParamStore<float>&, const std::vector<std::vector<float>>&,
                               AdamState<float>&, const AdamHyper&);
extern template void adam_step(ParamStore<double>&, const std::vector<std::vector<double>>&,
                               AdamState<double>&, const AdamHyper&);

}  // namespace rrnet
