#include "rrnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "rrnet/ops.hpp"

namespace rrnet {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, const GradCheckOptions& opt) {
  for (const auto& x : inputs) {
    if (!x.is_leaf() || !x.requires_grad()) throw TapeError("grad_check: inputs must be leaves that require grad");
  }
  const auto grads = backward(f(inputs));
  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double> x = inputs[i];
    const auto analytic = grads.of(x).to_vector();
    std::vector<std::size_t> entries(x.numel());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opt.max_entries != 0 && entries.size() > opt.max_entries) {
      for (std::size_t k = 0; k < opt.max_entries; ++k) {
        const std::size_t j = k + static_cast<std::size_t>(rng() % (entries.size() - k));
        std::swap(entries[k], entries[j]);
      }
      entries.resize(opt.max_entries);
    }
    for (std::size_t e : entries) {
      auto central = [&](double h) {
        auto data = x.mutable_data();
        const double orig = data[e];
        data[e] = orig + h;
        const double up = f(inputs).item();
        data[e] = orig - h;
        const double down = f(inputs).item();
        data[e] = orig;
        return (up - down) / (2.0 * h);
      };
      double numeric = central(opt.step);
      if (opt.kink_tolerance > 0) {
        const double narrow = central(opt.step / 10);
        if (relative_error(numeric, narrow, opt.floor) > opt.kink_tolerance) {
          numeric = narrow;
          ++report.nonsmooth;
        }
      }
      const double err = relative_error(analytic[e], numeric, opt.floor);
      ++report.checked;
      if (report.worst.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        std::ostringstream os;
        os << "input[" << i << "] entry " << e << ": analytic " << analytic[e] << " numeric " << numeric;
        report.worst = os.str();
      }
    }
  }
  return report;
}

Tensor<double> weighted_sum(const Tensor<double>& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> w(x.numel());
  for (auto& v : w) v = 0.5 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return sum(mul(x, Tensor<double>::from(x.shape(), std::move(w))));
}

}  // namespace rrnet
