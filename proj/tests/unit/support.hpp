#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "rrnet/dataio.hpp"
#include "rrnet/tensor.hpp"

namespace rrnet::test {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : g_(seed) {}

  double uniform(double lo = 0, double hi = 1) { return std::uniform_real_distribution<double>(lo, hi)(g_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(g_); }
  bool coin(double p = 0.5) { return uniform() < p; }

  template <typename T = double>
  Tensor<T> tensor(const Shape& s, double lo = -1, double hi = 1, bool grad = false) {
    std::vector<T> v(shape_numel(s));
    for (auto& x : v) x = static_cast<T>(uniform(lo, hi));
    return Tensor<T>::from(s, std::move(v), grad);
  }

  Raster map(std::size_t h, std::size_t w) {
    Raster r(h, w, 1);
    for (auto& v : r.values) v = static_cast<float>(uniform());
    return r;
  }

  Raster mask(std::size_t h, std::size_t w, double p = 0.4) {
    Raster r(h, w, 1);
    for (auto& v : r.values) v = coin(p) ? 1.0f : 0.0f;
    return r;
  }

  std::mt19937_64& engine() { return g_; }

 private:
  std::mt19937_64 g_;
};

/// Same-padded convolution by direct loops, H x W x Cin with k x k x Cin x Cout.
inline std::vector<double> loop_conv(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b,
                                     int stride) {
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2), ks = k.dim(0), cout = k.dim(3);
  const std::size_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  const long pad = static_cast<long>(ks / 2);
  std::vector<double> out(oh * ow * cout);
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = b.at({co});
        for (std::size_t ky = 0; ky < ks; ++ky)
          for (std::size_t kx = 0; kx < ks; ++kx) {
            const long iy = static_cast<long>(oy) * stride + static_cast<long>(ky) - pad;
            const long ix = static_cast<long>(ox) * stride + static_cast<long>(kx) - pad;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci)
              acc += x.at({static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ci}) * k.at({ky, kx, ci, co});
          }
        out[(oy * ow + ox) * cout + co] = acc;
      }
  return out;
}

}  // namespace rrnet::test
