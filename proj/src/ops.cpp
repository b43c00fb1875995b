#include "rrnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace rrnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
CMapMat<T> as_mat(std::span<const T> s, std::size_t rows, std::size_t cols) {
  return CMapMat<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
MapMat<T> as_mat(std::span<T> s, std::size_t rows, std::size_t cols) {
  return MapMat<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
                     shape_str(s));
  }
}

// Walks the output of a broadcast binary op, producing operand offsets.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;

  Broadcast(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size()) {
      throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    same = a == b;
    const std::size_t r = a.size();
    out.resize(r);
    stride_a.assign(r, 0);
    stride_b.assign(r, 0);
    std::size_t sa = 1, sb = 1;
    for (std::size_t i = r; i-- > 0;) {
      if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
        throw ShapeError(std::string(op) + ": cannot broadcast dimension " + std::to_string(i) + " (" +
                         std::to_string(a[i]) + " vs " + std::to_string(b[i]) + ") of " +
                         shape_str(a) + " and " + shape_str(b));
      }
      out[i] = std::max(a[i], b[i]);
      stride_a[i] = a[i] == 1 ? 0 : sa;
      stride_b[i] = b[i] == 1 ? 0 : sb;
      sa *= a[i];
      sb *= b[i];
    }
  }

  template <typename F>
  void for_each(F&& f) const {
    const std::size_t n = shape_numel(out);
    if (same) {
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    }
    const std::size_t r = out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
      f(i, ia, ib);
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        ia += stride_a[d];
        ib += stride_b[d];
        if (idx[d] < out[d]) break;
        ia -= stride_a[d] * out[d];
        ib -= stride_b[d] * out[d];
        idx[d] = 0;
      }
    }
  }
};

template <typename T, typename Fwd, typename Da, typename Db>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Da da, Db db) {
  Broadcast bc(a.shape(), b.shape(), name);
  std::vector<T> out(shape_numel(bc.out));
  auto av = a.data();
  auto bv = b.data();
  bc.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
  return Tensor<T>::make_result(
      bc.out, std::move(out), {a, b},
      [bc, a, b, da, db](std::span<const T> g, detail::GradSink<T>& sink) {
        auto ga = sink.parent(0);
        auto gb = sink.parent(1);
        auto av = a.data();
        auto bv = b.data();
        bc.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) {
          if (!ga.empty()) ga[ia] += g[i] * da(av[ia], bv[ib]);
          if (!gb.empty()) gb[ib] += g[i] * db(av[ia], bv[ib]);
        });
      });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  // deriv receives (input, output)
  auto result_values = out;
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x},
      [x, deriv, y = std::move(result_values)](std::span<const T> g, detail::GradSink<T>& sink) {
        auto gx = sink.parent(0);
        if (gx.empty()) return;
        auto xv = x.data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv(xv[i], y[i]);
      });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return unary<T>(x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + " (" + std::to_string(k) + " vs " +
                     std::to_string(b.dim(0)) + ")");
  }
  std::vector<T> out(m * n);
  as_mat<T>(std::span<T>(out), m, n).noalias() = as_mat<T>(a.data(), m, k) * as_mat<T>(b.data(), k, n);
  return Tensor<T>::make_result({m, n}, std::move(out), {a, b},
                                [a, b, m, k, n](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gm = as_mat<T>(g, m, n);
                                  auto ga = sink.parent(0);
                                  if (!ga.empty())
                                    as_mat<T>(ga, m, k).noalias() +=
                                        gm * as_mat<T>(b.data(), k, n).transpose();
                                  auto gb = sink.parent(1);
                                  if (!gb.empty())
                                    as_mat<T>(gb, k, n).noalias() +=
                                        as_mat<T>(a.data(), m, k).transpose() * gm;
                                });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return Tensor<T>::make_result({c, r}, std::move(out), {x},
                                [r, c](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gx = sink.parent(0);
                                  if (gx.empty()) return;
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
                                });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return Tensor<T>::make_result(std::move(shape), x.to_vector(), {x},
                                [](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gx = sink.parent(0);
                                  if (gx.empty()) return;
                                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                                });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: " + shape_str(s) + " does not match " + shape_str(first) +
                       " outside axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * w, w, out.begin() + o * out_row + offset);
    widths.push_back(w);
    offset += w;
  }
  return Tensor<T>::make_result(out_shape, std::move(out), parts,
                                [widths, outer, out_row](std::span<const T> g, detail::GradSink<T>& sink) {
                                  std::size_t off = 0;
                                  for (std::size_t i = 0; i < widths.size(); ++i) {
                                    auto gp = sink.parent(i);
                                    const std::size_t w = widths[i];
                                    if (!gp.empty()) {
                                      for (std::size_t o = 0; o < outer; ++o)
                                        for (std::size_t j = 0; j < w; ++j)
                                          gp[o * w + j] += g[o * out_row + off + j];
                                    }
                                    off += w;
                                  }
                                });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      // NaN passes through so a corrupted weight surfaces in the loss instead of vanishing
      x, [](T v) { return v > T(0) || std::isnan(v) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      x,
      [](T v) {
        // split form keeps exp() from overflowing for large |v|
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T s) { return s * (T(1) - s); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return unary<T>(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  return unary<T>(
      x, [lo](T v) { return v < lo ? lo : v; }, [lo](T v, T) { return v < lo ? T(0) : T(1); });
}

template <typename T>
Tensor<T> rsqrt(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return T(1) / std::sqrt(v); }, [](T v, T y) { return T(-0.5) * y / v; });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "softmax_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto xv = x.data();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = xv.data() + i * c;
    T mx = *std::max_element(row, row + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) total += out[i * c + j] = std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  auto y = out;
  return Tensor<T>::make_result(x.shape(), std::move(out), {x},
                                [y = std::move(y), r, c](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gx = sink.parent(0);
                                  if (gx.empty()) return;
                                  for (std::size_t i = 0; i < r; ++i) {
                                    T dot = 0;
                                    for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
                                    for (std::size_t j = 0; j < c; ++j)
                                      gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                                  }
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return Tensor<T>::make_result({1}, {total}, {x}, [](std::span<const T> g, detail::GradSink<T>& sink) {
    auto gx = sink.parent(0);
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("sum_axis: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t n = s[axis];
  Shape out_shape = s;
  out_shape[axis] = 1;
  std::vector<T> out(outer * inner, T(0));
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + k) * inner + i];
  return Tensor<T>::make_result(out_shape, std::move(out), {x},
                                [outer, inner, n](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gx = sink.parent(0);
                                  if (gx.empty()) return;
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t k = 0; k < n; ++k)
                                      for (std::size_t i = 0; i < inner; ++i)
                                        gx[(o * n + k) * inner + i] += g[o * inner + i];
                                });
}

namespace {

struct ConvGeom {
  std::size_t h, w, cin, cout, k, stride, pad, ho, wo;
  std::size_t rows() const { return ho * wo; }
  std::size_t cols() const { return k * k * cin; }
  bool pointwise() const { return k == 1 && stride == 1; }
};

template <typename T>
void im2col(const ConvGeom& g, std::span<const T> in, RowMat<T>& col) {
  col.setZero(static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      T* row = col.data() + (oy * g.wo + ox) * g.cols();
      for (std::size_t dy = 0; dy < g.k; ++dy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + dy) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t dx = 0; dx < g.k; ++dx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + dx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const T* src = in.data() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          std::copy_n(src, g.cin, row + (dy * g.k + dx) * g.cin);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeom& g, const RowMat<T>& col, std::span<T> out) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const T* row = col.data() + (oy * g.wo + ox) * g.cols();
      for (std::size_t dy = 0; dy < g.k; ++dy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + dy) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t dx = 0; dx < g.k; ++dx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + dx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          T* dst = out.data() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          const T* src = row + (dy * g.k + dx) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride) {
  require_rank(input.shape(), 3, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  const std::size_t k = kernel.dim(0);
  if (kernel.dim(1) != k) throw ShapeError("conv2d: kernel must be square, got " + shape_str(kernel.shape()));
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (kernel.dim(2) != input.dim(2)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(2)) + " channels but kernel expects " +
                     std::to_string(kernel.dim(2)));
  }
  if (bias.numel() != kernel.dim(3)) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.numel()) + " values for " +
                     std::to_string(kernel.dim(3)) + " output channels");
  }
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");

  ConvGeom g{};
  g.h = input.dim(0);
  g.w = input.dim(1);
  g.cin = input.dim(2);
  g.cout = kernel.dim(3);
  g.k = k;
  g.stride = static_cast<std::size_t>(stride);
  g.pad = k / 2;
  g.ho = (g.h - 1) / g.stride + 1;
  g.wo = (g.w - 1) / g.stride + 1;

  RowMat<T> col;
  if (!g.pointwise()) im2col(g, input.data(), col);
  std::vector<T> out(g.rows() * g.cout);
  auto om = as_mat<T>(std::span<T>(out), g.rows(), g.cout);
  auto km = as_mat<T>(kernel.data(), g.cols(), g.cout);
  if (g.pointwise()) {
    om.noalias() = as_mat<T>(input.data(), g.rows(), g.cols()) * km;
  } else {
    om.noalias() = col * km;
  }
  om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(),
                                                                        static_cast<Eigen::Index>(g.cout));

  return Tensor<T>::make_result(
      {g.ho, g.wo, g.cout}, std::move(out), {input, kernel, bias},
      [g, input, kernel, col = std::move(col)](std::span<const T> grad, detail::GradSink<T>& sink) {
        auto gm = as_mat<T>(grad, g.rows(), g.cout);
        auto gk = sink.parent(1);
        if (!gk.empty()) {
          if (g.pointwise())
            as_mat<T>(gk, g.cols(), g.cout).noalias() += as_mat<T>(input.data(), g.rows(), g.cols()).transpose() * gm;
          else
            as_mat<T>(gk, g.cols(), g.cout).noalias() += col.transpose() * gm;
        }
        auto gb = sink.parent(2);
        if (!gb.empty()) {
          // plain loop: Eigen's vectorized colwise().sum() rounds differently with buffer alignment
          for (Eigen::Index r = 0; r < gm.rows(); ++r)
            for (Eigen::Index c = 0; c < gm.cols(); ++c) gb[static_cast<std::size_t>(c)] += gm(r, c);
        }
        auto gi = sink.parent(0);
        if (!gi.empty()) {
          auto km = as_mat<T>(kernel.data(), g.cols(), g.cout);
          if (g.pointwise()) {
            as_mat<T>(gi, g.rows(), g.cols()).noalias() += gm * km.transpose();
          } else {
            RowMat<T> gcol = gm * km.transpose();
            col2im_add<T>(g, gcol, gi);
          }
        }
      });
}

template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "channel_max");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  auto xv = x.data();
  std::vector<T> out(h * w);
  std::vector<std::size_t> arg(h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    std::size_t best = 0;
    for (std::size_t ch = 1; ch < c; ++ch)
      if (xv[p * c + ch] > xv[p * c + best]) best = ch;
    arg[p] = p * c + best;
    out[p] = xv[arg[p]];
  }
  return Tensor<T>::make_result({h, w, 1}, std::move(out), {x},
                                [arg = std::move(arg)](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gx = sink.parent(0);
                                  if (gx.empty()) return;
                                  for (std::size_t p = 0; p < arg.size(); ++p) gx[arg[p]] += g[p];
                                });
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "upsample2x");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  auto xv = x.data();
  std::vector<T> out(4 * h * w * c);
  for (std::size_t y = 0; y < 2 * h; ++y)
    for (std::size_t xx = 0; xx < 2 * w; ++xx)
      std::copy_n(xv.begin() + ((y / 2) * w + xx / 2) * c, c, out.begin() + (y * 2 * w + xx) * c);
  return Tensor<T>::make_result({2 * h, 2 * w, c}, std::move(out), {x},
                                [h, w, c](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gx = sink.parent(0);
                                  if (gx.empty()) return;
                                  for (std::size_t y = 0; y < 2 * h; ++y)
                                    for (std::size_t xx = 0; xx < 2 * w; ++xx)
                                      for (std::size_t ch = 0; ch < c; ++ch)
                                        gx[((y / 2) * w + xx / 2) * c + ch] += g[(y * 2 * w + xx) * c + ch];
                                });
}

template <typename T>
Tensor<T> avgpool2x2(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "avgpool2x2");
  if (x.dim(0) % 2 || x.dim(1) % 2) throw ShapeError("avgpool2x2: spatial size must be even, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0) / 2, w = x.dim(1) / 2, c = x.dim(2);
  auto xv = x.data();
  std::vector<T> out(h * w * c);
  const std::size_t row = 2 * w * c;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t tl = (2 * y * 2 * w + 2 * xx) * c + ch;
        // pairwise so that four equal values average back exactly
        out[(y * w + xx) * c + ch] = ((xv[tl] + xv[tl + c]) + (xv[tl + row] + xv[tl + row + c])) * T(0.25);
      }
  return Tensor<T>::make_result({h, w, c}, std::move(out), {x},
                                [h, w, c](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gx = sink.parent(0);
                                  if (gx.empty()) return;
                                  for (std::size_t y = 0; y < 2 * h; ++y)
                                    for (std::size_t xx = 0; xx < 2 * w; ++xx)
                                      for (std::size_t ch = 0; ch < c; ++ch)
                                        gx[(y * 2 * w + xx) * c + ch] += T(0.25) * g[((y / 2) * w + xx / 2) * c + ch];
                                });
}

template <typename T>
Tensor<T> identity_matrix(std::size_t n) {
  std::vector<T> v(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = T(1);
  return Tensor<T>::from({n, n}, std::move(v));
}

template <typename T>
Tensor<T> tensor_primitive(std::string_view kind, const std::vector<Tensor<T>>& operands) {
  auto need = [&](std::size_t n) {
    if (operands.size() != n) {
      throw std::invalid_argument(std::string(kind) + " takes " + std::to_string(n) + " operands, got " +
                                  std::to_string(operands.size()));
    }
  };
  if (kind == "add") { need(2); return add(operands[0], operands[1]); }
  if (kind == "mul") { need(2); return mul(operands[0], operands[1]); }
  if (kind == "matmul") { need(2); return matmul(operands[0], operands[1]); }
  if (kind == "transpose") { need(1); return transpose(operands[0]); }
  if (kind == "concat") {
    if (operands.empty()) throw ShapeError("concat: no operands");
    return concat(operands, operands.front().rank() - 1);
  }
  if (kind == "reshape") {
    // second operand lists the target dimensions
    need(2);
    Shape target;
    for (T d : operands[1].data()) target.push_back(static_cast<std::size_t>(d));
    return reshape(operands[0], target);
  }
  if (kind == "scalar_op") {
    need(2);
    if (operands[1].numel() != 1) throw ShapeError("scalar_op: second operand must hold one value");
    Shape ones(operands[0].rank(), 1);
    return mul(operands[0], reshape(operands[1], ones));
  }
  throw std::invalid_argument("unknown tensor primitive '" + std::string(kind) + "'");
}

template <typename T>
Tensor<T> activation(std::string_view kind, const Tensor<T>& x) {
  if (kind == "relu") return relu(x);
  if (kind == "sigmoid") return sigmoid(x);
  throw std::invalid_argument("unknown activation '" + std::string(kind) + "'");
}

template <typename T>
Tensor<T> pool(std::string_view kind, const Tensor<T>& x) {
  if (kind == "channel_avg") return channel_avg(x);
  if (kind == "channel_max") return channel_max(x);
  if (kind == "global_vertex_avg") return global_vertex_avg(x);
  if (kind == "upsample2x") return upsample2x(x);
  throw std::invalid_argument("unknown pool kind '" + std::string(kind) + "'");
}

#define RRNET_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                                   \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> transpose(const Tensor<T>&);                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                           \
  template Tensor<T> relu(const Tensor<T>&);                                                       \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                    \
  template Tensor<T> log(const Tensor<T>&);                                                        \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                                \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                               \
  template Tensor<T> rsqrt(const Tensor<T>&);                                                      \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                        \
  template Tensor<T> mean(const Tensor<T>&);                                                       \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);            \
  template Tensor<T> channel_max(const Tensor<T>&);                                                \
  template Tensor<T> upsample2x(const Tensor<T>&);                                                 \
  template Tensor<T> avgpool2x2(const Tensor<T>&);                                                 \
  template Tensor<T> identity_matrix<T>(std::size_t);                                              \
  template Tensor<T> tensor_primitive(std::string_view, const std::vector<Tensor<T>>&);            \
  template Tensor<T> activation(std::string_view, const Tensor<T>&);                               \
  template Tensor<T> pool(std::string_view, const Tensor<T>&);

RRNET_INSTANTIATE_OPS(float)
RRNET_INSTANTIATE_OPS(double)

}  // namespace rrnet
