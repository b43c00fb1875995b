// Reductions whose result does not depend on the order of the summed terms.
// Built with -ffp-contract=off so every term is rounded the same way no
// matter where it sits in the operand.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "rrnet/ops.hpp"

namespace rrnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMat<T>> cmat(std::span<const T> s, std::size_t r, std::size_t c) {
  return {s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
template <typename T>
Eigen::Map<RowMat<T>> mmat(std::span<T> s, std::size_t r, std::size_t c) {
  return {s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

template <typename T>
T sorted_sum(std::vector<T>& terms) {
  bool finite = true;
  for (T v : terms) finite = finite && std::isfinite(v);
  if (finite) std::sort(terms.begin(), terms.end());
  T total = 0;
  for (T v : terms) total += v;
  return total;
}

template <typename T>
void require_2d(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(x.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> channel_avg(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("channel_avg: expected rank 3 input, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  auto xv = x.data();
  std::vector<T> out(h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    T total = 0;
    for (std::size_t k = 0; k < c; ++k) total += xv[p * c + k];
    out[p] = total / static_cast<T>(c);
  }
  return Tensor<T>::make_result({h, w, 1}, std::move(out), {x},
                                [c](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gx = sink.parent(0);
                                  if (gx.empty()) return;
                                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i / c] / static_cast<T>(c);
                                });
}

template <typename T>
Tensor<T> global_vertex_avg(const Tensor<T>& g) {
  require_2d(g, "global_vertex_avg");
  const std::size_t a1 = g.dim(0), a2 = g.dim(1);
  auto gv = g.data();
  std::vector<T> out(a2);
  std::vector<T> buf(a1);
  for (std::size_t j = 0; j < a2; ++j) {
    for (std::size_t i = 0; i < a1; ++i) buf[i] = gv[i * a2 + j];
    out[j] = sorted_sum(buf) / static_cast<T>(a1);
  }
  return Tensor<T>::make_result({1, a2}, std::move(out), {g},
                                [a1, a2](std::span<const T> grad, detail::GradSink<T>& sink) {
                                  auto gx = sink.parent(0);
                                  if (gx.empty()) return;
                                  for (std::size_t i = 0; i < a1; ++i)
                                    for (std::size_t j = 0; j < a2; ++j) gx[i * a2 + j] += grad[j] / static_cast<T>(a1);
                                });
}

template <typename T>
Tensor<T> matmul_canonical(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul_canonical");
  require_2d(b, "matmul_canonical");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul_canonical: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  auto av = a.data();
  auto bv = b.data();
  bool finite = true;
  for (T v : av) finite = finite && std::isfinite(v);
  for (T v : bv) finite = finite && std::isfinite(v);
  // Row k of b, compared lexicographically; breaks ties between equal a_ik.
  auto b_less = [&](std::size_t x, std::size_t y) {
    return std::lexicographical_compare(bv.begin() + x * n, bv.begin() + (x + 1) * n, bv.begin() + y * n,
                                        bv.begin() + (y + 1) * n);
  };
  std::vector<T> out(m * n, T(0));
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = av.data() + i * k;
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Terms are visited in ascending (a_ik, row k of b) order. Fully tied keys
    // contribute identical terms, so the visiting order is canonical.
    if (finite) {
      std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (arow[x] != arow[y]) return arow[x] < arow[y];
        return b_less(x, y);
      });
    }
    T* orow = out.data() + i * n;
    for (std::size_t t : order) {
      const T s = arow[t];
      const T* brow = bv.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }
  return Tensor<T>::make_result({m, n}, std::move(out), {a, b},
                                [a, b, m, k, n](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gm = cmat<T>(g, m, n);
                                  auto ga = sink.parent(0);
                                  if (!ga.empty()) mmat<T>(ga, m, k).noalias() += gm * cmat<T>(b.data(), k, n).transpose();
                                  auto gb = sink.parent(1);
                                  if (!gb.empty()) mmat<T>(gb, k, n).noalias() += cmat<T>(a.data(), m, k).transpose() * gm;
                                });
}

template <typename T>
Tensor<T> matmul_rows(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul_rows");
  require_2d(b, "matmul_rows");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul_rows: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out.data() + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const T s = av[i * k + t];
      const T* brow = bv.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }
  return Tensor<T>::make_result({m, n}, std::move(out), {a, b},
                                [a, b, m, k, n](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gm = cmat<T>(g, m, n);
                                  auto ga = sink.parent(0);
                                  if (!ga.empty()) mmat<T>(ga, m, k).noalias() += gm * cmat<T>(b.data(), k, n).transpose();
                                  auto gb = sink.parent(1);
                                  if (!gb.empty()) mmat<T>(gb, k, n).noalias() += cmat<T>(a.data(), m, k).transpose() * gm;
                                });
}

template <typename T>
Tensor<T> row_sum_canonical(const Tensor<T>& x) {
  require_2d(x, "row_sum_canonical");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto xv = x.data();
  std::vector<T> out(m);
  std::vector<T> buf(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(xv.begin() + i * n, n, buf.begin());
    out[i] = sorted_sum(buf);
  }
  return Tensor<T>::make_result({m, 1}, std::move(out), {x},
                                [m, n](std::span<const T> g, detail::GradSink<T>& sink) {
                                  auto gx = sink.parent(0);
                                  if (gx.empty()) return;
                                  for (std::size_t i = 0; i < m; ++i)
                                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i];
                                });
}

template <typename T>
Tensor<T> diag_bilinear(const Tensor<T>& p, const Tensor<T>& lambda, const Tensor<T>& q) {
  require_2d(p, "diag_bilinear");
  require_2d(q, "diag_bilinear");
  if (p.shape() != q.shape()) {
    throw ShapeError("diag_bilinear: projections differ in shape: " + shape_str(p.shape()) + " vs " +
                     shape_str(q.shape()));
  }
  const std::size_t a1 = p.dim(0), a2 = p.dim(1);
  if (lambda.numel() != a2) {
    throw ShapeError("diag_bilinear: diagonal has " + std::to_string(lambda.numel()) + " entries for " +
                     std::to_string(a2) + " features");
  }
  const bool shared = p.id() == q.id();
  auto pv = p.data();
  auto qv = q.data();
  auto lv = lambda.data();
  std::vector<T> out(a1 * a1);
  for (std::size_t i = 0; i < a1; ++i) {
    for (std::size_t j = shared ? i : 0; j < a1; ++j) {
      T v = 0;
      for (std::size_t k = 0; k < a2; ++k) v += lv[k] * (pv[i * a2 + k] * qv[j * a2 + k]);
      out[i * a1 + j] = v;
      if (shared) out[j * a1 + i] = v;
    }
  }
  return Tensor<T>::make_result(
      {a1, a1}, std::move(out), {p, lambda, q},
      [p, lambda, q, a1, a2](std::span<const T> g, detail::GradSink<T>& sink) {
        auto gm = cmat<T>(g, a1, a1);
        auto pm = cmat<T>(p.data(), a1, a2);
        auto qm = cmat<T>(q.data(), a1, a2);
        Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> lrow(lambda.data().data(), static_cast<Eigen::Index>(a2));
        RowMat<T> gq = gm * qm;                 // a1 x a2
        RowMat<T> gtp = gm.transpose() * pm;    // a1 x a2
        auto gp = sink.parent(0);
        if (!gp.empty()) mmat<T>(gp, a1, a2).array() += gq.array().rowwise() * lrow;
        auto gq_sink = sink.parent(2);
        if (!gq_sink.empty()) mmat<T>(gq_sink, a1, a2).array() += gtp.array().rowwise() * lrow;
        auto gl = sink.parent(1);
        if (!gl.empty()) {
          // row order fixed by hand; the vectorized colwise sum depends on buffer alignment
          for (std::size_t i = 0; i < a1; ++i)
            for (std::size_t k = 0; k < a2; ++k) gl[k] += pm(i, k) * gq(i, k);
        }
      });
}

template <typename T>
Tensor<T> mean_canonical(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("mean_canonical: no operands");
  for (const auto& t : parts) {
    if (t.shape() != parts.front().shape()) {
      throw ShapeError("mean_canonical: " + shape_str(t.shape()) + " differs from " +
                       shape_str(parts.front().shape()));
    }
  }
  const std::size_t n = parts.front().numel();
  const T count = static_cast<T>(parts.size());
  std::vector<T> out(n);
  std::vector<T> buf(parts.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < parts.size(); ++k) buf[k] = parts[k].data()[i];
    out[i] = sorted_sum(buf) / count;
  }
  const std::size_t m = parts.size();
  return Tensor<T>::make_result(parts.front().shape(), std::move(out), parts,
                                [m, count](std::span<const T> g, detail::GradSink<T>& sink) {
                                  for (std::size_t k = 0; k < m; ++k) {
                                    auto gk = sink.parent(k);
                                    for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[i] / count;
                                  }
                                });
}

#define RRNET_INSTANTIATE_CANONICAL(T)                                                      \
  template Tensor<T> channel_avg(const Tensor<T>&);                                         \
  template Tensor<T> global_vertex_avg(const Tensor<T>&);                                   \
  template Tensor<T> matmul_canonical(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> matmul_rows(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> row_sum_canonical(const Tensor<T>&);                                   \
  template Tensor<T> mean_canonical(const std::vector<Tensor<T>>&);                         \
  template Tensor<T> diag_bilinear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

RRNET_INSTANTIATE_CANONICAL(float)
RRNET_INSTANTIATE_CANONICAL(double)

}  // namespace rrnet
