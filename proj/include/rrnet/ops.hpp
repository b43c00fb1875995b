#pragma once

#include <string_view>
#include <vector>

#include "rrnet/tensor.hpp"

// Differentiable operators. Every op records a backward rule when one of its
// operands requires grad. Feature maps are rank-3 H x W x C, row-major.

namespace rrnet {

// Elementwise binary ops. Operands must have equal rank; each dimension must
// match or be 1 in one of them (broadcast).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T offset);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);
template <typename T> Tensor<T> clamp_min(const Tensor<T>& x, T lo);
/// x^(-1/2), elementwise.
template <typename T> Tensor<T> rsqrt(const Tensor<T>& x);
/// Row-wise softmax of a 2-d tensor.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Sum over one axis, keeping it with extent 1.
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);

/// Same-padded 2-d convolution. input H x W x Cin, kernel k x k x Cin x Cout
/// (k odd), bias Cout. stride 1 keeps H x W; stride 2 yields ceil(H/2) x ceil(W/2).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride = 1);

// Pooling family.
template <typename T> Tensor<T> channel_avg(const Tensor<T>& x);         // HxWxC -> HxWx1
template <typename T> Tensor<T> channel_max(const Tensor<T>& x);         // HxWxC -> HxWx1
template <typename T> Tensor<T> global_vertex_avg(const Tensor<T>& g);   // a1xa2 -> 1xa2
template <typename T> Tensor<T> upsample2x(const Tensor<T>& x);          // HxWxC -> 2Hx2WxC
template <typename T> Tensor<T> avgpool2x2(const Tensor<T>& x);          // 2Hx2WxC -> HxWxC

template <typename T> Tensor<T> identity_matrix(std::size_t n);

// Permutation-invariant reductions. Each output entry is the sum of its terms
// taken in a canonical order, so permuting the summed axis of an operand
// permutes the result bit-for-bit.

/// a (m x k) times b (k x n). Row i sums its k terms in ascending order of
/// (a_ik, row k of b).
template <typename T> Tensor<T> matmul_canonical(const Tensor<T>& a, const Tensor<T>& b);
/// Sum over the last axis of a 2-d tensor: m x n -> m x 1.
template <typename T> Tensor<T> row_sum_canonical(const Tensor<T>& x);
/// Elementwise mean of equally shaped tensors, summed in ascending value order.
template <typename T> Tensor<T> mean_canonical(const std::vector<Tensor<T>>& parts);

// Row-stable products: every output row is accumulated in the same fixed
// order, so permuting the rows of p (or a) permutes the result exactly.

/// a (m x k) times b (k x n).
template <typename T> Tensor<T> matmul_rows(const Tensor<T>& a, const Tensor<T>& b);
/// out_ij = sum_k lambda_k * (p_ik * q_jk); p, q: a1 x a2, lambda: 1 x a2.
/// Exactly symmetric when p and q are the same tensor.
template <typename T>
Tensor<T> diag_bilinear(const Tensor<T>& p, const Tensor<T>& lambda, const Tensor<T>& q);

// String-keyed dispatch over the primitive families, used by bindings and tools.
template <typename T>
Tensor<T> tensor_primitive(std::string_view kind, const std::vector<Tensor<T>>& operands);
template <typename T> Tensor<T> activation(std::string_view kind, const Tensor<T>& x);
template <typename T> Tensor<T> pool(std::string_view kind, const Tensor<T>& x);

}  // namespace rrnet
