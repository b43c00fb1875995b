#pragma once

#include <array>
#include <string>

#include "rrnet/params.hpp"
#include "rrnet/tensor.hpp"

// Parallel multi-scale attention (PMA). Attention maps are H x W x 1 tensors
// with values in (0,1).

namespace rrnet {

enum class PmaBranch { both, left, right };
enum class FeatureActivation { relu, sigmoid };

inline constexpr std::array<std::size_t, 3> kPmaScales{3, 5, 7};

template <typename T>
struct ConvWeights {
  Tensor<T> kernel;  // k x k x Cin x Cout
  Tensor<T> bias;    // Cout
};

template <typename T>
ConvWeights<T> make_conv(ParamStore<T>& store, const std::string& name, std::size_t k, std::size_t cin,
                         std::size_t cout);
template <typename T>
ConvWeights<T> bind_conv(const ParamStore<T>& store, const std::string& name);

template <typename T>
struct PmaParams {
  std::array<ConvWeights<T>, 3> left_convs;       // 2 -> 1, k in {3,5,7}
  std::array<ConvWeights<T>, 3> right_convs;      // C -> C, k in {3,5,7}
  std::array<ConvWeights<T>, 3> right_att_convs;  // 2 -> 1, 7x7 by default
  ConvWeights<T> fuse_conv;                       // 1x1, 2 -> 1
  FeatureActivation right_activation = FeatureActivation::relu;
};

template <typename T>
PmaParams<T> make_pma_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                             std::size_t att_kernel = 7);
template <typename T>
PmaParams<T> bind_pma_params(const ParamStore<T>& store, const std::string& prefix);

/// concat(channel average, channel max): H x W x C -> H x W x 2.
template <typename T>
Tensor<T> descriptor(const Tensor<T>& x);

/// sigmoid(conv(descriptor(x))), the single-kernel spatial attention.
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const ConvWeights<T>& conv);

/// Multi-scale attention on single-scale features: mean of three sigmoid maps.
template <typename T>
Tensor<T> left_branch(const Tensor<T>& x, const PmaParams<T>& p);

/// Attention on multi-scale features: mean of spatial attention over F_3, F_5, F_7.
template <typename T>
Tensor<T> right_branch(const Tensor<T>& x, const PmaParams<T>& p);

/// sigmoid(conv1x1(concat(a_l, a_r))).
template <typename T>
Tensor<T> fuse(const Tensor<T>& a_l, const Tensor<T>& a_r, const PmaParams<T>& p);

/// Full PMA map. A single-branch variant feeds that branch to both fuse inputs.
template <typename T>
Tensor<T> pma(const Tensor<T>& x, const PmaParams<T>& p, PmaBranch branch = PmaBranch::both);

}  // namespace rrnet
