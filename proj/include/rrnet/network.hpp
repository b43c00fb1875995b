#pragma once

#include <array>
#include <optional>
#include <vector>

#include "rrnet/attention.hpp"
#include "rrnet/config.hpp"
#include "rrnet/graph_reasoning.hpp"
#include "rrnet/params.hpp"

namespace rrnet {

/// Stage outputs of the encoder: X1, X2 (low level) and the reasoning
/// outputs of stages 3-5. `stages[s-1]` is stage s.
template <typename T>
struct EncoderFeatures {
  std::array<Tensor<T>, 5> stages;
};

template <typename T>
struct SaliencyPrediction {
  Tensor<T> map;  // H x W x 1, values in (0,1)
  std::vector<Tensor<T>> decoder_features;  // F_d^4 .. F_d^1
  std::vector<Tensor<T>> attention_maps;    // A_f^2, A_f^1 when PMA is on
};

/// conv(concat(up(f_d) * (a_f + 1), f_e)) followed by ReLU; without a_f the
/// multiplier is dropped. f_e must be exactly twice f_d's spatial size.
template <typename T>
Tensor<T> decode_fuse(const Tensor<T>& f_d, const Tensor<T>& f_e, const std::optional<Tensor<T>>& a_f,
                      const ConvWeights<T>& conv);

/// Class-balanced binary cross-entropy of a saliency map against a binary
/// label, -mean(p L log S + q (1 - L) log(1 - S)) with S clamped to
/// [1e-7, 1 - 1e-7]. Images with no positive (or no negative) pixel fall back
/// to unweighted BCE.
template <typename T>
Tensor<T> saliency_loss(const Tensor<T>& s, const Tensor<T>& label);

/// p = (B - B_m) / B and q = B_m / B for a label with B pixels, B_m positive.
template <typename T>
std::pair<T, T> balance_weights(const Tensor<T>& label);

inline constexpr double kProbClamp = 1e-7;

template <typename T>
class RRNet {
 public:
  /// Fresh network with Xavier weights and zero biases derived from `seed`.
  RRNet(NetworkConfig config, std::uint64_t seed);
  /// Network over existing parameters (e.g. a loaded checkpoint).
  RRNet(NetworkConfig config, ParamStore<T> params);

  const NetworkConfig& config() const { return config_; }
  const ParamStore<T>& params() const { return params_; }
  ParamStore<T>& params() { return params_; }

  /// Five backbone stages without any reasoning; stage s has stride 2^s.
  std::array<Tensor<T>, 5> backbone_forward(const Tensor<T>& image) const;
  /// Backbone with SRR/CRR (or non-local) after stages 3-5, feeding the next stage.
  EncoderFeatures<T> encode(const Tensor<T>& image) const;
  SaliencyPrediction<T> predict(const Tensor<T>& image) const;

  template <typename U>
  RRNet<U> cast() const {
    return RRNet<U>(config_, params_.template cast<U>());
  }

 private:
  void build(std::uint64_t seed);
  void bind();
  void check_image(const Tensor<T>& image) const;
  Tensor<T> stage(int s, const Tensor<T>& input) const;
  Tensor<T> reason(int s, const Tensor<T>& x) const;

  NetworkConfig config_;
  ParamStore<T> params_;
  std::array<std::array<ConvWeights<T>, 3>, 5> backbone_;
  std::array<ReasoningParams<T>, 3> spatial_rr_;
  std::array<ReasoningParams<T>, 3> channel_rr_;
  std::array<NonLocalParams<T>, 3> non_local_;
  std::array<PmaParams<T>, 2> pma_;
  std::array<ConvWeights<T>, 4> decoder_;  // index 0 produces F_d^4, 3 produces F_d^1
  std::array<ConvWeights<T>, 3> head_;
};

extern template class RRNet<float>;
extern template class RRNet<double>;

}  // namespace rrnet
