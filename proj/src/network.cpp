#include "rrnet/network.hpp"

#include <cmath>
#include <string>

#include "rrnet/ops.hpp"

namespace rrnet {

template <typename T>
Tensor<T> decode_fuse(const Tensor<T>& f_d, const Tensor<T>& f_e, const std::optional<Tensor<T>>& a_f,
                      const ConvWeights<T>& conv) {
  if (f_d.rank() != 3 || f_e.rank() != 3) {
    throw ShapeError("decode_fuse: expected H x W x C maps, got " + shape_str(f_d.shape()) + " and " +
                     shape_str(f_e.shape()));
  }
  if (f_e.dim(0) != 2 * f_d.dim(0) || f_e.dim(1) != 2 * f_d.dim(1)) {
    throw ShapeError("decode_fuse: encoder features " + shape_str(f_e.shape()) +
                     " must be twice the spatial size of decoder features " + shape_str(f_d.shape()));
  }
  auto up = upsample2x(f_d);
  if (a_f) {
    if (a_f->rank() != 3 || a_f->dim(0) != f_e.dim(0) || a_f->dim(1) != f_e.dim(1) || a_f->dim(2) != 1) {
      throw ShapeError("decode_fuse: attention map " + shape_str(a_f->shape()) + " does not match encoder features " +
                       shape_str(f_e.shape()));
    }
    up = mul(up, add_scalar(*a_f, T(1)));
  }
  return relu(conv2d(concat<T>({up, f_e}, 2), conv.kernel, conv.bias));
}

namespace {

template <typename T>
std::size_t count_positives(const Tensor<T>& label) {
  std::size_t positives = 0;
  for (T v : label.data()) {
    if (v != T(0) && v != T(1)) throw std::invalid_argument("saliency_loss: label values must be 0 or 1");
    positives += v == T(1);
  }
  return positives;
}

}  // namespace

template <typename T>
std::pair<T, T> balance_weights(const Tensor<T>& label) {
  const T b = static_cast<T>(label.numel());
  const T bm = static_cast<T>(count_positives(label));
  return {(b - bm) / b, bm / b};
}

template <typename T>
Tensor<T> saliency_loss(const Tensor<T>& s, const Tensor<T>& label) {
  if (s.shape() != label.shape()) {
    throw ShapeError("saliency_loss: prediction " + shape_str(s.shape()) + " and label " +
                     shape_str(label.shape()) + " differ");
  }
  const std::size_t positives = count_positives(label);
  // With one class absent the weighted loss is identically zero, so such
  // images fall back to plain BCE.
  const bool degenerate = positives == 0 || positives == label.numel();
  const auto [p, q] = degenerate ? std::pair<T, T>{T(1), T(1)} : balance_weights(label);
  std::vector<T> w_pos(label.numel()), w_neg(label.numel());
  auto lv = label.data();
  for (std::size_t i = 0; i < lv.size(); ++i) {
    w_pos[i] = p * lv[i];
    w_neg[i] = q * (T(1) - lv[i]);
  }
  const T lo = static_cast<T>(kProbClamp);
  auto sc = clamp(s, lo, T(1) - lo);
  auto pos = mul(Tensor<T>::from(s.shape(), std::move(w_pos)), log(sc));
  auto neg = mul(Tensor<T>::from(s.shape(), std::move(w_neg)), log(add_scalar(scale(sc, T(-1)), T(1))));
  return scale(mean(add(pos, neg)), T(-1));
}

template <typename T>
RRNet<T>::RRNet(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)), params_(seed) {
  config_.validate();
  build(seed);
  bind();
}

template <typename T>
RRNet<T>::RRNet(NetworkConfig config, ParamStore<T> params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  bind();
}

namespace {

std::string stage_name(const char* kind, int s) { return std::string(kind) + ".s" + std::to_string(s); }

}  // namespace

template <typename T>
void RRNet<T>::build(std::uint64_t) {
  const auto& ch = config_.stage_channels;
  const std::size_t width = config_.decoder_width;
  // Every parameter is created whatever the toggles, in a fixed order, so
  // ablation variants share their initial weights.
  std::size_t cin = 3;
  for (int s = 1; s <= 5; ++s) {
    const std::size_t c = ch[s - 1];
    for (int j = 0; j < 3; ++j)
      make_conv(params_, stage_name("backbone", s) + ".c" + std::to_string(j), 3, j == 0 ? cin : c, c);
    cin = c;
  }
  for (int s = 3; s <= 5; ++s) {
    const std::size_t c = ch[s - 1];
    const std::size_t hw = config_.stage_height(s) * config_.stage_width(s);
    make_reasoning_params(params_, stage_name("srr", s), c);
    make_reasoning_params(params_, stage_name("crr", s), hw);
    make_non_local_params(params_, stage_name("nonlocal", s), c);
  }
  for (int s = 1; s <= 2; ++s) make_pma_params(params_, stage_name("pma", s), ch[s - 1], config_.right_att_kernel);
  // decoder step producing F_d^{s-1} from F_d^s, s = 5..2
  std::size_t dec_in = ch[4];
  for (int s = 5; s >= 2; --s) {
    make_conv(params_, stage_name("decoder", s), 3, dec_in + ch[s - 2], width);
    dec_in = width;
  }
  make_conv(params_, "head.c0", 3, width, width);
  make_conv(params_, "head.c1", 3, width, width);
  make_conv(params_, "head.out", 1, width, 1);
}

template <typename T>
void RRNet<T>::bind() {
  for (int s = 1; s <= 5; ++s)
    for (int j = 0; j < 3; ++j) backbone_[s - 1][j] = bind_conv(params_, stage_name("backbone", s) + ".c" + std::to_string(j));
  for (int s = 3; s <= 5; ++s) {
    spatial_rr_[s - 3] = bind_reasoning_params(params_, stage_name("srr", s));
    channel_rr_[s - 3] = bind_reasoning_params(params_, stage_name("crr", s));
    for (auto* rr : {&spatial_rr_[s - 3], &channel_rr_[s - 3]}) {
      rr->shared_projection = config_.shared_projection;
      rr->residual = config_.rr_residual;
    }
    non_local_[s - 3] = bind_non_local_params(params_, stage_name("nonlocal", s));
    const std::size_t hw = config_.stage_height(s) * config_.stage_width(s);
    if (channel_rr_[s - 3].features() != hw || spatial_rr_[s - 3].features() != config_.stage_channels[s - 1]) {
      throw ConfigError("reasoning parameters at stage " + std::to_string(s) + " do not match the configured sizes");
    }
  }
  for (int s = 1; s <= 2; ++s) {
    pma_[s - 1] = bind_pma_params(params_, stage_name("pma", s));
    pma_[s - 1].right_activation = config_.right_activation;
  }
  for (int s = 5; s >= 2; --s) decoder_[5 - s] = bind_conv(params_, stage_name("decoder", s));
  head_ = {bind_conv(params_, "head.c0"), bind_conv(params_, "head.c1"), bind_conv(params_, "head.out")};
}

template <typename T>
void RRNet<T>::check_image(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("expected an H x W x 3 image, got " + shape_str(image.shape()));
  }
  if (image.dim(0) % 32 || image.dim(1) % 32) {
    throw ShapeError("image size " + std::to_string(image.dim(0)) + "x" + std::to_string(image.dim(1)) +
                     " is not divisible by 32; resize it first");
  }
  if (image.dim(0) != config_.input_height || image.dim(1) != config_.input_width) {
    throw ShapeError("image size " + std::to_string(image.dim(0)) + "x" + std::to_string(image.dim(1)) +
                     " differs from the configured input size " + std::to_string(config_.input_height) + "x" +
                     std::to_string(config_.input_width));
  }
}

template <typename T>
Tensor<T> RRNet<T>::stage(int s, const Tensor<T>& input) const {
  const auto& convs = backbone_[s - 1];
  auto x = relu(conv2d(input, convs[0].kernel, convs[0].bias, 2));
  x = relu(conv2d(x, convs[1].kernel, convs[1].bias));
  return relu(conv2d(x, convs[2].kernel, convs[2].bias));
}

template <typename T>
Tensor<T> RRNet<T>::reason(int s, const Tensor<T>& x) const {
  if (s < 3) return x;
  if (config_.use_nonlocal) return non_local_block(x, non_local_[s - 3]);
  auto out = x;
  if (config_.use_srr) out = srr(out, spatial_rr_[s - 3]);
  if (config_.use_crr) out = crr(out, channel_rr_[s - 3]);
  return out;
}

template <typename T>
std::array<Tensor<T>, 5> RRNet<T>::backbone_forward(const Tensor<T>& image) const {
  if (image.rank() == 3 && (image.dim(0) % 32 || image.dim(1) % 32)) {
    throw ShapeError("image size " + std::to_string(image.dim(0)) + "x" + std::to_string(image.dim(1)) +
                     " is not divisible by 32");
  }
  check_image(image);
  std::array<Tensor<T>, 5> out;
  auto x = image;
  for (int s = 1; s <= 5; ++s) x = out[s - 1] = stage(s, x);
  return out;
}

template <typename T>
EncoderFeatures<T> RRNet<T>::encode(const Tensor<T>& image) const {
  check_image(image);
  EncoderFeatures<T> f;
  auto x = image;
  for (int s = 1; s <= 5; ++s) x = f.stages[s - 1] = reason(s, stage(s, x));
  return f;
}

template <typename T>
SaliencyPrediction<T> RRNet<T>::predict(const Tensor<T>& image) const {
  auto enc = encode(image);
  SaliencyPrediction<T> out;
  Tensor<T> f_d = enc.stages[4];
  for (int s = 5; s >= 2; --s) {
    const auto& f_e = enc.stages[s - 2];
    std::optional<Tensor<T>> a_f;
    if (s <= 3 && config_.use_pma) {
      a_f = pma(f_e, pma_[s - 2], config_.pma_branch);
      out.attention_maps.push_back(*a_f);
    }
    f_d = decode_fuse(f_d, f_e, a_f, decoder_[5 - s]);
    out.decoder_features.push_back(f_d);
  }
  auto h = relu(conv2d(f_d, head_[0].kernel, head_[0].bias));
  h = relu(conv2d(h, head_[1].kernel, head_[1].bias));
  out.map = upsample2x(sigmoid(conv2d(h, head_[2].kernel, head_[2].bias)));
  return out;
}

#define RRNET_INSTANTIATE_NETWORK(T)                                                                   \
  template Tensor<T> decode_fuse(const Tensor<T>&, const Tensor<T>&, const std::optional<Tensor<T>>&, \
                                 const ConvWeights<T>&);                                               \
  template Tensor<T> saliency_loss(const Tensor<T>&, const Tensor<T>&);                                \
  template std::pair<T, T> balance_weights(const Tensor<T>&);                                          \
  template class RRNet<T>;

RRNET_INSTANTIATE_NETWORK(float)
RRNET_INSTANTIATE_NETWORK(double)

}  // namespace rrnet
