#include "rrnet/attention.hpp"

#include "rrnet/ops.hpp"

namespace rrnet {

template <typename T>
ConvWeights<T> make_conv(ParamStore<T>& store, const std::string& name, std::size_t k, std::size_t cin,
                         std::size_t cout) {
  store.create(name + ".w", {k, k, cin, cout}, InitKind::xavier);
  store.create(name + ".b", {cout}, InitKind::constant_zero);
  return bind_conv(store, name);
}

template <typename T>
ConvWeights<T> bind_conv(const ParamStore<T>& store, const std::string& name) {
  return {store.get(name + ".w"), store.get(name + ".b")};
}

template <typename T>
PmaParams<T> make_pma_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                             std::size_t att_kernel) {
  for (std::size_t i = 0; i < 3; ++i) {
    const auto k = kPmaScales[i];
    const auto tag = std::to_string(k);
    make_conv(store, prefix + ".left" + tag, k, 2, 1);
    make_conv(store, prefix + ".right" + tag, k, channels, channels);
    make_conv(store, prefix + ".right_att" + tag, att_kernel, 2, 1);
  }
  make_conv(store, prefix + ".fuse", 1, 2, 1);
  return bind_pma_params(store, prefix);
}

template <typename T>
PmaParams<T> bind_pma_params(const ParamStore<T>& store, const std::string& prefix) {
  PmaParams<T> p;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto tag = std::to_string(kPmaScales[i]);
    p.left_convs[i] = bind_conv(store, prefix + ".left" + tag);
    p.right_convs[i] = bind_conv(store, prefix + ".right" + tag);
    p.right_att_convs[i] = bind_conv(store, prefix + ".right_att" + tag);
  }
  p.fuse_conv = bind_conv(store, prefix + ".fuse");
  return p;
}

template <typename T>
Tensor<T> descriptor(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("descriptor: expected an H x W x C map, got " + shape_str(x.shape()));
  return concat<T>({channel_avg(x), channel_max(x)}, 2);
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const ConvWeights<T>& conv) {
  return sigmoid(conv2d(descriptor(x), conv.kernel, conv.bias));
}

template <typename T>
Tensor<T> left_branch(const Tensor<T>& x, const PmaParams<T>& p) {
  auto d = descriptor(x);
  std::vector<Tensor<T>> maps;
  for (const auto& c : p.left_convs) maps.push_back(sigmoid(conv2d(d, c.kernel, c.bias)));
  return mean_canonical(maps);
}

template <typename T>
Tensor<T> right_branch(const Tensor<T>& x, const PmaParams<T>& p) {
  if (x.rank() != 3) throw ShapeError("right_branch: expected an H x W x C map, got " + shape_str(x.shape()));
  std::vector<Tensor<T>> maps;
  for (std::size_t i = 0; i < 3; ++i) {
    auto pre = conv2d(x, p.right_convs[i].kernel, p.right_convs[i].bias);
    auto features = p.right_activation == FeatureActivation::relu ? relu(pre) : sigmoid(pre);
    maps.push_back(spatial_attention(features, p.right_att_convs[i]));
  }
  return mean_canonical(maps);
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& a_l, const Tensor<T>& a_r, const PmaParams<T>& p) {
  if (a_l.shape() != a_r.shape() || a_l.rank() != 3 || a_l.dim(2) != 1) {
    throw ShapeError("fuse: attention maps must both be H x W x 1, got " + shape_str(a_l.shape()) + " and " +
                     shape_str(a_r.shape()));
  }
  return sigmoid(conv2d(concat<T>({a_l, a_r}, 2), p.fuse_conv.kernel, p.fuse_conv.bias));
}

template <typename T>
Tensor<T> pma(const Tensor<T>& x, const PmaParams<T>& p, PmaBranch branch) {
  switch (branch) {
    case PmaBranch::left: {
      auto a = left_branch(x, p);
      return fuse(a, a, p);
    }
    case PmaBranch::right: {
      auto a = right_branch(x, p);
      return fuse(a, a, p);
    }
    case PmaBranch::both:
      break;
  }
  return fuse(left_branch(x, p), right_branch(x, p), p);
}

#define RRNET_INSTANTIATE_ATTENTION(T)                                                                     \
  template ConvWeights<T> make_conv(ParamStore<T>&, const std::string&, std::size_t, std::size_t, std::size_t); \
  template ConvWeights<T> bind_conv(const ParamStore<T>&, const std::string&);                             \
  template PmaParams<T> make_pma_params(ParamStore<T>&, const std::string&, std::size_t, std::size_t);     \
  template PmaParams<T> bind_pma_params(const ParamStore<T>&, const std::string&);                        \
  template Tensor<T> descriptor(const Tensor<T>&);                                                         \
  template Tensor<T> spatial_attention(const Tensor<T>&, const ConvWeights<T>&);                           \
  template Tensor<T> left_branch(const Tensor<T>&, const PmaParams<T>&);                                   \
  template Tensor<T> right_branch(const Tensor<T>&, const PmaParams<T>&);                                  \
  template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&, const PmaParams<T>&);                        \
  template Tensor<T> pma(const Tensor<T>&, const PmaParams<T>&, PmaBranch);

RRNET_INSTANTIATE_ATTENTION(float)
RRNET_INSTANTIATE_ATTENTION(double)

}  // namespace rrnet
