#pragma once

#include <array>
#include <string>

#include "rrnet/params.hpp"
#include "rrnet/tensor.hpp"

namespace rrnet {

enum class GraphMode { spatial, channel };

/// A feature map viewed as a graph: a1 vertexes with a2 features each.
/// spatial: a1 = H*W, a2 = C (vertex k is pixel (k / W, k % W)).
/// channel: a1 = C,   a2 = H*W (vertex k is channel k).
template <typename T>
struct GraphFeatures {
  Tensor<T> matrix;
  std::array<std::size_t, 3> origin_shape{};
  GraphMode mode = GraphMode::spatial;

  std::size_t vertices() const { return matrix.dim(0); }
  std::size_t features() const { return matrix.dim(1); }
};

template <typename T>
GraphFeatures<T> build_graph(const Tensor<T>& x, GraphMode mode);

/// Reshapes an a1 x a2 matrix back to the H x W x C layout `like` came from.
template <typename T>
Tensor<T> restore_graph(const GraphFeatures<T>& like, const Tensor<T>& matrix);

/// Weights of one relational reasoning unit (SRR or CRR).
///
/// proj is a 1x1 convolution over the feature axis (a2 -> a2) followed by
/// ReLU; with shared_projection the same weights serve both sides of the
/// vertex dot product, which makes the adjacency symmetric. lambda is the
/// 1x1 convolution applied to the vertex-averaged features whose ReLU output
/// becomes the diagonal metric. theta is the square a2 x a2 reasoning weight.
template <typename T>
struct ReasoningParams {
  Tensor<T> proj_w, proj_b;
  Tensor<T> proj2_w, proj2_b;  // used only when shared_projection is false
  Tensor<T> lambda_w, lambda_b;
  Tensor<T> theta;
  bool shared_projection = true;
  bool residual = false;

  std::size_t features() const { return theta.dim(0); }
};

template <typename T>
ReasoningParams<T> make_reasoning_params(ParamStore<T>& store, const std::string& prefix,
                                         std::size_t features);
template <typename T>
ReasoningParams<T> bind_reasoning_params(const ParamStore<T>& store, const std::string& prefix);

/// relu(proj(G)), the projected vertex features.
template <typename T>
Tensor<T> project_vertices(const GraphFeatures<T>& g, const Tensor<T>& w, const Tensor<T>& b);

/// diag(relu(lambda(vertex-average of G))) as a 1 x a2 row.
template <typename T>
Tensor<T> metric_diagonal(const GraphFeatures<T>& g, const ReasoningParams<T>& p);

/// A_ij = proj(G)_i . Lambda . proj(G)_j^T, a1 x a1, non-negative.
template <typename T>
Tensor<T> adjacency(const GraphFeatures<T>& g, const ReasoningParams<T>& p);

/// I - D^-1/2 A D^-1/2 with d_i = max(sum_j A_ij, eps).
template <typename T>
Tensor<T> normalized_laplacian(const Tensor<T>& adj, T eps = T(1e-6));

/// relu(L G Theta) reshaped to the graph's origin shape.
template <typename T>
Tensor<T> graph_reason(const GraphFeatures<T>& g, const ReasoningParams<T>& p);

/// Spatial relational reasoning on an H x W x C map.
template <typename T>
Tensor<T> srr(const Tensor<T>& x, const ReasoningParams<T>& p);

/// Channel relational reasoning on an H x W x C map.
template <typename T>
Tensor<T> crr(const Tensor<T>& x, const ReasoningParams<T>& p);

/// Embedded-Gaussian non-local block with a residual connection.
template <typename T>
struct NonLocalParams {
  Tensor<T> theta_w, theta_b;
  Tensor<T> phi_w, phi_b;
  Tensor<T> g_w, g_b;
  Tensor<T> out_w, out_b;
};

template <typename T>
NonLocalParams<T> make_non_local_params(ParamStore<T>& store, const std::string& prefix,
                                        std::size_t channels);
template <typename T>
NonLocalParams<T> bind_non_local_params(const ParamStore<T>& store, const std::string& prefix);

/// softmax(theta(x) phi(x)^T), the N x N pairwise attention (N = H*W).
template <typename T>
Tensor<T> non_local_attention(const Tensor<T>& x, const NonLocalParams<T>& p);

template <typename T>
Tensor<T> non_local_block(const Tensor<T>& x, const NonLocalParams<T>& p);

}  // namespace rrnet
