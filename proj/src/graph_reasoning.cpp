#include "rrnet/graph_reasoning.hpp"

#include <cmath>

#include "rrnet/ops.hpp"

namespace rrnet {

template <typename T>
GraphFeatures<T> build_graph(const Tensor<T>& x, GraphMode mode) {
  if (x.rank() != 3) throw ShapeError("build_graph: expected an H x W x C map, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  GraphFeatures<T> g;
  g.origin_shape = {h, w, c};
  g.mode = mode;
  g.matrix = reshape(x, {h * w, c});
  if (mode == GraphMode::channel) g.matrix = transpose(g.matrix);
  return g;
}

template <typename T>
Tensor<T> restore_graph(const GraphFeatures<T>& like, const Tensor<T>& matrix) {
  const auto [h, w, c] = like.origin_shape;
  const Shape expect = like.mode == GraphMode::spatial ? Shape{h * w, c} : Shape{c, h * w};
  if (matrix.shape() != expect) {
    throw ShapeError("restore_graph: expected " + shape_str(expect) + ", got " + shape_str(matrix.shape()));
  }
  Tensor<T> m = like.mode == GraphMode::channel ? transpose(matrix) : matrix;
  return reshape(m, {h, w, c});
}

template <typename T>
ReasoningParams<T> make_reasoning_params(ParamStore<T>& store, const std::string& prefix, std::size_t features) {
  const std::size_t f = features;
  store.create(prefix + ".proj.w", {f, f}, InitKind::xavier);
  store.create(prefix + ".proj.b", {1, f}, InitKind::constant_zero);
  store.create(prefix + ".proj2.w", {f, f}, InitKind::xavier);
  store.create(prefix + ".proj2.b", {1, f}, InitKind::constant_zero);
  store.create(prefix + ".lambda.w", {f, f}, InitKind::xavier);
  store.create(prefix + ".lambda.b", {1, f}, InitKind::constant_zero);
  store.create(prefix + ".theta", {f, f}, InitKind::xavier);
  return bind_reasoning_params(store, prefix);
}

template <typename T>
ReasoningParams<T> bind_reasoning_params(const ParamStore<T>& store, const std::string& prefix) {
  ReasoningParams<T> p;
  p.proj_w = store.get(prefix + ".proj.w");
  p.proj_b = store.get(prefix + ".proj.b");
  p.proj2_w = store.get(prefix + ".proj2.w");
  p.proj2_b = store.get(prefix + ".proj2.b");
  p.lambda_w = store.get(prefix + ".lambda.w");
  p.lambda_b = store.get(prefix + ".lambda.b");
  p.theta = store.get(prefix + ".theta");
  return p;
}

namespace {

template <typename T>
void check_params(const GraphFeatures<T>& g, const ReasoningParams<T>& p, const char* op) {
  const std::size_t f = g.features();
  auto square = [f](const Tensor<T>& t) { return t.rank() == 2 && t.dim(0) == f && t.dim(1) == f; };
  auto row = [f](const Tensor<T>& t) { return t.numel() == f; };
  bool ok = square(p.proj_w) && row(p.proj_b) && square(p.lambda_w) && row(p.lambda_b) && square(p.theta);
  if (ok && !p.shared_projection) ok = square(p.proj2_w) && row(p.proj2_b);
  if (!ok) {
    throw ShapeError(std::string(op) + ": reasoning parameters do not match " + std::to_string(f) +
                     " vertex features (theta is " + shape_str(p.theta.shape()) + ")");
  }
}

template <typename T>
Tensor<T> as_row(const Tensor<T>& b) {
  return b.rank() == 2 && b.dim(0) == 1 ? b : reshape(b, {1, b.numel()});
}

}  // namespace

template <typename T>
Tensor<T> project_vertices(const GraphFeatures<T>& g, const Tensor<T>& w, const Tensor<T>& b) {
  return relu(add(matmul_rows(g.matrix, w), as_row(b)));
}

template <typename T>
Tensor<T> metric_diagonal(const GraphFeatures<T>& g, const ReasoningParams<T>& p) {
  auto pooled = global_vertex_avg(g.matrix);
  return relu(add(matmul_rows(pooled, p.lambda_w), as_row(p.lambda_b)));
}

template <typename T>
Tensor<T> adjacency(const GraphFeatures<T>& g, const ReasoningParams<T>& p) {
  check_params(g, p, "adjacency");
  auto left = project_vertices(g, p.proj_w, p.proj_b);
  auto right = p.shared_projection ? left : project_vertices(g, p.proj2_w, p.proj2_b);
  auto adj = diag_bilinear(left, metric_diagonal(g, p), right);
  for (T v : adj.data()) {
    if (!std::isfinite(v)) throw NumericalError("adjacency: non-finite entry");
  }
  return adj;
}

template <typename T>
Tensor<T> normalized_laplacian(const Tensor<T>& adj, T eps) {
  if (adj.rank() != 2 || adj.dim(0) != adj.dim(1)) {
    throw ShapeError("normalized_laplacian: adjacency must be square, got " + shape_str(adj.shape()));
  }
  for (T v : adj.data()) {
    if (v < T(0)) throw std::invalid_argument("normalized_laplacian: adjacency has a negative entry");
    if (!std::isfinite(v)) throw NumericalError("normalized_laplacian: non-finite adjacency entry");
  }
  const std::size_t n = adj.dim(0);
  auto inv_sqrt_deg = rsqrt(clamp_min(row_sum_canonical(adj), eps));  // n x 1
  // r_i * r_j is one product per entry, so the scaling stays symmetric.
  auto scaling = matmul(inv_sqrt_deg, transpose(inv_sqrt_deg));
  return sub(identity_matrix<T>(n), mul(adj, scaling));
}

template <typename T>
Tensor<T> graph_reason(const GraphFeatures<T>& g, const ReasoningParams<T>& p) {
  auto lap = normalized_laplacian(adjacency(g, p));
  auto out = relu(matmul_rows(matmul_canonical(lap, g.matrix), p.theta));
  return restore_graph(g, out);
}

template <typename T>
Tensor<T> srr(const Tensor<T>& x, const ReasoningParams<T>& p) {
  auto out = graph_reason(build_graph(x, GraphMode::spatial), p);
  return p.residual ? add(x, out) : out;
}

template <typename T>
Tensor<T> crr(const Tensor<T>& x, const ReasoningParams<T>& p) {
  auto out = graph_reason(build_graph(x, GraphMode::channel), p);
  return p.residual ? add(x, out) : out;
}

template <typename T>
NonLocalParams<T> make_non_local_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels) {
  const std::size_t inner = std::max<std::size_t>(1, channels / 2);
  for (const char* name : {".theta", ".phi", ".g"}) {
    store.create(prefix + name + ".w", {channels, inner}, InitKind::xavier);
    store.create(prefix + name + ".b", {1, inner}, InitKind::constant_zero);
  }
  store.create(prefix + ".out.w", {inner, channels}, InitKind::xavier);
  store.create(prefix + ".out.b", {1, channels}, InitKind::constant_zero);
  return bind_non_local_params(store, prefix);
}

template <typename T>
NonLocalParams<T> bind_non_local_params(const ParamStore<T>& store, const std::string& prefix) {
  NonLocalParams<T> p;
  p.theta_w = store.get(prefix + ".theta.w");
  p.theta_b = store.get(prefix + ".theta.b");
  p.phi_w = store.get(prefix + ".phi.w");
  p.phi_b = store.get(prefix + ".phi.b");
  p.g_w = store.get(prefix + ".g.w");
  p.g_b = store.get(prefix + ".g.b");
  p.out_w = store.get(prefix + ".out.w");
  p.out_b = store.get(prefix + ".out.b");
  return p;
}

namespace {

template <typename T>
Tensor<T> pixel_rows(const Tensor<T>& x, const NonLocalParams<T>& p) {
  if (x.rank() != 3) throw ShapeError("non_local_block: expected an H x W x C map, got " + shape_str(x.shape()));
  if (p.theta_w.rank() != 2 || p.theta_w.dim(0) != x.dim(2) || p.out_w.dim(1) != x.dim(2)) {
    throw ShapeError("non_local_block: parameters sized for " + std::to_string(p.theta_w.dim(0)) +
                     " channels, input has " + std::to_string(x.dim(2)));
  }
  return reshape(x, {x.dim(0) * x.dim(1), x.dim(2)});
}

template <typename T>
Tensor<T> affine(const Tensor<T>& rows, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(rows, w), as_row(b));
}

}  // namespace

template <typename T>
Tensor<T> non_local_attention(const Tensor<T>& x, const NonLocalParams<T>& p) {
  auto rows = pixel_rows(x, p);
  auto theta = affine(rows, p.theta_w, p.theta_b);
  auto phi = affine(rows, p.phi_w, p.phi_b);
  return softmax_rows(matmul(theta, transpose(phi)));
}

template <typename T>
Tensor<T> non_local_block(const Tensor<T>& x, const NonLocalParams<T>& p) {
  auto rows = pixel_rows(x, p);
  auto attn = non_local_attention(x, p);
  auto gx = affine(rows, p.g_w, p.g_b);
  auto z = affine(matmul(attn, gx), p.out_w, p.out_b);
  return add(x, reshape(z, x.shape()));
}

#define RRNET_INSTANTIATE_GRAPH(T)                                                                   \
  template GraphFeatures<T> build_graph(const Tensor<T>&, GraphMode);                                \
  template Tensor<T> restore_graph(const GraphFeatures<T>&, const Tensor<T>&);                       \
  template ReasoningParams<T> make_reasoning_params(ParamStore<T>&, const std::string&, std::size_t); \
  template ReasoningParams<T> bind_reasoning_params(const ParamStore<T>&, const std::string&);       \
  template Tensor<T> project_vertices(const GraphFeatures<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> metric_diagonal(const GraphFeatures<T>&, const ReasoningParams<T>&);            \
  template Tensor<T> adjacency(const GraphFeatures<T>&, const ReasoningParams<T>&);                  \
  template Tensor<T> normalized_laplacian(const Tensor<T>&, T);                                      \
  template Tensor<T> graph_reason(const GraphFeatures<T>&, const ReasoningParams<T>&);               \
  template Tensor<T> srr(const Tensor<T>&, const ReasoningParams<T>&);                               \
  template Tensor<T> crr(const Tensor<T>&, const ReasoningParams<T>&);                               \
  template NonLocalParams<T> make_non_local_params(ParamStore<T>&, const std::string&, std::size_t); \
  template NonLocalParams<T> bind_non_local_params(const ParamStore<T>&, const std::string&);        \
  template Tensor<T> non_local_attention(const Tensor<T>&, const NonLocalParams<T>&);                \
  template Tensor<T> non_local_block(const Tensor<T>&, const NonLocalParams<T>&);

RRNET_INSTANTIATE_GRAPH(float)
RRNET_INSTANTIATE_GRAPH(double)

}  // namespace rrnet
