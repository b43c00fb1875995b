#pragma once

// Finite-difference cases for every differentiable operation. Shared by the
// unit tests and the acceptance binary.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rrnet/attention.hpp"
#include "rrnet/config.hpp"
#include "rrnet/dataio.hpp"
#include "rrnet/gradcheck.hpp"
#include "rrnet/graph_reasoning.hpp"
#include "rrnet/network.hpp"
#include "rrnet/ops.hpp"
#include "unit/support.hpp"

namespace rrnet::test {

inline constexpr double kGradTolerance = 1e-4;
inline constexpr int kGradTrials = 20;

struct GradCase {
  std::string name;
  // Builds the inputs and the scalar function for one trial.
  std::function<std::pair<ScalarFn, std::vector<Tensor<double>>>(Rng&)> setup;
};

using V = std::vector<Tensor<double>>;

/// Values at least `gap` away from zero, so ReLU-style kinks stay outside the FD stencil.
inline Tensor<double> away_from_zero(Rng& rng, const Shape& s, double gap = 0.05) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = (rng.coin() ? 1 : -1) * rng.uniform(gap, 1.0);
  return Tensor<double>::from(s, std::move(v), true);
}

inline Tensor<double> leaf(Rng& rng, const Shape& s, double lo = -1, double hi = 1) {
  return rng.tensor(s, lo, hi, true);
}

inline std::vector<GradCase> grad_cases() {
  std::vector<GradCase> c;
  auto unary = [&c](std::string name, std::function<Tensor<double>(const Tensor<double>&)> op, Shape s,
                    double lo = -1, double hi = 1) {
    c.push_back({std::move(name), [op, s, lo, hi](Rng& rng) {
                   ScalarFn f = [op](const V& x) { return weighted_sum(op(x[0])); };
                   return std::pair{f, V{leaf(rng, s, lo, hi)}};
                 }});
  };
  auto binary = [&c](std::string name, std::function<Tensor<double>(const Tensor<double>&, const Tensor<double>&)> op,
                     Shape sa, Shape sb) {
    c.push_back({std::move(name), [op, sa, sb](Rng& rng) {
                   ScalarFn f = [op](const V& x) { return weighted_sum(op(x[0], x[1])); };
                   return std::pair{f, V{leaf(rng, sa), leaf(rng, sb)}};
                 }});
  };

  binary("add", [](auto& a, auto& b) { return add(a, b); }, {3, 4}, {3, 4});
  binary("add broadcast", [](auto& a, auto& b) { return add(a, b); }, {3, 4, 2}, {1, 4, 1});
  binary("sub broadcast", [](auto& a, auto& b) { return sub(a, b); }, {2, 5}, {2, 1});
  binary("mul", [](auto& a, auto& b) { return mul(a, b); }, {4, 3}, {4, 3});
  binary("mul broadcast", [](auto& a, auto& b) { return mul(a, b); }, {1, 3, 2}, {4, 3, 1});
  unary("scale", [](auto& x) { return scale(x, -1.7); }, {5});
  unary("add_scalar", [](auto& x) { return add_scalar(x, 0.3); }, {2, 3});
  binary("matmul", [](auto& a, auto& b) { return matmul(a, b); }, {4, 5}, {5, 3});
  unary("transpose", [](auto& x) { return transpose(x); }, {3, 5});
  unary("reshape", [](auto& x) { return reshape(x, {6, 2}); }, {3, 4});
  binary("concat axis 0", [](auto& a, auto& b) { return concat<double>({a, b}, 0); }, {2, 3}, {4, 3});
  binary("concat last axis", [](auto& a, auto& b) { return concat<double>({a, b}, 2); }, {2, 3, 1}, {2, 3, 2});
  c.push_back({"relu", [](Rng& rng) {
                 ScalarFn f = [](const V& x) { return weighted_sum(relu(x[0])); };
                 return std::pair{f, V{away_from_zero(rng, {4, 4})}};
               }});
  unary("sigmoid", [](auto& x) { return sigmoid(x); }, {3, 4}, -4, 4);
  unary("log", [](auto& x) { return log(x); }, {6}, 0.2, 2.0);
  unary("clamp", [](auto& x) { return clamp(x, -0.5, 0.5); }, {8}, -0.45, 0.45);
  unary("clamp outside", [](auto& x) { return clamp(x, -0.5, 0.5); }, {8}, 0.6, 1.0);
  unary("clamp_min", [](auto& x) { return clamp_min(x, 0.1); }, {8}, 0.2, 1.0);
  unary("rsqrt", [](auto& x) { return rsqrt(x); }, {5}, 0.3, 3.0);
  unary("softmax_rows", [](auto& x) { return softmax_rows(x); }, {3, 6}, -3, 3);
  unary("sum", [](auto& x) { return sum(mul(x, x)); }, {3, 3});
  unary("mean", [](auto& x) { return mean(mul(x, x)); }, {2, 5});
  unary("sum_axis 0", [](auto& x) { return sum_axis(x, 0); }, {3, 4, 2});
  unary("sum_axis 1", [](auto& x) { return sum_axis(x, 1); }, {3, 4, 2});
  for (std::size_t k : {1u, 3u, 5u}) {
    for (int stride : {1, 2}) {
      c.push_back({"conv2d k" + std::to_string(k) + " stride " + std::to_string(stride), [k, stride](Rng& rng) {
                     ScalarFn f = [stride](const V& x) { return weighted_sum(conv2d(x[0], x[1], x[2], stride)); };
                     return std::pair{f, V{leaf(rng, {5, 6, 2}), leaf(rng, {k, k, 2, 3}), leaf(rng, {3})}};
                   }});
    }
  }
  unary("channel_avg", [](auto& x) { return channel_avg(x); }, {3, 3, 4});
  unary("channel_max", [](auto& x) { return channel_max(x); }, {3, 3, 4});
  unary("global_vertex_avg", [](auto& x) { return global_vertex_avg(x); }, {5, 3});
  unary("upsample2x", [](auto& x) { return upsample2x(x); }, {2, 3, 2});
  unary("avgpool2x2", [](auto& x) { return avgpool2x2(x); }, {4, 6, 2});
  binary("matmul_canonical", [](auto& a, auto& b) { return matmul_canonical(a, b); }, {4, 5}, {5, 3});
  binary("matmul_rows", [](auto& a, auto& b) { return matmul_rows(a, b); }, {4, 5}, {5, 3});
  unary("row_sum_canonical", [](auto& x) { return row_sum_canonical(x); }, {4, 5});
  binary("mean_canonical", [](auto& a, auto& b) { return mean_canonical<double>({a, b, mul(a, b)}); }, {3, 2}, {3, 2});
  c.push_back({"diag_bilinear", [](Rng& rng) {
                 ScalarFn f = [](const V& x) { return weighted_sum(diag_bilinear(x[0], x[1], x[2])); };
                 return std::pair{f, V{leaf(rng, {4, 3}), leaf(rng, {1, 3}), leaf(rng, {4, 3})}};
               }});
  c.push_back({"diag_bilinear shared", [](Rng& rng) {
                 ScalarFn f = [](const V& x) { return weighted_sum(diag_bilinear(x[0], x[1], x[0])); };
                 return std::pair{f, V{leaf(rng, {4, 3}), leaf(rng, {1, 3})}};
               }});

  // graph reasoning: weights are inputs too
  auto reasoning = [](Rng& rng, std::size_t f) {
    ParamStore<double> store(rng.engine()());
    auto p = make_reasoning_params(store, "rr", f);
    // non-zero biases exercise the bias paths
    for (auto* b : {&p.proj_b, &p.lambda_b}) {
      auto d = b->mutable_data();
      for (auto& v : d) v = rng.uniform(0.05, 0.3);
    }
    return p;
  };
  auto rr_inputs = [](ReasoningParams<double>& p, Tensor<double> x) {
    return V{std::move(x), p.proj_w, p.proj_b, p.lambda_w, p.lambda_b, p.theta};
  };
  auto rr_bind = [](const ReasoningParams<double>& base, const V& x) {
    auto p = base;
    p.proj_w = x[1];
    p.proj_b = x[2];
    p.lambda_w = x[3];
    p.lambda_b = x[4];
    p.theta = x[5];
    return p;
  };
  c.push_back({"build_graph and restore_graph", [](Rng& rng) {
                 ScalarFn f = [](const V& x) {
                   auto g = build_graph(x[0], GraphMode::channel);
                   return weighted_sum(restore_graph(g, mul(g.matrix, g.matrix)));
                 };
                 return std::pair{f, V{leaf(rng, {2, 3, 4})}};
               }});
  c.push_back({"adjacency", [=](Rng& rng) {
                 auto p = reasoning(rng, 3);
                 ScalarFn f = [=](const V& x) {
                   return weighted_sum(adjacency(build_graph(x[0], GraphMode::spatial), rr_bind(p, x)));
                 };
                 return std::pair{f, rr_inputs(p, leaf(rng, {2, 3, 3}, 0.1, 1.0))};
               }});
  c.push_back({"normalized_laplacian", [](Rng& rng) {
                 ScalarFn f = [](const V& x) {
                   return weighted_sum(normalized_laplacian(add(x[0], transpose(x[0]))));
                 };
                 return std::pair{f, V{leaf(rng, {4, 4}, 0.1, 1.0)}};
               }});
  c.push_back({"srr", [=](Rng& rng) {
                 auto p = reasoning(rng, 3);
                 ScalarFn f = [=](const V& x) { return weighted_sum(srr(x[0], rr_bind(p, x))); };
                 return std::pair{f, rr_inputs(p, leaf(rng, {3, 3, 3}, 0.1, 1.0))};
               }});
  c.push_back({"crr", [=](Rng& rng) {
                 auto p = reasoning(rng, 6);
                 ScalarFn f = [=](const V& x) { return weighted_sum(crr(x[0], rr_bind(p, x))); };
                 return std::pair{f, rr_inputs(p, leaf(rng, {2, 3, 4}, 0.1, 1.0))};
               }});
  c.push_back({"non_local_block", [](Rng& rng) {
                 ParamStore<double> store(rng.engine()());
                 const auto p = make_non_local_params(store, "nl", 3);
                 ScalarFn f = [p](const V& x) {
                   auto q = p;
                   q.theta_w = x[1];
                   q.phi_w = x[2];
                   q.g_w = x[3];
                   q.out_w = x[4];
                   return weighted_sum(non_local_block(x[0], q));
                 };
                 return std::pair{f, V{leaf(rng, {3, 2, 3}), p.theta_w, p.phi_w, p.g_w, p.out_w}};
               }});

  // attention
  c.push_back({"descriptor", [](Rng& rng) {
                 ScalarFn f = [](const V& x) { return weighted_sum(descriptor(x[0])); };
                 return std::pair{f, V{leaf(rng, {3, 4, 3})}};
               }});
  for (auto act : {FeatureActivation::relu, FeatureActivation::sigmoid}) {
    for (auto branch : {PmaBranch::both, PmaBranch::left, PmaBranch::right}) {
      std::string name = std::string("pma ") +
                         (branch == PmaBranch::both ? "both" : branch == PmaBranch::left ? "left" : "right") +
                         (act == FeatureActivation::relu ? " relu" : " sigmoid");
      c.push_back({name, [act, branch](Rng& rng) {
                     ParamStore<double> store(rng.engine()());
                     auto p = make_pma_params(store, "pma", 2, 5);
                     p.right_activation = act;
                     V in{leaf(rng, {5, 5, 2})};
                     for (const auto& e : store.entries()) in.push_back(e.value);
                     ScalarFn f = [p, branch](const V& x) { return weighted_sum(pma(x[0], p, branch)); };
                     return std::pair{f, in};
                   }});
    }
  }
  c.push_back({"fuse", [](Rng& rng) {
                 ParamStore<double> store(rng.engine()());
                 const auto p = make_pma_params(store, "pma", 2, 3);
                 ScalarFn f = [p](const V& x) {
                   auto q = p;
                   q.fuse_conv.kernel = x[2];
                   return weighted_sum(fuse(x[0], x[1], q));
                 };
                 return std::pair{f, V{leaf(rng, {3, 3, 1}, 0, 1), leaf(rng, {3, 3, 1}, 0, 1), p.fuse_conv.kernel}};
               }});
  for (bool with_att : {false, true}) {
    c.push_back({with_att ? "decode_fuse with attention" : "decode_fuse", [with_att](Rng& rng) {
                   ParamStore<double> store(rng.engine()());
                   const auto conv = make_conv(store, "dec", 3, 5, 2);
                   ScalarFn f = [conv, with_att](const V& x) {
                     std::optional<Tensor<double>> a;
                     if (with_att) a = x[3];
                     return weighted_sum(decode_fuse(x[0], x[1], a, {x[2], conv.bias}));
                   };
                   return std::pair{f, V{leaf(rng, {2, 2, 2}), leaf(rng, {4, 4, 3}), conv.kernel,
                                         leaf(rng, {4, 4, 1}, 0, 1)}};
                 }});
  }

  // loss, both weighted and fallback
  for (int kind = 0; kind < 3; ++kind) {
    static const char* names[] = {"saliency_loss", "saliency_loss all background", "saliency_loss all foreground"};
    c.push_back({names[kind], [kind](Rng& rng) {
                   std::vector<double> lab(16);
                   for (auto& v : lab) v = kind == 1 ? 0.0 : kind == 2 ? 1.0 : (rng.coin(0.3) ? 1.0 : 0.0);
                   if (kind == 0) lab[0] = 1.0, lab[1] = 0.0;
                   const auto label = Tensor<double>::from({4, 4, 1}, lab);
                   ScalarFn f = [label](const V& x) { return saliency_loss(x[0], label); };
                   return std::pair{f, V{leaf(rng, {4, 4, 1}, 0.05, 0.95)}};
                 }});
  }
  return c;
}

struct GradSuiteResult {
  std::string name;
  double max_rel_error = 0;
  std::string worst;
  std::size_t checked = 0;
  std::size_t nonsmooth = 0;
};

inline GradSuiteResult run_grad_case(const GradCase& gc, int trials = kGradTrials, std::uint64_t seed = 1) {
  GradSuiteResult out;
  out.name = gc.name;
  for (int t = 0; t < trials; ++t) {
    Rng rng(seed * 1000003u + static_cast<std::uint64_t>(t));
    auto [f, inputs] = gc.setup(rng);
    const auto r = grad_check(f, inputs);
    out.checked += r.checked;
    if (r.max_rel_error >= out.max_rel_error) {
      out.max_rel_error = r.max_rel_error;
      out.worst = "trial " + std::to_string(t) + " " + r.worst;
    }
  }
  return out;
}

/// Every parameter and the image of a 32 x 32 toy network, differentiated
/// end to end through the class-balanced loss. `entries` caps the entries
/// checked per tensor.
inline GradSuiteResult run_network_grad_case(const std::string& ablation, std::size_t entries, std::uint64_t seed) {
  NetworkConfig base;
  base.stage_channels = {4, 4, 4, 4, 4};
  base.decoder_width = 4;
  base.input_height = base.input_width = 32;
  const auto cfg = ablation_config(ablation, base);
  RRNet<double> net(cfg, seed);
  // Zero biases shrink the activations about 2x per ReLU layer, to ~1e-5 at stage 5 of
  // this 4-channel toy, where h = 1e-5 straddles ReLU kinks and the degree clamp.
  // Positive biases move the check point to a generic one with O(0.1) activations.
  Rng rng(seed);
  for (auto& e : net.params().entries())
    if (e.name.size() > 2 && e.name.compare(e.name.size() - 2, 2, ".b") == 0)
      for (auto& v : e.value.mutable_data()) v = rng.uniform(0.05, 0.2);
  const auto sample = synth_dataset(1, seed, 32).front();
  auto to_double = [](const Raster& r, bool grad) {
    std::vector<double> v(r.values.begin(), r.values.end());
    return Tensor<double>::from({r.height, r.width, r.channels}, std::move(v), grad);
  };
  const auto image = to_double(sample.image, true);
  const auto label = to_double(sample.mask, false);
  V inputs{image};
  for (const auto& e : net.params().entries()) inputs.push_back(e.value);
  // the parameters are perturbed in place, so the network sees them directly
  ScalarFn f = [&net, label](const V& x) { return saliency_loss(net.predict(x[0]).map, label); };
  GradCheckOptions opt;
  opt.max_entries = entries;
  opt.seed = seed;
  // Thousands of ReLU units sit behind each decoder and head bias, so some
  // h = 1e-5 stencils cross a kink; those entries are re-differenced at 1e-6.
  opt.kink_tolerance = 1e-4;
  const auto r = grad_check(f, inputs, opt);
  GradSuiteResult out;
  out.name = "network " + ablation;
  out.max_rel_error = r.max_rel_error;
  out.worst = r.worst;
  out.checked = r.checked;
  out.nonsmooth = r.nonsmooth;
  return out;
}

}  // namespace rrnet::test
