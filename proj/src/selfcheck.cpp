#include "rrnet/selfcheck.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "rrnet/attention.hpp"
#include "rrnet/dataio.hpp"
#include "rrnet/gradcheck.hpp"
#include "rrnet/graph_reasoning.hpp"
#include "rrnet/metrics.hpp"
#include "rrnet/network.hpp"
#include "rrnet/ops.hpp"

namespace rrnet {

namespace {

constexpr double kGradTolerance = 1e-4;

class Rng {
 public:
  explicit Rng(unsigned seed) : g_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g_); }
  Tensor<double> tensor(const Shape& s, double lo = -1, double hi = 1, bool grad = true) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = uniform(lo, hi);
    return Tensor<double>::from(s, std::move(v), grad);
  }
  std::mt19937& engine() { return g_; }

 private:
  std::mt19937 g_;
};

CheckResult grad_result(const std::string& name, const ScalarFn& f, const std::vector<Tensor<double>>& in) {
  GradCheckOptions opt;
  opt.max_entries = 20;
  const auto r = grad_check(f, in, opt);
  std::ostringstream os;
  os << "max rel err " << r.max_rel_error << " over " << r.checked << " entries";
  if (!r.passed(kGradTolerance)) os << " (" << r.worst << ")";
  return {"grad " + name, r.passed(kGradTolerance), os.str()};
}

ReasoningParams<double> reasoning_params(std::size_t f, unsigned seed) {
  ParamStore<double> store(seed);
  return make_reasoning_params(store, "rr", f);
}

}  // namespace

std::vector<CheckResult> run_self_check(unsigned seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  using V = std::vector<Tensor<double>>;

  out.push_back(grad_result("matmul", [](const V& x) { return weighted_sum(matmul(x[0], x[1])); },
                            {rng.tensor({4, 5}), rng.tensor({5, 3})}));
  out.push_back(grad_result("mul broadcast", [](const V& x) { return weighted_sum(mul(x[0], x[1])); },
                            {rng.tensor({4, 5}), rng.tensor({1, 5})}));
  out.push_back(grad_result("sigmoid", [](const V& x) { return weighted_sum(sigmoid(x[0])); }, {rng.tensor({3, 7})}));
  out.push_back(grad_result("conv2d stride 2",
                            [](const V& x) { return weighted_sum(conv2d(x[0], x[1], x[2], 2)); },
                            {rng.tensor({6, 6, 2}), rng.tensor({3, 3, 2, 3}), rng.tensor({3})}));
  out.push_back(grad_result("softmax_rows", [](const V& x) { return weighted_sum(softmax_rows(x[0])); },
                            {rng.tensor({3, 6})}));
  {
    auto p = reasoning_params(3, seed);
    out.push_back(grad_result("srr", [&](const V& x) { return weighted_sum(srr(x[0], p)); },
                              {rng.tensor({3, 3, 3}, 0.1, 1.0)}));
  }
  {
    ParamStore<double> store(seed);
    auto p = make_pma_params(store, "pma", 3, 7);
    out.push_back(grad_result("pma", [&](const V& x) { return weighted_sum(pma(x[0], p)); }, {rng.tensor({6, 6, 3})}));
  }
  {
    std::vector<double> lab(16);
    for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = i % 3 == 0 ? 1.0 : 0.0;
    auto label = Tensor<double>::from({4, 4, 1}, lab);
    out.push_back(grad_result("loss", [&](const V& x) { return saliency_loss(x[0], label); },
                              {rng.tensor({4, 4, 1}, 0.05, 0.95)}));
  }

  // adjacency symmetry and Laplacian spectrum
  {
    bool ok = true;
    double lo = 0, hi = 0;
    for (int t = 0; t < 10 && ok; ++t) {
      auto x = rng.tensor({4, 4, 5}, 0, 1, false);
      auto adj = adjacency(build_graph(x, GraphMode::spatial), reasoning_params(5, seed + t));
      const std::size_t n = adj.dim(0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) ok = ok && adj.at({i, j}) == adj.at({j, i});
      auto lap = normalized_laplacian(adj);
      Eigen::MatrixXd m(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m(i, j) = lap.at({i, j});
      const auto ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues();
      lo = std::min(lo, ev.minCoeff());
      hi = std::max(hi, ev.maxCoeff());
    }
    ok = ok && lo >= -1e-8 && hi <= 2 + 1e-8;
    std::ostringstream os;
    os << "eigenvalues in [" << lo << ", " << hi << "]";
    out.push_back({"graph adjacency symmetry and Laplacian spectrum", ok, os.str()});
  }

  // SRR pixel-permutation equivariance
  {
    auto p = reasoning_params(4, seed);
    auto x = rng.tensor({3, 4, 4}, 0, 1, false);
    std::vector<std::size_t> perm(12);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<double> xp(x.numel());
    for (std::size_t k = 0; k < 12; ++k)
      for (std::size_t c = 0; c < 4; ++c) xp[k * 4 + c] = x.data()[perm[k] * 4 + c];
    auto y = srr(x, p);
    auto yp = srr(Tensor<double>::from({3, 4, 4}, xp), p);
    bool ok = true;
    for (std::size_t k = 0; k < 12; ++k)
      for (std::size_t c = 0; c < 4; ++c) ok = ok && yp.data()[k * 4 + c] == y.data()[perm[k] * 4 + c];
    out.push_back({"srr pixel permutation equivariance", ok, ok ? "exact" : "outputs differ"});
  }

  // PMA maps strictly inside (0,1)
  {
    ParamStore<float> store(seed);
    auto p = make_pma_params(store, "pma", 4, 7);
    std::vector<float> v(8 * 8 * 4);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-3, 3));
    const auto x = Tensor<float>::from({8, 8, 4}, v);
    bool ok = true;
    for (auto branch : {PmaBranch::both, PmaBranch::left, PmaBranch::right}) {
      const auto map = pma(x, p, branch);
      for (float a : map.data()) ok = ok && a > 0.0f && a < 1.0f;
    }
    out.push_back({"pma maps in (0,1)", ok, ok ? "all branches" : "value outside (0,1)"});
  }

  // loss weights
  {
    bool ok = true;
    for (int t = 0; t < 20; ++t) {
      std::vector<double> lab(16);
      for (auto& v : lab) v = rng.uniform(0, 1) < 0.3 ? 1.0 : 0.0;
      const auto [p, q] = balance_weights(Tensor<double>::from({4, 4, 1}, lab));
      ok = ok && std::abs(p + q - 1.0) <= 0x1.0p-52;
    }
    out.push_back({"loss weights p + q = 1", ok, ""});
  }

  // metric identities
  {
    Raster gt(16, 16, 1);
    for (std::size_t y = 4; y < 10; ++y)
      for (std::size_t x = 3; x < 12; ++x) gt.at(y, x) = 1.0f;
    const auto m = evaluate_image(gt, gt, "identity");
    const bool ok = m.mae == 0.0 && std::abs(m.f_beta - 1) < 1e-6 && std::abs(m.s_m - 1) < 1e-6 &&
                    std::abs(m.e_m - 1) < 1e-6;
    std::ostringstream os;
    os << "mae " << m.mae << " F " << m.f_beta << " S " << m.s_m << " E " << m.e_m;
    out.push_back({"metric identity", ok, os.str()});
  }

  // checkpoint round trip
  {
    NetworkConfig cfg;
    cfg.stage_channels = {4, 4, 4, 4, 4};
    cfg.decoder_width = 4;
    cfg.input_height = cfg.input_width = 32;
    RRNet<float> net(cfg, seed);
    const auto bytes = encode_checkpoint(net.params(), cfg);
    const auto back = decode_checkpoint(bytes);
    bool ok = back.config == cfg && back.params.size() == net.params().size() &&
              encode_checkpoint(back.params, back.config) == bytes;
    out.push_back({"checkpoint round trip", ok, std::to_string(bytes.size()) + " bytes"});
  }
  return out;
}

}  // namespace rrnet
