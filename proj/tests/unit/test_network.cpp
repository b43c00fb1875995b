#include "doctest.h"

#include <cmath>

#include "rrnet/config.hpp"
#include "rrnet/network.hpp"
#include "rrnet/ops.hpp"
#include "rrnet/optim.hpp"
#include "support.hpp"

using namespace rrnet;
using rrnet::test::Rng;

namespace {

NetworkConfig toy_config() {
  NetworkConfig c;
  c.stage_channels = {4, 4, 4, 4, 4};
  c.decoder_width = 4;
  c.input_height = c.input_width = 32;
  return c;
}

// -mean(p L log S + q (1 - L) log(1 - S)) by a scalar loop.
double loop_loss(const std::vector<double>& s, const std::vector<double>& l) {
  double bm = 0;
  for (double v : l) bm += v;
  const double b = static_cast<double>(l.size());
  double p = (b - bm) / b, q = bm / b;
  if (bm == 0 || bm == b) p = q = 1;
  double acc = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double sc = std::clamp(s[i], kProbClamp, 1 - kProbClamp);
    acc += p * l[i] * std::log(sc) + q * (1 - l[i]) * std::log(1 - sc);
  }
  return -acc / b;
}

// Unweighted BCE assembled from the same primitives the loss uses.
Tensor<double> standard_bce(const Tensor<double>& s, const Tensor<double>& l) {
  auto sc = clamp(s, kProbClamp, 1 - kProbClamp);
  auto pos = mul(l, log(sc));
  auto neg = mul(add_scalar(scale(l, -1.0), 1.0), log(add_scalar(scale(sc, -1.0), 1.0)));
  return scale(mean(add(pos, neg)), -1.0);
}

std::vector<std::string> prefixes_of(const ParamStore<double>& store, const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& e : store.entries())
    if (e.name.rfind(prefix, 0) == 0) out.push_back(e.name);
  return out;
}

}  // namespace

TEST_CASE("loss agrees with a scalar loop") {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(64), l(64);
    for (auto& v : s) v = rng.uniform();
    for (auto& v : l) v = rng.coin(rng.uniform(0.05, 0.95)) ? 1.0 : 0.0;
    const double got = saliency_loss(Tensor<double>::from({8, 8, 1}, s), Tensor<double>::from({8, 8, 1}, l)).item();
    CHECK(got == doctest::Approx(loop_loss(s, l)).epsilon(1e-12));
  }
}

TEST_CASE("class weights sum to one") {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.index(300);
    std::vector<double> l(n);
    for (auto& v : l) v = rng.coin(rng.uniform()) ? 1.0 : 0.0;
    const auto [p, q] = balance_weights(Tensor<double>::from({n}, l));
    CHECK(p + q == 1.0);
    CHECK(p >= 0.0);
    CHECK(q >= 0.0);
  }
  const auto [p, q] = balance_weights(Tensor<float>::from({4}, {1, 0, 0, 0}));
  CHECK(p == 0.75f);
  CHECK(q == 0.25f);
}

TEST_CASE("a balanced label gives exactly half the standard BCE") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> l(64, 0.0);
    for (std::size_t i = 0; i < 32; ++i) l[i] = 1.0;
    std::shuffle(l.begin(), l.end(), rng.engine());
    auto label = Tensor<double>::from({8, 8, 1}, l);
    auto s = rng.tensor({8, 8, 1}, 0, 1);
    CHECK(saliency_loss(s, label).item() == 0.5 * standard_bce(s, label).item());
  }
}

TEST_CASE("single-class labels fall back to plain BCE") {
  Rng rng(4);
  auto s = rng.tensor({8, 8, 1}, 0.01, 0.99);
  for (double fill : {0.0, 1.0}) {
    auto label = Tensor<double>::full({8, 8, 1}, fill);
    const double loss = saliency_loss(s, label).item();
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);
    CHECK(loss == standard_bce(s, label).item());
  }
}

TEST_CASE("loss clamps saturated predictions") {
  auto s = Tensor<double>::from({4}, {0.0, 1.0, 0.0, 1.0}, true);
  auto label = Tensor<double>::from({4}, {1, 0, 0, 1});
  auto loss = saliency_loss(s, label);
  CHECK(std::isfinite(loss.item()));
  // p = q = 1/2; two entries sit at the clamp on the wrong side, two on the right side
  const double lo = kProbClamp, hi = 1 - kProbClamp;
  const double expected = -0.5 * (std::log(lo) + std::log(1 - hi) + std::log(1 - lo) + std::log(hi)) / 4;
  CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));
  // clamped entries pass no gradient
  auto g = backward(loss).of(s).to_vector();
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("loss rejects bad labels and shapes") {
  auto s = Tensor<double>::full({4}, 0.5);
  CHECK_THROWS_AS(saliency_loss(s, Tensor<double>::from({4}, {0, 0.5, 1, 1})), std::invalid_argument);
  CHECK_THROWS_AS(saliency_loss(s, Tensor<double>::zeros({2, 2})), ShapeError);
}

TEST_CASE("zero attention reproduces the plain decode step bit for bit") {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    ParamStore<float> store(static_cast<std::uint64_t>(t));
    auto conv = make_conv(store, "dec", 3, 7, 5);
    auto f_d = rng.tensor<float>({4, 4, 3});
    auto f_e = rng.tensor<float>({8, 8, 4});
    auto plain = decode_fuse<float>(f_d, f_e, std::nullopt, conv);
    auto zero = decode_fuse<float>(f_d, f_e, Tensor<float>::zeros({8, 8, 1}), conv);
    CHECK(plain.to_vector() == zero.to_vector());
    // a non-zero map changes the result
    auto ones = decode_fuse<float>(f_d, f_e, Tensor<float>::full({8, 8, 1}, 0.5f), conv);
    CHECK(ones.to_vector() != plain.to_vector());
  }
}

TEST_CASE("decode_fuse shape contract") {
  ParamStore<float> store(1);
  auto conv = make_conv(store, "dec", 3, 5, 2);
  auto f_d = Tensor<float>::zeros({2, 2, 2});
  CHECK(decode_fuse<float>(f_d, Tensor<float>::zeros({4, 4, 3}), std::nullopt, conv).shape() == Shape{4, 4, 2});
  CHECK_THROWS_AS(decode_fuse<float>(f_d, Tensor<float>::zeros({4, 5, 3}), std::nullopt, conv), ShapeError);
  CHECK_THROWS_AS(decode_fuse<float>(f_d, Tensor<float>::zeros({4, 4, 3}), Tensor<float>::zeros({2, 2, 1}), conv),
                  ShapeError);
}

TEST_CASE("network output shapes and ranges") {
  const auto cfg = toy_config();
  RRNet<float> net(cfg, 3);
  Rng rng(6);
  auto image = rng.tensor<float>({32, 32, 3}, 0, 1);
  auto enc = net.encode(image);
  for (int s = 1; s <= 5; ++s) {
    CHECK(enc.stages[s - 1].shape() == Shape{32u >> s, 32u >> s, 4});
  }
  auto pred = net.predict(image);
  CHECK(pred.map.shape() == Shape{32, 32, 1});
  for (float v : pred.map.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  CHECK(pred.decoder_features.size() == 4);
  CHECK(pred.decoder_features.back().shape() == Shape{16, 16, 4});
  REQUIRE(pred.attention_maps.size() == 2);
  CHECK(pred.attention_maps[0].shape() == Shape{8, 8, 1});
  CHECK(pred.attention_maps[1].shape() == Shape{16, 16, 1});
  CHECK_THROWS_AS(net.predict(rng.tensor<float>({64, 64, 3})), ShapeError);
  CHECK_THROWS_AS(net.predict(rng.tensor<float>({32, 32, 1})), ShapeError);
}

TEST_CASE("same seed gives the same network") {
  const auto cfg = toy_config();
  RRNet<float> a(cfg, 11), b(cfg, 11), c(cfg, 12);
  REQUIRE(a.params().size() == b.params().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params().entries()[i].value.to_vector() == b.params().entries()[i].value.to_vector());
    differs = differs || a.params().entries()[i].value.to_vector() != c.params().entries()[i].value.to_vector();
  }
  CHECK(differs);
}

TEST_CASE("ablation variants share initial weights and leave disabled modules untouched") {
  Rng rng(7);
  const auto image = rng.tensor({32, 32, 3}, 0, 1);
  std::vector<double> lab(32 * 32);
  for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = (i % 32 > 10 && i / 32 > 12) ? 1.0 : 0.0;
  const auto label = Tensor<double>::from({32, 32, 1}, lab);

  struct Row {
    const char* name;
    std::vector<const char*> inactive;
  };
  const std::vector<Row> rows = {
      {"baseline", {"srr.", "crr.", "pma.", "nonlocal."}},
      {"pma", {"srr.", "crr.", "nonlocal."}},
      {"pma_srr", {"crr.", "nonlocal."}},
      {"full", {"nonlocal."}},
      {"nonlocal", {"srr.", "crr."}},
  };
  RRNet<double> reference(ablation_config("full", toy_config()), 5);
  for (const auto& row : rows) {
    RRNet<double> net(ablation_config(row.name, toy_config()), 5);
    REQUIRE(net.params().size() == reference.params().size());
    for (std::size_t i = 0; i < net.params().size(); ++i)
      CHECK(net.params().entries()[i].value.to_vector() == reference.params().entries()[i].value.to_vector());
    const auto grads = backward(saliency_loss(net.predict(image).map, label));
    for (const auto& e : net.params().entries()) {
      bool inactive = false;
      for (const char* p : row.inactive) inactive = inactive || e.name.rfind(p, 0) == 0;
      const auto g = grads.of(e.value).to_vector();
      double norm = 0;
      for (double v : g) norm += std::abs(v);
      INFO(row.name << " " << e.name);
      if (inactive) CHECK(norm == 0.0);
    }
  }
  CHECK(prefixes_of(reference.params(), "pma.s1").size() > 0);
}

TEST_CASE("baseline prediction equals the full network with attention and reasoning removed") {
  Rng rng(8);
  auto image = rng.tensor<float>({32, 32, 3}, 0, 1);
  RRNet<float> base(ablation_config("baseline", toy_config()), 9);
  auto bb = base.backbone_forward(image);
  auto enc = base.encode(image);
  for (int s = 0; s < 5; ++s) CHECK(bb[s].to_vector() == enc.stages[s].to_vector());
  CHECK(base.predict(image).attention_maps.empty());
}

TEST_CASE("float and double networks agree") {
  RRNet<double> d(toy_config(), 4);
  auto f = d.cast<float>();
  Rng rng(9);
  auto image = rng.tensor({32, 32, 3}, 0, 1);
  auto md = d.predict(image).map;
  auto mf = f.predict(image.cast<float>()).map;
  for (std::size_t i = 0; i < md.numel(); ++i) CHECK(mf.data()[i] == doctest::Approx(md.data()[i]).epsilon(1e-4));
}

TEST_CASE("config text round trip and validation") {
  auto c = toy_config();
  c.use_crr = false;
  c.pma_branch = PmaBranch::right;
  c.right_activation = FeatureActivation::sigmoid;
  c.right_att_kernel = 3;
  CHECK(NetworkConfig::from_text(c.to_text()) == c);
  CHECK(NetworkConfig::from_text("# comment\n\ninput_size = 64\n").input_width == 64);
  CHECK_THROWS_AS(NetworkConfig::from_text("use_pma=maybe"), ConfigError);
  CHECK_THROWS_AS(NetworkConfig::from_text("stage_channels=1,2,3"), ConfigError);
  CHECK_THROWS_AS(NetworkConfig::from_text("decoder_width=-3"), ConfigError);
  CHECK_THROWS_AS(NetworkConfig::from_text("upsample=bilinear"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("no equals sign"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("=3"), ConfigError);
  NetworkConfig bad = toy_config();
  bad.input_height = 48;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ablation_config("nonlocal", toy_config());
  bad.use_srr = true;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(RRNet<float>(bad, 1), ConfigError);
  CHECK_THROWS_AS(ablation_config("everything"), ConfigError);
}

TEST_CASE("ablation rows nest") {
  const auto base = ablation_config("baseline");
  const auto pma = ablation_config("pma");
  const auto srr = ablation_config("pma_srr");
  const auto full = ablation_config("full");
  CHECK(!base.use_pma);
  CHECK((pma.use_pma && !pma.use_srr && !pma.use_crr));
  CHECK((srr.use_pma && srr.use_srr && !srr.use_crr));
  CHECK((full.use_pma && full.use_srr && full.use_crr));
  CHECK(ablation_config("left_only").pma_branch == PmaBranch::left);
  CHECK(ablation_config("right_only").pma_branch == PmaBranch::right);
  CHECK(ablation_config("nonlocal").use_nonlocal);
}

TEST_CASE("xavier init bounds and zero biases") {
  const Shape k{3, 3, 8, 16};
  const double bound = xavier_bound(k);
  CHECK(bound == doctest::Approx(std::sqrt(6.0 / (9 * 8 + 9 * 16))));
  auto w = xavier_init<double>(k, 42);
  double lo = 1, hi = -1;
  for (double v : w.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  CHECK(hi - lo > bound);  // spread over most of the interval
  CHECK(xavier_init<double>(k, 42).to_vector() == w.to_vector());
  const auto bias = xavier_init<double>({5}, 42);
  for (double v : bias.data()) CHECK(v == 0.0);
}

TEST_CASE("parameter store naming") {
  ParamStore<float> store(1);
  store.create("a", {2, 2}, InitKind::xavier);
  CHECK_THROWS_AS(store.create("a", {2}, InitKind::constant_zero), std::invalid_argument);
  CHECK_THROWS_AS(store.get("b"), std::out_of_range);
  CHECK(store.scalar_count() == 4);
  auto copy = store.clone();
  copy.get("a").mutable_data()[0] = 99.0f;
  CHECK(store.get("a").data()[0] != 99.0f);
}

TEST_CASE("learning rate decays linearly") {
  LrSchedule s{5e-5, 5e-7, 100};
  CHECK(s.at(0) == 5e-5);
  CHECK(s.at(100) == 5e-7);
  CHECK(s.at(500) == 5e-7);
  CHECK(s.at(50) == doctest::Approx((5e-5 + 5e-7) / 2));
}

TEST_CASE("adam first step moves by the learning rate against the gradient sign") {
  ParamStore<double> store(1);
  store.insert("w", Tensor<double>::from({3}, {1.0, 1.0, 1.0}, true));
  auto state = make_adam_state(store, LrSchedule{1e-3, 1e-3, 10});
  adam_step(store, {{0.5, -2.0, 0.0}}, state);
  auto w = store.get("w").to_vector();
  CHECK(w[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
  CHECK(w[1] == doctest::Approx(1.0 + 1e-3).epsilon(1e-9));
  CHECK(w[2] == 1.0);
  CHECK(state.step_count == 1);
}

TEST_CASE("adam matches a hand-rolled update over several steps") {
  ParamStore<double> store(1);
  store.insert("w", Tensor<double>::from({1}, {0.3}, true));
  LrSchedule sched{1e-2, 1e-4, 5};
  auto state = make_adam_state(store, sched);
  double w = 0.3, m = 0, v = 0;
  const double grads[] = {0.4, -0.1, 0.25, 0.0, 1.5};
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    const double lr = sched.at(static_cast<std::uint64_t>(t - 1));
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    adam_step(store, {{g}}, state);
    CHECK(store.get("w").item() == doctest::Approx(w).epsilon(1e-14));
  }
  CHECK_THROWS_AS(adam_step(store, {}, state), ShapeError);
}
