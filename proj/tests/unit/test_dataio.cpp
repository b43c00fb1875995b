#include "doctest.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <filesystem>
#include <fstream>
#include <set>

#include "rrnet/dataio.hpp"
#include "rrnet/network.hpp"
#include "support.hpp"

using namespace rrnet;
using rrnet::test::Rng;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& header, std::vector<std::uint8_t> payload) {
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("rrnet_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Image with no dihedral symmetry: a ramp plus an off-centre dot.
Sample asymmetric_sample(std::size_t h, std::size_t w) {
  Sample s{Raster(h, w, 3), Raster(h, w, 1), "asym"};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) s.image.at(y, x, c) = float(y * w + x + c) / float(h * w + 3);
      s.mask.at(y, x) = (y < h / 3 && x < w / 4 + 1) ? 1.0f : 0.0f;
    }
  return s;
}

std::size_t count_ones(const Raster& m) {
  return static_cast<std::size_t>(std::count(m.values.begin(), m.values.end(), 1.0f));
}

}  // namespace

TEST_CASE("P5 bytes scale by 1/255") {
  const auto r = decode_netpbm(bytes_of("P5\n2 2\n255\n", {0, 255, 128, 64}));
  CHECK(r.height == 2);
  CHECK(r.width == 2);
  CHECK(r.channels == 1);
  CHECK(r.at(0, 0) == 0.0f);
  CHECK(r.at(0, 1) == 1.0f);
  CHECK(r.at(1, 0) == doctest::Approx(0.50196).epsilon(1e-5));
  CHECK(r.at(1, 1) == doctest::Approx(0.25098).epsilon(1e-5));
}

TEST_CASE("P6 header gives width then height") {
  const auto r = decode_netpbm(bytes_of("P6 4 3 255\n", std::vector<std::uint8_t>(36, 7)));
  CHECK(r.height == 3);
  CHECK(r.width == 4);
  CHECK(r.channels == 3);
}

TEST_CASE("netpbm comments are skipped") {
  const auto r = decode_netpbm(bytes_of("P5 # c\n# more\n1 1 255\n", {200}));
  CHECK(r.at(0, 0) == 200.0f / 255.0f);
}

TEST_CASE("malformed netpbm files report the byte offset") {
  auto offset_of = [](const std::vector<std::uint8_t>& b) {
    try {
      decode_netpbm(b, "t");
    } catch (const FormatError& e) {
      return static_cast<long>(e.offset());
    }
    return -1L;
  };
  CHECK(offset_of(bytes_of("P3\n1 1\n255\n", {0})) == 0);
  CHECK(offset_of(bytes_of("P5\n1 x\n255\n", {0})) == 5);
  CHECK(offset_of(bytes_of("P5\n1 1\n65535\n", {0, 0})) == 7);
  CHECK(offset_of(bytes_of("P5\n2 2\n255\n", {1, 2})) == 13);
  CHECK(offset_of(bytes_of("P5\n0 2\n255\n", {})) == 3);
  CHECK(offset_of(bytes_of("P5\n1 1", {})) == 6);
  try {
    decode_netpbm(bytes_of("P5\n2 2\n255\n", {1}), "map.pgm");
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("map.pgm") != std::string::npos);
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
}

TEST_CASE("netpbm round trip is within half a quantization step") {
  Rng rng(1);
  for (std::size_t c : {1u, 3u}) {
    Raster r(7, 9, c);
    for (auto& v : r.values) v = static_cast<float>(rng.uniform());
    const auto back = decode_netpbm(encode_netpbm(r));
    REQUIRE(back.values.size() == r.values.size());
    double worst = 0;
    for (std::size_t i = 0; i < r.values.size(); ++i) worst = std::max(worst, double(std::abs(back.values[i] - r.values[i])));
    CHECK(worst <= 1.0 / 510.0 + 1e-7);
    // quantized values are fixed points
    CHECK(decode_netpbm(encode_netpbm(back)) == back);
  }
  CHECK_THROWS_AS(encode_netpbm(Raster(2, 2, 2)), std::invalid_argument);
}

TEST_CASE("file helpers and mask binarization") {
  const auto dir = temp_dir("files");
  Raster m(2, 2, 1);
  m.values = {0.0f, 127.0f / 255.0f, 128.0f / 255.0f, 1.0f};
  write_map(dir / "m.pgm", m);
  const auto mask = read_mask(dir / "m.pgm");
  CHECK(mask.values == std::vector<float>{0, 0, 1, 1});
  CHECK(read_map(dir / "m.pgm") == m);
  CHECK_THROWS_AS(read_image(dir / "m.pgm"), FormatError);
  CHECK_THROWS_AS(read_map(dir / "missing.pgm"), std::runtime_error);
  Raster img(3, 2, 3, 0.5f);
  write_raster(dir / "i.ppm", img);
  CHECK(read_image(dir / "i.ppm").height == 3);
  CHECK_THROWS_AS(write_map(dir / "x.pgm", img), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("dihedral group identities") {
  const auto s = asymmetric_sample(6, 6);
  const auto& r = s.image;
  CHECK(flip_horizontal(flip_horizontal(r)) == r);
  CHECK(rotate90(rotate90(rotate90(rotate90(r)))) == r);
  CHECK(dihedral(r, 0) == r);
  for (int d = 0; d < 8; ++d) {
    CHECK(dihedral(dihedral(r, d), dihedral_inverse(d)) == r);
    CHECK(dihedral(dihedral(s.mask, d), dihedral_inverse(d)) == s.mask);
  }
  CHECK_THROWS_AS(dihedral(r, 8), std::invalid_argument);
  // clockwise: the top-left pixel moves to the top-right
  Raster t(2, 3, 1);
  t.values = {1, 2, 3, 4, 5, 6};
  const auto rt = rotate90(t);
  CHECK(rt.height == 3);
  CHECK(rt.width == 2);
  CHECK(rt.values == std::vector<float>{4, 1, 5, 2, 6, 3});
  CHECK(flip_horizontal(t).values == std::vector<float>{3, 2, 1, 6, 5, 4});
}

TEST_CASE("augment7 yields eight distinct consistent variants") {
  const auto s = asymmetric_sample(8, 8);
  const auto out = augment7(s);
  REQUIRE(out.size() == 8);
  CHECK(out[0].image == s.image);
  std::set<std::vector<float>> seen;
  for (int d = 0; d < 8; ++d) {
    seen.insert(out[d].image.values);
    CHECK(out[d].image == dihedral(s.image, d));
    CHECK(out[d].mask == dihedral(s.mask, d));
    CHECK(count_ones(out[d].mask) == count_ones(s.mask));
  }
  CHECK(seen.size() == 8);
  CHECK(out[3].id == "asym_d3");
  // non-square inputs swap height and width on odd rotations
  const auto tall = augment7(asymmetric_sample(4, 6));
  CHECK(tall[1].image.height == 6);
  CHECK(tall[2].image.height == 4);
}

TEST_CASE("resize behaviour") {
  Rng rng(2);
  Raster r(5, 7, 3);
  for (auto& v : r.values) v = static_cast<float>(rng.uniform());
  CHECK(resize_bilinear(r, 5, 7) == r);
  CHECK(resize_nearest(r, 5, 7) == r);
  const auto c = resize_bilinear(Raster(4, 4, 3, 0.3f), 9, 11);
  for (float v : c.values) CHECK(v == doctest::Approx(0.3f));
  CHECK_THROWS_AS(resize_bilinear(r, 0, 3), std::invalid_argument);

  // smooth ramp: upscale then downscale stays within one ramp step
  Raster ramp(16, 16, 1);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) ramp.at(y, x) = float(x + y) / 30.0f;
  const auto back = resize_bilinear(resize_bilinear(ramp, 32, 32), 16, 16);
  double worst = 0;
  for (std::size_t i = 0; i < ramp.values.size(); ++i)
    worst = std::max(worst, double(std::abs(back.values[i] - ramp.values[i])));
  CHECK(worst <= 1.0 / 30.0);

  Sample s = asymmetric_sample(20, 13);
  const auto rs = resize(s, 32, 32);
  CHECK(rs.image.height == 32);
  for (float v : rs.mask.values) CHECK((v == 0.0f || v == 1.0f));
  // nearest 2x upsampling replicates pixels
  const auto up = resize_nearest(s.mask, 40, 26);
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t x = 0; x < 26; ++x) CHECK(up.at(y, x) == s.mask.at(y / 2, x / 2));
}

TEST_CASE("synthetic data is deterministic and well formed") {
  const auto a = synth_dataset(6, 3, 64);
  const auto b = synth_dataset(6, 3, 64);
  const auto c = synth_dataset(6, 4, 64);
  REQUIRE(a.size() == 6);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].mask == b[i].mask);
    differs = differs || a[i].mask != c[i].mask;
    const auto bm = count_ones(a[i].mask);
    CHECK(bm >= 1);
    CHECK(2 * bm <= 64 * 64);
    for (float v : a[i].mask.values) CHECK((v == 0.0f || v == 1.0f));
    for (float v : a[i].image.values) CHECK((v >= 0.0f && v <= 1.0f));
  }
  CHECK(differs);
  CHECK(a[2].id == "synth_0002");
  // sample i does not depend on how many samples are drawn
  CHECK(synth_dataset(3, 3, 64)[2].image == a[2].image);
  CHECK_THROWS_AS(synth_dataset(0, 1, 64), std::invalid_argument);
  CHECK_THROWS_AS(synth_layout(1, 0, 8), std::invalid_argument);
}

TEST_CASE("mask area matches the analytic area within the perimeter") {
  for (std::size_t i = 0; i < 40; ++i) {
    const auto layout = synth_layout(11, i, 64);
    REQUIRE(!layout.shapes.empty());
    CHECK(layout.shapes.size() <= 3);
    const auto s = render_synth(layout, 64, "x");
    double area = 0, perimeter = 0;
    for (const auto& p : layout.shapes) area += p.area(), perimeter += p.perimeter();
    CHECK(std::abs(double(count_ones(s.mask)) - area) <= perimeter);
  }
}

TEST_CASE("primitive geometry") {
  Primitive e{PrimitiveKind::ellipse, 10, 10, 3, 5, 0};
  CHECK(e.area() == doctest::Approx(std::numbers::pi * 15));
  CHECK(e.contains(10, 14.9));
  CHECK_FALSE(e.contains(13.5, 10));
  Primitive r{PrimitiveKind::rectangle, 10, 10, 2, 4, std::numbers::pi / 2};
  CHECK(r.area() == doctest::Approx(32));
  CHECK(r.perimeter() == doctest::Approx(24));
  CHECK(r.contains(13.5, 10));  // rotated a quarter turn
  CHECK_FALSE(r.contains(10, 13.5));
}

TEST_CASE("checkpoint round trip is bit exact") {
  NetworkConfig cfg;
  cfg.stage_channels = {4, 4, 4, 4, 4};
  cfg.decoder_width = 4;
  cfg.input_height = cfg.input_width = 32;
  cfg.use_crr = false;
  RRNet<float> net(cfg, 5);
  // odd float values survive unchanged
  auto w = net.params().entries()[0].value.mutable_data();
  w[0] = -0.0f;
  w[1] = std::numeric_limits<float>::denorm_min();
  const auto dir = temp_dir("ckpt");
  save_checkpoint(dir / "a.ckpt", net.params(), cfg);
  const auto ck = load_checkpoint(dir / "a.ckpt");
  CHECK(ck.config == cfg);
  REQUIRE(ck.params.size() == net.params().size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto& a = net.params().entries()[i];
    const auto& b = ck.params.entries()[i];
    CHECK(a.name == b.name);
    CHECK(a.value.shape() == b.value.shape());
    CHECK(std::memcmp(a.value.data().data(), b.value.data().data(), a.value.numel() * sizeof(float)) == 0);
  }
  // predictions agree bit for bit
  RRNet<float> loaded(ck.config, ck.params);
  Rng rng(3);
  auto img = rng.tensor<float>({32, 32, 3}, 0, 1);
  CHECK(loaded.predict(img).map.to_vector() == net.predict(img).map.to_vector());
  fs::remove_all(dir);
}

TEST_CASE("empty checkpoint is valid") {
  const auto bytes = encode_checkpoint(ParamStore<float>{}, NetworkConfig{});
  const auto ck = decode_checkpoint(bytes);
  CHECK(ck.params.size() == 0);
  CHECK(ck.config == NetworkConfig{});
}

TEST_CASE("corrupt checkpoints are rejected") {
  ParamStore<float> store(1);
  store.create("a", {3, 2}, InitKind::xavier);
  store.create("b", {4}, InitKind::constant_zero);
  const auto good = encode_checkpoint(store, NetworkConfig{});
  CHECK_NOTHROW(decode_checkpoint(good));

  auto flipped = good;
  flipped[flipped.size() - 10] ^= 0x01;  // inside the last entry's payload
  CHECK_THROWS_WITH_AS(decode_checkpoint(flipped), doctest::Contains("checksum"), CheckpointError);

  auto magic = good;
  magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(magic), doctest::Contains("magic"), CheckpointError);

  auto version = good;
  version[8] = 2;
  CHECK_THROWS_AS(decode_checkpoint(version), CheckpointError);

  for (std::size_t cut : {4ul, 11ul, 20ul, good.size() - 1})
    CHECK_THROWS_WITH_AS(decode_checkpoint(std::vector<std::uint8_t>(good.begin(), good.begin() + cut)),
                         doctest::Contains("truncated"), CheckpointError);

  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), CheckpointError);

  // the same entry twice
  ParamStore<float> one(1);
  one.create("a", {2}, InitKind::xavier);
  auto single = encode_checkpoint(one, NetworkConfig{});
  const std::size_t header = single.size() - (4 + 1 + 4 + 4 + 8 + 4);
  std::vector<std::uint8_t> dup(single.begin(), single.end());
  dup.insert(dup.end(), single.begin() + static_cast<long>(header), single.end());
  dup[header - 4] = 2;  // entry count
  CHECK_THROWS_WITH_AS(decode_checkpoint(dup), doctest::Contains("duplicate"), CheckpointError);
}

TEST_CASE("manifest parsing") {
  const auto dir = temp_dir("manifest");
  const auto data = synth_dataset(2, 1, 32);
  fs::create_directories(dir / "img");
  for (const auto& s : data) {
    write_raster(dir / "img" / (s.id + ".ppm"), s.image);
    write_map(dir / "img" / (s.id + ".pgm"), s.mask);
  }
  {
    std::ofstream m(dir / "list.tsv");
    m << "# pairs\n\nimg/synth_0000.ppm\timg/synth_0000.pgm\n" << (dir / "img/synth_0001.ppm").string() << "\timg/synth_0001.pgm\n";
  }
  const auto pairs = read_manifest(dir / "list.tsv");
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].first == dir / "img/synth_0000.ppm");
  const auto samples = load_manifest_samples(dir / "list.tsv", 64, 64);
  CHECK(samples[1].image.height == 64);
  CHECK(samples[0].mask == resize_nearest(data[0].mask, 64, 64));
  {
    std::ofstream m(dir / "bad.tsv");
    m << "img/synth_0000.ppm img/synth_0000.pgm\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "bad.tsv"), std::runtime_error);
  {
    std::ofstream m(dir / "empty.tsv");
    m << "# nothing\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "empty.tsv"), std::runtime_error);
  fs::remove_all(dir);
}
