#include "rrnet/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace rrnet {

FormatError::FormatError(const std::string& source, std::size_t offset, const std::string& what)
    : std::runtime_error(source + ": byte " + std::to_string(offset) + ": " + what), offset_(offset) {}

// ---------------------------------------------------------------------------
// netpbm

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::vector<std::uint8_t>& bytes, const std::string& source) : b_(bytes), src_(source) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= b_.size()) throw FormatError(src_, pos_, std::string("header ends before ") + what);
    if (!std::isdigit(b_[pos_])) {
      throw FormatError(src_, pos_, std::string("expected ") + what + ", found '" + static_cast<char>(b_[pos_]) + "'");
    }
    std::size_t v = 0;
    const std::size_t start = pos_;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > (1u << 20)) throw FormatError(src_, start, std::string(what) + " is too large");
      ++pos_;
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  const std::vector<std::uint8_t>& b_;
  const std::string& src_;
  std::size_t pos_ = 0;
};

std::uint8_t quantize(float v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Raster decode_netpbm(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError(source, 0, "not a binary PGM (P5) or PPM (P6) file");
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader in(bytes, source);
  in.advance(2);
  if (in.pos() < bytes.size() && !std::isspace(bytes[in.pos()]) && bytes[in.pos()] != '#') {
    throw FormatError(source, in.pos(), "expected whitespace after magic number");
  }
  in.skip_space_and_comments();
  const std::size_t width_at = in.pos();
  const std::size_t width = in.number("width");
  in.skip_space_and_comments();
  const std::size_t height_at = in.pos();
  const std::size_t height = in.number("height");
  in.skip_space_and_comments();
  const std::size_t maxval_at = in.pos();
  const std::size_t maxval = in.number("maxval");
  if (width == 0) throw FormatError(source, width_at, "zero image width");
  if (height == 0) throw FormatError(source, height_at, "zero image height");
  if (maxval != 255) {
    throw FormatError(source, maxval_at, "unsupported maxval " + std::to_string(maxval) + " (only 255)");
  }
  if (in.pos() >= bytes.size() || !std::isspace(bytes[in.pos()])) {
    throw FormatError(source, in.pos(), "expected a single whitespace byte before the pixel data");
  }
  in.advance(1);
  const std::size_t need = width * height * channels;
  const std::size_t have = bytes.size() - in.pos();
  if (have < need) {
    throw FormatError(source, bytes.size(),
                      "truncated pixel data: expected " + std::to_string(need) + " bytes, found " + std::to_string(have));
  }
  Raster r(height, width, channels);
  for (std::size_t i = 0; i < need; ++i) r.values[i] = static_cast<float>(bytes[in.pos() + i]) / 255.0f;
  return r;
}

std::vector<std::uint8_t> encode_netpbm(const Raster& r) {
  if (r.channels != 1 && r.channels != 3) {
    throw std::invalid_argument("encode_netpbm: need 1 or 3 channels, got " + std::to_string(r.channels));
  }
  const std::string header = std::string(r.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(r.width) + " " +
                             std::to_string(r.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + r.values.size());
  for (float v : r.values) out.push_back(quantize(v));
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for reading");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error(path.string() + ": write failed");
}

namespace {

Raster read_netpbm(const std::filesystem::path& path, std::size_t channels) {
  auto r = decode_netpbm(read_file(path), path.string());
  if (r.channels != channels) {
    throw FormatError(path.string(), 0, channels == 3 ? "expected a P6 colour image" : "expected a P5 greyscale map");
  }
  return r;
}

}  // namespace

Raster read_image(const std::filesystem::path& path) { return read_netpbm(path, 3); }
Raster read_map(const std::filesystem::path& path) { return read_netpbm(path, 1); }

Raster read_mask(const std::filesystem::path& path) {
  auto r = read_map(path);
  // v is byte/255, so v >= 127.5/255 is exactly byte >= 128
  for (float& v : r.values) v = v * 255.0f >= 127.5f ? 1.0f : 0.0f;
  return r;
}

void write_raster(const std::filesystem::path& path, const Raster& r) { write_file(path, encode_netpbm(r)); }

void write_map(const std::filesystem::path& path, const Raster& map) {
  if (map.channels != 1) throw std::invalid_argument("write_map: expected a single-channel map");
  write_raster(path, map);
}

// ---------------------------------------------------------------------------
// dihedral transforms and resizing

Raster rotate90(const Raster& r) {
  Raster out(r.width, r.height, r.channels);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < r.channels; ++c) out.at(y, x, c) = r.at(r.height - 1 - x, y, c);
  return out;
}

Raster flip_horizontal(const Raster& r) {
  Raster out(r.height, r.width, r.channels);
  for (std::size_t y = 0; y < r.height; ++y)
    for (std::size_t x = 0; x < r.width; ++x)
      for (std::size_t c = 0; c < r.channels; ++c) out.at(y, x, c) = r.at(y, r.width - 1 - x, c);
  return out;
}

Raster dihedral(const Raster& r, int d) {
  if (d < 0 || d > 7) throw std::invalid_argument("dihedral: element must be in 0..7, got " + std::to_string(d));
  Raster out = d >= 4 ? flip_horizontal(r) : r;
  for (int i = 0; i < d % 4; ++i) out = rotate90(out);
  return out;
}

int dihedral_inverse(int d) {
  if (d < 0 || d > 7) throw std::invalid_argument("dihedral_inverse: element must be in 0..7");
  // rotations invert to the opposite rotation; flip-then-rotate elements are reflections (self-inverse)
  return d < 4 ? (4 - d) % 4 : d;
}

std::vector<Sample> augment7(const Sample& s) {
  std::vector<Sample> out;
  out.reserve(8);
  for (int d = 0; d < 8; ++d) {
    out.push_back({dihedral(s.image, d), dihedral(s.mask, d), d == 0 ? s.id : s.id + "_d" + std::to_string(d)});
  }
  return out;
}

namespace {

void check_target(std::size_t height, std::size_t width, const Raster& r) {
  if (height == 0 || width == 0) throw std::invalid_argument("resize: target size must be positive");
  if (r.height == 0 || r.width == 0) throw std::invalid_argument("resize: source raster is empty");
}

}  // namespace

Raster resize_bilinear(const Raster& r, std::size_t height, std::size_t width) {
  check_target(height, width, r);
  Raster out(height, width, r.channels);
  auto src = [](std::size_t dst, std::size_t in, std::size_t outn) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = src(y, r.height, height);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, r.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = src(x, r.width, width);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, r.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < r.channels; ++c) {
        const double top = r.at(y0, x0, c) + fx * (r.at(y0, x1, c) - r.at(y0, x0, c));
        const double bottom = r.at(y1, x0, c) + fx * (r.at(y1, x1, c) - r.at(y1, x0, c));
        out.at(y, x, c) = static_cast<float>(top + fy * (bottom - top));
      }
    }
  }
  return out;
}

Raster resize_nearest(const Raster& r, std::size_t height, std::size_t width) {
  check_target(height, width, r);
  Raster out(height, width, r.channels);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(r.height - 1, (2 * y + 1) * r.height / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(r.width - 1, (2 * x + 1) * r.width / (2 * width));
      for (std::size_t c = 0; c < r.channels; ++c) out.at(y, x, c) = r.at(sy, sx, c);
    }
  }
  return out;
}

Sample resize(const Sample& s, std::size_t height, std::size_t width) {
  return {resize_bilinear(s.image, height, width), resize_nearest(s.mask, height, width), s.id};
}

// ---------------------------------------------------------------------------
// synthetic shapes

bool Primitive::contains(double y, double x) const {
  const double dy = y - cy, dx = x - cx;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = dx * c + dy * s;
  const double v = -dx * s + dy * c;
  if (kind == PrimitiveKind::ellipse) return (u / rx) * (u / rx) + (v / ry) * (v / ry) <= 1.0;
  return std::abs(u) <= rx && std::abs(v) <= ry;
}

double Primitive::area() const {
  return kind == PrimitiveKind::ellipse ? std::numbers::pi * rx * ry : 4.0 * rx * ry;
}

double Primitive::perimeter() const {
  if (kind != PrimitiveKind::ellipse) return 4.0 * (rx + ry);
  const double h = (rx - ry) * (rx - ry) / ((rx + ry) * (rx + ry));
  return std::numbers::pi * (rx + ry) * (1.0 + 3.0 * h / (10.0 + std::sqrt(4.0 - 3.0 * h)));
}

namespace {

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t mask_count(const std::vector<Primitive>& shapes, std::size_t size) {
  std::size_t n = 0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      for (const auto& p : shapes)
        if (p.contains(y + 0.5, x + 0.5)) {
          ++n;
          break;
        }
  return n;
}

Primitive draw_primitive(std::mt19937_64& rng, double size) {
  Primitive p;
  p.kind = static_cast<PrimitiveKind>(rng() % 3);
  switch (p.kind) {
    case PrimitiveKind::ellipse:
      p.ry = uniform(rng, 0.08, 0.2) * size;
      p.rx = uniform(rng, 0.08, 0.2) * size;
      break;
    case PrimitiveKind::rectangle:
      p.ry = uniform(rng, 0.07, 0.17) * size;
      p.rx = uniform(rng, 0.07, 0.17) * size;
      break;
    case PrimitiveKind::bar:
      p.rx = uniform(rng, 0.2, 0.32) * size;
      p.ry = std::max(1.0, uniform(rng, 0.025, 0.045) * size);
      break;
  }
  p.angle = uniform(rng, 0.0, std::numbers::pi);
  const double reach = std::max(p.rx, p.ry) + 1.0;
  p.cy = uniform(rng, reach, size - reach);
  p.cx = uniform(rng, reach, size - reach);
  return p;
}

}  // namespace

SynthLayout synth_layout(std::uint64_t seed, std::size_t index, std::size_t size) {
  if (size < 16) throw std::invalid_argument("synth_layout: size must be at least 16");
  auto rng = sample_rng(seed, index, 0);
  const double s = static_cast<double>(size);
  const std::size_t total = size * size;
  for (;;) {
    SynthLayout layout;
    layout.texture_seed = rng();
    const std::size_t count = 1 + rng() % 3;
    int attempts = 0;
    while (layout.shapes.size() < count && attempts++ < 200) {
      const auto p = draw_primitive(rng, s);
      bool clear = true;
      for (const auto& q : layout.shapes) {
        const double gap = std::hypot(p.cy - q.cy, p.cx - q.cx) - std::max(p.rx, p.ry) - std::max(q.rx, q.ry);
        clear = clear && gap > 2.0;
      }
      if (clear) layout.shapes.push_back(p);
    }
    const std::size_t bm = mask_count(layout.shapes, size);
    if (!layout.shapes.empty() && bm >= 1 && 2 * bm <= total) return layout;
  }
}

Sample render_synth(const SynthLayout& layout, std::size_t size, std::string id) {
  auto rng = sample_rng(layout.texture_seed, size, 1);
  Sample out{Raster(size, size, 3), Raster(size, size, 1), std::move(id)};
  std::array<double, 3> base{}, fg{};
  for (auto& b : base) b = uniform(rng, 0.3, 0.55);
  // shapes differ from the background by a clear but not extreme offset
  const double sign = rng() % 2 ? 1.0 : -1.0;
  for (std::size_t c = 0; c < 3; ++c) fg[c] = std::clamp(base[c] + sign * uniform(rng, 0.2, 0.35), 0.02, 0.98);
  const double fy = uniform(rng, 1.0, 4.0) * 2.0 * std::numbers::pi / size;
  const double fx = uniform(rng, 1.0, 4.0) * 2.0 * std::numbers::pi / size;
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      bool inside = false;
      for (const auto& p : layout.shapes) inside = inside || p.contains(y + 0.5, x + 0.5);
      out.mask.at(y, x) = inside ? 1.0f : 0.0f;
      const double wave = 0.06 * std::sin(fy * y + phase) * std::cos(fx * x);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (inside ? fg[c] : base[c] + wave) + uniform(rng, -0.04, 0.04);
        out.image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

std::vector<Sample> synth_dataset(std::size_t n, std::uint64_t seed, std::size_t size) {
  if (n == 0) throw std::invalid_argument("synth_dataset: n must be at least 1");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", i);
    out.push_back(render_synth(synth_layout(seed, i, size), size, id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[8] = {'R', 'R', 'N', 'E', 'T', 'C', 'K', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw CheckpointError(std::string("checkpoint: ") + what + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : b_(b) {}

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_) + " while reading " + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(b_.begin() + pos_, b_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  const std::uint8_t* at(std::size_t p) const { return b_.data() + p; }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamStore<float>& params, const NetworkConfig& config) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  const std::string cfg = config.to_text();
  put_u32(out, checked_u32(cfg.size(), "config text"));
  out.insert(out.end(), cfg.begin(), cfg.end());
  put_u32(out, checked_u32(params.size(), "entry count"));
  for (const auto& p : params.entries()) {
    const std::size_t start = out.size();
    put_u32(out, checked_u32(p.name.size(), "name length"));
    out.insert(out.end(), p.name.begin(), p.name.end());
    const auto& shape = p.value.shape();
    put_u32(out, checked_u32(shape.size(), "rank"));
    for (auto d : shape) put_u32(out, checked_u32(d, "dimension"));
    for (float v : p.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    put_u32(out, crc(out.data() + start, out.size() - start));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes);
  in.need(8, "magic");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw CheckpointError("not an rrnet checkpoint (bad magic)");
  in.text(8, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (this build reads " +
                          std::to_string(kCheckpointVersion) + "); re-export it with a matching rrnet release");
  }
  Checkpoint ck;
  const std::uint32_t cfg_len = in.u32("config length");
  try {
    ck.config = NetworkConfig::from_text(in.text(cfg_len, "config text"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  const std::uint32_t count = in.u32("entry count");
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::size_t start = in.pos();
    const std::uint32_t name_len = in.u32("name length");
    std::string name = in.text(name_len, "entry name");
    const std::uint32_t rank = in.u32("rank");
    if (rank > 8) throw CheckpointError("checkpoint entry '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = in.u32("dimension");
      // saturate so a hostile header cannot overflow; need() then reports truncation
      numel = d == 0 ? 0 : (numel > bytes.size() / d ? bytes.size() + 1 : numel * d);
    }
    in.need(numel * 4, "entry values");
    std::vector<float> values(numel);
    for (auto& v : values) v = std::bit_cast<float>(in.u32("entry values"));
    const std::size_t end = in.pos();
    const std::uint32_t stored = in.u32("checksum");
    if (stored != crc(in.at(start), end - start)) {
      throw CheckpointError("checkpoint entry '" + name + "' fails its checksum (corrupted file)");
    }
    if (ck.params.contains(name)) throw CheckpointError("checkpoint has duplicate entry '" + name + "'");
    ck.params.insert(name, Tensor<float>::from(shape, std::move(values), true));
  }
  if (!in.done()) {
    throw CheckpointError("checkpoint has " + std::to_string(bytes.size() - in.pos()) + " trailing bytes");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& params, const NetworkConfig& config) {
  write_file(path, encode_checkpoint(params, config));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// manifests

std::vector<std::pair<std::filesystem::path, std::filesystem::path>> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open manifest");
  const auto base = path.parent_path();
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 'image<TAB>mask'");
    }
    std::filesystem::path image = line.substr(0, tab), mask = line.substr(tab + 1);
    if (image.is_relative()) image = base / image;
    if (mask.is_relative()) mask = base / mask;
    out.emplace_back(image, mask);
  }
  if (out.empty()) throw std::runtime_error(path.string() + ": manifest lists no samples");
  return out;
}

std::vector<Sample> load_manifest_samples(const std::filesystem::path& path, std::size_t height, std::size_t width) {
  std::vector<Sample> out;
  for (const auto& [image, mask] : read_manifest(path)) {
    Sample s{read_image(image), read_mask(mask), image.stem().string()};
    if (s.image.height != s.mask.height || s.image.width != s.mask.width) {
      throw std::runtime_error(image.string() + " and " + mask.string() + " differ in size");
    }
    out.push_back(resize(s, height, width));
  }
  return out;
}

}  // namespace rrnet
