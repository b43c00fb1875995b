#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rrnet/config.hpp"
#include "rrnet/params.hpp"

namespace rrnet {

/// Row-major H x W x C raster of reals in [0,1].
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> values;

  Raster() = default;
  Raster(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), values(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t ch = 0) { return values[(y * width + x) * channels + ch]; }
  float at(std::size_t y, std::size_t x, std::size_t ch = 0) const { return values[(y * width + x) * channels + ch]; }
  bool operator==(const Raster&) const = default;
};

struct Sample {
  Raster image;  // H x W x 3
  Raster mask;   // H x W x 1, strictly {0,1}
  std::string id;
};

/// Malformed or unsupported file content. `offset` is the byte position the
/// parser had reached.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& source, std::size_t offset, const std::string& what);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Binary netpbm, 8 bit, maxval 255 only. P6 gives 3 channels, P5 gives 1.
Raster decode_netpbm(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");
std::vector<std::uint8_t> encode_netpbm(const Raster& r);  // P5 for 1 channel, P6 for 3

Raster read_image(const std::filesystem::path& path);  // P6
Raster read_map(const std::filesystem::path& path);    // P5, values byte/255
/// P5 ground truth binarized with byte >= 128.
Raster read_mask(const std::filesystem::path& path);
/// Writes P6 (3 channels) or P5 (1 channel); values are clamped and stored as round(v * 255).
void write_raster(const std::filesystem::path& path, const Raster& r);
void write_map(const std::filesystem::path& path, const Raster& map);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Dihedral group of the square. Element d = (flip, r): flip horizontally when
// d >= 4, then rotate clockwise by 90 * (d % 4) degrees. d = 0 is identity.
Raster rotate90(const Raster& r);  // clockwise
Raster flip_horizontal(const Raster& r);
Raster dihedral(const Raster& r, int d);
/// Index e with dihedral(dihedral(x, d), e) == x.
int dihedral_inverse(int d);
/// Original plus the 7 non-identity variants, in element order 0..7.
std::vector<Sample> augment7(const Sample& s);

Raster resize_bilinear(const Raster& r, std::size_t height, std::size_t width);
Raster resize_nearest(const Raster& r, std::size_t height, std::size_t width);
/// Image bilinear, mask nearest-neighbour.
Sample resize(const Sample& s, std::size_t height, std::size_t width);

// Synthetic shapes dataset.
enum class PrimitiveKind { ellipse, rectangle, bar };

/// A filled primitive centred at (cy, cx), half extents (ry, rx) along its own
/// axes, rotated by `angle` radians.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::ellipse;
  double cy = 0, cx = 0, ry = 0, rx = 0, angle = 0;

  bool contains(double y, double x) const;
  double area() const;
  double perimeter() const;
};

struct SynthLayout {
  std::vector<Primitive> shapes;
  std::uint64_t texture_seed = 0;
};

/// Shape layout for sample `index`; depends only on (seed, index, size).
SynthLayout synth_layout(std::uint64_t seed, std::size_t index, std::size_t size);
Sample render_synth(const SynthLayout& layout, std::size_t size, std::string id);
std::vector<Sample> synth_dataset(std::size_t n, std::uint64_t seed, std::size_t size);

// Checkpoints: "RRNETCK1", u32 version, u32 config length, config text,
// u32 entry count, then per entry u32 name length, name, u32 rank, u32 dims,
// f32 values, u32 crc32 of the entry bytes. All integers little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  NetworkConfig config;
  ParamStore<float> params;
};

std::vector<std::uint8_t> encode_checkpoint(const ParamStore<float>& params, const NetworkConfig& config);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& params, const NetworkConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Lines "image<TAB>mask"; relative paths resolve against the manifest's directory.
std::vector<std::pair<std::filesystem::path, std::filesystem::path>> read_manifest(const std::filesystem::path& path);
/// Reads every manifest pair, resized to height x width.
std::vector<Sample> load_manifest_samples(const std::filesystem::path& path, std::size_t height, std::size_t width);

}  // namespace rrnet
