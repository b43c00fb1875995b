#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "rrnet/attention.hpp"

namespace rrnet {

/// Thrown for malformed configuration text or invalid settings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat key=value text. Blank lines and lines starting with '#' are ignored.
std::map<std::string, std::string> parse_key_values(const std::string& text);

struct NetworkConfig {
  std::array<std::size_t, 5> stage_channels{16, 32, 64, 64, 64};
  std::size_t decoder_width = 32;
  std::size_t input_height = 224;
  std::size_t input_width = 224;

  bool use_pma = true;
  bool use_srr = true;
  bool use_crr = true;
  bool use_nonlocal = false;
  PmaBranch pma_branch = PmaBranch::both;
  bool rr_residual = false;
  bool shared_projection = true;
  FeatureActivation right_activation = FeatureActivation::relu;
  std::size_t right_att_kernel = 7;

  /// Throws ConfigError when the settings are inconsistent.
  void validate() const;

  /// Spatial size of backbone stage s (1..5).
  std::size_t stage_height(int s) const { return input_height >> s; }
  std::size_t stage_width(int s) const { return input_width >> s; }

  std::string to_text() const;
  /// Reads known keys from `kv`, leaving the rest at their defaults.
  static NetworkConfig from_key_values(const std::map<std::string, std::string>& kv);
  static NetworkConfig from_text(const std::string& text) { return from_key_values(parse_key_values(text)); }

  bool operator==(const NetworkConfig&) const = default;
};

/// Named ablation rows: baseline, pma, pma_srr, full, nonlocal, left_only, right_only.
NetworkConfig ablation_config(const std::string& name, NetworkConfig base = {});

}  // namespace rrnet
