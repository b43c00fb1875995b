#include "rrnet/config.hpp"

#include <sstream>

namespace rrnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v.front() == '-') {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(n);
}

const char* branch_name(PmaBranch b) {
  switch (b) {
    case PmaBranch::left: return "left";
    case PmaBranch::right: return "right";
    case PmaBranch::both: break;
  }
  return "both";
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void NetworkConfig::validate() const {
  for (auto c : stage_channels) {
    if (c == 0) throw ConfigError("stage_channels must all be positive");
  }
  if (decoder_width == 0) throw ConfigError("decoder_width must be positive");
  if (input_height == 0 || input_width == 0 || input_height % 32 || input_width % 32) {
    throw ConfigError("input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                      " must be a positive multiple of 32");
  }
  if (use_nonlocal && (use_srr || use_crr)) {
    throw ConfigError("use_nonlocal cannot be combined with use_srr or use_crr");
  }
  if (right_att_kernel % 2 == 0) throw ConfigError("right_att_kernel must be odd");
}

std::string NetworkConfig::to_text() const {
  std::ostringstream os;
  os << "stage_channels=";
  for (std::size_t i = 0; i < stage_channels.size(); ++i) os << (i ? "," : "") << stage_channels[i];
  os << "\ndecoder_width=" << decoder_width << "\ninput_height=" << input_height
     << "\ninput_width=" << input_width << "\nuse_pma=" << use_pma << "\nuse_srr=" << use_srr
     << "\nuse_crr=" << use_crr << "\nuse_nonlocal=" << use_nonlocal << "\npma_branch=" << branch_name(pma_branch)
     << "\nrr_residual=" << rr_residual << "\nshared_projection=" << shared_projection
     << "\nright_activation=" << (right_activation == FeatureActivation::relu ? "relu" : "sigmoid")
     << "\nright_att_kernel=" << right_att_kernel << "\nupsample=nearest\n";
  return os.str();
}

NetworkConfig NetworkConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  NetworkConfig c;
  for (const auto& [key, v] : kv) {
    if (key == "stage_channels") {
      std::istringstream in(v);
      std::string item;
      std::size_t i = 0;
      while (std::getline(in, item, ',')) {
        if (i >= 5) throw ConfigError("stage_channels needs exactly 5 values");
        c.stage_channels[i++] = parse_size(key, trim(item));
      }
      if (i != 5) throw ConfigError("stage_channels needs exactly 5 values");
    } else if (key == "decoder_width") {
      c.decoder_width = parse_size(key, v);
    } else if (key == "input_height") {
      c.input_height = parse_size(key, v);
    } else if (key == "input_width") {
      c.input_width = parse_size(key, v);
    } else if (key == "input_size") {
      c.input_height = c.input_width = parse_size(key, v);
    } else if (key == "use_pma") {
      c.use_pma = parse_bool(key, v);
    } else if (key == "use_srr") {
      c.use_srr = parse_bool(key, v);
    } else if (key == "use_crr") {
      c.use_crr = parse_bool(key, v);
    } else if (key == "use_nonlocal") {
      c.use_nonlocal = parse_bool(key, v);
    } else if (key == "pma_branch") {
      if (v == "both") c.pma_branch = PmaBranch::both;
      else if (v == "left") c.pma_branch = PmaBranch::left;
      else if (v == "right") c.pma_branch = PmaBranch::right;
      else throw ConfigError("pma_branch must be both, left or right, got '" + v + "'");
    } else if (key == "rr_residual") {
      c.rr_residual = parse_bool(key, v);
    } else if (key == "shared_projection") {
      c.shared_projection = parse_bool(key, v);
    } else if (key == "right_activation") {
      if (v == "relu") c.right_activation = FeatureActivation::relu;
      else if (v == "sigmoid") c.right_activation = FeatureActivation::sigmoid;
      else throw ConfigError("right_activation must be relu or sigmoid, got '" + v + "'");
    } else if (key == "right_att_kernel") {
      c.right_att_kernel = parse_size(key, v);
    } else if (key == "upsample") {
      // bilinear would slot in here; only nearest-neighbour is implemented
      if (v != "nearest") throw ConfigError("upsample supports only 'nearest', got '" + v + "'");
    }
  }
  return c;
}

NetworkConfig ablation_config(const std::string& name, NetworkConfig base) {
  base.use_nonlocal = false;
  base.pma_branch = PmaBranch::both;
  if (name == "baseline") {
    base.use_pma = base.use_srr = base.use_crr = false;
  } else if (name == "pma") {
    base.use_pma = true;
    base.use_srr = base.use_crr = false;
  } else if (name == "pma_srr") {
    base.use_pma = base.use_srr = true;
    base.use_crr = false;
  } else if (name == "full") {
    base.use_pma = base.use_srr = base.use_crr = true;
  } else if (name == "nonlocal") {
    base.use_pma = true;
    base.use_srr = base.use_crr = false;
    base.use_nonlocal = true;
  } else if (name == "left_only" || name == "right_only") {
    base.use_pma = base.use_srr = base.use_crr = true;
    base.pma_branch = name == "left_only" ? PmaBranch::left : PmaBranch::right;
  } else {
    throw ConfigError("unknown ablation '" + name + "'");
  }
  return base;
}

}  // namespace rrnet
