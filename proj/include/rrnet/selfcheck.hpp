#pragma once

#include <string>
#include <vector>

namespace rrnet {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick gradient checks and invariant checks over every module; a few
/// seconds on a laptop.
std::vector<CheckResult> run_self_check(unsigned seed = 1);

}  // namespace rrnet
