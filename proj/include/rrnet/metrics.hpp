#pragma once

#include <array>
#include <string>
#include <vector>

#include "rrnet/dataio.hpp"

// Saliency evaluation. Maps are single-channel rasters; predictions lie in
// [0,1] and ground truth is binary. Every sum is taken in a canonical order,
// so all scores are exactly invariant to a common flip/rotation of the pair.

namespace rrnet {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MetricOptions {
  double beta2 = 0.3;          // F-measure weight
  double alpha = 0.5;          // S-measure object/region balance
  double e_eps = 1e-8;         // E-measure alignment denominator guard
  bool adaptive_f = false;     // F at threshold min(2 mean(s), 1) instead of the max over thresholds
};

inline constexpr std::size_t kPrThresholds = 256;  // t_k = k / 255

struct PrPoint {
  double precision = 0;
  double recall = 0;
};
using PrCurve = std::array<PrPoint, kPrThresholds>;

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

double pr_threshold(std::size_t k);

double mae(const Raster& s, const Raster& gt);
/// Confusion counts of s >= t against gt for every threshold.
std::array<ConfusionCounts, kPrThresholds> confusion_curve(const Raster& s, const Raster& gt);
/// Throws MetricError when gt has no positive pixel.
PrCurve pr_curve(const Raster& s, const Raster& gt);
double f_beta(const PrPoint& p, double beta2 = 0.3);
/// Max F over the 256 thresholds (or the adaptive-threshold F when requested).
double f_measure(const Raster& s, const Raster& gt, const MetricOptions& opt = {});
double s_measure(const Raster& s, const Raster& gt, double alpha = 0.5);
double e_measure(const Raster& s, const Raster& gt, double eps = 1e-8);

struct ImageMetrics {
  std::string id;
  double mae = 0;
  double f_beta = 0;
  double e_m = 0;
  double s_m = 0;
  bool pr_valid = true;  // false for all-background ground truth (excluded from F and P-R)
  PrCurve pr{};
};

struct MetricReport {
  double mae = 0;
  double f_beta_max = 0;
  double e_m = 0;
  double s_m = 0;
  PrCurve pr_curve{};
  std::size_t pr_images = 0;
  std::vector<ImageMetrics> per_image;
};

ImageMetrics evaluate_image(const Raster& s, const Raster& gt, std::string id, const MetricOptions& opt = {});
/// Aggregates are means of the per-image rows; F and P-R average only pr_valid rows.
MetricReport aggregate(std::vector<ImageMetrics> rows);

std::string report_json(const MetricReport& r);
/// 256 rows "threshold,precision,recall" after a header line.
std::string pr_curve_csv(const PrCurve& curve);

/// Sum of `terms` in ascending order (input order when any term is not finite).
double canonical_sum(std::vector<double> terms);

}  // namespace rrnet
