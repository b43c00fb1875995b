#include "rrnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include "json.hpp"

namespace rrnet {

namespace {

constexpr double kMachineEps = std::numeric_limits<double>::epsilon();

void check_pair(const Raster& s, const Raster& gt, const char* op) {
  if (s.channels != 1 || gt.channels != 1) throw MetricError(std::string(op) + ": maps must be single-channel");
  if (s.height != gt.height || s.width != gt.width) {
    throw MetricError(std::string(op) + ": prediction is " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                      " but ground truth is " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  if (s.values.empty()) throw MetricError(std::string(op) + ": empty maps");
}

bool positive(float g) { return g >= 0.5f; }

double mean_of(std::vector<double> v) {
  const double n = static_cast<double>(v.size());
  return canonical_sum(std::move(v)) / n;
}

// Largest k with k/255 <= v, or -1 when v < 0.
int threshold_bin(double v) {
  if (v < 0.0) return -1;
  int k = static_cast<int>(std::floor(v * 255.0));
  k = std::clamp(k, 0, 255);
  while (k < 255 && pr_threshold(static_cast<std::size_t>(k) + 1) <= v) ++k;
  while (k >= 0 && pr_threshold(static_cast<std::size_t>(k)) > v) --k;
  return k;
}

}  // namespace

double canonical_sum(std::vector<double> terms) {
  bool finite = true;
  for (double v : terms) finite = finite && std::isfinite(v);
  if (finite) std::sort(terms.begin(), terms.end());
  double total = 0;
  for (double v : terms) total += v;
  return total;
}

double pr_threshold(std::size_t k) { return static_cast<double>(k) / 255.0; }

double mae(const Raster& s, const Raster& gt) {
  check_pair(s, gt, "mae");
  std::vector<double> d(s.values.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(static_cast<double>(s.values[i]) - gt.values[i]);
  return mean_of(std::move(d));
}

std::array<ConfusionCounts, kPrThresholds> confusion_curve(const Raster& s, const Raster& gt) {
  check_pair(s, gt, "pr_curve");
  // hist[k]: pixels whose value falls in [t_k, t_{k+1})
  std::array<std::size_t, kPrThresholds> pos_hist{}, neg_hist{};
  std::size_t pos_total = 0, neg_total = 0;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const int k = threshold_bin(s.values[i]);
    const bool p = positive(gt.values[i]);
    (p ? pos_total : neg_total)++;
    if (k >= 0) (p ? pos_hist : neg_hist)[static_cast<std::size_t>(k)]++;
  }
  std::array<ConfusionCounts, kPrThresholds> out{};
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = kPrThresholds; k-- > 0;) {
    tp += pos_hist[k];
    fp += neg_hist[k];
    out[k] = {tp, fp, pos_total - tp, neg_total - fp};
  }
  return out;
}

PrCurve pr_curve(const Raster& s, const Raster& gt) {
  const auto counts = confusion_curve(s, gt);
  if (counts[0].tp + counts[0].fn == 0) {
    throw MetricError("pr_curve: ground truth has no salient pixel");
  }
  PrCurve out{};
  for (std::size_t k = 0; k < kPrThresholds; ++k) {
    const auto& c = counts[k];
    out[k].precision = c.tp + c.fp == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    out[k].recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  return out;
}

double f_beta(const PrPoint& p, double beta2) {
  const double den = beta2 * p.precision + p.recall;
  return den == 0.0 ? 0.0 : (1.0 + beta2) * p.precision * p.recall / den;
}

double f_measure(const Raster& s, const Raster& gt, const MetricOptions& opt) {
  if (!opt.adaptive_f) {
    double best = 0;
    for (const auto& p : pr_curve(s, gt)) best = std::max(best, f_beta(p, opt.beta2));
    return best;
  }
  check_pair(s, gt, "f_measure");
  std::vector<double> v(s.values.begin(), s.values.end());
  const double t = std::min(2.0 * mean_of(std::move(v)), 1.0);
  std::size_t tp = 0, fp = 0, pos = 0;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const bool pred = s.values[i] >= t;
    const bool p = positive(gt.values[i]);
    pos += p;
    tp += pred && p;
    fp += pred && !p;
  }
  if (pos == 0) throw MetricError("f_measure: ground truth has no salient pixel");
  PrPoint pt{tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp),
             static_cast<double>(tp) / static_cast<double>(pos)};
  return f_beta(pt, opt.beta2);
}

namespace {

// 2x / (x^2 + 1 + sigma + eps) over the selected pixel values, 0 when empty.
double object_score(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double n = static_cast<double>(values.size());
  const double x = canonical_sum(values) / n;
  double sigma = 0;
  if (values.size() > 1) {
    std::vector<double> sq(values.size());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = (values[i] - x) * (values[i] - x);
    sigma = std::sqrt(canonical_sum(std::move(sq)) / (n - 1.0));
  }
  return 2.0 * x / (x * x + 1.0 + sigma + kMachineEps);
}

double ssim_region(const Raster& s, const Raster& gt, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
  std::vector<double> sv, gv;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      sv.push_back(s.at(y, x));
      gv.push_back(positive(gt.at(y, x)) ? 1.0 : 0.0);
    }
  const double n = static_cast<double>(sv.size());
  const double mx = canonical_sum(sv) / n;
  const double my = canonical_sum(gv) / n;
  std::vector<double> vx(sv.size()), vy(sv.size()), cxy(sv.size());
  for (std::size_t i = 0; i < sv.size(); ++i) {
    vx[i] = (sv[i] - mx) * (sv[i] - mx);
    vy[i] = (gv[i] - my) * (gv[i] - my);
    cxy[i] = (sv[i] - mx) * (gv[i] - my);
  }
  const double norm = n - 1.0 + kMachineEps;
  const double sx2 = canonical_sum(std::move(vx)) / norm;
  const double sy2 = canonical_sum(std::move(vy)) / norm;
  const double sxy = canonical_sum(std::move(cxy)) / norm;
  const double a = 4.0 * mx * my * sxy;
  const double b = (mx * mx + my * my) * (sx2 + sy2);
  if (a != 0.0) return a / (b + kMachineEps);
  return b == 0.0 ? 1.0 : 0.0;
}

// Split index for one axis: the centroid of the positive pixel centres,
// rounded half-to-even. For an even extent n the split of a mirrored map is
// n minus the split, so quadrants map onto quadrants under any dihedral move.
std::size_t centroid_split(std::size_t coord_sum, std::size_t count) {
  // centroid in continuous coordinates = (2 * coord_sum + count) / (2 * count)
  const std::size_t num = 2 * coord_sum + count, den = 2 * count;
  std::size_t q = num / den;
  const std::size_t r = num % den;
  if (2 * r > den || (2 * r == den && q % 2 == 1)) ++q;
  return q;
}

}  // namespace

double s_measure(const Raster& s, const Raster& gt, double alpha) {
  check_pair(s, gt, "s_measure");
  const std::size_t n = s.values.size();
  std::size_t pos = 0, sum_y = 0, sum_x = 0;
  for (std::size_t y = 0; y < gt.height; ++y)
    for (std::size_t x = 0; x < gt.width; ++x)
      if (positive(gt.at(y, x))) {
        ++pos;
        sum_y += y;
        sum_x += x;
      }
  std::vector<double> all(s.values.begin(), s.values.end());
  if (pos == 0) return 1.0 - canonical_sum(std::move(all)) / static_cast<double>(n);
  if (pos == n) return canonical_sum(std::move(all)) / static_cast<double>(n);

  const double u = static_cast<double>(pos) / static_cast<double>(n);
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < n; ++i) {
    if (positive(gt.values[i])) fg.push_back(s.values[i]);
    else bg.push_back(1.0 - s.values[i]);
  }
  const double object = u * object_score(fg) + (1.0 - u) * object_score(bg);

  const std::size_t cy = centroid_split(sum_y, pos), cx = centroid_split(sum_x, pos);
  const std::size_t h = gt.height, w = gt.width;
  const double area = static_cast<double>(n);
  const std::array<std::array<std::size_t, 4>, 4> quads{{{0, cy, 0, cx}, {0, cy, cx, w}, {cy, h, 0, cx}, {cy, h, cx, w}}};
  std::vector<double> terms;
  for (const auto& q : quads) {
    const std::size_t count = (q[1] - q[0]) * (q[3] - q[2]);
    if (count == 0) continue;
    terms.push_back(static_cast<double>(count) / area * ssim_region(s, gt, q[0], q[1], q[2], q[3]));
  }
  const double region = canonical_sum(std::move(terms));
  return std::max(0.0, alpha * object + (1.0 - alpha) * region);
}

double e_measure(const Raster& s, const Raster& gt, double eps) {
  check_pair(s, gt, "e_measure");
  const std::size_t n = s.values.size();
  std::vector<double> v(s.values.begin(), s.values.end());
  const double t = std::min(2.0 * mean_of(std::move(v)), 1.0);
  // phi depends only on the (gt, binarized s) pair, so count the four cells
  std::array<std::array<std::size_t, 2>, 2> cell{};
  for (std::size_t i = 0; i < n; ++i) cell[positive(gt.values[i])][s.values[i] >= t]++;
  const std::size_t gt_pos = cell[1][0] + cell[1][1];
  const std::size_t s_pos = cell[0][1] + cell[1][1];
  const double dn = static_cast<double>(n);
  double total = 0;
  if (gt_pos == 0) {
    total = static_cast<double>(cell[0][0]);  // phi = 1 - Sb
  } else if (gt_pos == n) {
    total = static_cast<double>(cell[1][1]);  // phi = Sb
  } else {
    const double mu_g = static_cast<double>(gt_pos) / dn, mu_s = static_cast<double>(s_pos) / dn;
    for (int g = 0; g < 2; ++g)
      for (int b = 0; b < 2; ++b) {
        const double dg = g - mu_g, ds = b - mu_s;
        const double align = 2.0 * dg * ds / (dg * dg + ds * ds + eps);
        total += static_cast<double>(cell[g][b]) * (align + 1.0) * (align + 1.0) / 4.0;
      }
  }
  return total / dn;
}

ImageMetrics evaluate_image(const Raster& s, const Raster& gt, std::string id, const MetricOptions& opt) {
  ImageMetrics m;
  m.id = std::move(id);
  m.mae = mae(s, gt);
  m.s_m = s_measure(s, gt, opt.alpha);
  m.e_m = e_measure(s, gt, opt.e_eps);
  m.pr_valid = std::any_of(gt.values.begin(), gt.values.end(), positive);
  if (m.pr_valid) {
    m.pr = pr_curve(s, gt);
    m.f_beta = f_measure(s, gt, opt);
  }
  return m;
}

MetricReport aggregate(std::vector<ImageMetrics> rows) {
  MetricReport r;
  if (rows.empty()) throw MetricError("aggregate: no images");
  std::vector<double> maes, es, ss, fs;
  for (const auto& m : rows) {
    maes.push_back(m.mae);
    es.push_back(m.e_m);
    ss.push_back(m.s_m);
    if (m.pr_valid) fs.push_back(m.f_beta);
  }
  r.mae = mean_of(std::move(maes));
  r.e_m = mean_of(std::move(es));
  r.s_m = mean_of(std::move(ss));
  r.pr_images = fs.size();
  if (!fs.empty()) {
    r.f_beta_max = mean_of(std::move(fs));
    for (std::size_t k = 0; k < kPrThresholds; ++k) {
      std::vector<double> p, q;
      for (const auto& m : rows) {
        if (!m.pr_valid) continue;
        p.push_back(m.pr[k].precision);
        q.push_back(m.pr[k].recall);
      }
      r.pr_curve[k] = {mean_of(std::move(p)), mean_of(std::move(q))};
    }
  }
  r.per_image = std::move(rows);
  return r;
}

std::string report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["aggregate"] = {{"mae", r.mae},     {"f_beta_max", r.f_beta_max},       {"e_m", r.e_m},
                    {"s_m", r.s_m},     {"images", r.per_image.size()},     {"pr_images", r.pr_images}};
  auto rows = nlohmann::ordered_json::array();
  for (const auto& m : r.per_image) {
    nlohmann::ordered_json row{{"id", m.id}, {"mae", m.mae}, {"e_m", m.e_m}, {"s_m", m.s_m}};
    if (m.pr_valid) row["f_beta_max"] = m.f_beta;
    else row["f_beta_max"] = nullptr;
    row["pr_valid"] = m.pr_valid;
    rows.push_back(std::move(row));
  }
  j["per_image"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string pr_curve_csv(const PrCurve& curve) {
  std::string out = "threshold,precision,recall\n";
  char line[96];
  for (std::size_t k = 0; k < kPrThresholds; ++k) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", pr_threshold(k), curve[k].precision, curve[k].recall);
    out += line;
  }
  return out;
}

}  // namespace rrnet
