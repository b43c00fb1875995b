// rrnet command-line tool: gen-data, train, infer, eval, self-check.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "rrnet/dataio.hpp"
#include "rrnet/metrics.hpp"
#include "rrnet/pipeline.hpp"
#include "rrnet/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace rrnet;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumerical = 3 };

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// gen-data

struct GenArgs {
  fs::path out = "data";
  std::size_t n = 8;
  std::uint64_t seed = 7;
  std::size_t size = 64;
};

int cmd_gen_data(const GenArgs& a) {
  fs::create_directories(a.out / "images");
  fs::create_directories(a.out / "masks");
  std::ofstream manifest(a.out / "manifest.tsv");
  if (!manifest) throw DataError((a.out / "manifest.tsv").string() + ": cannot write");
  for (const auto& s : synth_dataset(a.n, a.seed, a.size)) {
    const fs::path image = fs::path("images") / (s.id + ".ppm");
    const fs::path mask = fs::path("masks") / (s.id + ".pgm");
    write_raster(a.out / image, s.image);
    write_map(a.out / mask, s.mask);
    manifest << image.generic_string() << '\t' << mask.generic_string() << '\n';
  }
  std::cout << "wrote " << a.n << " samples to " << a.out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::optional<fs::path> config;
  std::optional<fs::path> manifest;
  std::optional<std::size_t> synthetic;
  fs::path out = "rrnet.ckpt";
  std::optional<fs::path> log;
  std::optional<std::string> ablation;
  std::optional<std::size_t> iters, batch, size, log_every;
  std::optional<double> lr0, lr1;
  std::optional<std::uint64_t> seed;
  bool no_augment = false;
};

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw DataError(p.string() + ": cannot open");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::size_t parse_count(const std::map<std::string, std::string>& kv, const std::string& key, std::size_t fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(it->second, &pos);
    if (pos == it->second.size() && it->second.front() != '-') return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + it->second + "'");
}

double parse_real(const std::map<std::string, std::string>& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects a number, got '" + it->second + "'");
}

int cmd_train(const TrainArgs& a) {
  std::map<std::string, std::string> kv;
  if (a.config) kv = parse_key_values(read_text(*a.config));
  NetworkConfig cfg = NetworkConfig::from_key_values(kv);
  if (!kv.count("input_size") && !kv.count("input_height") && !kv.count("input_width")) {
    cfg.input_height = cfg.input_width = 64;  // desk-scale default
  }
  if (a.size) cfg.input_height = cfg.input_width = *a.size;
  if (a.ablation) cfg = ablation_config(*a.ablation, cfg);
  cfg.validate();

  TrainOptions opt;
  opt.iterations = a.iters.value_or(parse_count(kv, "iterations", opt.iterations));
  opt.batch_size = a.batch.value_or(parse_count(kv, "batch_size", opt.batch_size));
  opt.initial_lr = a.lr0.value_or(parse_real(kv, "initial_lr", opt.initial_lr));
  opt.final_lr = a.lr1.value_or(parse_real(kv, "final_lr", opt.final_lr));
  opt.seed = a.seed.value_or(parse_count(kv, "seed", opt.seed));
  opt.log_every = a.log_every.value_or(parse_count(kv, "log_every", opt.log_every));
  opt.augment = !a.no_augment && parse_count(kv, "augment", 1) != 0;

  if (a.manifest.has_value() == a.synthetic.has_value()) {
    throw CLI::ValidationError("train: give exactly one of --manifest or --synthetic");
  }
  std::vector<Sample> data;
  try {
    data = a.manifest ? load_manifest_samples(*a.manifest, cfg.input_height, cfg.input_width)
                      : synth_dataset(*a.synthetic, opt.seed, cfg.input_height);
    if (a.synthetic && cfg.input_width != cfg.input_height) {
      for (auto& s : data) s = resize(s, cfg.input_height, cfg.input_width);
    }
  } catch (const FormatError& e) {
    throw DataError(e.what());
  }

  RRNet<float> net(cfg, opt.seed);
  std::ofstream log_file;
  if (a.log) {
    log_file.open(*a.log);
    if (!log_file) throw DataError(a.log->string() + ": cannot write");
  }
  train(net, data, opt, [&](const LossRecord& r) {
    const auto line = format_loss_record(r);
    std::cout << line << std::endl;
    if (log_file.is_open()) log_file << line << '\n';
  });
  save_checkpoint(a.out, net.params(), cfg);
  return kOk;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
  fs::path checkpoint, image, out;
};

int cmd_infer(const InferArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  RRNet<float> net(ck.config, std::move(ck.params));
  const Raster image = read_image(a.image);
  const auto t0 = std::chrono::steady_clock::now();
  const Raster map = predict_raster(net, image);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  write_map(a.out, map);
  std::cout << a.image.filename().string() << "\t" << ms << " ms\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  fs::path pred_dir, gt_dir;
  fs::path report = "report.json";
  fs::path pr_csv = "prcurve.csv";
  bool adaptive_f = false;
  double beta2 = 0.3;
  double alpha = 0.5;
};

std::set<std::string> pgm_names(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a directory");
  std::set<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") out.insert(e.path().filename().string());
  return out;
}

unsigned eval_threads(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RRNET_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

int cmd_eval(const EvalArgs& a) {
  const auto preds = pgm_names(a.pred_dir);
  const auto gts = pgm_names(a.gt_dir);
  std::vector<std::string> names, unpaired;
  for (const auto& n : preds) (gts.count(n) ? names : unpaired).push_back(n);
  for (const auto& n : gts)
    if (!preds.count(n)) unpaired.push_back(n);
  if (!unpaired.empty()) {
    std::cerr << "eval: unpaired files:\n";
    for (const auto& n : unpaired) std::cerr << "  " << n << "\n";
    return kDataError;
  }
  if (names.empty()) throw DataError("eval: no .pgm files to compare");

  MetricOptions opt;
  opt.adaptive_f = a.adaptive_f;
  opt.beta2 = a.beta2;
  opt.alpha = a.alpha;
  std::vector<ImageMetrics> rows(names.size());
  std::vector<std::string> errors(names.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < names.size(); i = next++) {
      try {
        const Raster s = read_map(a.pred_dir / names[i]);
        const Raster gt = read_mask(a.gt_dir / names[i]);
        rows[i] = evaluate_image(s, gt, fs::path(names[i]).stem().string(), opt);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < eval_threads(names.size()); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);
  for (const auto& r : rows)
    if (!r.pr_valid) std::cerr << "warning: " << r.id << " has all-background ground truth; excluded from F and P-R\n";

  const auto report = aggregate(std::move(rows));
  std::ofstream(a.report) << report_json(report);
  std::ofstream(a.pr_csv) << pr_curve_csv(report.pr_curve);
  std::cout << "images\t" << report.per_image.size() << "\nmae\t" << report.mae << "\nf_beta_max\t"
            << report.f_beta_max << "\ne_m\t" << report.e_m << "\ns_m\t" << report.s_m << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_self_check(unsigned seed) {
  bool all = true;
  for (const auto& r : run_self_check(seed)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
    if (!r.detail.empty()) std::cout << ": " << r.detail;
    std::cout << "\n";
    all = all && r.passed;
  }
  return all ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rrnet: salient object detection with relational reasoning and multi-scale attention"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Write a synthetic shapes dataset (PPM images, PGM masks, manifest)");
  g->add_option("--out", gen.out, "Output directory")->capture_default_str();
  g->add_option("-n,--count", gen.n, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--size", gen.size, "Square image size")->capture_default_str()->check(CLI::Range(16, 4096));

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and write a checkpoint");
  t->add_option("--config", tr.config, "key=value config file (network and training keys)");
  t->add_option("--manifest", tr.manifest, "Manifest of image<TAB>mask pairs");
  t->add_option("--synthetic", tr.synthetic, "Train on n synthetic samples")->check(CLI::PositiveNumber);
  t->add_option("--out", tr.out, "Checkpoint path")->capture_default_str();
  t->add_option("--log", tr.log, "Also write the loss log here");
  t->add_option("--ablation", tr.ablation, "baseline, pma, pma_srr, full, nonlocal, left_only, right_only");
  t->add_option("--iters", tr.iters, "Iterations (default 2000)");
  t->add_option("--batch", tr.batch, "Batch size (default 8)");
  t->add_option("--size", tr.size, "Square input size, a multiple of 32 (default 64)");
  t->add_option("--lr0", tr.lr0, "Initial learning rate (default 5e-5)");
  t->add_option("--lr1", tr.lr1, "Final learning rate (default 5e-7)");
  t->add_option("--seed", tr.seed, "Seed for data, initialization and batching (default 7)");
  t->add_option("--log-every", tr.log_every, "Loss log interval (default 100)");
  t->add_flag("--no-augment", tr.no_augment, "Skip the 7 dihedral variants");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Predict a saliency map for one PPM image");
  i->add_option("--checkpoint", inf.checkpoint, "Checkpoint path")->required();
  i->add_option("--image", inf.image, "Input PPM (P6)")->required();
  i->add_option("--out", inf.out, "Output PGM (P5)")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score predicted maps against ground truth");
  e->add_option("--pred", ev.pred_dir, "Directory of predicted .pgm maps")->required();
  e->add_option("--gt", ev.gt_dir, "Directory of ground-truth .pgm masks (same file names)")->required();
  e->add_option("--report", ev.report, "JSON report path")->capture_default_str();
  e->add_option("--pr-csv", ev.pr_csv, "P-R curve CSV path")->capture_default_str();
  e->add_flag("--adaptive-f", ev.adaptive_f, "Adaptive-threshold F instead of max F");
  e->add_option("--beta2", ev.beta2, "F-measure beta^2")->capture_default_str();
  e->add_option("--alpha", ev.alpha, "S-measure alpha")->capture_default_str();

  unsigned check_seed = 1;
  auto* sc = app.add_subcommand("self-check", "Run gradient checks and invariant checks");
  sc->add_option("--seed", check_seed, "Seed for the random cases")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*i) return cmd_infer(inf);
    if (*e) return cmd_eval(ev);
    if (*sc) return cmd_self_check(check_seed);
  } catch (const CLI::ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kUsage;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return kNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDataError;
  }
  return kUsage;
}
