#include "rrnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace rrnet {

Tensor<float> to_tensor(const Raster& r) { return Tensor<float>::from({r.height, r.width, r.channels}, r.values); }

Raster to_raster(const Tensor<float>& t) {
  if (t.rank() != 3) throw ShapeError("to_raster: expected an H x W x C tensor, got " + shape_str(t.shape()));
  Raster r(t.dim(0), t.dim(1), t.dim(2));
  r.values = t.to_vector();
  return r;
}

Raster predict_raster(const RRNet<float>& net, const Raster& image) {
  const auto& cfg = net.config();
  const bool native = image.height == cfg.input_height && image.width == cfg.input_width;
  const Raster input = native ? image : resize_bilinear(image, cfg.input_height, cfg.input_width);
  Raster map = to_raster(net.predict(to_tensor(input)).map);
  return native ? map : resize_bilinear(map, image.height, image.width);
}

std::string format_loss_record(const LossRecord& r) {
  char line[96];
  std::snprintf(line, sizeof line, "%zu\t%.6g\t%.6g", r.iter, r.loss, r.lr);
  return line;
}

namespace {

struct TrainItem {
  Tensor<float> image;
  Tensor<float> mask;
};

std::vector<TrainItem> training_items(const std::vector<Sample>& data, const NetworkConfig& cfg, bool augment) {
  std::vector<TrainItem> items;
  for (const auto& s : data) {
    const auto variants = augment ? augment7(s) : std::vector<Sample>{s};
    for (const auto& v : variants) {
      // 90 degree rotations swap H and W; bring every variant back to the network size
      const Sample sized = v.image.height == cfg.input_height && v.image.width == cfg.input_width
                               ? v
                               : resize(v, cfg.input_height, cfg.input_width);
      items.push_back({to_tensor(sized.image), to_tensor(sized.mask)});
    }
  }
  return items;
}

// Fisher-Yates with an explicit draw so the order is the same on every platform.
void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(static_cast<double>(rng() >> 11) * 0x1.0p-53 * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
}

class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed ^ 0x5DEECE66DULL) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    shuffle(order_, rng_);
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        shuffle(order_, rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

void require_finite(double v, std::size_t iter, const char* what) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string("non-finite ") + what + " at iteration " + std::to_string(iter));
  }
}

}  // namespace

std::vector<LossRecord> train(RRNet<float>& net, const std::vector<Sample>& data, const TrainOptions& opt,
                              const std::function<void(const LossRecord&)>& on_log) {
  if (data.empty()) throw std::invalid_argument("train: no training samples");
  if (opt.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (opt.log_every == 0) throw std::invalid_argument("train: log interval must be positive");
  std::vector<LossRecord> log;
  if (opt.iterations == 0) return log;

  const auto items = training_items(data, net.config(), opt.augment);
  BatchSampler sampler(items.size(), opt.seed);
  auto state = make_adam_state(net.params(), LrSchedule{opt.initial_lr, opt.final_lr, opt.iterations});
  const auto& entries = net.params().entries();
  const float inv_batch = 1.0f / static_cast<float>(opt.batch_size);

  auto record = [&](std::size_t iter, double loss) {
    LossRecord r{iter, loss, state.current_lr()};
    log.push_back(r);
    if (on_log) on_log(r);
  };

  for (std::size_t iter = 0; iter <= opt.iterations; ++iter) {
    const auto batch = sampler.next(opt.batch_size);
    const bool last = iter == opt.iterations;
    std::vector<std::vector<float>> grads(entries.size());
    if (!last)
      for (std::size_t i = 0; i < entries.size(); ++i) grads[i].assign(entries[i].value.numel(), 0.0f);
    double loss_sum = 0;
    for (std::size_t idx : batch) {
      const auto& item = items[idx];
      auto loss = saliency_loss(net.predict(item.image).map, item.mask);
      loss_sum += loss.item();
      if (last) continue;
      const auto g = backward(loss);
      for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!g.contains(entries[i].value)) continue;
        auto src = g.raw(entries[i].value);
        for (std::size_t k = 0; k < src.size(); ++k) grads[i][k] += src[k];
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(batch.size());
    require_finite(mean_loss, iter, "loss");
    if (last || iter % opt.log_every == 0) record(iter, mean_loss);
    if (last) break;
    for (auto& g : grads)
      for (float& v : g) {
        v *= inv_batch;
        require_finite(v, iter, "gradient");
      }
    adam_step(net.params(), grads, state);
  }
  return log;
}

double dataset_loss(const RRNet<float>& net, const std::vector<Sample>& data) {
  if (data.empty()) throw std::invalid_argument("dataset_loss: no samples");
  double total = 0;
  for (const auto& s : data) {
    const Sample sized = resize(s, net.config().input_height, net.config().input_width);
    total += saliency_loss(net.predict(to_tensor(sized.image)).map, to_tensor(sized.mask)).item();
  }
  return total / static_cast<double>(data.size());
}

MetricReport evaluate_samples(const RRNet<float>& net, const std::vector<Sample>& data, const MetricOptions& opt) {
  std::vector<ImageMetrics> rows;
  rows.reserve(data.size());
  for (const auto& s : data) rows.push_back(evaluate_image(predict_raster(net, s.image), s.mask, s.id, opt));
  return aggregate(std::move(rows));
}

}  // namespace rrnet
