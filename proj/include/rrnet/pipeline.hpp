#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rrnet/dataio.hpp"
#include "rrnet/metrics.hpp"
#include "rrnet/network.hpp"
#include "rrnet/optim.hpp"

// Glue between rasters and the network: tensor conversion, inference at any
// input size, the training loop and dataset evaluation.

namespace rrnet {

Tensor<float> to_tensor(const Raster& r);
Raster to_raster(const Tensor<float>& t);

/// Saliency map for `image`, resized to the network input and back to the image size.
Raster predict_raster(const RRNet<float>& net, const Raster& image);

struct TrainOptions {
  std::size_t iterations = 2000;
  std::size_t batch_size = 8;
  double initial_lr = 5e-5;
  double final_lr = 5e-7;
  std::uint64_t seed = 7;
  bool augment = true;  // train on the original plus 7 dihedral variants of each sample
  std::size_t log_every = 100;
};

struct LossRecord {
  std::size_t iter = 0;
  double loss = 0;
  double lr = 0;
};

/// "iter<TAB>loss<TAB>lr"
std::string format_loss_record(const LossRecord& r);

/// ADAM training over `data`. Logs the mean batch loss every `log_every`
/// iterations and once more at `iterations` (the batch that would come next,
/// without updating). Nothing is logged for zero iterations. Throws
/// NumericalError when a loss or gradient is not finite.
std::vector<LossRecord> train(RRNet<float>& net, const std::vector<Sample>& data, const TrainOptions& opt,
                              const std::function<void(const LossRecord&)>& on_log = {});

/// Mean class-balanced loss of the network over `data` (no augmentation).
double dataset_loss(const RRNet<float>& net, const std::vector<Sample>& data);

/// Predicts every sample and scores it against its mask.
MetricReport evaluate_samples(const RRNet<float>& net, const std::vector<Sample>& data, const MetricOptions& opt = {});

}  // namespace rrnet
