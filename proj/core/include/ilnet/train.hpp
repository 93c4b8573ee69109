#pragma once

#include <string>
#include <vector>

#include "ilnet/config.hpp"
#include "ilnet/dataio.hpp"
#include "ilnet/loss.hpp"
#include "ilnet/metrics.hpp"
#include "ilnet/model.hpp"
#include "ilnet/optim.hpp"

namespace ilnet {

struct TrainOptions {
  TrainConfig config;
  uint64_t seed = 0;
  std::string out_dir;       // receives checkpoint.ilnet, optimizer state, loss.csv
  bool resume = false;       // continue from the checkpoints in out_dir
  bool verbose = false;      // progress lines on stderr
};

struct TrainResult {
  std::vector<float> epoch_total_loss;
  std::string checkpoint_path;
  std::string loss_csv_path;
  int epochs_run = 0;
};

// Deterministic mini-batch training with per-epoch checkpointing and a CSV
// loss log (epoch, lr, per-side and final BCE means, total). Aborts with a
// diagnostic if the loss turns non-finite.
TrainResult train_model(ILNet& model, const std::vector<data::Sample>& dataset,
                        const TrainOptions& options);

// Eval-mode sigmoid probability maps, one forward per sample.
std::vector<metrics::FloatMap> predict_prob_maps(ILNet& model,
                                                 const std::vector<data::Sample>& samples);

std::vector<metrics::BinaryMask> binarize_maps(const std::vector<metrics::FloatMap>& maps,
                                               float threshold);

// Stacks sample masks into the shapes the loss expects.
Tensor masks_to_tensor(const std::vector<data::Sample>& samples, const std::vector<int>& idx);
Tensor images_to_tensor(const std::vector<data::Sample>& samples, const std::vector<int>& idx);

}  // namespace ilnet
