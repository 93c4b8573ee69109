#include "ilnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ilnet/rng.hpp"

namespace ilnet {

namespace fs = std::filesystem;

Tensor images_to_tensor(const std::vector<data::Sample>& samples, const std::vector<int>& idx) {
  const int n = static_cast<int>(idx.size());
  const int h = samples[static_cast<size_t>(idx[0])].image.dim(1);
  const int w = samples[static_cast<size_t>(idx[0])].image.dim(2);
  std::vector<float> v(static_cast<size_t>(n) * 3 * h * w);
  for (int i = 0; i < n; ++i) {
    const auto& img = samples[static_cast<size_t>(idx[static_cast<size_t>(i)])].image;
    if (img.dim(1) != h || img.dim(2) != w) {
      throw TensorError("batch images must share a size; prepare the dataset first");
    }
    std::copy(img.values().begin(), img.values().end(),
              v.begin() + static_cast<int64_t>(i) * 3 * h * w);
  }
  return Tensor::from({n, 3, h, w}, std::move(v));
}

Tensor masks_to_tensor(const std::vector<data::Sample>& samples, const std::vector<int>& idx) {
  const int n = static_cast<int>(idx.size());
  const auto& first = samples[static_cast<size_t>(idx[0])].mask;
  const int h = first.height, w = first.width;
  std::vector<float> v(static_cast<size_t>(n) * h * w);
  for (int i = 0; i < n; ++i) {
    const auto& m = samples[static_cast<size_t>(idx[static_cast<size_t>(i)])].mask;
    for (size_t j = 0; j < m.fg.size(); ++j) {
      v[static_cast<size_t>(i) * h * w + j] = m.fg[j] ? 1.0f : 0.0f;
    }
  }
  return Tensor::from({n, 1, h, w}, std::move(v));
}

TrainResult train_model(ILNet& model, const std::vector<data::Sample>& dataset,
                        const TrainOptions& options) {
  const TrainConfig& cfg = options.config;
  cfg.validate();
  if (dataset.empty()) throw TensorError("train: empty dataset");
  fs::create_directories(options.out_dir);

  const std::string ckpt_path = (fs::path(options.out_dir) / "checkpoint.ilnet").string();
  const std::string opt_path = (fs::path(options.out_dir) / "checkpoint.opt.ilnet").string();
  const std::string csv_path = (fs::path(options.out_dir) / "loss.csv").string();

  Optimizer opt(cfg.optimizer, cfg.weight_decay);
  int start_epoch = 0;
  if (options.resume) {
    load_checkpoint_into(model.params(), ckpt_path);
    ParamStore st;
    for (auto& e : load_checkpoint(opt_path)) {
      if (e.name == "opt.epoch") {
        start_epoch = static_cast<int>(e.values[0]);
      } else {
        st.buffer(e.name, Tensor::from(e.shape, std::move(e.values)));
      }
    }
    opt.import_state(st);
  }

  std::ofstream csv(csv_path, options.resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw TensorError("cannot write loss log: " + csv_path);
  if (!options.resume) {
    csv << "epoch,lr,side0,side1,side2,side3,side4,side5,final,total\n";
  }

  TrainResult result;
  result.checkpoint_path = ckpt_path;
  result.loss_csv_path = csv_path;

  const int count = static_cast<int>(dataset.size());
  std::vector<int> order(static_cast<size_t>(count));
  RandomSource shuffle_root(options.seed);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const float lr = lr_schedule(epoch, cfg);
    for (int i = 0; i < count; ++i) order[static_cast<size_t>(i)] = i;
    RandomSource er = shuffle_root.fork(static_cast<uint64_t>(epoch));
    for (int i = count - 1; i > 0; --i) {
      const int j = static_cast<int>(er.next_below(static_cast<uint32_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double comp_sum[8] = {0};  // 6 sides + final + total
    int batches = 0;
    for (int begin = 0; begin < count; begin += cfg.batch_size) {
      const int end = std::min(count, begin + cfg.batch_size);
      std::vector<int> idx(order.begin() + begin, order.begin() + end);
      Tensor images = images_to_tensor(dataset, idx);
      Tensor gts = masks_to_tensor(dataset, idx);

      GradTape::get().clear();
      model.params().zero_grads();
      auto out = model.forward(images, ForwardMode::train());
      LossBreakdown loss = total_loss(out.sides.sup_logits, out.logits, gts);
      if (!std::isfinite(loss.total)) {
        throw TensorError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batches));
      }
      backward(loss.total_tensor);
      opt.step(model.params(), lr);

      for (int s = 0; s < 6; ++s) comp_sum[s] += loss.side_bce[static_cast<size_t>(s)];
      comp_sum[6] += loss.final_bce;
      comp_sum[7] += loss.total;
      ++batches;
    }

    char row[256];
    std::snprintf(row, sizeof(row), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", epoch,
                  static_cast<double>(lr), comp_sum[0] / batches, comp_sum[1] / batches,
                  comp_sum[2] / batches, comp_sum[3] / batches, comp_sum[4] / batches,
                  comp_sum[5] / batches, comp_sum[6] / batches, comp_sum[7] / batches);
    csv << row;
    csv.flush();
    result.epoch_total_loss.push_back(static_cast<float>(comp_sum[7] / batches));

    save_checkpoint(model.params(), ckpt_path);
    ParamStore opt_state = opt.export_state();
    opt_state.buffer("opt.epoch", Tensor::from({1}, {static_cast<float>(epoch + 1)}));
    save_checkpoint(opt_state, opt_path);
    ++result.epochs_run;

    if (options.verbose &&
        (epoch == cfg.epochs - 1 || (cfg.epochs >= 10 && (epoch + 1) % (cfg.epochs / 10) == 0))) {
      std::cerr << "epoch " << (epoch + 1) << "/" << cfg.epochs << " loss "
                << comp_sum[7] / batches << "\n";
    }
  }
  return result;
}

std::vector<metrics::FloatMap> predict_prob_maps(ILNet& model,
                                                 const std::vector<data::Sample>& samples) {
  NoGradGuard ng;
  std::vector<metrics::FloatMap> maps;
  maps.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    Tensor batch = images_to_tensor(samples, {static_cast<int>(i)});
    auto out = model.forward(batch, ForwardMode::eval());
    Tensor prob = sigmoid(out.logits);
    metrics::FloatMap m;
    m.height = prob.dim(2);
    m.width = prob.dim(3);
    m.v.assign(prob.values().begin(), prob.values().end());
    maps.push_back(std::move(m));
  }
  return maps;
}

std::vector<metrics::BinaryMask> binarize_maps(const std::vector<metrics::FloatMap>& maps,
                                               float threshold) {
  std::vector<metrics::BinaryMask> out;
  out.reserve(maps.size());
  for (const auto& m : maps) {
    metrics::BinaryMask b(m.width, m.height);
    for (size_t i = 0; i < m.v.size(); ++i) b.fg[i] = m.v[i] >= threshold ? 1 : 0;
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace ilnet
