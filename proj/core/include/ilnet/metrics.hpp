#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ilnet::metrics {

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> fg;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), fg(static_cast<size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return fg[static_cast<size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { fg[static_cast<size_t>(y) * width + x] = v ? 1 : 0; }
  int64_t count() const;
};

struct Component {
  std::vector<std::pair<int, int>> pixels;  // (x, y)
  int64_t area = 0;
  double cx = 0.0, cy = 0.0;  // centroid, arithmetic mean of coordinates
};

// 8-connectivity labeling; components are ordered by their smallest
// row-major pixel index.
std::vector<Component> label_components(const BinaryMask& mask);

// Dataset-aggregated intersection over union. An all-empty dataset scores
// 1.0 (perfect agreement).
double iou_dataset(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts);

// Arithmetic mean of per-image IoU; an image empty on both sides counts 1.0.
double niou_dataset(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts);

// Target-level detection probability. Predicted components are matched to
// ground-truth components greedily by ascending Euclidean centroid distance,
// one-to-one; a target is detected when its match lies strictly inside
// distance 3. NaN (with a stderr warning) when the dataset has no targets.
double pd(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts);

// False-alarm rate: predicted-foreground pixels over ground-truth background
// divided by all evaluated pixels.
double fa(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts);

struct FloatMap {
  int width = 0;
  int height = 0;
  std::vector<float> v;  // probabilities in [0,1]
};

struct RocPoint {
  float threshold = 0.0f;
  double pd = 0.0;
  double fa = 0.0;
};

// Binarizes every map at each threshold (>= means foreground) and evaluates
// the target-level metrics. Thresholds must be strictly descending and
// non-empty; Fa is non-decreasing down the list.
std::vector<RocPoint> roc_sweep(const std::vector<FloatMap>& prob_maps,
                                const std::vector<BinaryMask>& gts,
                                const std::vector<float>& thresholds);

struct MetricsReport {
  double iou = 0.0;
  double niou = 0.0;
  double pd = 0.0;  // NaN when the dataset has no targets
  double fa = 0.0;
  std::vector<double> per_image_iou;
  int64_t tp_sum = 0;      // detected targets
  int64_t t_sum = 0;       // ground-truth targets
  int64_t fp_pixels = 0;
  int64_t all_pixels = 0;
  std::vector<RocPoint> roc;  // optional
};

MetricsReport evaluate(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts);

// Full report as JSON with fixed 6-decimal floats; IoU/nIoU/Pd also appear
// in percent and Fa in units of 1e-6 to match the usual reporting scale.
std::string report_to_json(const MetricsReport& report);

}  // namespace ilnet::metrics
