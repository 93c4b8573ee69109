#include "ilnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ilnet::metrics {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_pairs(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  require(preds.size() == gts.size(), "metric inputs must pair up; got " +
                                          std::to_string(preds.size()) + " predictions and " +
                                          std::to_string(gts.size()) + " ground truths");
  for (size_t i = 0; i < preds.size(); ++i) {
    require(preds[i].width == gts[i].width && preds[i].height == gts[i].height,
            "mask dimensions differ at image " + std::to_string(i));
  }
}

struct PixelCounts {
  int64_t tp = 0, pred = 0, gt = 0;
};

PixelCounts pixel_counts(const BinaryMask& pred, const BinaryMask& gt) {
  PixelCounts c;
  const size_t n = pred.fg.size();
  for (size_t i = 0; i < n; ++i) {
    const bool p = pred.fg[i] != 0;
    const bool g = gt.fg[i] != 0;
    c.tp += (p && g) ? 1 : 0;
    c.pred += p ? 1 : 0;
    c.gt += g ? 1 : 0;
  }
  return c;
}

// detected / total ground-truth components of one image pair
std::pair<int64_t, int64_t> match_image(const BinaryMask& pred, const BinaryMask& gt) {
  auto pred_comps = label_components(pred);
  auto gt_comps = label_components(gt);
  if (gt_comps.empty()) return {0, 0};
  if (pred_comps.empty()) return {0, static_cast<int64_t>(gt_comps.size())};

  struct Pair {
    double dist;
    size_t pi, gi;
  };
  std::vector<Pair> pairs;
  for (size_t pi = 0; pi < pred_comps.size(); ++pi) {
    for (size_t gi = 0; gi < gt_comps.size(); ++gi) {
      const double dx = pred_comps[pi].cx - gt_comps[gi].cx;
      const double dy = pred_comps[pi].cy - gt_comps[gi].cy;
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d < 3.0) pairs.push_back({d, pi, gi});  // strict inequality
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.pi != b.pi) return a.pi < b.pi;
    return a.gi < b.gi;
  });
  std::vector<bool> pred_used(pred_comps.size(), false), gt_used(gt_comps.size(), false);
  int64_t detected = 0;
  for (const Pair& p : pairs) {
    if (pred_used[p.pi] || gt_used[p.gi]) continue;
    pred_used[p.pi] = true;
    gt_used[p.gi] = true;
    ++detected;
  }
  return {detected, static_cast<int64_t>(gt_comps.size())};
}

}  // namespace

int64_t BinaryMask::count() const {
  int64_t n = 0;
  for (uint8_t v : fg) n += v ? 1 : 0;
  return n;
}

std::vector<Component> label_components(const BinaryMask& mask) {
  const int w = mask.width, h = mask.height;
  const int64_t n = static_cast<int64_t>(w) * h;
  std::vector<int32_t> label(static_cast<size_t>(n), -1);
  std::vector<Component> out;
  std::vector<int64_t> stack;
  for (int64_t start = 0; start < n; ++start) {
    if (!mask.fg[static_cast<size_t>(start)] || label[static_cast<size_t>(start)] >= 0) continue;
    const int32_t id = static_cast<int32_t>(out.size());
    Component comp;
    stack.clear();
    stack.push_back(start);
    label[static_cast<size_t>(start)] = id;
    while (!stack.empty()) {
      const int64_t cur = stack.back();
      stack.pop_back();
      const int cy = static_cast<int>(cur / w);
      const int cx = static_cast<int>(cur % w);
      comp.pixels.emplace_back(cx, cy);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (!dx && !dy) continue;
          const int nx = cx + dx, ny = cy + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const int64_t ni = static_cast<int64_t>(ny) * w + nx;
          if (mask.fg[static_cast<size_t>(ni)] && label[static_cast<size_t>(ni)] < 0) {
            label[static_cast<size_t>(ni)] = id;
            stack.push_back(ni);
          }
        }
      }
    }
    comp.area = static_cast<int64_t>(comp.pixels.size());
    double sx = 0.0, sy = 0.0;
    for (const auto& [px, py] : comp.pixels) {
      sx += px;
      sy += py;
    }
    comp.cx = sx / static_cast<double>(comp.area);
    comp.cy = sy / static_cast<double>(comp.area);
    out.push_back(std::move(comp));
  }
  // seeds are discovered in row-major scan order, so components are already
  // ordered by their smallest pixel index
  return out;
}

double iou_dataset(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  check_pairs(preds, gts);
  int64_t tp = 0, uni = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const PixelCounts c = pixel_counts(preds[i], gts[i]);
    tp += c.tp;
    uni += c.pred + c.gt - c.tp;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

double niou_dataset(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  check_pairs(preds, gts);
  require(!preds.empty(), "niou needs at least one image");
  double acc = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const PixelCounts c = pixel_counts(preds[i], gts[i]);
    const int64_t uni = c.pred + c.gt - c.tp;
    acc += uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
  }
  return acc / static_cast<double>(preds.size());
}

double pd(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  check_pairs(preds, gts);
  int64_t detected = 0, total = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const auto [d, t] = match_image(preds[i], gts[i]);
    detected += d;
    total += t;
  }
  if (total == 0) {
    std::cerr << "warning: Pd undefined, dataset has no ground-truth targets\n";
    return std::numeric_limits<double>::quiet_NaN();
  }
  return static_cast<double>(detected) / static_cast<double>(total);
}

double fa(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  check_pairs(preds, gts);
  int64_t fp = 0, all = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const size_t n = preds[i].fg.size();
    for (size_t j = 0; j < n; ++j) {
      fp += (preds[i].fg[j] && !gts[i].fg[j]) ? 1 : 0;
    }
    all += static_cast<int64_t>(n);
  }
  return all == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(all);
}

std::vector<RocPoint> roc_sweep(const std::vector<FloatMap>& prob_maps,
                                const std::vector<BinaryMask>& gts,
                                const std::vector<float>& thresholds) {
  require(!thresholds.empty(), "roc_sweep: empty threshold list");
  for (size_t i = 1; i < thresholds.size(); ++i) {
    require(thresholds[i] < thresholds[i - 1], "roc_sweep: thresholds must be strictly descending");
  }
  require(prob_maps.size() == gts.size(), "roc_sweep: map/gt count mismatch");
  for (size_t i = 0; i < prob_maps.size(); ++i) {
    require(prob_maps[i].width == gts[i].width && prob_maps[i].height == gts[i].height,
            "roc_sweep: map dimensions differ at image " + std::to_string(i));
  }

  std::vector<RocPoint> out;
  out.reserve(thresholds.size());
  std::vector<BinaryMask> preds(prob_maps.size());
  for (float thr : thresholds) {
    for (size_t i = 0; i < prob_maps.size(); ++i) {
      BinaryMask m(prob_maps[i].width, prob_maps[i].height);
      for (size_t j = 0; j < m.fg.size(); ++j) m.fg[j] = prob_maps[i].v[j] >= thr ? 1 : 0;
      preds[i] = std::move(m);
    }
    RocPoint pt;
    pt.threshold = thr;
    pt.pd = pd(preds, gts);
    pt.fa = fa(preds, gts);
    out.push_back(pt);
  }
  return out;
}

MetricsReport evaluate(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  check_pairs(preds, gts);
  MetricsReport r;
  r.iou = iou_dataset(preds, gts);
  r.niou = niou_dataset(preds, gts);
  r.fa = fa(preds, gts);
  int64_t detected = 0, total = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const PixelCounts c = pixel_counts(preds[i], gts[i]);
    const int64_t uni = c.pred + c.gt - c.tp;
    r.per_image_iou.push_back(uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni));
    r.fp_pixels += c.pred - c.tp;
    r.all_pixels += static_cast<int64_t>(preds[i].fg.size());
    const auto [d, t] = match_image(preds[i], gts[i]);
    detected += d;
    total += t;
  }
  r.tp_sum = detected;
  r.t_sum = total;
  if (total == 0) {
    std::cerr << "warning: Pd undefined, dataset has no ground-truth targets\n";
    r.pd = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.pd = static_cast<double>(detected) / static_cast<double>(total);
  }
  return r;
}

namespace {
std::string f6(double v) {
  if (std::isnan(v)) return "null";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace

std::string report_to_json(const MetricsReport& r) {
  std::ostringstream os;
  os << "{\n";
  os << "  \"iou_percent\": " << f6(r.iou * 100.0) << ",\n";
  os << "  \"niou_percent\": " << f6(r.niou * 100.0) << ",\n";
  os << "  \"pd_percent\": " << f6(r.pd * 100.0) << ",\n";
  os << "  \"fa_per_million\": " << f6(r.fa * 1e6) << ",\n";
  os << "  \"iou\": " << f6(r.iou) << ",\n";
  os << "  \"niou\": " << f6(r.niou) << ",\n";
  os << "  \"pd\": " << f6(r.pd) << ",\n";
  os << "  \"fa\": " << f6(r.fa) << ",\n";
  os << "  \"tp_sum\": " << r.tp_sum << ",\n";
  os << "  \"t_sum\": " << r.t_sum << ",\n";
  os << "  \"fp_pixels\": " << r.fp_pixels << ",\n";
  os << "  \"all_pixels\": " << r.all_pixels << ",\n";
  os << "  \"per_image_iou\": [";
  for (size_t i = 0; i < r.per_image_iou.size(); ++i) {
    if (i) os << ", ";
    os << f6(r.per_image_iou[i]);
  }
  os << "]";
  if (!r.roc.empty()) {
    os << ",\n  \"roc\": [";
    for (size_t i = 0; i < r.roc.size(); ++i) {
      if (i) os << ", ";
      os << "{\"threshold\": " << f6(r.roc[i].threshold) << ", \"pd\": " << f6(r.roc[i].pd)
         << ", \"fa\": " << f6(r.roc[i].fa) << "}";
    }
    os << "]";
  }
  os << "\n}\n";
  return os.str();
}

}  // namespace ilnet::metrics
