// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavier end-to-end checks live here; granular cases are
// covered by the unit test binaries.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ilnet/dataio.hpp"
#include "ilnet/gradcheck.hpp"
#include "ilnet/metrics.hpp"
#include "ilnet/model.hpp"
#include "ilnet/train.hpp"
#include "test_util.hpp"

using namespace ilnet;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int criterion, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", criterion, name.c_str(),
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

fs::path work_dir() {
  static fs::path dir = [] {
    auto p = fs::temp_directory_path() / "ilnet_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

// ---------------------------------------------------------------- 1
void criterion_formula_oracles() {
  bool ok = true;
  std::string detail;
  for (int c = 1; c <= 1024 && ok; ++c) {
    const double v = 1.0 - 2.0 / (2.0 * 2.0) + std::log2(std::sqrt(static_cast<double>(c))) / 2.0;
    const int expect_layers = std::max(1, static_cast<int>(std::ceil(v)));
    if (doda_num_layers(c, 2, 2) != expect_layers) {
      ok = false;
      detail = "layer count mismatch at width " + std::to_string(c);
    }
    const double x = (1.0 + std::log2(static_cast<double>(c))) / 2.0;
    int expect_k = 1;
    double best = std::fabs(x - 1.0);
    for (int k = 3; k <= 15; k += 2) {
      const double d = std::fabs(x - k);
      if (d < best || (d == best && k > expect_k)) {
        expect_k = k;
        best = d;
      }
    }
    if (doda_kernel_size(c) != expect_k) {
      ok = false;
      detail = "kernel size mismatch at width " + std::to_string(c);
    }
  }
  for (float t : {0.5f, 1.0f, 2.5f}) {
    for (int i = 0; i <= 5; ++i) {
      const int expect = static_cast<int>(std::ceil(static_cast<double>(t) * std::pow(2.0, i - 1)));
      if (rb_channels(i, t) != expect) {
        ok = false;
        detail = "edge channel mismatch at t=" + std::to_string(t) + " i=" + std::to_string(i);
      }
    }
  }
  report(1, "formula oracles (aggregation depth, kernel size, edge channels)", ok, detail);
}

// ---------------------------------------------------------------- 2
void criterion_gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;

  // op level: directional finite differences at step 1e-3, tolerance 1e-3
  {
    RandomSource rng(41);
    using testutil::directional_check_weighted;
    auto check = [&](const char* what, double err, double tol = 1e-3) {
      if (err >= tol) {
        ok = false;
        detail += std::string(what) + " rel err " + std::to_string(err) + "; ";
      }
    };
    {
      Tensor x = testutil::random_tensor({2, 3, 6, 6}, rng);
      Tensor w = testutil::random_tensor({4, 3, 3, 3}, rng, -0.4f, 0.4f);
      Tensor b = testutil::random_tensor({4}, rng);
      check("conv2d", directional_check_weighted([&]() { return conv2d(x, w, b, 1, 1, 1); },
                                                 {x, w, b}, rng));
    }
    {
      Tensor x = testutil::random_tensor({2, 1, 12}, rng);
      Tensor k = testutil::random_tensor({1, 1, 3}, rng);
      check("conv1d", directional_check_weighted([&]() { return conv1d(x, k, 1); }, {x, k}, rng));
    }
    {
      Tensor x = testutil::random_tensor({3, 2, 4, 4}, rng);
      Tensor g = testutil::random_tensor({2}, rng, 0.5f, 1.5f);
      Tensor b = testutil::random_tensor({2}, rng);
      check("batch_norm", directional_check_weighted(
                              [&]() {
                                Tensor rm = Tensor::zeros({2});
                                Tensor rv = Tensor::full({2}, 1.0f);
                                return batch_norm(x, g, b, rm, rv, true, false);
                              },
                              {x, g, b}, rng));
    }
    {
      Tensor x = testutil::random_tensor({2, 3, 4, 4}, rng);
      Tensor g = testutil::random_tensor({3}, rng, 0.5f, 1.5f);
      Tensor b = testutil::random_tensor({3}, rng);
      check("layer_norm",
            directional_check_weighted([&]() { return layer_norm(x, 3, g, b); }, {x, g, b}, rng));
    }
    {
      Tensor x = testutil::random_tensor({3, 5}, rng, -2.0f, 2.0f);
      check("softmax", directional_check_weighted([&]() { return softmax(x, 1); }, {x}, rng));
    }
    {
      Tensor x = testutil::random_tensor({4, 4}, rng, -3.0f, 3.0f);
      check("sigmoid", directional_check_weighted([&]() { return sigmoid(x); }, {x}, rng, 1e-3,
                                                  1e-4, true));
    }
    {
      Tensor x = testutil::random_tensor({4, 6}, rng, -1.0f, 1.0f);
      check("relu",
            directional_check_weighted([&]() { return relu(x); }, {x}, rng, 1e-3, 1e-4, true));
    }
    {
      Tensor x = testutil::random_tensor({2, 2, 5, 5}, rng);
      check("maxpool2", directional_check_weighted([&]() { return maxpool2(x); }, {x}, rng));
    }
    {
      Tensor x = testutil::random_tensor({1, 2, 3, 3}, rng);
      check("upsample_bilinear",
            directional_check_weighted([&]() { return upsample_bilinear(x, 7, 5); }, {x}, rng));
    }
    {
      Tensor x = testutil::random_tensor({2, 3, 4, 4}, rng);
      Tensor y = testutil::random_tensor({2, 3, 4, 4}, rng);
      check("channel ops", directional_check_weighted(
                               [&]() { return channel_sum(channel_scale(y, global_avg_pool(x))); },
                               {x, y}, rng));
    }
    {
      Tensor x = testutil::random_tensor({2, 3, 3, 3}, rng);
      Tensor m = testutil::random_tensor({2, 1, 3, 3}, rng);
      Tensor z = testutil::random_tensor({2, 3, 3, 3}, rng);
      check("elementwise/concat/reshape",
            directional_check_weighted(
                [&]() {
                  Tensor s = spatial_scale(x, m);
                  return reshape(concat({add(s, z), mul(s, z)}, 1), {2, 6, 3, 3});
                },
                {x, m, z}, rng));
    }
    {
      Tensor x = testutil::random_tensor({2, 1, 4, 4}, rng, -2.0f, 2.0f);
      RandomSource tr(55);
      std::vector<float> tv(32);
      for (auto& v : tv) v = tr.uniform() < 0.5f ? 0.0f : 1.0f;
      Tensor t = Tensor::from({2, 1, 4, 4}, std::move(tv));
      check("bce_with_logits",
            testutil::directional_check([&]() { return bce_with_logits(x, t); }, {x}, rng));
    }
  }

  // network level: 10 sampled coordinates per parameter group at 32x32
  {
    ILNet net(preset_config("S"), 17);
    data::SynthOptions so;
    so.count = 1;
    so.height = so.width = 32;
    so.seed = 31;
    auto ds = data::synth_dataset(so);
    Tensor x = images_to_tensor(ds, {0});
    Tensor gt = masks_to_tensor(ds, {0});
    auto loss_fn = [&]() {
      auto out = net.forward(x, ForwardMode::eval());
      return total_loss(out.sides.sup_logits, out.logits, gt).total_tensor;
    };
    auto value_fn = [&]() -> double {
      auto out = net.forward(x, ForwardMode::eval());
      double acc = static_cast<double>(bce_with_logits(out.logits, gt).item());
      for (const auto& s : out.sides.sup_logits) {
        acc += static_cast<double>(bce_with_logits(s, gt).item());
      }
      return acc;
    };
    GradCheckOptions opts;
    opts.samples_per_group = 10;
    opts.tolerance = 1e-2f;
    opts.seed = 3;
    auto rep = gradcheck_params(loss_fn, net.params(), opts, value_fn);
    if (!rep.passed) {
      ok = false;
      detail += "network-level check failed (" + std::to_string(rep.failures.size()) +
                " coordinates); ";
    }
    detail += "network coords checked=" + std::to_string(rep.checked) +
              " skipped=" + std::to_string(rep.skipped);
  }

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs >= 300.0) {
    ok = false;
    detail += "; exceeded 5 minute budget";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), " (%.0fs)", secs);
  report(2, "gradient suite, op and network level", ok, detail + buf);
}

// ---------------------------------------------------------------- 3
void criterion_shape_suite() {
  bool ok = true;
  std::string detail;
  for (const char* name : {"S", "M", "L"}) {
    for (int hw : {32, 64, 128}) {
      ModelConfig cfg = preset_config(name);
      cfg.input_h = cfg.input_w = hw;
      ILNet net(cfg, 1);
      StageFeatures stages;
      auto out = net.forward(Tensor::zeros({1, 3, hw, hw}), ForwardMode::eval(), &stages);
      if (out.logits.shape() != Shape{1, 1, hw, hw}) {
        ok = false;
        detail = std::string(name) + "@" + std::to_string(hw) + ": bad output shape";
      }
      for (int i = 0; i < 5; ++i) {
        const auto& e = stages.encoder_outs[static_cast<size_t>(i)];
        const int d = stages.encoder_scale[static_cast<size_t>(i)];
        if (e.dim(1) != cfg.encoder(i).cout || e.dim(2) != (hw + d - 1) / d) {
          ok = false;
          detail = std::string(name) + "@" + std::to_string(hw) + ": encoder " +
                   std::to_string(i) + " violates its channel/scale contract";
        }
      }
      for (int i = 0; i < 6; ++i) {
        const auto& dtensor = stages.decoder_outs[static_cast<size_t>(i)];
        if (dtensor.dim(1) != cfg.decoder(i).cout) {
          ok = false;
          detail = std::string(name) + "@" + std::to_string(hw) + ": decoder " +
                   std::to_string(i) + " has wrong channel count";
        }
      }
      if (stages.decoder_outs.back().dim(2) != hw) {
        ok = false;
        detail = "final decoder is not at input resolution";
      }
    }
  }
  int64_t prev = -1;
  for (int k = 0; k <= 5; ++k) {
    ModelConfig cfg = preset_config("S");
    cfg.num_ipof_stages = k;
    ILNet net(cfg, 1);
    net.forward(Tensor::zeros({1, 3, 32, 32}), ForwardMode::eval());
    if (net.param_count() <= prev) {
      ok = false;
      detail = "parameter count not strictly increasing at " + std::to_string(k) + " fused stages";
    }
    prev = net.param_count();
  }
  report(3, "shape and configuration suite (3 presets x 3 sizes, fusion ladder)", ok, detail);
}

// ---------------------------------------------------------------- 4
void criterion_param_flops() {
  ILNet net(preset_config("S"), 1);
  const int64_t params = net.param_count();
  const int64_t flops = net.count_flops(1, 512, 512);
  const bool ok = params >= 30000 && params <= 60000 && flops >= 1000000000LL &&
                  flops <= 4500000000LL;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "params=%lld (band 30k..60k), flops@512=%.2fG (band 1.0..4.5)",
                static_cast<long long>(params), static_cast<double>(flops) / 1e9);
  report(4, "parameter count and flop count", ok, buf);
}

// ---------------------------------------------------------------- 5
void criterion_metrics_oracles() {
  bool ok = true;
  std::string detail;
  using metrics::BinaryMask;

  // IoU/Fa against a brute-force double loop on every 3x3 mask pair
  for (uint32_t pb = 0; pb < 512 && ok; ++pb) {
    for (uint32_t gb = 0; gb < 512; ++gb) {
      BinaryMask p(3, 3), g(3, 3);
      for (int i = 0; i < 9; ++i) {
        p.fg[static_cast<size_t>(i)] = (pb >> i) & 1u;
        g.fg[static_cast<size_t>(i)] = (gb >> i) & 1u;
      }
      int64_t tp = 0, fp = 0, pc = 0, gc = 0;
      for (int i = 0; i < 9; ++i) {
        tp += (p.fg[static_cast<size_t>(i)] && g.fg[static_cast<size_t>(i)]) ? 1 : 0;
        fp += (p.fg[static_cast<size_t>(i)] && !g.fg[static_cast<size_t>(i)]) ? 1 : 0;
        pc += p.fg[static_cast<size_t>(i)] ? 1 : 0;
        gc += g.fg[static_cast<size_t>(i)] ? 1 : 0;
      }
      const int64_t uni = pc + gc - tp;
      const double expect_iou = uni == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(uni);
      if (metrics::iou_dataset({p}, {g}) != expect_iou ||
          metrics::fa({p}, {g}) != static_cast<double>(fp) / 9.0) {
        ok = false;
        detail = "IoU/Fa oracle mismatch at pair " + std::to_string(pb) + "/" + std::to_string(gb);
        break;
      }
    }
  }

  // component labeling vs recursive flood fill on 200 random 32x32 masks
  RandomSource rng(41);
  for (int trial = 0; trial < 200 && ok; ++trial) {
    BinaryMask m(32, 32);
    const float density = rng.uniform(0.05f, 0.6f);
    for (auto& v : m.fg) v = rng.uniform() < density ? 1 : 0;
    auto comps = metrics::label_components(m);
    // oracle: iterative flood fill with an explicit stack
    std::vector<int> lab(m.fg.size(), -1);
    int count = 0;
    int64_t labelled = 0;
    for (int start = 0; start < 32 * 32; ++start) {
      if (!m.fg[static_cast<size_t>(start)] || lab[static_cast<size_t>(start)] >= 0) continue;
      std::vector<int> stack{start};
      lab[static_cast<size_t>(start)] = count;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        ++labelled;
        const int cy = cur / 32, cx = cur % 32;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if ((dx || dy) && nx >= 0 && ny >= 0 && nx < 32 && ny < 32) {
              const int ni = ny * 32 + nx;
              if (m.fg[static_cast<size_t>(ni)] && lab[static_cast<size_t>(ni)] < 0) {
                lab[static_cast<size_t>(ni)] = count;
                stack.push_back(ni);
              }
            }
          }
        }
      }
      ++count;
    }
    int64_t got_px = 0;
    for (const auto& c : comps) got_px += c.area;
    if (static_cast<int>(comps.size()) != count || got_px != labelled) {
      ok = false;
      detail = "labeling disagrees with flood fill on trial " + std::to_string(trial);
    }
  }

  // detection boundary: sqrt(8) counts, 3.0 does not
  {
    BinaryMask g(16, 16), p(16, 16), q(16, 16);
    g.set(5, 5, true);
    p.set(7, 7, true);
    q.set(8, 5, true);
    if (metrics::pd({p}, {g}) != 1.0 || metrics::pd({q}, {g}) != 0.0) {
      ok = false;
      detail = "centroid distance boundary mishandled";
    }
  }
  report(5, "metrics oracle equivalence (exhaustive pairs, flood fill, Pd boundary)", ok, detail);
}

// the trained desk-scale model, shared by criteria 6 and 8
std::unique_ptr<ILNet> overfit_model;
std::vector<data::Sample> overfit_data;

// ---------------------------------------------------------------- 6
void criterion_desk_scale_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  data::SynthOptions so;
  so.count = 16;
  so.height = so.width = 64;
  so.seed = 42;
  overfit_data = data::synth_dataset(so);

  overfit_model = build_model(preset_config("S"), 0);
  TrainOptions to;
  to.config.epochs = 150;
  to.config.batch_size = 4;
  to.config.lr = 3e-3f;
  to.config.weight_decay = 1e-4f;
  to.config.decay_interval = 75;
  to.seed = 0;
  to.out_dir = (work_dir() / "overfit").string();
  train_model(*overfit_model, overfit_data, to);

  auto maps = predict_prob_maps(*overfit_model, overfit_data);
  auto preds = binarize_maps(maps, 0.5f);
  std::vector<metrics::BinaryMask> gts;
  for (const auto& s : overfit_data) gts.push_back(s.mask);
  const double iou = metrics::iou_dataset(preds, gts);
  const double pd = metrics::pd(preds, gts);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  char buf[160];
  std::snprintf(buf, sizeof(buf), "train IoU=%.4f (>=0.90), Pd=%.3f (==1.0), %.0fs", iou, pd,
                secs);
  report(6, "desk-scale learning (16 images, 150 epochs)", iou >= 0.90 && pd == 1.0 && secs < 1800,
         buf);
}

// ---------------------------------------------------------------- 7
void criterion_ablation_direction() {
  data::SynthOptions tr;
  tr.count = 64;
  tr.height = tr.width = 64;
  tr.seed = 100;
  data::SynthOptions te = tr;
  te.count = 16;
  te.seed = 200;
  const auto train_set = data::synth_dataset(tr);
  const auto test_set = data::synth_dataset(te);
  std::vector<metrics::BinaryMask> gts;
  for (const auto& s : test_set) gts.push_back(s.mask);

  auto run = [&](uint64_t seed, bool full) {
    ModelConfig cfg = preset_config("S");
    if (!full) {
      cfg.num_ipof_stages = 0;
      cfg.use_rb = false;
    }
    ILNet net(cfg, seed);
    TrainOptions to;
    to.config.epochs = 40;
    to.config.batch_size = 4;
    to.config.lr = 3e-3f;
    to.config.weight_decay = 1e-4f;
    to.config.decay_interval = 75;
    to.seed = seed;
    to.out_dir = (work_dir() / ("ablate_" + std::to_string(seed) + (full ? "_full" : "_base")))
                     .string();
    train_model(net, train_set, to);
    auto preds = binarize_maps(predict_prob_maps(net, test_set), 0.5f);
    return metrics::niou_dataset(preds, gts);
  };

  int wins = 0;
  std::string detail;
  for (uint64_t seed : {1, 2, 3}) {
    const double full = run(seed, true);
    const double base = run(seed, false);
    if (full >= base) ++wins;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "seed %llu: full=%.4f base=%.4f; ",
                  static_cast<unsigned long long>(seed), full, base);
    detail += buf;
  }
  report(7, "ablation direction (full vs no-fusion/no-RB, 2 of 3 seeds)", wins >= 2,
         detail + std::to_string(wins) + "/3 wins");
}

// ---------------------------------------------------------------- 8
void criterion_roc_monotonicity() {
  bool ok = true;
  std::string detail;
  auto maps = predict_prob_maps(*overfit_model, overfit_data);
  std::vector<metrics::BinaryMask> gts;
  for (const auto& s : overfit_data) gts.push_back(s.mask);

  std::vector<float> thresholds{1.000001f};  // sentinel above any probability
  for (int i = 0; i <= 20; ++i) thresholds.push_back(1.0f - static_cast<float>(i) / 20.0f);
  auto pts = metrics::roc_sweep(maps, gts, thresholds);
  if (pts[0].pd != 0.0 || pts[0].fa != 0.0) {
    ok = false;
    detail = "sentinel row above max probability is not empty";
  }
  for (size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].fa < pts[i - 1].fa) {
      ok = false;
      detail = "Fa decreased between thresholds " + std::to_string(pts[i - 1].threshold) +
               " and " + std::to_string(pts[i].threshold);
    }
  }
  report(8, "ROC monotonicity and empty sentinel row", ok, detail);
}

// ---------------------------------------------------------------- 9
void criterion_determinism_roundtrips() {
  bool ok = true;
  std::string detail;

  data::SynthOptions so;
  so.count = 8;
  so.height = so.width = 64;
  so.seed = 77;
  auto ds = data::synth_dataset(so);

  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };

  // identical loss CSVs from identical seeds
  std::string csv_a, csv_b;
  for (int round = 0; round < 2; ++round) {
    ILNet net(preset_config("S"), 5);
    TrainOptions to;
    to.config.epochs = 3;
    to.config.batch_size = 4;
    to.seed = 9;
    to.out_dir = (work_dir() / ("det" + std::to_string(round))).string();
    auto res = train_model(net, ds, to);
    (round == 0 ? csv_a : csv_b) = slurp(res.loss_csv_path);
  }
  if (csv_a.empty() || csv_a != csv_b) {
    ok = false;
    detail += "loss logs differ between identical runs; ";
  }

  // checkpoint save/load/forward agreement
  {
    ILNet net(preset_config("S"), 5);
    load_checkpoint_into(net.params(), (work_dir() / "det0" / "checkpoint.ilnet").string());
    ILNet net2(preset_config("S"), 123);
    load_checkpoint_into(net2.params(), (work_dir() / "det0" / "checkpoint.ilnet").string());
    Tensor x = images_to_tensor(ds, {0, 1});
    NoGradGuard ng;
    auto a = net.forward(x, ForwardMode::eval());
    auto b = net2.forward(x, ForwardMode::eval());
    for (size_t i = 0; i < static_cast<size_t>(a.logits.numel()); ++i) {
      if (std::fabs(a.logits.values()[i] - b.logits.values()[i]) > 1e-6f) {
        ok = false;
        detail += "checkpoint round-trip forward mismatch; ";
        break;
      }
    }
  }

  // PGM round-trip bit-exactness
  {
    RandomSource rng(13);
    data::GrayImage img;
    img.width = 41;
    img.height = 29;
    img.px.resize(static_cast<size_t>(41) * 29);
    for (auto& p : img.px) p = static_cast<uint8_t>(rng.next_below(256));
    const std::string path = (work_dir() / "rt.pgm").string();
    data::write_pgm(img, path);
    auto back = data::read_pgm(path);
    if (back.px != img.px) {
      ok = false;
      detail += "PGM round-trip not bit-exact; ";
    }
  }
  report(9, "determinism and round-trips", ok, detail);
}

}  // namespace

int main() {
  criterion_formula_oracles();
  criterion_gradient_suite();
  criterion_shape_suite();
  criterion_param_flops();
  criterion_metrics_oracles();
  criterion_desk_scale_learning();
  criterion_ablation_direction();
  criterion_roc_monotonicity();
  criterion_determinism_roundtrips();
  if (failures == 0) {
    std::printf("all acceptance criteria passed\n");
  } else {
    std::printf("%d acceptance criterion(s) failed\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
