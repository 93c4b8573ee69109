// ilnet: train / evaluate / benchmark a small-target infrared segmentation
// network from the command line.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ilnet/dataio.hpp"
#include "ilnet/gradcheck.hpp"
#include "ilnet/metrics.hpp"
#include "ilnet/ops.hpp"
#include "ilnet/model.hpp"
#include "ilnet/train.hpp"

namespace fs = std::filesystem;
using namespace ilnet;

namespace {

struct Invocation {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string checkpoint;
  std::string manifest;
  int thresholds = 10;
};

// command-specific override keys, consumed before the run config sees them
struct ExtraKeys {
  std::map<std::string, std::string> values;
  int get_int(const std::string& k, int defv) const {
    auto it = values.find(k);
    return it == values.end() ? defv : std::stoi(it->second);
  }
  float get_float(const std::string& k, float defv) const {
    auto it = values.find(k);
    return it == values.end() ? defv : std::stof(it->second);
  }
};

RunConfig assemble_config(const Invocation& inv, const std::vector<std::string>& extra_names,
                          ExtraKeys& extras) {
  RunConfig cfg;
  cfg.model = preset_config("S");
  if (!inv.config_path.empty()) cfg = load_run_config(inv.config_path);
  for (const std::string& ov : inv.overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("override must be key=value, got '" + ov + "'");
    }
    const std::string key = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);
    if (std::find(extra_names.begin(), extra_names.end(), key) != extra_names.end()) {
      extras.values[key] = value;
    } else {
      cfg.apply(key, value);
    }
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Invocation& inv) {
  cmd->add_option("--config", inv.config_path, "key=value run configuration file");
  cmd->add_option("--override", inv.overrides, "config override key=value (repeatable)");
  cmd->add_option("--out", inv.out_dir, "output directory");
}

std::vector<data::Sample> load_prepared(const std::string& manifest_path, const ModelConfig& mc) {
  data::DatasetManifest manifest = data::load_manifest(manifest_path);
  manifest.target_h = mc.input_h;
  manifest.target_w = mc.input_w;
  return data::load_samples(manifest, true);
}

std::vector<metrics::BinaryMask> gt_masks(const std::vector<data::Sample>& samples) {
  std::vector<metrics::BinaryMask> gts;
  gts.reserve(samples.size());
  for (const auto& s : samples) gts.push_back(s.mask);
  return gts;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << content;
}

int cmd_train(const Invocation& inv) {
  ExtraKeys extras;
  RunConfig cfg = assemble_config(inv, {}, extras);
  if (inv.manifest.empty()) throw std::invalid_argument("train needs --manifest");
  const std::string out = inv.out_dir.empty() ? "." : inv.out_dir;
  auto samples = load_prepared(inv.manifest, cfg.model);

  ILNet net(cfg.model, cfg.seed);
  TrainOptions to;
  to.config = cfg.train;
  to.seed = cfg.seed;
  to.out_dir = out;
  to.verbose = true;
  auto res = train_model(net, samples, to);
  std::cout << "checkpoint: " << res.checkpoint_path << "\n"
            << "loss log:   " << res.loss_csv_path << "\n";
  return 0;
}

int cmd_eval(const Invocation& inv) {
  ExtraKeys extras;
  RunConfig cfg = assemble_config(inv, {"threshold", "oracle"}, extras);
  const bool oracle = extras.get_int("oracle", 0) != 0;  // score gt against itself
  if (inv.manifest.empty() || (inv.checkpoint.empty() && !oracle)) {
    throw std::invalid_argument("eval needs --checkpoint and --manifest");
  }
  const float threshold = extras.get_float("threshold", 0.5f);
  auto samples = load_prepared(inv.manifest, cfg.model);

  std::vector<metrics::BinaryMask> preds;
  if (oracle) {
    preds = gt_masks(samples);
  } else {
    ILNet net(cfg.model, cfg.seed);
    load_checkpoint_into(net.params(), inv.checkpoint);
    preds = binarize_maps(predict_prob_maps(net, samples), threshold);
  }
  auto report = metrics::evaluate(preds, gt_masks(samples));
  const std::string json = metrics::report_to_json(report);
  std::cout << json;
  if (!inv.out_dir.empty()) {
    fs::create_directories(inv.out_dir);
    write_text((fs::path(inv.out_dir) / "report.json").string(), json);
  }
  return 0;
}

int cmd_infer(const Invocation& inv) {
  ExtraKeys extras;
  RunConfig cfg = assemble_config(inv, {"dump_sides"}, extras);
  if (inv.checkpoint.empty() || inv.manifest.empty()) {
    throw std::invalid_argument("infer needs --checkpoint and --manifest");
  }
  const std::string out = inv.out_dir.empty() ? "." : inv.out_dir;
  fs::create_directories(out);
  const bool dump_sides = extras.get_int("dump_sides", 0) != 0;

  auto samples = load_prepared(inv.manifest, cfg.model);
  ILNet net(cfg.model, cfg.seed);
  load_checkpoint_into(net.params(), inv.checkpoint);

  NoGradGuard ng;
  for (size_t i = 0; i < samples.size(); ++i) {
    Tensor batch = images_to_tensor(samples, {static_cast<int>(i)});
    auto fwd = net.forward(batch, ForwardMode::eval());
    auto to_pgm = [&](const Tensor& logits, const std::string& name) {
      Tensor prob = sigmoid(logits);
      data::GrayImage img;
      img.height = prob.dim(2);
      img.width = prob.dim(3);
      img.px.resize(static_cast<size_t>(img.width) * img.height);
      for (size_t j = 0; j < img.px.size(); ++j) {
        img.px[j] = static_cast<uint8_t>(std::lround(prob.values()[j] * 255.0f));
      }
      data::write_pgm(img, (fs::path(out) / name).string());
    };
    to_pgm(fwd.logits, samples[i].id + "_pred.pgm");
    if (dump_sides) {
      for (size_t k = 0; k < fwd.sides.sup_logits.size(); ++k) {
        to_pgm(fwd.sides.sup_logits[k], samples[i].id + "_side" + std::to_string(k) + ".pgm");
      }
    }
  }
  std::cout << "wrote " << samples.size() << " prediction map(s) to " << out << "\n";
  return 0;
}

int cmd_roc(const Invocation& inv) {
  ExtraKeys extras;
  RunConfig cfg = assemble_config(inv, {}, extras);
  if (inv.checkpoint.empty() || inv.manifest.empty()) {
    throw std::invalid_argument("roc needs --checkpoint and --manifest");
  }
  if (inv.thresholds < 1) throw std::invalid_argument("--thresholds must be >= 1");

  auto samples = load_prepared(inv.manifest, cfg.model);
  ILNet net(cfg.model, cfg.seed);
  load_checkpoint_into(net.params(), inv.checkpoint);

  auto maps = predict_prob_maps(net, samples);
  std::vector<float> thresholds;
  for (int i = 0; i < inv.thresholds; ++i) {
    thresholds.push_back(inv.thresholds == 1
                             ? 1.0f
                             : 1.0f - static_cast<float>(i) / static_cast<float>(inv.thresholds - 1));
  }
  auto points = metrics::roc_sweep(maps, gt_masks(samples), thresholds);

  std::string csv = "threshold,pd,fa\n";
  char row[128];
  for (const auto& p : points) {
    std::snprintf(row, sizeof(row), "%.6f,%.6f,%.6f\n", static_cast<double>(p.threshold), p.pd,
                  p.fa);
    csv += row;
  }
  std::cout << csv;
  if (!inv.out_dir.empty()) {
    fs::create_directories(inv.out_dir);
    write_text((fs::path(inv.out_dir) / "roc.csv").string(), csv);
  }
  return 0;
}

int cmd_bench(const Invocation& inv) {
  ExtraKeys extras;
  RunConfig cfg = assemble_config(inv, {"bench_runs"}, extras);
  const int runs = std::max(1, extras.get_int("bench_runs", 100));

  ILNet net(cfg.model, cfg.seed);
  const int64_t params = net.param_count();
  const int64_t flops = net.count_flops(1, cfg.model.input_h, cfg.model.input_w);

  NoGradGuard ng;
  Tensor input = Tensor::zeros({1, 3, cfg.model.input_h, cfg.model.input_w});
  net.forward(input, ForwardMode::eval());  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < runs; ++i) net.forward(input, ForwardMode::eval());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double ips = runs / secs;

  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\n  \"name\": \"%s\",\n  \"input_size\": [%d, %d],\n  \"params\": %lld,\n"
                "  \"flops\": %lld,\n  \"images_per_second\": %.6f\n}\n",
                cfg.model.name.c_str(), cfg.model.input_h, cfg.model.input_w,
                static_cast<long long>(params), static_cast<long long>(flops), ips);
  std::cout << buf;
  if (!inv.out_dir.empty()) {
    fs::create_directories(inv.out_dir);
    write_text((fs::path(inv.out_dir) / "bench.json").string(), buf);
  }
  return 0;
}

int cmd_gradcheck(const Invocation& inv) {
  ExtraKeys extras;
  RunConfig cfg = assemble_config(inv, {"gradcheck_mutant", "gradcheck_samples"}, extras);
  const int input = std::min(32, cfg.model.input_h);

  ILNet net(cfg.model, cfg.seed);
  data::SynthOptions so;
  so.count = 1;
  so.height = so.width = input;
  so.seed = cfg.seed + 1;
  auto ds = data::synth_dataset(so);
  Tensor x = images_to_tensor(ds, {0});
  Tensor gt = masks_to_tensor(ds, {0});

  // eval-mode norms keep the loss smooth at this input size; the
  // batch-statistics backward is covered by the op-level checks
  auto loss_fn = [&]() {
    auto fwd = net.forward(x, ForwardMode::eval());
    return total_loss(fwd.sides.sup_logits, fwd.logits, gt).total_tensor;
  };
  auto value_fn = [&]() -> double {
    auto fwd = net.forward(x, ForwardMode::eval());
    double acc = static_cast<double>(bce_with_logits(fwd.logits, gt).item());
    for (const auto& s : fwd.sides.sup_logits) {
      acc += static_cast<double>(bce_with_logits(s, gt).item());
    }
    return acc;
  };
  GradCheckOptions opts;
  opts.samples_per_group = extras.get_int("gradcheck_samples", 10);
  opts.seed = cfg.seed;
  opts.flip_sign = extras.get_int("gradcheck_mutant", 0) != 0;
  auto report = gradcheck_params(loss_fn, net.params(), opts, value_fn);

  char row[256];
  for (const auto& g : report.groups) {
    std::snprintf(row, sizeof(row), "%s %s max_rel_err=%.6f checked=%d\n",
                  g.passed ? "ok  " : "FAIL", g.name.c_str(), static_cast<double>(g.max_rel_err),
                  g.checked);
    std::cout << row;
  }
  for (const auto& f : report.failures) std::cout << "mismatch: " << f << "\n";
  std::snprintf(row, sizeof(row), "%s groups=%zu max_rel_err=%.6f\n",
                report.passed ? "PASS" : "FAIL", report.groups.size(),
                static_cast<double>(report.max_rel_err));
  std::cout << row;
  return report.passed ? 0 : 2;
}

int cmd_synth(const Invocation& inv) {
  ExtraKeys extras;
  RunConfig cfg = assemble_config(inv, {"count", "size", "min_targets", "max_targets"}, extras);
  if (inv.out_dir.empty()) throw std::invalid_argument("synth needs --out");

  data::SynthOptions so;
  so.count = extras.get_int("count", 16);
  so.height = so.width = extras.get_int("size", cfg.model.input_h);
  so.min_targets = extras.get_int("min_targets", 1);
  so.max_targets = extras.get_int("max_targets", 3);
  so.seed = cfg.seed;
  auto samples = data::synth_dataset(so);
  auto manifest = data::write_dataset(samples, inv.out_dir, so.height, so.width);
  std::cout << "wrote " << manifest.entries.size() << " sample(s) under " << inv.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ilnet: small-target infrared segmentation engine"};
  app.require_subcommand(1);

  Invocation inv;
  auto* train = app.add_subcommand("train", "train a model on a dataset manifest");
  add_common(train, inv);
  train->add_option("--manifest", inv.manifest, "dataset manifest (tsv)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and print a metrics report");
  add_common(eval, inv);
  eval->add_option("--manifest", inv.manifest, "dataset manifest (tsv)");
  eval->add_option("--checkpoint", inv.checkpoint, "model checkpoint");

  auto* infer = app.add_subcommand("infer", "write probability maps for a manifest");
  add_common(infer, inv);
  infer->add_option("--manifest", inv.manifest, "dataset manifest (tsv)");
  infer->add_option("--checkpoint", inv.checkpoint, "model checkpoint");

  auto* roc = app.add_subcommand("roc", "threshold sweep, CSV of threshold,pd,fa");
  add_common(roc, inv);
  roc->add_option("--manifest", inv.manifest, "dataset manifest (tsv)");
  roc->add_option("--checkpoint", inv.checkpoint, "model checkpoint");
  roc->add_option("--thresholds", inv.thresholds, "number of thresholds from 1 down to 0");

  auto* bench = app.add_subcommand("bench", "parameter count, flop count and forward throughput");
  add_common(bench, inv);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(gradcheck, inv);

  auto* synth = app.add_subcommand("synth", "generate a synthetic small-target dataset");
  add_common(synth, inv);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(inv);
    if (eval->parsed()) return cmd_eval(inv);
    if (infer->parsed()) return cmd_infer(inv);
    if (roc->parsed()) return cmd_roc(inv);
    if (bench->parsed()) return cmd_bench(inv);
    if (gradcheck->parsed()) return cmd_gradcheck(inv);
    if (synth->parsed()) return cmd_synth(inv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
