#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ilnet {

struct StageChannels {
  int cin = 0;
  int cmid = 0;
  int cout = 0;
};

// The eleven (Cin, Cmid, Cout) stage triples, ordered Encoder0..4,
// Decoder4..0, DecoderO. Decoder4 is the bottom block of the U; every other
// decoder consumes the concatenation of the up-sampled deeper feature and
// the (optionally fused) encoder skip, which fixes the Cin sums validate()
// checks.
struct ModelConfig {
  std::string name = "S";  // S | M | L
  std::array<StageChannels, 11> stage_channels{};
  int n = 2;          // DODA nonlinearity exponent
  int b = 2;          // DODA bias term
  float t = 1.0f;     // edge-channel scale, 0 < t < 3
  int num_ipof_stages = 5;  // 0..5, deepest-first
  bool use_rb = true;
  int input_h = 64;
  int input_w = 64;

  const StageChannels& encoder(int i) const { return stage_channels[static_cast<size_t>(i)]; }
  // dec index 0 = bottom (Decoder4) .. 5 = DecoderO
  const StageChannels& decoder(int i) const { return stage_channels[static_cast<size_t>(5 + i)]; }

  void validate() const;  // throws std::invalid_argument on bad configs
};

// Table presets for the three published sizes.
ModelConfig preset_config(const std::string& name);

struct TrainConfig {
  int epochs = 150;
  int batch_size = 4;
  float lr = 1e-3f;
  float weight_decay = 1e-4f;
  std::string decay_kind = "step";
  float decay_factor = 0.5f;
  int decay_interval = 100;
  std::string optimizer = "adam";  // adam | sgd
  void validate() const;
};

// One parsed run configuration: plain-text key=value lines, '#' comments.
// Unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  uint64_t seed = 0;

  void apply(const std::string& key, const std::string& value);
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text);

}  // namespace ilnet
