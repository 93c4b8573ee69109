#include "ilnet/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ilnet {
namespace {

void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::array<StageChannels, 11> triples(std::initializer_list<StageChannels> v) {
  std::array<StageChannels, 11> out{};
  size_t i = 0;
  for (const auto& s : v) out[i++] = s;
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (name != "S" && name != "M" && name != "L" && name != "custom") {
    fail("config name must be S, M, L or custom, got '" + name + "'");
  }
  for (const auto& s : stage_channels) {
    if (s.cin < 1 || s.cmid < 1 || s.cout < 1) fail("stage channels must be positive");
  }
  if (n < 1 || b < 1) fail("n and b must be positive integers");
  if (!(t > 0.0f && t < 3.0f)) fail("t must satisfy 0 < t < 3");
  if (num_ipof_stages < 0 || num_ipof_stages > 5) fail("num_ipof_stages must be in 0..5");
  if (input_h < 16 || input_w < 16 || input_h % 16 || input_w % 16) {
    fail("input size must be a positive multiple of 16");
  }
  // bottom consumes Encoder4 directly
  if (decoder(0).cin != encoder(4).cout) {
    fail("Decoder4 Cin must equal Encoder4 Cout");
  }
  // each later decoder consumes cat(upsampled deeper decoder, encoder skip)
  for (int s = 1; s <= 5; ++s) {
    const int enc_idx = 5 - s;
    const int expect = decoder(s - 1).cout + encoder(enc_idx).cout;
    if (decoder(s).cin != expect) {
      fail("decoder stage " + std::to_string(s) + " Cin=" + std::to_string(decoder(s).cin) +
           " inconsistent with concatenation width " + std::to_string(expect));
    }
    // the fused pair must share a channel count
    if (decoder(s - 1).cout != encoder(enc_idx).cout) {
      fail("fusion pair at encoder " + std::to_string(enc_idx) + " has mismatched channels");
    }
  }
}

ModelConfig preset_config(const std::string& name) {
  ModelConfig c;
  c.name = name;
  if (name == "S") {
    c.stage_channels = triples({{3, 4, 8},
                                {8, 4, 8},
                                {8, 4, 8},
                                {8, 4, 8},
                                {8, 4, 8},
                                {8, 4, 8},
                                {16, 4, 8},
                                {16, 4, 8},
                                {16, 4, 8},
                                {16, 4, 8},
                                {16, 4, 8}});
  } else if (name == "M") {
    c.stage_channels = triples({{3, 16, 64},
                                {64, 16, 64},
                                {64, 16, 64},
                                {64, 16, 64},
                                {64, 16, 64},
                                {64, 16, 64},
                                {128, 16, 64},
                                {128, 16, 64},
                                {128, 16, 64},
                                {128, 16, 64},
                                {128, 16, 64}});
  } else if (name == "L") {
    c.stage_channels = triples({{3, 16, 64},
                                {64, 16, 64},
                                {64, 32, 64},
                                {64, 32, 128},
                                {128, 32, 128},
                                {128, 64, 128},
                                {256, 64, 128},
                                {256, 32, 64},
                                {128, 32, 64},
                                {128, 16, 64},
                                {128, 16, 64}});
  } else {
    fail("unknown model preset '" + name + "' (expected S, M or L)");
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr > 0.0f)) fail("lr must be positive");
  if (weight_decay < 0.0f) fail("weight_decay must be >= 0");
  if (decay_kind != "step" && decay_kind != "none") fail("decay must be 'step' or 'none'");
  if (!(decay_factor > 0.0f && decay_factor <= 1.0f)) fail("decay_factor must be in (0,1]");
  if (decay_interval < 1) fail("decay_interval must be >= 1");
  if (optimizer != "adam" && optimizer != "sgd") fail("optimizer must be 'adam' or 'sgd'");
}

namespace {

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    fail("config key '" + key + "': expected integer, got '" + v + "'");
  }
  return 0;
}

float to_float(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    float r = std::stof(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    fail("config key '" + key + "': expected number, got '" + v + "'");
  }
  return 0.0f;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  fail("config key '" + key + "': expected boolean 0/1, got '" + v + "'");
  return false;
}

}  // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "name") {
    // swap in the preset's channel plan but keep any knobs already set
    ModelConfig preset = preset_config(value);
    model.name = preset.name;
    model.stage_channels = preset.stage_channels;
  } else if (key == "input_size") {
    auto comma = value.find(',');
    if (comma == std::string::npos) {
      model.input_h = model.input_w = to_int(key, value);
    } else {
      model.input_h = to_int(key, value.substr(0, comma));
      model.input_w = to_int(key, value.substr(comma + 1));
    }
  } else if (key == "n") {
    model.n = to_int(key, value);
  } else if (key == "b") {
    model.b = to_int(key, value);
  } else if (key == "t") {
    model.t = to_float(key, value);
  } else if (key == "num_ipof_stages") {
    model.num_ipof_stages = to_int(key, value);
  } else if (key == "use_rb") {
    model.use_rb = to_bool(key, value);
  } else if (key == "stage_channels") {
    std::vector<int> nums;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) nums.push_back(to_int(key, item));
    if (nums.size() != 33) fail("stage_channels override needs 11 comma-separated triples (33 ints)");
    for (int i = 0; i < 11; ++i) {
      model.stage_channels[static_cast<size_t>(i)] = {nums[static_cast<size_t>(3 * i)],
                                                      nums[static_cast<size_t>(3 * i + 1)],
                                                      nums[static_cast<size_t>(3 * i + 2)]};
    }
    model.name = "custom";
  } else if (key == "seed") {
    seed = static_cast<uint64_t>(std::stoull(value));
  } else if (key == "epochs") {
    train.epochs = to_int(key, value);
  } else if (key == "batch_size") {
    train.batch_size = to_int(key, value);
  } else if (key == "lr") {
    train.lr = to_float(key, value);
  } else if (key == "weight_decay") {
    train.weight_decay = to_float(key, value);
  } else if (key == "decay") {
    train.decay_kind = value;
  } else if (key == "decay_factor") {
    train.decay_factor = to_float(key, value);
  } else if (key == "decay_interval") {
    train.decay_interval = to_int(key, value);
  } else if (key == "optimizer") {
    train.optimizer = value;
  } else {
    fail("unknown config key '" + key + "'");
  }
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  cfg.model = preset_config("S");
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      auto b2 = s.find_first_not_of(" \t");
      auto e2 = s.find_last_not_of(" \t");
      s = (b2 == std::string::npos) ? "" : s.substr(b2, e2 - b2 + 1);
    };
    trim(key);
    trim(value);
    cfg.apply(key, value);
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("cannot open config file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace ilnet
