#include "ilnet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ilnet {

float lr_schedule(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
  if (config.decay_kind == "none") return config.lr;
  const int steps = epoch / config.decay_interval;
  return config.lr * std::pow(config.decay_factor, static_cast<float>(steps));
}

Optimizer::Optimizer(std::string kind, float weight_decay)
    : kind_(std::move(kind)), weight_decay_(weight_decay) {
  if (kind_ != "sgd" && kind_ != "adam") {
    throw std::invalid_argument("optimizer kind must be 'sgd' or 'adam', got '" + kind_ + "'");
  }
}

void Optimizer::step(ParamStore& store, float lr) {
  constexpr float kMomentum = 0.9f;
  constexpr float kBeta1 = 0.9f;
  constexpr float kBeta2 = 0.999f;
  constexpr float kEps = 1e-8f;

  ++step_count_;
  const float bias1 = 1.0f - std::pow(kBeta1, static_cast<float>(step_count_));
  const float bias2 = 1.0f - std::pow(kBeta2, static_cast<float>(step_count_));

  for (auto& [name, entry] : store.entries()) {
    if (!entry.trainable) continue;
    Tensor& p = entry.tensor;
    if (!p.has_grad()) {
      throw TensorError("optimizer: no gradient for parameter '" + name + "'");
    }
    auto vals = p.mutable_values();
    auto grad = p.grad();
    Slot& slot = slots_[name];
    if (slot.m.empty()) slot.m.assign(vals.size(), 0.0f);
    if (kind_ == "adam" && slot.v.empty()) slot.v.assign(vals.size(), 0.0f);

    if (kind_ == "sgd") {
      for (size_t i = 0; i < vals.size(); ++i) {
        slot.m[i] = kMomentum * slot.m[i] + grad[i];
        vals[i] -= lr * (slot.m[i] + weight_decay_ * vals[i]);
      }
    } else {
      for (size_t i = 0; i < vals.size(); ++i) {
        slot.m[i] = kBeta1 * slot.m[i] + (1.0f - kBeta1) * grad[i];
        slot.v[i] = kBeta2 * slot.v[i] + (1.0f - kBeta2) * grad[i] * grad[i];
        const float mhat = slot.m[i] / bias1;
        const float vhat = slot.v[i] / bias2;
        vals[i] -= lr * (mhat / (std::sqrt(vhat) + kEps) + weight_decay_ * vals[i]);
      }
    }
  }
}

ParamStore Optimizer::export_state() const {
  ParamStore st;
  st.buffer("opt.kind", Tensor::from({1}, {kind_ == "adam" ? 1.0f : 0.0f}));
  st.buffer("opt.steps", Tensor::from({1}, {static_cast<float>(step_count_)}));
  for (const auto& [name, slot] : slots_) {
    st.buffer("m." + name, Tensor::from({static_cast<int>(slot.m.size())},
                                        std::vector<float>(slot.m)));
    if (!slot.v.empty()) {
      st.buffer("v." + name, Tensor::from({static_cast<int>(slot.v.size())},
                                          std::vector<float>(slot.v)));
    }
  }
  return st;
}

void Optimizer::import_state(const ParamStore& state) {
  slots_.clear();
  step_count_ = 0;
  for (const auto& [name, entry] : state.entries()) {
    const auto& vals = entry.tensor.values();
    if (name == "opt.steps") {
      step_count_ = static_cast<int64_t>(vals[0]);
    } else if (name == "opt.kind") {
      const std::string kind = vals[0] == 1.0f ? "adam" : "sgd";
      if (kind != kind_) {
        throw TensorError("optimizer state was written by '" + kind + "', cannot resume as '" +
                          kind_ + "'");
      }
    } else if (name.rfind("m.", 0) == 0) {
      slots_[name.substr(2)].m.assign(vals.begin(), vals.end());
    } else if (name.rfind("v.", 0) == 0) {
      slots_[name.substr(2)].v.assign(vals.begin(), vals.end());
    } else {
      throw TensorError("unrecognized optimizer state entry '" + name + "'");
    }
  }
}

}  // namespace ilnet
