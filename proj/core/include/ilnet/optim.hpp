#pragma once

#include <map>
#include <string>
#include <vector>

#include "ilnet/config.hpp"
#include "ilnet/param_store.hpp"

namespace ilnet {

// Multiplicative step decay: lr * factor^floor(epoch / interval).
float lr_schedule(int epoch, const TrainConfig& config);

// SGD with momentum 0.9 or adaptive-moment estimation (beta1=0.9,
// beta2=0.999, eps=1e-8), both with decoupled weight decay.
class Optimizer {
 public:
  Optimizer(std::string kind, float weight_decay);

  // Applies one update from the gradients currently held by the trainable
  // store entries. Throws if any trainable entry has no gradient.
  void step(ParamStore& store, float lr);

  int64_t step_count() const { return step_count_; }

  // Optimizer state rides in its own store so training can resume exactly.
  ParamStore export_state() const;
  void import_state(const ParamStore& state);

 private:
  struct Slot {
    std::vector<float> m;  // momentum / first moment
    std::vector<float> v;  // second moment (adam only)
  };
  std::string kind_;
  float weight_decay_;
  int64_t step_count_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace ilnet
