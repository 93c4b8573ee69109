#pragma once

#include <vector>

#include "ilnet/tensor.hpp"

namespace ilnet {

struct LossBreakdown {
  std::vector<float> side_bce;  // one per supervision map
  float final_bce = 0.0f;
  float total = 0.0f;
  Tensor total_tensor;  // scalar, differentiable
};

// Mean binary cross entropy from logits; ground truth must be exactly {0,1}.
Tensor bce_loss(const Tensor& logits, const Tensor& gt);

// Unweighted sum of the per-side and final BCE terms.
LossBreakdown total_loss(const std::vector<Tensor>& side_logits, const Tensor& final_logits,
                         const Tensor& gt);

}  // namespace ilnet
