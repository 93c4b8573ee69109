#include "ilnet/loss.hpp"

#include "ilnet/ops.hpp"

namespace ilnet {

Tensor bce_loss(const Tensor& logits, const Tensor& gt) {
  for (float v : gt.values()) {
    if (v != 0.0f && v != 1.0f) {
      throw TensorError("bce_loss: ground truth must be binary, found " + std::to_string(v));
    }
  }
  return bce_with_logits(logits, gt);
}

LossBreakdown total_loss(const std::vector<Tensor>& side_logits, const Tensor& final_logits,
                         const Tensor& gt) {
  LossBreakdown out;
  Tensor acc;
  for (const Tensor& s : side_logits) {
    Tensor term = bce_loss(s, gt);
    out.side_bce.push_back(term.item());
    acc = acc.defined() ? add(acc, term) : term;
  }
  Tensor fin = bce_loss(final_logits, gt);
  out.final_bce = fin.item();
  acc = acc.defined() ? add(acc, fin) : fin;
  out.total_tensor = acc;
  out.total = acc.item();
  return out;
}

}  // namespace ilnet
