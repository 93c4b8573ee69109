#pragma once

#include <optional>
#include <vector>

#include "ilnet/tensor.hpp"

namespace ilnet {

// All operators use cross-correlation semantics (no kernel flip) and are
// differentiable through the global GradTape. Every forward output is
// finite-checked before it is returned.

// input [N,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout] optional.
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              int stride = 1, int padding = 0, int dilation = 1);

// Length-preserving 1-D convolution: input [N,1,L], weight [1,1,k], k odd,
// padding must equal (k-1)/2. No bias.
Tensor conv1d(const Tensor& input, const Tensor& weight, int padding);

// Per-channel batch normalization over (N,H,W). Training mode normalizes by
// batch statistics (biased variance) and, when update_running is set, folds
// them into the running buffers with momentum 0.9. Eval mode uses the
// running buffers.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  bool update_running, float momentum = 0.9f, float eps = 1e-5f);

// Statistics over the trailing `norm_dims` dimensions of each sample; the
// affine pair is indexed by the first normalized dimension and broadcast
// over the rest, so parameter shapes stay independent of resolution.
Tensor layer_norm(const Tensor& input, int norm_dims, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);

// 2x2 window, stride 2, ceil mode. Gradient routes to the first occurrence
// of the window maximum in row-major order.
Tensor maxpool2(const Tensor& x);

// Bilinear interpolation with half-pixel centers (align_corners=false).
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);

Tensor concat(const std::vector<Tensor>& inputs, int axis);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float c);

Tensor global_avg_pool(const Tensor& x);                       // [N,C,H,W] -> [N,C,1,1]
Tensor channel_scale(const Tensor& x, const Tensor& weights);  // weights [N,C,1,1]
Tensor spatial_scale(const Tensor& x, const Tensor& map);      // map [N,1,H,W]
Tensor channel_sum(const Tensor& x);                           // [N,C,H,W] -> [N,1,H,W]

// Copying reshape; element count must be preserved.
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);  // scalar [1]

// Mean of the numerically stable per-element binary cross entropy between
// logits and {0,1} targets. Gradient w.r.t. logits is (sigmoid(x)-y)/numel.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace ilnet
