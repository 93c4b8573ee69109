#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ilnet/param_store.hpp"
#include "ilnet/tensor.hpp"

namespace ilnet {

struct GradCheckOptions {
  int samples_per_group = 10;
  float step = 1e-2f;
  float tolerance = 1e-2f;
  // relative error denominator is max(|analytic|, |fd|, denom_floor); the
  // floor sits above the f32 finite-difference noise so structurally-zero
  // gradients compare at the noise scale instead of blowing up the ratio
  float denom_floor = 1e-2f;
  // differences at or below the finite-difference noise bound are agreement;
  // genuine gradient defects miss by orders of magnitude, not by 1e-4
  float abs_floor = 3e-4f;
  // the check runs at a jittered copy of the parameters: zero-initialized
  // biases pin thousands of pre-activations exactly onto ReLU kinks, where
  // finite differences are undefined; a generic nearby point is just as
  // informative and numerically well-posed
  float point_jitter = 0.05f;
  uint64_t seed = 0;
  // test hook: flips the sign of every analytic gradient before comparing,
  // proving the checker catches corrupted gradients
  bool flip_sign = false;
};

struct GradCheckGroup {
  std::string name;
  float max_rel_err = 0.0f;
  int checked = 0;
  int skipped = 0;  // coordinates where the two-step estimates disagreed
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  std::vector<std::string> failures;
  bool passed = true;
  float max_rel_err = 0.0f;
  int checked = 0;
  int skipped = 0;
};

// Optional higher-precision scalarization for the finite-difference side:
// must compute the same mathematical quantity as loss_fn. Summing the loss
// terms in double lowers the f32 quantization floor without changing the
// derivative being verified.
using LossValueFn = std::function<double()>;

// Central-difference check of d(loss)/d(param) on randomly sampled
// coordinates of every trainable entry, with a two-step consistency filter:
// a coordinate whose h and h/2 estimates disagree sits on a kink (or in
// curvature finite differences cannot resolve) and is skipped instead of
// judged. loss_fn must rebuild the loss from the store's current values on
// each call; parameter values are restored when the check returns.
GradCheckReport gradcheck_params(const std::function<Tensor()>& loss_fn, ParamStore& store,
                                 const GradCheckOptions& opts,
                                 const LossValueFn& value_fn = nullptr);

}  // namespace ilnet
