#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ilnet/config.hpp"
#include "ilnet/ops.hpp"
#include "ilnet/param_store.hpp"
#include "ilnet/rng.hpp"
#include "ilnet/tensor.hpp"

namespace ilnet {

// Number of stacked 1-D aggregation convolutions for a channel width:
// ceil(1 - b/(2n) + log2(sqrt(c'))/n), floored at 1.
int doda_num_layers(int c_prime, int n, int b);

// 1-D kernel size for a channel width: nearest odd integer to
// (1 + log2 c')/2, ties rounding up, floored at 1.
int doda_kernel_size(int c_prime);

// Edge-map channel budget for side-output stage i (0 = deepest):
// ceil(t * 2^(i-1)).
int rb_channels(int i, float t);

// Mode for one forward pass. Training mode uses batch statistics in the
// norms; update_running additionally folds them into the running buffers.
struct ForwardMode {
  bool training = false;
  bool update_running = false;
  static ForwardMode train() { return {true, true}; }
  static ForwardMode train_frozen_stats() { return {true, false}; }
  static ForwardMode eval() { return {false, false}; }
};

// conv3x3(+dilation) + batch norm + ReLU, the repeated unit of every
// residual U-block.
struct ConvBnRelu {
  Tensor w, bias, gamma, beta, rmean, rvar;
  int stride = 1, padding = 1, dilation = 1;
  Tensor forward(const Tensor& x, ForwardMode mode) const;
};

ConvBnRelu make_conv_bn_relu(ParamStore& store, const std::string& prefix, int cin, int cout,
                             int k, int dilation, RandomSource& rng);

// A residual U-block: entry conv to Cout, a (depth-1)-deep mini U over Cmid
// with 2x pooling on the way down and concatenation skips on the way up,
// plus a dilated bottom conv; the entry conv output is added back at the
// end. The dilated variant replaces the scale ladder with a dilation ladder
// and never changes resolution.
struct RsuBlock {
  int depth = 0;
  bool dilated = false;
  ConvBnRelu conv_in;
  std::vector<ConvBnRelu> down;  // depth-1 entries; down[0] runs at full scale
  ConvBnRelu bottom;
  std::vector<ConvBnRelu> up;  // up[j] mirrors down[j]

  Tensor forward(const Tensor& x, ForwardMode mode) const;
};

RsuBlock make_rsu(ParamStore& store, const std::string& prefix, int depth, bool dilated, int cin,
                  int cmid, int cout, RandomSource& rng);

// Stack of length-preserving 1-D convolutions with ReLU between layers
// (none after the last). Layer count and kernel size both derive from the
// channel width the stack serves.
struct DodaStack {
  int kernel = 1;
  std::vector<Tensor> kernels;
  Tensor forward(const Tensor& seq) const;
};

DodaStack make_doda(ParamStore& store, const std::string& prefix, int c_prime, int n, int b,
                    RandomSource& rng);

// Bidirectional fusion of an encoder feature E and the same-shape decoder
// feature D through parallel spatial and channel attention branches, summed
// and re-projected to the stage width.
struct IpofModule {
  int channels = 0;
  int c_prime = 0;
  ConvBnRelu q_proj, v_spatial, k_proj, v_channel;  // 1x1 C -> C'
  DodaStack doda_spatial, doda_channel;
  // spatial branch tail: 1x1 conv + layer norm + ReLU, then sigmoid
  Tensor s2_w, s2_b, s2_ln_g, s2_ln_b;
  // channel branch tail: 1x1 C' -> C restore, layer norm over (C,H,W)
  Tensor restore_w, restore_b, ln_g, ln_b;
  ConvBnRelu fuse;  // 1x1 C -> C

  Tensor spatial_branch(const Tensor& e, const Tensor& d, ForwardMode mode) const;
  Tensor channel_branch(const Tensor& e, const Tensor& d, ForwardMode mode) const;
  Tensor forward(const Tensor& e, const Tensor& d, ForwardMode mode) const;
};

IpofModule make_ipof(ParamStore& store, const std::string& prefix, int channels, int n, int b,
                     RandomSource& rng);

struct SideOutputs {
  std::vector<Tensor> edge_maps;  // 6 maps, rb_channels(i,t) channels each, input resolution
  std::vector<Tensor> sup_logits; // 6 one-channel logit maps, input resolution
};

// Intermediate features captured during a forward pass, for inspection.
struct StageFeatures {
  std::vector<Tensor> encoder_outs;   // E0..E4
  std::vector<int> encoder_scale;     // down-sampling factor per encoder: 1,2,4,8,16
  std::vector<Tensor> decoder_outs;   // deepest first: bottom, then up to DecoderO
  std::vector<Tensor> fused_skips;    // skip actually concatenated at each up step
};

// Shallow-derived gate for the deep half of the side outputs.
Tensor rb_gate(const std::vector<Tensor>& shallow_edges, const Tensor& gate_w,
               const Tensor& gate_b);
// Multiplies the deep half (i <= 2) by the gate, passes the shallow half.
std::vector<Tensor> rb_enhance(const std::vector<Tensor>& edges, const Tensor& gate);

class ILNet {
 public:
  ILNet(ModelConfig config, uint64_t seed);

  struct Output {
    Tensor logits;  // [N,1,H,W]
    SideOutputs sides;
  };

  Output forward(const Tensor& input, ForwardMode mode, StageFeatures* capture = nullptr);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }
  int64_t param_count() const { return store_->param_count(); }

  // Analytic FLOP count of one forward pass at the given input size.
  int64_t count_flops(int batch, int h, int w);

 private:
  ModelConfig config_;
  std::shared_ptr<ParamStore> store_;
  std::vector<RsuBlock> encoders_;  // 5
  std::vector<RsuBlock> decoders_;  // 6; index 0 is the bottom block
  std::vector<IpofModule> ipof_;    // per enabled encoder stage, deepest first
  std::vector<int> ipof_encoder_;   // encoder index each entry serves
  struct SideHead {
    Tensor edge_w, edge_b, sup_w, sup_b;
    int edge_channels = 0;
  };
  std::vector<SideHead> side_heads_;  // 6, deepest first
  Tensor gate_w_, gate_b_;            // RB gate (point-wise conv)
  Tensor fuse_w_, fuse_b_;            // final point-wise fusion
};

// Convenience wrapper matching the checkpoint layout: fresh model + params.
std::unique_ptr<ILNet> build_model(const ModelConfig& config, uint64_t seed);

}  // namespace ilnet
