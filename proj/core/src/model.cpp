#include "ilnet/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ilnet/flops.hpp"

namespace ilnet {

int doda_num_layers(int c_prime, int n, int b) {
  if (c_prime < 1) throw std::invalid_argument("doda_num_layers: channel width must be >= 1");
  const double v = 1.0 - static_cast<double>(b) / (2.0 * n) +
                   std::log2(std::sqrt(static_cast<double>(c_prime))) / n;
  const int layers = static_cast<int>(std::ceil(v));
  return layers < 1 ? 1 : layers;
}

int doda_kernel_size(int c_prime) {
  if (c_prime < 1) throw std::invalid_argument("doda_kernel_size: channel width must be >= 1");
  const double x = (1.0 + std::log2(static_cast<double>(c_prime))) / 2.0;
  if (x <= 1.0) return 1;
  // nearest odd; exact midpoints round up
  const int lo = 2 * static_cast<int>(std::floor((x - 1.0) / 2.0)) + 1;
  const int hi = lo + 2;
  const double dlo = x - lo, dhi = hi - x;
  return dlo < dhi ? lo : hi;
}

int rb_channels(int i, float t) {
  if (i < 0 || !(t > 0.0f)) throw std::invalid_argument("rb_channels: need i >= 0 and t > 0");
  return static_cast<int>(std::ceil(static_cast<double>(t) * std::pow(2.0, i - 1)));
}

Tensor ConvBnRelu::forward(const Tensor& x, ForwardMode mode) const {
  Tensor y = conv2d(x, w, bias, stride, padding, dilation);
  // running buffers are mutated in place, so shed constness locally
  Tensor rm = rmean, rv = rvar;
  y = batch_norm(y, gamma, beta, rm, rv, mode.training, mode.update_running);
  return relu(y);
}

ConvBnRelu make_conv_bn_relu(ParamStore& store, const std::string& prefix, int cin, int cout,
                             int k, int dilation, RandomSource& rng) {
  ConvBnRelu m;
  m.dilation = dilation;
  m.padding = dilation * (k - 1) / 2;
  m.w = store.add(prefix + ".w", conv_weight_init({cout, cin, k, k}, rng));
  m.bias = store.add(prefix + ".b", Tensor::zeros({cout}));
  m.gamma = store.add(prefix + ".bn_g", Tensor::full({cout}, 1.0f));
  m.beta = store.add(prefix + ".bn_b", Tensor::zeros({cout}));
  m.rmean = store.buffer(prefix + ".bn_rm", Tensor::zeros({cout}));
  m.rvar = store.buffer(prefix + ".bn_rv", Tensor::full({cout}, 1.0f));
  return m;
}

namespace {

Tensor upsample_like(const Tensor& x, const Tensor& ref) {
  if (x.dim(2) == ref.dim(2) && x.dim(3) == ref.dim(3)) return x;
  return upsample_bilinear(x, ref.dim(2), ref.dim(3));
}

}  // namespace

Tensor RsuBlock::forward(const Tensor& x, ForwardMode mode) const {
  if (!dilated) {
    const int need = 1 << (depth - 2);
    if (x.dim(2) < need || x.dim(3) < need) {
      throw TensorError("residual U-block of depth " + std::to_string(depth) +
                        " needs spatial dims >= " + std::to_string(need) + ", got " +
                        shape_str(x.shape()));
    }
  }
  Tensor hin = conv_in.forward(x, mode);
  std::vector<Tensor> h(down.size());
  h[0] = down[0].forward(hin, mode);
  for (size_t j = 1; j < down.size(); ++j) {
    Tensor cur = dilated ? h[j - 1] : maxpool2(h[j - 1]);
    h[j] = down[j].forward(cur, mode);
  }
  Tensor u = bottom.forward(h.back(), mode);
  for (size_t j = down.size(); j-- > 0;) {
    u = up[j].forward(concat({u, h[j]}, 1), mode);
    if (!dilated && j > 0) u = upsample_like(u, h[j - 1]);
  }
  return add(u, hin);
}

RsuBlock make_rsu(ParamStore& store, const std::string& prefix, int depth, bool dilated, int cin,
                  int cmid, int cout, RandomSource& rng) {
  if (depth < 2) throw std::invalid_argument("residual U-block depth must be >= 2");
  RsuBlock blk;
  blk.depth = depth;
  blk.dilated = dilated;
  blk.conv_in = make_conv_bn_relu(store, prefix + ".convin", cin, cout, 3, 1, rng);
  auto dil = [&](int level) { return dilated ? (1 << level) : 1; };
  for (int j = 0; j < depth - 1; ++j) {
    const int in_ch = (j == 0) ? cout : cmid;
    blk.down.push_back(
        make_conv_bn_relu(store, prefix + ".down" + std::to_string(j), in_ch, cmid, 3, dil(j), rng));
  }
  blk.bottom = make_conv_bn_relu(store, prefix + ".bottom", cmid, cmid, 3,
                                 dilated ? (1 << (depth - 1)) : 2, rng);
  for (int j = 0; j < depth - 1; ++j) {
    const int out_ch = (j == 0) ? cout : cmid;
    blk.up.push_back(make_conv_bn_relu(store, prefix + ".up" + std::to_string(j), 2 * cmid, out_ch,
                                       3, dil(j), rng));
  }
  return blk;
}

Tensor DodaStack::forward(const Tensor& seq) const {
  Tensor cur = seq;
  const int pad = (kernel - 1) / 2;
  for (size_t i = 0; i < kernels.size(); ++i) {
    cur = conv1d(cur, kernels[i], pad);
    if (i + 1 < kernels.size()) cur = relu(cur);
  }
  return cur;
}

DodaStack make_doda(ParamStore& store, const std::string& prefix, int c_prime, int n, int b,
                    RandomSource& rng) {
  DodaStack s;
  s.kernel = doda_kernel_size(c_prime);
  const int layers = doda_num_layers(c_prime, n, b);
  for (int i = 0; i < layers; ++i) {
    s.kernels.push_back(
        store.add(prefix + ".k" + std::to_string(i), conv_weight_init({1, 1, s.kernel}, rng)));
  }
  return s;
}

Tensor IpofModule::spatial_branch(const Tensor& e, const Tensor& d, ForwardMode mode) const {
  const int batch = e.dim(0), h = e.dim(2), w = e.dim(3);
  // softmax-normalized channel query from E, projected value stack from D
  Tensor q = global_avg_pool(q_proj.forward(e, mode));   // [N,C',1,1]
  q = softmax(reshape(q, {batch, c_prime}), 1);
  Tensor v = v_spatial.forward(d, mode);                 // [N,C',H,W]
  Tensor raw = channel_sum(channel_scale(v, reshape(q, {batch, c_prime, 1, 1})));
  // aggregate along the flattened spatial axis
  Tensor seq = doda_spatial.forward(reshape(raw, {batch, 1, h * w}));
  Tensor m = reshape(seq, {batch, 1, h, w});
  m = conv2d(m, s2_w, s2_b, 1, 0, 1);
  m = relu(layer_norm(m, 3, s2_ln_g, s2_ln_b));
  m = sigmoid(m);
  return spatial_scale(e, m);
}

Tensor IpofModule::channel_branch(const Tensor& e, const Tensor& d, ForwardMode mode) const {
  const int batch = e.dim(0);
  Tensor g = global_avg_pool(k_proj.forward(e, mode));   // [N,C',1,1]
  Tensor wseq = doda_channel.forward(reshape(g, {batch, 1, c_prime}));
  Tensor wgt = softmax(reshape(wseq, {batch, c_prime}), 1);
  Tensor u = v_channel.forward(d, mode);                 // [N,C',H,W]
  Tensor scaled = channel_scale(u, reshape(wgt, {batch, c_prime, 1, 1}));
  Tensor restored = conv2d(scaled, restore_w, restore_b, 1, 0, 1);
  Tensor gate = sigmoid(layer_norm(restored, 3, ln_g, ln_b));
  return mul(gate, d);
}

Tensor IpofModule::forward(const Tensor& e, const Tensor& d, ForwardMode mode) const {
  if (e.shape() != d.shape()) {
    throw TensorError("fusion inputs must share a shape, got " + shape_str(e.shape()) + " and " +
                      shape_str(d.shape()));
  }
  Tensor both = add(channel_branch(e, d, mode), spatial_branch(e, d, mode));
  return fuse.forward(both, mode);
}

IpofModule make_ipof(ParamStore& store, const std::string& prefix, int channels, int n, int b,
                     RandomSource& rng) {
  IpofModule m;
  m.channels = channels;
  m.c_prime = channels / 2 < 1 ? 1 : channels / 2;
  m.q_proj = make_conv_bn_relu(store, prefix + ".q", channels, m.c_prime, 1, 1, rng);
  m.v_spatial = make_conv_bn_relu(store, prefix + ".vs", channels, m.c_prime, 1, 1, rng);
  m.k_proj = make_conv_bn_relu(store, prefix + ".k", channels, m.c_prime, 1, 1, rng);
  m.v_channel = make_conv_bn_relu(store, prefix + ".vc", channels, m.c_prime, 1, 1, rng);
  m.doda_spatial = make_doda(store, prefix + ".doda_s", m.c_prime, n, b, rng);
  m.doda_channel = make_doda(store, prefix + ".doda_c", m.c_prime, n, b, rng);
  m.s2_w = store.add(prefix + ".s2.w", conv_weight_init({1, 1, 1, 1}, rng));
  m.s2_b = store.add(prefix + ".s2.b", Tensor::zeros({1}));
  m.s2_ln_g = store.add(prefix + ".s2.ln_g", Tensor::full({1}, 1.0f));
  m.s2_ln_b = store.add(prefix + ".s2.ln_b", Tensor::zeros({1}));
  m.restore_w = store.add(prefix + ".restore.w", conv_weight_init({channels, m.c_prime, 1, 1}, rng));
  m.restore_b = store.add(prefix + ".restore.b", Tensor::zeros({channels}));
  m.ln_g = store.add(prefix + ".ln_g", Tensor::full({channels}, 1.0f));
  m.ln_b = store.add(prefix + ".ln_b", Tensor::zeros({channels}));
  m.fuse = make_conv_bn_relu(store, prefix + ".fuse", channels, channels, 1, 1, rng);
  return m;
}

Tensor rb_gate(const std::vector<Tensor>& shallow_edges, const Tensor& gate_w,
               const Tensor& gate_b) {
  if (shallow_edges.empty()) throw TensorError("rb_gate: need at least one shallow edge map");
  Tensor cat = concat(shallow_edges, 1);
  return sigmoid(conv2d(cat, gate_w, gate_b, 1, 0, 1));
}

std::vector<Tensor> rb_enhance(const std::vector<Tensor>& edges, const Tensor& gate) {
  std::vector<Tensor> out;
  out.reserve(edges.size());
  const size_t deep = edges.size() / 2;  // lowest-resolution half is gated
  for (size_t i = 0; i < edges.size(); ++i) {
    out.push_back(i < deep ? spatial_scale(edges[i], gate) : edges[i]);
  }
  return out;
}

ILNet::ILNet(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  store_ = std::make_shared<ParamStore>();
  RandomSource rng(seed);

  static constexpr int kEncDepth[5] = {7, 6, 5, 4, 4};
  static constexpr bool kEncDilated[5] = {false, false, false, false, true};
  // decoder ladder mirrors the encoders; index 0 is the bottom block
  static constexpr int kDecDepth[6] = {4, 4, 4, 5, 6, 7};
  static constexpr bool kDecDilated[6] = {true, true, false, false, false, false};

  for (int i = 0; i < 5; ++i) {
    const auto& s = config_.encoder(i);
    encoders_.push_back(make_rsu(*store_, "enc" + std::to_string(i), kEncDepth[i], kEncDilated[i],
                                 s.cin, s.cmid, s.cout, rng));
  }
  for (int i = 0; i < 6; ++i) {
    const auto& s = config_.decoder(i);
    decoders_.push_back(make_rsu(*store_, "dec" + std::to_string(i), kDecDepth[i], kDecDilated[i],
                                 s.cin, s.cmid, s.cout, rng));
  }
  // fusion on the deepest num_ipof_stages encoder stages
  for (int k = 0; k < config_.num_ipof_stages; ++k) {
    const int enc_idx = 4 - k;
    ipof_.push_back(make_ipof(*store_, "ipof" + std::to_string(enc_idx),
                              config_.encoder(enc_idx).cout, config_.n, config_.b, rng));
    ipof_encoder_.push_back(enc_idx);
  }
  for (int i = 0; i < 6; ++i) {
    SideHead head;
    const int cin = config_.decoder(i).cout;
    head.sup_w = store_->add("side" + std::to_string(i) + ".sup_w",
                             conv_weight_init({1, cin, 1, 1}, rng));
    head.sup_b = store_->add("side" + std::to_string(i) + ".sup_b", Tensor::zeros({1}));
    if (config_.use_rb) {
      head.edge_channels = rb_channels(i, config_.t);
      head.edge_w = store_->add("side" + std::to_string(i) + ".edge_w",
                                conv_weight_init({head.edge_channels, cin, 3, 3}, rng));
      head.edge_b =
          store_->add("side" + std::to_string(i) + ".edge_b", Tensor::zeros({head.edge_channels}));
    }
    side_heads_.push_back(std::move(head));
  }
  if (config_.use_rb) {
    int shallow_ch = 0, total_ch = 0;
    for (int i = 0; i < 6; ++i) {
      total_ch += side_heads_[static_cast<size_t>(i)].edge_channels;
      if (i >= 3) shallow_ch += side_heads_[static_cast<size_t>(i)].edge_channels;
    }
    gate_w_ = store_->add("rb.gate_w", conv_weight_init({1, shallow_ch, 1, 1}, rng));
    gate_b_ = store_->add("rb.gate_b", Tensor::zeros({1}));
    fuse_w_ = store_->add("rb.fuse_w", conv_weight_init({1, total_ch, 1, 1}, rng));
    fuse_b_ = store_->add("rb.fuse_b", Tensor::zeros({1}));
  } else {
    fuse_w_ = store_->add("out.fuse_w", conv_weight_init({1, 6, 1, 1}, rng));
    fuse_b_ = store_->add("out.fuse_b", Tensor::zeros({1}));
  }
}

ILNet::Output ILNet::forward(const Tensor& input, ForwardMode mode, StageFeatures* capture) {
  if (input.rank() != 4 || input.dim(1) != 3) {
    throw TensorError("forward needs [N,3,H,W] input, got " + shape_str(input.shape()));
  }
  if (input.dim(2) % 16 || input.dim(3) % 16) {
    throw TensorError("input dims must be divisible by 16, got " + shape_str(input.shape()));
  }

  std::vector<Tensor> enc(5);
  enc[0] = encoders_[0].forward(input, mode);
  for (int i = 1; i < 5; ++i) {
    enc[static_cast<size_t>(i)] =
        encoders_[static_cast<size_t>(i)].forward(maxpool2(enc[static_cast<size_t>(i - 1)]), mode);
  }

  std::vector<Tensor> dec_out(6);
  Tensor cur = decoders_[0].forward(maxpool2(enc[4]), mode);
  dec_out[0] = cur;
  for (int s = 1; s < 6; ++s) {
    const int enc_idx = 5 - s;
    Tensor up = upsample_like(cur, enc[static_cast<size_t>(enc_idx)]);
    Tensor skip = enc[static_cast<size_t>(enc_idx)];
    for (size_t k = 0; k < ipof_.size(); ++k) {
      if (ipof_encoder_[k] == enc_idx) {
        skip = ipof_[k].forward(skip, up, mode);
        break;
      }
    }
    if (capture) capture->fused_skips.push_back(skip);
    cur = decoders_[static_cast<size_t>(s)].forward(concat({up, skip}, 1), mode);
    dec_out[static_cast<size_t>(s)] = cur;
  }
  if (capture) {
    capture->encoder_outs = enc;
    capture->encoder_scale = {1, 2, 4, 8, 16};
    capture->decoder_outs = dec_out;
  }

  const int h = input.dim(2), w = input.dim(3);
  Output out;
  out.sides.sup_logits.resize(6);
  if (config_.use_rb) out.sides.edge_maps.resize(6);
  for (int i = 0; i < 6; ++i) {
    const auto& head = side_heads_[static_cast<size_t>(i)];
    const Tensor& feat = dec_out[static_cast<size_t>(i)];
    Tensor sup = conv2d(feat, head.sup_w, head.sup_b, 1, 0, 1);
    out.sides.sup_logits[static_cast<size_t>(i)] =
        (sup.dim(2) == h && sup.dim(3) == w) ? sup : upsample_bilinear(sup, h, w);
    if (config_.use_rb) {
      Tensor edge = conv2d(feat, head.edge_w, head.edge_b, 1, 1, 1);
      out.sides.edge_maps[static_cast<size_t>(i)] =
          (edge.dim(2) == h && edge.dim(3) == w) ? edge : upsample_bilinear(edge, h, w);
    }
  }

  if (config_.use_rb) {
    std::vector<Tensor> shallow(out.sides.edge_maps.begin() + 3, out.sides.edge_maps.end());
    Tensor gate = rb_gate(shallow, gate_w_, gate_b_);
    std::vector<Tensor> fused = rb_enhance(out.sides.edge_maps, gate);
    out.logits = conv2d(concat(fused, 1), fuse_w_, fuse_b_, 1, 0, 1);
  } else {
    out.logits = conv2d(concat(out.sides.sup_logits, 1), fuse_w_, fuse_b_, 1, 0, 1);
  }
  return out;
}

int64_t ILNet::count_flops(int batch, int h, int w) {
  NoGradGuard ng;
  FlopCounter::begin();
  forward(Tensor::zeros({batch, 3, h, w}), ForwardMode::eval());
  return FlopCounter::end();
}

std::unique_ptr<ILNet> build_model(const ModelConfig& config, uint64_t seed) {
  return std::make_unique<ILNet>(config, seed);
}

}  // namespace ilnet
