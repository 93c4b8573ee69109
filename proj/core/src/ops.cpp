#include "ilnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "ilnet/flops.hpp"
#include "ilnet/threading.hpp"

namespace ilnet {
namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::get().recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void record(const char* op, Tensor& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  GradTape::get().push(TapeNode{op, out.data(), std::move(fn)});
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw TensorError(msg);
}

int conv_out_dim(int in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

// Fills a [Cin*k*k, rows*Wout] column block for output rows [r0, r1).
void im2col_rows(const float* x, int cin, int h, int w, int k, int stride, int pad, int dilation,
                 int wout, int r0, int r1, float* col) {
  const int block_cols = (r1 - r0) * wout;
  for (int c = 0; c < cin; ++c) {
    const float* xc = x + static_cast<int64_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = col + (static_cast<int64_t>(c) * k * k + ki * k + kj) * block_cols;
        for (int oh = r0; oh < r1; ++oh) {
          const int ih = oh * stride - pad + ki * dilation;
          float* dst = row + static_cast<int64_t>(oh - r0) * wout;
          if (ih < 0 || ih >= h) {
            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(wout));
            continue;
          }
          const float* src = xc + static_cast<int64_t>(ih) * w;
          for (int ow = 0; ow < wout; ++ow) {
            const int iw = ow * stride - pad + kj * dilation;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-adds a column block back into the input gradient (one sample).
void col2im_rows(const float* col, int cin, int h, int w, int k, int stride, int pad, int dilation,
                 int wout, int r0, int r1, float* gx) {
  const int block_cols = (r1 - r0) * wout;
  for (int c = 0; c < cin; ++c) {
    float* gc = gx + static_cast<int64_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = col + (static_cast<int64_t>(c) * k * k + ki * k + kj) * block_cols;
        for (int oh = r0; oh < r1; ++oh) {
          const int ih = oh * stride - pad + ki * dilation;
          if (ih < 0 || ih >= h) continue;
          const float* src = row + static_cast<int64_t>(oh - r0) * wout;
          float* dst = gc + static_cast<int64_t>(ih) * w;
          for (int ow = 0; ow < wout; ++ow) {
            const int iw = ow * stride - pad + kj * dilation;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

constexpr int kConvRowBlock = 16;

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              int stride, int padding, int dilation) {
  require(input.rank() == 4, "conv2d: input must be [N,Cin,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be [Cout,Cin,k,k], got " + shape_str(weight.shape()));
  const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == cin, "conv2d: weight expects " + std::to_string(weight.dim(1)) +
                                    " input channels, input has " + std::to_string(cin));
  require(weight.dim(3) == k, "conv2d: kernel must be square");
  require(k % 2 == 1, "conv2d: kernel size must be odd");
  require(stride >= 1 && padding >= 0 && dilation >= 1, "conv2d: bad stride/padding/dilation");
  if (bias) {
    require(bias->rank() == 1 && bias->dim(0) == cout, "conv2d: bias must be [Cout]");
  }
  const int ho = conv_out_dim(h, k, stride, padding, dilation);
  const int wo = conv_out_dim(w, k, stride, padding, dilation);
  require(ho >= 1 && wo >= 1, "conv2d: non-positive output size for input " + shape_str(input.shape()));

  const int kk = cin * k * k;
  const int64_t plane = static_cast<int64_t>(ho) * wo;
  Tensor out = Tensor::zeros({n, cout, ho, wo});
  const float* xp = input.values().data();
  const float* wp = weight.values().data();
  const float* bp = bias ? bias->values().data() : nullptr;
  float* op = out.mutable_values().data();

  const int blocks = (ho + kConvRowBlock - 1) / kConvRowBlock;
  parallel_for(static_cast<int64_t>(n) * blocks, [&](int64_t lo, int64_t hi) {
    std::vector<float> col;
    for (int64_t u = lo; u < hi; ++u) {
      const int ni = static_cast<int>(u / blocks);
      const int bi = static_cast<int>(u % blocks);
      const int r0 = bi * kConvRowBlock;
      const int r1 = std::min(ho, r0 + kConvRowBlock);
      const int cols = (r1 - r0) * wo;
      col.resize(static_cast<size_t>(kk) * cols);
      im2col_rows(xp + static_cast<int64_t>(ni) * cin * h * w, cin, h, w, k, stride, padding,
                  dilation, wo, r0, r1, col.data());
      MapC wm(wp, cout, kk);
      MapC cm(col.data(), kk, cols);
      MatRM res = wm * cm;  // [cout, cols]
      for (int c = 0; c < cout; ++c) {
        float* dst = op + ((static_cast<int64_t>(ni) * cout + c) * ho + r0) * wo;
        const float* src = res.data() + static_cast<int64_t>(c) * cols;
        if (bp) {
          const float b = bp[c];
          for (int i = 0; i < cols; ++i) dst[i] = src[i] + b;
        } else {
          std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(cols));
        }
      }
    }
  });

  check_finite(out.values(), "conv2d");
  FlopCounter::add(2LL * kk * cout * plane * n + (bias ? static_cast<int64_t>(n) * cout * plane : 0));

  if (want_grad({&input, &weight, bias ? &*bias : &input})) {
    auto xd = input.data();
    auto wd = weight.data();
    auto bd = bias ? bias->data() : nullptr;
    auto od = out.data();
    const bool need_gx = input.requires_grad();
    const bool need_gw = weight.requires_grad();
    const bool need_gb = bd && bias->requires_grad();
    record("conv2d", out, [=]() {
      const float* go = od->grad.data();
      if (need_gb) {
        bd->ensure_grad();
        for (int ni = 0; ni < n; ++ni) {
          for (int c = 0; c < cout; ++c) {
            double acc = 0.0;
            const float* g = go + (static_cast<int64_t>(ni) * cout + c) * plane;
            for (int64_t i = 0; i < plane; ++i) acc += g[i];
            bd->grad[static_cast<size_t>(c)] += static_cast<float>(acc);
          }
        }
      }
      if (!need_gx && !need_gw) return;
      if (need_gx) xd->ensure_grad();
      if (need_gw) wd->ensure_grad();
      // per-sample partial weight grads, reduced in fixed order afterwards
      std::vector<std::vector<float>> wparts;
      if (need_gw) wparts.assign(static_cast<size_t>(n), std::vector<float>(static_cast<size_t>(cout) * kk, 0.0f));
      parallel_for(n, [&](int64_t nlo, int64_t nhi) {
        std::vector<float> col, gcol;
        for (int64_t ni = nlo; ni < nhi; ++ni) {
          const float* xs = xd->values.data() + ni * cin * h * w;
          const float* gs = go + ni * cout * plane;
          for (int r0 = 0; r0 < ho; r0 += kConvRowBlock) {
            const int r1 = std::min(ho, r0 + kConvRowBlock);
            const int cols = (r1 - r0) * wo;
            col.resize(static_cast<size_t>(kk) * cols);
            im2col_rows(xs, cin, h, w, k, stride, padding, dilation, wo, r0, r1, col.data());
            // gather the block of output grads: [cout, cols]
            gcol.resize(static_cast<size_t>(cout) * cols);
            for (int c = 0; c < cout; ++c) {
              std::memcpy(gcol.data() + static_cast<int64_t>(c) * cols,
                          gs + (static_cast<int64_t>(c) * ho + r0) * wo,
                          sizeof(float) * static_cast<size_t>(cols));
            }
            MapC gm(gcol.data(), cout, cols);
            MapC cm(col.data(), kk, cols);
            if (need_gw) {
              MapM wpart(wparts[static_cast<size_t>(ni)].data(), cout, kk);
              wpart.noalias() += gm * cm.transpose();
            }
            if (need_gx) {
              MatRM gc = MapC(wd->values.data(), cout, kk).transpose() * gm;  // [kk, cols]
              col2im_rows(gc.data(), cin, h, w, k, stride, padding, dilation, wo, r0, r1,
                          xd->grad.data() + ni * cin * h * w);
            }
          }
        }
      });
      if (need_gw) {
        for (int ni = 0; ni < n; ++ni) {
          const auto& part = wparts[static_cast<size_t>(ni)];
          for (size_t i = 0; i < part.size(); ++i) wd->grad[i] += part[i];
        }
      }
    });
  }
  return out;
}

Tensor conv1d(const Tensor& input, const Tensor& weight, int padding) {
  require(input.rank() == 3 && input.dim(1) == 1,
          "conv1d: input must be [N,1,L], got " + shape_str(input.shape()));
  require(weight.rank() == 3 && weight.dim(0) == 1 && weight.dim(1) == 1,
          "conv1d: weight must be [1,1,k], got " + shape_str(weight.shape()));
  const int k = weight.dim(2);
  require(k % 2 == 1, "conv1d: even kernel size " + std::to_string(k) + " rejected");
  require(padding == (k - 1) / 2, "conv1d: padding must be (k-1)/2 to preserve length");
  const int n = input.dim(0);
  const int len = input.dim(2);

  Tensor out = Tensor::zeros({n, 1, len});
  const float* xp = input.values().data();
  const float* wp = weight.values().data();
  float* op = out.mutable_values().data();
  for (int ni = 0; ni < n; ++ni) {
    const float* xs = xp + static_cast<int64_t>(ni) * len;
    float* os = op + static_cast<int64_t>(ni) * len;
    for (int t = 0; t < len; ++t) {
      float acc = 0.0f;
      for (int j = 0; j < k; ++j) {
        const int s = t - padding + j;
        if (s >= 0 && s < len) acc += wp[j] * xs[s];
      }
      os[t] = acc;
    }
  }
  check_finite(out.values(), "conv1d");
  FlopCounter::add(2LL * k * len * n);

  if (want_grad({&input, &weight})) {
    auto xd = input.data();
    auto wd = weight.data();
    auto od = out.data();
    const bool need_gx = input.requires_grad();
    const bool need_gw = weight.requires_grad();
    record("conv1d", out, [=]() {
      const float* go = od->grad.data();
      if (need_gx) xd->ensure_grad();
      if (need_gw) wd->ensure_grad();
      for (int ni = 0; ni < n; ++ni) {
        const float* xs = xd->values.data() + static_cast<int64_t>(ni) * len;
        const float* gs = go + static_cast<int64_t>(ni) * len;
        for (int t = 0; t < len; ++t) {
          for (int j = 0; j < k; ++j) {
            const int s = t - padding + j;
            if (s < 0 || s >= len) continue;
            if (need_gx) xd->grad[static_cast<size_t>(ni) * len + s] += wd->values[static_cast<size_t>(j)] * gs[t];
            if (need_gw) wd->grad[static_cast<size_t>(j)] += xs[s] * gs[t];
          }
        }
      }
    });
  }
  return out;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training, bool update_running,
                  float momentum, float eps) {
  require(input.rank() == 4, "batch_norm: input must be [N,C,H,W]");
  require(eps > 0.0f, "batch_norm: eps must be positive");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(gamma.rank() == 1 && gamma.dim(0) == c && beta.dim(0) == c &&
              running_mean.dim(0) == c && running_var.dim(0) == c,
          "batch_norm: channel count mismatch for C=" + std::to_string(c));
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int64_t m = static_cast<int64_t>(n) * plane;

  std::vector<float> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  if (training) {
    for (int ci = 0; ci < c; ++ci) {
      double s = 0.0, s2 = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const float* x = input.values().data() + (static_cast<int64_t>(ni) * c + ci) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          s += x[i];
          s2 += static_cast<double>(x[i]) * x[i];
        }
      }
      const double mu = s / static_cast<double>(m);
      const double var = std::max(0.0, s2 / static_cast<double>(m) - mu * mu);
      mean[static_cast<size_t>(ci)] = static_cast<float>(mu);
      inv_std[static_cast<size_t>(ci)] = static_cast<float>(1.0 / std::sqrt(var + eps));
      if (update_running) {
        auto rm = running_mean.mutable_values();
        auto rv = running_var.mutable_values();
        rm[static_cast<size_t>(ci)] =
            momentum * rm[static_cast<size_t>(ci)] + (1.0f - momentum) * static_cast<float>(mu);
        rv[static_cast<size_t>(ci)] =
            momentum * rv[static_cast<size_t>(ci)] + (1.0f - momentum) * static_cast<float>(var);
      }
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean[static_cast<size_t>(ci)] = running_mean.values()[static_cast<size_t>(ci)];
      inv_std[static_cast<size_t>(ci)] =
          1.0f / std::sqrt(running_var.values()[static_cast<size_t>(ci)] + eps);
    }
  }

  Tensor out = Tensor::zeros(input.shape());
  float* op = out.mutable_values().data();
  const float* xp = input.values().data();
  const float* gp = gamma.values().data();
  const float* bp = beta.values().data();
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const float* x = xp + (static_cast<int64_t>(ni) * c + ci) * plane;
      float* o = op + (static_cast<int64_t>(ni) * c + ci) * plane;
      const float mu = mean[static_cast<size_t>(ci)];
      const float is = inv_std[static_cast<size_t>(ci)];
      const float g = gp[static_cast<size_t>(ci)];
      const float b = bp[static_cast<size_t>(ci)];
      for (int64_t i = 0; i < plane; ++i) o[i] = (x[i] - mu) * is * g + b;
    }
  }
  check_finite(out.values(), "batch_norm");
  FlopCounter::add(8LL * input.numel());

  if (want_grad({&input, &gamma, &beta})) {
    auto xd = input.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    auto od = out.data();
    const bool need_gx = input.requires_grad();
    record("batch_norm", out, [=]() {
      const float* go = od->grad.data();
      gd->ensure_grad();
      bd->ensure_grad();
      if (need_gx) xd->ensure_grad();
      for (int ci = 0; ci < c; ++ci) {
        const float mu = mean[static_cast<size_t>(ci)];
        const float is = inv_std[static_cast<size_t>(ci)];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int ni = 0; ni < n; ++ni) {
          const float* x = xd->values.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
          const float* g = go + (static_cast<int64_t>(ni) * c + ci) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            sum_dy += g[i];
            sum_dy_xhat += static_cast<double>(g[i]) * (x[i] - mu) * is;
          }
        }
        gd->grad[static_cast<size_t>(ci)] += static_cast<float>(sum_dy_xhat);
        bd->grad[static_cast<size_t>(ci)] += static_cast<float>(sum_dy);
        if (!need_gx) continue;
        const float gam = gd->values[static_cast<size_t>(ci)];
        if (training) {
          const float inv_m = 1.0f / static_cast<float>(m);
          const float c1 = static_cast<float>(sum_dy) * inv_m;
          const float c2 = static_cast<float>(sum_dy_xhat) * inv_m;
          for (int ni = 0; ni < n; ++ni) {
            const float* x = xd->values.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
            const float* g = go + (static_cast<int64_t>(ni) * c + ci) * plane;
            float* gx = xd->grad.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              const float xhat = (x[i] - mu) * is;
              gx[i] += gam * is * (g[i] - c1 - xhat * c2);
            }
          }
        } else {
          for (int ni = 0; ni < n; ++ni) {
            const float* g = go + (static_cast<int64_t>(ni) * c + ci) * plane;
            float* gx = xd->grad.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
            for (int64_t i = 0; i < plane; ++i) gx[i] += gam * is * g[i];
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& input, int norm_dims, const Tensor& gamma, const Tensor& beta,
                  float eps) {
  require(eps > 0.0f, "layer_norm: eps must be positive");
  require(norm_dims >= 1 && norm_dims <= input.rank(),
          "layer_norm: norm_dims out of range for " + shape_str(input.shape()));
  const int rank = input.rank();
  int64_t groups = 1, block = 1;
  for (int i = 0; i < rank - norm_dims; ++i) groups *= input.dim(i);
  for (int i = rank - norm_dims; i < rank; ++i) block *= input.dim(i);
  const int affine = input.dim(rank - norm_dims);  // first normalized dim
  require(gamma.rank() == 1 && gamma.dim(0) == affine && beta.dim(0) == affine,
          "layer_norm: affine params must have length " + std::to_string(affine));
  const int64_t inner = block / affine;

  std::vector<float> mean(static_cast<size_t>(groups)), inv_std(static_cast<size_t>(groups));
  const float* xp = input.values().data();
  for (int64_t g = 0; g < groups; ++g) {
    const float* x = xp + g * block;
    double s = 0.0, s2 = 0.0;
    for (int64_t i = 0; i < block; ++i) {
      s += x[i];
      s2 += static_cast<double>(x[i]) * x[i];
    }
    const double mu = s / static_cast<double>(block);
    const double var = std::max(0.0, s2 / static_cast<double>(block) - mu * mu);
    mean[static_cast<size_t>(g)] = static_cast<float>(mu);
    inv_std[static_cast<size_t>(g)] = static_cast<float>(1.0 / std::sqrt(var + eps));
  }

  Tensor out = Tensor::zeros(input.shape());
  float* op = out.mutable_values().data();
  const float* gp = gamma.values().data();
  const float* bp = beta.values().data();
  for (int64_t g = 0; g < groups; ++g) {
    const float* x = xp + g * block;
    float* o = op + g * block;
    const float mu = mean[static_cast<size_t>(g)];
    const float is = inv_std[static_cast<size_t>(g)];
    for (int a = 0; a < affine; ++a) {
      const float ga = gp[a], be = bp[a];
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t idx = a * inner + i;
        o[idx] = (x[idx] - mu) * is * ga + be;
      }
    }
  }
  check_finite(out.values(), "layer_norm");
  FlopCounter::add(8LL * input.numel());

  if (want_grad({&input, &gamma, &beta})) {
    auto xd = input.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    auto od = out.data();
    const bool need_gx = input.requires_grad();
    record("layer_norm", out, [=]() {
      const float* go = od->grad.data();
      gd->ensure_grad();
      bd->ensure_grad();
      if (need_gx) xd->ensure_grad();
      for (int64_t g = 0; g < groups; ++g) {
        const float* x = xd->values.data() + g * block;
        const float* dy = go + g * block;
        const float mu = mean[static_cast<size_t>(g)];
        const float is = inv_std[static_cast<size_t>(g)];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int a = 0; a < affine; ++a) {
          const float ga = gd->values[static_cast<size_t>(a)];
          for (int64_t i = 0; i < inner; ++i) {
            const int64_t idx = a * inner + i;
            const float xhat = (x[idx] - mu) * is;
            gd->grad[static_cast<size_t>(a)] += dy[idx] * xhat;
            bd->grad[static_cast<size_t>(a)] += dy[idx];
            const float dxhat = dy[idx] * ga;
            sum_dxhat += dxhat;
            sum_dxhat_xhat += static_cast<double>(dxhat) * xhat;
          }
        }
        if (!need_gx) continue;
        const float c1 = static_cast<float>(sum_dxhat / static_cast<double>(block));
        const float c2 = static_cast<float>(sum_dxhat_xhat / static_cast<double>(block));
        float* gx = xd->grad.data() + g * block;
        for (int a = 0; a < affine; ++a) {
          const float ga = gd->values[static_cast<size_t>(a)];
          for (int64_t i = 0; i < inner; ++i) {
            const int64_t idx = a * inner + i;
            const float xhat = (x[idx] - mu) * is;
            gx[idx] += is * (dy[idx] * ga - c1 - xhat * c2);
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* xp = x.values().data();
  float* op = out.mutable_values().data();
  const int64_t m = x.numel();
  for (int64_t i = 0; i < m; ++i) op[i] = xp[i] > 0.0f ? xp[i] : 0.0f;
  check_finite(out.values(), "relu");
  FlopCounter::add(m);
  if (want_grad({&x})) {
    auto xd = x.data();
    auto od = out.data();
    record("relu", out, [=]() {
      xd->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        if (xd->values[static_cast<size_t>(i)] > 0.0f) xd->grad[static_cast<size_t>(i)] += od->grad[static_cast<size_t>(i)];
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* xp = x.values().data();
  float* op = out.mutable_values().data();
  const int64_t m = x.numel();
  // outputs stay strictly inside (0,1): the closed ends would make
  // downstream log terms and >=-threshold binarization degenerate
  constexpr float kLo = std::numeric_limits<float>::min();
  constexpr float kHi = 1.0f - 1.0f / (1 << 24);
  for (int64_t i = 0; i < m; ++i) {
    const float v = xp[i];
    float s;
    if (v >= 0.0f) {
      s = 1.0f / (1.0f + std::exp(-v));
    } else {
      const float e = std::exp(v);
      s = e / (1.0f + e);
    }
    op[i] = std::clamp(s, kLo, kHi);
  }
  check_finite(out.values(), "sigmoid");
  FlopCounter::add(4 * m);
  if (want_grad({&x})) {
    auto xd = x.data();
    auto od = out.data();
    record("sigmoid", out, [=]() {
      xd->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        const float y = od->values[static_cast<size_t>(i)];
        xd->grad[static_cast<size_t>(i)] += od->grad[static_cast<size_t>(i)] * y * (1.0f - y);
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  require(axis >= 0 && axis < x.rank(), "softmax: axis out of range");
  int64_t outer = 1, inner = 1;
  const int c = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  Tensor out = Tensor::zeros(x.shape());
  const float* xp = x.values().data();
  float* op = out.mutable_values().data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const float* xl = xp + o * c * inner + i;
      float* ol = op + o * c * inner + i;
      float mx = xl[0];
      for (int j = 1; j < c; ++j) mx = std::max(mx, xl[static_cast<int64_t>(j) * inner]);
      double denom = 0.0;
      for (int j = 0; j < c; ++j) {
        const float e = std::exp(xl[static_cast<int64_t>(j) * inner] - mx);
        ol[static_cast<int64_t>(j) * inner] = e;
        denom += e;
      }
      const float inv = static_cast<float>(1.0 / denom);
      for (int j = 0; j < c; ++j) ol[static_cast<int64_t>(j) * inner] *= inv;
    }
  }
  check_finite(out.values(), "softmax");
  FlopCounter::add(6 * x.numel());
  if (want_grad({&x})) {
    auto xd = x.data();
    auto od = out.data();
    record("softmax", out, [=]() {
      xd->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          const float* yl = od->values.data() + o * c * inner + i;
          const float* gl = od->grad.data() + o * c * inner + i;
          float* gx = xd->grad.data() + o * c * inner + i;
          double dot = 0.0;
          for (int j = 0; j < c; ++j) {
            dot += static_cast<double>(gl[static_cast<int64_t>(j) * inner]) * yl[static_cast<int64_t>(j) * inner];
          }
          for (int j = 0; j < c; ++j) {
            const int64_t idx = static_cast<int64_t>(j) * inner;
            gx[idx] += yl[idx] * (gl[idx] - static_cast<float>(dot));
          }
        }
      }
    });
  }
  return out;
}

Tensor maxpool2(const Tensor& x) {
  require(x.rank() == 4, "maxpool2: input must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h >= 1 && w >= 1, "maxpool2: empty spatial dims");
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor out = Tensor::zeros({n, c, ho, wo});
  std::vector<int32_t> argmax(static_cast<size_t>(out.numel()));
  const float* xp = x.values().data();
  float* op = out.mutable_values().data();
  int64_t oi = 0;
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const float* plane = xp + (static_cast<int64_t>(ni) * c + ci) * h * w;
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow, ++oi) {
          float best = -std::numeric_limits<float>::infinity();
          int32_t best_idx = -1;
          for (int dy = 0; dy < 2; ++dy) {
            const int ih = 2 * oh + dy;
            if (ih >= h) break;
            for (int dx = 0; dx < 2; ++dx) {
              const int iw = 2 * ow + dx;
              if (iw >= w) break;
              const float v = plane[static_cast<int64_t>(ih) * w + iw];
              if (v > best) {  // strict: first occurrence wins ties
                best = v;
                best_idx = static_cast<int32_t>(ih * w + iw);
              }
            }
          }
          op[oi] = best;
          argmax[static_cast<size_t>(oi)] = best_idx;
        }
      }
    }
  }
  check_finite(out.values(), "maxpool2");
  FlopCounter::add(3 * out.numel());
  if (want_grad({&x})) {
    auto xd = x.data();
    auto od = out.data();
    auto idx = std::make_shared<std::vector<int32_t>>(std::move(argmax));
    record("maxpool2", out, [=]() {
      xd->ensure_grad();
      int64_t k = 0;
      for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
          float* gx = xd->grad.data() + (static_cast<int64_t>(ni) * c + ci) * h * w;
          for (int64_t p = 0; p < static_cast<int64_t>(ho) * wo; ++p, ++k) {
            gx[(*idx)[static_cast<size_t>(k)]] += od->grad[static_cast<size_t>(k)];
          }
        }
      }
    });
  }
  return out;
}

namespace {
struct Lerp {
  int lo, hi;
  float w;  // weight of hi
};

Lerp lerp_coords(int out_idx, int out_dim, int in_dim) {
  // half-pixel centers
  const float src = (static_cast<float>(out_idx) + 0.5f) * static_cast<float>(in_dim) /
                        static_cast<float>(out_dim) -
                    0.5f;
  float fl = std::floor(src);
  float w = src - fl;
  int lo = static_cast<int>(fl);
  int hi = lo + 1;
  lo = std::clamp(lo, 0, in_dim - 1);
  hi = std::clamp(hi, 0, in_dim - 1);
  return {lo, hi, w};
}
}  // namespace

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  require(x.rank() == 4, "upsample_bilinear: input must be [N,C,H,W]");
  require(out_h >= 1 && out_w >= 1, "upsample_bilinear: zero target dims");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h == h && out_w == w) {
    // identity resize still goes through a node so gradients flow
  }
  std::vector<Lerp> ys(static_cast<size_t>(out_h)), xs(static_cast<size_t>(out_w));
  for (int i = 0; i < out_h; ++i) ys[static_cast<size_t>(i)] = lerp_coords(i, out_h, h);
  for (int i = 0; i < out_w; ++i) xs[static_cast<size_t>(i)] = lerp_coords(i, out_w, w);

  Tensor out = Tensor::zeros({n, c, out_h, out_w});
  const float* xp = x.values().data();
  float* op = out.mutable_values().data();
  for (int64_t pc = 0; pc < static_cast<int64_t>(n) * c; ++pc) {
    const float* src = xp + pc * h * w;
    float* dst = op + pc * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const Lerp& ly = ys[static_cast<size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const Lerp& lx = xs[static_cast<size_t>(ox)];
        const float v00 = src[static_cast<int64_t>(ly.lo) * w + lx.lo];
        const float v01 = src[static_cast<int64_t>(ly.lo) * w + lx.hi];
        const float v10 = src[static_cast<int64_t>(ly.hi) * w + lx.lo];
        const float v11 = src[static_cast<int64_t>(ly.hi) * w + lx.hi];
        dst[static_cast<int64_t>(oy) * out_w + ox] =
            (1.0f - ly.w) * ((1.0f - lx.w) * v00 + lx.w * v01) +
            ly.w * ((1.0f - lx.w) * v10 + lx.w * v11);
      }
    }
  }
  check_finite(out.values(), "upsample_bilinear");
  FlopCounter::add(8 * out.numel());
  if (want_grad({&x})) {
    auto xd = x.data();
    auto od = out.data();
    auto ys_s = std::make_shared<std::vector<Lerp>>(std::move(ys));
    auto xs_s = std::make_shared<std::vector<Lerp>>(std::move(xs));
    record("upsample_bilinear", out, [=]() {
      xd->ensure_grad();
      for (int64_t pc = 0; pc < static_cast<int64_t>(n) * c; ++pc) {
        float* gx = xd->grad.data() + pc * h * w;
        const float* go = od->grad.data() + pc * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const Lerp& ly = (*ys_s)[static_cast<size_t>(oy)];
          for (int ox = 0; ox < out_w; ++ox) {
            const Lerp& lx = (*xs_s)[static_cast<size_t>(ox)];
            const float g = go[static_cast<int64_t>(oy) * out_w + ox];
            gx[static_cast<int64_t>(ly.lo) * w + lx.lo] += (1.0f - ly.w) * (1.0f - lx.w) * g;
            gx[static_cast<int64_t>(ly.lo) * w + lx.hi] += (1.0f - ly.w) * lx.w * g;
            gx[static_cast<int64_t>(ly.hi) * w + lx.lo] += ly.w * (1.0f - lx.w) * g;
            gx[static_cast<int64_t>(ly.hi) * w + lx.hi] += ly.w * lx.w * g;
          }
        }
      }
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& inputs, int axis) {
  require(!inputs.empty(), "concat: empty input list");
  const Shape& first = inputs[0].shape();
  require(axis >= 0 && axis < static_cast<int>(first.size()), "concat: axis out of range");
  Shape out_shape = first;
  int axis_total = 0;
  for (const Tensor& t : inputs) {
    require(t.rank() == static_cast<int>(first.size()), "concat: rank mismatch");
    for (int i = 0; i < t.rank(); ++i) {
      if (i != axis) {
        require(t.dim(i) == first[static_cast<size_t>(i)],
                "concat: dim " + std::to_string(i) + " mismatch: " + shape_str(t.shape()) +
                    " vs " + shape_str(first));
      }
    }
    axis_total += t.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first[static_cast<size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(first.size()); ++i) inner *= first[static_cast<size_t>(i)];

  Tensor out = Tensor::zeros(out_shape);
  float* op = out.mutable_values().data();
  const int64_t out_row = static_cast<int64_t>(axis_total) * inner;
  int64_t offset = 0;
  for (const Tensor& t : inputs) {
    const int64_t trow = static_cast<int64_t>(t.dim(axis)) * inner;
    const float* tp = t.values().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(op + o * out_row + offset, tp + o * trow, sizeof(float) * static_cast<size_t>(trow));
    }
    offset += trow;
  }
  // inputs were finite; concat introduces nothing new

  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (GradTape::get().recording() && any) {
    std::vector<std::shared_ptr<TensorData>> ins;
    std::vector<int64_t> rows;
    for (const Tensor& t : inputs) {
      ins.push_back(t.data());
      rows.push_back(static_cast<int64_t>(t.dim(axis)) * inner);
    }
    auto od = out.data();
    record("concat", out, [=]() {
      int64_t off = 0;
      for (size_t k = 0; k < ins.size(); ++k) {
        if (ins[k]->requires_grad) {
          ins[k]->ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            const float* g = od->grad.data() + o * out_row + off;
            float* gx = ins[k]->grad.data() + o * rows[k];
            for (int64_t i = 0; i < rows[k]; ++i) gx[i] += g[i];
          }
        }
        off += rows[k];
      }
    });
  }
  return out;
}

namespace {
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, bool is_mul) {
  require(a.shape() == b.shape(), std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const float* ap = a.values().data();
  const float* bp = b.values().data();
  float* op = out.mutable_values().data();
  const int64_t m = a.numel();
  if (is_mul) {
    for (int64_t i = 0; i < m; ++i) op[i] = ap[i] * bp[i];
  } else {
    for (int64_t i = 0; i < m; ++i) op[i] = ap[i] + bp[i];
  }
  check_finite(out.values(), name);
  FlopCounter::add(m);
  if (want_grad({&a, &b})) {
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.data();
    record(name, out, [=]() {
      if (is_mul) {
        if (ad->requires_grad) {
          ad->ensure_grad();
          for (int64_t i = 0; i < m; ++i) ad->grad[static_cast<size_t>(i)] += od->grad[static_cast<size_t>(i)] * bd->values[static_cast<size_t>(i)];
        }
        if (bd->requires_grad) {
          bd->ensure_grad();
          for (int64_t i = 0; i < m; ++i) bd->grad[static_cast<size_t>(i)] += od->grad[static_cast<size_t>(i)] * ad->values[static_cast<size_t>(i)];
        }
      } else {
        for (auto& d : {ad, bd}) {
          if (d->requires_grad) {
            d->ensure_grad();
            for (int64_t i = 0; i < m; ++i) d->grad[static_cast<size_t>(i)] += od->grad[static_cast<size_t>(i)];
          }
        }
      }
    });
  }
  return out;
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, "add", false); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, "mul", true); }

Tensor scale(const Tensor& x, float c) {
  Tensor out = Tensor::zeros(x.shape());
  const float* xp = x.values().data();
  float* op = out.mutable_values().data();
  const int64_t m = x.numel();
  for (int64_t i = 0; i < m; ++i) op[i] = xp[i] * c;
  check_finite(out.values(), "scale");
  FlopCounter::add(m);
  if (want_grad({&x})) {
    auto xd = x.data();
    auto od = out.data();
    record("scale", out, [=]() {
      xd->ensure_grad();
      for (int64_t i = 0; i < m; ++i) xd->grad[static_cast<size_t>(i)] += od->grad[static_cast<size_t>(i)] * c;
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.rank() == 4, "global_avg_pool: input must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor out = Tensor::zeros({n, c, 1, 1});
  const float* xp = x.values().data();
  float* op = out.mutable_values().data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
    double acc = 0.0;
    const float* src = xp + nc * plane;
    for (int64_t i = 0; i < plane; ++i) acc += src[i];
    op[nc] = static_cast<float>(acc / static_cast<double>(plane));
  }
  check_finite(out.values(), "global_avg_pool");
  FlopCounter::add(x.numel());
  if (want_grad({&x})) {
    auto xd = x.data();
    auto od = out.data();
    record("global_avg_pool", out, [=]() {
      xd->ensure_grad();
      const float inv = 1.0f / static_cast<float>(plane);
      for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
        const float g = od->grad[static_cast<size_t>(nc)] * inv;
        float* gx = xd->grad.data() + nc * plane;
        for (int64_t i = 0; i < plane; ++i) gx[i] += g;
      }
    });
  }
  return out;
}

Tensor channel_scale(const Tensor& x, const Tensor& weights) {
  require(x.rank() == 4, "channel_scale: input must be [N,C,H,W]");
  require(weights.rank() == 4 && weights.dim(0) == x.dim(0) && weights.dim(1) == x.dim(1) &&
              weights.dim(2) == 1 && weights.dim(3) == 1,
          "channel_scale: weights must be [N,C,1,1] matching " + shape_str(x.shape()));
  const int64_t nc = static_cast<int64_t>(x.dim(0)) * x.dim(1);
  const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor out = Tensor::zeros(x.shape());
  const float* xp = x.values().data();
  const float* wp = weights.values().data();
  float* op = out.mutable_values().data();
  for (int64_t j = 0; j < nc; ++j) {
    const float wv = wp[j];
    const float* src = xp + j * plane;
    float* dst = op + j * plane;
    for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] * wv;
  }
  check_finite(out.values(), "channel_scale");
  FlopCounter::add(x.numel());
  if (want_grad({&x, &weights})) {
    auto xd = x.data();
    auto wd = weights.data();
    auto od = out.data();
    record("channel_scale", out, [=]() {
      if (xd->requires_grad) xd->ensure_grad();
      if (wd->requires_grad) wd->ensure_grad();
      for (int64_t j = 0; j < nc; ++j) {
        const float* g = od->grad.data() + j * plane;
        if (xd->requires_grad) {
          const float wv = wd->values[static_cast<size_t>(j)];
          float* gx = xd->grad.data() + j * plane;
          for (int64_t i = 0; i < plane; ++i) gx[i] += g[i] * wv;
        }
        if (wd->requires_grad) {
          const float* src = xd->values.data() + j * plane;
          double acc = 0.0;
          for (int64_t i = 0; i < plane; ++i) acc += static_cast<double>(g[i]) * src[i];
          wd->grad[static_cast<size_t>(j)] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

Tensor spatial_scale(const Tensor& x, const Tensor& map) {
  require(x.rank() == 4, "spatial_scale: input must be [N,C,H,W]");
  require(map.rank() == 4 && map.dim(0) == x.dim(0) && map.dim(1) == 1 &&
              map.dim(2) == x.dim(2) && map.dim(3) == x.dim(3),
          "spatial_scale: map must be [N,1,H,W] matching " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor out = Tensor::zeros(x.shape());
  const float* xp = x.values().data();
  const float* mp = map.values().data();
  float* op = out.mutable_values().data();
  for (int ni = 0; ni < n; ++ni) {
    const float* m = mp + static_cast<int64_t>(ni) * plane;
    for (int ci = 0; ci < c; ++ci) {
      const float* src = xp + (static_cast<int64_t>(ni) * c + ci) * plane;
      float* dst = op + (static_cast<int64_t>(ni) * c + ci) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] * m[i];
    }
  }
  check_finite(out.values(), "spatial_scale");
  FlopCounter::add(x.numel());
  if (want_grad({&x, &map})) {
    auto xd = x.data();
    auto md = map.data();
    auto od = out.data();
    record("spatial_scale", out, [=]() {
      if (xd->requires_grad) xd->ensure_grad();
      if (md->requires_grad) md->ensure_grad();
      for (int ni = 0; ni < n; ++ni) {
        const float* m = md->values.data() + static_cast<int64_t>(ni) * plane;
        float* gm = md->requires_grad ? md->grad.data() + static_cast<int64_t>(ni) * plane : nullptr;
        for (int ci = 0; ci < c; ++ci) {
          const int64_t off = (static_cast<int64_t>(ni) * c + ci) * plane;
          const float* g = od->grad.data() + off;
          if (xd->requires_grad) {
            float* gx = xd->grad.data() + off;
            for (int64_t i = 0; i < plane; ++i) gx[i] += g[i] * m[i];
          }
          if (gm) {
            const float* src = xd->values.data() + off;
            for (int64_t i = 0; i < plane; ++i) gm[i] += g[i] * src[i];
          }
        }
      }
    });
  }
  return out;
}

Tensor channel_sum(const Tensor& x) {
  require(x.rank() == 4, "channel_sum: input must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor out = Tensor::zeros({n, 1, x.dim(2), x.dim(3)});
  const float* xp = x.values().data();
  float* op = out.mutable_values().data();
  for (int ni = 0; ni < n; ++ni) {
    float* dst = op + static_cast<int64_t>(ni) * plane;
    for (int ci = 0; ci < c; ++ci) {
      const float* src = xp + (static_cast<int64_t>(ni) * c + ci) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
  }
  check_finite(out.values(), "channel_sum");
  FlopCounter::add(x.numel());
  if (want_grad({&x})) {
    auto xd = x.data();
    auto od = out.data();
    record("channel_sum", out, [=]() {
      xd->ensure_grad();
      for (int ni = 0; ni < n; ++ni) {
        const float* g = od->grad.data() + static_cast<int64_t>(ni) * plane;
        for (int ci = 0; ci < c; ++ci) {
          float* gx = xd->grad.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
          for (int64_t i = 0; i < plane; ++i) gx[i] += g[i];
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), "reshape: element count mismatch: " +
                                               shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), std::vector<float>(x.values().begin(), x.values().end()));
  if (want_grad({&x})) {
    auto xd = x.data();
    auto od = out.data();
    record("reshape", out, [=]() {
      xd->ensure_grad();
      for (size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += od->grad[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  Tensor out = Tensor::from({1}, {static_cast<float>(acc)});
  check_finite(out.values(), "sum");
  FlopCounter::add(x.numel());
  if (want_grad({&x})) {
    auto xd = x.data();
    auto od = out.data();
    record("sum", out, [=]() {
      xd->ensure_grad();
      const float g = od->grad[0];
      for (auto& v : xd->grad) v += g;
    });
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require(logits.shape() == targets.shape(),
          "bce_with_logits: shape mismatch " + shape_str(logits.shape()) + " vs " +
              shape_str(targets.shape()));
  const int64_t m = logits.numel();
  require(m > 0, "bce_with_logits: empty input");
  const float* xp = logits.values().data();
  const float* yp = targets.values().data();
  double acc = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    const float x = xp[i];
    const float y = yp[i];
    // max(x,0) - x*y + log(1+exp(-|x|))
    acc += std::max(x, 0.0f) - x * y + std::log1p(std::exp(-std::fabs(x)));
  }
  Tensor out = Tensor::from({1}, {static_cast<float>(acc / static_cast<double>(m))});
  check_finite(out.values(), "bce_with_logits");
  FlopCounter::add(8 * m);
  if (want_grad({&logits})) {
    auto xd = logits.data();
    auto yd = targets.data();
    auto od = out.data();
    record("bce_with_logits", out, [=]() {
      xd->ensure_grad();
      const float g = od->grad[0] / static_cast<float>(m);
      for (int64_t i = 0; i < m; ++i) {
        const float x = xd->values[static_cast<size_t>(i)];
        float s;
        if (x >= 0.0f) {
          s = 1.0f / (1.0f + std::exp(-x));
        } else {
          const float e = std::exp(x);
          s = e / (1.0f + e);
        }
        xd->grad[static_cast<size_t>(i)] += g * (s - yd->values[static_cast<size_t>(i)]);
      }
    });
  }
  return out;
}

}  // namespace ilnet
