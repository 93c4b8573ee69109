#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ilnet/flops.hpp"
#include "ilnet/ops.hpp"
#include "test_util.hpp"

using namespace ilnet;
using testutil::directional_check;
using testutil::random_tensor;

TEST_CASE("conv2d identity-scaling kernel") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w = Tensor::from({1, 1, 1, 1}, {2.0f});
  Tensor y = conv2d(x, w, std::nullopt, 1, 0, 1);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  for (float v : y.values()) CHECK(v == doctest::Approx(2.0f));
}

TEST_CASE("conv2d averaging kernel equals local means (oracle)") {
  std::vector<float> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<size_t>(i)] = static_cast<float>(i);
  Tensor x = Tensor::from({1, 1, 4, 4}, std::vector<float>(ramp));
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f / 9.0f);
  Tensor y = conv2d(x, w, std::nullopt, 1, 1, 1);
  auto expect = testutil::conv2d_oracle(ramp, 1, 1, 4, 4,
                                        std::vector<float>(9, 1.0f / 9.0f), 1, 3, nullptr, 1, 1, 1);
  for (size_t i = 0; i < expect.size(); ++i) {
    CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-5));
  }
  // interior outputs are plain 3x3 window means
  const float center = y.values()[5];  // (1,1)
  float mean = 0.0f;
  for (int dy = 0; dy <= 2; ++dy)
    for (int dx = 0; dx <= 2; ++dx) mean += ramp[static_cast<size_t>(dy * 4 + dx)];
  CHECK(center == doctest::Approx(mean / 9.0f));
}

TEST_CASE("conv2d matches oracle on random strided dilated cases") {
  RandomSource rng(7);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = rng.range_int(1, 2), cin = rng.range_int(1, 3), cout = rng.range_int(1, 4);
    const int h = rng.range_int(5, 9), w = rng.range_int(5, 9);
    const int k = 2 * rng.range_int(0, 1) + 1;
    const int stride = rng.range_int(1, 2), pad = rng.range_int(0, 2), dil = rng.range_int(1, 2);
    if ((h + 2 * pad - dil * (k - 1) - 1) / stride + 1 < 1) continue;
    Tensor x = random_tensor({n, cin, h, w}, rng);
    Tensor wt = random_tensor({cout, cin, k, k}, rng);
    Tensor bias = random_tensor({cout}, rng);
    Tensor y = conv2d(x, wt, bias, stride, pad, dil);
    std::vector<float> bv(bias.values().begin(), bias.values().end());
    auto expect = testutil::conv2d_oracle(
        std::vector<float>(x.values().begin(), x.values().end()), n, cin, h, w,
        std::vector<float>(wt.values().begin(), wt.values().end()), cout, k, &bv, stride, pad, dil);
    REQUIRE(static_cast<int64_t>(expect.size()) == y.numel());
    for (size_t i = 0; i < expect.size(); ++i) {
      CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-4));
    }
  }
}

TEST_CASE("conv2d weight gradient matches per-coordinate finite differences") {
  RandomSource rng(3);
  Tensor x = random_tensor({1, 2, 5, 5}, rng);
  Tensor w = random_tensor({2, 2, 3, 3}, rng, -0.5f, 0.5f, true);

  GradTape::get().clear();
  w.zero_grad();
  backward(sum(conv2d(x, w, std::nullopt, 1, 1, 1)));
  std::vector<float> analytic(w.grad().begin(), w.grad().end());

  // finite differences evaluated through an independent double-precision
  // summation path
  const std::vector<float> xv(x.values().begin(), x.values().end());
  auto loss_at = [&](const std::vector<float>& wv) {
    auto out = testutil::conv2d_oracle(xv, 1, 2, 5, 5, wv, 2, 3, nullptr, 1, 1, 1);
    double acc = 0.0;
    for (float v : out) acc += v;
    return acc;
  };
  const double h = 1e-3;
  std::vector<float> wv(w.values().begin(), w.values().end());
  for (size_t i = 0; i < wv.size(); ++i) {
    const float keep = wv[i];
    wv[i] = keep + static_cast<float>(h);
    const double up = loss_at(wv);
    wv[i] = keep - static_cast<float>(h);
    const double down = loss_at(wv);
    wv[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double rel = std::fabs(fd - analytic[i]) /
                       std::max({std::fabs(fd), std::fabs(static_cast<double>(analytic[i])), 1e-4});
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("conv2d rejects bad geometry") {
  Tensor x = Tensor::zeros({1, 1, 3, 3});
  Tensor w = Tensor::zeros({1, 2, 1, 1});
  CHECK_THROWS_AS(conv2d(x, w, std::nullopt, 1, 0, 1), TensorError);
  Tensor w2 = Tensor::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(conv2d(x, w2, std::nullopt, 1, 0, 1), TensorError);  // empty output
}

TEST_CASE("conv1d identity, summation and scaling kernels") {
  Tensor x = Tensor::from({1, 1, 3}, {1, 2, 3});
  Tensor k010 = Tensor::from({1, 1, 3}, {0, 1, 0});
  Tensor y = conv1d(x, k010, 1);
  CHECK(y.values()[0] == doctest::Approx(1));
  CHECK(y.values()[1] == doctest::Approx(2));
  CHECK(y.values()[2] == doctest::Approx(3));

  Tensor ones = Tensor::from({1, 1, 4}, {1, 1, 1, 1});
  Tensor k111 = Tensor::from({1, 1, 3}, {1, 1, 1});
  Tensor s = conv1d(ones, k111, 1);
  const std::vector<float> expect{2, 3, 3, 2};
  for (size_t i = 0; i < 4; ++i) CHECK(s.values()[i] == doctest::Approx(expect[i]));

  Tensor khalf = Tensor::from({1, 1, 1}, {0.5f});
  Tensor hlf = conv1d(x, khalf, 0);
  for (size_t i = 0; i < 3; ++i) CHECK(hlf.values()[i] == doctest::Approx(x.values()[i] * 0.5f));
}

TEST_CASE("conv1d rejects even kernels") {
  Tensor x = Tensor::zeros({1, 1, 4});
  Tensor k = Tensor::zeros({1, 1, 2});
  CHECK_THROWS_AS(conv1d(x, k, 0), TensorError);
}

TEST_CASE("batch_norm statistics") {
  Tensor gamma = Tensor::full({1}, 1.0f);
  Tensor beta = Tensor::zeros({1});
  Tensor rm = Tensor::zeros({1});
  Tensor rv = Tensor::full({1}, 1.0f);

  SUBCASE("constant channel in training mode normalizes to zero") {
    Tensor x = Tensor::full({2, 1, 3, 3}, 5.0f);
    Tensor y = batch_norm(x, gamma, beta, rm, rv, true, false);
    for (float v : y.values()) CHECK(v == doctest::Approx(0.0f));
  }
  SUBCASE("two-point batch gives +-1/sqrt(1+eps)") {
    Tensor x = Tensor::from({2, 1, 1, 1}, {-1.0f, 1.0f});
    Tensor y = batch_norm(x, gamma, beta, rm, rv, true, false);
    const float expect = 1.0f / std::sqrt(1.0f + 1e-5f);
    CHECK(y.values()[0] == doctest::Approx(-expect));
    CHECK(y.values()[1] == doctest::Approx(expect));
  }
  SUBCASE("eval mode is a per-channel affine map") {
    Tensor g2 = Tensor::full({1}, 2.0f);
    Tensor b3 = Tensor::full({1}, 3.0f);
    Tensor x = Tensor::from({1, 1, 2, 2}, {0.5f, -1.0f, 2.0f, 0.0f});
    Tensor y = batch_norm(x, g2, b3, rm, rv, false, false);
    for (size_t i = 0; i < 4; ++i) {
      CHECK(y.values()[i] ==
            doctest::Approx(2.0f * x.values()[i] / std::sqrt(1.0f + 1e-5f) + 3.0f));
    }
  }
  SUBCASE("running stats update with momentum 0.9") {
    Tensor x = Tensor::from({2, 1, 1, 1}, {0.0f, 2.0f});  // mean 1, var 1
    batch_norm(x, gamma, beta, rm, rv, true, true);
    CHECK(rm.values()[0] == doctest::Approx(0.1f));          // 0.9*0 + 0.1*1
    CHECK(rv.values()[0] == doctest::Approx(0.9f + 0.1f));   // 0.9*1 + 0.1*1
  }
  SUBCASE("channel mismatch is rejected") {
    Tensor x = Tensor::zeros({1, 2, 2, 2});
    CHECK_THROWS_AS(batch_norm(x, gamma, beta, rm, rv, true, false), TensorError);
  }
}

TEST_CASE("layer_norm closed forms and finite differences") {
  SUBCASE("constant input normalizes to zero") {
    Tensor g = Tensor::full({1}, 1.0f), b = Tensor::zeros({1});
    Tensor x = Tensor::full({2, 1, 2, 2}, 3.0f);
    Tensor y = layer_norm(x, 3, g, b);
    for (float v : y.values()) CHECK(v == doctest::Approx(0.0f));
  }
  SUBCASE("two-element vector") {
    Tensor g = Tensor::full({2}, 1.0f), b = Tensor::zeros({2});
    Tensor x = Tensor::from({1, 2}, {0.0f, 2.0f});
    Tensor y = layer_norm(x, 1, g, b);
    const float e = 1.0f / std::sqrt(1.0f + 1e-5f);
    CHECK(y.values()[0] == doctest::Approx(-e));
    CHECK(y.values()[1] == doctest::Approx(e));
  }
  SUBCASE("gradient matches finite differences") {
    RandomSource rng(11);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor g = random_tensor({3}, rng, 0.5f, 1.5f);
    Tensor b = random_tensor({3}, rng);
    auto fn = [&]() {
      RandomSource wr(5);
      Tensor wfix = random_tensor({2, 3, 4, 4}, wr);
      return sum(mul(layer_norm(x, 3, g, b), wfix));
    };
    CHECK(directional_check(fn, {x, g, b}, rng) < 1e-3);
  }
}

TEST_CASE("activation closed forms") {
  Tensor u = Tensor::full({1, 4}, 0.7f);
  Tensor sm = softmax(u, 1);
  for (float v : sm.values()) CHECK(v == doctest::Approx(0.25f));

  CHECK(sigmoid(Tensor::zeros({1})).values()[0] == doctest::Approx(0.5f));

  Tensor logs = Tensor::from({1, 3}, {std::log(1.0f), std::log(2.0f), std::log(3.0f)});
  Tensor sm3 = softmax(logs, 1);
  CHECK(sm3.values()[0] == doctest::Approx(1.0f / 6.0f));
  CHECK(sm3.values()[1] == doctest::Approx(2.0f / 6.0f));
  CHECK(sm3.values()[2] == doctest::Approx(3.0f / 6.0f));

  Tensor r = relu(Tensor::from({3}, {-1.0f, 0.0f, 2.0f}));
  CHECK(r.values()[0] == 0.0f);
  CHECK(r.values()[1] == 0.0f);
  CHECK(r.values()[2] == 2.0f);
}

TEST_CASE("softmax sums to one and sigmoid stays strictly inside (0,1)") {
  RandomSource rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({3, 7}, rng, -20.0f, 20.0f);
    Tensor y = softmax(x, 1);
    for (int row = 0; row < 3; ++row) {
      double s = 0.0;
      for (int j = 0; j < 7; ++j) s += y.values()[static_cast<size_t>(row * 7 + j)];
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
    Tensor sg = sigmoid(x);
    for (float v : sg.values()) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }
}

TEST_CASE("maxpool2 window semantics and ceil mode") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = maxpool2(x);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.values()[0] == 4.0f);

  // 3x3 ramp, ceil mode covers partial windows
  std::vector<float> ramp(9);
  for (int i = 0; i < 9; ++i) ramp[static_cast<size_t>(i)] = static_cast<float>(i);
  Tensor x3 = Tensor::from({1, 1, 3, 3}, std::move(ramp));
  Tensor y3 = maxpool2(x3);
  REQUIRE(y3.shape() == Shape{1, 1, 2, 2});
  // windows: {0,1,3,4} {2,5} {6,7} {8}
  CHECK(y3.values()[0] == 4.0f);
  CHECK(y3.values()[1] == 5.0f);
  CHECK(y3.values()[2] == 7.0f);
  CHECK(y3.values()[3] == 8.0f);
}

TEST_CASE("maxpool2 gradient routes only to window maxima") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  GradTape::get().clear();
  Tensor loss = sum(maxpool2(x));
  backward(loss);
  auto g = x.grad();
  CHECK(g[0] == 0.0f);
  CHECK(g[1] == 0.0f);
  CHECK(g[2] == 0.0f);
  CHECK(g[3] == 1.0f);
}

TEST_CASE("maxpool2 tie-breaking picks first occurrence in row-major order") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  GradTape::get().clear();
  backward(sum(maxpool2(x)));
  auto g = x.grad();
  CHECK(g[0] == 1.0f);
  CHECK(g[1] == 0.0f);
  CHECK(g[2] == 0.0f);
  CHECK(g[3] == 0.0f);
}

TEST_CASE("upsample_bilinear half-pixel interpolation") {
  SUBCASE("constants stay constant") {
    Tensor x = Tensor::full({1, 2, 3, 3}, 0.4f);
    Tensor y = upsample_bilinear(x, 7, 5);
    for (float v : y.values()) CHECK(v == doctest::Approx(0.4f));
  }
  SUBCASE("1x1 broadcasts its value") {
    Tensor x = Tensor::from({1, 1, 1, 1}, {2.5f});
    Tensor y = upsample_bilinear(x, 4, 6);
    for (float v : y.values()) CHECK(v == doctest::Approx(2.5f));
  }
  SUBCASE("2x2 to 2x4 with half-pixel centers") {
    Tensor x = Tensor::from({1, 1, 2, 2}, {0, 1, 0, 1});
    Tensor y = upsample_bilinear(x, 2, 4);
    const std::vector<float> row{0.0f, 0.25f, 0.75f, 1.0f};
    for (int r = 0; r < 2; ++r) {
      for (int cidx = 0; cidx < 4; ++cidx) {
        CHECK(y.values()[static_cast<size_t>(r * 4 + cidx)] == doctest::Approx(row[static_cast<size_t>(cidx)]));
      }
    }
  }
  SUBCASE("zero target dims rejected") {
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    CHECK_THROWS_AS(upsample_bilinear(x, 0, 4), TensorError);
  }
}

TEST_CASE("concat, pooling and scaling semantics") {
  Tensor a = Tensor::full({1, 2, 2, 2}, 1.0f);
  Tensor b = Tensor::full({1, 3, 2, 2}, 2.0f);
  Tensor c = concat({a, b}, 1);
  REQUIRE(c.shape() == Shape{1, 5, 2, 2});
  CHECK(c.values()[0] == 1.0f);
  CHECK(c.values()[static_cast<size_t>(2 * 4)] == 2.0f);

  Tensor g = global_avg_pool(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(g.values()[0] == doctest::Approx(2.5f));

  Tensor x = Tensor::from({1, 2, 1, 2}, {1, 2, 3, 4});
  Tensor ones_map = Tensor::full({1, 1, 1, 2}, 1.0f);
  Tensor same = spatial_scale(x, ones_map);
  for (size_t i = 0; i < 4; ++i) CHECK(same.values()[i] == x.values()[i]);

  Tensor wts = Tensor::from({1, 2, 1, 1}, {2.0f, 0.5f});
  Tensor cs = channel_scale(x, wts);
  CHECK(cs.values()[0] == 2.0f);
  CHECK(cs.values()[1] == 4.0f);
  CHECK(cs.values()[2] == 1.5f);
  CHECK(cs.values()[3] == 2.0f);

  Tensor csum = channel_sum(x);
  REQUIRE(csum.shape() == Shape{1, 1, 1, 2});
  CHECK(csum.values()[0] == 4.0f);
  CHECK(csum.values()[1] == 6.0f);

  CHECK_THROWS_AS(concat({a, Tensor::zeros({1, 2, 3, 3})}, 1), TensorError);
}

TEST_CASE("conv2d with identity kernel is the identity map") {
  RandomSource rng(5);
  Tensor x = random_tensor({2, 3, 6, 6}, rng);
  Tensor w = Tensor::zeros({3, 3, 1, 1});
  {
    auto wv = w.mutable_values();
    for (int i = 0; i < 3; ++i) wv[static_cast<size_t>(i * 3 + i)] = 1.0f;
  }
  Tensor bias = Tensor::zeros({3});
  Tensor y = conv2d(x, w, bias, 1, 0, 1);
  for (size_t i = 0; i < static_cast<size_t>(x.numel()); ++i) {
    CHECK(std::fabs(y.values()[i] - x.values()[i]) <= 1e-7f * std::fabs(x.values()[i]));
  }
}

TEST_CASE("every differentiable op passes a directional finite-difference check") {
  RandomSource rng(41);
  using testutil::directional_check_weighted;

  SUBCASE("conv2d") {
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, -0.4f, 0.4f);
    Tensor bias = random_tensor({4}, rng);
    auto fn = [&]() { return conv2d(x, w, bias, 1, 1, 1); };
    CHECK(directional_check_weighted(fn, {x, w, bias}, rng) < 1e-3);
  }
  SUBCASE("conv2d strided dilated") {
    Tensor x = random_tensor({1, 2, 9, 9}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.4f, 0.4f);
    auto fn = [&]() { return conv2d(x, w, std::nullopt, 2, 2, 2); };
    CHECK(directional_check_weighted(fn, {x, w}, rng) < 1e-3);
  }
  SUBCASE("conv1d") {
    Tensor x = random_tensor({2, 1, 12}, rng);
    Tensor k = random_tensor({1, 1, 3}, rng);
    auto fn = [&]() { return conv1d(x, k, 1); };
    CHECK(directional_check_weighted(fn, {x, k}, rng) < 1e-3);
  }
  SUBCASE("batch_norm training mode") {
    Tensor x = random_tensor({3, 2, 4, 4}, rng);
    Tensor g = random_tensor({2}, rng, 0.5f, 1.5f);
    Tensor b = random_tensor({2}, rng);
    auto fn = [&]() {
      Tensor rm = Tensor::zeros({2});
      Tensor rv = Tensor::full({2}, 1.0f);
      return batch_norm(x, g, b, rm, rv, true, false);
    };
    CHECK(directional_check_weighted(fn, {x, g, b}, rng) < 1e-3);
  }
  SUBCASE("batch_norm eval mode") {
    Tensor x = random_tensor({2, 2, 3, 3}, rng);
    Tensor g = random_tensor({2}, rng, 0.5f, 1.5f);
    Tensor b = random_tensor({2}, rng);
    auto fn = [&]() {
      Tensor rm = Tensor::from({2}, {0.1f, -0.2f});
      Tensor rv = Tensor::from({2}, {0.8f, 1.3f});
      return batch_norm(x, g, b, rm, rv, false, false);
    };
    CHECK(directional_check_weighted(fn, {x, g, b}, rng) < 1e-3);
  }
  SUBCASE("softmax") {
    Tensor x = random_tensor({3, 5}, rng, -2.0f, 2.0f);
    auto fn = [&]() { return softmax(x, 1); };
    CHECK(directional_check_weighted(fn, {x}, rng) < 1e-3);
  }
  SUBCASE("sigmoid") {
    Tensor x = random_tensor({4, 4}, rng, -3.0f, 3.0f);
    auto fn = [&]() { return sigmoid(x); };
    CHECK(directional_check_weighted(fn, {x}, rng, 1e-3, 1e-4, true) < 1e-3);
  }
  SUBCASE("relu") {
    Tensor x = random_tensor({4, 6}, rng, -1.0f, 1.0f);
    auto fn = [&]() { return relu(x); };
    CHECK(directional_check_weighted(fn, {x}, rng, 1e-3, 1e-4, true) < 1e-3);
  }
  SUBCASE("upsample_bilinear") {
    Tensor x = random_tensor({1, 2, 3, 3}, rng);
    auto fn = [&]() { return upsample_bilinear(x, 7, 5); };
    CHECK(directional_check_weighted(fn, {x}, rng) < 1e-3);
  }
  SUBCASE("global_avg_pool + channel ops") {
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor y = random_tensor({2, 3, 4, 4}, rng);
    auto fn = [&]() { return channel_sum(channel_scale(y, global_avg_pool(x))); };
    CHECK(directional_check_weighted(fn, {x, y}, rng) < 1e-3);
  }
  SUBCASE("spatial_scale, add, mul, reshape, concat") {
    Tensor x = random_tensor({2, 3, 3, 3}, rng);
    Tensor m = random_tensor({2, 1, 3, 3}, rng);
    Tensor z = random_tensor({2, 3, 3, 3}, rng);
    auto fn = [&]() {
      Tensor s = spatial_scale(x, m);
      Tensor combined = concat({add(s, z), mul(s, z)}, 1);
      return reshape(combined, {2, 6, 3, 3});
    };
    CHECK(directional_check_weighted(fn, {x, m, z}, rng) < 1e-3);
  }
  SUBCASE("maxpool2") {
    Tensor x = random_tensor({2, 2, 5, 5}, rng);
    auto fn = [&]() { return maxpool2(x); };
    CHECK(directional_check_weighted(fn, {x}, rng) < 1e-3);
  }
  SUBCASE("bce_with_logits") {
    Tensor x = random_tensor({2, 1, 4, 4}, rng, -2.0f, 2.0f);
    RandomSource tr(55);
    std::vector<float> tv(32);
    for (auto& v : tv) v = tr.uniform() < 0.5f ? 0.0f : 1.0f;
    Tensor t = Tensor::from({2, 1, 4, 4}, std::move(tv));
    auto fn = [&]() { return bce_with_logits(x, t); };
    CHECK(testutil::directional_check(fn, {x}, rng) < 1e-3);
  }
}

TEST_CASE("non-finite forward values raise an error") {
  Tensor x = Tensor::from({2}, {1.0f, 2.0f});
  Tensor big = Tensor::full({2}, 3.0e38f);
  CHECK_THROWS_AS(add(big, big), TensorError);
  CHECK(add(x, x).values()[1] == 4.0f);
}

TEST_CASE("flop accounting follows the multiply-accumulate convention") {
  FlopCounter::begin();
  Tensor x = Tensor::zeros({1, 3, 32, 32});
  Tensor w = Tensor::zeros({8, 3, 3, 3});
  conv2d(x, w, std::nullopt, 1, 1, 1);
  const int64_t flops = FlopCounter::end();
  CHECK(flops == 2LL * 3 * 3 * 3 * 8 * 32 * 32);

  // doubling both spatial dims quadruples the count
  FlopCounter::begin();
  conv2d(Tensor::zeros({1, 3, 64, 64}), w, std::nullopt, 1, 1, 1);
  CHECK(FlopCounter::end() == 4 * flops);
}
