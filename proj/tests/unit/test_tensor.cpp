#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nrt/tensor.hpp"

using namespace nrt;

namespace {

Tensor random_tensor(const Shape& s, std::mt19937& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> d(lo, hi);
  Tensor t(s);
  for (float& v : t.data()) v = d(rng);
  return t;
}

// Direct cross-correlation over all six indices.
std::vector<double> naive_conv(const Tensor& in, const Tensor& k, const Tensor& b, int stride, int pad) {
  const long C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const long O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  const long OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  std::vector<double> out(O * OH * OW);
  for (long o = 0; o < O; ++o)
    for (long y = 0; y < OH; ++y)
      for (long x = 0; x < OW; ++x) {
        double acc = b[o];
        for (long c = 0; c < C; ++c)
          for (long i = 0; i < KH; ++i)
            for (long j = 0; j < KW; ++j) {
              const long iy = y * stride + i - pad, ix = x * stride + j - pad;
              if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
              acc += double(k[((o * C + c) * KH + i) * KW + j]) * in[(c * H + iy) * W + ix];
            }
        out[(o * OH + y) * OW + x] = acc;
      }
  return out;
}

}  // namespace

TEST(Tensor, ConstructionValidatesShape) {
  EXPECT_THROW(Tensor({2, 0, 3}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>(3)), DimensionError);
  Tensor t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_FLOAT_EQ(t[5], 1.5f);
}

TEST(Tensor, GradBufferMatchesShape) {
  Tensor t({2, 2});
  EXPECT_FALSE(t.has_grad());
  auto g = t.grad();
  EXPECT_EQ(g.size(), t.size());
  g[1] = 3.0f;
  t.zero_grad();
  EXPECT_EQ(t.grad()[1], 0.0f);
}

TEST(Conv2d, IdentityKernel) {
  Tensor in({1, 3, 3}, 1.0f);
  Tensor out = conv2d(in, Tensor({1, 1, 1, 1}, 1.0f), Tensor({1}, 0.0f));
  EXPECT_EQ(out.shape(), (Shape{1, 3, 3}));
  for (float v : out.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Conv2d, ZeroKernelGivesBias) {
  std::mt19937 rng(1);
  Tensor in = random_tensor({2, 6, 6}, rng);
  Tensor b({3}, std::vector<float>{0.5f, -1.0f, 2.0f});
  Tensor out = conv2d(in, Tensor({3, 2, 3, 3}, 0.0f), b);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(out[o * 16 + j], b[o]);
}

TEST(Conv2d, MatchesNaiveLoops) {
  std::mt19937 rng(7);
  for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 0}, {2, 2}}) {
    Tensor in = random_tensor({2, 5, 5}, rng);
    Tensor k = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor out = conv2d(in, k, b, stride, pad);
    const auto ref = naive_conv(in, k, b, stride, pad);
    ASSERT_EQ(out.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-6) << "stride " << stride;
  }
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(conv2d(Tensor({3, 5, 5}), Tensor({1, 2, 3, 3}), Tensor({1})), DimensionError);
  EXPECT_THROW(conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor({1})), DimensionError);
}

TEST(Dense, IdentityAndBias) {
  Tensor x({3}, std::vector<float>{1, -2, 3});
  Tensor eye({3, 3}, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(dense(x, eye, Tensor({3})), x);
  Tensor b({2}, std::vector<float>{4, 5});
  EXPECT_EQ(dense(x, Tensor({2, 3}), b), b);
}

TEST(Dense, MatchesMatVec) {
  std::mt19937 rng(3);
  Tensor w = random_tensor({4, 3}, rng), x = random_tensor({3}, rng), b = random_tensor({4}, rng);
  Tensor y = dense(x, w, b);
  for (std::size_t i = 0; i < 4; ++i) {
    double acc = b[i];
    for (std::size_t j = 0; j < 3; ++j) acc += double(w[i * 3 + j]) * x[j];
    EXPECT_NEAR(y[i], acc, 1e-6);
  }
  EXPECT_THROW(dense(Tensor({4}), w, b), DimensionError);
}

TEST(Relu, Elementwise) {
  Tensor y = relu(Tensor({3}, std::vector<float>{-1, 0, 2}));
  EXPECT_EQ(y.values(), (std::vector<float>{0, 0, 2}));
  Tensor pos({2}, std::vector<float>{0.5f, 3});
  EXPECT_EQ(relu(pos), pos);
}

TEST(MaxPool, SmallAndConstant) {
  Tensor y = maxpool2d(Tensor({1, 2, 2}, std::vector<float>{1, 2, 3, 4}), 2, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 4.0f);
  Tensor c = maxpool2d(Tensor({2, 4, 4}, 0.25f), 2, 2);
  for (float v : c.data()) EXPECT_EQ(v, 0.25f);
}

TEST(MaxPool, MatchesNaiveWindows) {
  std::mt19937 rng(11);
  Tensor in = random_tensor({2, 6, 6}, rng);
  Tensor y = maxpool2d(in, 2, 2);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        float m = -1e30f;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) m = std::max(m, in.at(c, 2 * i + a, 2 * j + b));
        EXPECT_EQ(y.at(c, i, j), m);
      }
}

TEST(Softmax, UniformAndStable) {
  const auto p = softmax(std::vector<float>{0, 0, 0, 0});
  for (double v : p) EXPECT_NEAR(v, 0.25, 1e-12);
  const auto q = softmax(std::vector<float>{1000, 0});
  EXPECT_NEAR(q[0], 1.0, 1e-9);
  EXPECT_NEAR(q[1], 0.0, 1e-9);
  for (double v : q) EXPECT_TRUE(std::isfinite(v));
}

TEST(Softmax, MatchesLongDoubleOracle) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> d(-20, 20);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<float> z(10);
    for (float& v : z) v = d(rng);
    long double m = *std::max_element(z.begin(), z.end()), s = 0;
    for (float v : z) s += std::exp(static_cast<long double>(v) - m);
    const auto p = softmax(z);
    double total = 0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      EXPECT_NEAR(p[k], static_cast<double>(std::exp(z[k] - m) / s), 1e-9);
      total += p[k];
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937 rng(9);
  std::uniform_real_distribution<float> d(-5, 5);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<float> z(10), zs(10);
    const float c = d(rng) * 10;
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = d(rng);
      zs[i] = z[i] + c;
    }
    const auto p = softmax(z), ps = softmax(zs);
    // The shifted logits are rounded to float, so compare at float resolution of c.
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(p[i], ps[i], 1e-5);
  }
  const auto p = softmax(std::vector<float>{1, 2, 3}), q = softmax(std::vector<float>{101, 102, 103});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[i], q[i], 1e-9);
}

TEST(CrossEntropy, KnownValuesAndOracle) {
  EXPECT_NEAR(cross_entropy_loss(std::vector<float>(10, 0.0f), 3), std::log(10.0), 1e-12);
  EXPECT_NEAR(cross_entropy_loss(std::vector<float>{80, 0, 0}, 0), 0.0, 1e-12);
  EXPECT_THROW(cross_entropy_loss(std::vector<float>{1, 2}, 2), IndexError);
  std::mt19937 rng(2);
  std::uniform_real_distribution<float> d(-3, 3);
  std::vector<float> z(10);
  for (float& v : z) v = d(rng);
  const auto p = softmax(z);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(cross_entropy_loss(z, k), -std::log(p[k]), 1e-9);
}
