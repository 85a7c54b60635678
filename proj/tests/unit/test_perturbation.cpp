#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "nrt/perturbation.hpp"

using namespace nrt;

namespace {

const Shape kShape{1, 28, 28};

Model linear_model(std::uint64_t seed) {
  Model m(kShape, {LayerSpec::flatten(), LayerSpec::dense(10)}, 10);
  init_fan_in_uniform(m, seed);
  return m;
}

Tensor image(std::uint64_t seed) {
  return synthetic_dataset(10, 1, kShape, seed, Split::Test).images[seed % 10];
}

double sample_std(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size() - 1));
}

}  // namespace

TEST(Gradient, LinearModelGradientIsWeightRow) {
  Model m = linear_model(1);
  const Tensor& w = m.params()[0].tensor;
  const auto all = all_logit_gradients(m, image(2));
  ASSERT_EQ(all.size(), 10u);
  for (std::size_t k = 0; k < 10; ++k) {
    const LogitGradient g = logit_input_gradient(m, image(2), k);
    EXPECT_EQ(g.g, all[k]);
    EXPECT_EQ(g.g.shape(), kShape);
    for (std::size_t i = 0; i < 784; ++i) EXPECT_FLOAT_EQ(g.g[i], w[k * 784 + i]);
  }
  EXPECT_THROW(logit_input_gradient(m, image(2), 10), IndexError);
}

TEST(Gradient, CnnSharedPassMatchesPerClass) {
  Model m = build_small_cnn(kShape, 10, 3);
  const auto all = all_logit_gradients(m, image(1));
  for (std::size_t k : {0u, 4u, 9u}) EXPECT_EQ(logit_input_gradient(m, image(1), k).g, all[k]);
}

TEST(DeltaLogits, ZeroSigmaGivesZeroChange) {
  Model m = build_small_cnn(kShape, 10, 3);
  for (double d : delta_logit_samples(m, image(1), 2, 0.0, 10, 1)) EXPECT_EQ(d, 0.0);
  EXPECT_THROW(delta_logit_samples(m, image(1), 2, 0.1, 1, 1), ValidationError);
}

TEST(DeltaLogits, SharedDrawsAndThreadInvariance) {
  Model m = build_small_cnn(kShape, 10, 3);
  const auto all1 = delta_logit_samples_all(m, image(1), 0.1, 40, 9, 1);
  const auto all3 = delta_logit_samples_all(m, image(1), 0.1, 40, 9, 3);
  EXPECT_EQ(all1, all3);
  EXPECT_EQ(delta_logit_samples(m, image(1), 6, 0.1, 40, 9), all1[6]);
}

TEST(DeltaLogits, PerturbMatchesSampler) {
  const Tensor x = image(3);
  const Tensor y = gaussian_perturb(x, 0.0, 1, 2);
  EXPECT_EQ(y, x);
  EXPECT_EQ(gaussian_perturb(x, 0.3, 1, 2), gaussian_perturb(x, 0.3, 1, 2));
  EXPECT_NE(gaussian_perturb(x, 0.3, 1, 2), gaussian_perturb(x, 0.3, 1, 3));
}

TEST(VarianceLaw, ExactForLinearModel) {
  // Z_k(x + s*eta) - Z_k(x) = s * w_k . eta, so its std is s * ||w_k||.
  Model m = linear_model(4);
  const Tensor x = image(4);
  for (double s : {0.01, 0.5, 3.0}) {
    const auto d = delta_logit_samples(m, x, 3, s, 4000, 17);
    const double pred = predicted_std(logit_input_gradient(m, x, 3), s);
    EXPECT_NEAR(sample_std(d) / pred, 1.0, 0.05) << "sigma " << s;
  }
}

TEST(VarianceLaw, PredictedStdIsHomogeneous) {
  Model m = build_small_cnn(kShape, 10, 5);
  const LogitGradient g = logit_input_gradient(m, image(5), 1);
  double norm = 0;
  for (float v : g.g.data()) norm += double(v) * v;
  EXPECT_NEAR(predicted_std(g, 1.0), std::sqrt(norm), 1e-9);
  EXPECT_NEAR(predicted_std(g, 0.25), 0.25 * predicted_std(g, 1.0), 1e-12);
  EXPECT_EQ(predicted_std(g, 0.0), 0.0);
}

TEST(VarianceLaw, ReportShapesAndCsv) {
  Model m = linear_model(6);
  const auto reports = validate_variance_law_all(m, image(6), {0.01, 0.1}, 300, 2, 6);
  ASSERT_EQ(reports.size(), 10u);
  const auto single = validate_variance_law(m, image(6), 4, {0.01, 0.1}, 300, 2, 6);
  ASSERT_EQ(single.rows.size(), 2u);
  EXPECT_DOUBLE_EQ(single.rows[1].empirical_std, reports[4].rows[1].empirical_std);
  for (const auto& r : single.rows) {
    EXPECT_LE(r.ci_low, r.empirical_std);
    EXPECT_GE(r.ci_high, r.empirical_std);
    EXPECT_NEAR(r.ratio(), 1.0, 0.15);
  }
  const std::string csv = single.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sigma,empirical_std,predicted_std,ci_low,ci_high");
}

TEST(Bootstrap, IntervalsOnNormalSamples) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(1.0, 2.0);
  std::vector<double> v(2000);
  for (double& x : v) x = n(rng);
  const auto b = bootstrap(v, 1000, 4);
  EXPECT_LT(b.std_low, sample_std(v));
  EXPECT_GT(b.std_high, sample_std(v));
  EXPECT_LT(b.std_low, 2.0);
  EXPECT_GT(b.std_high, 2.0);
  EXPECT_NEAR(b.mean_se, 2.0 / std::sqrt(2000.0), 0.01);
}

TEST(GradientMap, ZeroSigmaEqualsExplicitMap) {
  Model m = linear_model(7);
  const Tensor& w = m.params()[0].tensor;
  const GradientMap map = implicit_gradient_map(m, image(7), 0.0, 5, 1);
  ASSERT_EQ(map.values.size(), 784u);
  for (std::size_t i = 0; i < 784; ++i) {
    double best = -1e30;
    for (std::size_t k = 0; k < 10; ++k) best = std::max(best, double(w[k * 784 + i]));
    EXPECT_NEAR(map.values[i], best, 1e-6);
  }
  const GradientMap absmap = implicit_gradient_map(m, image(7), 0.0, 1, 1, MapReduction::Absolute);
  for (std::size_t i = 0; i < 784; ++i) EXPECT_GE(absmap.values[i], std::abs(map.values[i]) - 1e-9);
}

TEST(GradientMap, AveragingAndThreads) {
  Model m = build_small_cnn(kShape, 10, 8);
  const GradientMap a = implicit_gradient_map(m, image(8), 0.5, 6, 3, MapReduction::Signed, 1);
  const GradientMap b = implicit_gradient_map(m, image(8), 0.5, 6, 3, MapReduction::Signed, 3);
  EXPECT_EQ(a.values, b.values);
  const GradientMap avg = average_maps({a, a});
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(avg.values[i], a.values[i], 1e-12);
  EXPECT_EQ(a.sidecar()["n_avg"], 6);
}

TEST(Localization, ExtremesAndChanceLevel) {
  TriggerSpec t = make_patch_trigger(3, 1.0f, 0, kShape);
  const auto support = t.plane_support();
  GradientMap map;
  map.height = map.width = 28;
  map.values.assign(784, 0.0);
  for (std::size_t i = 0; i < 784; ++i) map.values[i] = support[i] ? 1.0 : 0.0;
  EXPECT_DOUBLE_EQ(trigger_localization_score(map, t), 1.0);
  for (double& v : map.values) v = -v;
  EXPECT_DOUBLE_EQ(trigger_localization_score(map, t), 0.0);

  // A flat map ranks by the seeded tie shuffle: on average 40/784 of the patch.
  map.values.assign(784, 0.5);
  double mean = 0;
  for (std::uint64_t s = 0; s < 400; ++s) mean += trigger_localization_score(map, t, s);
  EXPECT_NEAR(mean / 400, 40.0 / 784.0, 0.015);
}
