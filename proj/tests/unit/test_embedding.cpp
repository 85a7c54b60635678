#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "nrt/embedding.hpp"
#include "nrt/rng.hpp"

using namespace nrt;

namespace {

const Shape kShape{1, 28, 28};

std::vector<std::vector<double>> gaussian_points(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0, 1);
  std::vector<std::vector<double>> pts(n, std::vector<double>(k));
  for (auto& p : pts)
    for (double& v : p) v = d(rng);
  return pts;
}

double dot(const std::vector<double>& a, const Eigen::VectorXd& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b(static_cast<Eigen::Index>(i));
  return s;
}

}  // namespace

TEST(Jacobi, MatchesEigenSolver) {
  const std::size_t n = 10;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0, 1);
  Eigen::MatrixXd b(n, n);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = d(rng);
  Eigen::MatrixXd a = b * b.transpose();
  std::vector<double> flat(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) flat[i * n + j] = a(Eigen::Index(i), Eigen::Index(j));

  const SymmetricEigen mine = symmetric_eigen(flat, n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(a);  // ascending order
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(n - 1 - i);
    EXPECT_NEAR(mine.values[i], ref.eigenvalues()(r), 1e-9 * ref.eigenvalues()(Eigen::Index(n - 1)));
    if (i < 2) {
      const Eigen::VectorXd v = ref.eigenvectors().col(r);
      EXPECT_GE(std::abs(dot(mine.vectors[i], v)), 0.999);
    }
  }
}

TEST(Pca, PlanarPointsAreFullyExplained) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0, 1);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 200; ++i) {
    const double s = 3 * d(rng), t = d(rng);
    std::vector<double> p(10, 1.0);
    p[0] += s;
    p[3] += t;
    p[7] -= t;
    pts.push_back(p);
  }
  const PcaBasis b = fit_pca(pts);
  EXPECT_NEAR(b.explained[0] + b.explained[1], 1.0, 1e-9);
  EXPECT_GT(b.explained[0], b.explained[1]);
  EXPECT_GT(std::abs(b.components[0][0]), 0.99);
  // Sign convention: largest-magnitude entry is positive.
  for (const auto& c : b.components) {
    const auto it = std::max_element(c.begin(), c.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });
    EXPECT_GT(*it, 0.0);
  }
  const auto p = b.project(b.mean);
  EXPECT_NEAR(p[0], 0.0, 1e-12);
  EXPECT_NEAR(p[1], 0.0, 1e-12);
}

TEST(Pca, IsotropicCloudSplitsVarianceEvenly) {
  const std::size_t K = 10;
  const PcaBasis b = fit_pca(gaussian_points(20000, K, 3));
  EXPECT_NEAR(b.explained[0] + b.explained[1], 2.0 / K, 0.03);
}

TEST(Pca, DegenerateInputs) {
  EXPECT_THROW(fit_pca(gaussian_points(2, 10, 1)), ValidationError);
  EXPECT_THROW(fit_pca(std::vector<std::vector<double>>(5, std::vector<double>(10, 0.5))),
               DegenerateDataError);
  EXPECT_THROW(fit_pca(gaussian_points(5, 1, 1)), ValidationError);
}

TEST(Pca, JsonRoundTrip) {
  const PcaBasis b = fit_pca(gaussian_points(50, 6, 4));
  const PcaBasis c = PcaBasis::from_json(b.to_json());
  EXPECT_EQ(c.mean, b.mean);
  EXPECT_EQ(c.components[1], b.components[1]);
}

TEST(NoiseWalk, StartsAtCleanLogitsAndFollowsOneTrajectory) {
  Model m = build_small_cnn(kShape, 10, 5);
  const Tensor x = synthetic_dataset(10, 1, kShape, 6, Split::Test).images[2];
  const std::vector<double> sigmas{0.0, 0.5, 2.0};
  const NoiseWalk w = noise_walk(m, x, sigmas, 1, 9);
  const Tensor clean = m.forward_logits(x);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_DOUBLE_EQ(w.mean_logits[0][k], clean[k]);

  Rng rng = make_rng(9, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eta(x.size());
  for (double& e : eta) e = normal(rng);
  for (std::size_t s = 1; s < sigmas.size(); ++s) {
    Tensor noisy = x;
    for (std::size_t j = 0; j < noisy.size(); ++j) noisy[j] = static_cast<float>(noisy[j] + sigmas[s] * eta[j]);
    const Tensor z = m.forward_logits(noisy);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_DOUBLE_EQ(w.mean_logits[s][k], z[k]);
  }
  EXPECT_EQ(w.terminal_standard_error, 0.0);
  EXPECT_TRUE(w.path.empty());
  EXPECT_THROW(noise_walk(m, x, {0.5, 1.0}, 2, 0), ValidationError);
  EXPECT_THROW(noise_walk(m, x, {0.0, 1.0}, 0, 0), ValidationError);
}

TEST(NoiseWalk, DoublingWalksShrinksErrorBySqrtTwo) {
  Model m = build_small_cnn(kShape, 10, 5);
  const Tensor x = synthetic_dataset(10, 1, kShape, 6, Split::Test).images[4];
  double ratio = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const double a = noise_walk(m, x, {0.0, 3.0}, 100, 100 + s).terminal_standard_error;
    const double b = noise_walk(m, x, {0.0, 3.0}, 200, 200 + s).terminal_standard_error;
    ratio += b / a / 4;
  }
  EXPECT_NEAR(ratio, 1.0 / std::sqrt(2.0), 0.3 / std::sqrt(2.0));
}

TEST(NoiseWalk, ThreadsProjectionAndCsv) {
  Model m = build_small_cnn(kShape, 10, 5);
  Dataset d = synthetic_dataset(10, 3, kShape, 6, Split::Test);
  const PcaBasis b = fit_pca(clean_logits(m, d));
  const NoiseWalk a = noise_walk(m, d.images[0], {0.0, 1.0}, 6, 3, &b, 0, d.labels[0], 1);
  const NoiseWalk c = noise_walk(m, d.images[0], {0.0, 1.0}, 6, 3, &b, 0, d.labels[0], 3);
  EXPECT_EQ(a.mean_logits, c.mean_logits);
  ASSERT_EQ(a.path.size(), 2u);
  const std::string csv = a.to_csv();
  EXPECT_EQ(csv.substr(0, 39), "image_id,true_class,sigma,pc1,pc2,z0,z1");
}

TEST(SinkCheck, NearestCentroid) {
  NoiseWalk w;
  w.true_class = 1;
  w.mean_logits = {{0, 0, 0}, {0.9, 0.1, 0}};
  const std::vector<std::vector<double>> centroids{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const SinkCheck s = sink_check(w, centroids, 0);
  EXPECT_TRUE(s.attracted());
  EXPECT_EQ(s.nearest_class, 0u);
  EXPECT_NEAR(s.distance_to_target, std::sqrt(0.02), 1e-12);
  EXPECT_FALSE(sink_check(w, centroids, 2).attracted());
  EXPECT_THROW(sink_check(w, centroids, 3), IndexError);
}

TEST(Centroids, MeanOfCleanLogitsPerClass) {
  Model m = build_small_cnn(kShape, 10, 5);
  Dataset d = synthetic_dataset(10, 2, kShape, 6, Split::Test);
  const auto z = clean_logits(m, d);
  const auto c = class_centroids(m, d);
  ASSERT_EQ(c.size(), 10u);
  std::vector<double> expect(10, 0.0);
  int count = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] != 3) continue;
    ++count;
    for (std::size_t k = 0; k < 10; ++k) expect[k] += z[i][k];
  }
  for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(c[3][k], expect[k] / count, 1e-9);
}
