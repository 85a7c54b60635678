#include "nrt/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "nrt/parallel.hpp"
#include "nrt/rng.hpp"

namespace nrt {

SymmetricEigen symmetric_eigen(std::vector<double> a, std::size_t n, double tol, int max_sweeps) {
  if (a.size() != n * n) throw DimensionError("symmetric_eigen: matrix size mismatch");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto A = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };

  double scale = 0.0;
  for (double x : a) scale += x * x;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    }
    if (off <= tol * tol * scale || off == 0.0) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (A(p, q) == 0.0) continue;
        // Rotation angle zeroing A(p,q); stable form from the tangent.
        const double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return A(i, i) > A(j, j); });
  SymmetricEigen out;
  for (std::size_t i : order) {
    out.values.push_back(A(i, i));
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k * n + i];
    out.vectors.push_back(std::move(col));
  }
  return out;
}

std::array<double, 2> PcaBasis::project(const std::vector<double>& z) const {
  if (z.size() != mean.size()) throw DimensionError("projection dimension mismatch");
  std::array<double, 2> out{};
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < z.size(); ++i) out[c] += (z[i] - mean[i]) * components[c][i];
  }
  return out;
}

std::array<double, 2> PcaBasis::project(const Tensor& z) const {
  return project(std::vector<double>(z.data().begin(), z.data().end()));
}

nlohmann::json PcaBasis::to_json() const {
  return {{"mean", mean},
          {"components", {components[0], components[1]}},
          {"explained_variance_ratio", {explained[0], explained[1]}}};
}

PcaBasis PcaBasis::from_json(const nlohmann::json& j) {
  PcaBasis b;
  b.mean = j.at("mean").get<std::vector<double>>();
  b.components[0] = j.at("components").at(0).get<std::vector<double>>();
  b.components[1] = j.at("components").at(1).get<std::vector<double>>();
  b.explained[0] = j.at("explained_variance_ratio").at(0).get<double>();
  b.explained[1] = j.at("explained_variance_ratio").at(1).get<double>();
  return b;
}

PcaBasis fit_pca(const std::vector<std::vector<double>>& points) {
  if (points.size() < 3) throw ValidationError("PCA needs at least 3 points");
  const std::size_t K = points.front().size();
  if (K < 2) throw ValidationError("PCA needs dimension >= 2");
  for (const auto& p : points) {
    if (p.size() != K) throw DimensionError("PCA points differ in dimension");
  }
  const double n = static_cast<double>(points.size());
  PcaBasis b;
  b.mean.assign(K, 0.0);
  for (const auto& p : points) {
    for (std::size_t i = 0; i < K; ++i) b.mean[i] += p[i];
  }
  for (double& m : b.mean) m /= n;

  std::vector<double> cov(K * K, 0.0);
  for (const auto& p : points) {
    for (std::size_t i = 0; i < K; ++i) {
      const double di = p[i] - b.mean[i];
      for (std::size_t j = i; j < K; ++j) cov[i * K + j] += di * (p[j] - b.mean[j]);
    }
  }
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = i; j < K; ++j) {
      cov[i * K + j] /= n - 1.0;
      cov[j * K + i] = cov[i * K + j];
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < K; ++i) total += cov[i * K + i];
  double mean_sq = 0.0;
  for (double m : b.mean) mean_sq += m * m;
  if (!(total > 1e-24 * std::max(1.0, mean_sq))) {
    throw DegenerateDataError("PCA input has zero variance (all points identical)");
  }

  const SymmetricEigen e = symmetric_eigen(cov, K);
  for (std::size_t c = 0; c < 2; ++c) {
    auto dir = e.vectors[c];
    const auto big = std::max_element(dir.begin(), dir.end(),
                                      [](double x, double y) { return std::abs(x) < std::abs(y); });
    if (*big < 0) {
      for (double& d : dir) d = -d;
    }
    b.components[c] = std::move(dir);
    b.explained[c] = std::clamp(e.values[c] / total, 0.0, 1.0);
  }
  return b;
}

PcaBasis fit_pca(const std::vector<Tensor>& logits) {
  std::vector<std::vector<double>> pts;
  pts.reserve(logits.size());
  for (const Tensor& t : logits) pts.emplace_back(t.data().begin(), t.data().end());
  return fit_pca(pts);
}

std::string NoiseWalk::to_csv(bool header) const {
  std::ostringstream os;
  os.precision(9);
  const std::size_t K = mean_logits.empty() ? 0 : mean_logits.front().size();
  if (header) {
    os << "image_id,true_class,sigma,pc1,pc2";
    for (std::size_t k = 0; k < K; ++k) os << ",z" << k;
    os << '\n';
  }
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    os << image_id << ',' << true_class << ',' << sigmas[s] << ',';
    if (path.empty()) {
      os << ',';
    } else {
      os << path[s][0] << ',' << path[s][1];
    }
    for (double z : mean_logits[s]) os << ',' << z;
    os << '\n';
  }
  return os.str();
}

NoiseWalk noise_walk(const Model& model, const Tensor& x, const std::vector<double>& sigmas,
                     std::size_t walks, std::uint64_t seed, const PcaBasis* basis,
                     std::size_t image_id, std::size_t true_class, std::size_t threads) {
  if (sigmas.empty() || sigmas.front() != 0.0 || !std::is_sorted(sigmas.begin(), sigmas.end())) {
    throw ValidationError("walk checkpoints must be ascending and start at 0");
  }
  if (walks < 1) throw ValidationError("walks must be >= 1");
  const std::size_t K = model.num_classes(), S = sigmas.size();

  // logits[w][s][k]
  std::vector<std::vector<std::vector<double>>> logits(walks);
  parallel_for(walks, threads, [&](std::size_t w) {
    Rng rng = make_rng(seed, w);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> eta(x.size());
    for (double& e : eta) e = normal(rng);
    auto& mine = logits[w];
    mine.resize(S);
    for (std::size_t s = 0; s < S; ++s) {
      Tensor noisy = x;
      if (sigmas[s] != 0.0) {
        auto d = noisy.data();
        for (std::size_t j = 0; j < d.size(); ++j) d[j] = static_cast<float>(d[j] + sigmas[s] * eta[j]);
      }
      const Tensor z = model.forward_logits(noisy);
      mine[s].assign(z.data().begin(), z.data().end());
    }
  });

  NoiseWalk walk;
  walk.image_id = image_id;
  walk.true_class = true_class;
  walk.sigmas = sigmas;
  walk.mean_logits.assign(S, std::vector<double>(K, 0.0));
  for (const auto& w : logits) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t k = 0; k < K; ++k) walk.mean_logits[s][k] += w[s][k];
    }
  }
  for (auto& row : walk.mean_logits) {
    for (double& z : row) z /= static_cast<double>(walks);
  }
  if (walks > 1) {
    double se2 = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double ss = 0.0;
      for (const auto& w : logits) {
        const double d = w[S - 1][k] - walk.mean_logits[S - 1][k];
        ss += d * d;
      }
      se2 += ss / static_cast<double>(walks - 1) / static_cast<double>(walks);
    }
    walk.terminal_standard_error = std::sqrt(se2);
  }
  if (basis != nullptr) {
    for (const auto& z : walk.mean_logits) walk.path.push_back(basis->project(z));
  }
  return walk;
}

std::vector<std::vector<double>> clean_logits(const Model& model, const Dataset& d) {
  std::vector<std::vector<double>> out;
  out.reserve(d.size());
  for (const Tensor& x : d.images) {
    const Tensor z = model.forward_logits(x);
    out.emplace_back(z.data().begin(), z.data().end());
  }
  return out;
}

std::vector<std::vector<double>> class_centroids(const Model& model, const Dataset& d) {
  const std::size_t K = model.num_classes();
  std::vector<std::vector<double>> c(K, std::vector<double>(K, 0.0));
  std::vector<std::size_t> counts(K, 0);
  const auto z = clean_logits(model, d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t y = d.labels[i];
    if (y >= K) throw IndexError("label exceeds model class count");
    for (std::size_t k = 0; k < K; ++k) c[y][k] += z[i][k];
    ++counts[y];
  }
  for (std::size_t y = 0; y < K; ++y) {
    if (counts[y] == 0) throw ValidationError("class " + std::to_string(y) + " has no images");
    for (double& v : c[y]) v /= static_cast<double>(counts[y]);
  }
  return c;
}

SinkCheck sink_check(const NoiseWalk& walk, const std::vector<std::vector<double>>& centroids,
                     std::size_t target) {
  if (target >= centroids.size() || walk.true_class >= centroids.size()) {
    throw IndexError("sink check class out of range");
  }
  const auto& z = walk.mean_logits.back();
  auto dist = [&](const std::vector<double>& c) {
    double acc = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) acc += (z[k] - c[k]) * (z[k] - c[k]);
    return std::sqrt(acc);
  };
  SinkCheck s;
  s.distance_to_target = dist(centroids[target]);
  s.distance_to_own = dist(centroids[walk.true_class]);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    const double d = dist(centroids[k]);
    if (d < best) {
      best = d;
      s.nearest_class = k;
    }
  }
  return s;
}

}  // namespace nrt
