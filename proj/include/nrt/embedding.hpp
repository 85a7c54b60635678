#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrt/data.hpp"
#include "nrt/model.hpp"

namespace nrt {

class DegenerateDataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SymmetricEigen {
  std::vector<double> values;                // descending
  std::vector<std::vector<double>> vectors;  // vectors[i] pairs with values[i]
};

/// Cyclic Jacobi rotations on a dense symmetric matrix (row-major, n x n).
SymmetricEigen symmetric_eigen(std::vector<double> a, std::size_t n, double tol = 1e-14,
                               int max_sweeps = 100);

struct PcaBasis {
  std::vector<double> mean;
  std::array<std::vector<double>, 2> components;
  std::array<double, 2> explained{};  // fraction of total variance

  std::array<double, 2> project(const std::vector<double>& z) const;
  std::array<double, 2> project(const Tensor& z) const;
  nlohmann::json to_json() const;
  static PcaBasis from_json(const nlohmann::json& j);
};

/// Top-2 principal directions of the points. Each direction is signed so its
/// largest-magnitude component is positive.
PcaBasis fit_pca(const std::vector<std::vector<double>>& points);
PcaBasis fit_pca(const std::vector<Tensor>& logits);

struct NoiseWalk {
  std::size_t image_id = 0;
  std::size_t true_class = 0;
  std::vector<double> sigmas;
  std::vector<std::vector<double>> mean_logits;  // one per sigma
  std::vector<std::array<double, 2>> path;       // empty without a basis
  /// Per-coordinate standard error of the terminal mean, as a Euclidean norm.
  double terminal_standard_error = 0.0;

  std::string to_csv(bool header = true) const;
};

/// Walk w follows x + sigma * eta_w with eta_w fixed along the sigma grid, so
/// a single walk is one raw trajectory. sigma = 0 gives the clean logits.
NoiseWalk noise_walk(const Model& model, const Tensor& x, const std::vector<double>& sigmas,
                     std::size_t walks, std::uint64_t seed, const PcaBasis* basis = nullptr,
                     std::size_t image_id = 0, std::size_t true_class = 0,
                     std::size_t threads = 1);

std::vector<std::vector<double>> clean_logits(const Model& model, const Dataset& d);

/// Mean clean logit vector of each class.
std::vector<std::vector<double>> class_centroids(const Model& model, const Dataset& d);

struct SinkCheck {
  double distance_to_target = 0.0;
  double distance_to_own = 0.0;
  std::size_t nearest_class = 0;
  bool attracted() const { return distance_to_target < distance_to_own; }
};

/// Compares the terminal point of a walk against the target and own-class centroids.
SinkCheck sink_check(const NoiseWalk& walk, const std::vector<std::vector<double>>& centroids,
                     std::size_t target);

}  // namespace nrt
