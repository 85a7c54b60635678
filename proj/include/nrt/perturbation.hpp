#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrt/data.hpp"
#include "nrt/model.hpp"

namespace nrt {

/// dZ_k/dx at one input. `sigma`/`noise_seed` describe a noisy evaluation
/// point; both are empty for a clean input.
struct LogitGradient {
  std::size_t k = 0;
  Tensor g;
  std::optional<double> sigma;
  std::optional<std::uint64_t> noise_seed;
};

LogitGradient logit_input_gradient(const Model& model, const Tensor& x, std::size_t k);

/// Gradients of every logit from a single recorded forward pass.
std::vector<Tensor> all_logit_gradients(const Model& model, const Tensor& x);

/// x + sigma * eta for draw `draw` of the stream seeded by `seed`.
Tensor gaussian_perturb(const Tensor& x, double sigma, std::uint64_t seed, std::uint64_t draw);

/// Z_k(x + sigma*eta) - Z_k(x) over n draws.
std::vector<double> delta_logit_samples(const Model& model, const Tensor& x, std::size_t k,
                                        double sigma, std::size_t n, std::uint64_t seed);

/// Same draws as delta_logit_samples, all classes at once: result[k][i].
std::vector<std::vector<double>> delta_logit_samples_all(const Model& model, const Tensor& x,
                                                         double sigma, std::size_t n,
                                                         std::uint64_t seed,
                                                         std::size_t threads = 1);

/// First-order prediction sigma * ||g||_2 of the std of the logit change.
double predicted_std(const LogitGradient& g, double sigma);
double predicted_std(const Tensor& g, double sigma);

struct VarianceLawRow {
  double sigma = 0.0;
  double empirical_std = 0.0;
  double predicted_std = 0.0;
  double ci_low = 0.0;  // bootstrap 95% interval of empirical_std
  double ci_high = 0.0;
  double mean = 0.0;
  double mean_se = 0.0;  // bootstrap standard error of the mean

  double ratio() const { return predicted_std > 0.0 ? empirical_std / predicted_std : 0.0; }
};

struct VarianceLawReport {
  std::size_t k = 0;
  std::size_t image_id = 0;
  std::vector<VarianceLawRow> rows;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct BootstrapStats {
  double std_low = 0.0, std_high = 0.0, mean_se = 0.0;
};

/// 95% percentile interval of the sample std and standard error of the mean.
BootstrapStats bootstrap(const std::vector<double>& samples, std::size_t resamples,
                         std::uint64_t seed);

VarianceLawReport validate_variance_law(const Model& model, const Tensor& x, std::size_t k,
                                        const std::vector<double>& sigma_grid, std::size_t n,
                                        std::uint64_t seed, std::size_t image_id = 0);

/// One report per class; the noise draws are shared across classes.
std::vector<VarianceLawReport> validate_variance_law_all(const Model& model, const Tensor& x,
                                                         const std::vector<double>& sigma_grid,
                                                         std::size_t n, std::uint64_t seed,
                                                         std::size_t image_id = 0,
                                                         std::size_t threads = 1);

enum class MapReduction { Signed, Absolute };

struct GradientMap {
  std::size_t height = 0, width = 0;
  std::vector<double> values;  // row-major H x W
  double sigma = 0.0;
  std::size_t n_avg = 0;
  MapReduction reduction = MapReduction::Signed;

  double at(std::size_t y, std::size_t x) const { return values.at(y * width + x); }
  std::string to_csv() const;
  nlohmann::json sidecar() const;
};

/// Per draw: max over classes and channels of dZ_k/dx at x + sigma*eta;
/// the map is the mean over n_avg draws. sigma = 0 gives the explicit map.
GradientMap implicit_gradient_map(const Model& model, const Tensor& x, double sigma,
                                  std::size_t n_avg, std::uint64_t seed,
                                  MapReduction reduction = MapReduction::Signed,
                                  std::size_t threads = 1);

/// Mean of several per-image maps.
GradientMap average_maps(const std::vector<GradientMap>& maps);

/// Fraction of trigger positions ranked in the top ceil(5%) of map values.
/// Ties are ordered by a seeded shuffle.
double trigger_localization_score(const GradientMap& map, const TriggerSpec& t,
                                  std::uint64_t tie_seed = 0);

}  // namespace nrt
