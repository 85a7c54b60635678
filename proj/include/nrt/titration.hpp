#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrt/data.hpp"
#include "nrt/model.hpp"

namespace nrt {

enum class NoiseMode { ImagePlusNoise, PureNoise };

std::string to_string(NoiseMode m);
NoiseMode noise_mode_from_string(const std::string& s);

struct NoiseConfig {
  double sigma = 0.0;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
  NoiseMode mode = NoiseMode::PureNoise;
  bool clip = false;         // clamp noisy pixels to [0,1]
  std::size_t threads = 1;   // 0 = all hardware threads

  void validate() const;
  nlohmann::json to_json() const;
};

/// Seed of the sample stream at one noise level. Curves and single scores
/// share it, so a curve entry equals the standalone score.
std::uint64_t sigma_stream_seed(std::uint64_t seed, double sigma);

/// Random-access view of the noisy inputs. Sample i draws fresh noise from a
/// counter-based stream and, in image mode, uses base image i mod |base|.
class NoiseSampler {
 public:
  NoiseSampler(const NoiseConfig& cfg, const Dataset* base, Shape image_shape);

  Tensor sample(std::size_t i) const;
  std::size_t size() const { return cfg_.n_samples; }

 private:
  NoiseConfig cfg_;
  const Dataset* base_;
  Shape shape_;
  std::uint64_t stream_seed_;
};

std::vector<Tensor> sample_noisy_inputs(const NoiseConfig& cfg, const Dataset* base,
                                        const Shape& image_shape);

/// Max-softmax confidence and argmax class for every noisy sample.
struct NoisyPredictions {
  std::vector<double> confidence;
  std::vector<std::uint32_t> predicted;

  /// Fraction of samples with confidence strictly above gamma.
  double score(double gamma) const;
  std::vector<std::size_t> histogram(double gamma, std::size_t num_classes) const;
};

NoisyPredictions noisy_predictions(const Model& model, const NoiseConfig& cfg,
                                   const Dataset* base = nullptr);

double titration_score(const Model& model, const NoiseConfig& cfg, double gamma,
                       const Dataset* base = nullptr);

struct TitrationCurve {
  std::vector<double> sigmas;
  std::vector<double> gammas;
  std::vector<double> scores;  // sigma-major: scores[i * gammas.size() + j]
  NoiseMode mode = NoiseMode::PureNoise;
  std::size_t n_samples = 0;
  std::string model_id;

  double at(std::size_t sigma_index, std::size_t gamma_index) const {
    return scores.at(sigma_index * gammas.size() + gamma_index);
  }
  std::string to_csv(bool header = true) const;
  nlohmann::json to_json() const;
};

TitrationCurve titration_curve(const Model& model, const std::vector<double>& sigma_grid,
                               const std::vector<double>& gammas, const NoiseConfig& tmpl,
                               const Dataset* base = nullptr, const std::string& model_id = "");

struct Verdict {
  double score = 0.0;
  bool backdoor_suspected = false;
  double sigma = 0.0;
  double gamma = 0.0;
  double threshold = 0.5;
  std::vector<std::size_t> class_histogram;  // argmax votes among confident samples
  std::optional<std::size_t> suspected_target;
  std::size_t n_samples = 0;
  double runtime_seconds = 0.0;
  std::string warning;

  nlohmann::json to_json() const;
};

/// Scores the model at (cfg.sigma, gamma) and flags it when score > threshold.
Verdict verdict(const Model& model, const NoiseConfig& cfg, double gamma, double threshold,
                const Dataset* base = nullptr);

struct Calibration {
  double sigma = 0.0;
  double baseline_score = 0.0;
  double backdoored_score = 0.0;  // weakest backdoored model at sigma
  bool feasible = false;           // some sigma kept the baseline under the cap
};

/// Picks the grid sigma maximising (weakest backdoored score - baseline score)
/// among points where the baseline stays at or below max_baseline. All curves
/// must share one sigma grid; ties go to the smaller sigma.
Calibration calibrate_operating_sigma(const TitrationCurve& baseline,
                                      const std::vector<TitrationCurve>& backdoored,
                                      std::size_t gamma_index, double max_baseline = 0.25);

}  // namespace nrt
