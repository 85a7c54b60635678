#include "nrt/titration.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "nrt/parallel.hpp"
#include "nrt/rng.hpp"

namespace nrt {

std::string to_string(NoiseMode m) {
  return m == NoiseMode::PureNoise ? "pure" : "image";
}

NoiseMode noise_mode_from_string(const std::string& s) {
  if (s == "pure" || s == "pure_noise") return NoiseMode::PureNoise;
  if (s == "image" || s == "image_plus_noise") return NoiseMode::ImagePlusNoise;
  throw ValidationError("unknown noise mode '" + s + "' (expected pure or image)");
}

void NoiseConfig::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma must be finite and >= 0");
  if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
}

nlohmann::json NoiseConfig::to_json() const {
  return {{"sigma", sigma}, {"n_samples", n_samples}, {"seed", seed},
          {"mode", to_string(mode)}, {"clip", clip}};
}

std::uint64_t sigma_stream_seed(std::uint64_t seed, double sigma) {
  return derive_seed(seed, std::bit_cast<std::uint64_t>(sigma));
}

NoiseSampler::NoiseSampler(const NoiseConfig& cfg, const Dataset* base, Shape image_shape)
    : cfg_(cfg), base_(base), shape_(std::move(image_shape)),
      stream_seed_(sigma_stream_seed(cfg.seed, cfg.sigma)) {
  cfg_.validate();
  if (cfg_.mode == NoiseMode::ImagePlusNoise) {
    if (base_ == nullptr || base_->empty()) {
      throw ConfigError("image_plus_noise mode needs a non-empty base dataset");
    }
    if (base_->image_shape() != shape_) {
      throw DimensionError("base images " + shape_string(base_->image_shape()) +
                           " do not match " + shape_string(shape_));
    }
  }
}

Tensor NoiseSampler::sample(std::size_t i) const {
  Tensor out = cfg_.mode == NoiseMode::ImagePlusNoise
                   ? base_->images[i % base_->size()]
                   : Tensor(shape_, 0.0f);
  if (cfg_.sigma == 0.0) return out;
  Rng rng = make_rng(stream_seed_, i);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (float& v : out.data()) {
    v = static_cast<float>(v + cfg_.sigma * normal(rng));
    if (cfg_.clip) v = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

std::vector<Tensor> sample_noisy_inputs(const NoiseConfig& cfg, const Dataset* base,
                                        const Shape& image_shape) {
  NoiseSampler s(cfg, base, image_shape);
  std::vector<Tensor> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back(s.sample(i));
  return out;
}

double NoisyPredictions::score(double gamma) const {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw ValidationError("gamma must lie in [0,1); got " + std::to_string(gamma));
  }
  if (confidence.empty()) return 0.0;
  const auto n = std::count_if(confidence.begin(), confidence.end(),
                               [gamma](double c) { return c > gamma; });
  return static_cast<double>(n) / static_cast<double>(confidence.size());
}

std::vector<std::size_t> NoisyPredictions::histogram(double gamma, std::size_t num_classes) const {
  std::vector<std::size_t> h(num_classes, 0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    if (confidence[i] > gamma) ++h.at(predicted[i]);
  }
  return h;
}

NoisyPredictions noisy_predictions(const Model& model, const NoiseConfig& cfg, const Dataset* base) {
  NoiseSampler sampler(cfg, base, model.input_shape());
  NoisyPredictions p;
  p.confidence.resize(sampler.size());
  p.predicted.resize(sampler.size());
  parallel_for(sampler.size(), cfg.threads, [&](std::size_t i) {
    const Tensor logits = model.forward_logits(sampler.sample(i));
    const auto probs = softmax(logits.data());
    const auto k = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    p.confidence[i] = probs[k];
    p.predicted[i] = static_cast<std::uint32_t>(k);
  });
  return p;
}

double titration_score(const Model& model, const NoiseConfig& cfg, double gamma, const Dataset* base) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw ValidationError("gamma must lie in [0,1); got " + std::to_string(gamma));
  }
  return noisy_predictions(model, cfg, base).score(gamma);
}

std::string TitrationCurve::to_csv(bool header) const {
  std::ostringstream os;
  os.precision(10);
  if (header) os << "sigma,gamma,score,n_samples,mode,model_id\n";
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    for (std::size_t j = 0; j < gammas.size(); ++j) {
      os << sigmas[i] << ',' << gammas[j] << ',' << at(i, j) << ',' << n_samples << ','
         << to_string(mode) << ',' << model_id << '\n';
    }
  }
  return os.str();
}

nlohmann::json TitrationCurve::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    rows.push_back(std::vector<double>(scores.begin() + static_cast<long>(i * gammas.size()),
                                       scores.begin() + static_cast<long>((i + 1) * gammas.size())));
  }
  return {{"sigmas", sigmas}, {"gammas", gammas}, {"scores", rows},
          {"mode", to_string(mode)}, {"n_samples", n_samples}, {"model_id", model_id}};
}

TitrationCurve titration_curve(const Model& model, const std::vector<double>& sigma_grid,
                               const std::vector<double>& gammas, const NoiseConfig& tmpl,
                               const Dataset* base, const std::string& model_id) {
  if (sigma_grid.empty()) throw ValidationError("sigma grid is empty");
  if (!std::is_sorted(sigma_grid.begin(), sigma_grid.end())) {
    throw ValidationError("sigma grid must be ascending");
  }
  if (gammas.empty()) throw ValidationError("gamma list is empty");
  TitrationCurve c;
  c.sigmas = sigma_grid;
  c.gammas = gammas;
  c.mode = tmpl.mode;
  c.n_samples = tmpl.n_samples;
  c.model_id = model_id;
  for (double s : sigma_grid) {
    NoiseConfig cfg = tmpl;
    cfg.sigma = s;
    const NoisyPredictions p = noisy_predictions(model, cfg, base);
    for (double g : gammas) c.scores.push_back(p.score(g));
  }
  return c;
}

nlohmann::json Verdict::to_json() const {
  nlohmann::json j = {{"score", score},
                      {"score_x100", score * 100.0},
                      {"backdoor_suspected", backdoor_suspected},
                      {"operating_point", {{"sigma", sigma}, {"gamma", gamma}}},
                      {"decision_threshold", threshold},
                      {"class_histogram", class_histogram},
                      {"n_samples", n_samples},
                      {"runtime_seconds", runtime_seconds}};
  j["suspected_target"] = suspected_target ? nlohmann::json(*suspected_target) : nlohmann::json();
  if (!warning.empty()) j["warning"] = warning;
  return j;
}

Verdict verdict(const Model& model, const NoiseConfig& cfg, double gamma, double threshold,
                const Dataset* base) {
  const auto t0 = std::chrono::steady_clock::now();
  const NoisyPredictions p = noisy_predictions(model, cfg, base);
  Verdict v;
  v.score = p.score(gamma);
  v.sigma = cfg.sigma;
  v.gamma = gamma;
  v.threshold = threshold;
  v.n_samples = cfg.n_samples;
  v.backdoor_suspected = v.score > threshold;
  v.class_histogram = p.histogram(gamma, model.num_classes());
  const auto top = std::max_element(v.class_histogram.begin(), v.class_histogram.end());
  if (*top > 0) v.suspected_target = static_cast<std::size_t>(top - v.class_histogram.begin());
  if (threshold >= 1.0) v.warning = "decision threshold >= 1 can never be exceeded";
  v.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return v;
}

Calibration calibrate_operating_sigma(const TitrationCurve& baseline,
                                      const std::vector<TitrationCurve>& backdoored,
                                      std::size_t gamma_index, double max_baseline) {
  if (backdoored.empty()) throw ValidationError("calibration needs at least one backdoored curve");
  if (gamma_index >= baseline.gammas.size()) throw IndexError("gamma index out of range");
  for (const auto& c : backdoored) {
    if (c.sigmas != baseline.sigmas || c.gammas != baseline.gammas) {
      throw ValidationError("calibration curves must share sigma and gamma grids");
    }
  }
  Calibration best;
  double best_gap = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < baseline.sigmas.size(); ++i) {
    const double base = baseline.at(i, gamma_index);
    if (base > max_baseline) continue;
    double weakest = 1.0;
    for (const auto& c : backdoored) weakest = std::min(weakest, c.at(i, gamma_index));
    if (weakest - base > best_gap) {
      best_gap = weakest - base;
      best = {baseline.sigmas[i], base, weakest, true};
    }
  }
  return best;
}

}  // namespace nrt
