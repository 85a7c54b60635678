#include "nrt/perturbation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "nrt/parallel.hpp"
#include "nrt/rng.hpp"

namespace nrt {

namespace {

void check_class(const Model& model, std::size_t k) {
  if (k >= model.num_classes()) {
    throw IndexError("class " + std::to_string(k) + " out of range for " +
                     std::to_string(model.num_classes()) + " classes");
  }
}

double sample_std(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1.0));
}

std::uint64_t sigma_seed(std::uint64_t seed, double sigma) {
  return derive_seed(seed, std::bit_cast<std::uint64_t>(sigma));
}

}  // namespace

std::vector<Tensor> all_logit_gradients(const Model& model, const Tensor& x) {
  Tape tape;
  Var in = tape.input(x, true);
  Var logits = model.forward(tape, in);
  std::vector<Var> heads;
  for (std::size_t k = 0; k < model.num_classes(); ++k) heads.push_back(select(logits, k));
  std::vector<Tensor> out;
  out.reserve(heads.size());
  for (Var h : heads) {
    tape.zero_grad();
    tape.backward(h);
    const auto g = tape.grad(in);
    out.emplace_back(x.shape(), g.empty() ? std::vector<float>(x.size(), 0.0f)
                                          : std::vector<float>(g.begin(), g.end()));
  }
  return out;
}

LogitGradient logit_input_gradient(const Model& model, const Tensor& x, std::size_t k) {
  check_class(model, k);
  Tape tape;
  Var in = tape.input(x, true);
  tape.backward(select(model.forward(tape, in), k));
  const auto g = tape.grad(in);
  LogitGradient out;
  out.k = k;
  out.g = Tensor(x.shape(), g.empty() ? std::vector<float>(x.size(), 0.0f)
                                      : std::vector<float>(g.begin(), g.end()));
  return out;
}

Tensor gaussian_perturb(const Tensor& x, double sigma, std::uint64_t seed, std::uint64_t draw) {
  Tensor out = x;
  if (sigma == 0.0) return out;
  Rng rng = make_rng(seed, draw);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (float& v : out.data()) v = static_cast<float>(v + sigma * normal(rng));
  return out;
}

std::vector<std::vector<double>> delta_logit_samples_all(const Model& model, const Tensor& x,
                                                         double sigma, std::size_t n,
                                                         std::uint64_t seed, std::size_t threads) {
  if (n < 2) throw ValidationError("delta_logit_samples needs n >= 2");
  if (!(sigma >= 0.0)) throw ValidationError("sigma must be >= 0");
  const std::size_t K = model.num_classes();
  const Tensor z0 = model.forward_logits(x);
  std::vector<std::vector<double>> out(K, std::vector<double>(n, 0.0));
  if (sigma == 0.0) return out;
  const std::uint64_t s = sigma_seed(seed, sigma);
  parallel_for(n, threads, [&](std::size_t i) {
    const Tensor z = model.forward_logits(gaussian_perturb(x, sigma, s, i));
    for (std::size_t k = 0; k < K; ++k) {
      out[k][i] = static_cast<double>(z[k]) - static_cast<double>(z0[k]);
    }
  });
  return out;
}

std::vector<double> delta_logit_samples(const Model& model, const Tensor& x, std::size_t k,
                                        double sigma, std::size_t n, std::uint64_t seed) {
  check_class(model, k);
  return delta_logit_samples_all(model, x, sigma, n, seed)[k];
}

double predicted_std(const Tensor& g, double sigma) {
  if (!(sigma >= 0.0)) throw ValidationError("sigma must be >= 0");
  double ss = 0.0;
  for (float v : g.data()) ss += static_cast<double>(v) * static_cast<double>(v);
  return sigma * std::sqrt(ss);
}

double predicted_std(const LogitGradient& g, double sigma) { return predicted_std(g.g, sigma); }

BootstrapStats bootstrap(const std::vector<double>& samples, std::size_t resamples,
                         std::uint64_t seed) {
  if (samples.size() < 2 || resamples < 2) throw ValidationError("bootstrap needs >= 2 samples");
  Rng rng = make_rng(seed, 0xb0075);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::vector<double> stds(resamples), means(resamples), draw(samples.size());
  for (std::size_t r = 0; r < resamples; ++r) {
    for (double& d : draw) d = samples[pick(rng)];
    stds[r] = sample_std(draw);
    means[r] = std::accumulate(draw.begin(), draw.end(), 0.0) / static_cast<double>(draw.size());
  }
  std::sort(stds.begin(), stds.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(resamples - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, resamples - 1);
    return stds[lo] + (pos - static_cast<double>(lo)) * (stds[hi] - stds[lo]);
  };
  BootstrapStats b;
  b.std_low = quantile(0.025);
  b.std_high = quantile(0.975);
  b.mean_se = sample_std(means);
  return b;
}

std::vector<VarianceLawReport> validate_variance_law_all(const Model& model, const Tensor& x,
                                                         const std::vector<double>& sigma_grid,
                                                         std::size_t n, std::uint64_t seed,
                                                         std::size_t image_id,
                                                         std::size_t threads) {
  if (sigma_grid.empty() || !std::is_sorted(sigma_grid.begin(), sigma_grid.end())) {
    throw ValidationError("sigma grid must be non-empty and ascending");
  }
  if (n < 2) throw ValidationError("variance law needs n >= 2");
  const std::size_t K = model.num_classes();
  const auto grads = all_logit_gradients(model, x);
  std::vector<VarianceLawReport> reports(K);
  for (std::size_t k = 0; k < K; ++k) {
    reports[k].k = k;
    reports[k].image_id = image_id;
  }
  for (double sigma : sigma_grid) {
    const auto samples = delta_logit_samples_all(model, x, sigma, n, seed, threads);
    for (std::size_t k = 0; k < K; ++k) {
      VarianceLawRow row;
      row.sigma = sigma;
      row.empirical_std = sample_std(samples[k]);
      row.predicted_std = predicted_std(grads[k], sigma);
      row.mean = std::accumulate(samples[k].begin(), samples[k].end(), 0.0) / static_cast<double>(n);
      if (sigma > 0.0) {
        const auto b = bootstrap(samples[k], 1000, derive_seed(sigma_seed(seed, sigma), k));
        row.ci_low = b.std_low;
        row.ci_high = b.std_high;
        row.mean_se = b.mean_se;
      }
      reports[k].rows.push_back(row);
    }
  }
  return reports;
}

VarianceLawReport validate_variance_law(const Model& model, const Tensor& x, std::size_t k,
                                        const std::vector<double>& sigma_grid, std::size_t n,
                                        std::uint64_t seed, std::size_t image_id) {
  check_class(model, k);
  return validate_variance_law_all(model, x, sigma_grid, n, seed, image_id)[k];
}

std::string VarianceLawReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "sigma,empirical_std,predicted_std,ci_low,ci_high\n";
  for (const auto& r : rows) {
    os << r.sigma << ',' << r.empirical_std << ',' << r.predicted_std << ',' << r.ci_low << ','
       << r.ci_high << '\n';
  }
  return os.str();
}

void VarianceLawReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << to_csv();
}

GradientMap implicit_gradient_map(const Model& model, const Tensor& x, double sigma,
                                  std::size_t n_avg, std::uint64_t seed, MapReduction reduction,
                                  std::size_t threads) {
  if (n_avg < 1) throw ValidationError("n_avg must be >= 1");
  if (!(sigma >= 0.0)) throw ValidationError("sigma must be >= 0");
  if (x.rank() != 3) throw DimensionError("gradient map needs a [C,H,W] input");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), plane = H * W;
  const std::uint64_t s = sigma_seed(seed, sigma);

  std::vector<std::vector<double>> per_draw(n_avg);
  parallel_for(n_avg, threads, [&](std::size_t d) {
    const auto grads = all_logit_gradients(model, gaussian_perturb(x, sigma, s, d));
    std::vector<double> m(plane, -std::numeric_limits<double>::infinity());
    for (const Tensor& g : grads) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < plane; ++j) {
          double v = g[c * plane + j];
          if (reduction == MapReduction::Absolute) v = std::abs(v);
          m[j] = std::max(m[j], v);
        }
      }
    }
    per_draw[d] = std::move(m);
  });

  GradientMap map;
  map.height = H;
  map.width = W;
  map.sigma = sigma;
  map.n_avg = n_avg;
  map.reduction = reduction;
  map.values.assign(plane, 0.0);
  for (const auto& m : per_draw) {
    for (std::size_t j = 0; j < plane; ++j) map.values[j] += m[j];
  }
  for (double& v : map.values) v /= static_cast<double>(n_avg);
  return map;
}

GradientMap average_maps(const std::vector<GradientMap>& maps) {
  if (maps.empty()) throw ValidationError("no maps to average");
  GradientMap out = maps.front();
  for (std::size_t i = 1; i < maps.size(); ++i) {
    if (maps[i].values.size() != out.values.size()) throw DimensionError("map shapes differ");
    for (std::size_t j = 0; j < out.values.size(); ++j) out.values[j] += maps[i].values[j];
    out.n_avg += maps[i].n_avg;
  }
  for (double& v : out.values) v /= static_cast<double>(maps.size());
  return out;
}

std::string GradientMap::to_csv() const {
  std::ostringstream os;
  os.precision(9);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) os << (x ? "," : "") << at(y, x);
    os << '\n';
  }
  return os.str();
}

nlohmann::json GradientMap::sidecar() const {
  return {{"height", height},
          {"width", width},
          {"sigma", sigma},
          {"n_avg", n_avg},
          {"reduction", reduction == MapReduction::Signed ? "signed" : "absolute"},
          {"layout", "row-major CSV, one image row per line"}};
}

double trigger_localization_score(const GradientMap& map, const TriggerSpec& t,
                                  std::uint64_t tie_seed) {
  if (t.mask.rank() != 3 || t.mask.dim(1) != map.height || t.mask.dim(2) != map.width) {
    throw DimensionError("trigger mask " + shape_string(t.mask.shape()) + " does not match a " +
                         std::to_string(map.height) + "x" + std::to_string(map.width) + " map");
  }
  const auto support = t.plane_support();
  const auto positives = static_cast<std::size_t>(std::count(support.begin(), support.end(), true));
  if (positives == 0) throw ValidationError("trigger mask is empty");

  const std::size_t n = map.values.size();
  const auto top = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(tie_seed, 0x7135);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.values[a] > map.values[b]; });
  std::size_t hits = 0;
  for (std::size_t r = 0; r < top; ++r) hits += support[order[r]] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(positives);
}

}  // namespace nrt
