// nrt: train, poison, scan and inspect small image classifiers for backdoors.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nrt/embedding.hpp"
#include "nrt/perturbation.hpp"
#include "nrt/rng.hpp"
#include "nrt/titration.hpp"
#include "nrt/trainer.hpp"
#include "nrt/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitTrain = 3;
constexpr int kExitScan = 4;

struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ScanFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const char* kExitHelp =
    "Exit codes: 0 ok, 2 usage error, 3 training failure, 4 scan failure.\n"
    "NRT_SEED sets the seed when --seed is not given.";

std::vector<double> parse_list(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageFailure(flag + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw UsageFailure(flag + " is empty");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return nrt::hex64(nrt::fnv1a64(bytes));
}

// Seed precedence: explicit flag, then NRT_SEED, then 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("NRT_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageFailure("NRT_SEED='" + std::string(env) + "' is not an unsigned integer");
    }
  }
  return 0;
}

struct DataArgs {
  bool synthetic = false;
  std::string data_dir;
  std::size_t train_per_class = 800;
  std::size_t test_per_class = 100;
  std::size_t classes = 10;
  std::uint64_t data_seed = 1;

  void add(CLI::App* cmd, bool with_train) {
    cmd->add_flag("--synthetic", synthetic, "Use the built-in synthetic digit-like dataset");
    cmd->add_option("--data-dir", data_dir,
                    "Directory with MNIST-style IDX files (train-images-idx3-ubyte, ...)");
    if (with_train) {
      cmd->add_option("--train-per-class", train_per_class, "Synthetic training images per class");
    }
    cmd->add_option("--test-per-class", test_per_class, "Synthetic test images per class");
    cmd->add_option("--classes", classes, "Synthetic class count");
    cmd->add_option("--data-seed", data_seed, "Synthetic dataset seed");
  }

  void check() const {
    if (!synthetic && data_dir.empty()) throw UsageFailure("give --data-dir or --synthetic");
    if (synthetic && !data_dir.empty()) throw UsageFailure("--data-dir and --synthetic are exclusive");
  }

  nrt::Dataset train() const {
    check();
    if (synthetic) return nrt::synthetic_dataset(classes, train_per_class, {1, 28, 28}, data_seed);
    return nrt::load_idx(fs::path(data_dir) / "train-images-idx3-ubyte",
                         fs::path(data_dir) / "train-labels-idx1-ubyte", nrt::Split::Train, 10);
  }

  nrt::Dataset test() const {
    check();
    if (synthetic) {
      return nrt::synthetic_dataset(classes, test_per_class, {1, 28, 28},
                                    nrt::derive_seed(data_seed, 1), nrt::Split::Test);
    }
    return nrt::load_idx(fs::path(data_dir) / "t10k-images-idx3-ubyte",
                         fs::path(data_dir) / "t10k-labels-idx1-ubyte", nrt::Split::Test, 10);
  }

  json to_json() const {
    if (synthetic) {
      return {{"source", "synthetic"}, {"classes", classes}, {"train_per_class", train_per_class},
              {"test_per_class", test_per_class}, {"data_seed", data_seed}};
    }
    return {{"source", "idx"}, {"data_dir", data_dir}};
  }
};

struct TriggerArgs {
  std::string kind = "patch";
  std::size_t size = 3;
  std::string stencil;
  float alpha = 1.0f;
  std::size_t target = 3;

  void add(CLI::App* cmd, bool with_alpha) {
    cmd->add_option("--trigger", kind, "Trigger kind")->check(CLI::IsMember({"patch", "pattern", "watermark"}));
    cmd->add_option("--trigger-size", size, "Patch side length in pixels");
    cmd->add_option("--stencil", stencil, "PGM stencil for pattern/watermark triggers");
    if (with_alpha) cmd->add_option("--alpha", alpha, "Trigger intensity added to pixels");
    cmd->add_option("--target-class", target, "Backdoor target class");
  }

  nrt::TriggerSpec make(float a, const nrt::Shape& shape) const {
    const auto k = nrt::trigger_kind_from_string(kind);
    if (!stencil.empty()) {
      if (k == nrt::TriggerKind::Patch) throw UsageFailure("--stencil applies to pattern/watermark");
      return nrt::make_trigger(k, nrt::read_pgm_mask(stencil, shape[0]), a, target, shape);
    }
    return nrt::make_trigger(k, size, a, target, shape);
  }
};

struct TrainArgs {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;

  void add(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--batch-size", batch_size, "Mini-batch size");
    cmd->add_option("--lr", lr, "Learning rate");
    cmd->add_option("--momentum", momentum, "SGD momentum");
  }

  nrt::TrainConfig config(std::uint64_t seed) const {
    nrt::TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.momentum = momentum;
    c.seed = seed;
    return c;
  }
};

struct ScanArgs {
  std::string sigma_grid = "0.1,0.2,0.3,0.4,0.5,0.6,0.75,1,1.5,2,3,4";
  std::string gammas = "0.95,0.99";
  std::size_t samples = 1000;
  std::string mode = "pure";
  double operating_sigma = 0.6;
  double threshold = 0.5;

  void add(CLI::App* cmd, bool with_grid) {
    if (with_grid) cmd->add_option("--sigma-grid", sigma_grid, "Comma-separated noise levels");
    cmd->add_option("--gamma", gammas, "Comma-separated confidence thresholds; the first is the operating one");
    cmd->add_option("--samples", samples, "Noise samples per sigma");
    cmd->add_option("--mode", mode, "Noise mode")->check(CLI::IsMember({"pure", "image"}));
    cmd->add_option("--operating-sigma", operating_sigma, "Sigma used for the verdict");
    cmd->add_option("--threshold", threshold, "Decision threshold on the T-score");
  }
};

nrt::Model load_or_scan_fail(const fs::path& path, nrt::LoadOptions opts) {
  try {
    return nrt::load_model(path, opts);
  } catch (const std::exception& e) {
    throw ScanFailure("cannot load model '" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------- train

int cmd_train(const DataArgs& data, const TriggerArgs& trig, const TrainArgs& targs,
              std::optional<double> poison_fraction, const std::optional<std::uint64_t>& seed_flag,
              std::size_t checkpoint_every, const std::string& checkpoint_dir, const std::string& out,
              const std::string& record_path) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  nrt::Dataset train = data.train();
  const nrt::Dataset test = data.test();

  nrt::Model model = nrt::build_small_cnn(train.image_shape(), train.num_classes, seed);
  std::optional<nrt::TriggerSpec> trigger;
  if (poison_fraction) {
    trigger = trig.make(trig.alpha, train.image_shape());
    auto poisoned = nrt::poison_dataset(train, *trigger, *poison_fraction, seed);
    model.metadata()["poison"] = poisoned.report.to_json();
    train = std::move(poisoned.data);
  }
  nrt::TrainConfig cfg = targs.config(seed);
  cfg.checkpoint_every = checkpoint_every;
  cfg.checkpoint_dir = checkpoint_dir;
  model.metadata()["train_config"] = cfg.to_json();
  model.metadata()["data"] = data.to_json();

  nrt::TrainRecord record;
  try {
    record = nrt::train(model, train, test, cfg, trigger, [](const nrt::EpochRecord& e) {
      std::cerr << "epoch " << e.epoch << "  loss " << e.loss << "  clean_acc " << e.clean_accuracy;
      if (e.trigger_success) std::cerr << "  trigger_success " << *e.trigger_success;
      std::cerr << '\n';
    });
  } catch (const nrt::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitTrain;
  }
  const auto& last = record.epochs.back();
  model.metadata()["clean_accuracy"] = last.clean_accuracy;
  if (last.trigger_success) model.metadata()["trigger_success"] = *last.trigger_success;
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  nrt::save_model(model, out);
  const std::string rec = record_path.empty() ? out + ".train.csv" : record_path;
  record.write_csv(rec);

  json summary = {{"schema_version", nrt::kReportSchemaVersion},
                  {"model", out},
                  {"record", rec},
                  {"clean_accuracy", last.clean_accuracy},
                  {"seed", seed}};
  if (last.trigger_success) summary["trigger_success"] = *last.trigger_success;
  std::cout << summary.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- scan

int cmd_scan(const std::string& model_path, const ScanArgs& a, const DataArgs& data,
             const std::optional<std::uint64_t>& seed_flag, std::size_t threads,
             const std::string& curve_out) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  const auto sigmas = parse_list(a.sigma_grid, "--sigma-grid");
  const auto gammas = parse_list(a.gammas, "--gamma");
  for (double g : gammas) {
    if (!(g >= 0.0 && g < 1.0)) throw UsageFailure("--gamma values must lie in [0,1)");
  }
  const auto mode = nrt::noise_mode_from_string(a.mode);
  std::optional<nrt::Dataset> base;
  if (mode == nrt::NoiseMode::ImagePlusNoise) base = data.test();

  // Detection never sees training metadata.
  const nrt::Model model = load_or_scan_fail(model_path, {.strip_metadata = true});
  const std::string model_id = fs::path(model_path).stem().string();

  nrt::NoiseConfig cfg;
  cfg.n_samples = a.samples;
  cfg.seed = seed;
  cfg.mode = mode;
  cfg.threads = threads;
  const nrt::Dataset* base_ptr = base ? &*base : nullptr;

  json out;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    const auto curve = nrt::titration_curve(model, sigmas, gammas, cfg, base_ptr, model_id);
    cfg.sigma = a.operating_sigma;
    const auto v = nrt::verdict(model, cfg, gammas.front(), a.threshold, base_ptr);
    const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!v.warning.empty()) std::cerr << "warning: " << v.warning << '\n';
    if (!curve_out.empty()) write_text(curve_out, curve.to_csv());

    out = {{"schema_version", nrt::kReportSchemaVersion},
           {"tool_version", nrt::kToolVersion},
           {"model", {{"path", model_path}, {"id", model_id}, {"fnv1a64", file_hash(model_path)}}},
           {"verdict", v.to_json()},
           {"curve", curve.to_json()},
           {"runtime_seconds", runtime},
           {"config",
            {{"sigma_grid", sigmas},
             {"gammas", gammas},
             {"samples", a.samples},
             {"mode", a.mode},
             {"operating_sigma", a.operating_sigma},
             {"threshold", a.threshold},
             {"seed", seed},
             {"base", base ? data.to_json() : json()}}}};
  } catch (const std::exception& e) {
    throw ScanFailure(std::string("scan failed: ") + e.what());
  }
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- localize

int cmd_localize(const std::string& model_path, const DataArgs& data, std::size_t n_images,
                 double sigma, std::size_t n_avg, const std::string& reduction,
                 const std::optional<std::uint64_t>& seed_flag, std::size_t threads,
                 const std::string& out_prefix, bool truth_trigger, const std::string& truth_mask) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  const nrt::Model model = load_or_scan_fail(model_path, {.strip_metadata = !truth_trigger});
  const nrt::Dataset test = data.test();
  if (n_images < 1) throw UsageFailure("--images must be >= 1");

  std::optional<nrt::TriggerSpec> truth;
  if (truth_trigger) {
    if (!model.metadata().contains("poison")) {
      throw UsageFailure("--truth-trigger: model carries no embedded trigger");
    }
    truth = nrt::TriggerSpec::from_json(model.metadata()["poison"]["trigger"]);
  } else if (!truth_mask.empty()) {
    truth = nrt::make_mask_trigger(nrt::TriggerKind::Pattern,
                                   nrt::read_pgm_mask(truth_mask, model.input_shape()[0]), 1.0f, 0);
  }
  const auto red = reduction == "abs" ? nrt::MapReduction::Absolute : nrt::MapReduction::Signed;

  std::vector<nrt::GradientMap> maps;
  json per_image = json::array();
  for (std::size_t i = 0, used = 0; i < test.size() && used < n_images; ++i) {
    if (truth && test.labels[i] == truth->target && truth_trigger) continue;
    maps.push_back(nrt::implicit_gradient_map(model, test.images[i], sigma, n_avg,
                                              nrt::derive_seed(seed, i), red, threads));
    json row = {{"image_id", i}, {"label", test.labels[i]}};
    if (truth) row["localization_score"] = nrt::trigger_localization_score(maps.back(), *truth, seed);
    per_image.push_back(row);
    ++used;
  }
  const nrt::GradientMap map = nrt::average_maps(maps);
  write_text(out_prefix + ".csv", map.to_csv());
  json sidecar = map.sidecar();
  sidecar["images"] = per_image;
  sidecar["schema_version"] = nrt::kReportSchemaVersion;
  sidecar["explicit"] = sigma == 0.0;
  sidecar["seed"] = seed;
  if (truth) sidecar["localization_score"] = nrt::trigger_localization_score(map, *truth, seed);
  write_text(out_prefix + ".json", sidecar.dump(2));
  std::cout << sidecar.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- ablate

int cmd_ablate(const DataArgs& data, const TriggerArgs& trig, const TrainArgs& targs,
               const std::string& alphas_s, double poison_fraction, const ScanArgs& a,
               const std::optional<std::uint64_t>& seed_flag, std::size_t threads,
               const std::string& out) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  const auto alphas = parse_list(alphas_s, "--alphas");
  const double gamma = parse_list(a.gammas, "--gamma").front();
  const nrt::Dataset train = data.train();
  const nrt::Dataset test = data.test();

  std::ostringstream csv;
  csv << "alpha,trigger_success,t_score,clean_acc\n";
  for (double alpha : alphas) {
    const auto t = trig.make(static_cast<float>(alpha), train.image_shape());
    const auto poisoned = nrt::poison_dataset(train, t, poison_fraction, seed);
    nrt::Model model = nrt::build_small_cnn(train.image_shape(), train.num_classes, seed);
    try {
      nrt::train(model, poisoned.data, nrt::Dataset{}, targs.config(seed));
    } catch (const nrt::TrainingDiverged& e) {
      std::cerr << "error: alpha " << alpha << ": " << e.what() << '\n';
      return kExitTrain;
    }
    nrt::NoiseConfig cfg;
    cfg.sigma = a.operating_sigma;
    cfg.n_samples = a.samples;
    cfg.seed = seed;
    cfg.threads = threads;
    const double success = nrt::trigger_success_rate(model, test, t);
    const double score = nrt::titration_score(model, cfg, gamma);
    const double acc = nrt::evaluate_accuracy(model, test);
    csv << alpha << ',' << success << ',' << score << ',' << acc << '\n';
    std::cerr << "alpha " << alpha << "  success " << success << "  T " << score << '\n';
  }
  if (!out.empty()) write_text(out, csv.str());
  std::cout << csv.str();
  return kExitOk;
}

// ---------------------------------------------------------------- epoch-titration

int cmd_epoch_titration(const std::string& dir, const ScanArgs& a,
                        const std::optional<std::uint64_t>& seed_flag, std::size_t threads,
                        const std::string& out) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  if (!fs::is_directory(dir)) throw UsageFailure("checkpoint directory '" + dir + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".nrtm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageFailure("no checkpoints in '" + dir + "'");

  const auto sigmas = parse_list(a.sigma_grid, "--sigma-grid");
  const auto gammas = parse_list(a.gammas, "--gamma");
  nrt::NoiseConfig cfg;
  cfg.n_samples = a.samples;
  cfg.seed = seed;
  cfg.mode = nrt::NoiseMode::PureNoise;
  cfg.threads = threads;

  std::ostringstream csv;
  csv << "checkpoint,sigma,gamma,score,n_samples,mode,model_id\n";
  json summary = json::array();
  for (const auto& f : files) {
    std::optional<nrt::Model> model;
    try {
      model.emplace(nrt::load_model(f, {.strip_metadata = true}));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping '" << f.string() << "': " << e.what() << '\n';
      continue;
    }
    const auto curve = nrt::titration_curve(*model, sigmas, gammas, cfg, nullptr, f.stem().string());
    std::istringstream rows(curve.to_csv(false));
    for (std::string line; std::getline(rows, line);) csv << f.stem().string() << ',' << line << '\n';
    cfg.sigma = a.operating_sigma;
    summary.push_back({{"checkpoint", f.stem().string()},
                       {"score_at_operating_sigma", nrt::titration_score(*model, cfg, gammas.front())}});
  }
  if (!out.empty()) write_text(out, csv.str());
  json report = {{"schema_version", nrt::kReportSchemaVersion},
                 {"operating_sigma", a.operating_sigma},
                 {"gamma", gammas.front()},
                 {"checkpoints", summary}};
  if (summary.size() >= 2) {
    report["final_at_or_below_first"] =
        summary.back()["score_at_operating_sigma"].get<double>() <=
        summary.front()["score_at_operating_sigma"].get<double>();
  }
  std::cout << report.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- walk

int cmd_walk(const std::string& model_path, const DataArgs& data, const std::string& sigmas_s,
             std::size_t walks, std::optional<std::size_t> target,
             const std::optional<std::uint64_t>& seed_flag, std::size_t threads,
             const std::string& out_prefix) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  const nrt::Model model = load_or_scan_fail(model_path, {.strip_metadata = true});
  const nrt::Dataset test = data.test();
  const auto sigmas = parse_list(sigmas_s, "--sigmas");

  const auto basis = nrt::fit_pca(nrt::clean_logits(model, test));
  const auto centroids = nrt::class_centroids(model, test);
  std::ostringstream csv;
  json checks = json::array();
  std::vector<bool> seen(model.num_classes(), false);
  bool header = true;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const std::size_t y = test.labels[i];
    if (seen[y] || (target && y == *target)) continue;
    seen[y] = true;
    const auto walk = nrt::noise_walk(model, test.images[i], sigmas, walks,
                                      nrt::derive_seed(seed, i), &basis, i, y, threads);
    csv << walk.to_csv(header);
    header = false;
    if (target) {
      const auto s = nrt::sink_check(walk, centroids, *target);
      checks.push_back(json{{"image_id", i}, {"true_class", y}, {"attracted", s.attracted()},
                        {"distance_to_target", s.distance_to_target},
                        {"distance_to_own", s.distance_to_own}, {"nearest_class", s.nearest_class}});
    }
  }
  write_text(out_prefix + "_walks.csv", csv.str());
  write_text(out_prefix + "_basis.json", basis.to_json().dump(2));
  json report = {{"schema_version", nrt::kReportSchemaVersion},
                 {"walks_csv", out_prefix + "_walks.csv"},
                 {"basis_json", out_prefix + "_basis.json"},
                 {"walks", walks},
                 {"seed", seed}};
  if (target) report["sink_checks"] = checks;
  std::cout << report.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- calibrate

int cmd_calibrate(const std::string& baseline_path, const std::vector<std::string>& backdoored,
                  const ScanArgs& a, double max_baseline,
                  const std::optional<std::uint64_t>& seed_flag, std::size_t threads) {
  const std::uint64_t seed = resolve_seed(seed_flag);
  const auto sigmas = parse_list(a.sigma_grid, "--sigma-grid");
  const auto gammas = parse_list(a.gammas, "--gamma");
  nrt::NoiseConfig cfg;
  cfg.n_samples = a.samples;
  cfg.seed = seed;
  cfg.threads = threads;
  const auto base_curve = nrt::titration_curve(
      load_or_scan_fail(baseline_path, {.strip_metadata = true}), sigmas, gammas, cfg);
  std::vector<nrt::TitrationCurve> bd;
  for (const auto& p : backdoored) {
    bd.push_back(nrt::titration_curve(load_or_scan_fail(p, {.strip_metadata = true}), sigmas, gammas, cfg));
  }
  const auto c = nrt::calibrate_operating_sigma(base_curve, bd, 0, max_baseline);
  json out = {{"schema_version", nrt::kReportSchemaVersion},
              {"feasible", c.feasible},
              {"operating_sigma", c.sigma},
              {"gamma", gammas.front()},
              {"baseline_score", c.baseline_score},
              {"weakest_backdoored_score", c.backdoored_score},
              {"sigma_grid", sigmas}};
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-response titration for backdoor detection in image classifiers"};
  app.footer(kExitHelp);
  app.set_version_flag("--version", nrt::kToolVersion);
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Random seed (falls back to NRT_SEED)");
    cmd->add_option("--threads", threads, "Worker threads (0 = all cores)");
  };

  // train
  DataArgs train_data;
  TriggerArgs train_trig;
  TrainArgs train_args;
  std::optional<double> poison_fraction;
  std::size_t checkpoint_every = 0;
  std::string checkpoint_dir, train_out, record_path;
  auto* train = app.add_subcommand("train", "Train a classifier, optionally on poisoned data");
  train_data.add(train, true);
  train_trig.add(train, true);
  train_args.add(train);
  add_common(train);
  auto* pf = train->add_option("--poison-fraction", poison_fraction, "Fraction of training items to poison");
  train->add_option("--checkpoint-every", checkpoint_every, "Save a checkpoint every N epochs");
  train->add_option("--checkpoint-dir", checkpoint_dir, "Checkpoint directory");
  train->add_option("--out", train_out, "Output model file")->required();
  train->add_option("--record", record_path, "TrainRecord CSV (default <out>.train.csv)");
  for (const char* f : {"--trigger", "--trigger-size", "--stencil", "--alpha", "--target-class"}) {
    train->get_option(f)->needs(pf);
  }

  // scan
  std::string scan_model, curve_out;
  ScanArgs scan_args;
  DataArgs scan_data;
  auto* scan = app.add_subcommand("scan", "Titration scan and backdoor verdict");
  scan->add_option("model", scan_model, "Model file")->required();
  scan_args.add(scan, true);
  scan_data.add(scan, false);
  add_common(scan);
  scan->add_option("--curve-out", curve_out, "Write the titration curve CSV here");

  // localize
  std::string loc_model, loc_prefix = "gradient_map", loc_reduction = "signed", loc_mask;
  DataArgs loc_data;
  std::size_t loc_images = 10, loc_avg = 20;
  double loc_sigma = 0.6;
  bool loc_truth = false;
  auto* loc = app.add_subcommand("localize", "Implicit gradient map of trigger pixels");
  loc->add_option("model", loc_model, "Model file")->required();
  loc_data.add(loc, false);
  add_common(loc);
  loc->add_option("--images", loc_images, "Number of test images to average");
  loc->add_option("--sigma", loc_sigma, "Noise level (0 = explicit map)");
  loc->add_option("--n-avg", loc_avg, "Noise draws per image");
  loc->add_option("--reduction", loc_reduction, "Reduction over classes")->check(CLI::IsMember({"signed", "abs"}));
  loc->add_option("--out-prefix", loc_prefix, "Writes <prefix>.csv and <prefix>.json");
  auto* tt = loc->add_flag("--truth-trigger", loc_truth, "Score against the trigger embedded in the model");
  loc->add_option("--truth-mask", loc_mask, "Score against a PGM mask")->excludes(tt);

  // ablate
  DataArgs abl_data;
  TriggerArgs abl_trig;
  TrainArgs abl_train;
  ScanArgs abl_scan;
  std::string alphas = "0,0.05,0.1,0.2,0.3,0.5,1", abl_out;
  double abl_fraction = 0.1;
  auto* abl = app.add_subcommand("ablate", "Trigger-intensity sweep: success rate vs T-score");
  abl_data.add(abl, true);
  abl_trig.add(abl, false);
  abl_train.add(abl);
  abl_scan.add(abl, false);
  add_common(abl);
  abl->add_option("--alphas", alphas, "Comma-separated trigger intensities");
  abl->add_option("--poison-fraction", abl_fraction, "Poison fraction");
  abl->add_option("--out", abl_out, "CSV output");

  // epoch-titration
  std::string et_dir, et_out;
  ScanArgs et_scan;
  auto* et = app.add_subcommand("epoch-titration", "Titration curves across training checkpoints");
  et->add_option("--checkpoint-dir", et_dir, "Directory of checkpoints from train")->required();
  et_scan.add(et, true);
  add_common(et);
  et->add_option("--out", et_out, "CSV output");

  // walk
  std::string walk_model, walk_prefix = "walk", walk_sigmas = "0,0.5,1,1.5,2,2.5,3,4,5,6,7,8,9,10";
  DataArgs walk_data;
  std::size_t walk_n = 200;
  std::optional<std::size_t> walk_target;
  auto* walk = app.add_subcommand("walk", "Noise walks of logits projected by PCA");
  walk->add_option("model", walk_model, "Model file")->required();
  walk_data.add(walk, false);
  add_common(walk);
  walk->add_option("--sigmas", walk_sigmas, "Ascending noise checkpoints starting at 0");
  walk->add_option("--walks", walk_n, "Walks averaged per image");
  walk->add_option("--target-class", walk_target, "Class for the sink check");
  walk->add_option("--out-prefix", walk_prefix, "Writes <prefix>_walks.csv and <prefix>_basis.json");

  // calibrate
  std::string cal_base;
  std::vector<std::string> cal_bd;
  ScanArgs cal_scan;
  double cal_max = 0.25;
  auto* cal = app.add_subcommand("calibrate", "Choose the operating sigma from reference models");
  cal->add_option("--baseline", cal_base, "Clean reference model")->required();
  cal->add_option("--backdoored", cal_bd, "Backdoored reference models")->required();
  cal_scan.add(cal, true);
  cal->add_option("--max-baseline", cal_max, "Largest acceptable baseline T-score");
  add_common(cal);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      return cmd_train(train_data, train_trig, train_args, poison_fraction, seed, checkpoint_every,
                       checkpoint_dir, train_out, record_path);
    }
    if (*scan) return cmd_scan(scan_model, scan_args, scan_data, seed, threads, curve_out);
    if (*loc) {
      return cmd_localize(loc_model, loc_data, loc_images, loc_sigma, loc_avg, loc_reduction, seed,
                          threads, loc_prefix, loc_truth, loc_mask);
    }
    if (*abl) {
      return cmd_ablate(abl_data, abl_trig, abl_train, alphas, abl_fraction, abl_scan, seed,
                        threads, abl_out);
    }
    if (*et) return cmd_epoch_titration(et_dir, et_scan, seed, threads, et_out);
    if (*walk) {
      return cmd_walk(walk_model, walk_data, walk_sigmas, walk_n, walk_target, seed, threads,
                      walk_prefix);
    }
    if (*cal) return cmd_calibrate(cal_base, cal_bd, cal_scan, cal_max, seed, threads);
  } catch (const UsageFailure& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const ScanFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitScan;
  } catch (const nrt::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nrt::IdxError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
