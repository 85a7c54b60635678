#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrt/data.hpp"
#include "nrt/model.hpp"

namespace nrt {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  /// Save a checkpoint every N epochs (0 disables); files go to checkpoint_dir.
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean training cross-entropy
  double clean_accuracy = 0.0;
  std::optional<double> trigger_success;
  std::string checkpoint;
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;

  /// epoch,loss,clean_acc,trigger_success (empty cell when not measured).
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch);
  std::size_t epoch;
  std::size_t batch;
};

/// Mini-batch SGD with momentum on cross-entropy. The shuffle order of every
/// epoch derives from cfg.seed, so identical inputs give identical runs.
TrainRecord train(Model& model, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg, const std::optional<TriggerSpec>& trigger = std::nullopt,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

double evaluate_accuracy(const Model& model, const Dataset& d);

/// Over items whose true label differs from the target, the fraction sent to
/// the target once the trigger is applied.
double trigger_success_rate(const Model& model, const Dataset& d, const TriggerSpec& t);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch);

}  // namespace nrt
