#include "nrt/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nrt/rng.hpp"

namespace nrt {

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning rate must be finite and non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0,1)");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) {
    throw ValidationError("checkpointing needs a checkpoint directory");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},         {"batch_size", batch_size},
          {"learning_rate", learning_rate}, {"momentum", momentum},
          {"seed", seed},             {"checkpoint_every", checkpoint_every}};
}

std::string TrainRecord::to_csv() const {
  std::ostringstream os;
  os.precision(8);
  os << "epoch,loss,clean_acc,trigger_success\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.loss << ',' << e.clean_accuracy << ',';
    if (e.trigger_success) os << *e.trigger_success;
    os << '\n';
  }
  return os.str();
}

void TrainRecord::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << to_csv();
}

TrainingDiverged::TrainingDiverged(std::size_t e, std::size_t b)
    : std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(e) +
                         ", batch " + std::to_string(b)),
      epoch(e),
      batch(b) {}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%03zu.nrtm", epoch);
  return dir / name;
}

TrainRecord train(Model& model, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg, const std::optional<TriggerSpec>& trigger,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  if (train_set.image_shape() != model.input_shape()) {
    throw DimensionError("training images " + shape_string(train_set.image_shape()) +
                         " do not match model input " + shape_string(model.input_shape()));
  }
  if (!test_set.empty() && test_set.image_shape() != model.input_shape()) {
    throw DimensionError("test images do not match model input");
  }
  if (cfg.checkpoint_every > 0) std::filesystem::create_directories(cfg.checkpoint_dir);

  model.set_requires_grad(true);
  model.zero_grad();
  std::vector<std::vector<float>> velocity;
  for (const auto& p : model.params()) velocity.emplace_back(p.tensor.size(), 0.0f);

  TrainRecord record;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(cfg.seed, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        Var x = tape.constant(train_set.images[order[i]]);
        Var loss = cross_entropy(model.forward_train(tape, x), train_set.labels[order[i]]);
        batch_loss += loss.value()[0];
        tape.backward(loss);
      }
      if (!std::isfinite(batch_loss)) {
        model.set_requires_grad(false);
        throw TrainingDiverged(epoch, batch_index);
      }
      loss_sum += batch_loss;
      const auto inv = static_cast<float>(1.0 / static_cast<double>(end - start));
      const auto lr = static_cast<float>(cfg.learning_rate);
      const auto mu = static_cast<float>(cfg.momentum);
      for (std::size_t p = 0; p < model.params().size(); ++p) {
        Tensor& t = model.params()[p].tensor;
        auto g = t.grad();
        auto w = t.data();
        auto& v = velocity[p];
        for (std::size_t j = 0; j < w.size(); ++j) {
          v[j] = mu * v[j] + g[j] * inv;
          w[j] -= lr * v[j];
        }
        t.zero_grad();
      }
    }

    EpochRecord e;
    e.epoch = epoch;
    e.loss = loss_sum / static_cast<double>(order.size());
    e.clean_accuracy = test_set.empty() ? 0.0 : evaluate_accuracy(model, test_set);
    if (trigger && !test_set.empty()) e.trigger_success = trigger_success_rate(model, test_set, *trigger);
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      const auto path = checkpoint_path(cfg.checkpoint_dir, epoch);
      model.metadata()["epoch"] = epoch;
      save_model(model, path);
      e.checkpoint = path.string();
    }
    record.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  model.set_requires_grad(false);
  for (auto& p : model.params()) p.tensor.clear_grad();
  model.metadata()["epoch"] = cfg.epochs;
  return record;
}

double evaluate_accuracy(const Model& model, const Dataset& d) {
  if (d.empty()) throw ValidationError("cannot evaluate accuracy on an empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (argmax(model.forward_logits(d.images[i]).data()) == d.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

double trigger_success_rate(const Model& model, const Dataset& d, const TriggerSpec& t) {
  if (d.empty()) throw ValidationError("cannot measure trigger success on an empty dataset");
  std::size_t eligible = 0, hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] == t.target) continue;
    ++eligible;
    if (argmax(model.forward_logits(apply_trigger(d.images[i], t)).data()) == t.target) ++hits;
  }
  if (eligible == 0) throw ValidationError("no items outside the target class");
  return static_cast<double>(hits) / static_cast<double>(eligible);
}

}  // namespace nrt
