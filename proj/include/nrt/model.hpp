#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrt/autodiff.hpp"
#include "nrt/tensor.hpp"

namespace nrt {

enum class LayerKind { Conv, Relu, MaxPool, Flatten, Dense };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t units = 0;  // conv output channels or dense outputs
  int kernel = 0;
  int stride = 1;
  int padding = 0;

  static LayerSpec conv(std::size_t channels, int kernel, int stride = 1, int padding = 0) {
    return {LayerKind::Conv, channels, kernel, stride, padding};
  }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec maxpool(int window, int stride) {
    return {LayerKind::MaxPool, 0, window, stride, 0};
  }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }
  static LayerSpec dense(std::size_t units) { return {LayerKind::Dense, units}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Feed-forward classifier: an ordered layer stack and its parameters.
///
/// Evaluation is a pure function of (parameters, input). The model is only
/// mutated by training; analysis code takes it by const reference.
class Model {
 public:
  Model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t num_classes);

  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  std::size_t parameter_count() const;
  void set_requires_grad(bool on);
  void zero_grad();

  /// Free-form training metadata carried through serialization.
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  Tensor forward_logits(const Tensor& x) const;
  std::vector<Tensor> forward_logits(std::span<const Tensor> xs) const;

  /// Records the forward pass with parameters as constant leaves.
  Var forward(Tape& tape, Var x) const;
  /// Records the forward pass with parameters as gradient-receiving leaves.
  Var forward_train(Tape& tape, Var x);

 private:
  template <typename ParamLeaf>
  Var forward_impl(Var x, ParamLeaf&& leaf) const;
  void check_input(const Tensor& x) const;

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::size_t num_classes_;
  std::vector<NamedTensor> params_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

/// conv(6,5x5)-relu-pool2-conv(16,5x5)-relu-pool2-flatten-dense(120)-relu-
/// dense(84)-relu-dense(K), fan-in scaled uniform init.
Model build_small_cnn(const Shape& input_shape, std::size_t num_classes, std::uint64_t seed);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
void init_fan_in_uniform(Model& model, std::uint64_t seed);

struct Prediction {
  Tensor logits;
  std::vector<double> probs;
  std::size_t predicted_class = 0;
  double confidence = 0.0;
};

Prediction predict(const Model& model, const Tensor& x);
std::size_t argmax(std::span<const float> v);
std::size_t argmax(std::span<const double> v);

// Serialization --------------------------------------------------------------

inline constexpr std::uint32_t kModelFormatVersion = 1;

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ModelVersionError : public ModelFormatError {
 public:
  using ModelFormatError::ModelFormatError;
};
class ModelChecksumError : public ModelFormatError {
 public:
  using ModelFormatError::ModelFormatError;
};
class ModelTruncatedError : public ModelFormatError {
 public:
  using ModelFormatError::ModelFormatError;
};

struct LoadOptions {
  /// Leave Model::metadata empty. Detection code loads this way so it cannot
  /// see ground-truth trigger information.
  bool strip_metadata = false;
};

std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes, LoadOptions options = {});
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path, LoadOptions options = {});

/// 64-bit FNV-1a, used as the file checksum and as a model content id.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t v);

nlohmann::json layer_to_json(const LayerSpec& layer);
LayerSpec layer_from_json(const nlohmann::json& j);

}  // namespace nrt
