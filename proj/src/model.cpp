#include "nrt/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace nrt {

namespace {

struct LayerIo {
  Shape in;
  Shape out;
};

// Propagates shapes through the stack, validating each stage.
std::vector<LayerIo> infer_shapes(const Shape& input, const std::vector<LayerSpec>& layers) {
  std::vector<LayerIo> io;
  Shape cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    Shape next;
    switch (l.kind) {
      case LayerKind::Conv: {
        if (cur.size() != 3) throw ConfigError(where + "conv needs a [C,H,W] input");
        const long k = l.kernel;
        const long ph = static_cast<long>(cur[1]) + 2L * l.padding;
        const long pw = static_cast<long>(cur[2]) + 2L * l.padding;
        if (k < 1 || l.stride < 1 || l.units == 0 || k > ph || k > pw) {
          throw ConfigError(where + "conv kernel " + std::to_string(k) + " does not fit input " +
                            shape_string(cur));
        }
        next = {l.units, static_cast<std::size_t>((ph - k) / l.stride + 1),
                static_cast<std::size_t>((pw - k) / l.stride + 1)};
        break;
      }
      case LayerKind::MaxPool: {
        if (cur.size() != 3) throw ConfigError(where + "maxpool needs a [C,H,W] input");
        const auto w = static_cast<std::size_t>(l.kernel);
        if (l.kernel < 1 || l.stride < 1 || w > cur[1] || w > cur[2]) {
          throw ConfigError(where + "pool window does not fit input " + shape_string(cur));
        }
        next = {cur[0], (cur[1] - w) / static_cast<std::size_t>(l.stride) + 1,
                (cur[2] - w) / static_cast<std::size_t>(l.stride) + 1};
        break;
      }
      case LayerKind::Relu:
        next = cur;
        break;
      case LayerKind::Flatten:
        next = {shape_numel(cur)};
        break;
      case LayerKind::Dense:
        if (cur.size() != 1) throw ConfigError(where + "dense needs a flat input");
        if (l.units == 0) throw ConfigError(where + "dense needs units >= 1");
        next = {l.units};
        break;
    }
    io.push_back({cur, next});
    cur = next;
  }
  return io;
}

}  // namespace

Model::Model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t num_classes)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), num_classes_(num_classes) {
  if (input_shape_.size() != 3) throw ConfigError("model input shape must be [C,H,W]");
  if (num_classes_ < 2) throw ConfigError("model needs at least two classes");
  const auto io = infer_shapes(input_shape_, layers_);
  const Shape out = io.empty() ? input_shape_ : io.back().out;
  if (out != Shape{num_classes_}) {
    throw ConfigError("layer stack produces " + shape_string(out) + ", expected [" +
                      std::to_string(num_classes_) + "]");
  }
  std::size_t conv_i = 0, dense_i = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    if (l.kind == LayerKind::Conv) {
      const std::string p = "conv" + std::to_string(++conv_i);
      const auto k = static_cast<std::size_t>(l.kernel);
      params_.push_back({p + ".weight", Tensor({l.units, io[i].in[0], k, k})});
      params_.push_back({p + ".bias", Tensor({l.units})});
    } else if (l.kind == LayerKind::Dense) {
      const std::string p = "fc" + std::to_string(++dense_i);
      params_.push_back({p + ".weight", Tensor({l.units, io[i].in[0]})});
      params_.push_back({p + ".bias", Tensor({l.units})});
    }
  }
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void Model::set_requires_grad(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Model::check_input(const Tensor& x) const {
  if (x.shape() != input_shape_) {
    throw DimensionError("model expects input " + shape_string(input_shape_) + ", got " +
                         shape_string(x.shape()));
  }
}

Tensor Model::forward_logits(const Tensor& x) const {
  check_input(x);
  Tensor cur = x;
  cur.set_requires_grad(false);
  cur.clear_grad();
  std::size_t p = 0;
  for (const LayerSpec& l : layers_) {
    switch (l.kind) {
      case LayerKind::Conv:
        cur = nrt::conv2d(cur, params_[p].tensor, params_[p + 1].tensor, l.stride, l.padding);
        p += 2;
        break;
      case LayerKind::Relu:
        for (float& v : cur.data()) v = v > 0.0f ? v : 0.0f;
        break;
      case LayerKind::MaxPool:
        cur = nrt::maxpool2d(cur, l.kernel, l.stride);
        break;
      case LayerKind::Flatten:
        cur = cur.reshaped({cur.size()});
        break;
      case LayerKind::Dense:
        cur = nrt::dense(cur, params_[p].tensor, params_[p + 1].tensor);
        p += 2;
        break;
    }
  }
  return cur;
}

std::vector<Tensor> Model::forward_logits(std::span<const Tensor> xs) const {
  std::vector<Tensor> out;
  out.reserve(xs.size());
  for (const Tensor& x : xs) out.push_back(forward_logits(x));
  return out;
}

template <typename ParamLeaf>
Var Model::forward_impl(Var x, ParamLeaf&& leaf) const {
  check_input(x.value());
  Var cur = x;
  std::size_t p = 0;
  for (const LayerSpec& l : layers_) {
    switch (l.kind) {
      case LayerKind::Conv:
        cur = nrt::conv2d(cur, leaf(p), leaf(p + 1), l.stride, l.padding);
        p += 2;
        break;
      case LayerKind::Relu:
        cur = nrt::relu(cur);
        break;
      case LayerKind::MaxPool:
        cur = nrt::maxpool2d(cur, l.kernel, l.stride);
        break;
      case LayerKind::Flatten:
        cur = nrt::flatten(cur);
        break;
      case LayerKind::Dense:
        cur = nrt::dense(cur, leaf(p), leaf(p + 1));
        p += 2;
        break;
    }
  }
  return cur;
}

Var Model::forward(Tape& tape, Var x) const {
  return forward_impl(x, [&](std::size_t i) { return tape.constant(params_[i].tensor); });
}

Var Model::forward_train(Tape& tape, Var x) {
  return forward_impl(x, [&](std::size_t i) { return tape.param(params_[i].tensor); });
}

void init_fan_in_uniform(Model& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto& params = model.params();
  for (std::size_t i = 0; i + 1 < params.size(); i += 2) {
    Tensor& w = params[i].tensor;
    const std::size_t fan_in = w.size() / w.dim(0);
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (float& v : w.data()) v = dist(rng);
    for (float& v : params[i + 1].tensor.data()) v = dist(rng);
  }
}

Model build_small_cnn(const Shape& input_shape, std::size_t num_classes, std::uint64_t seed) {
  if (input_shape.size() != 3) throw ConfigError("input shape must be [C,H,W]");
  if (input_shape[1] < 16 || input_shape[2] < 16) {
    throw ConfigError("small CNN needs H,W >= 16 for two 5x5 conv + pool stages, got " +
                      shape_string(input_shape));
  }
  Model m(input_shape,
          {LayerSpec::conv(6, 5), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::conv(16, 5), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::flatten(), LayerSpec::dense(120), LayerSpec::relu(),
           LayerSpec::dense(84), LayerSpec::relu(), LayerSpec::dense(num_classes)},
          num_classes);
  init_fan_in_uniform(m, seed);
  return m;
}

std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Prediction predict(const Model& model, const Tensor& x) {
  Prediction p;
  p.logits = model.forward_logits(x);
  p.probs = softmax(p.logits.data());
  p.predicted_class = argmax(p.logits.data());
  p.confidence = p.probs[p.predicted_class];
  return p;
}

}  // namespace nrt
