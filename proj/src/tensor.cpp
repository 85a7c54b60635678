#include "nrt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kernels.hpp"

namespace nrt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

float& Tensor::at(std::size_t c, std::size_t h, std::size_t w) {
  return data_[(c * shape_[1] + h) * shape_[2] + w];
}

float Tensor::at(std::size_t c, std::size_t h, std::size_t w) const {
  return data_[(c * shape_[1] + h) * shape_[2] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

std::span<float> Tensor::grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0f);
  return *grad_;
}

std::span<const float> Tensor::grad() const {
  if (!grad_) throw UsageError("tensor has no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
              int padding) {
  if (input.rank() != 3 || kernels.rank() != 4 || bias.rank() != 1) {
    throw DimensionError("conv2d expects input [C,H,W], kernels [O,C,kH,kW], bias [O]");
  }
  if (kernels.dim(1) != input.dim(0)) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernels.dim(1)) +
                         " input channels, input has " + std::to_string(input.dim(0)));
  }
  if (bias.dim(0) != kernels.dim(0)) throw DimensionError("conv2d: bias length mismatch");
  const auto g = kernels::conv_geometry(input.dim(0), input.dim(1), input.dim(2), kernels.dim(0),
                                        kernels.dim(2), kernels.dim(3), stride, padding);
  Tensor out({g.out_channels, g.out_h, g.out_w});
  kernels::conv2d_forward(g, input.data().data(), kernels.data().data(), bias.data().data(),
                          out.data().data());
  return out;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2 || bias.rank() != 1) {
    throw DimensionError("dense expects weights [m,n] and bias [m]");
  }
  if (input.size() != weights.dim(1) || bias.dim(0) != weights.dim(0)) {
    throw DimensionError("dense: input length " + std::to_string(input.size()) +
                         " vs weights " + shape_string(weights.shape()));
  }
  Tensor out({weights.dim(0)});
  kernels::dense_forward(weights.dim(0), weights.dim(1), input.data().data(),
                         weights.data().data(), bias.data().data(), out.data().data());
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  out.clear_grad();
  out.set_requires_grad(false);
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor maxpool2d(const Tensor& input, int window, int stride) {
  if (input.rank() != 3) throw DimensionError("maxpool2d expects [C,H,W]");
  const auto g = kernels::pool_geometry(input.dim(0), input.dim(1), input.dim(2), window, stride);
  Tensor out({g.channels, g.out_h, g.out_w});
  kernels::maxpool_forward(g, input.data().data(), out.data().data(), nullptr);
  return out;
}

std::vector<double> softmax(std::span<const float> logits) {
  if (logits.empty()) throw DimensionError("softmax of empty vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(static_cast<double>(logits[k]) - top);
    total += p[k];
  }
  for (double& v : p) v /= total;
  return p;
}

Tensor softmax(const Tensor& logits) {
  const auto p = softmax(logits.data());
  std::vector<float> out(p.begin(), p.end());
  const std::size_t n = out.size();
  return Tensor({n}, std::move(out));
}

double cross_entropy_loss(std::span<const float> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (float z : logits) total += std::exp(static_cast<double>(z) - top);
  return std::log(total) + top - static_cast<double>(logits[label]);
}

}  // namespace nrt
