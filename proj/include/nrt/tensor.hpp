#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nrt/errors.hpp"

namespace nrt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float tensor with an optional gradient buffer.
///
/// Values are fixed after construction apart from explicit element writes;
/// the gradient buffer is the only state that autodiff mutates.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::size_t c, std::size_t h, std::size_t w);
  float at(std::size_t c, std::size_t h, std::size_t w) const;

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return grad_.has_value(); }
  /// Gradient buffer; allocated (zeroed) on first access.
  std::span<float> grad();
  std::span<const float> grad() const;
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<float>> grad_;
};

// Untaped forward primitives. These are the reference semantics; the taped
// versions in autodiff.hpp compute identical values.

/// Cross-correlation. input [C_in,H,W], kernels [C_out,C_in,kH,kW], bias [C_out].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              int stride = 1, int padding = 0);

/// weights [m,n] times input [n] plus bias [m].
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

Tensor relu(const Tensor& input);

/// Per-channel windowed maximum over [C,H,W].
Tensor maxpool2d(const Tensor& input, int window, int stride);

/// Numerically stable softmax over a flat vector, evaluated in double.
std::vector<double> softmax(std::span<const float> logits);
Tensor softmax(const Tensor& logits);

/// -log softmax(logits)[label] via log-sum-exp.
double cross_entropy_loss(std::span<const float> logits, std::size_t label);

}  // namespace nrt
