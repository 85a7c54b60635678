#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nrt/tensor.hpp"

namespace nrt {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Records primitive operations for reverse-mode differentiation.
///
/// A tape is single-owner. Parallel evaluations against one frozen model each
/// use their own tape; parameters enter as `constant` leaves (never written) or,
/// in training, as `param` leaves whose Tensor::grad buffers receive gradients.
///
/// backward() recomputes every intermediate gradient from scratch, then adds
/// leaf gradients into their accumulators. Calling backward() twice without
/// zero_grad() therefore accumulates at the leaves.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient. The tensor must outlive the tape.
  Var constant(const Tensor& t);
  /// Leaf referencing an external tensor; when t.requires_grad() its grad()
  /// buffer accumulates. The tensor must outlive the tape.
  Var param(Tensor& t);
  /// Leaf owned by the tape; gradient readable through grad().
  Var input(Tensor t, bool requires_grad);

  void backward(Var output);

  /// Accumulated gradient of an owned input leaf, or the last-pass gradient of
  /// an intermediate node. Empty when no gradient reached it.
  std::span<const float> grad(Var v) const;

  /// Resets accumulated leaf gradients owned by the tape.
  void zero_grad();
  void clear();
  std::size_t size() const { return nodes_.size(); }

  // Op-authoring interface.
  Var push(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);
  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Scratch gradient of node `id` for the running pass, zero-allocated on demand.
  std::span<float> pass_grad(std::size_t id);
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }
  std::vector<std::uint32_t>& aux(std::size_t id) { return nodes_[id].aux; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* grad_sink = nullptr;
    std::vector<std::size_t> parents;
    bool needs_grad = false;
    bool leaf = false;
    BackwardFn backward;
    std::vector<float> pass_grad;
    std::vector<float> leaf_grad;
    std::vector<std::uint32_t> aux;
  };
  std::vector<Node> nodes_;
};

// Taped primitives; forward values match the untaped versions in tensor.hpp.
Var conv2d(Var input, Var kernels, Var bias, int stride = 1, int padding = 0);
Var dense(Var input, Var weights, Var bias);
Var relu(Var input);
Var maxpool2d(Var input, int window, int stride);
Var flatten(Var input);
Var softmax(Var logits);
/// Scalar [1] holding element `index` of v.
Var select(Var v, std::size_t index);
/// Scalar [1] holding the sum of v.
Var sum(Var v);
Var add(Var a, Var b);
Var scale(Var v, float factor);
/// Scalar [1] cross-entropy of logits against a class label.
Var cross_entropy(Var logits, std::size_t label);

}  // namespace nrt
