#include "nrt/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"

namespace nrt {

const Tensor& Var::value() const {
  if (tape == nullptr) throw UsageError("Var is not bound to a tape");
  return tape->value(id);
}

Var Tape::constant(const Tensor& t) {
  Node n;
  n.external = &t;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(Tensor& t) {
  Node n;
  n.external = &t;
  n.leaf = true;
  n.needs_grad = t.requires_grad();
  n.grad_sink = t.requires_grad() ? &t : nullptr;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::input(Tensor t, bool requires_grad) {
  Node n;
  n.owned = std::move(t);
  n.leaf = true;
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = std::any_of(parents.begin(), parents.end(),
                             [this](std::size_t p) { return nodes_[p].needs_grad; });
  n.parents = std::move(parents);
  n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external != nullptr ? *n.external : n.owned;
}

std::span<float> Tape::pass_grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.pass_grad.empty()) n.pass_grad.assign(value(id).size(), 0.0f);
  return n.pass_grad;
}

void Tape::backward(Var output) {
  if (output.tape != this) throw UsageError("backward: variable belongs to another tape");
  if (value(output.id).size() != 1) {
    throw UsageError("backward requires a scalar output, got shape " +
                     shape_string(value(output.id).shape()));
  }
  for (Node& n : nodes_) n.pass_grad.clear();
  if (!nodes_[output.id].needs_grad) return;
  pass_grad(output.id)[0] = 1.0f;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.pass_grad.empty()) continue;
    if (n.leaf) {
      std::span<float> dst;
      if (n.grad_sink != nullptr) {
        dst = n.grad_sink->grad();
      } else {
        if (n.leaf_grad.empty()) n.leaf_grad.assign(n.pass_grad.size(), 0.0f);
        dst = n.leaf_grad;
      }
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.pass_grad[j];
    } else {
      n.backward(*this, i);
    }
  }
}

std::span<const float> Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.leaf && n.grad_sink == nullptr) return n.leaf_grad;
  if (n.leaf) return n.grad_sink->grad();
  return n.pass_grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    std::fill(n.leaf_grad.begin(), n.leaf_grad.end(), 0.0f);
    n.pass_grad.clear();
  }
}

void Tape::clear() { nodes_.clear(); }

namespace {

Tape& same_tape(std::initializer_list<Var> vars) {
  Tape* t = vars.begin()->tape;
  for (const Var& v : vars) {
    if (v.tape == nullptr || v.tape != t) throw UsageError("operands recorded on different tapes");
  }
  return *t;
}

}  // namespace

Var conv2d(Var input, Var kernels, Var bias, int stride, int padding) {
  Tape& tape = same_tape({input, kernels, bias});
  Tensor out = nrt::conv2d(input.value(), kernels.value(), bias.value(), stride, padding);
  const Tensor& in = input.value();
  const Tensor& k = kernels.value();
  const auto g = kernels::conv_geometry(in.dim(0), in.dim(1), in.dim(2), k.dim(0), k.dim(2),
                                        k.dim(3), stride, padding);
  return tape.push(std::move(out), {input.id, kernels.id, bias.id},
                   [g](Tape& t, std::size_t self) {
                     const auto& p = t.parents(self);
                     const float* go = t.pass_grad(self).data();
                     if (t.needs_grad(p[0])) {
                       kernels::conv2d_backward_input(g, go, t.value(p[1]).data().data(),
                                                      t.pass_grad(p[0]).data());
                     }
                     float* gk = t.needs_grad(p[1]) ? t.pass_grad(p[1]).data() : nullptr;
                     float* gb = t.needs_grad(p[2]) ? t.pass_grad(p[2]).data() : nullptr;
                     if (gk != nullptr || gb != nullptr) {
                       kernels::conv2d_backward_params(g, go, t.value(p[0]).data().data(), gk, gb);
                     }
                   });
}

Var dense(Var input, Var weights, Var bias) {
  Tape& tape = same_tape({input, weights, bias});
  Tensor out = nrt::dense(input.value(), weights.value(), bias.value());
  const std::size_t m = weights.value().dim(0);
  const std::size_t n = weights.value().dim(1);
  return tape.push(std::move(out), {input.id, weights.id, bias.id},
                   [m, n](Tape& t, std::size_t self) {
                     const auto& p = t.parents(self);
                     const float* go = t.pass_grad(self).data();
                     if (t.needs_grad(p[0])) {
                       kernels::dense_backward_input(m, n, go, t.value(p[1]).data().data(),
                                                     t.pass_grad(p[0]).data());
                     }
                     float* gw = t.needs_grad(p[1]) ? t.pass_grad(p[1]).data() : nullptr;
                     float* gb = t.needs_grad(p[2]) ? t.pass_grad(p[2]).data() : nullptr;
                     if (gw != nullptr || gb != nullptr) {
                       kernels::dense_backward_params(m, n, go, t.value(p[0]).data().data(), gw, gb);
                     }
                   });
}

Var relu(Var input) {
  Tape& tape = *input.tape;
  Tensor out = nrt::relu(input.value());
  return tape.push(std::move(out), {input.id}, [](Tape& t, std::size_t self) {
    const std::size_t src = t.parents(self)[0];
    if (!t.needs_grad(src)) return;
    auto go = t.pass_grad(self);
    auto gi = t.pass_grad(src);
    const auto x = t.value(src).data();
    // Subgradient at exactly zero is zero.
    for (std::size_t i = 0; i < gi.size(); ++i) {
      if (x[i] > 0.0f) gi[i] += go[i];
    }
  });
}

Var maxpool2d(Var input, int window, int stride) {
  Tape& tape = *input.tape;
  const Tensor& in = input.value();
  if (in.rank() != 3) throw DimensionError("maxpool2d expects [C,H,W]");
  const auto g = kernels::pool_geometry(in.dim(0), in.dim(1), in.dim(2), window, stride);
  Tensor out({g.channels, g.out_h, g.out_w});
  std::vector<std::uint32_t> argmax(out.size());
  kernels::maxpool_forward(g, in.data().data(), out.data().data(), argmax.data());
  Var v = tape.push(std::move(out), {input.id}, [](Tape& t, std::size_t self) {
    const std::size_t src = t.parents(self)[0];
    if (!t.needs_grad(src)) return;
    auto go = t.pass_grad(self);
    auto gi = t.pass_grad(src);
    const auto& arg = t.aux(self);
    for (std::size_t i = 0; i < go.size(); ++i) gi[arg[i]] += go[i];
  });
  tape.aux(v.id) = std::move(argmax);
  return v;
}

Var flatten(Var input) {
  Tape& tape = *input.tape;
  Tensor out = input.value().reshaped({input.value().size()});
  return tape.push(std::move(out), {input.id}, [](Tape& t, std::size_t self) {
    const std::size_t src = t.parents(self)[0];
    if (!t.needs_grad(src)) return;
    auto go = t.pass_grad(self);
    auto gi = t.pass_grad(src);
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
  });
}

Var softmax(Var logits) {
  Tape& tape = *logits.tape;
  Tensor out = nrt::softmax(logits.value());
  return tape.push(std::move(out), {logits.id}, [](Tape& t, std::size_t self) {
    const std::size_t src = t.parents(self)[0];
    if (!t.needs_grad(src)) return;
    auto go = t.pass_grad(self);
    auto gi = t.pass_grad(src);
    const auto p = t.value(self).data();
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += static_cast<double>(go[i]) * p[i];
    for (std::size_t i = 0; i < p.size(); ++i) {
      gi[i] += static_cast<float>(p[i] * (go[i] - dot));
    }
  });
}

Var select(Var v, std::size_t index) {
  Tape& tape = *v.tape;
  if (index >= v.value().size()) {
    throw IndexError("select: index " + std::to_string(index) + " out of range for " +
                     std::to_string(v.value().size()) + " elements");
  }
  Tensor out = Tensor::scalar(v.value()[index]);
  return tape.push(std::move(out), {v.id}, [index](Tape& t, std::size_t self) {
    const std::size_t src = t.parents(self)[0];
    if (!t.needs_grad(src)) return;
    t.pass_grad(src)[index] += t.pass_grad(self)[0];
  });
}

Var sum(Var v) {
  Tape& tape = *v.tape;
  double acc = 0.0;
  for (float x : v.value().data()) acc += x;
  return tape.push(Tensor::scalar(static_cast<float>(acc)), {v.id},
                   [](Tape& t, std::size_t self) {
                     const std::size_t src = t.parents(self)[0];
                     if (!t.needs_grad(src)) return;
                     const float g = t.pass_grad(self)[0];
                     for (float& x : t.pass_grad(src)) x += g;
                   });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape({a, b});
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Tensor out = a.value();
  out.set_requires_grad(false);
  out.clear_grad();
  const auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  return tape.push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    auto go = t.pass_grad(self);
    for (std::size_t src : t.parents(self)) {
      if (!t.needs_grad(src)) continue;
      auto gi = t.pass_grad(src);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    }
  });
}

Var scale(Var v, float factor) {
  Tape& tape = *v.tape;
  Tensor out = v.value();
  out.set_requires_grad(false);
  out.clear_grad();
  for (float& x : out.data()) x *= factor;
  return tape.push(std::move(out), {v.id}, [factor](Tape& t, std::size_t self) {
    const std::size_t src = t.parents(self)[0];
    if (!t.needs_grad(src)) return;
    auto go = t.pass_grad(self);
    auto gi = t.pass_grad(src);
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += factor * go[i];
  });
}

Var cross_entropy(Var logits, std::size_t label) {
  Tape& tape = *logits.tape;
  const double loss = cross_entropy_loss(logits.value().data(), label);
  return tape.push(Tensor::scalar(static_cast<float>(loss)), {logits.id},
                   [label](Tape& t, std::size_t self) {
                     const std::size_t src = t.parents(self)[0];
                     if (!t.needs_grad(src)) return;
                     const float g = t.pass_grad(self)[0];
                     const auto p = softmax(t.value(src).data());
                     auto gi = t.pass_grad(src);
                     for (std::size_t k = 0; k < p.size(); ++k) {
                       const double target = k == label ? 1.0 : 0.0;
                       gi[k] += static_cast<float>(g * (p[k] - target));
                     }
                   });
}

}  // namespace nrt
