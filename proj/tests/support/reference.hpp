#pragma once

// Naive double-precision forward pass used as an independent oracle.

#include <cmath>
#include <cstdint>
#include <vector>

#include "nrt/model.hpp"

namespace nrt::testing {

struct RefActivation {
  std::vector<double> values;
  std::size_t c = 0, h = 0, w = 0;
};

/// Logits in double precision. `pattern` receives one entry per ReLU unit
/// (sign) and per pool window (argmax), so callers can tell whether two
/// inputs fall in the same linear region.
inline std::vector<double> reference_logits(const Model& model, const std::vector<double>& x,
                                            std::vector<std::int64_t>* pattern = nullptr) {
  const Shape& s = model.input_shape();
  RefActivation a{x, s[0], s[1], s[2]};
  std::size_t p = 0;
  if (pattern) pattern->clear();
  for (const LayerSpec& l : model.layers()) {
    switch (l.kind) {
      case LayerKind::Conv: {
        const Tensor& k = model.params()[p].tensor;
        const Tensor& b = model.params()[p + 1].tensor;
        p += 2;
        const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
        const long pad = l.padding;
        const std::size_t oh = (a.h + 2 * pad - kh) / l.stride + 1;
        const std::size_t ow = (a.w + 2 * pad - kw) / l.stride + 1;
        std::vector<double> out(co * oh * ow, 0.0);
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
              double acc = b[o];
              for (std::size_t c = 0; c < a.c; ++c)
                for (std::size_t i = 0; i < kh; ++i)
                  for (std::size_t j = 0; j < kw; ++j) {
                    const long iy = static_cast<long>(y * l.stride + i) - pad;
                    const long ix = static_cast<long>(xx * l.stride + j) - pad;
                    if (iy < 0 || ix < 0 || iy >= static_cast<long>(a.h) || ix >= static_cast<long>(a.w)) continue;
                    acc += static_cast<double>(k[((o * a.c + c) * kh + i) * kw + j]) *
                           a.values[(c * a.h + static_cast<std::size_t>(iy)) * a.w + static_cast<std::size_t>(ix)];
                  }
              out[(o * oh + y) * ow + xx] = acc;
            }
        a = {std::move(out), co, oh, ow};
        break;
      }
      case LayerKind::Relu:
        for (double& v : a.values) {
          if (pattern) pattern->push_back(v > 0 ? 1 : 0);
          v = v > 0 ? v : 0.0;
        }
        break;
      case LayerKind::MaxPool: {
        const std::size_t win = l.kernel, st = l.stride;
        const std::size_t oh = (a.h - win) / st + 1, ow = (a.w - win) / st + 1;
        std::vector<double> out(a.c * oh * ow);
        for (std::size_t c = 0; c < a.c; ++c)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
              double best = -INFINITY;
              std::int64_t arg = -1;
              for (std::size_t i = 0; i < win; ++i)
                for (std::size_t j = 0; j < win; ++j) {
                  const double v = a.values[(c * a.h + y * st + i) * a.w + xx * st + j];
                  if (v > best) {
                    best = v;
                    arg = static_cast<std::int64_t>(i * win + j);
                  }
                }
              out[(c * oh + y) * ow + xx] = best;
              if (pattern) pattern->push_back(arg);
            }
        a = {std::move(out), a.c, oh, ow};
        break;
      }
      case LayerKind::Flatten:
        a.c = a.values.size();
        a.h = a.w = 1;
        break;
      case LayerKind::Dense: {
        const Tensor& wt = model.params()[p].tensor;
        const Tensor& b = model.params()[p + 1].tensor;
        p += 2;
        const std::size_t m = wt.dim(0), n = wt.dim(1);
        std::vector<double> out(m);
        for (std::size_t i = 0; i < m; ++i) {
          double acc = b[i];
          for (std::size_t j = 0; j < n; ++j) acc += static_cast<double>(wt[i * n + j]) * a.values[j];
          out[i] = acc;
        }
        a = {std::move(out), m, 1, 1};
        break;
      }
    }
  }
  return a.values;
}

}  // namespace nrt::testing
