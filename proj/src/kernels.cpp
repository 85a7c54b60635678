#include "kernels.hpp"

#include <algorithm>
#include <limits>

#include "nrt/tensor.hpp"

namespace nrt::kernels {

namespace {

// Output index range [lo, hi) whose input coordinate o*stride + k - pad lies
// inside [0, extent).
void valid_range(std::size_t out_extent, std::size_t in_extent, int stride, int pad,
                 std::size_t k, std::size_t& lo, std::size_t& hi) {
  const long offset = static_cast<long>(k) - pad;
  long first = 0;
  if (offset < 0) first = (-offset + stride - 1) / stride;
  long last = (static_cast<long>(in_extent) - 1 - offset);
  last = last < 0 ? -1 : last / stride;
  lo = static_cast<std::size_t>(std::max<long>(first, 0));
  hi = static_cast<std::size_t>(std::clamp<long>(last + 1, 0, static_cast<long>(out_extent)));
  if (hi < lo) hi = lo;
}

}  // namespace

ConvGeometry conv_geometry(std::size_t c_in, std::size_t h, std::size_t w, std::size_t c_out,
                           std::size_t kh, std::size_t kw, int stride, int padding) {
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d: padding must be >= 0");
  const std::size_t ph = h + 2 * static_cast<std::size_t>(padding);
  const std::size_t pw = w + 2 * static_cast<std::size_t>(padding);
  if (kh > ph || kw > pw) throw DimensionError("conv2d: kernel larger than padded input");
  ConvGeometry g{c_in, h, w, c_out, kh, kw, stride, padding, 0, 0};
  g.out_h = (ph - kh) / static_cast<std::size_t>(stride) + 1;
  g.out_w = (pw - kw) / static_cast<std::size_t>(stride) + 1;
  return g;
}

void conv2d_forward(const ConvGeometry& g, const float* input, const float* kernels,
                    const float* bias, float* out) {
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t s = static_cast<std::size_t>(g.stride);
  const auto pad = static_cast<std::size_t>(g.padding);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    float* o = out + co * plane;
    std::fill(o, o + plane, bias[co]);
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const float* in = input + ci * g.height * g.width;
      const float* k = kernels + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        std::size_t oy0, oy1;
        valid_range(g.out_h, g.height, g.stride, g.padding, ky, oy0, oy1);
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          std::size_t ox0, ox1;
          valid_range(g.out_w, g.width, g.stride, g.padding, kx, ox0, ox1);
          const float wv = k[ky * g.kernel_w + kx];
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            const float* irow = in + (oy * s + ky - pad) * g.width;
            float* orow = o + oy * g.out_w;
            if (s == 1) {
              for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox + kx - pad];
            } else {
              for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox * s + kx - pad];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, const float* grad_out, const float* kernels,
                           float* grad_in) {
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t s = static_cast<std::size_t>(g.stride);
  const auto pad = static_cast<std::size_t>(g.padding);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    const float* go = grad_out + co * plane;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      float* gi = grad_in + ci * g.height * g.width;
      const float* k = kernels + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        std::size_t oy0, oy1;
        valid_range(g.out_h, g.height, g.stride, g.padding, ky, oy0, oy1);
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          std::size_t ox0, ox1;
          valid_range(g.out_w, g.width, g.stride, g.padding, kx, ox0, ox1);
          const float wv = k[ky * g.kernel_w + kx];
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            float* irow = gi + (oy * s + ky - pad) * g.width;
            const float* orow = go + oy * g.out_w;
            if (s == 1) {
              for (std::size_t ox = ox0; ox < ox1; ++ox) irow[ox + kx - pad] += wv * orow[ox];
            } else {
              for (std::size_t ox = ox0; ox < ox1; ++ox) irow[ox * s + kx - pad] += wv * orow[ox];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, const float* grad_out, const float* input,
                            float* grad_kernels, float* grad_bias) {
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t s = static_cast<std::size_t>(g.stride);
  const auto pad = static_cast<std::size_t>(g.padding);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    const float* go = grad_out + co * plane;
    if (grad_bias != nullptr) {
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += go[i];
      grad_bias[co] += static_cast<float>(acc);
    }
    if (grad_kernels == nullptr) continue;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const float* in = input + ci * g.height * g.width;
      float* gk = grad_kernels + (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        std::size_t oy0, oy1;
        valid_range(g.out_h, g.height, g.stride, g.padding, ky, oy0, oy1);
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          std::size_t ox0, ox1;
          valid_range(g.out_w, g.width, g.stride, g.padding, kx, ox0, ox1);
          float acc = 0.0f;
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            const float* irow = in + (oy * s + ky - pad) * g.width;
            const float* orow = go + oy * g.out_w;
            float row = 0.0f;
            if (s == 1) {
              for (std::size_t ox = ox0; ox < ox1; ++ox) row += orow[ox] * irow[ox + kx - pad];
            } else {
              for (std::size_t ox = ox0; ox < ox1; ++ox) row += orow[ox] * irow[ox * s + kx - pad];
            }
            acc += row;
          }
          gk[ky * g.kernel_w + kx] += acc;
        }
      }
    }
  }
}

void dense_forward(std::size_t m, std::size_t n, const float* input, const float* weights,
                   const float* bias, float* out) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* row = weights + i * n;
    float acc = 0.0f;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * input[j];
    out[i] = acc + bias[i];
  }
}

void dense_backward_input(std::size_t m, std::size_t n, const float* grad_out,
                          const float* weights, float* grad_in) {
  for (std::size_t i = 0; i < m; ++i) {
    const float gi = grad_out[i];
    if (gi == 0.0f) continue;
    const float* row = weights + i * n;
    for (std::size_t j = 0; j < n; ++j) grad_in[j] += gi * row[j];
  }
}

void dense_backward_params(std::size_t m, std::size_t n, const float* grad_out,
                           const float* input, float* grad_weights, float* grad_bias) {
  for (std::size_t i = 0; i < m; ++i) {
    const float gi = grad_out[i];
    if (grad_bias != nullptr) grad_bias[i] += gi;
    if (grad_weights == nullptr || gi == 0.0f) continue;
    float* row = grad_weights + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += gi * input[j];
  }
}

PoolGeometry pool_geometry(std::size_t c, std::size_t h, std::size_t w, int window, int stride) {
  if (window < 1 || stride < 1) throw DimensionError("maxpool2d: window and stride must be >= 1");
  const auto win = static_cast<std::size_t>(window);
  if (win > h || win > w) throw DimensionError("maxpool2d: window larger than input");
  PoolGeometry g{c, h, w, window, stride, 0, 0};
  g.out_h = (h - win) / static_cast<std::size_t>(stride) + 1;
  g.out_w = (w - win) / static_cast<std::size_t>(stride) + 1;
  return g;
}

void maxpool_forward(const PoolGeometry& g, const float* input, float* out,
                     std::uint32_t* argmax) {
  const auto win = static_cast<std::size_t>(g.window);
  const auto s = static_cast<std::size_t>(g.stride);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const std::size_t base = c * g.height * g.width;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        std::size_t best_idx = base + oy * s * g.width + ox * s;
        for (std::size_t dy = 0; dy < win; ++dy) {
          const std::size_t row = base + (oy * s + dy) * g.width + ox * s;
          for (std::size_t dx = 0; dx < win; ++dx) {
            const float v = input[row + dx];
            if (v > best) {
              best = v;
              best_idx = row + dx;
            }
          }
        }
        const std::size_t o = (c * g.out_h + oy) * g.out_w + ox;
        out[o] = best;
        if (argmax != nullptr) argmax[o] = static_cast<std::uint32_t>(best_idx);
      }
    }
  }
}

}  // namespace nrt::kernels
