#pragma once

// Raw loops shared by the untaped primitives and the tape backward rules.
// All buffers are row-major; "accumulate" kernels add into their output.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace nrt::kernels {

struct ConvGeometry {
  std::size_t in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  int stride, padding;
  std::size_t out_h, out_w;
};

ConvGeometry conv_geometry(std::size_t c_in, std::size_t h, std::size_t w, std::size_t c_out,
                           std::size_t kh, std::size_t kw, int stride, int padding);

void conv2d_forward(const ConvGeometry& g, const float* input, const float* kernels,
                    const float* bias, float* out);
void conv2d_backward_input(const ConvGeometry& g, const float* grad_out, const float* kernels,
                           float* grad_in);
void conv2d_backward_params(const ConvGeometry& g, const float* grad_out, const float* input,
                            float* grad_kernels, float* grad_bias);

void dense_forward(std::size_t m, std::size_t n, const float* input, const float* weights,
                   const float* bias, float* out);
void dense_backward_input(std::size_t m, std::size_t n, const float* grad_out,
                          const float* weights, float* grad_in);
void dense_backward_params(std::size_t m, std::size_t n, const float* grad_out,
                           const float* input, float* grad_weights, float* grad_bias);

struct PoolGeometry {
  std::size_t channels, height, width;
  int window, stride;
  std::size_t out_h, out_w;
};

PoolGeometry pool_geometry(std::size_t c, std::size_t h, std::size_t w, int window, int stride);

/// Writes the pooled maxima and, when argmax is non-null, the flat input index
/// of the first (row-major) maximum of each window.
void maxpool_forward(const PoolGeometry& g, const float* input, float* out,
                     std::uint32_t* argmax);

}  // namespace nrt::kernels
