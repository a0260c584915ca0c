#pragma once

#include "reg/tensor.hpp"

namespace reg {

// 3-d cross-correlation with zero padding.
//   input  [B, Cin, D, H, W]
//   weight [Cout, Cin, k, k, k], k odd
//   bias   [Cout]
// Output extent per axis: floor((in + 2*padding - k) / stride) + 1.
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding);

// Transposed convolution (scatter of strided taps).
//   input  [B, Cin, D, H, W]
//   weight [Cin, Cout, k, k, k]
// Output extent per axis: (in - 1)*stride - 2*padding + k + output_padding.
// With k=3, stride=2, padding=1, output_padding=1 extents exactly double.
Tensor transposed_conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                         int stride, int padding, int output_padding);

// Average pooling; padding positions are excluded from the divisor, so
// constant inputs stay constant.
Tensor avgpool3d(const Tensor& input, int kernel = 3, int stride = 2, int padding = 1);

// Per-channel running statistics, updated in train mode. Fresh state
// (mean 0, var 1) makes eval-before-train a documented passthrough.
struct BatchNormState {
    std::vector<float> running_mean;
    std::vector<float> running_var;

    explicit BatchNormState(int64_t channels = 0)
        : running_mean(channels, 0.0f), running_var(channels, 1.0f) {}
};

// Batch normalization over (B,D,H,W) per channel.
// momentum is the retention factor: running = momentum*running + (1-momentum)*batch.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, bool training, float eps = 1e-5f, float momentum = 0.9f);

}  // namespace reg
