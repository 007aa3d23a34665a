#pragma once

#include <span>
#include <vector>

#include "xvfg/autograd.hpp"

namespace xvfg {

enum class Activation { kLeakyRelu, kRelu, kSigmoid, kTanh };

/// Slope of the negative half of the leaky ReLU.
inline constexpr double kLeakySlope = 0.2;

// Elementwise arithmetic. Binary ops broadcast NCHW dims of size 1.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var abs(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }

/// Sum / mean of all elements as a 1x1x1x1 scalar.
Var sum(const Var& a);
Var mean(const Var& a);

Var activation(Activation kind, const Var& x);
inline Var leaky_relu(const Var& x) { return activation(Activation::kLeakyRelu, x); }
inline Var relu(const Var& x) { return activation(Activation::kRelu, x); }
inline Var sigmoid(const Var& x) { return activation(Activation::kSigmoid, x); }
inline Var tanh(const Var& x) { return activation(Activation::kTanh, x); }

/// log(sigmoid(x)) evaluated as -softplus(-x); finite for any finite x.
Var log_sigmoid(const Var& x);

/// Cross-correlation with zero padding.
/// weight: [Cout, Cin, kH, kW], bias: [1, Cout, 1, 1].
Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding);

/// Output extent of a convolution; throws ShapeError naming `dim` when the
/// geometry does not produce a positive integer size.
int conv_output_size(int in, int kernel, int stride, int padding, const char* dim);

inline constexpr double kBatchNormEps = 1e-5;

/// Per-channel normalisation over N*H*W with batch statistics.
/// gamma, beta: [1, C, 1, 1].
Var batch_norm(const Var& input, const Var& gamma, const Var& beta, double eps = kBatchNormEps);

/// Channel-wise concatenation; parts must share N, H, W.
Var concat_channels(std::span<const Var> parts);
inline Var concat_channels(std::initializer_list<Var> parts) {
  return concat_channels(std::span<const Var>(parts.begin(), parts.size()));
}

Var upsample_nearest2x(const Var& x);

/// [N,C,H,W] -> [N,C,1,1]
Var spatial_mean(const Var& x);
Var spatial_max(const Var& x);
/// [N,C,H,W] -> [N,1,H,W]
Var channel_mean(const Var& x);
Var channel_max(const Var& x);

/// Mean negative log-likelihood of softmax over C for logits [N,K,1,1].
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Softmax over channels of a [N,K,1,1] tensor (no gradient).
Tensor softmax_channels(const Tensor& logits);

}  // namespace xvfg
