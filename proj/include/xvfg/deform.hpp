#pragma once

#include <string>
#include <vector>

#include "xvfg/autograd.hpp"
#include "xvfg/rng.hpp"

namespace xvfg {

/// Bilinear read of every channel at a continuous location, together with
/// the partial derivatives of each channel value w.r.t. y and x. Neighbours
/// outside [0,H) x [0,W) contribute zero.
struct BilinearSample {
  std::vector<double> value;
  std::vector<double> d_dy;
  std::vector<double> d_dx;
};

/// `map` is one image [1,C,H,W] (or sample `n` of a batch).
BilinearSample bilinear_sample(const Tensor& map, double y, double x, int n = 0);

/// Differentiable gather of bilinear samples.
/// map: [N,C,H,W]; coords: [N,2,P,1] with channel 0 = y, channel 1 = x.
/// Returns [N,C,P,1]; gradients flow into both the map and the coordinates.
Var sample_points(const Var& map, const Var& coords);

/// Deformable convolution (single deformable group, no modulation).
/// offsets: [N, 2*kH*kW, Hout, Wout]; channel 2t holds dy and 2t+1 holds dx
/// of tap t, taps in row-major kernel order.
Var deform_conv2d(const Var& input, const Var& offsets, const Var& weight, const Var& bias,
                  int stride, int padding);

/// Deformable layer with its own offset-predicting convolution. The
/// predictor shares the kernel geometry so its output matches the output
/// grid, and starts at zero so the layer starts as a plain convolution.
struct DeformConvLayer {
  Parameter weight;         // [Cout, Cin, k, k]
  Parameter bias;           // [1, Cout, 1, 1]
  Parameter offset_weight;  // [2*k*k, Cin, k, k]
  Parameter offset_bias;    // [1, 2*k*k, 1, 1]
  int stride = 1;
  int padding = 0;

  static DeformConvLayer create(const std::string& name, int cin, int cout, int kernel, int stride,
                                int padding, Rng& rng, double init_std = 0.02);

  int kernel() const { return weight.value.h(); }
  Var offsets(Tape& tape, const Var& input);
  Var forward(Tape& tape, const Var& input);
  std::vector<Parameter*> parameters();
  std::vector<Parameter*> offset_parameters();
};

}  // namespace xvfg
