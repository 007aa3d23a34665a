#pragma once

#include <string>
#include <vector>

#include "xvfg/autograd.hpp"
#include "xvfg/rng.hpp"

namespace xvfg {

/// Channel gate followed by spatial gate, each multiplied into the features.
///
/// Channel gate: sigmoid(MLP(avgpool(F)) + MLP(maxpool(F))), the MLP
/// (C -> C/r -> C, ReLU between) shared by both pooling paths.
/// Spatial gate: sigmoid(conv7x7([mean_c(F); max_c(F)])), padding 3.
struct AttentionModule {
  int channels = 0;
  int reduction = 4;
  Parameter fc1_weight;      // [C/r, C, 1, 1]
  Parameter fc1_bias;        // [1, C/r, 1, 1]
  Parameter fc2_weight;      // [C, C/r, 1, 1]
  Parameter fc2_bias;        // [1, C, 1, 1]
  Parameter spatial_weight;  // [1, 2, 7, 7]
  Parameter spatial_bias;    // [1, 1, 1, 1]

  static constexpr int kSpatialKernel = 7;

  /// Throws std::invalid_argument unless `reduction` divides `channels`.
  static AttentionModule create(const std::string& name, int channels, int reduction, Rng& rng,
                                double init_std = 0.02);
  /// Every parameter zero: both gates evaluate to exactly 0.5.
  static AttentionModule zeros(const std::string& name, int channels, int reduction);

  /// [N,C,H,W] -> [N,C,1,1], values in (0,1).
  Var channel_attention(Tape& tape, const Var& features);
  /// [N,C,H,W] -> [N,1,H,W], values in (0,1).
  Var spatial_attention(Tape& tape, const Var& features);
  /// F1 = Mc(F) * F, then F' = Ms(F1) * F1.
  Var refine(Tape& tape, const Var& features);

  std::vector<Parameter*> parameters();
  std::size_t parameter_count();
};

}  // namespace xvfg
