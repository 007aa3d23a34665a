#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xvfg/metrics.hpp"
#include "xvfg/networks.hpp"

namespace xvfg {

/// Small scene classifier used as the default probe:
/// two 4x4 stride-2 convs with LeakyReLU, global average pool, 1x1 conv to logits.
class ConvProbe : public ProbeClassifier {
 public:
  static ConvProbe create(int classes, std::uint64_t seed, int width = 16);

  /// Full-batch Adam on softmax cross-entropy. Deterministic.
  void train(std::span<const Tensor> images, std::span<const int> labels, int steps = 150,
             double lr = 1e-2);

  int classes() const override { return classes_; }
  std::vector<double> probabilities(const Tensor& image) override;

  std::vector<Parameter*> parameters();

 private:
  Var logits(Tape& tape, const Var& images);

  int classes_ = 0;
  ConvLayer conv1_;
  ConvLayer conv2_;
  ConvLayer head_;
};

/// Returns the same distribution for every image.
class ConstantProbe : public ProbeClassifier {
 public:
  explicit ConstantProbe(std::vector<double> probs) : probs_(std::move(probs)) {}
  int classes() const override { return static_cast<int>(probs_.size()); }
  std::vector<double> probabilities(const Tensor&) override { return probs_; }

 private:
  std::vector<double> probs_;
};

}  // namespace xvfg
