#include "xvfg/probe.hpp"

#include "xvfg/ops.hpp"
#include "xvfg/optim.hpp"

namespace xvfg {

ConvProbe ConvProbe::create(int classes, std::uint64_t seed, int width) {
  Rng rng(seed);
  ConvProbe p;
  p.classes_ = classes;
  p.conv1_ = ConvLayer::create("probe.conv1", 3, width, 4, 2, 1, rng, 0.1);
  p.conv2_ = ConvLayer::create("probe.conv2", width, 2 * width, 4, 2, 1, rng, 0.1);
  p.head_ = ConvLayer::create("probe.head", 2 * width, classes, 1, 1, 0, rng, 0.1);
  return p;
}

Var ConvProbe::logits(Tape& tape, const Var& images) {
  const Var h = leaky_relu(conv2_.forward(tape, leaky_relu(conv1_.forward(tape, images))));
  return head_.forward(tape, spatial_mean(h));
}

void ConvProbe::train(std::span<const Tensor> images, std::span<const int> labels, int steps,
                      double lr) {
  if (images.empty()) return;
  const Tensor batch = stack_batch(images);
  AdamConfig cfg;
  cfg.lr = lr;
  Adam opt(parameters(), cfg);
  for (int s = 0; s < steps; ++s) {
    opt.zero_grad();
    Tape tape;
    const Var loss = softmax_cross_entropy(logits(tape, tape.constant(batch)), labels);
    tape.backward(loss);
    opt.step();
  }
}

std::vector<double> ConvProbe::probabilities(const Tensor& image) {
  Tape tape(false);
  const Tensor probs = softmax_channels(logits(tape, tape.constant(image)).value());
  return std::vector<double>(probs.data().begin(), probs.data().begin() + classes_);
}

std::vector<Parameter*> ConvProbe::parameters() {
  return {&conv1_.weight, &conv1_.bias, &conv2_.weight, &conv2_.bias, &head_.weight, &head_.bias};
}

}  // namespace xvfg
