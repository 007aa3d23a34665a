#include "xvfg/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "xvfg/ops.hpp"

namespace xvfg {
namespace {

// Logistic gate held inside the open interval: saturated values snap to the
// nearest representable neighbour of 0 or 1.
Var gate(const Var& x) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  Tensor out = x.value();
  for (auto& v : out.data()) {
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    v = std::clamp(s, lo, hi);
  }
  const int id = x.id();
  Tensor saved = out;
  return x.tape()->record(std::move(out), {id}, [id, saved = std::move(saved)](Tape& t, const Tensor& g) {
    Tensor gx(saved.shape());
    for (std::size_t i = 0; i < saved.size(); ++i) gx[i] = g[i] * saved[i] * (1.0 - saved[i]);
    t.accumulate(id, gx);
  });
}

}  // namespace


AttentionModule AttentionModule::zeros(const std::string& name, int channels, int reduction) {
  if (channels <= 0 || reduction <= 0 || channels % reduction != 0) {
    throw std::invalid_argument("AttentionModule: reduction " + std::to_string(reduction) +
                                " does not divide channel count " + std::to_string(channels));
  }
  const int hidden = channels / reduction;
  AttentionModule m;
  m.channels = channels;
  m.reduction = reduction;
  m.fc1_weight = Parameter(name + ".fc1.weight", Tensor(Shape{hidden, channels, 1, 1}));
  m.fc1_bias = Parameter(name + ".fc1.bias", Tensor(Shape{1, hidden, 1, 1}));
  m.fc2_weight = Parameter(name + ".fc2.weight", Tensor(Shape{channels, hidden, 1, 1}));
  m.fc2_bias = Parameter(name + ".fc2.bias", Tensor(Shape{1, channels, 1, 1}));
  m.spatial_weight =
      Parameter(name + ".spatial.weight", Tensor(Shape{1, 2, kSpatialKernel, kSpatialKernel}));
  m.spatial_bias = Parameter(name + ".spatial.bias", Tensor(Shape{1, 1, 1, 1}));
  return m;
}

AttentionModule AttentionModule::create(const std::string& name, int channels, int reduction,
                                        Rng& rng, double init_std) {
  AttentionModule m = zeros(name, channels, reduction);
  for (Parameter* p : {&m.fc1_weight, &m.fc2_weight, &m.spatial_weight}) {
    p->value = random_normal(p->value.shape(), rng, init_std);
  }
  return m;
}

Var AttentionModule::channel_attention(Tape& tape, const Var& features) {
  if (features.shape().c != channels) {
    throw ShapeError("channel_attention: features have " + std::to_string(features.shape().c) +
                     " channels, module built for " + std::to_string(channels));
  }
  const Var w1 = tape.param(fc1_weight);
  const Var b1 = tape.param(fc1_bias);
  const Var w2 = tape.param(fc2_weight);
  const Var b2 = tape.param(fc2_bias);
  auto mlp = [&](const Var& v) { return conv2d(relu(conv2d(v, w1, b1, 1, 0)), w2, b2, 1, 0); };
  return gate(mlp(spatial_mean(features)) + mlp(spatial_max(features)));
}

Var AttentionModule::spatial_attention(Tape& tape, const Var& features) {
  const Var pooled = concat_channels({channel_mean(features), channel_max(features)});
  return gate(conv2d(pooled, tape.param(spatial_weight), tape.param(spatial_bias), 1,
                        kSpatialKernel / 2));
}

Var AttentionModule::refine(Tape& tape, const Var& features) {
  const Var gated = channel_attention(tape, features) * features;
  return spatial_attention(tape, gated) * gated;
}

std::vector<Parameter*> AttentionModule::parameters() {
  return {&fc1_weight, &fc1_bias, &fc2_weight, &fc2_bias, &spatial_weight, &spatial_bias};
}

std::size_t AttentionModule::parameter_count() {
  std::size_t total = 0;
  for (Parameter* p : parameters()) total += p->numel();
  return total;
}

}  // namespace xvfg
