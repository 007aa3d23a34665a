#include "xvfg/networks.hpp"

#include <algorithm>

#include "xvfg/ops.hpp"

namespace xvfg {
namespace {

int level_channels(int base, int level) { return base * (1 << std::min(level, 3)); }

}  // namespace

ConvLayer ConvLayer::create(const std::string& name, int cin, int cout, int kernel, int stride,
                            int padding, Rng& rng, double init_std) {
  ConvLayer layer;
  layer.weight = Parameter(name + ".weight", random_normal(Shape{cout, cin, kernel, kernel}, rng, init_std));
  layer.bias = Parameter(name + ".bias", Tensor(Shape{1, cout, 1, 1}));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Var ConvLayer::forward(Tape& tape, const Var& x) {
  return conv2d(x, tape.param(weight), tape.param(bias), stride, padding);
}

BatchNormLayer BatchNormLayer::create(const std::string& name, int channels) {
  BatchNormLayer layer;
  layer.gamma = Parameter(name + ".gamma", Tensor(Shape{1, channels, 1, 1}, 1.0));
  layer.beta = Parameter(name + ".beta", Tensor(Shape{1, channels, 1, 1}));
  return layer;
}

Var BatchNormLayer::forward(Tape& tape, const Var& x) {
  return batch_norm(x, tape.param(gamma), tape.param(beta));
}

// ---- generator ----------------------------------------------------------

Generator Generator::create(const std::string& name, const GeneratorConfig& cfg, Rng& rng) {
  if (cfg.depth < 1) throw std::invalid_argument("Generator: depth must be at least 1");
  Generator g;
  g.name_ = name;
  g.cfg_ = cfg;
  const bool deform_first =
      cfg.use_deform && cfg.placement != DeformPlacement::kLastDecoder;
  const bool deform_last =
      cfg.use_deform && cfg.placement != DeformPlacement::kFirstEncoder;
  const int base = cfg.base_channels;
  if (deform_first) {
    g.stem_deform_ = DeformConvLayer::create(name + ".stem", cfg.in_channels, base, 3, 1, 1, rng);
  } else {
    g.stem_conv_ = ConvLayer::create(name + ".stem", cfg.in_channels, base, 3, 1, 1, rng);
  }
  for (int level = 1; level <= cfg.depth; ++level) {
    const std::string prefix = name + ".down" + std::to_string(level);
    const int cin = level_channels(base, level - 1);
    const int cout = level_channels(base, level);
    g.down_.push_back(Block{ConvLayer::create(prefix + ".conv", cin, cout, 4, 2, 1, rng),
                            BatchNormLayer::create(prefix + ".bn", cout)});
  }
  for (int level = cfg.depth; level >= 1; --level) {
    const std::string prefix = name + ".up" + std::to_string(level);
    const int cin = level_channels(base, level) + level_channels(base, level - 1);
    const int cout = level_channels(base, level - 1);
    g.up_.push_back(Block{ConvLayer::create(prefix + ".conv", cin, cout, 3, 1, 1, rng),
                          BatchNormLayer::create(prefix + ".bn", cout)});
  }
  g.feature_ = Block{ConvLayer::create(name + ".feature.conv", base, cfg.feature_channels, 3, 1, 1, rng),
                     BatchNormLayer::create(name + ".feature.bn", cfg.feature_channels)};
  if (deform_last) {
    g.head_deform_ = DeformConvLayer::create(name + ".head", cfg.feature_channels,
                                             cfg.out_channels, 3, 1, 1, rng);
  } else {
    g.head_conv_ = ConvLayer::create(name + ".head", cfg.feature_channels, cfg.out_channels, 3,
                                     1, 1, rng);
  }
  return g;
}

Generator::Output Generator::forward(Tape& tape, const Var& x) {
  const Shape s = x.shape();
  const int factor = 1 << cfg_.depth;
  if (s.h % factor != 0 || s.w % factor != 0) {
    throw ShapeError(name_ + ": input " + s.str() + " spatial size not divisible by 2^depth = " +
                     std::to_string(factor));
  }
  if (s.c != cfg_.in_channels) {
    throw ShapeError(name_ + ": input has " + std::to_string(s.c) + " channels, expected " +
                     std::to_string(cfg_.in_channels));
  }
  std::vector<Var> skips;
  Var h = leaky_relu(stem_deform_ ? stem_deform_->forward(tape, x) : stem_conv_->forward(tape, x));
  for (auto& block : down_) {
    skips.push_back(h);
    h = leaky_relu(block.norm.forward(tape, block.conv.forward(tape, h)));
  }
  for (auto& block : up_) {
    const Var skip = skips.back();
    skips.pop_back();
    const Var merged = concat_channels({upsample_nearest2x(h), skip});
    h = relu(block.norm.forward(tape, block.conv.forward(tape, merged)));
  }
  const Var feature = relu(feature_.norm.forward(tape, feature_.conv.forward(tape, h)));
  const Var head =
      head_deform_ ? head_deform_->forward(tape, feature) : head_conv_->forward(tape, feature);
  return Output{tanh(head), feature};
}

std::vector<Parameter*> Generator::parameters() {
  std::vector<Parameter*> out;
  auto append = [&](std::vector<Parameter*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  if (stem_deform_) append(stem_deform_->parameters());
  if (stem_conv_) append(stem_conv_->parameters());
  for (auto& b : down_) {
    append(b.conv.parameters());
    append(b.norm.parameters());
  }
  for (auto& b : up_) {
    append(b.conv.parameters());
    append(b.norm.parameters());
  }
  append(feature_.conv.parameters());
  append(feature_.norm.parameters());
  if (head_deform_) append(head_deform_->parameters());
  if (head_conv_) append(head_conv_->parameters());
  return out;
}

std::vector<Parameter*> Generator::offset_parameters() {
  std::vector<Parameter*> out;
  if (stem_deform_) {
    for (Parameter* p : stem_deform_->offset_parameters()) out.push_back(p);
  }
  if (head_deform_) {
    for (Parameter* p : head_deform_->offset_parameters()) out.push_back(p);
  }
  return out;
}

std::size_t Generator::parameter_count() { return count_parameters(parameters()); }

// ---- discriminator ------------------------------------------------------

Discriminator Discriminator::create(const std::string& name, const DiscriminatorConfig& cfg,
                                    Rng& rng) {
  if (cfg.downsamples < 1) throw std::invalid_argument("Discriminator: downsamples must be >= 1");
  Discriminator d;
  d.name_ = name;
  d.cfg_ = cfg;
  const int in = cfg.condition_channels + cfg.target_channels;
  d.first_ = ConvLayer::create(name + ".conv1", in, cfg.base_channels, 4, 2, 1, rng);
  int ch = cfg.base_channels;
  for (int i = 1; i < cfg.downsamples; ++i) {
    const int next = cfg.base_channels * (1 << std::min(i, 3));
    const std::string prefix = name + ".conv" + std::to_string(i + 1);
    d.blocks_.emplace_back(ConvLayer::create(prefix, ch, next, 4, 2, 1, rng),
                           BatchNormLayer::create(prefix + ".bn", next));
    ch = next;
  }
  d.final_ = ConvLayer::create(name + ".final", ch, 1, 3, 1, 1, rng);
  if (cfg.zero_final) d.final_.weight.value.fill(0.0);
  return d;
}

Var Discriminator::logits(Tape& tape, const Var& condition, const Var& target) {
  if (condition.shape().c != cfg_.condition_channels) {
    throw ShapeError(name_ + ": condition has " + std::to_string(condition.shape().c) +
                     " channels, constructed for " + std::to_string(cfg_.condition_channels));
  }
  if (target.shape().c != cfg_.target_channels) {
    throw ShapeError(name_ + ": target has " + std::to_string(target.shape().c) +
                     " channels, constructed for " + std::to_string(cfg_.target_channels));
  }
  Var h = leaky_relu(first_.forward(tape, concat_channels({condition, target})));
  for (auto& [conv, norm] : blocks_) h = leaky_relu(norm.forward(tape, conv.forward(tape, h)));
  return final_.forward(tape, h);
}

Var Discriminator::forward(Tape& tape, const Var& condition, const Var& target) {
  return sigmoid(logits(tape, condition, target));
}

std::vector<Parameter*> Discriminator::parameters() {
  std::vector<Parameter*> out = first_.parameters();
  for (auto& [conv, norm] : blocks_) {
    for (Parameter* p : conv.parameters()) out.push_back(p);
    for (Parameter* p : norm.parameters()) out.push_back(p);
  }
  for (Parameter* p : final_.parameters()) out.push_back(p);
  return out;
}

std::size_t Discriminator::parameter_count() { return count_parameters(parameters()); }

// ---- two-stage wiring ---------------------------------------------------

StageOneOutput stage1(Tape& tape, Generator& gi, Generator& gs, const Var& source,
                      const Var& target_semantic) {
  const Shape a = source.shape();
  const Shape b = target_semantic.shape();
  if (a.h != b.h || a.w != b.w) {
    throw ShapeError("stage1: source " + a.str() + " and semantic map " + b.str() +
                     " differ spatially");
  }
  const Generator::Output coarse = gi.forward(tape, concat_channels({source, target_semantic}));
  const Generator::Output sem = gs.forward(tape, coarse.image);
  return StageOneOutput{coarse.image, sem.image, coarse.feature, sem.feature};
}

StageTwoOutput stage2(Tape& tape, Generator& ga, Generator& gs, AttentionModule* am_image,
                      AttentionModule* am_semantic, const Var& source, const Var& coarse_image,
                      const Var& image_feature, const Var& semantic_feature) {
  const Var fi = am_image != nullptr ? am_image->refine(tape, image_feature) : image_feature;
  const Var fs =
      am_semantic != nullptr ? am_semantic->refine(tape, semantic_feature) : semantic_feature;
  const Generator::Output fine = ga.forward(tape, concat_channels({source, coarse_image, fi, fs}));
  const Generator::Output sem = gs.forward(tape, fine.image);
  return StageTwoOutput{fine.image, sem.image, fi, fs};
}

// ---- full model ---------------------------------------------------------

CrossViewNet CrossViewNet::create(const ModelConfig& cfg, std::uint64_t seed) {
  CrossViewNet net;
  net.cfg_ = cfg;
  const int img = cfg.image_channels;
  const int sem = cfg.semantic_channels;

  GeneratorConfig gc;
  gc.depth = cfg.depth;
  gc.base_channels = cfg.base_channels;
  gc.feature_channels = cfg.feature_channels;
  gc.use_deform = cfg.toggles.deform;
  gc.placement = cfg.placement;

  Rng rng_gi(derive_seed(seed, 0));
  gc.in_channels = img + sem;
  gc.out_channels = img;
  net.gi_ = std::make_unique<Generator>(Generator::create("Gi", gc, rng_gi));

  Rng rng_gs(derive_seed(seed, 1));
  gc.in_channels = img;
  gc.out_channels = sem;
  net.gs_ = std::make_unique<Generator>(Generator::create("Gs", gc, rng_gs));

  Rng rng_ga(derive_seed(seed, 2));
  gc.in_channels = img + img + 2 * cfg.feature_channels;
  gc.out_channels = img;
  net.ga_ = std::make_unique<Generator>(Generator::create("Ga", gc, rng_ga));

  if (cfg.toggles.attention) {
    Rng rng_ami(derive_seed(seed, 3));
    net.am_image_ =
        AttentionModule::create("AMi", cfg.feature_channels, cfg.attention_reduction, rng_ami);
    Rng rng_ams(derive_seed(seed, 4));
    net.am_semantic_ =
        AttentionModule::create("AMs", cfg.feature_channels, cfg.attention_reduction, rng_ams);
  }

  DiscriminatorConfig dc;
  dc.base_channels = cfg.disc_base_channels;
  dc.downsamples = cfg.disc_downsamples;
  Rng rng_d1(derive_seed(seed, 5));
  dc.condition_channels = img;
  dc.target_channels = img;
  net.d1_ = std::make_unique<Discriminator>(Discriminator::create("D1", dc, rng_d1));
  if (cfg.toggles.semantic_loss) {
    Rng rng_d2(derive_seed(seed, 6));
    dc.condition_channels = img + sem;
    dc.target_channels = img + sem;
    net.d2_ = Discriminator::create("D2", dc, rng_d2);
  }
  return net;
}

CrossViewNet::Forward CrossViewNet::forward(Tape& tape, const Var& source,
                                            const Var& target_semantic) {
  Forward out;
  out.stage1 = xvfg::stage1(tape, *gi_, *gs_, source, target_semantic);
  out.stage2 = xvfg::stage2(tape, *ga_, *gs_, am_image(), am_semantic(), source,
                            out.stage1.image, out.stage1.image_feature,
                            out.stage1.semantic_feature);
  return out;
}

std::vector<Parameter*> CrossViewNet::generator_parameters() {
  std::vector<Parameter*> out;
  auto append = [&](std::vector<Parameter*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  append(gi_->parameters());
  append(gs_->parameters());
  append(ga_->parameters());
  if (am_image_) append(am_image_->parameters());
  if (am_semantic_) append(am_semantic_->parameters());
  return out;
}

std::vector<Parameter*> CrossViewNet::discriminator_parameters() {
  std::vector<Parameter*> out = d1_->parameters();
  if (d2_) {
    for (Parameter* p : d2_->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> CrossViewNet::parameters() {
  std::vector<Parameter*> out = generator_parameters();
  for (Parameter* p : discriminator_parameters()) out.push_back(p);
  return out;
}

std::size_t CrossViewNet::parameter_count() { return count_parameters(parameters()); }

std::size_t count_parameters(const std::vector<Parameter*>& params) {
  std::size_t total = 0;
  for (const Parameter* p : params) total += p->numel();
  return total;
}

}  // namespace xvfg
