#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xvfg/attention.hpp"
#include "xvfg/autograd.hpp"
#include "xvfg/deform.hpp"
#include "xvfg/rng.hpp"

namespace xvfg {

/// Standard convolution with its parameters.
struct ConvLayer {
  Parameter weight;  // [Cout, Cin, k, k]
  Parameter bias;    // [1, Cout, 1, 1]
  int stride = 1;
  int padding = 0;

  static ConvLayer create(const std::string& name, int cin, int cout, int kernel, int stride,
                          int padding, Rng& rng, double init_std = 0.02);
  Var forward(Tape& tape, const Var& x);
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

struct BatchNormLayer {
  Parameter gamma;  // [1, C, 1, 1], starts at 1
  Parameter beta;   // [1, C, 1, 1], starts at 0

  static BatchNormLayer create(const std::string& name, int channels);
  Var forward(Tape& tape, const Var& x);
  std::vector<Parameter*> parameters() { return {&gamma, &beta}; }
};

/// Which generator convolutions become deformable when use_deform is set.
enum class DeformPlacement { kFirstEncoder, kLastDecoder, kBoth };

struct GeneratorConfig {
  int in_channels = 3;
  int out_channels = 3;
  int depth = 3;
  int base_channels = 32;
  int feature_channels = 64;
  bool use_deform = false;
  DeformPlacement placement = DeformPlacement::kFirstEncoder;
};

/// U-shaped encoder-decoder with skip connections:
///   stem 3x3 (+LeakyReLU) -> depth x [4x4 stride-2 conv, BN, LeakyReLU]
///   -> depth x [nearest 2x upsample, concat skip, 3x3 conv, BN, ReLU]
///   -> feature 3x3 conv, BN, ReLU  (exposed feature map)
///   -> head 3x3 conv, tanh.
class Generator {
 public:
  struct Output {
    Var image;    // [N, out, H, W] in [-1, 1]
    Var feature;  // [N, feature_channels, H, W]
  };

  static Generator create(const std::string& name, const GeneratorConfig& cfg, Rng& rng);

  /// Throws ShapeError when H or W is not divisible by 2^depth or the
  /// channel count differs from the configuration.
  Output forward(Tape& tape, const Var& x);

  const GeneratorConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }
  std::vector<Parameter*> parameters();
  std::size_t parameter_count();
  /// Parameters of the offset predictors (empty when use_deform is off).
  std::vector<Parameter*> offset_parameters();

 private:
  struct Block {
    ConvLayer conv;
    BatchNormLayer norm;
  };

  std::string name_;
  GeneratorConfig cfg_;
  std::optional<ConvLayer> stem_conv_;
  std::optional<DeformConvLayer> stem_deform_;
  std::vector<Block> down_;
  std::vector<Block> up_;
  Block feature_;
  std::optional<ConvLayer> head_conv_;
  std::optional<DeformConvLayer> head_deform_;
};

struct DiscriminatorConfig {
  int condition_channels = 3;
  int target_channels = 3;
  int base_channels = 16;
  int downsamples = 3;
  bool zero_final = false;
};

/// Patch discriminator on condition (+) target:
///   4x4 stride-2 conv + LeakyReLU, (downsamples-1) x [4x4 stride-2 conv, BN,
///   LeakyReLU], then a 3x3 conv to one logit per patch.
class Discriminator {
 public:
  static Discriminator create(const std::string& name, const DiscriminatorConfig& cfg, Rng& rng);

  /// Patch logits [N, 1, H / 2^downsamples, W / 2^downsamples].
  Var logits(Tape& tape, const Var& condition, const Var& target);
  /// Sigmoid of logits, in (0,1).
  Var forward(Tape& tape, const Var& condition, const Var& target);

  const DiscriminatorConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();
  std::size_t parameter_count();

 private:
  std::string name_;
  DiscriminatorConfig cfg_;
  ConvLayer first_;
  std::vector<std::pair<ConvLayer, BatchNormLayer>> blocks_;
  ConvLayer final_;
};

struct StageOneOutput {
  Var image;             // I'g
  Var semantic;          // S'g
  Var image_feature;     // Fi
  Var semantic_feature;  // Fs
};

struct StageTwoOutput {
  Var image;                     // I''g
  Var semantic;                  // S''g
  Var refined_image_feature;     // F'i
  Var refined_semantic_feature;  // F's
};

/// (I'g, Fi) = Gi(Ia (+) Sg); (S'g, Fs) = Gs(I'g).
StageOneOutput stage1(Tape& tape, Generator& gi, Generator& gs, const Var& source,
                      const Var& target_semantic);

/// F'i = AMi(Fi), F's = AMs(Fs) (pass-through when the module is null);
/// I''g = Ga(Ia (+) I'g (+) F'i (+) F's); S''g = Gs(I''g).
StageTwoOutput stage2(Tape& tape, Generator& ga, Generator& gs, AttentionModule* am_image,
                      AttentionModule* am_semantic, const Var& source, const Var& coarse_image,
                      const Var& image_feature, const Var& semantic_feature);

/// Ablation toggles: AM = attention refinement, DC = deformable stem,
/// LS = semantic-guided discriminator D2.
struct Toggles {
  bool attention = true;
  bool deform = true;
  bool semantic_loss = true;

  friend bool operator==(const Toggles&, const Toggles&) = default;
};

struct ModelConfig {
  int image_channels = 3;
  int semantic_channels = 4;
  int depth = 3;
  int base_channels = 32;
  int feature_channels = 64;
  int attention_reduction = 4;
  int disc_base_channels = 16;
  int disc_downsamples = 3;
  DeformPlacement placement = DeformPlacement::kFirstEncoder;
  Toggles toggles;
};

/// The full two-stage network: Gi, Gs (shared by both stages), Ga, the two
/// attention modules, D1 and the semantic-guided D2.
class CrossViewNet {
 public:
  static CrossViewNet create(const ModelConfig& cfg, std::uint64_t seed);

  struct Forward {
    StageOneOutput stage1;
    StageTwoOutput stage2;
  };
  /// source: [N,3,H,W]; target_semantic: [N,S,H,W] planes in [-1,1].
  Forward forward(Tape& tape, const Var& source, const Var& target_semantic);

  const ModelConfig& config() const { return cfg_; }
  Generator& gi() { return *gi_; }
  Generator& gs() { return *gs_; }
  Generator& ga() { return *ga_; }
  AttentionModule* am_image() { return am_image_ ? &*am_image_ : nullptr; }
  AttentionModule* am_semantic() { return am_semantic_ ? &*am_semantic_ : nullptr; }
  Discriminator& d1() { return *d1_; }
  Discriminator* d2() { return d2_ ? &*d2_ : nullptr; }

  std::vector<Parameter*> generator_parameters();
  std::vector<Parameter*> discriminator_parameters();
  /// Every parameter, generators first, in a fixed order with unique names.
  std::vector<Parameter*> parameters();
  std::size_t parameter_count();

 private:
  ModelConfig cfg_;
  std::unique_ptr<Generator> gi_;
  std::unique_ptr<Generator> gs_;
  std::unique_ptr<Generator> ga_;
  std::optional<AttentionModule> am_image_;
  std::optional<AttentionModule> am_semantic_;
  std::unique_ptr<Discriminator> d1_;
  std::optional<Discriminator> d2_;
};

std::size_t count_parameters(const std::vector<Parameter*>& params);

}  // namespace xvfg
