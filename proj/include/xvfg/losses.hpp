#pragma once

#include "xvfg/autograd.hpp"
#include "xvfg/networks.hpp"
#include "xvfg/ops.hpp"

namespace xvfg {

/// Weights of the overall objective. Defaults are the published settings.
struct LossWeights {
  double lambda = 4.0;  // second-stage adversarial weight
  double lambda1 = 100.0;  // L1(I'g, Ig)
  double lambda2 = 1.0;    // L1(S'g, Sg)
  double lambda3 = 200.0;  // L1(I''g, Ig)
  double lambda4 = 2.0;    // L1(S''g, Sg)
  double lambda_tv = 1e-6;
  Toggles toggles;

  /// Throws std::invalid_argument if any weight is negative.
  void validate() const;
};

/// Lower bound applied to probabilities by the probability-domain helpers.
inline constexpr double kProbabilityClamp = 1e-7;

struct AdversarialLoss {
  Var d_loss;  // -[mean log D(real) + mean log(1 - D(fake))], fake detached
  Var g_loss;  // -mean log D(fake), fake attached (non-saturating)
};

/// Scores real and fake pairs with `d`. The fake is detached for d_loss;
/// g_loss keeps the generator path. Expectations are means over batch and
/// patch map, evaluated through log-sigmoid of the logits.
AdversarialLoss adv_loss_pair(Tape& tape, Discriminator& d, const Var& condition, const Var& real,
                              const Var& fake);

/// -[mean log D(cond, real) + mean log(1 - D(cond, fake))]; `fake` is used as given.
Var discriminator_loss(Tape& tape, Discriminator& d, const Var& condition, const Var& real,
                       const Var& fake);
/// -mean log D(cond, fake).
Var generator_adv_loss(Tape& tape, Discriminator& d, const Var& condition, const Var& fake);

/// d_loss from logit tensors (no tape). Finite for any finite logits.
double discriminator_loss_from_logits(const Tensor& real_logits, const Tensor& fake_logits);
/// Value of the conditional adversarial objective E[log D(real)] + E[log(1 - D(fake))]
/// from probabilities, clamped to [kProbabilityClamp, 1 - kProbabilityClamp].
double adversarial_value_from_probs(const Tensor& real_probs, const Tensor& fake_probs);

/// The four adversarial terms of the total adversarial loss.
template <typename T>
struct AdversarialTerms {
  T image_stage1;     // D1 on (Ia, I'g)
  T image_stage2;     // D1 on (Ia, I''g)
  T semantic_stage1;  // D2 on (Ia (+) Sg, I'g (+) S'g)
  T semantic_stage2;  // D2 on (Ia (+) Sg, I''g (+) S''g)
};

/// t1 + lambda t2 [+ t3 + lambda t4 when the semantic loss is enabled].
template <typename T>
T total_adv_loss(const LossWeights& w, const AdversarialTerms<T>& t) {
  T total = t.image_stage1 + t.image_stage2 * w.lambda;
  if (w.toggles.semantic_loss) total = total + t.semantic_stage1 + t.semantic_stage2 * w.lambda;
  return total;
}

/// Mean absolute difference over all elements.
Var pixel_l1(const Var& a, const Var& b);
double pixel_l1(const Tensor& a, const Tensor& b);

/// Anisotropic total variation: mean |x[h+1,w]-x[h,w]| + mean |x[h,w+1]-x[h,w]|.
/// A spatial extent of 1 contributes zero for that direction.
Var tv_loss(const Var& image);
double tv_loss(const Tensor& image);

/// The four pixel terms, in weight order lambda1..lambda4.
template <typename T>
struct PixelTerms {
  T image_stage1;     // L1(I'g, Ig)
  T semantic_stage1;  // L1(S'g, Sg)
  T image_stage2;     // L1(I''g, Ig)
  T semantic_stage2;  // L1(S''g, Sg)
};

/// sum_i lambda_i L1_i + generator adversarial term + lambda_tv TV(I''g).
template <typename T>
T total_objective(const LossWeights& w, const PixelTerms<T>& p, const T& adversarial, const T& tv) {
  return p.image_stage1 * w.lambda1 + p.semantic_stage1 * w.lambda2 + p.image_stage2 * w.lambda3 +
         p.semantic_stage2 * w.lambda4 + adversarial + tv * w.lambda_tv;
}

}  // namespace xvfg
