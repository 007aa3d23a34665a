#include "xvfg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xvfg {
namespace {

double log_sigmoid_value(double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); }

void require_batch(const Var& v, const char* what) {
  if (v.shape().n == 0) throw std::invalid_argument(std::string(what) + ": empty batch");
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {lambda, lambda1, lambda2, lambda3, lambda4, lambda_tv}) {
    if (!(v >= 0.0)) throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
}

Var discriminator_loss(Tape& tape, Discriminator& d, const Var& condition, const Var& real,
                       const Var& fake) {
  require_batch(real, "discriminator_loss");
  require_batch(fake, "discriminator_loss");
  const Var real_term = mean(log_sigmoid(d.logits(tape, condition, real)));
  const Var fake_term = mean(log_sigmoid(scale(d.logits(tape, condition, fake), -1.0)));
  return scale(real_term + fake_term, -1.0);
}

Var generator_adv_loss(Tape& tape, Discriminator& d, const Var& condition, const Var& fake) {
  require_batch(fake, "generator_adv_loss");
  return scale(mean(log_sigmoid(d.logits(tape, condition, fake))), -1.0);
}

AdversarialLoss adv_loss_pair(Tape& tape, Discriminator& d, const Var& condition, const Var& real,
                              const Var& fake) {
  return AdversarialLoss{discriminator_loss(tape, d, condition, real, detach(fake)),
                         generator_adv_loss(tape, d, condition, fake)};
}

double discriminator_loss_from_logits(const Tensor& real_logits, const Tensor& fake_logits) {
  if (real_logits.empty() || fake_logits.empty()) {
    throw std::invalid_argument("discriminator_loss_from_logits: empty batch");
  }
  double real_sum = 0.0;
  for (double v : real_logits.data()) real_sum += log_sigmoid_value(v);
  double fake_sum = 0.0;
  for (double v : fake_logits.data()) fake_sum += log_sigmoid_value(-v);
  return -(real_sum / static_cast<double>(real_logits.size()) +
           fake_sum / static_cast<double>(fake_logits.size()));
}

double adversarial_value_from_probs(const Tensor& real_probs, const Tensor& fake_probs) {
  if (real_probs.empty() || fake_probs.empty()) {
    throw std::invalid_argument("adversarial_value_from_probs: empty batch");
  }
  auto clamp = [](double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); };
  double real_sum = 0.0;
  for (double p : real_probs.data()) real_sum += std::log(clamp(p));
  double fake_sum = 0.0;
  for (double p : fake_probs.data()) fake_sum += std::log(1.0 - clamp(p));
  return real_sum / static_cast<double>(real_probs.size()) +
         fake_sum / static_cast<double>(fake_probs.size());
}

Var pixel_l1(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("pixel_l1: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  return mean(abs(a - b));
}

double pixel_l1(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("pixel_l1: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  if (a.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return total / static_cast<double>(a.size());
}

double tv_loss(const Tensor& image) {
  const Shape s = image.shape();
  double vertical = 0.0;
  double horizontal = 0.0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          if (y + 1 < s.h) vertical += std::abs(image.at(n, c, y + 1, x) - image.at(n, c, y, x));
          if (x + 1 < s.w) horizontal += std::abs(image.at(n, c, y, x + 1) - image.at(n, c, y, x));
        }
  const double nv = static_cast<double>(s.n) * s.c * (s.h - 1) * s.w;
  const double nh = static_cast<double>(s.n) * s.c * s.h * (s.w - 1);
  return (nv > 0 ? vertical / nv : 0.0) + (nh > 0 ? horizontal / nh : 0.0);
}

Var tv_loss(const Var& image) {
  const Shape s = image.shape();
  const double nv = static_cast<double>(s.n) * s.c * (s.h - 1) * s.w;
  const double nh = static_cast<double>(s.n) * s.c * s.h * (s.w - 1);
  const int id = image.id();
  return image.tape()->record(
      Tensor::scalar(tv_loss(image.value())), {id}, [id, s, nv, nh](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(id);
        Tensor gx(s);
        const double kv = nv > 0 ? g.item() / nv : 0.0;
        const double kh = nh > 0 ? g.item() / nh : 0.0;
        auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
        for (int n = 0; n < s.n; ++n)
          for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
              for (int xx = 0; xx < s.w; ++xx) {
                if (y + 1 < s.h) {
                  const double d = kv * sign(x.at(n, c, y + 1, xx) - x.at(n, c, y, xx));
                  gx.at(n, c, y + 1, xx) += d;
                  gx.at(n, c, y, xx) -= d;
                }
                if (xx + 1 < s.w) {
                  const double d = kh * sign(x.at(n, c, y, xx + 1) - x.at(n, c, y, xx));
                  gx.at(n, c, y, xx + 1) += d;
                  gx.at(n, c, y, xx) -= d;
                }
              }
        t.accumulate(id, gx);
      });
}

}  // namespace xvfg
