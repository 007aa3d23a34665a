#include "xvfg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "xvfg/attention.hpp"
#include "xvfg/deform.hpp"
#include "xvfg/losses.hpp"
#include "xvfg/networks.hpp"
#include "xvfg/ops.hpp"
#include "xvfg/rng.hpp"

namespace xvfg {
namespace {

double evaluate(const std::function<Var(Tape&)>& loss) {
  Tape tape(false);
  const Var out = loss(tape);
  if (!out.shape().is_scalar()) throw ShapeError("gradcheck: loss must be scalar, got " + out.shape().str());
  return out.value().item();
}

// Random values with magnitude in [lo, hi] and random sign, keeping inputs
// away from the kinks of relu / abs / max at zero.
Tensor away_from_zero(Shape s, Rng& rng, double lo = 0.1, double hi = 1.0) {
  Tensor t(s);
  for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return t;
}

// Fixed random projection so every output element contributes to the loss.
Var project(Tape& tape, const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, tape.constant(random_uniform(out.shape(), rng, -1.0, 1.0))));
}

struct Case {
  std::string op;
  std::vector<std::shared_ptr<Parameter>> owned;
  std::vector<Parameter*> inputs;
  std::function<Var(Tape&)> loss;
  std::shared_ptr<void> keep_alive;
};

class CaseBuilder {
 public:
  CaseBuilder(std::vector<Case>& cases, std::uint64_t seed) : cases_(cases), rng_(seed), seed_(seed) {}

  Parameter* input(Case& c, const std::string& name, Tensor value) {
    c.owned.push_back(std::make_shared<Parameter>(name, std::move(value)));
    c.inputs.push_back(c.owned.back().get());
    return c.owned.back().get();
  }
  Rng& rng() { return rng_; }
  std::uint64_t projection_seed() { return derive_seed(seed_, counter_++); }
  Case& add(const std::string& op) {
    cases_.push_back(Case{op, {}, {}, {}, {}});
    return cases_.back();
  }

 private:
  std::vector<Case>& cases_;
  Rng rng_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

void unary_case(CaseBuilder& b, const std::string& op, Var (*fn)(const Var&), Tensor x) {
  Case& c = b.add(op);
  Parameter* p = b.input(c, "x", std::move(x));
  const auto seed = b.projection_seed();
  c.loss = [p, fn, seed](Tape& t) { return project(t, fn(t.param(*p)), seed); };
}

std::vector<Case> tensor_cases(std::uint64_t seed) {
  std::vector<Case> cases;
  CaseBuilder b(cases, seed);
  Rng& rng = b.rng();
  const Shape s{2, 3, 4, 5};

  auto binary_case = [&](const std::string& op, Var (*fn)(const Var&, const Var&), Shape sb) {
    Case& c = b.add(op);
    Parameter* pa = b.input(c, "a", random_uniform(s, rng));
    Parameter* pb = b.input(c, "b", random_uniform(sb, rng));
    const auto ps = b.projection_seed();
    c.loss = [pa, pb, fn, ps](Tape& t) { return project(t, fn(t.param(*pa), t.param(*pb)), ps); };
  };
  binary_case("add", &add, s);
  binary_case("add_broadcast", &add, Shape{1, 3, 1, 1});
  binary_case("sub", &sub, s);
  binary_case("mul", &mul, s);
  binary_case("mul_broadcast_channel", &mul, Shape{2, 3, 1, 1});
  binary_case("mul_broadcast_spatial", &mul, Shape{2, 1, 4, 5});

  unary_case(b, "scale", [](const Var& x) { return scale(x, -1.7); }, random_uniform(s, rng));
  unary_case(b, "add_scalar", [](const Var& x) { return add_scalar(x, 0.3); }, random_uniform(s, rng));
  unary_case(b, "abs", &xvfg::abs, away_from_zero(s, rng));
  unary_case(b, "sum", &sum, random_uniform(s, rng));
  unary_case(b, "mean", &mean, random_uniform(s, rng));
  unary_case(b, "leaky_relu", &leaky_relu, away_from_zero(s, rng));
  unary_case(b, "relu", &relu, away_from_zero(s, rng));
  unary_case(b, "sigmoid", &sigmoid, random_uniform(s, rng, -3.0, 3.0));
  unary_case(b, "tanh", &xvfg::tanh, random_uniform(s, rng, -2.0, 2.0));
  unary_case(b, "log_sigmoid", &log_sigmoid, random_uniform(s, rng, -4.0, 4.0));
  unary_case(b, "upsample_nearest2x", &upsample_nearest2x, random_uniform(Shape{2, 2, 3, 3}, rng));
  unary_case(b, "spatial_mean", &spatial_mean, random_uniform(s, rng));
  unary_case(b, "spatial_max", &spatial_max, random_uniform(s, rng));
  unary_case(b, "channel_mean", &channel_mean, random_uniform(s, rng));
  unary_case(b, "channel_max", &channel_max, random_uniform(s, rng));

  auto conv_case = [&](const std::string& op, int k, int stride, int pad) {
    Case& c = b.add(op);
    Parameter* x = b.input(c, "input", random_uniform(Shape{2, 3, 6, 6}, rng));
    Parameter* w = b.input(c, "weight", random_normal(Shape{4, 3, k, k}, rng, 0.5));
    Parameter* bias = b.input(c, "bias", random_normal(Shape{1, 4, 1, 1}, rng, 0.5));
    const auto ps = b.projection_seed();
    c.loss = [=](Tape& t) {
      return project(t, conv2d(t.param(*x), t.param(*w), t.param(*bias), stride, pad), ps);
    };
  };
  conv_case("conv2d_3x3_s1_p1", 3, 1, 1);
  conv_case("conv2d_4x4_s2_p1", 4, 2, 1);
  conv_case("conv2d_1x1_s1_p0", 1, 1, 0);

  {
    Case& c = b.add("batch_norm");
    Parameter* x = b.input(c, "input", random_uniform(Shape{2, 4, 6, 6}, rng));
    Parameter* g = b.input(c, "gamma", random_uniform(Shape{1, 4, 1, 1}, rng, 0.5, 1.5));
    Parameter* be = b.input(c, "beta", random_normal(Shape{1, 4, 1, 1}, rng, 0.5));
    const auto ps = b.projection_seed();
    c.loss = [=](Tape& t) { return project(t, batch_norm(t.param(*x), t.param(*g), t.param(*be)), ps); };
  }
  {
    Case& c = b.add("concat_channels");
    Parameter* a = b.input(c, "a", random_uniform(Shape{2, 2, 3, 3}, rng));
    Parameter* d = b.input(c, "b", random_uniform(Shape{2, 3, 3, 3}, rng));
    const auto ps = b.projection_seed();
    c.loss = [=](Tape& t) { return project(t, concat_channels({t.param(*a), t.param(*d), t.param(*a)}), ps); };
  }
  {
    Case& c = b.add("softmax_cross_entropy");
    Parameter* z = b.input(c, "logits", random_uniform(Shape{3, 4, 1, 1}, rng, -2.0, 2.0));
    c.loss = [z](Tape& t) {
      static const int labels[] = {0, 3, 1};
      return softmax_cross_entropy(t.param(*z), labels);
    };
  }
  {
    Case& c = b.add("fan_out_chain");
    Parameter* x = b.input(c, "x", random_uniform(s, rng));
    const auto ps = b.projection_seed();
    c.loss = [=](Tape& t) {
      const Var v = t.param(*x);
      return project(t, mul(sigmoid(v), v) + xvfg::tanh(v) * 0.5, ps);
    };
  }
  return cases;
}

std::vector<Case> deform_cases(std::uint64_t seed) {
  std::vector<Case> cases;
  CaseBuilder b(cases, seed);
  Rng& rng = b.rng();
  {
    Case& c = b.add("sample_points");
    Parameter* map = b.input(c, "map", random_uniform(Shape{2, 3, 5, 6}, rng));
    Tensor coords(Shape{2, 2, 7, 1});
    for (int n = 0; n < 2; ++n)
      for (int q = 0; q < 7; ++q) {
        coords.at(n, 0, q, 0) = rng.uniform(-0.8, 4.8);
        coords.at(n, 1, q, 0) = rng.uniform(-0.8, 5.8);
      }
    Parameter* pc = b.input(c, "coords", coords);
    const auto ps = b.projection_seed();
    c.loss = [=](Tape& t) { return project(t, sample_points(t.param(*map), t.param(*pc)), ps); };
  }
  {
    Case& c = b.add("deform_conv2d");
    Parameter* x = b.input(c, "input", random_uniform(Shape{1, 2, 6, 6}, rng));
    Parameter* off = b.input(c, "offsets", random_uniform(Shape{1, 18, 6, 6}, rng, -1.5, 1.5));
    Parameter* w = b.input(c, "weight", random_normal(Shape{3, 2, 3, 3}, rng, 0.5));
    Parameter* bias = b.input(c, "bias", random_normal(Shape{1, 3, 1, 1}, rng, 0.5));
    const auto ps = b.projection_seed();
    c.loss = [=](Tape& t) {
      return project(t, deform_conv2d(t.param(*x), t.param(*off), t.param(*w), t.param(*bias), 1, 1), ps);
    };
  }
  {
    Case& c = b.add("deform_conv2d_stride2");
    Parameter* x = b.input(c, "input", random_uniform(Shape{2, 2, 7, 7}, rng));
    Parameter* off = b.input(c, "offsets", random_uniform(Shape{2, 18, 4, 4}, rng, -1.5, 1.5));
    Parameter* w = b.input(c, "weight", random_normal(Shape{2, 2, 3, 3}, rng, 0.5));
    Parameter* bias = b.input(c, "bias", random_normal(Shape{1, 2, 1, 1}, rng, 0.5));
    const auto ps = b.projection_seed();
    c.loss = [=](Tape& t) {
      return project(t, deform_conv2d(t.param(*x), t.param(*off), t.param(*w), t.param(*bias), 2, 1), ps);
    };
  }
  {
    // Through the offset predictor: non-zero predictor weights so that the
    // sampling points leave the integer grid.
    Case& c = b.add("deform_layer");
    auto layer = std::make_shared<DeformConvLayer>(DeformConvLayer::create("dc", 2, 3, 3, 1, 1, rng, 0.5));
    layer->offset_weight.value = random_normal(layer->offset_weight.value.shape(), rng, 0.4);
    layer->offset_bias.value = random_uniform(layer->offset_bias.value.shape(), rng, -0.7, 0.7);
    Parameter* x = b.input(c, "input", random_uniform(Shape{1, 2, 6, 6}, rng));
    for (Parameter* p : layer->parameters()) c.inputs.push_back(p);
    c.keep_alive = layer;
    const auto ps = b.projection_seed();
    c.loss = [=](Tape& t) { return project(t, layer->forward(t, t.param(*x)), ps); };
  }
  return cases;
}

std::vector<Case> attention_cases(std::uint64_t seed) {
  std::vector<Case> cases;
  CaseBuilder b(cases, seed);
  Rng& rng = b.rng();
  auto add_case = [&](const std::string& op, int which) {
    Case& c = b.add(op);
    auto am = std::make_shared<AttentionModule>(AttentionModule::create("am", 4, 2, rng, 0.5));
    Parameter* x = b.input(c, "features", random_uniform(Shape{2, 4, 6, 6}, rng));
    for (Parameter* p : am->parameters()) c.inputs.push_back(p);
    c.keep_alive = am;
    const auto ps = b.projection_seed();
    c.loss = [=](Tape& t) {
      const Var f = t.param(*x);
      const Var out = which == 0   ? am->channel_attention(t, f)
                      : which == 1 ? am->spatial_attention(t, f)
                                   : am->refine(t, f);
      return project(t, out, ps);
    };
  };
  add_case("channel_attention", 0);
  add_case("spatial_attention", 1);
  add_case("attention_refine", 2);
  return cases;
}

std::vector<Case> loss_cases(std::uint64_t seed) {
  std::vector<Case> cases;
  CaseBuilder b(cases, seed);
  Rng& rng = b.rng();
  const Shape img{2, 3, 8, 8};

  auto make_disc = [&](int cond, int target) {
    DiscriminatorConfig dc;
    dc.condition_channels = cond;
    dc.target_channels = target;
    dc.base_channels = 3;
    dc.downsamples = 2;
    auto d = std::make_shared<Discriminator>(Discriminator::create("D", dc, rng));
    for (Parameter* p : d->parameters()) p->value = random_normal(p->value.shape(), rng, 0.3);
    for (Parameter* p : d->parameters()) {
      if (p->name.find("gamma") != std::string::npos) p->value = random_uniform(p->value.shape(), rng, 0.5, 1.5);
    }
    return d;
  };
  {
    Case& c = b.add("discriminator_loss");
    auto d = make_disc(3, 3);
    Parameter* cond = b.input(c, "condition", random_uniform(img, rng));
    Parameter* real = b.input(c, "real", random_uniform(img, rng));
    Parameter* fake = b.input(c, "fake", random_uniform(img, rng));
    for (Parameter* p : d->parameters()) c.inputs.push_back(p);
    c.keep_alive = d;
    c.loss = [=](Tape& t) {
      return discriminator_loss(t, *d, t.param(*cond), t.param(*real), t.param(*fake));
    };
  }
  {
    Case& c = b.add("generator_adv_loss");
    auto d = make_disc(3, 3);
    Parameter* cond = b.input(c, "condition", random_uniform(img, rng));
    Parameter* fake = b.input(c, "fake", random_uniform(img, rng));
    c.keep_alive = d;
    c.loss = [=](Tape& t) { return generator_adv_loss(t, *d, t.param(*cond), t.param(*fake)); };
  }
  {
    // Semantic-guided pair: condition Ia (+) Sg, target image (+) semantics.
    Case& c = b.add("semantic_adv_loss");
    auto d = make_disc(7, 7);
    Parameter* ia = b.input(c, "source", random_uniform(img, rng));
    Parameter* sg = b.input(c, "semantic", random_uniform(Shape{2, 4, 8, 8}, rng));
    Parameter* ri = b.input(c, "real_image", random_uniform(img, rng));
    Parameter* fi = b.input(c, "fake_image", random_uniform(img, rng));
    Parameter* fs = b.input(c, "fake_semantic", random_uniform(Shape{2, 4, 8, 8}, rng));
    for (Parameter* p : d->parameters()) c.inputs.push_back(p);
    c.keep_alive = d;
    c.loss = [=](Tape& t) {
      const Var s = t.param(*sg);
      const Var cond = concat_channels({t.param(*ia), s});
      const Var real = concat_channels({t.param(*ri), s});
      const Var fake = concat_channels({t.param(*fi), t.param(*fs)});
      return discriminator_loss(t, *d, cond, real, fake) + generator_adv_loss(t, *d, cond, fake) * 0.5;
    };
  }
  {
    Case& c = b.add("pixel_l1");
    Parameter* a = b.input(c, "a", random_uniform(img, rng));
    Tensor shift = away_from_zero(img, rng, 0.05, 0.5);
    Tensor other = a->value;
    for (std::size_t i = 0; i < other.size(); ++i) other[i] += shift[i];
    Parameter* o = b.input(c, "b", other);
    c.loss = [=](Tape& t) { return pixel_l1(t.param(*a), t.param(*o)); };
  }
  {
    Case& c = b.add("tv_loss");
    Parameter* x = b.input(c, "image", random_uniform(img, rng));
    c.loss = [=](Tape& t) { return tv_loss(t.param(*x)); };
  }
  {
    Case& c = b.add("total_objective");
    Parameter* i1 = b.input(c, "coarse", random_uniform(img, rng));
    Parameter* i2 = b.input(c, "refined", random_uniform(img, rng));
    Parameter* s1 = b.input(c, "semantic1", random_uniform(Shape{2, 4, 8, 8}, rng));
    Parameter* s2 = b.input(c, "semantic2", random_uniform(Shape{2, 4, 8, 8}, rng));
    Parameter* adv = b.input(c, "adversarial", random_uniform(Shape{1, 4, 1, 1}, rng, 0.1, 2.0));
    const Tensor target = random_uniform(img, rng);
    const Tensor sem = random_uniform(Shape{2, 4, 8, 8}, rng);
    c.loss = [=](Tape& t) {
      LossWeights w;
      const Var ig = t.constant(target);
      const Var sg = t.constant(sem);
      const Var a = t.param(*adv);
      AdversarialTerms<Var> terms;
      Var parts[4];
      for (int k = 0; k < 4; ++k) {
        Tensor pick(Shape{1, 4, 1, 1});
        pick[static_cast<std::size_t>(k)] = 1.0;
        parts[k] = sum(mul(a, t.constant(pick)));
      }
      terms = {parts[0], parts[1], parts[2], parts[3]};
      const Var refined = t.param(*i2);
      const PixelTerms<Var> p{pixel_l1(t.param(*i1), ig), pixel_l1(t.param(*s1), sg), pixel_l1(refined, ig),
                              pixel_l1(t.param(*s2), sg)};
      return total_objective(w, p, total_adv_loss(w, terms), tv_loss(refined));
    };
  }
  return cases;
}

std::vector<Case> cases_for(const std::string& module, std::uint64_t seed) {
  if (module == "tensor") return tensor_cases(seed);
  if (module == "deform") return deform_cases(seed);
  if (module == "attention") return attention_cases(seed);
  if (module == "losses") return loss_cases(seed);
  throw std::invalid_argument("unknown gradcheck module '" + module +
                              "' (expected tensor, deform, attention or losses)");
}

}  // namespace

double gradcheck_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckResult check_gradients(const std::string& module, const std::string& op,
                                const std::vector<Parameter*>& inputs,
                                const std::function<Var(Tape&)>& loss, double step, double tolerance) {
  for (Parameter* p : inputs) p->zero_grad();
  {
    Tape tape;
    const Var out = loss(tape);
    tape.backward(out);
  }
  GradcheckResult r;
  r.module = module;
  r.op = op;
  for (Parameter* p : inputs) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = evaluate(loss);
      p->value[i] = saved - step;
      const double down = evaluate(loss);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[i];
      const double err = gradcheck_relative_error(analytic, numeric);
      if (r.worst_tensor.empty() || std::isnan(err) || err > r.max_rel_error) {
        r.max_rel_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
        r.worst_tensor = p->name;
        r.worst_index = i;
        r.analytic = analytic;
        r.numeric = numeric;
      }
    }
  }
  r.passed = r.max_rel_error <= tolerance;
  return r;
}

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> modules{"tensor", "deform", "attention", "losses"};
  return modules;
}

std::vector<GradcheckResult> run_gradcheck(const std::string& module, std::uint64_t seed) {
  std::vector<Case> cases = cases_for(module, seed);
  std::vector<GradcheckResult> out;
  for (Case& c : cases) out.push_back(check_gradients(module, c.op, c.inputs, c.loss));
  return out;
}

Var faulty_square(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= v;
  const int id = x.id();
  return x.tape()->record(std::move(out), {id}, [id](Tape& t, const Tensor& g) {
    Tensor gx = g;
    const Tensor& xv = t.value(id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= xv[i];
    t.accumulate(id, gx);
  });
}

GradcheckResult run_faulty_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Parameter x("x", away_from_zero(Shape{1, 2, 3, 3}, rng));
  const auto ps = derive_seed(seed, 99);
  return check_gradients("fixture", "faulty_square", {&x},
                         [&x, ps](Tape& t) { return project(t, faulty_square(t.param(x)), ps); });
}

}  // namespace xvfg
