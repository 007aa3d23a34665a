#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "xvfg/image_io.hpp"
#include "xvfg/probe.hpp"
#include "xvfg/trainer.hpp"

using namespace xvfg;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny(Ablation a = Ablation::kD) {
  TrainConfig c;
  c.size = 32;
  c.iterations = 3;
  c.batch_size = 2;
  c.seed = 5;
  c.ablation = a;
  c.model.base_channels = 4;
  c.model.feature_channels = 8;
  c.model.disc_base_channels = 4;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xvfg_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<Tensor> snapshot(const std::vector<Parameter*>& ps) {
  std::vector<Tensor> out;
  for (Parameter* p : ps) out.push_back(p->value);
  return out;
}

double max_change(const std::vector<Parameter*>& ps, const std::vector<Tensor>& snap) {
  double m = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) m = std::max(m, max_abs_diff(ps[i]->value, snap[i]));
  return m;
}

}  // namespace

TEST(TrainConfig, AblationMapping) {
  EXPECT_EQ(ablation_toggles(Ablation::kA), (Toggles{false, false, false}));
  EXPECT_EQ(ablation_toggles(Ablation::kB), (Toggles{true, false, false}));
  EXPECT_EQ(ablation_toggles(Ablation::kC), (Toggles{true, true, false}));
  EXPECT_EQ(ablation_toggles(Ablation::kD), (Toggles{true, true, true}));
  EXPECT_EQ(ablation_method(Ablation::kA), "SGAN");
  EXPECT_EQ(ablation_method(Ablation::kB), "SGAN + AM");
  EXPECT_EQ(ablation_method(Ablation::kC), "SGAN + AM + DC");
  EXPECT_EQ(ablation_method(Ablation::kD), "SGAN + AM + DC + LS");
  EXPECT_EQ(parse_ablation("c"), Ablation::kC);
  EXPECT_THROW(parse_ablation("E"), ConfigError);
  EXPECT_EQ(parse_direction("g2a"), Direction::kG2A);
  EXPECT_THROW(parse_direction("up"), ConfigError);
}

TEST(TrainConfig, ValidationErrors) {
  TrainConfig c = tiny();
  c.size = 48;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.weights.lambda1 = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(tiny().total_iterations(64), 3);
  c = tiny();
  c.iterations = 0;
  c.epochs = 2;
  EXPECT_EQ(c.total_iterations(7), 8);
}

TEST(Trainer, SizeMismatchAndEmptyDataAreDataErrors) {
  EXPECT_THROW(train(tiny(), {}), DataError);
  EXPECT_THROW(train(tiny(), toy_dataset(1, 2, 64)), DataError);
}

TEST(Trainer, LossRecordPartsSumToTotal) {
  Trainer tr(tiny());
  const auto data = toy_dataset(3, 2, 32);
  const LossRecord r = tr.step({&data[0], &data[1]});
  EXPECT_NEAR(r.g_adv + r.l1_stage1 + r.l1_stage2 + r.tv, r.total, 1e-9 * std::abs(r.total));
  EXPECT_TRUE(r.d2.has_value());
  EXPECT_EQ(r.iter, 1);
}

TEST(Trainer, DiscriminatorStepDoesNotTouchGenerators) {
  // A vanishing generator step size isolates the discriminator update; any
  // leaked update would move parameters by about the regular step size.
  TrainConfig c = tiny();
  c.generator_adam.lr = 1e-300;
  Trainer tr(c);
  const auto g = tr.net().generator_parameters();
  const auto d = tr.net().discriminator_parameters();
  const auto g0 = snapshot(g), d0 = snapshot(d);
  const auto data = toy_dataset(4, 2, 32);
  tr.step({&data[0], &data[1]});
  EXPECT_LE(max_change(g, g0), 1e-299);
  EXPECT_GT(max_change(d, d0), 1e-6);
}

TEST(Trainer, GeneratorStepDoesNotTouchDiscriminators) {
  TrainConfig c = tiny();
  c.discriminator_adam.lr = 1e-300;
  Trainer tr(c);
  const auto g = tr.net().generator_parameters();
  const auto d = tr.net().discriminator_parameters();
  const auto g0 = snapshot(g), d0 = snapshot(d);
  const auto data = toy_dataset(4, 2, 32);
  tr.step({&data[0], &data[1]});
  EXPECT_LE(max_change(d, d0), 1e-299);
  EXPECT_GT(max_change(g, g0), 1e-6);
}

TEST(Trainer, AblationALeavesD2Empty) {
  TrainConfig c = tiny(Ablation::kA);
  c.out_dir = scratch("abl_a");
  train(c, toy_dataset(1, 4, 32));
  const auto log = lines(slurp(c.out_dir / "loss_log.csv"));
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[0], "iter,d1,d2,g_adv,l1_stage1,l1_stage2,tv,total");
  for (std::size_t i = 1; i < log.size(); ++i) {
    EXPECT_EQ(log[i].rfind(std::to_string(i) + ",", 0), 0u);
    const auto first = log[i].find(',');
    const auto second = log[i].find(',', first + 1);
    EXPECT_EQ(second, log[i].find(",,"));
  }
}

TEST(Trainer, WritesEpochArtifacts) {
  TrainConfig c = tiny();
  c.iterations = 0;
  c.epochs = 2;
  c.batch_size = 3;
  c.out_dir = scratch("epochs");
  const auto data = toy_dataset(2, 5, 32);
  const TrainResult r = train(c, data);
  EXPECT_EQ(r.log.size(), 4u);
  for (int e = 1; e <= 2; ++e) {
    EXPECT_TRUE(fs::exists(c.out_dir / ("checkpoint_epoch_" + std::to_string(e) + ".xvfg")));
    const Image8 grid = read_ppm(c.out_dir / ("grid_epoch_" + std::to_string(e) + ".ppm"));
    EXPECT_EQ(grid.width, 4 * 32);
  }
  EXPECT_EQ(r.final_checkpoint, c.out_dir / "final.xvfg");
  EXPECT_TRUE(fs::exists(r.final_checkpoint));
}

TEST(Trainer, SameSeedSameLog) {
  const auto data = toy_dataset(8, 6, 32);
  TrainConfig c = tiny();
  c.out_dir = scratch("det1");
  train(c, data);
  TrainConfig c2 = c;
  c2.out_dir = scratch("det2");
  train(c2, data);
  EXPECT_EQ(slurp(c.out_dir / "loss_log.csv"), slurp(c2.out_dir / "loss_log.csv"));
  EXPECT_EQ(slurp(c.out_dir / "final.xvfg"), slurp(c2.out_dir / "final.xvfg"));
}

TEST(Trainer, GroundToAerialUsesAerialSemantics) {
  TrainConfig c = tiny();
  c.direction = Direction::kG2A;
  c.iterations = 1;
  const auto data = toy_dataset(1, 2, 32);
  const Views v = select_views(data[0], Direction::kG2A);
  EXPECT_EQ(max_abs_diff(v.source, data[0].ground), 0.0);
  EXPECT_EQ(max_abs_diff(v.target_semantic, data[0].aerial_semantic), 0.0);
  EXPECT_NO_THROW(train(c, data));
  auto stripped = data;
  stripped[1].aerial_semantic = Tensor();
  EXPECT_THROW(train(c, stripped), DataError);
}

TEST(Checkpointing, RestoreReproducesOutputsAndBytes) {
  TrainConfig c = tiny();
  c.out_dir = scratch("restore");
  const auto data = toy_dataset(6, 4, 32);
  TrainResult r = train(c, data);
  LoadedModel m = load_model(r.final_checkpoint);
  EXPECT_EQ(m.config.seed, c.seed);
  EXPECT_EQ(m.config.ablation, c.ablation);
  EXPECT_EQ(m.config.model.base_channels, 4);
  const auto a = generate(*r.net, data[0], c.direction);
  const auto b = generate(*m.net, data[0], c.direction);
  EXPECT_EQ(max_abs_diff(a.refined, b.refined), 0.0);
  save_checkpoint(c.out_dir / "again.xvfg", model_checkpoint(*m.net, m.config));
  EXPECT_EQ(slurp(c.out_dir / "again.xvfg"), slurp(r.final_checkpoint));
}

TEST(Checkpointing, MismatchIsCheckpointError) {
  TrainConfig c = tiny();
  CrossViewNet net = CrossViewNet::create(c.model_config(), 1);
  NamedTensors t = model_checkpoint(net, c);
  NamedTensors missing(t.begin(), t.end() - 1);
  EXPECT_THROW(restore_model(missing), CheckpointError);
  NamedTensors reshaped = t;
  reshaped[3].second = Tensor(Shape{1, 1, 1, 1});
  EXPECT_THROW(restore_model(reshaped), CheckpointError);
  NamedTensors extra = t;
  extra.emplace_back("bogus", Tensor::scalar(0));
  EXPECT_THROW(restore_model(extra), CheckpointError);
  NamedTensors no_meta(t.begin() + 1, t.end());
  EXPECT_THROW(restore_model(no_meta), CheckpointError);
}

TEST(Evaluate, RealAgainstItself) {
  const auto data = toy_dataset(2, 6, 32);
  std::vector<Tensor> targets;
  std::vector<int> labels;
  for (const auto& s : data) {
    targets.push_back(s.ground);
    labels.push_back(s.ground_label);
  }
  // KL is zero only when the probe cannot tell the images apart.
  ConstantProbe probe({0.1, 0.6, 0.3});
  const MetricRow m = image_metrics(targets, targets, labels, probe);
  EXPECT_NEAR(m.ssim, 1.0, 1e-12);
  EXPECT_EQ(m.psnr, kPsnrInfinite);
  EXPECT_NEAR(m.kl_mean, 0.0, 1e-15);
  EXPECT_NEAR(m.kl_std, 0.0, 1e-15);
  auto trained = make_probe(data, Direction::kA2G, 1);
  EXPECT_GE(image_metrics(targets, targets, labels, *trained).kl_mean, 0.0);
}

TEST(Evaluate, OneRowPerRun) {
  const auto data = toy_dataset(2, 3, 32);
  TrainConfig c = tiny();
  CrossViewNet net = CrossViewNet::create(c.model_config(), 1);
  auto probe = make_probe(data, Direction::kA2G, 1);
  const EvalReport r = evaluate(net, data, Direction::kA2G, *probe, "SGAN");
  EXPECT_EQ(r.samples, 3);
  EXPECT_EQ(r.refined.method, "SGAN");
  EXPECT_EQ(r.refined.direction, "a2g");
  EXPECT_EQ(r.refined.size, 32);
  EXPECT_EQ(metric_csv_row(r.refined).find('\n'), std::string::npos);
}

TEST(Ablation, CsvShape) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : {1u, 2u})
    for (Ablation a : kAllAblations) rows.push_back({seed, a, 20.0 + seed, 0.5, 100u + static_cast<unsigned>(a)});
  const auto out = lines(ablation_csv(rows));
  ASSERT_EQ(out.size(), 1u + 8u + 4u);
  EXPECT_EQ(out[0], "seed,baseline,method,psnr,ssim,param_count");
  EXPECT_EQ(out[1], "1,A,SGAN,21.000000,0.500000,100");
  EXPECT_EQ(out[4], "1,D,SGAN + AM + DC + LS,21.000000,0.500000,103");
  EXPECT_EQ(out[9], "mean,A,SGAN,21.500000,0.500000,100");
}
