#include "xvfg/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "xvfg/errors.hpp"
#include "xvfg/image_io.hpp"
#include "xvfg/ops.hpp"
#include "xvfg/probe.hpp"
#include "xvfg/rng.hpp"

namespace xvfg {
namespace {

constexpr double kMetaVersion = 1.0;
constexpr const char* kMetaName = "meta/config";
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kHeldOutStream = 0x484f4c44ULL;

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

Tensor to_intensity(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.data()) v = (std::clamp(v, -1.0, 1.0) + 1.0) * 127.5;
  return out;
}

void check_sizes(const std::vector<PairedSample>& data, int size) {
  for (const auto& s : data) {
    if (s.aerial.h() != size || s.aerial.w() != size || s.ground.h() != size || s.ground.w() != size) {
      throw DataError("sample '" + s.id + "' is " + std::to_string(s.aerial.h()) + "x" +
                      std::to_string(s.aerial.w()) + " but the configuration expects " +
                      std::to_string(size) + "x" + std::to_string(size));
    }
  }
}

Tensor stack(const std::vector<Tensor>& parts) { return stack_batch(std::span<const Tensor>(parts)); }

std::vector<double> meta_vector(const TrainConfig& cfg) {
  const ModelConfig& m = cfg.model;
  return {kMetaVersion,
          static_cast<double>(cfg.direction == Direction::kA2G ? 0 : 1),
          static_cast<double>(cfg.size),
          static_cast<double>(static_cast<int>(cfg.ablation)),
          static_cast<double>(m.depth),
          static_cast<double>(m.base_channels),
          static_cast<double>(m.feature_channels),
          static_cast<double>(m.attention_reduction),
          static_cast<double>(m.disc_base_channels),
          static_cast<double>(m.disc_downsamples),
          static_cast<double>(static_cast<int>(m.placement)),
          static_cast<double>(m.image_channels),
          static_cast<double>(m.semantic_channels),
          static_cast<double>(cfg.seed & 0xffffffffULL),
          static_cast<double>(cfg.seed >> 32),
          static_cast<double>(cfg.batch_size)};
}

TrainConfig config_from_meta(const Tensor& meta) {
  const auto v = meta.data();
  if (v.size() != 16 || v[0] != kMetaVersion) {
    throw CheckpointError("checkpoint/config mismatch: unsupported meta/config layout");
  }
  auto as_int = [&](std::size_t i) { return static_cast<int>(v[i]); };
  TrainConfig cfg;
  cfg.direction = as_int(1) == 0 ? Direction::kA2G : Direction::kG2A;
  cfg.size = as_int(2);
  if (as_int(3) < 0 || as_int(3) > 3) throw CheckpointError("checkpoint/config mismatch: bad ablation");
  cfg.ablation = static_cast<Ablation>(as_int(3));
  cfg.model.depth = as_int(4);
  cfg.model.base_channels = as_int(5);
  cfg.model.feature_channels = as_int(6);
  cfg.model.attention_reduction = as_int(7);
  cfg.model.disc_base_channels = as_int(8);
  cfg.model.disc_downsamples = as_int(9);
  if (as_int(10) < 0 || as_int(10) > 2) throw CheckpointError("checkpoint/config mismatch: bad placement");
  cfg.model.placement = static_cast<DeformPlacement>(as_int(10));
  cfg.model.image_channels = as_int(11);
  cfg.model.semantic_channels = as_int(12);
  cfg.seed = static_cast<std::uint64_t>(v[13]) | (static_cast<std::uint64_t>(v[14]) << 32);
  cfg.batch_size = as_int(15);
  cfg.model.toggles = ablation_toggles(cfg.ablation);
  return cfg;
}

}  // namespace

std::string direction_name(Direction d) { return d == Direction::kA2G ? "a2g" : "g2a"; }

Direction parse_direction(const std::string& s) {
  if (s == "a2g") return Direction::kA2G;
  if (s == "g2a") return Direction::kG2A;
  throw ConfigError("direction must be a2g or g2a, got '" + s + "'");
}

char ablation_letter(Ablation a) { return static_cast<char>('A' + static_cast<int>(a)); }

Ablation parse_ablation(const std::string& s) {
  if (s.size() == 1) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    if (c >= 'A' && c <= 'D') return static_cast<Ablation>(c - 'A');
  }
  throw ConfigError("ablation must be one of A, B, C, D, got '" + s + "'");
}

Toggles ablation_toggles(Ablation a) {
  switch (a) {
    case Ablation::kA: return {false, false, false};
    case Ablation::kB: return {true, false, false};
    case Ablation::kC: return {true, true, false};
    case Ablation::kD: return {true, true, true};
  }
  return {};
}

std::string ablation_method(Ablation a) {
  switch (a) {
    case Ablation::kA: return "SGAN";
    case Ablation::kB: return "SGAN + AM";
    case Ablation::kC: return "SGAN + AM + DC";
    case Ablation::kD: return "SGAN + AM + DC + LS";
  }
  return "";
}

void TrainConfig::validate() const {
  if (size != 32 && size != 64 && size != 256) {
    throw ConfigError("size must be 32, 64 or 256, got " + std::to_string(size));
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch-size must be >= 1");
  if (model.depth < 1 || size % (1 << model.depth) != 0) {
    throw ConfigError("depth " + std::to_string(model.depth) + " does not divide size " + std::to_string(size));
  }
  if (model.base_channels < 1 || model.feature_channels < 1 || model.disc_base_channels < 1) {
    throw ConfigError("channel widths must be positive");
  }
  if (model.attention_reduction < 1 || model.feature_channels % model.attention_reduction != 0) {
    throw ConfigError("attention reduction must divide feature channels");
  }
  if (model.disc_downsamples < 1 || size % (1 << model.disc_downsamples) != 0) {
    throw ConfigError("discriminator downsamples incompatible with size");
  }
  for (const AdamConfig* a : {&generator_adam, &discriminator_adam}) {
    if (!(a->lr > 0.0) || a->beta1 < 0.0 || a->beta1 >= 1.0 || a->beta2 < 0.0 || a->beta2 >= 1.0) {
      throw ConfigError("optimizer: lr must be > 0 and betas in [0,1)");
    }
  }
  try {
    weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m = model;
  m.toggles = ablation_toggles(ablation);
  return m;
}

LossWeights TrainConfig::loss_weights() const {
  LossWeights w = weights;
  w.toggles = ablation_toggles(ablation);
  return w;
}

int TrainConfig::iterations_per_epoch(int dataset_size) const {
  return (dataset_size + batch_size - 1) / batch_size;
}

int TrainConfig::total_iterations(int dataset_size) const {
  return iterations > 0 ? iterations : epochs * iterations_per_epoch(dataset_size);
}

Views select_views(const PairedSample& s, Direction d) {
  if (d == Direction::kA2G) return {s.aerial, s.ground, s.ground_semantic, s.ground_label};
  if (s.aerial_semantic.empty()) {
    throw DataError("sample '" + s.id + "' has no aerial semantic map, required for g2a");
  }
  return {s.ground, s.aerial, s.aerial_semantic, s.aerial_label};
}

std::string loss_log_header() { return "iter,d1,d2,g_adv,l1_stage1,l1_stage2,tv,total"; }

std::string loss_log_row(const LossRecord& r) {
  return std::to_string(r.iter) + "," + format_value(r.d1) + "," + (r.d2 ? format_value(*r.d2) : "") +
         "," + format_value(r.g_adv) + "," + format_value(r.l1_stage1) + "," + format_value(r.l1_stage2) +
         "," + format_value(r.tv) + "," + format_value(r.total);
}

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg), weights_(cfg.loss_weights()) {
  cfg_.validate();
  net_ = std::make_unique<CrossViewNet>(CrossViewNet::create(cfg_.model_config(), cfg_.seed));
  g_opt_ = std::make_unique<Adam>(net_->generator_parameters(), cfg_.generator_adam);
  d_opt_ = std::make_unique<Adam>(net_->discriminator_parameters(), cfg_.discriminator_adam);
}

LossRecord Trainer::step(const std::vector<const PairedSample*>& batch) {
  if (batch.empty()) throw DataError("empty batch");
  std::vector<Tensor> src, tgt, sem;
  for (const PairedSample* s : batch) {
    Views v = select_views(*s, cfg_.direction);
    src.push_back(std::move(v.source));
    tgt.push_back(std::move(v.target));
    sem.push_back(semantic_planes(v.target_semantic));
  }
  const Tensor source = stack(src);
  const Tensor target = stack(tgt);
  const Tensor semantic = stack(sem);
  const bool ls = weights_.toggles.semantic_loss;
  CrossViewNet& net = *net_;

  Tape tape;
  tape.freeze(net.discriminator_parameters());
  const Var ia = tape.constant(source);
  const Var ig = tape.constant(target);
  const Var sg = tape.constant(semantic);
  const auto fwd = net.forward(tape, ia, sg);

  LossRecord rec;
  rec.iter = ++iteration_;

  {
    Tape dt;
    const Var a = dt.constant(source);
    const Var real = dt.constant(target);
    const Var fake1 = dt.constant(fwd.stage1.image.value());
    const Var fake2 = dt.constant(fwd.stage2.image.value());
    Var d1 = discriminator_loss(dt, net.d1(), a, real, fake1) +
             discriminator_loss(dt, net.d1(), a, real, fake2) * weights_.lambda;
    Var loss = d1;
    rec.d1 = d1.value().item();
    if (ls) {
      const Var s = dt.constant(semantic);
      const Var cond = concat_channels({a, s});
      const Var real_pair = concat_channels({real, s});
      const Var fake_pair1 = concat_channels({fake1, dt.constant(fwd.stage1.semantic.value())});
      const Var fake_pair2 = concat_channels({fake2, dt.constant(fwd.stage2.semantic.value())});
      Var d2 = discriminator_loss(dt, *net.d2(), cond, real_pair, fake_pair1) +
               discriminator_loss(dt, *net.d2(), cond, real_pair, fake_pair2) * weights_.lambda;
      rec.d2 = d2.value().item();
      loss = loss + d2;
    }
    d_opt_->zero_grad();
    dt.backward(loss);
    d_opt_->step();
  }

  AdversarialTerms<Var> adv{generator_adv_loss(tape, net.d1(), ia, fwd.stage1.image),
                            generator_adv_loss(tape, net.d1(), ia, fwd.stage2.image),
                            {},
                            {}};
  if (ls) {
    const Var cond = concat_channels({ia, sg});
    adv.semantic_stage1 =
        generator_adv_loss(tape, *net.d2(), cond, concat_channels({fwd.stage1.image, fwd.stage1.semantic}));
    adv.semantic_stage2 =
        generator_adv_loss(tape, *net.d2(), cond, concat_channels({fwd.stage2.image, fwd.stage2.semantic}));
  }
  const Var g_adv = total_adv_loss(weights_, adv);
  const PixelTerms<Var> pixel{pixel_l1(fwd.stage1.image, ig), pixel_l1(fwd.stage1.semantic, sg),
                              pixel_l1(fwd.stage2.image, ig), pixel_l1(fwd.stage2.semantic, sg)};
  const Var tv = tv_loss(fwd.stage2.image);
  const Var total = total_objective(weights_, pixel, g_adv, tv);

  rec.g_adv = g_adv.value().item();
  rec.l1_stage1 = weights_.lambda1 * pixel.image_stage1.value().item() +
                  weights_.lambda2 * pixel.semantic_stage1.value().item();
  rec.l1_stage2 = weights_.lambda3 * pixel.image_stage2.value().item() +
                  weights_.lambda4 * pixel.semantic_stage2.value().item();
  rec.tv = weights_.lambda_tv * tv.value().item();
  rec.total = total.value().item();

  g_opt_->zero_grad();
  tape.backward(total);
  g_opt_->step();
  return rec;
}

TrainResult train(const TrainConfig& cfg, const std::vector<PairedSample>& data,
                  const std::function<void(const LossRecord&)>& on_step) {
  cfg.validate();
  if (data.empty()) throw DataError("training dataset is empty");
  check_sizes(data, cfg.size);
  for (const auto& s : data) select_views(s, cfg.direction);

  Trainer trainer(cfg);
  const int n = static_cast<int>(data.size());
  const int per_epoch = cfg.iterations_per_epoch(n);
  const int total = cfg.total_iterations(n);
  const bool write = !cfg.out_dir.empty();
  std::ofstream log_file;
  if (write) {
    std::filesystem::create_directories(cfg.out_dir);
    log_file.open(cfg.out_dir / "loss_log.csv", std::ios::trunc);
    if (!log_file) throw DataError("cannot write " + (cfg.out_dir / "loss_log.csv").string());
    log_file << loss_log_header() << "\n";
  }

  TrainResult result;
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int it = 0; it < total; ++it) {
    const int epoch = it / per_epoch;
    const int slot = it % per_epoch;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), 0);
      Rng rng(derive_seed(cfg.seed ^ kShuffleStream, static_cast<std::uint64_t>(epoch)));
      for (int i = n - 1; i > 0; --i) {
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i) + 1))]);
      }
    }
    std::vector<const PairedSample*> batch;
    for (int j = slot * cfg.batch_size; j < std::min(n, (slot + 1) * cfg.batch_size); ++j) {
      batch.push_back(&data[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])]);
    }
    LossRecord rec = trainer.step(batch);
    if (write) log_file << loss_log_row(rec) << "\n";
    if (on_step) on_step(rec);
    result.log.push_back(rec);

    const bool epoch_end = slot == per_epoch - 1 || it == total - 1;
    if (write && epoch_end) {
      const std::string tag = std::to_string(epoch + 1);
      if (cfg.write_checkpoints) {
        save_checkpoint(cfg.out_dir / ("checkpoint_epoch_" + tag + ".xvfg"),
                        model_checkpoint(trainer.net(), cfg));
      }
      if (cfg.write_grids) {
        encode_image(sample_grid(trainer.net(), data, cfg.direction),
                     cfg.out_dir / ("grid_epoch_" + tag + ".ppm"));
      }
    }
  }
  if (write) {
    log_file.flush();
    if (cfg.write_checkpoints) {
      result.final_checkpoint = cfg.out_dir / "final.xvfg";
      save_checkpoint(result.final_checkpoint, model_checkpoint(trainer.net(), cfg));
    }
  }
  result.net = trainer.release_net();
  return result;
}

NamedTensors model_checkpoint(CrossViewNet& net, const TrainConfig& cfg) {
  NamedTensors out;
  TrainConfig c = cfg;
  c.model = net.config();
  const auto meta = meta_vector(c);
  out.emplace_back(kMetaName, Tensor(Shape{1, 1, 1, static_cast<int>(meta.size())}, meta));
  for (Parameter* p : net.parameters()) out.emplace_back(p->name, p->value);
  return out;
}

LoadedModel restore_model(const NamedTensors& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  const auto meta = by_name.find(kMetaName);
  if (meta == by_name.end()) throw CheckpointError("checkpoint/config mismatch: no meta/config entry");
  LoadedModel out;
  out.config = config_from_meta(*meta->second);
  try {
    out.config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint/config mismatch: ") + e.what());
  }
  out.net = std::make_unique<CrossViewNet>(CrossViewNet::create(out.config.model_config(), out.config.seed));
  std::size_t used = 1;
  for (Parameter* p : out.net->parameters()) {
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) throw CheckpointError("checkpoint/config mismatch: missing '" + p->name + "'");
    if (it->second->shape() != p->value.shape()) {
      throw CheckpointError("checkpoint/config mismatch: '" + p->name + "' has shape " +
                            it->second->shape().str() + ", expected " + p->value.shape().str());
    }
    p->value = *it->second;
    p->zero_grad();
    ++used;
  }
  if (used != tensors.size()) {
    throw CheckpointError("checkpoint/config mismatch: " + std::to_string(tensors.size() - used) +
                          " unexpected entries");
  }
  return out;
}

LoadedModel load_model(const std::filesystem::path& path) { return restore_model(load_checkpoint(path)); }

GeneratedViews generate(CrossViewNet& net, const PairedSample& s, Direction d) {
  const Views v = select_views(s, d);
  Tape tape(false);
  const auto fwd = net.forward(tape, tape.constant(v.source), tape.constant(semantic_planes(v.target_semantic)));
  return {fwd.stage1.image.value(), fwd.stage2.image.value()};
}

Tensor sample_grid(CrossViewNet& net, const std::vector<PairedSample>& data, Direction d, int max_rows) {
  std::vector<std::vector<Tensor>> rows;
  for (int i = 0; i < std::min<int>(max_rows, static_cast<int>(data.size())); ++i) {
    const auto& s = data[static_cast<std::size_t>(i)];
    const Views v = select_views(s, d);
    GeneratedViews g = generate(net, s, d);
    rows.push_back({v.source, std::move(g.coarse), std::move(g.refined), v.target});
  }
  return make_grid(rows);
}

MetricRow image_metrics(std::span<const Tensor> generated, std::span<const Tensor> targets,
                        std::span<const int> labels, ProbeClassifier& probe) {
  if (generated.size() != targets.size() || generated.size() != labels.size() || generated.empty()) {
    throw DataError("image_metrics: need equally many generated images, targets and labels");
  }
  MetricRow row;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const Tensor a = to_intensity(generated[i]);
    const Tensor b = to_intensity(targets[i]);
    row.ssim += ssim(a, b, 255.0);
    row.psnr += psnr(a, b, 255.0);
  }
  row.ssim /= static_cast<double>(generated.size());
  row.psnr /= static_cast<double>(generated.size());
  const KlScore kl = kl_score(probe, generated, targets);
  row.kl_mean = kl.mean;
  row.kl_std = kl.std;
  row.top1 = topk_accuracy(probe, generated, labels, 1);
  row.top5 = topk_accuracy(probe, generated, labels, std::min(5, probe.classes()));
  row.size = generated[0].h();
  return row;
}

EvalReport evaluate(CrossViewNet& net, const std::vector<PairedSample>& data, Direction d,
                    ProbeClassifier& probe, const std::string& method) {
  if (data.empty()) throw DataError("evaluation dataset is empty");
  std::vector<Tensor> coarse, refined, targets;
  std::vector<int> labels;
  EvalReport report;
  for (const auto& s : data) {
    const Views v = select_views(s, d);
    GeneratedViews g = generate(net, s, d);
    report.l1_coarse += pixel_l1(g.coarse, v.target);
    report.l1_refined += pixel_l1(g.refined, v.target);
    coarse.push_back(std::move(g.coarse));
    refined.push_back(std::move(g.refined));
    targets.push_back(v.target);
    labels.push_back(v.target_label);
  }
  report.samples = static_cast<int>(data.size());
  report.l1_coarse /= report.samples;
  report.l1_refined /= report.samples;
  report.refined = image_metrics(refined, targets, labels, probe);
  report.coarse = image_metrics(coarse, targets, labels, probe);
  for (MetricRow* r : {&report.refined, &report.coarse}) {
    r->method = method;
    r->direction = direction_name(d);
  }
  report.coarse.method = method + " (stage 1)";
  return report;
}

std::unique_ptr<ProbeClassifier> make_probe(const std::vector<PairedSample>& data, Direction d,
                                            std::uint64_t seed) {
  if (data.empty()) throw DataError("probe: no images to train on");
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (const auto& s : data) {
    const Views v = select_views(s, d);
    images.push_back(v.target);
    labels.push_back(v.target_label);
  }
  auto probe = std::make_unique<ConvProbe>(ConvProbe::create(kSemanticClasses, seed));
  probe->train(images, labels);
  return probe;
}

std::vector<PairedSample> toy_train_set(std::uint64_t seed, int size, int count) {
  return toy_dataset(seed, count, size);
}

std::vector<PairedSample> toy_held_out_set(std::uint64_t seed, int size, int count) {
  return toy_dataset(derive_seed(seed ^ kHeldOutStream, 0), count, size);
}

std::vector<AblationRow> run_ablation(const TrainConfig& cfg, const std::vector<PairedSample>& train_data,
                                      const std::vector<PairedSample>& held_out,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    auto probe = make_probe(held_out, cfg.direction, seed);
    for (Ablation a : kAllAblations) {
      TrainConfig c = cfg;
      c.seed = seed;
      c.ablation = a;
      if (!cfg.out_dir.empty()) {
        c.out_dir = cfg.out_dir / ("seed_" + std::to_string(seed)) / std::string(1, ablation_letter(a));
      }
      TrainResult r = train(c, train_data);
      const EvalReport rep = evaluate(*r.net, held_out, c.direction, *probe, ablation_method(a));
      AblationRow row{seed, a, rep.refined.psnr, rep.refined.ssim, r.net->parameter_count()};
      if (on_row) on_row(row);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string ablation_csv_header() { return "seed,baseline,method,psnr,ssim,param_count"; }

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = ablation_csv_header() + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.seed) + "," + ablation_letter(r.ablation) + "," + ablation_method(r.ablation) + "," +
           format_metric(r.psnr) + "," + format_metric(r.ssim) + "," + std::to_string(r.param_count) + "\n";
  }
  for (Ablation a : kAllAblations) {
    double psnr_sum = 0.0, ssim_sum = 0.0;
    std::size_t params = 0;
    int count = 0;
    for (const auto& r : rows) {
      if (r.ablation != a) continue;
      psnr_sum += r.psnr;
      ssim_sum += r.ssim;
      params = r.param_count;
      ++count;
    }
    if (count == 0) continue;
    out += std::string("mean,") + ablation_letter(a) + "," + ablation_method(a) + "," +
           format_metric(psnr_sum / count) + "," + format_metric(ssim_sum / count) + "," +
           std::to_string(params) + "\n";
  }
  return out;
}

}  // namespace xvfg
