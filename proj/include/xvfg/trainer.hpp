#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xvfg/checkpoint.hpp"
#include "xvfg/dataset.hpp"
#include "xvfg/losses.hpp"
#include "xvfg/metrics.hpp"
#include "xvfg/networks.hpp"
#include "xvfg/optim.hpp"

namespace xvfg {

enum class Direction { kA2G, kG2A };
enum class Ablation { kA, kB, kC, kD };

std::string direction_name(Direction d);
/// "a2g" / "g2a"; throws ConfigError otherwise.
Direction parse_direction(const std::string& s);
char ablation_letter(Ablation a);
/// "A".."D" (case-insensitive); throws ConfigError otherwise.
Ablation parse_ablation(const std::string& s);
/// A: none, B: AM, C: AM+DC, D: AM+DC+LS.
Toggles ablation_toggles(Ablation a);
/// "SGAN", "SGAN + AM", "SGAN + AM + DC", "SGAN + AM + DC + LS".
std::string ablation_method(Ablation a);
inline constexpr Ablation kAllAblations[] = {Ablation::kA, Ablation::kB, Ablation::kC, Ablation::kD};

struct TrainConfig {
  Direction direction = Direction::kA2G;
  int size = 32;
  int epochs = 1;
  int iterations = 0;  // > 0 overrides epochs
  int batch_size = 1;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::kD;
  LossWeights weights;  // toggles are taken from `ablation`
  AdamConfig generator_adam{2e-4, 0.5, 0.999, 1e-8};
  AdamConfig discriminator_adam{2e-4, 0.5, 0.999, 1e-8};
  ModelConfig model;  // toggles are taken from `ablation`
  std::filesystem::path out_dir;  // empty: nothing is written
  bool write_checkpoints = true;
  bool write_grids = true;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  ModelConfig model_config() const;
  LossWeights loss_weights() const;
  int iterations_per_epoch(int dataset_size) const;
  int total_iterations(int dataset_size) const;
};

/// Source image, target image, target semantics (one-hot) and target label
/// of a sample for a direction. g2a needs the aerial semantic map.
struct Views {
  Tensor source;
  Tensor target;
  Tensor target_semantic;
  int target_label = 0;
};
Views select_views(const PairedSample& s, Direction d);

/// One row of the loss log. The l1 and tv columns are weighted
/// contributions, so g_adv + l1_stage1 + l1_stage2 + tv == total.
struct LossRecord {
  int iter = 0;
  double d1 = 0.0;
  std::optional<double> d2;  // absent without the semantic loss
  double g_adv = 0.0;
  double l1_stage1 = 0.0;
  double l1_stage2 = 0.0;
  double tv = 0.0;
  double total = 0.0;
};

/// "iter,d1,d2,g_adv,l1_stage1,l1_stage2,tv,total"
std::string loss_log_header();
std::string loss_log_row(const LossRecord& r);

/// Alternating adversarial optimisation of one network.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  /// One discriminator step on detached fakes, then one generator step.
  LossRecord step(const std::vector<const PairedSample*>& batch);

  CrossViewNet& net() { return *net_; }
  /// Hands over the network; the trainer must not step afterwards.
  std::unique_ptr<CrossViewNet> release_net() { return std::move(net_); }
  const TrainConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }

 private:
  TrainConfig cfg_;
  LossWeights weights_;
  std::unique_ptr<CrossViewNet> net_;
  std::unique_ptr<Adam> g_opt_;
  std::unique_ptr<Adam> d_opt_;
  int iteration_ = 0;
};

struct TrainResult {
  std::unique_ptr<CrossViewNet> net;
  std::vector<LossRecord> log;
  std::filesystem::path final_checkpoint;  // empty when nothing was written
};

/// Trains on `data` (each sample must be cfg.size square). Writes
/// loss_log.csv, checkpoint_epoch_E.xvfg, grid_epoch_E.ppm and final.xvfg
/// under cfg.out_dir when set. Throws DataError on an empty or mismatched
/// dataset.
TrainResult train(const TrainConfig& cfg, const std::vector<PairedSample>& data,
                  const std::function<void(const LossRecord&)>& on_step = {});

/// Parameters in CrossViewNet::parameters() order, preceded by "meta/config".
NamedTensors model_checkpoint(CrossViewNet& net, const TrainConfig& cfg);

struct LoadedModel {
  std::unique_ptr<CrossViewNet> net;
  TrainConfig config;
};
/// Rebuilds the network described by meta/config and restores every
/// parameter. Throws CheckpointError on a missing, extra or mis-shaped entry.
LoadedModel restore_model(const NamedTensors& tensors);
LoadedModel load_model(const std::filesystem::path& path);

struct GeneratedViews {
  Tensor coarse;   // I'g
  Tensor refined;  // I''g
};
/// Runs both stages on a single sample without recording gradients.
GeneratedViews generate(CrossViewNet& net, const PairedSample& s, Direction d);

/// Panels source | I'g | I''g | target, one row per sample (at most max_rows).
Tensor sample_grid(CrossViewNet& net, const std::vector<PairedSample>& data, Direction d,
                   int max_rows = 4);

struct EvalReport {
  MetricRow refined;  // I''g vs target
  MetricRow coarse;   // I'g vs target
  double l1_coarse = 0.0;
  double l1_refined = 0.0;
  int samples = 0;
};

/// SSIM and PSNR on [0,255] intensities, KL score and top-1 / top-k
/// accuracy (k = min(5, classes)) from `probe`. Images are generated one
/// sample at a time.
EvalReport evaluate(CrossViewNet& net, const std::vector<PairedSample>& data, Direction d,
                    ProbeClassifier& probe, const std::string& method);

/// Same metrics for images already in hand (e.g. real vs real).
MetricRow image_metrics(std::span<const Tensor> generated, std::span<const Tensor> targets,
                        std::span<const int> labels, ProbeClassifier& probe);

/// Probe trained on the real target views of `data`.
std::unique_ptr<ProbeClassifier> make_probe(const std::vector<PairedSample>& data, Direction d,
                                            std::uint64_t seed);

inline constexpr int kToyTrainCount = 64;
inline constexpr int kToyHeldOutCount = 16;
std::vector<PairedSample> toy_train_set(std::uint64_t seed, int size, int count = kToyTrainCount);
/// Disjoint seed stream from toy_train_set.
std::vector<PairedSample> toy_held_out_set(std::uint64_t seed, int size,
                                           int count = kToyHeldOutCount);

struct AblationRow {
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::kA;
  double psnr = 0.0;
  double ssim = 0.0;
  std::size_t param_count = 0;
};

/// Trains A..D per seed under an identical budget and evaluates on
/// `held_out`. cfg.ablation and cfg.seed are overridden per row.
std::vector<AblationRow> run_ablation(const TrainConfig& cfg, const std::vector<PairedSample>& train_data,
                                      const std::vector<PairedSample>& held_out,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const AblationRow&)>& on_row = {});

/// "seed,baseline,method,psnr,ssim,param_count"
std::string ablation_csv_header();
/// One row per entry followed by one "mean" row per ablation.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace xvfg
