#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xvfg/checkpoint.hpp"
#include "xvfg/config_file.hpp"
#include "xvfg/errors.hpp"
#include "xvfg/gradcheck.hpp"
#include "xvfg/image_io.hpp"
#include "xvfg/probe.hpp"
#include "xvfg/trainer.hpp"

namespace fs = std::filesystem;
using namespace xvfg;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kCrc = 4, kGradcheck = 5 };

// Flags are kept as strings and go through the config-file parser; only
// flags actually given override the file.
struct TrainFlags {
  std::string config;
  std::string data;
  std::string out;
  std::string direction, size, epochs, iterations, batch_size, seed, ablation;
};

void add_train_flags(CLI::App* app, TrainFlags& f, bool with_out = true) {
  app->add_option("--config", f.config, "key=value config file; flags override its values");
  app->add_option("--data", f.data, "toy, toy-heldout or a dataset directory");
  if (with_out) app->add_option("--out", f.out, "output directory");
  app->add_option("--direction", f.direction, "a2g or g2a");
  app->add_option("--size", f.size, "32, 64 or 256");
  app->add_option("--epochs", f.epochs, "passes over the data");
  app->add_option("--iterations", f.iterations, "total steps (overrides --epochs)");
  app->add_option("--batch-size", f.batch_size, "samples per step");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--ablation", f.ablation, "A, B, C or D");
}

struct Resolved {
  TrainConfig cfg;
  std::string data;
  std::string out;
};

Resolved resolve(const TrainFlags& f) {
  Resolved r;
  if (!f.config.empty()) {
    for (const auto& [k, v] : read_config_file(f.config)) {
      apply_config_key(r.cfg, k, v);
      if (k == "data") r.data = v;
      if (k == "out") r.out = v;
    }
  }
  const std::pair<const char*, const std::string*> flags[] = {
      {"direction", &f.direction}, {"size", &f.size},   {"epochs", &f.epochs},   {"iterations", &f.iterations},
      {"batch_size", &f.batch_size}, {"seed", &f.seed}, {"ablation", &f.ablation},
  };
  for (const auto& [key, value] : flags) {
    if (!value->empty()) apply_config_key(r.cfg, key, *value);
  }
  if (!f.data.empty()) r.data = f.data;
  if (!f.out.empty()) r.out = f.out;
  if (r.data.empty()) throw ConfigError("missing --data (or data= in the config file)");
  r.cfg.validate();
  return r;
}

void append_csv(const fs::path& path, const std::string& header, const std::string& row) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  if (fresh) out << header << '\n';
  out << row << '\n';
}

void print_metrics(const char* label, const MetricRow& m) {
  std::printf("%-9s ssim %s  psnr %s  kl %s +- %s  top1 %s  top5 %s\n", label, format_metric(m.ssim).c_str(),
              format_metric(m.psnr).c_str(), format_metric(m.kl_mean).c_str(), format_metric(m.kl_std).c_str(),
              format_metric(m.top1).c_str(), format_metric(m.top5).c_str());
}

int cmd_train(const TrainFlags& f) {
  Resolved r = resolve(f);
  if (r.out.empty()) r.out = "xvfg_out";
  r.cfg.out_dir = r.out;
  const auto data = load_dataset(r.data, r.cfg.size, r.cfg.seed);
  const int total = r.cfg.total_iterations(static_cast<int>(data.size()));
  const int every = std::max(1, total / 10);
  const TrainResult result = train(r.cfg, data, [&](const LossRecord& rec) {
    if (rec.iter == 1 || rec.iter % every == 0 || rec.iter == total) {
      std::printf("iter %d/%d  total %.6f  d1 %.6f\n", rec.iter, total, rec.total, rec.d1);
      std::fflush(stdout);
    }
  });
  std::printf("final checkpoint: %s\n", result.final_checkpoint.string().c_str());
  return kOk;
}

struct EvalFlags {
  std::string checkpoint, data, probe = "real", out;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalFlags& f) {
  if (f.checkpoint.empty()) throw ConfigError("missing --checkpoint");
  if (f.data.empty()) throw ConfigError("missing --data");
  LoadedModel m = load_model(f.checkpoint);
  const TrainConfig& cfg = m.config;
  const auto data = load_dataset(f.data, cfg.size, cfg.seed);
  const auto probe_data = f.probe == "real" ? data : load_dataset(f.probe, cfg.size, cfg.seed);
  auto probe = make_probe(probe_data, cfg.direction, f.seed);
  const EvalReport rep = evaluate(*m.net, data, cfg.direction, *probe, ablation_method(cfg.ablation));
  print_metrics("refined", rep.refined);
  print_metrics("coarse", rep.coarse);
  std::printf("l1 coarse %s  refined %s  samples %d\n", format_metric(rep.l1_coarse).c_str(),
              format_metric(rep.l1_refined).c_str(), rep.samples);
  if (!f.out.empty()) append_csv(f.out, metric_csv_header(), metric_csv_row(rep.refined));
  return kOk;
}

struct GenerateFlags {
  std::string checkpoint, data, out = "generated";
  int count = 4;
};

int cmd_generate(const GenerateFlags& f) {
  if (f.checkpoint.empty()) throw ConfigError("missing --checkpoint");
  if (f.data.empty()) throw ConfigError("missing --data");
  if (f.count < 1) throw ConfigError("--count must be >= 1");
  LoadedModel m = load_model(f.checkpoint);
  const auto data = load_dataset(f.data, m.config.size, m.config.seed);
  fs::create_directories(f.out);
  const int n = std::min<int>(f.count, static_cast<int>(data.size()));
  for (int i = 0; i < n; ++i) {
    const auto& s = data[static_cast<std::size_t>(i)];
    const GeneratedViews g = generate(*m.net, s, m.config.direction);
    const std::string stem = std::to_string(i) + "_" + s.id;
    write_ppm(fs::path(f.out) / (stem + "_coarse.ppm"), tensor_to_image(g.coarse));
    write_ppm(fs::path(f.out) / (stem + "_refined.ppm"), tensor_to_image(g.refined));
  }
  const std::vector<PairedSample> head(data.begin(), data.begin() + n);
  write_ppm(fs::path(f.out) / "grid.ppm", tensor_to_image(sample_grid(*m.net, head, m.config.direction, n)));
  std::printf("wrote %d samples to %s\n", n, f.out.c_str());
  return kOk;
}

struct GradcheckFlags {
  std::string module = "all";
  std::uint64_t seed = 0;
  bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckFlags& f) {
  std::vector<std::string> modules;
  if (f.module == "all") {
    modules = gradcheck_modules();
  } else {
    const auto& known = gradcheck_modules();
    if (std::find(known.begin(), known.end(), f.module) == known.end()) {
      throw ConfigError("--module must be one of tensor, deform, attention, losses, all; got '" + f.module + "'");
    }
    modules = {f.module};
  }
  std::vector<GradcheckResult> results;
  for (const auto& m : modules) {
    auto r = run_gradcheck(m, f.seed);
    results.insert(results.end(), r.begin(), r.end());
  }
  if (f.inject_fault) results.push_back(run_faulty_fixture(f.seed));

  std::printf("module,op,max_rel_err,worst_tensor,worst_index,status\n");
  int failures = 0;
  for (const auto& r : results) {
    std::printf("%s,%s,%.3e,%s,%zu,%s\n", r.module.c_str(), r.op.c_str(), r.max_rel_error, r.worst_tensor.c_str(),
                r.worst_index, r.passed ? "ok" : "FAIL");
    if (!r.passed) {
      ++failures;
      std::fprintf(stderr, "gradcheck violation: op %s tensor %s index %zu analytic %.9g numeric %.9g rel %.3e\n",
                   r.op.c_str(), r.worst_tensor.c_str(), r.worst_index, r.analytic, r.numeric, r.max_rel_error);
    }
  }
  return failures == 0 ? kOk : kGradcheck;
}

struct AblateFlags {
  TrainFlags train;
  std::string eval_data;
  int seeds = 3;
};

int cmd_ablate(const AblateFlags& f) {
  TrainFlags tf = f.train;
  const std::string out = tf.out;
  tf.out.clear();
  if (tf.iterations.empty() && tf.epochs.empty()) tf.iterations = "200";
  Resolved r = resolve(tf);
  if (f.seeds < 1) throw ConfigError("--seeds must be >= 1");
  r.cfg.out_dir.clear();
  const std::string eval_spec = !f.eval_data.empty() ? f.eval_data : (r.data == "toy" ? "toy-heldout" : r.data);
  const auto train_data = load_dataset(r.data, r.cfg.size, r.cfg.seed);
  const auto held_out = load_dataset(eval_spec, r.cfg.size, r.cfg.seed);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < f.seeds; ++i) seeds.push_back(r.cfg.seed + static_cast<std::uint64_t>(i));
  const auto rows = run_ablation(r.cfg, train_data, held_out, seeds, [](const AblationRow& row) {
    std::printf("seed %llu  %-22s psnr %s  ssim %s  params %zu\n", static_cast<unsigned long long>(row.seed),
                ablation_method(row.ablation).c_str(), format_metric(row.psnr).c_str(),
                format_metric(row.ssim).c_str(), row.param_count);
    std::fflush(stdout);
  });
  const std::string csv = ablation_csv(rows);
  if (out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    const fs::path path(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream o(path, std::ios::binary);
    if (!o) throw DataError("cannot write " + out);
    o << csv;
    std::printf("wrote %s\n", out.c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xvfg: two-stage cross-view image synthesis"};
  app.require_subcommand(1);

  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_train_flags(train_cmd, train_flags);

  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint and append a metrics row");
  eval_cmd->add_option("--checkpoint", eval_flags.checkpoint, "checkpoint file");
  eval_cmd->add_option("--data", eval_flags.data, "toy, toy-heldout or a dataset directory");
  eval_cmd->add_option("--probe", eval_flags.probe,
                       "probe training data: 'real' (target views of --data) or a dataset spec");
  eval_cmd->add_option("--probe-seed", eval_flags.seed, "probe initialisation seed");
  eval_cmd->add_option("--out", eval_flags.out, "metrics CSV to append to");

  GenerateFlags gen_flags;
  auto* gen_cmd = app.add_subcommand("generate", "write generated views and a sample grid");
  gen_cmd->add_option("--checkpoint", gen_flags.checkpoint, "checkpoint file");
  gen_cmd->add_option("--data", gen_flags.data, "toy, toy-heldout or a dataset directory");
  gen_cmd->add_option("--out", gen_flags.out, "output directory");
  gen_cmd->add_option("--count", gen_flags.count, "number of samples");

  GradcheckFlags gc_flags;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gc_cmd->add_option("--module", gc_flags.module, "tensor, deform, attention, losses or all");
  gc_cmd->add_option("--seed", gc_flags.seed, "input seed");
  gc_cmd->add_flag("--inject-fault", gc_flags.inject_fault, "append a deliberately broken op")->group("");

  AblateFlags ab_flags;
  auto* ab_cmd = app.add_subcommand("ablate", "train rows A-D and write the ablation CSV");
  add_train_flags(ab_cmd, ab_flags.train);
  ab_cmd->add_option("--eval-data", ab_flags.eval_data, "held-out data (default: toy-heldout for toy, else --data)");
  ab_cmd->add_option("--seeds", ab_flags.seeds, "number of consecutive seeds starting at --seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train_flags);
    if (*eval_cmd) return cmd_eval(eval_flags);
    if (*gen_cmd) return cmd_generate(gen_flags);
    if (*gc_cmd) return cmd_gradcheck(gc_flags);
    if (*ab_cmd) return cmd_ablate(ab_flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const CrcError& e) {
    std::cerr << "checkpoint CRC error: " << e.what() << '\n';
    return kCrc;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
