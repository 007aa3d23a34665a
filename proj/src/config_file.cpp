#include "xvfg/config_file.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace xvfg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

int to_int32(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < -2147483647LL || x > 2147483647LL) throw ConfigError(key + ": out of range");
  return static_cast<int>(x);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

DeformPlacement to_placement(const std::string& v) {
  if (v == "first-encoder") return DeformPlacement::kFirstEncoder;
  if (v == "last-decoder") return DeformPlacement::kLastDecoder;
  if (v == "both") return DeformPlacement::kBoth;
  throw ConfigError("placement: expected first-encoder, last-decoder or both, got '" + v + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["direction"] = [](TrainConfig& c, const std::string&, const std::string& v) { c.direction = parse_direction(v); };
    t["size"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.size = to_int32(k, v); };
    t["epochs"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.epochs = to_int32(k, v); };
    t["iterations"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.iterations = to_int32(k, v); };
    t["batch_size"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_size = to_int32(k, v); };
    t["seed"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      const long long s = to_int(k, v);
      if (s < 0) throw ConfigError("seed must be >= 0");
      c.seed = static_cast<std::uint64_t>(s);
    };
    t["ablation"] = [](TrainConfig& c, const std::string&, const std::string& v) { c.ablation = parse_ablation(v); };
    t["lambda"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.lambda = to_double(k, v); };
    t["lambda1"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.lambda1 = to_double(k, v); };
    t["lambda2"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.lambda2 = to_double(k, v); };
    t["lambda3"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.lambda3 = to_double(k, v); };
    t["lambda4"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.lambda4 = to_double(k, v); };
    t["lambda_tv"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.lambda_tv = to_double(k, v); };
    t["lr_g"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.generator_adam.lr = to_double(k, v); };
    t["lr_d"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.discriminator_adam.lr = to_double(k, v); };
    t["beta1"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.generator_adam.beta1 = c.discriminator_adam.beta1 = to_double(k, v);
    };
    t["beta2"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.generator_adam.beta2 = c.discriminator_adam.beta2 = to_double(k, v);
    };
    t["depth"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.model.depth = to_int32(k, v); };
    t["base_channels"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.model.base_channels = to_int32(k, v); };
    t["feature_channels"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.model.feature_channels = to_int32(k, v);
    };
    t["attention_reduction"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.model.attention_reduction = to_int32(k, v);
    };
    t["disc_base_channels"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.model.disc_base_channels = to_int32(k, v);
    };
    t["disc_downsamples"] = [](TrainConfig& c, const std::string& k, const std::string& v) {
      c.model.disc_downsamples = to_int32(k, v);
    };
    t["placement"] = [](TrainConfig& c, const std::string&, const std::string& v) { c.model.placement = to_placement(v); };
    t["write_checkpoints"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.write_checkpoints = to_bool(k, v); };
    t["write_grids"] = [](TrainConfig& c, const std::string& k, const std::string& v) { c.write_grids = to_bool(k, v); };
    t["data"] = [](TrainConfig&, const std::string&, const std::string&) {};
    t["out"] = [](TrainConfig&, const std::string&, const std::string&) {};
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"data", "dataset: toy, toy-heldout or a directory"},
      {"out", "output directory"},
      {"direction", "a2g or g2a"},
      {"size", "image side: 32, 64 or 256"},
      {"epochs", "passes over the data (ignored when iterations > 0)"},
      {"iterations", "total optimisation steps; 0 means epochs decide"},
      {"batch_size", "samples per step"},
      {"seed", "non-negative integer seed"},
      {"ablation", "A, B, C or D"},
      {"lambda", "second-stage adversarial weight"},
      {"lambda1", "weight of L1(I'g, Ig)"},
      {"lambda2", "weight of L1(S'g, Sg)"},
      {"lambda3", "weight of L1(I''g, Ig)"},
      {"lambda4", "weight of L1(S''g, Sg)"},
      {"lambda_tv", "total variation weight"},
      {"lr_g", "generator learning rate"},
      {"lr_d", "discriminator learning rate"},
      {"beta1", "Adam beta1 (both optimisers)"},
      {"beta2", "Adam beta2 (both optimisers)"},
      {"depth", "generator down/up-sampling levels"},
      {"base_channels", "generator width at full resolution"},
      {"feature_channels", "feature channels fed to the attention module"},
      {"attention_reduction", "channel-gate reduction ratio"},
      {"disc_base_channels", "discriminator width"},
      {"disc_downsamples", "discriminator stride-2 stages"},
      {"placement", "deformable layer: first-encoder, last-decoder or both"},
      {"write_checkpoints", "true/false"},
      {"write_grids", "true/false"},
  };
  return keys;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!setters().count(key)) throw ConfigError(where + "unknown key '" + key + "'");
    for (const auto& kv : out) {
      if (kv.first == key) throw ConfigError(where + "repeated key '" + key + "'");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void apply_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

std::vector<PairedSample> load_dataset(const std::string& spec, int size, std::uint64_t seed) {
  if (spec == "toy") return toy_train_set(seed, size);
  if (spec == "toy-heldout") return toy_held_out_set(seed, size);
  const std::filesystem::path dir(spec);
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("data '" + spec + "' is neither toy, toy-heldout nor a directory");
  }
  const PairLayout layout =
      std::filesystem::is_directory(dir / "images") ? PairLayout::kSideBySide : PairLayout::kSplitFolders;
  auto samples = load_pairs(dir, layout, size);
  if (samples.empty()) throw DataError("no samples found under " + dir.string());
  return samples;
}

}  // namespace xvfg
