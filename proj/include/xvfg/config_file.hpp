#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "xvfg/dataset.hpp"
#include "xvfg/trainer.hpp"

namespace xvfg {

struct ConfigKey {
  const char* name;
  const char* help;
};

/// Every key accepted in a config file, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// key=value lines; '#' starts a comment, blank lines are skipped, keys and
/// values are trimmed. Throws ConfigError on a malformed line, an unknown
/// key or a repeated key (message names the line number).
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

/// Sets one TrainConfig field. "data" and "out" are not TrainConfig fields
/// and are ignored here. Throws ConfigError on an unknown key or bad value.
void apply_config_key(TrainConfig& cfg, const std::string& key, const std::string& value);

/// "toy" (training split), "toy-heldout", or a directory in either layout
/// (images/ present: side-by-side, otherwise split folders). Throws
/// DataError when a directory yields no samples.
std::vector<PairedSample> load_dataset(const std::string& spec, int size, std::uint64_t seed);

}  // namespace xvfg
