#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "xvfg/config_file.hpp"

using namespace xvfg;
namespace fs = std::filesystem;

TEST(ConfigText, ParsesCommentsAndWhitespace) {
  const auto kv = parse_config_text("# header\n\n size = 64 \nablation=B # trailing\nlambda1=50\n");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"size", "64"}));
  EXPECT_EQ(kv[1].second, "B");
  EXPECT_EQ(kv[2].first, "lambda1");
}

TEST(ConfigText, RejectsBadLines) {
  EXPECT_THROW(parse_config_text("size 64\n"), ConfigError);
  EXPECT_THROW(parse_config_text("=4\n"), ConfigError);
  EXPECT_THROW(parse_config_text("size=32\nsize=64\n"), ConfigError);
  try {
    parse_config_text("size=32\nlearning_rate=1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST(ConfigText, EveryDocumentedKeyIsAccepted) {
  for (const auto& k : config_keys()) EXPECT_NO_THROW(parse_config_text(std::string(k.name) + "=1\n")) << k.name;
}

TEST(ApplyConfig, SetsFieldsAndValidatesValues) {
  TrainConfig c;
  apply_config_key(c, "size", "64");
  apply_config_key(c, "ablation", "c");
  apply_config_key(c, "lambda_tv", "0.5");
  apply_config_key(c, "lr_d", "1e-3");
  apply_config_key(c, "placement", "both");
  apply_config_key(c, "write_grids", "false");
  EXPECT_EQ(c.size, 64);
  EXPECT_EQ(c.ablation, Ablation::kC);
  EXPECT_EQ(c.weights.lambda_tv, 0.5);
  EXPECT_EQ(c.discriminator_adam.lr, 1e-3);
  EXPECT_EQ(c.generator_adam.lr, 2e-4);
  EXPECT_EQ(c.model.placement, DeformPlacement::kBoth);
  EXPECT_FALSE(c.write_grids);
  EXPECT_THROW(apply_config_key(c, "size", "6x4"), ConfigError);
  EXPECT_THROW(apply_config_key(c, "lambda", "much"), ConfigError);
  EXPECT_THROW(apply_config_key(c, "seed", "-1"), ConfigError);
  EXPECT_THROW(apply_config_key(c, "direction", "sideways"), ConfigError);
  EXPECT_THROW(apply_config_key(c, "colour", "1"), ConfigError);
}

TEST(ConfigFile, LaterAssignmentsOverride) {
  const fs::path p = fs::temp_directory_path() / "xvfg_cfg_test.cfg";
  std::ofstream(p) << "size=64\nseed=3\n";
  TrainConfig c;
  for (const auto& [k, v] : read_config_file(p)) apply_config_key(c, k, v);
  apply_config_key(c, "size", "32");  // a command-line flag
  EXPECT_EQ(c.size, 32);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_THROW(read_config_file(p.string() + ".missing"), ConfigError);
}

TEST(LoadDataset, Specs) {
  EXPECT_EQ(load_dataset("toy", 32, 1).size(), static_cast<std::size_t>(kToyTrainCount));
  EXPECT_EQ(load_dataset("toy-heldout", 32, 1).size(), static_cast<std::size_t>(kToyHeldOutCount));
  EXPECT_THROW(load_dataset("/nonexistent/xvfg", 32, 1), DataError);
  const fs::path empty = fs::temp_directory_path() / "xvfg_cfg_empty";
  fs::create_directories(empty);
  EXPECT_THROW(load_dataset(empty.string(), 32, 1), DataError);
}
