#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "ccl/cli.hpp"
#include "ccl/config.hpp"

using namespace ccl;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& text) {
  const auto dir = std::filesystem::temp_directory_path() / "ccl_test_config";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p) << text;
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ConfigDefaults, EmptyOverridesEchoEveryKey) {
  ExperimentConfig cfg;
  apply_config_values(cfg, {});
  EXPECT_NO_THROW(validate(cfg));
  const auto j = config_to_json(cfg);
  std::size_t n = 0;
  for (const auto& [section, body] : j.items()) n += body.size();
  EXPECT_EQ(n, detail::config_schema().size());
  EXPECT_EQ(j["train"]["epochs"], 60);
  EXPECT_EQ(j["train"]["warmup"], 10);
  EXPECT_EQ(j["train"]["method"], "ccl");
  EXPECT_DOUBLE_EQ(j["train"]["c"].get<double>(), 0.95);
  EXPECT_DOUBLE_EQ(j["train"]["T"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["train"]["tau"].get<double>(), 0.1);
  EXPECT_DOUBLE_EQ(j["train"]["lr"].get<double>(), 1e-3);
  EXPECT_EQ(j["train"]["batch_size"], 128);
  EXPECT_EQ(j["noise"]["kind"], "symmetric");
}

TEST(ConfigValidation, ThresholdOutsideUnitIntervalNamesField) {
  ExperimentConfig cfg;
  set_config_value(cfg, "train.c", "1.5");
  const auto msg = error_of([&] { validate(cfg); });
  EXPECT_NE(msg.find("train.c"), std::string::npos) << msg;
}

TEST(ConfigValidation, ReportsEveryOffendingField) {
  ExperimentConfig cfg;
  cfg.train.loss.tau = 0;
  cfg.noise.tau0 = 1.2;
  const auto msg = error_of([&] { validate(cfg); });
  EXPECT_NE(msg.find("train.tau"), std::string::npos);
  EXPECT_NE(msg.find("noise.tau0"), std::string::npos);
}

TEST(ConfigValidation, WarmupBoundedByEpochs) {
  ExperimentConfig cfg;
  cfg.train.epochs = 5;
  cfg.train.warmup = 6;
  EXPECT_NE(error_of([&] { validate(cfg); }).find("train.warmup"), std::string::npos);
  cfg.train.warmup = 5;
  EXPECT_NO_THROW(validate(cfg));
  cfg.train.epochs = cfg.train.warmup = 0;
  EXPECT_NO_THROW(validate(cfg));
}

TEST(ConfigValues, UnknownKeysAreAllListed) {
  ExperimentConfig cfg;
  const auto msg = error_of([&] {
    apply_config_values(cfg, {{"train.bogus", "1"}, {"train.epochs", "3"}, {"nosuch.key", "x"}});
  });
  EXPECT_NE(msg.find("train.bogus"), std::string::npos);
  EXPECT_NE(msg.find("nosuch.key"), std::string::npos);
  EXPECT_EQ(cfg.train.epochs, 60);
}

TEST(ConfigValues, BadValuesAreConfigErrors) {
  ExperimentConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "train.epochs", "many"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "train.method", "sgd"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "experiment.checkpoint", "maybe"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "data.classes", "-2"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "epochs", "2"), ConfigError);
}

TEST(ConfigValues, ListsAndOptionals) {
  ExperimentConfig cfg;
  set_config_value(cfg, "experiment.seeds", "1, 2,3");
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  set_config_value(cfg, "model.hidden", "32,16");
  EXPECT_EQ(cfg.architecture(20, 4).layer_dims, (std::vector<std::size_t>{20, 32, 16, 64}));
  set_config_value(cfg, "train.omega_override", "0.25");
  ASSERT_TRUE(cfg.train.omega_override.has_value());
  EXPECT_DOUBLE_EQ(*cfg.train.omega_override, 0.25);
  set_config_value(cfg, "train.omega_override", "");
  EXPECT_FALSE(cfg.train.omega_override.has_value());
  set_config_value(cfg, "augment.image", "4x4x1");
  ASSERT_TRUE(cfg.train.image.has_value());
  EXPECT_EQ(cfg.train.image->height, 4u);
}

TEST(ConfigFiles, IniSections) {
  std::istringstream in("[train]\nmethod = rolr\nepochs = 7\nwarmup = 2\n[noise]\ntau0 = 0.2\n");
  ExperimentConfig cfg;
  apply_config_values(cfg, read_ini_values(in));
  EXPECT_EQ(cfg.train.method, Method::rolr);
  EXPECT_EQ(cfg.train.epochs, 7);
  EXPECT_EQ(cfg.train.warmup, 2);
  EXPECT_DOUBLE_EQ(cfg.noise.tau0, 0.2);
}

TEST(ConfigFiles, MalformedIniIsConfigError) {
  std::istringstream in("[train\nepochs = 7\n");
  EXPECT_THROW(read_ini_values(in), ConfigError);
}

TEST(ConfigFiles, JsonAndSummaryRoundTrip) {
  ExperimentConfig a;
  a.train.epochs = 12;
  a.train.warmup = 3;
  a.noise.kind = "pair";
  a.model.hidden = {16};
  nlohmann::ordered_json summary;
  summary["config"] = config_to_json(a);
  const auto path = temp_file("summary.json", summary.dump(2));
  ExperimentConfig b;
  apply_config_values(b, read_config_file(path.string()));
  EXPECT_EQ(config_to_json(a), config_to_json(b));
}

TEST(ConfigFiles, MissingFile) {
  EXPECT_THROW(read_config_file("/nonexistent/ccl.ini"), ConfigError);
}

TEST(ResolveConfig, FlagsOverrideFileAndEnvironment) {
  const auto path = temp_file("tau.ini", "[noise]\ntau0 = 0.2\n[experiment]\nout_dir = from_file\n");
  ::unsetenv("CCL_LAB_OUT");
  EXPECT_DOUBLE_EQ(resolve_config(path.string(), {}).noise.tau0, 0.2);
  EXPECT_EQ(resolve_config(path.string(), {}).out_dir, "from_file");
  EXPECT_DOUBLE_EQ(resolve_config(path.string(), {{"noise.tau0", "0.4"}}).noise.tau0, 0.4);

  ::setenv("CCL_LAB_OUT", "from_env", 1);
  EXPECT_EQ(resolve_config(path.string(), {}).out_dir, "from_env");
  EXPECT_EQ(resolve_config(path.string(), {{"experiment.out_dir", "from_flag"}}).out_dir, "from_flag");
  ::unsetenv("CCL_LAB_OUT");
}

TEST(ResolveConfig, InvalidResultIsRejected) {
  EXPECT_THROW(resolve_config("", {{"train.c", "1.5"}}), ConfigError);
  EXPECT_THROW(resolve_config("", {{"train.warmup", "70"}}), ConfigError);
}
