#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "pfotgn/run_config.hpp"

namespace pfotgn {
namespace {

TEST(RunConfig, SetsTypedValues) {
  RunConfig cfg;
  cfg.set("train.alpha=0.25");
  cfg.set("market.start=2020-02-03");
  cfg.set("eval.ks=[1,5]");
  cfg.set("paths.out=results");
  cfg.set("train.canonical_ntxent=true");
  EXPECT_EQ(cfg.train.alpha, 0.25);
  EXPECT_EQ(cfg.market.start, Date{std::chrono::year{2020} / 2 / 3});
  EXPECT_EQ(cfg.eval.ks, (std::vector<int>{1, 5}));
  EXPECT_EQ(cfg.paths.out, "results");
  EXPECT_TRUE(cfg.train.canonical_ntxent);
}

TEST(RunConfig, RejectsUnknownAndMistyped) {
  RunConfig cfg;
  EXPECT_THROW(cfg.set("train.alhpa=0.5"), ConfigError);
  EXPECT_THROW(cfg.set("train.batch_size=-3"), ConfigError);
  EXPECT_THROW(cfg.set("train.alpha=\"high\""), ConfigError);
  EXPECT_THROW(cfg.set("market.start=yesterday"), ConfigError);
  EXPECT_THROW(cfg.set("no_equals_sign"), ConfigError);
  EXPECT_THROW(cfg.merge(nlohmann::json{{"seed", 1}, {"bogus", 2}}), ConfigError);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig a;
  a.set("seed=42");
  a.set("sampler.candidates=7");
  a.set("sweep.alphas=[0,1]");
  RunConfig b;
  b.merge(a.to_json());
  EXPECT_EQ(b.to_json().dump(), a.to_json().dump());
  EXPECT_EQ(b.train_config().seed, 42u);
  EXPECT_EQ(b.train_config().sampler.candidates, 7u);

  const auto path = std::filesystem::temp_directory_path() / "pfotgn_config_test.json";
  std::ofstream(path) << a.to_json().dump(2);
  EXPECT_EQ(load_run_config(path).to_json().dump(), a.to_json().dump());
  std::filesystem::remove(path);
}

TEST(RunConfig, Validation) {
  RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.set("train.alpha=2");
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(RunConfig, HelpListsEveryKey) {
  const auto keys = config_keys();
  const auto doc = RunConfig{}.to_json();
  EXPECT_EQ(keys.size(), doc.size());
  const std::string help = config_help();
  for (const auto& k : keys) {
    EXPECT_TRUE(doc.contains(k.name)) << k.name;
    EXPECT_NE(help.find(k.name), std::string::npos) << k.name;
  }
}

}  // namespace
}  // namespace pfotgn
