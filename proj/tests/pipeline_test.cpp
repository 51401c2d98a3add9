#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "pfotgn/pipeline.hpp"

namespace pfotgn::pipeline {
namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.market.n_assets = 12;
  cfg.market.n_sectors = 3;
  cfg.behavior.n_users = 30;
  cfg.behavior.n_events = 600;
  cfg.model.memory_dim = 8;
  cfg.model.embedding_dim = 8;
  cfg.model.time_dim = 4;
  cfg.model.neighbors = 4;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 50;
  cfg.eval.batch_size = 50;
  cfg.eval.candidates = 20;
  return cfg;
}

TEST(Prepare, TwoPeriodManifest) {
  auto cfg = tiny_config();
  cfg.set("behavior.start=2021-01-05");
  cfg.set("split.begin=2021-01-01");
  const auto raw = generate(cfg);
  const auto prepared = prepare(raw, cfg);
  ASSERT_EQ(prepared.splits.size(), 2u);
  const auto doc = split_manifest(prepared, cfg);
  ASSERT_EQ(doc["periods"].size(), 2u);
  EXPECT_EQ(doc["periods"][1]["start"], "2021-04-01");
  EXPECT_EQ(doc["periods"][1]["train_end"], "2021-11-01");
  EXPECT_EQ(doc["filter"]["events_kept"], prepared.events.size());
  EXPECT_EQ(doc["config"]["split.begin"], "2021-01-01");
  std::size_t first_period = 0;
  for (const auto& [k, v] : doc["periods"][0]["events"].items()) first_period += v.get<std::size_t>();
  EXPECT_GT(first_period, 0u);

  const auto path = std::filesystem::temp_directory_path() / "pfotgn_manifest_test.json";
  std::ofstream(path) << doc.dump(2);
  const auto back = read_split_manifest(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].period_index, prepared.splits[i].period_index);
    EXPECT_EQ(back[i].start, prepared.splits[i].start);
    EXPECT_EQ(back[i].end, prepared.splits[i].end);
  }
}

TEST(Dataset, PeriodIsOneBased) {
  Dataset data;
  synthetic_dataset(tiny_config(), data);
  EXPECT_EQ(data.split(1).period_index, 1);
  EXPECT_THROW(data.split(0), ConfigError);
  EXPECT_THROW(data.split(2), ConfigError);
}

TEST(Model, JsonRoundTripAndEvaluation) {
  const auto cfg = tiny_config();
  Dataset data;
  synthetic_dataset(cfg, data);
  const auto trained = train_model(data, cfg);
  const auto doc = model_to_json(trained.model, cfg);
  const auto back = model_from_json(nlohmann::ordered_json::parse(doc.dump()));
  EXPECT_EQ(back.epoch, trained.model.epoch);
  EXPECT_EQ(back.params.dump(), trained.model.params.dump());
  EXPECT_EQ(back.time_scale.seconds_per_unit, trained.model.time_scale.seconds_per_unit);
  const auto a = evaluate_model(data, cfg, trained.model);
  const auto b = evaluate_model(data, cfg, back);
  EXPECT_EQ(eval::report_to_json(a).dump(), eval::report_to_json(b).dump());
  EXPECT_GT(a.ranking_evaluated, 0u);
  const auto base = evaluate_baseline(data, cfg, eval::BaselineKind::kSharpe);
  EXPECT_EQ(base.total, a.total);
}

TEST(Recommend, SeenAndUnseenUsers) {
  const auto cfg = tiny_config();
  Dataset data;
  synthetic_dataset(cfg, data);
  const auto trained = train_model(data, cfg);
  const auto& split = data.split(1);
  const Timestamp t = split.validation_end + 3600;
  const std::string user = data.log.user_ids.front();
  const auto rec = recommend(data, cfg, trained.model, user, t, 5);
  EXPECT_FALSE(rec.unseen_user);
  ASSERT_EQ(rec.items.size(), 5u);
  const auto touched = data.ledger.interacted_through(0, t);
  for (std::size_t i = 0; i < rec.items.size(); ++i) {
    EXPECT_FALSE(std::binary_search(touched.begin(), touched.end(), rec.items[i]));
    if (i > 0) EXPECT_GE(rec.scores[i - 1], rec.scores[i]);
  }
  const auto fresh = recommend(data, cfg, trained.model, "nobody", t, 3);
  EXPECT_TRUE(fresh.unseen_user);
  EXPECT_EQ(fresh.items.size(), 3u);
  const auto early = recommend(data, cfg, trained.model, user, split.start + 86400 * 20, 3);
  EXPECT_EQ(early.items.size(), 3u);
}

TEST(GradCheck, ToyGraphPasses) {
  const auto report = gradcheck_toy(1);
  EXPECT_LT(report.result.max_relative_error, 1e-4);
  EXPECT_GT(report.result.coordinates, 100u);
  EXPECT_TRUE(std::isfinite(report.loss));
}

TEST(Sweep, TableHasOneRowPerSetting) {
  auto cfg = tiny_config();
  Dataset data;
  synthetic_dataset(cfg, data);
  const auto rows = sweep_alpha(data, cfg, {0.0, 1.0});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].alpha, 1.0);
  const auto table = sweep_table(rows, "alpha");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
  EXPECT_EQ(table.rfind("alpha", 0), 0u);
  const auto doc = sweep_to_json(rows, "alpha", cfg);
  EXPECT_EQ(doc["rows"].size(), 2u);
}

}  // namespace
}  // namespace pfotgn::pipeline
