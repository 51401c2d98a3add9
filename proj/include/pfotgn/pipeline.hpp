#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfotgn/evaluator.hpp"
#include "pfotgn/event_graph.hpp"
#include "pfotgn/market_data.hpp"
#include "pfotgn/run_config.hpp"
#include "pfotgn/scenario.hpp"
#include "pfotgn/trainer.hpp"

// End-to-end orchestration shared by the CLI and the acceptance tests.
namespace pfotgn::pipeline {

struct RawDataset {
  std::vector<market::PriceSeries> prices;
  std::map<std::string, double, std::less<>> market_caps;
  std::vector<graph::RawEvent> events;
};

// Synthetic prices, caps and events from the config's scenario.
RawDataset generate(const RunConfig& cfg);

struct Prepared {
  std::vector<graph::RawEvent> events;  // after filtering
  graph::FilterResult filter;           // events moved out to `events`
  std::vector<graph::RollingSplit> splits;
};

Prepared prepare(const RawDataset& raw, const RunConfig& cfg);

// Ingested data a model runs on. Not copyable: the neighbor store points
// into `log`.
struct Dataset {
  market::MarketData market;
  graph::EventLog log;
  graph::PortfolioLedger ledger;
  std::vector<graph::RollingSplit> splits;

  Dataset() = default;
  Dataset(const Dataset&) = delete;
  Dataset& operator=(const Dataset&) = delete;

  const graph::RollingSplit& split(int period) const;
};

void build_dataset(std::vector<market::PriceSeries> prices,
                   std::span<const graph::RawEvent> filtered_events,
                   std::vector<graph::RollingSplit> splits, Dataset& out);

// generate + prepare + build in memory.
void synthetic_dataset(const RunConfig& cfg, Dataset& out);

// Prepared-data files under the work directory.
std::filesystem::path prepared_events_path(const RunConfig& cfg);
std::filesystem::path split_manifest_path(const RunConfig& cfg);
std::filesystem::path model_path(const RunConfig& cfg);

nlohmann::ordered_json split_manifest(const Prepared& prepared, const RunConfig& cfg);
std::vector<graph::RollingSplit> read_split_manifest(const std::filesystem::path& path);

// Loads prices, the prepared events and the split manifest.
void load_prepared(const RunConfig& cfg, Dataset& out);

struct Model {
  tgn::EncoderConfig encoder;
  tgn::TimeScale time_scale;
  int epoch = 0;
  nlohmann::ordered_json params;
  nlohmann::ordered_json memory;
};

struct TrainOutcome {
  train::TrainResult result;
  Model model;  // the selected checkpoint
};

TrainOutcome train_model(const Dataset& data, const RunConfig& cfg,
                         const std::function<void(const train::EpochLog&)>& on_epoch = {});

// Test metrics of a model: memory restored from the checkpoint, validation
// events replayed, then the test window evaluated.
eval::MetricsReport evaluate_model(const Dataset& data, const RunConfig& cfg, const Model& model,
                                   std::vector<eval::InteractionVerdict>* verdicts = nullptr);

eval::MetricsReport evaluate_baseline(const Dataset& data, const RunConfig& cfg,
                                      eval::BaselineKind kind,
                                      std::vector<eval::InteractionVerdict>* verdicts = nullptr);

nlohmann::ordered_json model_to_json(const Model& model, const RunConfig& cfg);
Model model_from_json(const nlohmann::ordered_json& doc);

std::string epoch_log_line(const train::EpochLog& log);

struct SweepRow {
  double alpha = 0.0;
  std::size_t negatives = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  int selected_epoch = 0;
  eval::MetricsReport report;
};

// Train + test evaluation for each alpha (negatives fixed) or each k (alpha
// fixed).
std::vector<SweepRow> sweep_alpha(const Dataset& data, const RunConfig& cfg,
                                  const std::vector<double>& alphas);
std::vector<SweepRow> sweep_negatives(const Dataset& data, const RunConfig& cfg,
                                      const std::vector<std::size_t>& negatives);

std::string sweep_table(const std::vector<SweepRow>& rows, const std::string& key);
nlohmann::ordered_json sweep_to_json(const std::vector<SweepRow>& rows, const std::string& key,
                                     const RunConfig& cfg);

// Finite-difference check of the full joint objective on a six-node graph
// (two users, four items) over two batches.
struct GradCheckReport {
  ad::GradCheckResult result;
  double loss = 0.0;
  std::size_t parameters = 0;
  double seconds = 0.0;
};
GradCheckReport gradcheck_toy(std::uint64_t seed, int dim = 8, double eps = 1e-5);

struct Recommendation {
  bool unseen_user = false;
  std::vector<ItemIndex> items;
  std::vector<double> scores;
};

// Top-k items for a user at time t, excluding items the user already
// touched. Memory is advanced through every event before t. Unseen users get
// a fresh zero-memory node without history.
Recommendation recommend(const Dataset& data, const RunConfig& cfg, const Model& model,
                         std::string_view user_id, Timestamp t, std::size_t k);

}  // namespace pfotgn::pipeline
