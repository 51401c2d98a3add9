#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfotgn/evaluator.hpp"
#include "pfotgn/event_graph.hpp"
#include "pfotgn/scenario.hpp"
#include "pfotgn/tgn.hpp"
#include "pfotgn/trainer.hpp"

namespace pfotgn {

struct PathConfig {
  std::string prices = "data/prices.csv";
  std::string events = "data/events.csv";
  std::string caps = "data/caps.csv";
  std::string work_dir = "work";
  std::string out = "out";
};

struct SplitSettings {
  graph::SplitConfig split;
  std::string begin = "2021-04-01";
  std::string end = "2022-01-01";
  int period = 1;  // rolling period (1-based) used by train and eval
};

struct SweepSettings {
  std::vector<double> alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::size_t> negatives{1, 3, 5, 10};
};

// Every tunable of a run. One seed fans out to all random streams.
struct RunConfig {
  std::uint64_t seed = 1;
  scenario::MarketSpec market;
  scenario::BehaviorSpec behavior;
  graph::FilterConfig filter;
  SplitSettings split;
  tgn::EncoderConfig model;
  train::TrainConfig train;  // its seed and sampler Sharpe settings are filled on use
  eval::EvalConfig eval;
  market::SharpeConfig sharpe;
  PathConfig paths;
  SweepSettings sweep;

  // Applies "key=value"; the value is read as JSON when it parses, else as
  // text. ConfigError for unknown keys or mistyped values.
  void set(std::string_view assignment);
  void set(std::string_view key, const nlohmann::json& value);
  // Flat object of key -> value; unknown keys rejected.
  void merge(const nlohmann::json& doc);
  nlohmann::ordered_json to_json() const;
  void validate() const;

  // Module configs with the shared seed and Sharpe settings applied.
  scenario::MarketSpec market_spec() const;
  scenario::BehaviorSpec behavior_spec() const;
  train::TrainConfig train_config() const;
  eval::EvalConfig eval_config() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

// Every key with its default, in registry order.
std::vector<ConfigKey> config_keys();
std::string config_help();

}  // namespace pfotgn
