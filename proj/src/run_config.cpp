#include "pfotgn/run_config.hpp"

#include <fstream>
#include <functional>
#include <type_traits>

#include <fmt/core.h>

namespace pfotgn {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct Entry {
  std::string name;
  std::string help;
  bool text = false;  // string-valued: --set values are taken verbatim
  std::function<void(RunConfig&, const json&)> set;
  std::function<ordered_json(const RunConfig&)> get;
};

template <typename T>
void check_type(const std::string& name, const json& v) {
  bool ok = true;
  if constexpr (std::is_same_v<T, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    ok = v.is_number_unsigned();
  } else if constexpr (std::is_integral_v<T>) {
    ok = v.is_number_integer();
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = v.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    ok = v.is_string();
  } else {
    ok = v.is_array();
    if (ok) {
      for (const auto& x : v) {
        using E = typename T::value_type;
        if constexpr (std::is_unsigned_v<E>) {
          ok = ok && x.is_number_unsigned();
        } else if constexpr (std::is_integral_v<E>) {
          ok = ok && x.is_number_integer();
        } else {
          ok = ok && x.is_number();
        }
      }
    }
  }
  if (!ok) throw ConfigError(fmt::format("config key '{}' has the wrong type: {}", name, v.dump()));
}

template <typename F>
Entry field(std::string name, std::string help, F ref) {
  using T = std::remove_cvref_t<decltype(ref(std::declval<RunConfig&>()))>;
  Entry e;
  e.name = name;
  e.help = std::move(help);
  e.text = std::is_same_v<T, std::string>;
  e.set = [ref, name](RunConfig& c, const json& v) {
    check_type<T>(name, v);
    try {
      ref(c) = v.get<T>();
    } catch (const json::exception& err) {
      throw ConfigError(fmt::format("config key '{}': {}", name, err.what()));
    }
  };
  e.get = [ref](const RunConfig& c) {
    RunConfig copy = c;
    return ordered_json(ref(copy));
  };
  return e;
}

template <typename F>
Entry date_field(std::string name, std::string help, F ref) {
  Entry e;
  e.name = name;
  e.help = std::move(help);
  e.text = true;
  e.set = [ref, name](RunConfig& c, const json& v) {
    check_type<std::string>(name, v);
    try {
      ref(c) = parse_iso_date(v.get<std::string>());
    } catch (const ParseError& err) {
      throw ConfigError(fmt::format("config key '{}': {}", name, err.what()));
    }
  };
  e.get = [ref](const RunConfig& c) {
    RunConfig copy = c;
    return ordered_json(to_iso_string(ref(copy)));
  };
  return e;
}

#define PFOTGN_REF(member) [](RunConfig& c) -> auto& { return c.member; }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      field("seed", "global seed; every random stream derives from it", PFOTGN_REF(seed)),

      field("market.n_assets", "synthetic assets", PFOTGN_REF(market.n_assets)),
      field("market.n_sectors", "synthetic sectors (asset i belongs to sector i mod n)",
            PFOTGN_REF(market.n_sectors)),
      field("market.rho", "intra-sector correlation of daily shocks, in [0, 1)",
            PFOTGN_REF(market.rho)),
      field("market.drift_min", "lower bound of annual drift", PFOTGN_REF(market.drift_min)),
      field("market.drift_max", "upper bound of annual drift", PFOTGN_REF(market.drift_max)),
      field("market.vol_min", "lower bound of annual volatility", PFOTGN_REF(market.vol_min)),
      field("market.vol_max", "upper bound of annual volatility", PFOTGN_REF(market.vol_max)),
      date_field("market.start", "first price date (weekdays only)", PFOTGN_REF(market.start)),
      field("market.n_days", "trading days of prices", PFOTGN_REF(market.n_days)),
      field("market.shares_min", "lower bound of shares outstanding", PFOTGN_REF(market.shares_min)),
      field("market.shares_max", "upper bound of shares outstanding", PFOTGN_REF(market.shares_max)),
      field("market.initial_price", "common initial price", PFOTGN_REF(market.initial_price)),

      field("behavior.n_users", "synthetic users", PFOTGN_REF(behavior.n_users)),
      field("behavior.trader_fraction", "share of short-term traders; the rest are holders",
            PFOTGN_REF(behavior.trader_fraction)),
      field("behavior.preference_concentration", "sharpness of per-user sector preferences",
            PFOTGN_REF(behavior.preference_concentration)),
      field("behavior.popularity_bias", "exponent on item popularity in item choice",
            PFOTGN_REF(behavior.popularity_bias)),
      field("behavior.n_events", "target number of interactions", PFOTGN_REF(behavior.n_events)),
      date_field("behavior.start", "first interaction date", PFOTGN_REF(behavior.start)),
      date_field("behavior.end", "interactions strictly before this date",
                 PFOTGN_REF(behavior.end)),

      field("filter.user_trade_percentile", "drop users above this trade-count percentile",
            PFOTGN_REF(filter.user_trade_percentile)),
      field("filter.market_cap_percentile", "drop items below this market-cap percentile",
            PFOTGN_REF(filter.market_cap_percentile)),
      field("filter.flat_run_length", "drop items with this many identical consecutive prices",
            PFOTGN_REF(filter.flat_run_length)),

      field("split.period_months", "length of one rolling period",
            PFOTGN_REF(split.split.period_months)),
      field("split.stride_months", "offset between period starts",
            PFOTGN_REF(split.split.stride_months)),
      field("split.ratio", "train:validation:test months", PFOTGN_REF(split.split.ratio)),
      field("split.begin", "first date covered by the splits (YYYY-MM-DD)", PFOTGN_REF(split.begin)),
      field("split.end", "last date covered by the splits (YYYY-MM-DD)", PFOTGN_REF(split.end)),
      field("split.period", "rolling period (1-based) used by train and eval", PFOTGN_REF(split.period)),

      field("model.memory_dim", "node memory width", PFOTGN_REF(model.memory_dim)),
      field("model.embedding_dim", "embedding width", PFOTGN_REF(model.embedding_dim)),
      field("model.time_dim", "time encoding width", PFOTGN_REF(model.time_dim)),
      field("model.layers", "attention layers", PFOTGN_REF(model.layers)),
      field("model.neighbors", "most recent neighbors attended to", PFOTGN_REF(model.neighbors)),
      field("model.heads", "attention heads", PFOTGN_REF(model.heads)),

      field("train.epochs", "training epochs", PFOTGN_REF(train.epochs)),
      field("train.batch_size", "interactions per batch", PFOTGN_REF(train.batch_size)),
      field("train.bpr_negatives", "BPR negatives per interaction (k)",
            PFOTGN_REF(train.bpr_negatives)),
      field("train.alpha", "weight of the contrastive loss in [0, 1]", PFOTGN_REF(train.alpha)),
      field("train.temperature", "contrastive temperature", PFOTGN_REF(train.temperature)),
      field("train.learning_rate", "Adam learning rate", PFOTGN_REF(train.learning_rate)),
      field("train.canonical_ntxent",
            "put positives in the contrastive denominator too (bounded variant)",
            PFOTGN_REF(train.canonical_ntxent)),

      field("sampler.candidates", "candidates drawn per interaction (m_c)",
            PFOTGN_REF(train.sampler.candidates)),
      field("sampler.positives", "potential positives kept (m_p)",
            PFOTGN_REF(train.sampler.positives)),
      field("sampler.negatives", "potential negatives kept (m_n)",
            PFOTGN_REF(train.sampler.negatives)),

      field("sharpe.window_days", "trailing window in trading days", PFOTGN_REF(sharpe.window_days)),
      field("sharpe.risk_free_rate", "annual risk-free rate", PFOTGN_REF(sharpe.risk_free_rate)),
      field("sharpe.annualization_factor", "trading days per year",
            PFOTGN_REF(sharpe.annualization_factor)),

      field("eval.candidates", "sampled negatives per evaluated interaction",
            PFOTGN_REF(eval.candidates)),
      field("eval.ks", "cutoffs reported", PFOTGN_REF(eval.ks)),
      field("eval.batch_size", "interactions per evaluation batch", PFOTGN_REF(eval.batch_size)),

      field("paths.prices", "price file", PFOTGN_REF(paths.prices)),
      field("paths.events", "event file", PFOTGN_REF(paths.events)),
      field("paths.caps", "market-cap file", PFOTGN_REF(paths.caps)),
      field("paths.work_dir", "prepared data, checkpoints and logs", PFOTGN_REF(paths.work_dir)),
      field("paths.out", "reports", PFOTGN_REF(paths.out)),

      field("sweep.alphas", "alpha grid of sweep-alpha", PFOTGN_REF(sweep.alphas)),
      field("sweep.negatives", "k grid of sweep-negatives", PFOTGN_REF(sweep.negatives)),
  };
  return entries;
}

#undef PFOTGN_REF

const Entry& find_entry(std::string_view key) {
  for (const auto& e : registry()) {
    if (e.name == key) return e;
  }
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

}  // namespace

void RunConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(fmt::format("expected key=value, got '{}'", assignment));
  }
  const std::string_view key = assignment.substr(0, eq);
  const std::string text(assignment.substr(eq + 1));
  const Entry& entry = find_entry(key);
  if (entry.text) {
    entry.set(*this, json(text));
    return;
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) throw ConfigError(fmt::format("cannot parse value for '{}': {}", key, text));
  entry.set(*this, value);
}

void RunConfig::set(std::string_view key, const json& value) { find_entry(key).set(*this, value); }

void RunConfig::merge(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a flat object");
  for (const auto& [key, value] : doc.items()) set(key, value);
}

ordered_json RunConfig::to_json() const {
  ordered_json doc = ordered_json::object();
  for (const auto& e : registry()) doc[e.name] = e.get(*this);
  return doc;
}

void RunConfig::validate() const {
  try {
    market_spec().validate();
    behavior_spec().validate(market.n_sectors);
    model.validate();
    train_config().validate();
    eval_config().validate();
    parse_iso_date(split.begin);
    parse_iso_date(split.end);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& err) {
    throw ConfigError(err.what());
  }
  if (split.split.period_months <= 0 || split.split.stride_months <= 0) {
    throw ConfigError("split.period_months and split.stride_months must be positive");
  }
  int ratio_sum = 0;
  for (int r : split.split.ratio) {
    if (r <= 0) throw ConfigError("split.ratio entries must be positive");
    ratio_sum += r;
  }
  if (ratio_sum != split.split.period_months) {
    throw ConfigError("split.ratio must sum to split.period_months");
  }
  if (split.period < 1) throw ConfigError("split.period is 1-based");
  for (double a : sweep.alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("sweep.alphas must lie in [0, 1]");
  }
  for (std::size_t k : sweep.negatives) {
    if (k == 0) throw ConfigError("sweep.negatives must be positive");
  }
}

scenario::MarketSpec RunConfig::market_spec() const {
  scenario::MarketSpec spec = market;
  spec.seed = seed;
  return spec;
}

scenario::BehaviorSpec RunConfig::behavior_spec() const {
  scenario::BehaviorSpec spec = behavior;
  spec.seed = seed;
  return spec;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig cfg = train;
  cfg.seed = seed;
  cfg.sampler.sharpe = sharpe;
  return cfg;
}

eval::EvalConfig RunConfig::eval_config() const {
  eval::EvalConfig cfg = eval;
  cfg.seed = seed;
  cfg.sharpe = sharpe;
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file {}", path.string()));
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(fmt::format("malformed JSON in {}", path.string()));
  RunConfig cfg;
  cfg.merge(doc);
  return cfg;
}

std::vector<ConfigKey> config_keys() {
  const RunConfig defaults;
  std::vector<ConfigKey> keys;
  for (const auto& e : registry()) keys.push_back({e.name, e.get(defaults).dump(), e.help});
  return keys;
}

std::string config_help() {
  std::string out = "Config keys (--set key=value or a flat JSON file via --config):\n";
  for (const auto& k : config_keys()) {
    out += fmt::format("  {:<32} {:<24} {}\n", k.name, k.default_value, k.help);
  }
  return out;
}

}  // namespace pfotgn
