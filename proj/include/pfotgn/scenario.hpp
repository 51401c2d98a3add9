#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pfotgn/common.hpp"
#include "pfotgn/event_graph.hpp"
#include "pfotgn/market_data.hpp"

namespace pfotgn::scenario {

// Synthetic market: correlated geometric Brownian motion with a block
// (sector) correlation structure.
struct MarketSpec {
  std::size_t n_assets = 60;
  std::size_t n_sectors = 6;
  double rho = 0.8;  // intra-sector correlation of daily shocks
  // Wide drift and low volatility keep a 30-day Sharpe estimate informative
  // about the next month.
  double drift_min = -0.5;  // annual
  double drift_max = 0.7;
  double vol_min = 0.1;  // annual
  double vol_max = 0.25;
  Date start = Date{std::chrono::year{2021} / 1 / 4};
  std::size_t n_days = 250;  // trading days (price observations)
  double shares_min = 1e6;
  double shares_max = 1e8;
  double initial_price = 100.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratedMarket {
  std::vector<market::PriceSeries> prices;  // sorted by asset id
  std::vector<std::size_t> sector;          // per asset, same order
  std::vector<double> annual_drift;
  std::vector<double> annual_vol;
  std::map<std::string, double, std::less<>> shares_outstanding;
  std::map<std::string, double, std::less<>> market_caps;
};

GeneratedMarket gen_prices(const MarketSpec& spec);

// Sidecar: header "item_id,shares_outstanding,market_cap".
void write_market_caps(const std::filesystem::path& path, const GeneratedMarket& market);
std::map<std::string, double, std::less<>> read_market_caps(const std::filesystem::path& path);

struct BehaviorSpec {
  std::size_t n_users = 300;
  double trader_fraction = 0.5;  // remainder are long-term holders
  double preference_concentration = 2.0;
  double popularity_bias = 1.0;
  std::size_t n_events = 10000;
  Date start = Date{std::chrono::year{2021} / 4 / 1};
  Date end = Date{std::chrono::year{2022} / 1 / 1};
  std::uint64_t seed = 0;
  // When set, every user gets exactly this sector preference vector.
  std::optional<std::vector<double>> preference_override;

  void validate(std::size_t n_sectors) const;
};

// Events sorted by (timestamp, user).
std::vector<graph::RawEvent> gen_events(const BehaviorSpec& spec,
                                        const GeneratedMarket& market);

}  // namespace pfotgn::scenario
