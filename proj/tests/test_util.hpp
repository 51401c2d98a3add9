#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "pfotgn/common.hpp"
#include "pfotgn/market_data.hpp"

namespace pfotgn::testing {

inline Date ymd(int y, unsigned m, unsigned d) {
  return Date{std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d}};
}

// Consecutive weekdays from `start`, one per price.
inline market::PriceSeries weekday_series(const std::string& id, Date start,
                                          const std::vector<double>& prices) {
  market::PriceSeries s{id, {}};
  Date d = start;
  for (double p : prices) {
    while (!is_weekday(d)) d += std::chrono::days{1};
    s.observations.push_back({d, p});
    d += std::chrono::days{1};
  }
  return s;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return boost::random::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return boost::random::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Random-walk prices on a shared weekday calendar.
inline std::vector<market::PriceSeries> random_market(Rng& rng, std::size_t assets,
                                                      std::size_t days, Date start) {
  boost::random::normal_distribution<double> shock(0.0, 0.02);
  std::vector<market::PriceSeries> out;
  for (std::size_t a = 0; a < assets; ++a) {
    std::vector<double> prices;
    double p = uniform(rng, 10.0, 200.0);
    for (std::size_t d = 0; d < days; ++d) {
      prices.push_back(p);
      p *= std::exp(shock(rng) + uniform(rng, -0.002, 0.003));
    }
    char id[16];
    std::snprintf(id, sizeof(id), "S%03zu", a);
    out.push_back(weekday_series(id, start, prices));
  }
  return out;
}

// Random market with edge cases for scoring: a flat asset, a duplicate of
// asset 0 (exact score ties) and one that starts 20 days late. Sorted by id.
inline std::vector<market::PriceSeries> scoring_market(Rng& rng, std::size_t assets,
                                                       std::size_t days, Date start) {
  auto out = random_market(rng, assets, days, start);
  auto dup = out[0];
  dup.asset_id = "T000";
  out.push_back(dup);
  out.push_back(weekday_series("U000", start, std::vector<double>(days, 42.0)));
  auto late = random_market(rng, 1, days, start)[0];
  late.asset_id = "V000";
  late.observations.erase(late.observations.begin(), late.observations.begin() + 20);
  out.push_back(late);
  return out;
}

// `count` distinct indices from [0, n), ascending.
inline std::vector<ItemIndex> random_subset(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<ItemIndex> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<ItemIndex>(i);
  auto pick = sample_without_replacement(std::span<const ItemIndex>(all), count, rng);
  std::sort(pick.begin(), pick.end());
  return pick;
}

}  // namespace pfotgn::testing
