#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "pfotgn/market_data.hpp"
#include "test_util.hpp"

namespace pfotgn::market {
namespace {

using testing::weekday_series;
using testing::ymd;

// Direct formula: annualized (mean - rf/N) / sample sd.
double sharpe_oracle(const std::vector<double>& r, double rf, int n_ann) {
  long double m = 0;
  for (double x : r) m += x;
  m /= r.size();
  long double ss = 0;
  for (double x : r) ss += (x - m) * (x - m);
  const long double sd = std::sqrt(ss / (r.size() - 1));
  return static_cast<double>((m - rf / n_ann) / sd * std::sqrt(static_cast<long double>(n_ann)));
}

TEST(LogReturns, MatchesLogRatio) {
  const auto s = weekday_series("A", ymd(2021, 1, 1), {100, 110, 99, 99});
  const auto r = log_returns(s);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_DOUBLE_EQ(r.values[0], std::log(1.1));
  EXPECT_DOUBLE_EQ(r.values[1], std::log(99.0 / 110.0));
  EXPECT_EQ(r.values[2], 0.0);
  EXPECT_EQ(r.dates[0], s.observations[1].date);
}

TEST(LogReturns, Errors) {
  EXPECT_THROW(log_returns(weekday_series("A", ymd(2021, 1, 4), {100})), InsufficientHistoryError);
  EXPECT_THROW(log_returns(weekday_series("A", ymd(2021, 1, 4), {100, 0})), DomainError);
  PriceSeries unordered{"A", {{ymd(2021, 1, 5), 1.0}, {ymd(2021, 1, 4), 1.0}}};
  EXPECT_THROW(log_returns(unordered), DomainError);
}

TEST(Sharpe, MatchesDirectFormula) {
  Rng rng = make_rng(3, "sharpe");
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(2 + testing::uniform_index(rng, 0, 60));
    for (auto& x : r) x = testing::uniform(rng, -0.05, 0.05);
    SharpeConfig cfg;
    cfg.risk_free_rate = testing::uniform(rng, 0.0, 0.05);
    const double expected = sharpe_oracle(r, cfg.risk_free_rate, cfg.annualization_factor);
    EXPECT_NEAR(sharpe_ratio(std::span<const double>(r), cfg), expected,
                1e-12 * std::max(1.0, std::abs(expected)));
  }
}

TEST(Sharpe, DegenerateAndShort) {
  SharpeConfig cfg;
  const std::vector<double> flat(10, 0.01);
  EXPECT_THROW(sharpe_ratio(std::span<const double>(flat), cfg), DegenerateVolatilityError);
  const std::vector<double> zero(10, 0.0);
  EXPECT_THROW(sharpe_ratio(std::span<const double>(zero), cfg), DegenerateVolatilityError);
  const std::vector<double> one{0.01};
  EXPECT_THROW(sharpe_ratio(std::span<const double>(one), cfg), InsufficientHistoryError);
}

TEST(Sharpe, ScaleInvariant) {
  const std::vector<double> r{0.01, -0.02, 0.005, 0.03, -0.001};
  std::vector<double> scaled;
  for (double x : r) scaled.push_back(3.0 * x);
  SharpeConfig cfg;
  EXPECT_NEAR(sharpe_ratio(std::span<const double>(r), cfg),
              sharpe_ratio(std::span<const double>(scaled), cfg), 1e-12);
}

TEST(TrailingWindow, TakesMostRecentOnOrBefore) {
  std::vector<double> prices;
  for (int i = 0; i < 50; ++i) prices.push_back(100.0 + i);
  const auto s = weekday_series("A", ymd(2021, 1, 4), prices);
  const auto r = log_returns(s);
  const Date t = s.observations[40].date;
  const auto w = trailing_window(r, t, 30);
  ASSERT_EQ(w.size(), 30u);
  EXPECT_EQ(w.dates.back(), t);
  EXPECT_DOUBLE_EQ(w.values.front(), std::log(111.0 / 110.0));
  EXPECT_THROW(trailing_window(r, s.observations[1].date, 30), InsufficientHistoryError);
  // A weekend t uses the preceding Friday.
  const Date saturday = ymd(2021, 1, 9);
  EXPECT_EQ(trailing_window(r, saturday, 3).dates.back(), ymd(2021, 1, 8));
}

TEST(Portfolio, EqualWeightMeanAndAlignment) {
  const auto a = log_returns(weekday_series("A", ymd(2021, 1, 4), {1, 2, 4}));
  const auto b = log_returns(weekday_series("B", ymd(2021, 1, 4), {1, 1, 2}));
  const auto p = portfolio_return_series({{"A", a}, {"B", b}}, {{"A", "B"}});
  EXPECT_DOUBLE_EQ(p.values[0], std::log(2.0) / 2);
  EXPECT_DOUBLE_EQ(p.values[1], std::log(2.0));
  const auto c = log_returns(weekday_series("C", ymd(2021, 1, 5), {1, 1, 2}));
  EXPECT_THROW(portfolio_return_series({{"A", a}, {"C", c}}, {{"A", "C"}}), AlignmentError);
  EXPECT_THROW(portfolio_return_series({{"A", a}}, {{}}), DomainError);
}

TEST(MarketData, PortfolioStatsMatchOracle) {
  Rng rng = make_rng(5, "stats");
  const auto series = testing::random_market(rng, 6, 80, ymd(2021, 1, 4));
  const MarketData md(series);
  SharpeConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ItemIndex> members;
    for (ItemIndex i = 0; i < 6; ++i) {
      if (testing::uniform(rng, 0, 1) < 0.5) members.push_back(i);
    }
    if (members.empty()) members.push_back(0);
    const std::size_t day = testing::uniform_index(rng, 31, 79);
    const Timestamp t = start_of(series[0].observations[day].date) + 3600;
    // Oracle: rebuild the window from raw prices.
    std::vector<double> mean(30, 0.0);
    for (ItemIndex i : members) {
      const auto& obs = series[i].observations;
      for (std::size_t k = 0; k < 30; ++k) {
        const std::size_t d = day - 29 + k;
        mean[k] += std::log(obs[d].price / obs[d - 1].price) / members.size();
      }
    }
    const auto stats = md.portfolio_stats(members, t, cfg);
    const double sr = sharpe_oracle(mean, 0.0, 252);
    EXPECT_NEAR(stats.sharpe, sr, 1e-12 * std::max(1.0, std::abs(sr)));
    double m = 0;
    for (double x : mean) m += x;
    EXPECT_NEAR(stats.annualized_return, m / 30 * 252, 1e-12 * std::max(1.0, std::abs(m)));
  }
}

TEST(MarketData, SortsAndFinds) {
  MarketData md({weekday_series("B", ymd(2021, 1, 4), {1, 2}),
                 weekday_series("A", ymd(2021, 1, 4), {1, 2})});
  EXPECT_EQ(md.asset_id(0), "A");
  EXPECT_EQ(md.find("B"), 1u);
  EXPECT_FALSE(md.find("Z").has_value());
  EXPECT_THROW(MarketData({weekday_series("A", ymd(2021, 1, 4), {1}),
                           weekday_series("A", ymd(2021, 1, 4), {1})}),
               DomainError);
}

TEST(PriceCsv, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "pfotgn_prices_test.csv";
  const std::vector<PriceSeries> series{weekday_series("A", ymd(2021, 1, 4), {1.5, 2.25}),
                                        weekday_series("B", ymd(2021, 1, 4), {3.0, 1.0 / 3.0})};
  write_price_csv(path, series);
  const auto back = read_price_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].asset_id, "B");
  EXPECT_EQ(back[1].observations[1].price, 1.0 / 3.0);
  EXPECT_EQ(back[0].observations[0].date, ymd(2021, 1, 4));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace pfotgn::market
