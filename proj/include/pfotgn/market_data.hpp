#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfotgn/common.hpp"

namespace pfotgn::market {

struct PriceObservation {
  Date date;
  double price = 0.0;
};

// Daily closing prices of one asset. Dates strictly increasing, prices > 0.
struct PriceSeries {
  std::string asset_id;
  std::vector<PriceObservation> observations;
};

// Daily log returns; dates[i] is the date of the later price of the pair.
struct ReturnSeries {
  std::vector<Date> dates;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
};

struct EqualWeightPortfolio {
  std::vector<std::string> assets;
};

struct SharpeConfig {
  int window_days = 30;
  // Annual rate; converted to a daily rate by the annualization factor.
  double risk_free_rate = 0.0;
  int annualization_factor = 252;

  void validate() const;
};

// Throws InsufficientHistoryError on fewer than 2 observations and
// DomainError on a non-positive price or non-increasing dates.
ReturnSeries log_returns(const PriceSeries& prices);

// The up-to-`window_days` most recent observations dated on or before `t`.
ReturnSeries trailing_window(const ReturnSeries& returns, Date t, int window_days);

// Elementwise mean of the member series. Every member must carry the same
// dates, otherwise AlignmentError.
ReturnSeries portfolio_return_series(
    const std::map<std::string, ReturnSeries>& per_asset,
    const EqualWeightPortfolio& portfolio);

// Annualized (mean - rf_daily) / sample_std. Throws DegenerateVolatilityError
// when the sample standard deviation vanishes.
double sharpe_ratio(std::span<const double> returns, const SharpeConfig& cfg);
double sharpe_ratio(const ReturnSeries& returns, const SharpeConfig& cfg);

double annualized_mean_return(std::span<const double> returns,
                              const SharpeConfig& cfg);
double annualized_mean_return(const ReturnSeries& returns, const SharpeConfig& cfg);

struct PortfolioStats {
  double annualized_return = 0.0;
  double sharpe = 0.0;
};

// Indexed view over a set of price series. Assets are kept sorted by id, so
// ItemIndex order equals lexicographic id order.
class MarketData {
 public:
  MarketData() = default;
  explicit MarketData(std::vector<PriceSeries> series);

  std::size_t asset_count() const { return prices_.size(); }
  const std::string& asset_id(ItemIndex i) const { return prices_[i].asset_id; }
  std::optional<ItemIndex> find(std::string_view asset_id) const;

  const PriceSeries& prices(ItemIndex i) const { return prices_[i]; }
  const ReturnSeries& returns(ItemIndex i) const { return returns_[i]; }

  // Trailing window of asset `i` at day(t); an empty series if the asset has
  // fewer than two prices.
  ReturnSeries window(ItemIndex i, Timestamp t, int window_days) const;

  // Equal-weight stats of `assets` over the trailing window at day(t).
  // Throws InsufficientHistoryError, AlignmentError, DomainError (empty set)
  // or DegenerateVolatilityError.
  PortfolioStats portfolio_stats(std::span<const ItemIndex> assets, Timestamp t,
                                 const SharpeConfig& cfg) const;

 private:
  std::vector<PriceSeries> prices_;
  std::vector<ReturnSeries> returns_;
};

// Price file: header "date,asset_id,price", one row per asset-day.
std::vector<PriceSeries> read_price_csv(const std::filesystem::path& path);
void write_price_csv(const std::filesystem::path& path,
                     std::span<const PriceSeries> series);

}  // namespace pfotgn::market
