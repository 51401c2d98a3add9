#include "pfotgn/market_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/core.h>

#include "pfotgn/csv.hpp"

namespace pfotgn::market {

namespace {

// Indices [begin, end) of the most recent `window_days` returns dated <= t.
std::pair<std::size_t, std::size_t> window_bounds(const ReturnSeries& returns,
                                                  Date t, int window_days) {
  auto it = std::upper_bound(returns.dates.begin(), returns.dates.end(), t);
  const auto end = static_cast<std::size_t>(it - returns.dates.begin());
  const auto width = static_cast<std::size_t>(std::max(window_days, 0));
  const std::size_t begin = end > width ? end - width : 0;
  return {begin, end};
}

ReturnSeries slice(const ReturnSeries& returns, std::size_t begin, std::size_t end) {
  ReturnSeries out;
  out.dates.assign(returns.dates.begin() + begin, returns.dates.begin() + end);
  out.values.assign(returns.values.begin() + begin, returns.values.begin() + end);
  return out;
}

}  // namespace

void SharpeConfig::validate() const {
  if (window_days < 2) {
    throw DomainError(fmt::format("window_days must be >= 2, got {}", window_days));
  }
  if (annualization_factor <= 0) {
    throw DomainError("annualization_factor must be positive");
  }
}

ReturnSeries log_returns(const PriceSeries& prices) {
  const auto& obs = prices.observations;
  if (obs.size() < 2) {
    throw InsufficientHistoryError(fmt::format(
        "asset '{}' has {} price observations; need at least 2", prices.asset_id,
        obs.size()));
  }
  ReturnSeries out;
  out.dates.reserve(obs.size() - 1);
  out.values.reserve(obs.size() - 1);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!(obs[i].price > 0.0) || !std::isfinite(obs[i].price)) {
      throw DomainError(fmt::format("asset '{}' has non-positive price {} on {}",
                                    prices.asset_id, obs[i].price,
                                    to_iso_string(obs[i].date)));
    }
    if (i == 0) continue;
    if (obs[i].date <= obs[i - 1].date) {
      throw DomainError(fmt::format("asset '{}' dates not strictly increasing at {}",
                                    prices.asset_id, to_iso_string(obs[i].date)));
    }
    out.dates.push_back(obs[i].date);
    out.values.push_back(std::log(obs[i].price / obs[i - 1].price));
  }
  return out;
}

ReturnSeries trailing_window(const ReturnSeries& returns, Date t, int window_days) {
  auto [begin, end] = window_bounds(returns, t, window_days);
  if (end - begin < 2) {
    throw InsufficientHistoryError(fmt::format(
        "{} return observations on or before {}; need at least 2", end - begin,
        to_iso_string(t)));
  }
  return slice(returns, begin, end);
}

ReturnSeries portfolio_return_series(
    const std::map<std::string, ReturnSeries>& per_asset,
    const EqualWeightPortfolio& portfolio) {
  if (portfolio.assets.empty()) throw DomainError("empty portfolio");
  const ReturnSeries* first = nullptr;
  std::vector<const ReturnSeries*> members;
  members.reserve(portfolio.assets.size());
  for (const auto& id : portfolio.assets) {
    auto it = per_asset.find(id);
    if (it == per_asset.end()) {
      throw DomainError("portfolio asset '" + id + "' has no return series");
    }
    if (first == nullptr) {
      first = &it->second;
    } else if (it->second.dates != first->dates) {
      throw AlignmentError("return series of '" + id +
                           "' is not aligned with the other members");
    }
    members.push_back(&it->second);
  }
  ReturnSeries out;
  out.dates = first->dates;
  out.values.assign(first->size(), 0.0);
  for (const auto* m : members) {
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += m->values[i];
  }
  const double n = static_cast<double>(members.size());
  for (auto& v : out.values) v /= n;
  return out;
}

double sharpe_ratio(std::span<const double> returns, const SharpeConfig& cfg) {
  if (returns.size() < 2) {
    throw InsufficientHistoryError("Sharpe ratio needs at least 2 returns");
  }
  const double n = static_cast<double>(returns.size());
  double sum = 0.0;
  double scale = 0.0;
  for (double r : returns) {
    sum += r;
    scale = std::max(scale, std::abs(r));
  }
  const double mean = sum / n;
  double ss = 0.0;
  for (double r : returns) ss += (r - mean) * (r - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  // Rounding leaves ~1e-18 of spread on constant series; compare against the
  // series' own magnitude so the test is scale free.
  if (scale == 0.0 || sd <= 1e-12 * scale) {
    throw DegenerateVolatilityError("return series has zero volatility");
  }
  const double factor = static_cast<double>(cfg.annualization_factor);
  const double rf_daily = cfg.risk_free_rate / factor;
  return (mean - rf_daily) / sd * std::sqrt(factor);
}

double sharpe_ratio(const ReturnSeries& returns, const SharpeConfig& cfg) {
  return sharpe_ratio(std::span<const double>(returns.values), cfg);
}

double annualized_mean_return(std::span<const double> returns,
                              const SharpeConfig& cfg) {
  if (returns.empty()) throw DomainError("annualized return of an empty series");
  double sum = 0.0;
  for (double r : returns) sum += r;
  return sum / static_cast<double>(returns.size()) *
         static_cast<double>(cfg.annualization_factor);
}

double annualized_mean_return(const ReturnSeries& returns, const SharpeConfig& cfg) {
  return annualized_mean_return(std::span<const double>(returns.values), cfg);
}

MarketData::MarketData(std::vector<PriceSeries> series) : prices_(std::move(series)) {
  std::sort(prices_.begin(), prices_.end(),
            [](const PriceSeries& a, const PriceSeries& b) { return a.asset_id < b.asset_id; });
  for (std::size_t i = 1; i < prices_.size(); ++i) {
    if (prices_[i].asset_id == prices_[i - 1].asset_id) {
      throw DomainError("duplicate asset id '" + prices_[i].asset_id + "'");
    }
  }
  returns_.reserve(prices_.size());
  for (const auto& p : prices_) {
    if (p.observations.size() >= 2) {
      returns_.push_back(log_returns(p));
    } else {
      for (const auto& o : p.observations) {
        if (!(o.price > 0.0)) throw DomainError("non-positive price for '" + p.asset_id + "'");
      }
      returns_.emplace_back();
    }
  }
}

std::optional<ItemIndex> MarketData::find(std::string_view asset_id) const {
  auto it = std::lower_bound(
      prices_.begin(), prices_.end(), asset_id,
      [](const PriceSeries& p, std::string_view id) { return p.asset_id < id; });
  if (it == prices_.end() || it->asset_id != asset_id) return std::nullopt;
  return static_cast<ItemIndex>(it - prices_.begin());
}

ReturnSeries MarketData::window(ItemIndex i, Timestamp t, int window_days) const {
  auto [begin, end] = window_bounds(returns_[i], day_of(t), window_days);
  return slice(returns_[i], begin, end);
}

PortfolioStats MarketData::portfolio_stats(std::span<const ItemIndex> assets,
                                           Timestamp t, const SharpeConfig& cfg) const {
  if (assets.empty()) throw DomainError("empty portfolio");
  const Date day = day_of(t);
  std::vector<double> mean;
  std::size_t first_begin = 0;
  const ReturnSeries* first = nullptr;
  for (ItemIndex a : assets) {
    const ReturnSeries& r = returns_.at(a);
    auto [begin, end] = window_bounds(r, day, cfg.window_days);
    if (end - begin < 2) {
      throw InsufficientHistoryError("asset '" + asset_id(a) +
                                     "' lacks a trailing return window");
    }
    if (first == nullptr) {
      first = &r;
      first_begin = begin;
      mean.assign(r.values.begin() + begin, r.values.begin() + end);
      continue;
    }
    if (end - begin != mean.size() ||
        !std::equal(r.dates.begin() + begin, r.dates.begin() + end,
                    first->dates.begin() + first_begin)) {
      throw AlignmentError("trailing windows of '" + asset_id(a) + "' and '" +
                           asset_id(assets.front()) + "' are not aligned");
    }
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += r.values[begin + k];
  }
  const double n = static_cast<double>(assets.size());
  for (auto& v : mean) v /= n;
  PortfolioStats stats;
  stats.sharpe = sharpe_ratio(std::span<const double>(mean), cfg);
  stats.annualized_return = annualized_mean_return(std::span<const double>(mean), cfg);
  return stats;
}

std::vector<PriceSeries> read_price_csv(const std::filesystem::path& path) {
  std::map<std::string, PriceSeries, std::less<>> by_asset;
  csv::read_rows(path, {"date", "asset_id", "price"},
                 [&](const std::vector<std::string_view>& f, std::size_t line) {
                   if (f.size() != 3) {
                     throw ParseError(fmt::format("{}:{}: expected 3 fields, got {}",
                                                  path.string(), line, f.size()));
                   }
                   Date d;
                   try {
                     d = parse_iso_date(f[0]);
                   } catch (const ParseError& e) {
                     throw ParseError(fmt::format("{}:{}: {}", path.string(), line, e.what()));
                   }
                   auto it = by_asset.find(f[1]);
                   if (it == by_asset.end()) {
                     it = by_asset.emplace(std::string(f[1]), PriceSeries{std::string(f[1]), {}}).first;
                   }
                   it->second.observations.push_back({d, csv::parse_double(f[2], line)});
                 });
  std::vector<PriceSeries> out;
  out.reserve(by_asset.size());
  for (auto& [id, series] : by_asset) {
    std::stable_sort(series.observations.begin(), series.observations.end(),
                     [](const PriceObservation& a, const PriceObservation& b) {
                       return a.date < b.date;
                     });
    out.push_back(std::move(series));
  }
  return out;
}

void write_price_csv(const std::filesystem::path& path,
                     std::span<const PriceSeries> series) {
  auto out = csv::open_for_write(path);
  out << "date,asset_id,price\n";
  // Row order: by date, then asset id, which is how market feeds arrive.
  std::vector<std::pair<Date, std::pair<const std::string*, double>>> rows;
  for (const auto& s : series) {
    for (const auto& o : s.observations) rows.push_back({o.date, {&s.asset_id, o.price}});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return *a.second.first < *b.second.first;
  });
  for (const auto& [date, entry] : rows) {
    out << to_iso_string(date) << ',' << *entry.first << ','
        << fmt::format("{:.17g}", entry.second) << '\n';
  }
}

}  // namespace pfotgn::market
