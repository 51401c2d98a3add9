#include "pfotgn/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/random/discrete_distribution.hpp>
#include <boost/random/exponential_distribution.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/lognormal_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <fmt/core.h>

#include "pfotgn/csv.hpp"

namespace pfotgn::scenario {

namespace {

constexpr double kTradingDays = 252.0;
// Zipf exponent of the latent item popularity (before the bias exponent).
constexpr double kPopularityZipf = 1.2;
// Relative event rate of short-term traders versus long-term holders.
constexpr double kTraderActivity = 5.0;
constexpr std::size_t kTraderFavorites = 3;
constexpr double kTraderFavoriteShare = 0.8;
// Holders draw flatter sector preferences.
constexpr double kHolderSpread = 4.0;

std::string padded_id(char prefix, std::size_t i, std::size_t count) {
  const std::size_t width = std::max<std::size_t>(3, fmt::format("{}", count - 1).size());
  return fmt::format("{}{:0{}}", prefix, i, width);
}

double uniform_in(Rng& rng, double lo, double hi) {
  boost::random::uniform_01<double> u;
  return lo + (hi - lo) * u(rng);
}

std::vector<double> dirichlet(Rng& rng, std::size_t k, double alpha) {
  std::vector<double> draw(k);
  boost::random::gamma_distribution<double> gamma(alpha);
  double total = 0.0;
  for (auto& g : draw) {
    g = gamma(rng);
    total += g;
  }
  if (!(total > 0.0)) {
    // Extreme concentration can underflow every coordinate; fall back to a
    // one-hot draw.
    std::fill(draw.begin(), draw.end(), 0.0);
    boost::random::uniform_int_distribution<std::size_t> pick(0, k - 1);
    draw[pick(rng)] = 1.0;
    return draw;
  }
  for (auto& g : draw) g /= total;
  return draw;
}

std::size_t draw_weighted(Rng& rng, const std::vector<double>& weights) {
  boost::random::discrete_distribution<std::size_t, double> dist(weights.begin(), weights.end());
  return dist(rng);
}

}  // namespace

void MarketSpec::validate() const {
  if (n_assets == 0) throw DomainError("n_assets must be positive");
  if (n_sectors == 0 || n_sectors > n_assets) {
    throw DomainError("n_sectors must be in [1, n_assets]");
  }
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw DomainError(fmt::format(
        "intra-sector correlation {} does not give a positive-definite matrix; need 0 <= rho < 1",
        rho));
  }
  if (vol_min < 0.0 || vol_max < vol_min) throw DomainError("invalid volatility range");
  if (drift_max < drift_min) throw DomainError("invalid drift range");
  if (n_days < 2) throw DomainError("n_days must be at least 2");
  if (!(shares_min > 0.0) || shares_max < shares_min) throw DomainError("invalid share range");
  if (!(initial_price > 0.0)) throw DomainError("initial_price must be positive");
}

GeneratedMarket gen_prices(const MarketSpec& spec) {
  spec.validate();

  std::vector<Date> days;
  days.reserve(spec.n_days);
  for (Date d = spec.start; days.size() < spec.n_days; d += std::chrono::days{1}) {
    if (is_weekday(d)) days.push_back(d);
  }
  const std::size_t n_returns = spec.n_days - 1;

  std::vector<std::vector<double>> factors(spec.n_sectors);
  for (std::size_t s = 0; s < spec.n_sectors; ++s) {
    Rng rng = make_rng(spec.seed, "market.sector", s);
    boost::random::normal_distribution<double> normal;
    factors[s].resize(n_returns);
    for (auto& f : factors[s]) f = normal(rng);
  }

  GeneratedMarket out;
  out.prices.resize(spec.n_assets);
  out.sector.resize(spec.n_assets);
  out.annual_drift.resize(spec.n_assets);
  out.annual_vol.resize(spec.n_assets);
  const double load_common = std::sqrt(spec.rho);
  const double load_idio = std::sqrt(1.0 - spec.rho);
  for (std::size_t i = 0; i < spec.n_assets; ++i) {
    Rng rng = make_rng(spec.seed, "market.asset", i);
    const std::size_t sector = i % spec.n_sectors;
    const double mu = uniform_in(rng, spec.drift_min, spec.drift_max);
    const double sigma = uniform_in(rng, spec.vol_min, spec.vol_max);
    const double shares = std::exp(uniform_in(rng, std::log(spec.shares_min),
                                              std::log(spec.shares_max)));
    const double daily_drift = mu / kTradingDays - sigma * sigma / (2.0 * kTradingDays);
    const double daily_vol = sigma / std::sqrt(kTradingDays);

    auto& series = out.prices[i];
    series.asset_id = padded_id('A', i, spec.n_assets);
    series.observations.reserve(spec.n_days);
    double log_price = std::log(spec.initial_price);
    series.observations.push_back({days[0], spec.initial_price});
    boost::random::normal_distribution<double> normal;
    for (std::size_t k = 0; k < n_returns; ++k) {
      const double shock = load_common * factors[sector][k] + load_idio * normal(rng);
      log_price += daily_drift + daily_vol * shock;
      series.observations.push_back({days[k + 1], std::exp(log_price)});
    }
    out.sector[i] = sector;
    out.annual_drift[i] = mu;
    out.annual_vol[i] = sigma;
    out.shares_outstanding[series.asset_id] = shares;
    out.market_caps[series.asset_id] = series.observations.back().price * shares;
  }
  return out;
}

void write_market_caps(const std::filesystem::path& path, const GeneratedMarket& market) {
  auto out = csv::open_for_write(path);
  out << "item_id,shares_outstanding,market_cap\n";
  for (const auto& [id, cap] : market.market_caps) {
    out << id << ',' << fmt::format("{:.17g}", market.shares_outstanding.at(id)) << ','
        << fmt::format("{:.17g}", cap) << '\n';
  }
}

std::map<std::string, double, std::less<>> read_market_caps(const std::filesystem::path& path) {
  std::map<std::string, double, std::less<>> caps;
  csv::read_rows(path, {"item_id", "shares_outstanding", "market_cap"},
                 [&](const std::vector<std::string_view>& f, std::size_t line) {
                   if (f.size() != 3) {
                     throw ParseError(fmt::format("{}:{}: expected 3 fields", path.string(), line));
                   }
                   caps[std::string(f[0])] = csv::parse_double(f[2], line);
                 });
  return caps;
}

void BehaviorSpec::validate(std::size_t n_sectors) const {
  if (!(trader_fraction >= 0.0 && trader_fraction <= 1.0)) {
    throw DomainError("trader_fraction must lie in [0, 1]");
  }
  if (!(preference_concentration > 0.0)) {
    throw DomainError("preference_concentration must be positive");
  }
  if (popularity_bias < 0.0) throw DomainError("popularity_bias must be non-negative");
  if (end <= start) throw DomainError("event range is empty");
  if (preference_override) {
    if (preference_override->size() != n_sectors) {
      throw DomainError("preference_override must have one entry per sector");
    }
    double total = 0.0;
    for (double p : *preference_override) {
      if (p < 0.0) throw DomainError("preference_override entries must be non-negative");
      total += p;
    }
    if (!(total > 0.0)) throw DomainError("preference_override sums to zero");
  }
}

std::vector<graph::RawEvent> gen_events(const BehaviorSpec& spec,
                                        const GeneratedMarket& market) {
  const std::size_t n_items = market.prices.size();
  const std::size_t n_sectors =
      market.sector.empty() ? 1 : *std::max_element(market.sector.begin(), market.sector.end()) + 1;
  spec.validate(n_sectors);
  if (spec.n_events == 0 || spec.n_users == 0 || n_items == 0) return {};

  // Latent popularity: Zipf over a seeded permutation of the items.
  std::vector<std::size_t> rank(n_items);
  std::iota(rank.begin(), rank.end(), 1);
  {
    Rng rng = make_rng(spec.seed, "behavior.popularity");
    std::vector<std::size_t> shuffled =
        sample_without_replacement(std::span<const std::size_t>(rank), n_items, rng);
    rank = std::move(shuffled);
  }
  std::vector<double> popularity(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    popularity[i] = std::pow(static_cast<double>(rank[i]), -kPopularityZipf * spec.popularity_bias);
  }

  std::vector<bool> is_trader(spec.n_users, false);
  {
    Rng rng = make_rng(spec.seed, "behavior.archetype");
    std::vector<std::size_t> users(spec.n_users);
    std::iota(users.begin(), users.end(), 0);
    const auto n_traders = static_cast<std::size_t>(
        std::llround(spec.trader_fraction * static_cast<double>(spec.n_users)));
    for (std::size_t u : sample_without_replacement(std::span<const std::size_t>(users),
                                                    n_traders, rng)) {
      is_trader[u] = true;
    }
  }

  std::vector<double> activity(spec.n_users);
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    Rng rng = make_rng(spec.seed, "behavior.activity", u);
    boost::random::lognormal_distribution<double> jitter(0.0, 0.5);
    activity[u] = (is_trader[u] ? kTraderActivity : 1.0) * jitter(rng);
  }
  const double total_activity = std::accumulate(activity.begin(), activity.end(), 0.0);
  const double horizon = static_cast<double>(start_of(spec.end) - start_of(spec.start));

  struct Draw {
    Timestamp t;
    std::size_t user;
    std::size_t item;
  };
  std::vector<Draw> draws;
  draws.reserve(spec.n_events + spec.n_events / 4);

  for (std::size_t u = 0; u < spec.n_users; ++u) {
    Rng rng = make_rng(spec.seed, "behavior.user", u);
    std::vector<double> preference =
        spec.preference_override
            ? *spec.preference_override
            : dirichlet(rng, n_sectors,
                        (is_trader[u] ? 1.0 : kHolderSpread) / spec.preference_concentration);
    std::vector<double> weights(n_items);
    for (std::size_t i = 0; i < n_items; ++i) {
      weights[i] = preference[market.sector[i]] * popularity[i];
    }

    std::vector<std::size_t> favorites;
    if (is_trader[u]) {
      std::vector<double> remaining = weights;
      const auto available = static_cast<std::size_t>(
          std::count_if(remaining.begin(), remaining.end(), [](double w) { return w > 0.0; }));
      for (std::size_t f = 0; f < std::min(kTraderFavorites, available); ++f) {
        const std::size_t pick = draw_weighted(rng, remaining);
        favorites.push_back(pick);
        remaining[pick] = 0.0;
      }
    }

    const double rate = static_cast<double>(spec.n_events) * activity[u] / (total_activity * horizon);
    boost::random::exponential_distribution<double> gap(rate);
    boost::random::uniform_01<double> coin;
    for (double clock = gap(rng); clock < horizon; clock += gap(rng)) {
      std::size_t item;
      if (!favorites.empty() && coin(rng) < kTraderFavoriteShare) {
        boost::random::uniform_int_distribution<std::size_t> pick(0, favorites.size() - 1);
        item = favorites[pick(rng)];
      } else {
        item = draw_weighted(rng, weights);
      }
      draws.push_back({start_of(spec.start) + static_cast<Timestamp>(clock), u, item});
    }
  }

  std::stable_sort(draws.begin(), draws.end(), [](const Draw& a, const Draw& b) {
    if (a.t != b.t) return a.t < b.t;
    return a.user < b.user;
  });
  std::vector<graph::RawEvent> events;
  events.reserve(draws.size());
  for (const auto& d : draws) {
    events.push_back({d.t, padded_id('U', d.user, spec.n_users), market.prices[d.item].asset_id, 0});
  }
  return events;
}

}  // namespace pfotgn::scenario
