#include "pfotgn/event_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include <fmt/core.h>

#include "pfotgn/csv.hpp"

namespace pfotgn::graph {

std::optional<UserIndex> EventLog::find_user(std::string_view id) const {
  auto it = std::lower_bound(user_ids.begin(), user_ids.end(), id);
  if (it == user_ids.end() || *it != id) return std::nullopt;
  return static_cast<UserIndex>(it - user_ids.begin());
}

std::pair<std::size_t, std::size_t> EventLog::range(Timestamp from, Timestamp to) const {
  auto by_time = [](const InteractionEvent& e, Timestamp t) { return e.timestamp < t; };
  auto lo = std::lower_bound(events.begin(), events.end(), from, by_time);
  auto hi = std::lower_bound(lo, events.end(), to, by_time);
  return {static_cast<std::size_t>(lo - events.begin()),
          static_cast<std::size_t>(hi - events.begin())};
}

std::vector<RawEvent> read_event_csv(const std::filesystem::path& path) {
  std::vector<RawEvent> out;
  csv::read_rows(path, {"timestamp", "user_id", "item_id"},
                 [&](const std::vector<std::string_view>& f, std::size_t line) {
                   if (f.size() != 3 || f[1].empty() || f[2].empty()) {
                     throw ParseError(fmt::format("{}:{}: malformed event row",
                                                  path.string(), line));
                   }
                   out.push_back({csv::parse_int(f[0], line), std::string(f[1]),
                                  std::string(f[2]), line});
                 });
  return out;
}

void write_event_csv(const std::filesystem::path& path, std::span<const RawEvent> events) {
  auto out = csv::open_for_write(path);
  out << "timestamp,user_id,item_id\n";
  for (const auto& e : events) out << e.timestamp << ',' << e.user_id << ',' << e.item_id << '\n';
}

EdgeFeature compute_edge_feature(const market::MarketData& market, ItemIndex item,
                                 Timestamp t) {
  const auto& obs = market.prices(item).observations;
  if (obs.empty() || obs.front().date > day_of(t)) {
    throw MissingHistoryError(fmt::format("item '{}' has no price on or before {}",
                                          market.asset_id(item),
                                          to_iso_string(day_of(t))));
  }
  EdgeFeature feature{};
  const auto window = market.window(item, t, static_cast<int>(kEdgeFeatureWidth));
  const std::size_t pad = kEdgeFeatureWidth - window.size();
  std::copy(window.values.begin(), window.values.end(), feature.begin() + pad);
  return feature;
}

EventLog ingest_events(std::span<const RawEvent> raw, const market::MarketData& market) {
  EventLog log;
  std::set<std::string_view> users;
  for (const auto& e : raw) users.insert(e.user_id);
  log.user_ids.assign(users.begin(), users.end());
  log.nodes = NodeSpace{log.user_ids.size(), market.asset_count()};

  std::vector<std::size_t> order(raw.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return raw[a].timestamp < raw[b].timestamp;
  });

  log.events.reserve(raw.size());
  for (std::size_t idx : order) {
    const RawEvent& r = raw[idx];
    auto item = market.find(r.item_id);
    if (!item) {
      throw ParseError(fmt::format("event row {}: unknown item '{}'",
                                   r.line != 0 ? r.line : idx + 1, r.item_id));
    }
    InteractionEvent e;
    e.user = *log.find_user(r.user_id);
    e.item = *item;
    e.timestamp = r.timestamp;
    try {
      e.edge_feature = compute_edge_feature(market, *item, r.timestamp);
    } catch (const MissingHistoryError& err) {
      throw MissingHistoryError(fmt::format("event row {}: {}",
                                            r.line != 0 ? r.line : idx + 1, err.what()));
    }
    log.events.push_back(e);
  }
  return log;
}

void TemporalNeighborStore::reset(std::size_t node_count) {
  lists_.assign(node_count, {});
}

void TemporalNeighborStore::add(NodeIndex node, const NeighborEntry& entry) {
  auto& list = lists_.at(node);
  if (!list.empty() && entry.timestamp < list.back().timestamp) {
    throw OrderingError(fmt::format("neighbor of node {} inserted out of time order", node));
  }
  list.push_back(entry);
}

void TemporalNeighborStore::insert(const InteractionEvent& event, const NodeSpace& nodes) {
  const NodeIndex u = nodes.user_node(event.user);
  const NodeIndex v = nodes.item_node(event.item);
  add(u, {v, event.timestamp, &event.edge_feature});
  add(v, {u, event.timestamp, &event.edge_feature});
}

std::vector<NeighborEntry> TemporalNeighborStore::neighbors(NodeIndex node, Timestamp t,
                                                            std::size_t n) const {
  const auto& list = lists_.at(node);
  auto end = std::lower_bound(list.begin(), list.end(), t,
                              [](const NeighborEntry& e, Timestamp q) { return e.timestamp < q; });
  std::vector<NeighborEntry> out;
  out.reserve(std::min<std::size_t>(n, end - list.begin()));
  for (auto it = end; it != list.begin() && out.size() < n;) {
    --it;
    out.push_back(*it);
  }
  return out;
}

PortfolioLedger PortfolioLedger::from_events(std::span<const InteractionEvent> events,
                                             std::size_t user_count) {
  PortfolioLedger ledger(user_count);
  for (const auto& e : events) ledger.record(e.user, e.item, e.timestamp);
  return ledger;
}

void PortfolioLedger::record(UserIndex user, ItemIndex item, Timestamp t) {
  if (user >= first_purchase_.size()) first_purchase_.resize(user + 1);
  auto [it, inserted] = first_purchase_[user].emplace(item, t);
  if (!inserted) it->second = std::min(it->second, t);
}

std::vector<ItemIndex> PortfolioLedger::portfolio_at(UserIndex user, Timestamp t) const {
  std::vector<ItemIndex> out;
  if (user >= first_purchase_.size()) return out;
  for (const auto& [item, first] : first_purchase_[user]) {
    if (first < t) out.push_back(item);
  }
  return out;
}

std::vector<ItemIndex> PortfolioLedger::interacted_through(UserIndex user, Timestamp t) const {
  std::vector<ItemIndex> out;
  if (user >= first_purchase_.size()) return out;
  for (const auto& [item, first] : first_purchase_[user]) {
    if (first <= t) out.push_back(item);
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DomainError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::size_t longest_flat_run(const market::PriceSeries& prices) {
  const auto& obs = prices.observations;
  std::size_t best = obs.empty() ? 0 : 1;
  std::size_t run = best;
  for (std::size_t i = 1; i < obs.size(); ++i) {
    run = obs[i].price == obs[i - 1].price ? run + 1 : 1;
    best = std::max(best, run);
  }
  return best;
}

FilterResult filter_dataset(std::span<const RawEvent> events,
                            const market::MarketData& market,
                            const std::map<std::string, double, std::less<>>& market_caps,
                            const FilterConfig& cfg) {
  FilterResult result;

  std::set<std::string, std::less<>> drop_items;
  if (!market_caps.empty()) {
    std::vector<double> caps;
    caps.reserve(market_caps.size());
    for (const auto& [id, cap] : market_caps) caps.push_back(cap);
    result.market_cap_threshold = percentile(caps, cfg.market_cap_percentile);
    for (const auto& [id, cap] : market_caps) {
      if (cap < result.market_cap_threshold) drop_items.insert(id);
    }
  }
  for (ItemIndex i = 0; i < market.asset_count(); ++i) {
    if (longest_flat_run(market.prices(i)) >= cfg.flat_run_length) {
      drop_items.insert(market.asset_id(i));
    }
  }
  for (const auto& e : events) {
    if (!market_caps.empty() && market_caps.find(e.item_id) == market_caps.end()) {
      throw DomainError("no market cap for item '" + e.item_id + "'");
    }
  }

  std::map<std::string, std::size_t, std::less<>> trades;
  for (const auto& e : events) ++trades[e.user_id];
  std::set<std::string, std::less<>> drop_users;
  if (!trades.empty()) {
    std::vector<double> counts;
    counts.reserve(trades.size());
    for (const auto& [id, n] : trades) counts.push_back(static_cast<double>(n));
    result.user_trade_threshold = percentile(counts, cfg.user_trade_percentile);
    for (const auto& [id, n] : trades) {
      if (static_cast<double>(n) > result.user_trade_threshold) drop_users.insert(id);
    }
  }

  for (const auto& e : events) {
    if (drop_users.count(e.user_id) == 0 && drop_items.count(e.item_id) == 0) {
      result.events.push_back(e);
    }
  }
  result.removed_users.assign(drop_users.begin(), drop_users.end());
  result.removed_items.assign(drop_items.begin(), drop_items.end());
  return result;
}

std::vector<RollingSplit> make_rolling_splits(Date begin, Date end, const SplitConfig& cfg) {
  if (cfg.period_months <= 0 || cfg.stride_months <= 0) {
    throw DomainError("period and stride must be positive");
  }
  const int total = cfg.ratio[0] + cfg.ratio[1] + cfg.ratio[2];
  if (cfg.ratio[0] <= 0 || cfg.ratio[1] <= 0 || cfg.ratio[2] <= 0) {
    throw DomainError("split ratio entries must be positive");
  }
  // Boundary after `parts` ratio units: whole months when the ratio divides
  // the period evenly, otherwise the same fraction of the period's days.
  auto boundary = [&](Date start, Date stop, int parts) -> Date {
    if ((cfg.period_months * parts) % total == 0) {
      return add_months(start, cfg.period_months * parts / total);
    }
    const auto days = (stop - start).count();
    const auto offset = static_cast<long>(std::lround(static_cast<double>(days) * parts / total));
    return start + std::chrono::days{offset};
  };

  std::vector<RollingSplit> splits;
  for (int k = 0;; ++k) {
    const Date start = add_months(begin, k * cfg.stride_months);
    const Date stop = add_months(start, cfg.period_months);
    if (stop > end) break;
    RollingSplit s;
    s.period_index = k + 1;
    s.start = start_of(start);
    s.train_end = start_of(boundary(start, stop, cfg.ratio[0]));
    s.validation_end = start_of(boundary(start, stop, cfg.ratio[0] + cfg.ratio[1]));
    s.end = start_of(stop);
    splits.push_back(s);
  }
  if (splits.empty()) {
    throw EmptySplitError(fmt::format("range {} to {} is shorter than one {}-month period",
                                      to_iso_string(begin), to_iso_string(end),
                                      cfg.period_months));
  }
  return splits;
}

}  // namespace pfotgn::graph
