#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfotgn/common.hpp"
#include "pfotgn/market_data.hpp"

namespace pfotgn::graph {

inline constexpr std::size_t kEdgeFeatureWidth = 30;
using EdgeFeature = std::array<double, kEdgeFeatureWidth>;

// One row of the event file before id resolution.
struct RawEvent {
  Timestamp timestamp = 0;
  std::string user_id;
  std::string item_id;
  std::size_t line = 0;  // source line, 0 when not read from a file
};

struct InteractionEvent {
  UserIndex user = 0;
  ItemIndex item = 0;
  Timestamp timestamp = 0;
  EdgeFeature edge_feature{};
};

// Users occupy node indices [0, users); items follow at [users, users + items).
struct NodeSpace {
  std::size_t users = 0;
  std::size_t items = 0;

  std::size_t size() const { return users + items; }
  NodeIndex user_node(UserIndex u) const { return u; }
  NodeIndex item_node(ItemIndex i) const { return static_cast<NodeIndex>(users + i); }
  bool is_item(NodeIndex n) const { return n >= users; }
  ItemIndex item_of(NodeIndex n) const { return static_cast<ItemIndex>(n - users); }
};

// Ingested, time-ordered interactions with dense user ids. Item indices are
// those of the MarketData the log was built against.
struct EventLog {
  std::vector<std::string> user_ids;  // sorted; index = UserIndex
  std::vector<InteractionEvent> events;
  NodeSpace nodes;

  std::optional<UserIndex> find_user(std::string_view id) const;
  // Half-open index range of events with from <= timestamp < to.
  std::pair<std::size_t, std::size_t> range(Timestamp from, Timestamp to) const;
};

// Event file: header "timestamp,user_id,item_id".
std::vector<RawEvent> read_event_csv(const std::filesystem::path& path);
void write_event_csv(const std::filesystem::path& path, std::span<const RawEvent> events);

// The 30 most recent daily log returns of `item` dated on or before day(t),
// left-padded with zeros. MissingHistoryError if no price exists by then.
EdgeFeature compute_edge_feature(const market::MarketData& market, ItemIndex item,
                                 Timestamp t);

// Resolves ids, sorts by (timestamp, input order) and attaches edge features.
// Unknown items raise ParseError naming the source line.
EventLog ingest_events(std::span<const RawEvent> raw, const market::MarketData& market);

struct NeighborEntry {
  NodeIndex node = 0;
  Timestamp timestamp = 0;
  const EdgeFeature* feature = nullptr;  // points into the owning EventLog
};

// Per-node interaction history. Entries must be appended in non-decreasing
// time order per node; queries see only entries strictly before the query.
class TemporalNeighborStore {
 public:
  explicit TemporalNeighborStore(std::size_t node_count = 0) : lists_(node_count) {}

  void reset(std::size_t node_count);
  std::size_t node_count() const { return lists_.size(); }

  // Links user and item in both directions. The event must outlive the store.
  void insert(const InteractionEvent& event, const NodeSpace& nodes);
  void add(NodeIndex node, const NeighborEntry& entry);

  // Up to `n` most recent entries with timestamp < t, newest first.
  std::vector<NeighborEntry> neighbors(NodeIndex node, Timestamp t, std::size_t n) const;
  std::size_t degree(NodeIndex node) const { return lists_[node].size(); }

 private:
  std::vector<std::vector<NeighborEntry>> lists_;
};

// Earliest purchase time per (user, item).
class PortfolioLedger {
 public:
  explicit PortfolioLedger(std::size_t user_count = 0) : first_purchase_(user_count) {}

  static PortfolioLedger from_events(std::span<const InteractionEvent> events,
                                     std::size_t user_count);

  void record(UserIndex user, ItemIndex item, Timestamp t);

  // Items first bought strictly before t, ascending.
  std::vector<ItemIndex> portfolio_at(UserIndex user, Timestamp t) const;
  // Items first bought at or before t, ascending.
  std::vector<ItemIndex> interacted_through(UserIndex user, Timestamp t) const;

 private:
  std::vector<std::map<ItemIndex, Timestamp>> first_purchase_;
};

struct FilterConfig {
  double user_trade_percentile = 95.0;
  double market_cap_percentile = 5.0;
  std::size_t flat_run_length = 30;
};

struct FilterResult {
  std::vector<RawEvent> events;
  std::vector<std::string> removed_users;
  std::vector<std::string> removed_items;
  double user_trade_threshold = 0.0;
  double market_cap_threshold = 0.0;
};

// Linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

// Length of the longest run of identical consecutive prices.
std::size_t longest_flat_run(const market::PriceSeries& prices);

// Drops users strictly above the trade-count percentile, items strictly below
// the market-cap percentile, and items with a flat price run of the given
// length. Ties with a threshold are kept.
FilterResult filter_dataset(std::span<const RawEvent> events,
                            const market::MarketData& market,
                            const std::map<std::string, double, std::less<>>& market_caps,
                            const FilterConfig& cfg = {});

struct SplitConfig {
  int period_months = 9;
  int stride_months = 3;
  std::array<int, 3> ratio{7, 1, 1};
};

// [start, train_end) train, [train_end, validation_end) validation,
// [validation_end, end) test.
struct RollingSplit {
  int period_index = 0;
  Timestamp start = 0;
  Timestamp train_end = 0;
  Timestamp validation_end = 0;
  Timestamp end = 0;
};

// Every period that fits inside [begin, end]; starts advance by the stride.
// EmptySplitError when not even one period fits.
std::vector<RollingSplit> make_rolling_splits(Date begin, Date end,
                                              const SplitConfig& cfg = {});

}  // namespace pfotgn::graph
