#include <algorithm>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "pfotgn/event_graph.hpp"
#include "test_util.hpp"

namespace pfotgn::graph {
namespace {

using testing::weekday_series;
using testing::ymd;

market::MarketData small_market() {
  std::vector<double> a, b;
  for (int i = 0; i < 45; ++i) {
    a.push_back(100.0 * std::exp(0.01 * i));
    b.push_back(50.0 + (i % 3));
  }
  return market::MarketData({weekday_series("A", ymd(2021, 1, 4), a),
                             weekday_series("B", ymd(2021, 1, 4), b)});
}

TEST(EdgeFeature, ThirtyMostRecentReturnsLeftPadded) {
  const auto md = small_market();
  const Timestamp late = start_of(md.prices(0).observations[40].date) + 100;
  const auto f = compute_edge_feature(md, 0, late);
  for (double v : f) EXPECT_NEAR(v, 0.01, 1e-12);
  const Timestamp early = start_of(md.prices(0).observations[3].date);
  const auto g = compute_edge_feature(md, 0, early);
  for (std::size_t i = 0; i < kEdgeFeatureWidth - 3; ++i) EXPECT_EQ(g[i], 0.0);
  EXPECT_NEAR(g.back(), 0.01, 1e-12);
  EXPECT_THROW(compute_edge_feature(md, 0, start_of(ymd(2020, 12, 1))), MissingHistoryError);
}

TEST(Ingest, SortsStablyAndResolvesIds) {
  const auto md = small_market();
  const Timestamp t0 = start_of(ymd(2021, 2, 1));
  const std::vector<RawEvent> raw{{t0 + 5, "u2", "B", 2},
                                  {t0 + 1, "u1", "A", 3},
                                  {t0 + 5, "u1", "A", 4}};
  const auto log = ingest_events(raw, md);
  ASSERT_EQ(log.events.size(), 3u);
  EXPECT_EQ(log.user_ids, (std::vector<std::string>{"u1", "u2"}));
  EXPECT_EQ(log.events[0].timestamp, t0 + 1);
  EXPECT_EQ(log.events[1].user, 1u);  // input order kept on equal times
  EXPECT_EQ(log.events[2].user, 0u);
  EXPECT_EQ(log.nodes.item_node(1), 3u);
  EXPECT_EQ(log.range(t0 + 2, t0 + 6), (std::pair<std::size_t, std::size_t>{1, 3}));
}

TEST(Ingest, UnknownItemNamesLine) {
  const auto md = small_market();
  const std::vector<RawEvent> raw{{start_of(ymd(2021, 2, 1)), "u", "Z", 17}};
  try {
    ingest_events(raw, md);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
}

TEST(NeighborStore, StrictlyBeforeNewestFirst) {
  NodeSpace nodes{2, 3};
  std::vector<InteractionEvent> events{{0, 0, 10, {}}, {0, 1, 20, {}}, {1, 1, 20, {}}, {0, 2, 30, {}}};
  TemporalNeighborStore store(nodes.size());
  for (const auto& e : events) store.insert(e, nodes);
  const auto n = store.neighbors(0, 30, 5);
  ASSERT_EQ(n.size(), 2u);
  EXPECT_EQ(n[0].node, nodes.item_node(1));
  EXPECT_EQ(n[1].node, nodes.item_node(0));
  EXPECT_EQ(store.neighbors(0, 10, 5).size(), 0u);
  EXPECT_EQ(store.neighbors(0, 31, 1).size(), 1u);
  EXPECT_EQ(store.neighbors(nodes.item_node(1), 21, 5).size(), 2u);
  EXPECT_THROW(store.add(0, {1, 5, nullptr}), OrderingError);
}

TEST(NeighborStore, MatchesBruteForce) {
  Rng rng = make_rng(4, "neighbors");
  NodeSpace nodes{5, 7};
  std::vector<InteractionEvent> events;
  Timestamp t = 0;
  for (int i = 0; i < 200; ++i) {
    t += static_cast<Timestamp>(testing::uniform_index(rng, 0, 3));
    events.push_back({static_cast<UserIndex>(testing::uniform_index(rng, 0, 4)),
                      static_cast<ItemIndex>(testing::uniform_index(rng, 0, 6)), t, {}});
  }
  TemporalNeighborStore store(nodes.size());
  for (const auto& e : events) store.insert(e, nodes);
  for (int probe = 0; probe < 200; ++probe) {
    const auto node = static_cast<NodeIndex>(testing::uniform_index(rng, 0, nodes.size() - 1));
    const Timestamp q = static_cast<Timestamp>(testing::uniform_index(rng, 0, t + 1));
    const std::size_t n = testing::uniform_index(rng, 1, 12);
    std::vector<std::pair<Timestamp, NodeIndex>> expected;
    for (auto it = events.rbegin(); it != events.rend(); ++it) {
      if (it->timestamp >= q) continue;
      const NodeIndex u = nodes.user_node(it->user), v = nodes.item_node(it->item);
      if (u == node) expected.push_back({it->timestamp, v});
      if (v == node) expected.push_back({it->timestamp, u});
    }
    if (expected.size() > n) expected.resize(n);
    const auto got = store.neighbors(node, q, n);
    ASSERT_EQ(got.size(), expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].timestamp, expected[i].first);
      EXPECT_EQ(got[i].node, expected[i].second);
    }
  }
}

TEST(Ledger, PortfolioStrictInteractedInclusive) {
  PortfolioLedger ledger(1);
  ledger.record(0, 3, 100);
  ledger.record(0, 1, 50);
  ledger.record(0, 3, 40);  // earlier repeat wins
  EXPECT_EQ(ledger.portfolio_at(0, 50), (std::vector<ItemIndex>{3}));
  EXPECT_EQ(ledger.interacted_through(0, 50), (std::vector<ItemIndex>{1, 3}));
  EXPECT_TRUE(ledger.portfolio_at(0, 40).empty());
  EXPECT_TRUE(ledger.portfolio_at(7, 1000).empty());
}

TEST(Percentile, LinearInterpolationOracle) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({10}, 95), 10);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 95), 4.8);
  EXPECT_DOUBLE_EQ(percentile({5, 1, 3}, 0), 1);
  EXPECT_THROW(percentile({}, 50), DomainError);
}

TEST(Filter, DropsHeavyUsersSmallCapsAndFlatRuns) {
  std::vector<double> flat(40, 10.0), moving;
  for (int i = 0; i < 40; ++i) moving.push_back(10.0 + i);
  const market::MarketData md({weekday_series("A", ymd(2021, 1, 4), moving),
                               weekday_series("B", ymd(2021, 1, 4), moving),
                               weekday_series("F", ymd(2021, 1, 4), flat),
                               weekday_series("S", ymd(2021, 1, 4), moving)});
  std::map<std::string, double, std::less<>> caps{{"A", 100}, {"B", 200}, {"F", 300}, {"S", 1}};
  std::vector<RawEvent> events;
  const Timestamp t = start_of(ymd(2021, 2, 1));
  for (int u = 0; u < 19; ++u) events.push_back({t, "u" + std::to_string(u), "A", 0});
  for (int i = 0; i < 30; ++i) events.push_back({t + i, "heavy", "B", 0});
  events.push_back({t, "u0", "F", 0});
  events.push_back({t, "u1", "S", 0});
  const auto r = filter_dataset(events, md, caps);
  EXPECT_EQ(r.removed_users, (std::vector<std::string>{"heavy"}));
  EXPECT_EQ(r.removed_items, (std::vector<std::string>{"F", "S"}));
  EXPECT_EQ(r.events.size(), 19u);
  caps.erase("A");
  EXPECT_THROW(filter_dataset(events, md, caps), DomainError);
}

TEST(RollingSplits, TwoPeriodsAtThreeMonthOffsets) {
  const auto splits = make_rolling_splits(ymd(2021, 1, 1), ymd(2022, 1, 1));
  ASSERT_EQ(splits.size(), 2u);
  for (int k = 0; k < 2; ++k) {
    const Date start = add_months(ymd(2021, 1, 1), 3 * k);
    EXPECT_EQ(splits[k].period_index, k + 1);
    EXPECT_EQ(splits[k].start, start_of(start));
    EXPECT_EQ(splits[k].train_end, start_of(add_months(start, 7)));
    EXPECT_EQ(splits[k].validation_end, start_of(add_months(start, 8)));
    EXPECT_EQ(splits[k].end, start_of(add_months(start, 9)));
  }
  EXPECT_THROW(make_rolling_splits(ymd(2021, 1, 1), ymd(2021, 6, 1)), EmptySplitError);
}

TEST(RollingSplits, WindowsPartitionEachPeriod) {
  Rng rng = make_rng(8, "splits");
  for (int trial = 0; trial < 50; ++trial) {
    SplitConfig cfg;
    cfg.ratio = {static_cast<int>(testing::uniform_index(rng, 1, 8)),
                 static_cast<int>(testing::uniform_index(rng, 1, 3)),
                 static_cast<int>(testing::uniform_index(rng, 1, 3))};
    cfg.period_months = cfg.ratio[0] + cfg.ratio[1] + cfg.ratio[2];
    cfg.stride_months = static_cast<int>(testing::uniform_index(rng, 1, 4));
    const Date begin = ymd(2019, 1, 1) + std::chrono::days{testing::uniform_index(rng, 0, 400)};
    const auto splits = make_rolling_splits(begin, add_months(begin, 30), cfg);
    for (const auto& s : splits) {
      EXPECT_LT(s.start, s.train_end);
      EXPECT_LT(s.train_end, s.validation_end);
      EXPECT_LT(s.validation_end, s.end);
    }
  }
}

TEST(EventCsv, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "pfotgn_events_test.csv";
  const std::vector<RawEvent> events{{100, "u1", "A", 0}, {200, "u2", "B", 0}};
  write_event_csv(path, events);
  const auto back = read_event_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].timestamp, 200);
  EXPECT_EQ(back[1].user_id, "u2");
  EXPECT_EQ(back[1].line, 3u);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace pfotgn::graph
