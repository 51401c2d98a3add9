#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pfotgn/sampler.hpp"
#include "pfotgn/scenario.hpp"
#include "test_util.hpp"

namespace pfotgn::sampler {
namespace {

using testing::ymd;

std::set<ItemIndex> as_set(const std::vector<ItemIndex>& v) { return {v.begin(), v.end()}; }

TEST(SampleCandidates, ExcludesPortfolioAndTrueItem) {
  Rng rng = make_rng(1, "cand");
  const std::vector<ItemIndex> batch{1, 2, 3};
  EXPECT_TRUE(sample_candidates(batch, std::vector<ItemIndex>{1, 3}, 2, 10, rng).empty());
  const std::vector<ItemIndex> five{0, 1, 2, 3, 4, 5};
  const auto all = sample_candidates(five, std::vector<ItemIndex>{2}, 5, 10, rng);
  EXPECT_EQ(as_set(all), (std::set<ItemIndex>{0, 1, 3, 4}));
}

TEST(SampleCandidates, ReplaysReferenceShuffle) {
  const std::vector<ItemIndex> batch{10, 11, 12, 13, 14};
  Rng rng = make_rng(7, "replay");
  Rng ref = rng;
  const auto got = sample_candidates(batch, {}, 99, 2, rng);
  std::vector<ItemIndex> pool = batch;
  for (std::size_t i = 0; i < 2; ++i) {
    boost::random::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(ref)]);
  }
  EXPECT_EQ(got, (std::vector<ItemIndex>{pool[0], pool[1]}));
}

TEST(SelectPairs, Examples) {
  const auto p = select_pairs({{1, 0.5}, {0, 0.1}, {2, -0.2}}, 1, 1);
  EXPECT_EQ(p.positives, (std::vector<ItemIndex>{1}));
  EXPECT_EQ(p.negatives, (std::vector<ItemIndex>{2}));
  const auto tie = select_pairs({{4, 1.0}, {2, 1.0}, {9, 1.0}, {5, 1.0}}, 2, 2);
  EXPECT_EQ(tie.positives, (std::vector<ItemIndex>{2, 4}));
  EXPECT_EQ(tie.negatives, (std::vector<ItemIndex>{5, 9}));
  EXPECT_TRUE(select_pairs({{3, 1.0}}, 3, 3).empty());
  EXPECT_TRUE(select_pairs({}, 3, 3).empty());
}

TEST(SelectPairs, ShrinksInProportion) {
  const auto p = select_pairs({{0, 3.0}, {1, 2.0}, {2, 1.0}, {3, 0.0}}, 3, 3);
  EXPECT_EQ(p.positives, (std::vector<ItemIndex>{0, 1}));
  EXPECT_EQ(p.negatives, (std::vector<ItemIndex>{2, 3}));
  const auto two = select_pairs({{0, 3.0}, {1, 2.0}}, 3, 3);
  EXPECT_EQ(two.positives.size(), 1u);
  EXPECT_EQ(two.negatives.size(), 1u);
}

TEST(SelectPairs, MonotoneInvarianceAndDisjointness) {
  Rng rng = make_rng(2, "monotone");
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = testing::uniform_index(rng, 0, 12);
    std::vector<ScoredCandidate> scored, transformed;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores so ties occur.
      const double s = std::round(testing::uniform(rng, -3, 3) * 2) / 2;
      scored.push_back({static_cast<ItemIndex>(i * 3), s});
      transformed.push_back({static_cast<ItemIndex>(i * 3), std::exp(2 * s) + 5});
    }
    const std::size_t mp = testing::uniform_index(rng, 1, 4), mn = testing::uniform_index(rng, 1, 4);
    const auto a = select_pairs(scored, mp, mn);
    const auto b = select_pairs(transformed, mp, mn);
    EXPECT_EQ(a.positives, b.positives);
    EXPECT_EQ(a.negatives, b.negatives);
    EXPECT_LE(a.positives.size(), mp);
    EXPECT_LE(a.negatives.size(), mn);
    for (ItemIndex p : a.positives) {
      EXPECT_EQ(std::count(a.negatives.begin(), a.negatives.end(), p), 0);
    }
  }
}

TEST(ScoreCandidate, SingletonAndTwoAssetOracle) {
  Rng rng = make_rng(3, "score");
  const auto series = testing::scoring_market(rng, 4, 60, ymd(2021, 1, 4));
  const market::MarketData md(series);
  const Timestamp t = start_of(series[0].observations[45].date) + 60;
  market::SharpeConfig cfg;
  const auto single = score_candidate(md, {}, 1, t, cfg);
  ASSERT_TRUE(single.has_value());
  EXPECT_NEAR(*single, oracle::portfolio_stats(series, {1}, t)->sharpe, 1e-12);
  const std::vector<ItemIndex> po{0};
  const auto two = score_candidate(md, po, 2, t, cfg);
  EXPECT_NEAR(*two, oracle::portfolio_stats(series, {0, 2}, t)->sharpe, 1e-12);
  // Flat asset alone has no volatility; the late asset is misaligned early on.
  EXPECT_FALSE(score_candidate(md, {}, *md.find("U000"), t, cfg).has_value());
  const Timestamp early = start_of(series[0].observations[22].date);
  EXPECT_FALSE(score_candidate(md, po, *md.find("V000"), early, cfg).has_value());
}

TEST(SamplePair, MatchesBruteForce) {
  Rng rng = make_rng(4, "sampler.oracle");
  for (int trial = 0; trial < 200; ++trial) {
    const auto series = testing::scoring_market(rng, 8, 70, ymd(2021, 1, 4));
    const market::MarketData md(series);
    const std::size_t n = series.size();
    const auto po = testing::random_subset(rng, n, testing::uniform_index(rng, 0, 3));
    const auto batch = testing::random_subset(rng, n, testing::uniform_index(rng, 1, n));
    const Timestamp t =
        start_of(series[0].observations[testing::uniform_index(rng, 1, 69)].date) + 3600;
    graph::PortfolioLedger ledger(1);
    for (ItemIndex i : po) ledger.record(0, i, t - 1);
    SamplerConfig cfg;
    cfg.candidates = n;
    cfg.positives = testing::uniform_index(rng, 1, 4);
    cfg.negatives = testing::uniform_index(rng, 1, 4);
    const ItemIndex truth = batch.front();
    const auto got = sample_pair(md, ledger, 0, truth, t, batch, cfg, rng);
    std::vector<ItemIndex> pool;
    for (ItemIndex b : batch) {
      if (b != truth && !std::binary_search(po.begin(), po.end(), b)) pool.push_back(b);
    }
    const auto want = oracle::sampler_pair(series, po, pool, t, cfg.positives, cfg.negatives);
    EXPECT_EQ(as_set(got.positives), want.positives);
    EXPECT_EQ(as_set(got.negatives), want.negatives);
  }
}

TEST(SamplePair, PrefersOtherSectors) {
  scenario::MarketSpec spec;
  spec.rho = 0.8;
  // Equal positive drift isolates the volatility effect: with a negative
  // realized mean, a lower volatility makes the Sharpe ratio worse.
  spec.drift_min = spec.drift_max = 0.4;
  spec.vol_min = spec.vol_max = 0.15;
  spec.seed = 9;
  const auto m = scenario::gen_prices(spec);
  const market::MarketData md(m.prices);
  Rng rng = make_rng(5, "sector.trials");
  market::SharpeConfig cfg;
  int wins = 0, trials = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t s = testing::uniform_index(rng, 0, spec.n_sectors - 1);
    std::vector<ItemIndex> same, other;
    for (std::size_t i = 0; i < m.sector.size(); ++i) {
      (m.sector[i] == s ? same : other).push_back(static_cast<ItemIndex>(i));
    }
    auto pick = [&](const std::vector<ItemIndex>& v) {
      return v[testing::uniform_index(rng, 0, v.size() - 1)];
    };
    const ItemIndex a = pick(same);
    ItemIndex b = pick(same);
    while (b == a) b = pick(same);
    ItemIndex c = pick(same);
    while (c == a || c == b) c = pick(same);
    std::vector<ItemIndex> po{a, b};
    std::sort(po.begin(), po.end());
    const ItemIndex d = pick(other);
    const Timestamp t =
        start_of(m.prices[0].observations[testing::uniform_index(rng, 40, 249)].date);
    const auto pair = select_pairs(
        score_candidates(md, po, std::vector<ItemIndex>{c, d}, t, cfg), 1, 1);
    if (pair.empty()) continue;
    ++trials;
    if (pair.positives.front() == d) ++wins;
  }
  ASSERT_GT(trials, 400);
  EXPECT_GT(static_cast<double>(wins) / trials, 0.6);
}

}  // namespace
}  // namespace pfotgn::sampler
