// Acceptance gate: every criterion at its stated tolerance. Each test prints
// one "criterion N: PASS|FAIL ..." line.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include <fmt/core.h>
#include <gtest/gtest.h>

#include "leakage.hpp"
#include "oracles.hpp"
#include "pfotgn/pipeline.hpp"
#include "test_util.hpp"

namespace pfotgn {
namespace {

using Clock = std::chrono::steady_clock;
using testing::ymd;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Lines also go to $PFOTGN_ACCEPTANCE_LOG when set, since ctest hides the
// output of passing tests.
bool report(int criterion, bool pass, const std::string& detail) {
  const std::string line =
      fmt::format("criterion {}: {} {}", criterion, pass ? "PASS" : "FAIL", detail);
  std::printf("%s\n", line.c_str());
  std::fflush(stdout);
  if (const char* path = std::getenv("PFOTGN_ACCEPTANCE_LOG")) {
    std::ofstream(path, std::ios::app) << line << '\n';
  }
  return pass;
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

RunConfig scenario_config(std::uint64_t seed) {
  RunConfig cfg;  // defaults are the shipped scenario
  cfg.seed = seed;
  return cfg;
}

struct ModelRun {
  double hr5 = 0.0;
  double psr5 = 0.0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  double chance5 = 0.0;  // mean of min(1, 5 / candidates) over ranked interactions
  std::string report_text;
  double seconds = 0.0;
};

ModelRun run_model(const pipeline::Dataset& data, const RunConfig& cfg) {
  const auto start = Clock::now();
  const auto trained = pipeline::train_model(data, cfg);
  std::vector<eval::InteractionVerdict> verdicts;
  const auto rep = pipeline::evaluate_model(data, cfg, trained.model, &verdicts);
  ModelRun run;
  run.hr5 = rep.hr(5);
  run.psr5 = rep.p_sharpe(5);
  run.first_loss = trained.result.log.front().mean_loss;
  run.final_loss = trained.result.log.back().mean_loss;
  double chance = 0.0;
  std::size_t ranked = 0;
  for (const auto& v : verdicts) {
    if (!v.ranked) continue;
    chance += std::min(1.0, 5.0 / static_cast<double>(v.candidate_count));
    ++ranked;
  }
  run.chance5 = chance / static_cast<double>(ranked);
  run.report_text = eval::report_to_text(rep);
  run.seconds = seconds_since(start);
  std::printf("  run seed %llu alpha %g k %zu: HR@5 %.4f P(SR)@5 %.4f loss %.4f -> %.4f "
              "(selected epoch %d, %.0f s)\n",
              static_cast<unsigned long long>(cfg.seed), cfg.train.alpha, cfg.train.bpr_negatives,
              run.hr5, run.psr5, run.first_loss, run.final_loss, trained.model.epoch, run.seconds);
  std::fflush(stdout);
  return run;
}

// Scenario runs shared by criteria 4, 5, 8 and 9.
struct ScenarioRuns {
  std::map<std::uint64_t, ModelRun> alpha0, alpha1;
  std::map<std::uint64_t, double> sharpe_hr5, sharpe_psr5;
  double seconds = 0.0;
};

const ScenarioRuns& scenario_runs() {
  static const ScenarioRuns runs = [] {
    ScenarioRuns out;
    const auto start = Clock::now();
    for (std::uint64_t seed : kSeeds) {
      RunConfig cfg = scenario_config(seed);
      pipeline::Dataset data;
      pipeline::synthetic_dataset(cfg, data);
      cfg.train.alpha = 0.0;
      out.alpha0[seed] = run_model(data, cfg);
      cfg.train.alpha = 1.0;
      out.alpha1[seed] = run_model(data, cfg);
      const auto base = pipeline::evaluate_baseline(data, cfg, eval::BaselineKind::kSharpe);
      out.sharpe_hr5[seed] = base.hr(5);
      out.sharpe_psr5[seed] = base.p_sharpe(5);
    }
    out.seconds = seconds_since(start);
    return out;
  }();
  return runs;
}

// Seed-1 runs at alpha 0.5 for each negative count.
const std::map<std::size_t, ModelRun>& negative_runs() {
  static const std::map<std::size_t, ModelRun> runs = [] {
    std::map<std::size_t, ModelRun> out;
    RunConfig cfg = scenario_config(kSeeds[0]);
    pipeline::Dataset data;
    pipeline::synthetic_dataset(cfg, data);
    cfg.train.alpha = 0.5;
    for (std::size_t k : {1, 3, 5, 10}) {
      cfg.train.bpr_negatives = k;
      out[k] = run_model(data, cfg);
    }
    return out;
  }();
  return runs;
}

template <typename F>
double mean_over_seeds(const std::map<std::uint64_t, F>& m, double F::*field) {
  double s = 0.0;
  for (const auto& [seed, v] : m) s += v.*field;
  return s / static_cast<double>(m.size());
}

double mean_over_seeds(const std::map<std::uint64_t, double>& m) {
  double s = 0.0;
  for (const auto& [seed, v] : m) s += v;
  return s / static_cast<double>(m.size());
}

TEST(Acceptance, C1GradientCorrectness) {
  const auto start = Clock::now();
  const auto rep = pipeline::gradcheck_toy(1, 8);
  const double secs = seconds_since(start);
  const bool pass = rep.result.max_relative_error < 1e-4 && secs < 60.0;
  EXPECT_TRUE(report(1, pass,
                     fmt::format("max relative error {:.3g} over {} coordinates in {:.2f} s",
                                 rep.result.max_relative_error, rep.result.coordinates, secs)));
}

TEST(Acceptance, C2SamplerOracle) {
  Rng rng = make_rng(2024, "acceptance.sampler");
  int agree = 0;
  const int instances = 1000;
  for (int trial = 0; trial < instances; ++trial) {
    const auto series = testing::scoring_market(rng, 10, 70, ymd(2021, 1, 4));
    const market::MarketData md(series);
    const std::size_t n = series.size();
    const auto po = testing::random_subset(rng, n, testing::uniform_index(rng, 0, 4));
    const auto batch = testing::random_subset(rng, n, testing::uniform_index(rng, 1, n));
    const Timestamp t =
        start_of(series[0].observations[testing::uniform_index(rng, 1, 69)].date) + 3600;
    graph::PortfolioLedger ledger(1);
    for (ItemIndex i : po) ledger.record(0, i, t - 1);
    sampler::SamplerConfig cfg;
    cfg.candidates = n;
    cfg.positives = testing::uniform_index(rng, 1, 4);
    cfg.negatives = testing::uniform_index(rng, 1, 4);
    const ItemIndex truth = batch.front();
    const auto got = sampler::sample_pair(md, ledger, 0, truth, t, batch, cfg, rng);
    std::vector<ItemIndex> pool;
    for (ItemIndex b : batch) {
      if (b != truth && !std::binary_search(po.begin(), po.end(), b)) pool.push_back(b);
    }
    const auto want = oracle::sampler_pair(series, po, pool, t, cfg.positives, cfg.negatives);
    agree += std::set<ItemIndex>(got.positives.begin(), got.positives.end()) == want.positives &&
             std::set<ItemIndex>(got.negatives.begin(), got.negatives.end()) == want.negatives;
  }
  EXPECT_TRUE(report(2, agree == instances,
                     fmt::format("{} / {} instances agree with the brute-force oracle", agree,
                                 instances)));
}

TEST(Acceptance, C3MetricOracles) {
  Rng rng = make_rng(2024, "acceptance.metrics");
  int metric_agree = 0;
  const int instances = 500;
  for (int trial = 0; trial < instances; ++trial) {
    const std::size_t n = testing::uniform_index(rng, 1, 10);
    const auto items = testing::random_subset(rng, 50, n);
    const auto order = sample_without_replacement(std::span<const ItemIndex>(items), n, rng);
    std::vector<double> scores(n);
    for (auto& s : scores) s = static_cast<double>(testing::uniform_index(rng, 0, 5));
    const ItemIndex truth = order[testing::uniform_index(rng, 0, n - 1)];
    const auto ranked = eval::rank(order, scores);
    const std::size_t r = oracle::enumerated_rank(order, scores, truth);
    bool ok = true;
    for (int k : {1, 3, 5, 10}) {
      ok = ok && eval::hit_at_k(ranked, truth, k) == oracle::hit(r, k) &&
           eval::ndcg_at_k(ranked, truth, k) == oracle::ndcg(r, k);
    }
    metric_agree += ok;
  }

  // Sharpe, dR and dSR against the direct formulas on raw prices.
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
  double worst = 0.0;
  int finance_checked = 0;
  for (int trial = 0; trial < instances; ++trial) {
    const auto series = testing::random_market(rng, 8, 60, ymd(2021, 1, 4));
    const market::MarketData md(series);
    const auto po = testing::random_subset(rng, 8, testing::uniform_index(rng, 1, 3));
    std::vector<ItemIndex> top;
    for (ItemIndex i : testing::random_subset(rng, 8, 5)) {
      if (!std::binary_search(po.begin(), po.end(), i)) top.push_back(i);
    }
    const Timestamp t = start_of(series[0].observations[testing::uniform_index(rng, 31, 59)].date);
    const auto v = eval::investment_verdict(md, po, top, t, market::SharpeConfig{});
    auto after = po;
    after.insert(after.end(), top.begin(), top.end());
    std::sort(after.begin(), after.end());
    const auto init = oracle::portfolio_stats(series, po, t);
    const auto next = oracle::portfolio_stats(series, after, t);
    if (!v || !init || !next) {
      worst = std::numeric_limits<double>::infinity();
      continue;
    }
    const auto single = md.portfolio_stats(std::vector<ItemIndex>{po.front()}, t, {});
    const auto single_oracle = oracle::portfolio_stats(series, {po.front()}, t);
    worst = std::max({worst, rel(single.sharpe, single_oracle->sharpe),
                      rel(v->init_sharpe, init->sharpe),
                      rel(v->delta_return, next->annualized_return - init->annualized_return),
                      rel(v->delta_sharpe, next->sharpe - init->sharpe)});
    ++finance_checked;
  }
  const bool pass = metric_agree == instances && worst <= 1e-12 && finance_checked == instances;
  EXPECT_TRUE(report(3, pass,
                     fmt::format("HR/NDCG exact on {} / {}; Sharpe, dR, dSR worst relative error "
                                 "{:.3g} on {} instances",
                                 metric_agree, instances, worst, finance_checked)));
}

TEST(Acceptance, C4TradeOff) {
  const auto& runs = scenario_runs();
  const double hr0 = mean_over_seeds(runs.alpha0, &ModelRun::hr5);
  const double hr1 = mean_over_seeds(runs.alpha1, &ModelRun::hr5);
  const double psr0 = mean_over_seeds(runs.alpha0, &ModelRun::psr5);
  const double psr1 = mean_over_seeds(runs.alpha1, &ModelRun::psr5);
  const bool pass = hr0 > hr1 && psr1 > psr0 && runs.seconds < 15 * 60;
  EXPECT_TRUE(report(4, pass,
                     fmt::format("HR@5 alpha0 {:.4f} > alpha1 {:.4f}; P(SR)@5 alpha1 {:.4f} > "
                                 "alpha0 {:.4f}; {:.0f} s",
                                 hr0, hr1, psr1, psr0, runs.seconds)));
}

TEST(Acceptance, C5SharpeBaselineTradeOff) {
  const auto& runs = scenario_runs();
  const double hr0 = mean_over_seeds(runs.alpha0, &ModelRun::hr5);
  const double psr0 = mean_over_seeds(runs.alpha0, &ModelRun::psr5);
  const double hr_b = mean_over_seeds(runs.sharpe_hr5);
  const double psr_b = mean_over_seeds(runs.sharpe_psr5);
  const bool pass = psr_b - psr0 > 0.02 && hr0 - hr_b > 0.02;
  EXPECT_TRUE(report(5, pass,
                     fmt::format("P(SR)@5 baseline {:.4f} vs alpha0 {:.4f}; HR@5 alpha0 {:.4f} vs "
                                 "baseline {:.4f}",
                                 psr_b, psr0, hr0, hr_b)));
}

TEST(Acceptance, C6NegativeCountRobustness) {
  const auto& runs = scenario_runs();
  const double gap = mean_over_seeds(runs.alpha0, &ModelRun::hr5) -
                     mean_over_seeds(runs.alpha1, &ModelRun::hr5);
  double lo = 1.0, hi = 0.0;
  std::string per_k;
  for (const auto& [k, run] : negative_runs()) {
    lo = std::min(lo, run.hr5);
    hi = std::max(hi, run.hr5);
    per_k += fmt::format(" k={}:{:.4f}", k, run.hr5);
  }
  const bool pass = hi - lo < std::abs(gap);
  EXPECT_TRUE(report(6, pass,
                     fmt::format("HR@5 range across k {:.4f} < alpha gap {:.4f};{}", hi - lo,
                                 std::abs(gap), per_k)));
}

TEST(Acceptance, C7TemporalLeakage) {
  const RunConfig cfg = scenario_config(kSeeds[0]);
  const auto raw = pipeline::generate(cfg);
  const auto prepared = pipeline::prepare(raw, cfg);
  const market::MarketData md(raw.prices);
  const auto log = graph::ingest_events(prepared.events, md);
  const auto& split = prepared.splits.front();
  const auto ranges = train::split_ranges(log, split);
  const auto scale = tgn::TimeScale::from_events(
      std::span(log.events).subspan(ranges.begin, ranges.train_end - ranges.begin), log.nodes);
  const tgn::TemporalEncoder encoder(cfg.model, scale, cfg.seed);
  Rng rng = make_rng(cfg.seed, "acceptance.leakage");
  const Timestamp first = prepared.events.front().timestamp;
  const Timestamp last = prepared.events.back().timestamp;
  int equal = 0;
  const int probes = 100;
  for (int p = 0; p < probes; ++p) {
    const auto t = first + static_cast<Timestamp>(
                               testing::uniform_index(rng, 1, static_cast<std::size_t>(last - first)));
    equal += testing::leakage_free_at(encoder, md, prepared.events, split.start, t,
                                      cfg.eval.batch_size);
  }
  EXPECT_TRUE(report(7, equal == probes,
                     fmt::format("{} / {} probe times give identical embeddings", equal, probes)));
}

TEST(Acceptance, C8TrainingSanity) {
  const auto& runs = scenario_runs();
  bool pass = true;
  std::string detail;
  for (const auto& [seed, run] : runs.alpha0) {
    pass = pass && run.final_loss < run.first_loss;
    detail += fmt::format(" alpha0 seed {}: {:.4f} -> {:.4f};", seed, run.first_loss, run.final_loss);
  }
  const auto& half = negative_runs().at(3);
  pass = pass && half.final_loss < half.first_loss;
  detail += fmt::format(" alpha0.5 seed 1: {:.4f} -> {:.4f}", half.first_loss, half.final_loss);
  EXPECT_TRUE(report(8, pass, "final < first epoch loss:" + detail));
}

TEST(Acceptance, C9PreferenceLearning) {
  const auto& runs = scenario_runs();
  const double hr0 = mean_over_seeds(runs.alpha0, &ModelRun::hr5);
  const double chance = mean_over_seeds(runs.alpha0, &ModelRun::chance5);
  const double threshold = 3.0 * 5.0 / 101.0;
  // The batch pools hold fewer than 100 negatives, so also beat 3x the
  // chance level of the candidate lists actually used.
  const bool pass = hr0 >= threshold && hr0 >= 3.0 * chance;
  EXPECT_TRUE(report(9, pass,
                     fmt::format("HR@5 alpha0 {:.4f} >= 3 x 5/101 = {:.4f} and >= 3 x realized "
                                 "chance {:.4f}",
                                 hr0, threshold, chance)));
}

TEST(Acceptance, C10Determinism) {
  const auto& runs = scenario_runs();
  RunConfig cfg = scenario_config(kSeeds[0]);
  cfg.train.alpha = 0.0;
  pipeline::Dataset data;
  pipeline::synthetic_dataset(cfg, data);
  const auto again = run_model(data, cfg);
  const bool pass = again.report_text == runs.alpha0.at(kSeeds[0]).report_text;
  EXPECT_TRUE(report(10, pass, "two seed-1 pipeline runs give identical 12-digit reports"));
}

}  // namespace
}  // namespace pfotgn
