#include "pfotgn/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/core.h>

#include "pfotgn/csv.hpp"

namespace pfotgn::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Upper bound on queries embedded at once; keeps the attention inputs small.
constexpr std::size_t kQueryChunk = 2048;

std::vector<ItemIndex> unique_items(std::span<const graph::InteractionEvent> batch) {
  std::vector<ItemIndex> items;
  items.reserve(batch.size());
  for (const auto& e : batch) items.push_back(e.item);
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

double mean_or_nan(double sum, std::size_t n) {
  return n == 0 ? kNaN : sum / static_cast<double>(n);
}

void resize(Aggregate& a, std::size_t n) {
  for (auto* v : {&a.hr, &a.ndcg, &a.delta_return, &a.delta_sharpe, &a.p_return, &a.p_sharpe}) {
    v->assign(n, kNaN);
  }
}

nlohmann::ordered_json number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

nlohmann::ordered_json aggregate_json(const Aggregate& a, const std::vector<int>& ks) {
  nlohmann::ordered_json out;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const int k = ks[i];
    out[fmt::format("HR@{}", k)] = number(a.hr[i]);
    out[fmt::format("NDCG@{}", k)] = number(a.ndcg[i]);
    out[fmt::format("dR@{}", k)] = number(a.delta_return[i]);
    out[fmt::format("dSR@{}", k)] = number(a.delta_sharpe[i]);
    out[fmt::format("P(R)@{}", k)] = number(a.p_return[i]);
    out[fmt::format("P(SR)@{}", k)] = number(a.p_sharpe[i]);
  }
  return out;
}

}  // namespace

void EvalConfig::validate() const {
  if (candidates == 0) throw ConfigError("eval.candidates must be positive");
  if (batch_size == 0) throw ConfigError("eval.batch_size must be positive");
  if (ks.empty()) throw ConfigError("eval needs at least one cutoff k");
  for (int k : ks) {
    if (k <= 0) throw ConfigError("cutoffs must be positive");
  }
  sharpe.validate();
}

std::vector<ItemIndex> build_eval_candidates(const graph::PortfolioLedger& ledger, UserIndex user,
                                             Timestamp t, ItemIndex true_item,
                                             std::span<const ItemIndex> batch_items,
                                             std::size_t n, Rng& rng) {
  const auto touched = ledger.interacted_through(user, t);
  std::vector<ItemIndex> pool;
  pool.reserve(batch_items.size());
  for (ItemIndex i : batch_items) {
    if (i != true_item && !std::binary_search(touched.begin(), touched.end(), i)) {
      pool.push_back(i);
    }
  }
  std::vector<ItemIndex> out{true_item};
  const auto negatives = sample_without_replacement(std::span<const ItemIndex>(pool), n, rng);
  out.insert(out.end(), negatives.begin(), negatives.end());
  return out;
}

RankedList rank(std::span<const ItemIndex> candidates, std::span<const double> scores) {
  if (candidates.size() != scores.size()) throw ShapeError("rank: one score per candidate");
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a] < candidates[b];
  });
  RankedList out;
  for (std::size_t i : order) {
    out.items.push_back(candidates[i]);
    out.scores.push_back(scores[i]);
  }
  return out;
}

std::size_t rank_of(const RankedList& ranked, ItemIndex item) {
  auto it = std::find(ranked.items.begin(), ranked.items.end(), item);
  return it == ranked.items.end() ? 0 : static_cast<std::size_t>(it - ranked.items.begin()) + 1;
}

double hit_at_k(const RankedList& ranked, ItemIndex true_item, int k) {
  const std::size_t r = rank_of(ranked, true_item);
  return r != 0 && r <= static_cast<std::size_t>(k) ? 1.0 : 0.0;
}

double ndcg_at_k(const RankedList& ranked, ItemIndex true_item, int k) {
  const std::size_t r = rank_of(ranked, true_item);
  if (r == 0 || r > static_cast<std::size_t>(k)) return 0.0;
  return 1.0 / std::log2(static_cast<double>(r) + 1.0);
}

std::optional<InvestmentVerdict> investment_verdict(const market::MarketData& market,
                                                    std::span<const ItemIndex> portfolio,
                                                    std::span<const ItemIndex> top_k, Timestamp t,
                                                    const market::SharpeConfig& cfg) {
  if (portfolio.empty()) return std::nullopt;
  std::vector<ItemIndex> after(portfolio.begin(), portfolio.end());
  after.insert(after.end(), top_k.begin(), top_k.end());
  std::sort(after.begin(), after.end());
  after.erase(std::unique(after.begin(), after.end()), after.end());
  try {
    const auto init = market.portfolio_stats(portfolio, t, cfg);
    const auto next = market.portfolio_stats(after, t, cfg);
    InvestmentVerdict v;
    v.init_return = init.annualized_return;
    v.init_sharpe = init.sharpe;
    v.after_return = next.annualized_return;
    v.after_sharpe = next.sharpe;
    v.delta_return = next.annualized_return - init.annualized_return;
    v.delta_sharpe = next.sharpe - init.sharpe;
    v.improved_return = next.annualized_return > init.annualized_return;
    v.improved_sharpe = next.sharpe > init.sharpe;
    return v;
  } catch (const InsufficientHistoryError&) {
  } catch (const DegenerateVolatilityError&) {
  } catch (const AlignmentError&) {
  }
  return std::nullopt;
}

std::size_t MetricsReport::k_index(int k) const {
  auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw ConfigError(fmt::format("report has no cutoff k = {}", k));
  return static_cast<std::size_t>(it - ks.begin());
}

double MetricsReport::excluded_fraction() const {
  if (total == 0) return 0.0;
  return static_cast<double>(total - investment_evaluated) / static_cast<double>(total);
}

MetricsReport aggregate(const std::vector<InteractionVerdict>& verdicts, const std::vector<int>& ks) {
  MetricsReport report;
  report.ks = ks;
  report.total = verdicts.size();
  const std::size_t nk = ks.size();
  resize(report.per_interaction, nk);
  resize(report.per_user, nk);

  struct Sums {
    std::vector<double> hr, ndcg, dr, dsr, pr, psr;
    std::size_t ranked = 0, invested = 0;
    explicit Sums(std::size_t n) : hr(n), ndcg(n), dr(n), dsr(n), pr(n), psr(n) {}
    void add(const InteractionVerdict& v) {
      if (!v.ranked) return;
      ++ranked;
      for (std::size_t i = 0; i < hr.size(); ++i) {
        hr[i] += v.hit[i];
        ndcg[i] += v.ndcg[i];
      }
      if (!v.invested) return;
      ++invested;
      for (std::size_t i = 0; i < hr.size(); ++i) {
        dr[i] += v.investment[i].delta_return;
        dsr[i] += v.investment[i].delta_sharpe;
        pr[i] += v.investment[i].improved_return ? 1.0 : 0.0;
        psr[i] += v.investment[i].improved_sharpe ? 1.0 : 0.0;
      }
    }
  };

  Sums all(nk);
  std::map<UserIndex, Sums> by_user;
  for (const auto& v : verdicts) {
    all.add(v);
    by_user.try_emplace(v.user, nk).first->second.add(v);
  }
  report.ranking_evaluated = all.ranked;
  report.ranking_excluded = report.total - all.ranked;
  report.investment_evaluated = all.invested;
  report.investment_excluded = report.total - all.invested;

  auto& pi = report.per_interaction;
  for (std::size_t i = 0; i < nk; ++i) {
    pi.hr[i] = mean_or_nan(all.hr[i], all.ranked);
    pi.ndcg[i] = mean_or_nan(all.ndcg[i], all.ranked);
    pi.delta_return[i] = mean_or_nan(all.dr[i], all.invested);
    pi.delta_sharpe[i] = mean_or_nan(all.dsr[i], all.invested);
    pi.p_return[i] = mean_or_nan(all.pr[i], all.invested);
    pi.p_sharpe[i] = mean_or_nan(all.psr[i], all.invested);
  }

  Sums user_means(nk);
  for (const auto& [user, s] : by_user) {
    if (s.ranked == 0) continue;
    ++user_means.ranked;
    for (std::size_t i = 0; i < nk; ++i) {
      user_means.hr[i] += s.hr[i] / static_cast<double>(s.ranked);
      user_means.ndcg[i] += s.ndcg[i] / static_cast<double>(s.ranked);
    }
    if (s.invested == 0) continue;
    ++user_means.invested;
    for (std::size_t i = 0; i < nk; ++i) {
      const auto n = static_cast<double>(s.invested);
      user_means.dr[i] += s.dr[i] / n;
      user_means.dsr[i] += s.dsr[i] / n;
      user_means.pr[i] += s.pr[i] / n;
      user_means.psr[i] += s.psr[i] / n;
    }
  }
  auto& pu = report.per_user;
  for (std::size_t i = 0; i < nk; ++i) {
    pu.hr[i] = mean_or_nan(user_means.hr[i], user_means.ranked);
    pu.ndcg[i] = mean_or_nan(user_means.ndcg[i], user_means.ranked);
    pu.delta_return[i] = mean_or_nan(user_means.dr[i], user_means.invested);
    pu.delta_sharpe[i] = mean_or_nan(user_means.dsr[i], user_means.invested);
    pu.p_return[i] = mean_or_nan(user_means.pr[i], user_means.invested);
    pu.p_sharpe[i] = mean_or_nan(user_means.psr[i], user_means.invested);
  }
  return report;
}

StaticScorer StaticScorer::from_ranking(std::span<const ItemIndex> ranking, std::size_t item_count) {
  std::vector<double> scores(item_count, -static_cast<double>(item_count));
  for (std::size_t pos = 0; pos < ranking.size(); ++pos) {
    scores.at(ranking[pos]) = -static_cast<double>(pos);
  }
  return StaticScorer(std::move(scores));
}

std::vector<std::vector<double>> StaticScorer::score_batch(
    std::span<const graph::InteractionEvent>, const std::vector<std::vector<ItemIndex>>& candidates) {
  std::vector<std::vector<double>> out;
  out.reserve(candidates.size());
  for (const auto& list : candidates) {
    std::vector<double> s;
    s.reserve(list.size());
    for (ItemIndex i : list) s.push_back(scores_.at(i));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<double>> ModelScorer::score_batch(
    std::span<const graph::InteractionEvent> batch,
    const std::vector<std::vector<ItemIndex>>& candidates) {
  ad::NoGradScope no_grad;
  ctx_ = encoder_.begin_batch(state_);

  std::map<std::pair<NodeIndex, Timestamp>, std::size_t> row;
  std::vector<tgn::Query> queries;
  auto row_for = [&](NodeIndex node, Timestamp t) {
    auto [it, inserted] = row.try_emplace({node, t}, queries.size());
    if (inserted) queries.push_back({node, t});
    return it->second;
  };
  std::vector<std::size_t> user_rows(batch.size());
  std::vector<std::vector<std::size_t>> item_rows(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    user_rows[i] = row_for(nodes_.user_node(batch[i].user), batch[i].timestamp);
    for (ItemIndex c : candidates[i]) {
      item_rows[i].push_back(row_for(nodes_.item_node(c), batch[i].timestamp));
    }
  }

  const auto width = static_cast<std::size_t>(encoder_.config().embedding_dim);
  std::vector<double> z;
  z.reserve(queries.size() * width);
  for (std::size_t begin = 0; begin < queries.size(); begin += kQueryChunk) {
    const std::size_t end = std::min(queries.size(), begin + kQueryChunk);
    std::vector<tgn::Query> chunk(queries.begin() + static_cast<long>(begin),
                                  queries.begin() + static_cast<long>(end));
    const auto emb = encoder_.embed(*ctx_, chunk);
    z.insert(z.end(), emb.value().begin(), emb.value().end());
  }

  std::vector<std::vector<double>> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double* u = z.data() + user_rows[i] * width;
    for (std::size_t r : item_rows[i]) {
      const double* v = z.data() + r * width;
      double s = 0.0;
      for (std::size_t c = 0; c < width; ++c) s += u[c] * v[c];
      out[i].push_back(s);
    }
  }
  return out;
}

void ModelScorer::after_batch(std::span<const graph::InteractionEvent> batch) {
  if (!ctx_) throw StateError("after_batch without a scored batch");
  encoder_.commit_batch(state_, *ctx_, batch, nodes_);
  ctx_.reset();
}

void replay(const tgn::TemporalEncoder& encoder, tgn::TemporalState& state,
            const graph::EventLog& log, std::size_t begin, std::size_t end,
            std::size_t batch_size) {
  for (std::size_t b = begin; b < end; b += batch_size) {
    const std::size_t e = std::min(end, b + batch_size);
    encoder.advance(state, std::span(log.events).subspan(b, e - b), log.nodes);
  }
}

MetricsReport evaluate(const market::MarketData& market, const graph::EventLog& log,
                       const graph::PortfolioLedger& ledger, std::size_t begin, std::size_t end,
                       Scorer& scorer, const EvalConfig& cfg,
                       std::vector<InteractionVerdict>* verdicts) {
  cfg.validate();
  std::vector<InteractionVerdict> all;
  all.reserve(end - begin);
  for (std::size_t b = begin; b < end; b += cfg.batch_size) {
    const std::size_t e = std::min(end, b + cfg.batch_size);
    const auto batch = std::span(log.events).subspan(b, e - b);
    const auto items = unique_items(batch);
    std::vector<std::vector<ItemIndex>> candidates;
    candidates.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Rng rng = make_rng(cfg.seed, "eval", b + i);
      candidates.push_back(build_eval_candidates(ledger, batch[i].user, batch[i].timestamp,
                                                 batch[i].item, items, cfg.candidates, rng));
    }
    const auto scores = scorer.score_batch(batch, candidates);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& ev = batch[i];
      InteractionVerdict v;
      v.event_index = b + i;
      v.user = ev.user;
      v.item = ev.item;
      v.timestamp = ev.timestamp;
      v.candidate_count = candidates[i].size();
      if (candidates[i].size() >= 2) {
        v.ranked = true;
        const RankedList ranked = rank(candidates[i], scores[i]);
        v.rank = rank_of(ranked, ev.item);
        const auto portfolio = ledger.portfolio_at(ev.user, ev.timestamp);
        bool invested = !portfolio.empty();
        for (int k : cfg.ks) {
          v.hit.push_back(hit_at_k(ranked, ev.item, k));
          v.ndcg.push_back(ndcg_at_k(ranked, ev.item, k));
          if (!invested) continue;
          const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), ranked.items.size());
          const auto verdict = investment_verdict(
              market, portfolio, std::span(ranked.items).first(take), ev.timestamp, cfg.sharpe);
          if (verdict) {
            v.investment.push_back(*verdict);
          } else {
            invested = false;
          }
        }
        v.invested = invested;
        if (!invested) v.investment.clear();
      }
      all.push_back(std::move(v));
    }
    scorer.after_batch(batch);
  }
  MetricsReport report = aggregate(all, cfg.ks);
  if (verdicts != nullptr) *verdicts = std::move(all);
  return report;
}

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kReturn:
      return "return";
    case BaselineKind::kSharpe:
      return "sharpe";
    case BaselineKind::kPopularity:
      return "popularity";
    case BaselineKind::kRandom:
      return "random";
  }
  return "?";
}

BaselineKind baseline_from_string(std::string_view name) {
  for (auto k : {BaselineKind::kReturn, BaselineKind::kSharpe, BaselineKind::kPopularity,
                 BaselineKind::kRandom}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError(fmt::format("unknown baseline '{}'", name));
}

std::vector<ItemIndex> baseline_ranking(BaselineKind kind, const market::MarketData& market,
                                        std::span<const graph::InteractionEvent> train_events,
                                        Timestamp train_end, const market::SharpeConfig& cfg,
                                        std::uint64_t seed) {
  const std::size_t n = market.asset_count();
  std::vector<ItemIndex> items(n);
  std::iota(items.begin(), items.end(), 0);
  const double worst = -std::numeric_limits<double>::infinity();
  std::vector<double> score(n, worst);
  const Timestamp last_day = train_end - 1;
  switch (kind) {
    case BaselineKind::kReturn:
    case BaselineKind::kSharpe:
      for (ItemIndex i = 0; i < n; ++i) {
        const ItemIndex one[] = {i};
        try {
          const auto stats = market.portfolio_stats(one, last_day, cfg);
          score[i] = kind == BaselineKind::kReturn ? stats.annualized_return : stats.sharpe;
        } catch (const InsufficientHistoryError&) {
        } catch (const DegenerateVolatilityError&) {
        }
      }
      break;
    case BaselineKind::kPopularity:
      std::fill(score.begin(), score.end(), 0.0);
      for (const auto& e : train_events) score[e.item] += 1.0;
      break;
    case BaselineKind::kRandom: {
      Rng rng = make_rng(seed, "baseline.random");
      const auto order = sample_without_replacement(std::span<const ItemIndex>(items), n, rng);
      for (std::size_t pos = 0; pos < n; ++pos) score[order[pos]] = -static_cast<double>(pos);
      break;
    }
  }
  std::stable_sort(items.begin(), items.end(),
                   [&](ItemIndex a, ItemIndex b) { return score[a] > score[b]; });
  return items;
}

nlohmann::ordered_json report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json doc;
  doc["ks"] = report.ks;
  doc["counts"] = {{"total", report.total},
                   {"ranking_evaluated", report.ranking_evaluated},
                   {"ranking_excluded", report.ranking_excluded},
                   {"investment_evaluated", report.investment_evaluated},
                   {"investment_excluded", report.investment_excluded}};
  doc["per_interaction"] = aggregate_json(report.per_interaction, report.ks);
  doc["per_user"] = aggregate_json(report.per_user, report.ks);
  return doc;
}

std::string report_to_text(const MetricsReport& report) {
  std::string out;
  out += fmt::format("interactions {}\n", report.total);
  out += fmt::format("ranking evaluated {} excluded {}\n", report.ranking_evaluated,
                     report.ranking_excluded);
  out += fmt::format("investment evaluated {} excluded {}\n", report.investment_evaluated,
                     report.investment_excluded);
  for (const auto& [label, agg] : {std::pair{"per-interaction", &report.per_interaction},
                                   std::pair{"per-user", &report.per_user}}) {
    out += fmt::format("[{}]\n", label);
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      const int k = report.ks[i];
      out += fmt::format("HR@{0} {1}\nNDCG@{0} {2}\ndR@{0} {3}\ndSR@{0} {4}\nP(R)@{0} {5}\nP(SR)@{0} {6}\n",
                         k, format_number(agg->hr[i]), format_number(agg->ndcg[i]),
                         format_number(agg->delta_return[i]), format_number(agg->delta_sharpe[i]),
                         format_number(agg->p_return[i]), format_number(agg->p_sharpe[i]));
    }
  }
  return out;
}

void write_verdicts_csv(const std::filesystem::path& path,
                        const std::vector<InteractionVerdict>& verdicts,
                        const std::vector<int>& ks) {
  auto out = csv::open_for_write(path);
  out << "event_index,user,item,timestamp,candidates,rank";
  for (int k : ks) {
    out << fmt::format(",hit@{0},ndcg@{0},init_return@{0},init_sharpe@{0},after_return@{0},after_sharpe@{0}", k);
  }
  out << '\n';
  for (const auto& v : verdicts) {
    out << v.event_index << ',' << v.user << ',' << v.item << ',' << v.timestamp << ','
        << v.candidate_count << ',' << (v.ranked ? std::to_string(v.rank) : "");
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (v.ranked) {
        out << ',' << format_number(v.hit[i]) << ',' << format_number(v.ndcg[i]);
      } else {
        out << ",,";
      }
      if (v.invested) {
        const auto& inv = v.investment[i];
        out << ',' << format_number(inv.init_return) << ',' << format_number(inv.init_sharpe)
            << ',' << format_number(inv.after_return) << ',' << format_number(inv.after_sharpe);
      } else {
        out << ",,,,";
      }
    }
    out << '\n';
  }
}

}  // namespace pfotgn::eval
