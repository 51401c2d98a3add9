#pragma once

#include <optional>
#include <span>
#include <vector>

#include "pfotgn/common.hpp"
#include "pfotgn/event_graph.hpp"
#include "pfotgn/market_data.hpp"

// Diversification-enhancing sampling: candidates outside the user's
// portfolio are scored by the Sharpe ratio of the portfolio they would form,
// the best become potential positives and the worst negatives.
namespace pfotgn::sampler {

struct SamplerConfig {
  std::size_t candidates = 10;  // m_c
  std::size_t positives = 3;    // m_p
  std::size_t negatives = 3;    // m_n
  market::SharpeConfig sharpe;

  void validate() const;
};

struct ScoredCandidate {
  ItemIndex item = 0;
  double score = 0.0;
};

struct ContrastivePair {
  std::vector<ItemIndex> positives;
  std::vector<ItemIndex> negatives;

  bool empty() const { return positives.empty() || negatives.empty(); }
};

// Up to m_c items drawn uniformly without replacement from
// batch_items - portfolio - {true_item}. Both inputs sorted ascending.
std::vector<ItemIndex> sample_candidates(std::span<const ItemIndex> batch_items,
                                         std::span<const ItemIndex> portfolio,
                                         ItemIndex true_item, std::size_t m_c, Rng& rng);

// Sharpe ratio of the equal-weight portfolio + {c} on the trailing window at
// t; nullopt when the window is too short, misaligned or has no volatility.
std::optional<double> score_candidate(const market::MarketData& market,
                                      std::span<const ItemIndex> portfolio, ItemIndex c,
                                      Timestamp t, const market::SharpeConfig& cfg);

// Scorable candidates only, in input order.
std::vector<ScoredCandidate> score_candidates(const market::MarketData& market,
                                              std::span<const ItemIndex> portfolio,
                                              std::span<const ItemIndex> candidates, Timestamp t,
                                              const market::SharpeConfig& cfg);

// Sorted by score descending then item ascending; P takes the head, N the
// tail. With fewer than m_p + m_n scored candidates both sizes shrink in
// proportion, keeping at least one each while two or more are available.
ContrastivePair select_pairs(std::vector<ScoredCandidate> scored, std::size_t m_p,
                             std::size_t m_n);

// The whole chain for one interaction (u, true_item, t).
ContrastivePair sample_pair(const market::MarketData& market,
                            const graph::PortfolioLedger& ledger, UserIndex user,
                            ItemIndex true_item, Timestamp t,
                            std::span<const ItemIndex> batch_items, const SamplerConfig& cfg,
                            Rng& rng);

}  // namespace pfotgn::sampler
