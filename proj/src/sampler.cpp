#include "pfotgn/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace pfotgn::sampler {

void SamplerConfig::validate() const {
  if (candidates == 0) throw ConfigError("sampler.candidates must be positive");
  if (positives == 0 || negatives == 0) {
    throw ConfigError("sampler.positives and sampler.negatives must be positive");
  }
  sharpe.validate();
}

std::vector<ItemIndex> sample_candidates(std::span<const ItemIndex> batch_items,
                                         std::span<const ItemIndex> portfolio,
                                         ItemIndex true_item, std::size_t m_c, Rng& rng) {
  std::vector<ItemIndex> pool;
  pool.reserve(batch_items.size());
  for (ItemIndex i : batch_items) {
    if (i != true_item && !std::binary_search(portfolio.begin(), portfolio.end(), i)) {
      pool.push_back(i);
    }
  }
  return sample_without_replacement(std::span<const ItemIndex>(pool), m_c, rng);
}

std::optional<double> score_candidate(const market::MarketData& market,
                                      std::span<const ItemIndex> portfolio, ItemIndex c,
                                      Timestamp t, const market::SharpeConfig& cfg) {
  std::vector<ItemIndex> members(portfolio.begin(), portfolio.end());
  members.push_back(c);
  try {
    return market.portfolio_stats(members, t, cfg).sharpe;
  } catch (const InsufficientHistoryError&) {
  } catch (const DegenerateVolatilityError&) {
  } catch (const AlignmentError&) {
  }
  return std::nullopt;
}

std::vector<ScoredCandidate> score_candidates(const market::MarketData& market,
                                              std::span<const ItemIndex> portfolio,
                                              std::span<const ItemIndex> candidates, Timestamp t,
                                              const market::SharpeConfig& cfg) {
  std::vector<ScoredCandidate> out;
  out.reserve(candidates.size());
  for (ItemIndex c : candidates) {
    if (auto s = score_candidate(market, portfolio, c, t, cfg)) out.push_back({c, *s});
  }
  return out;
}

ContrastivePair select_pairs(std::vector<ScoredCandidate> scored, std::size_t m_p,
                             std::size_t m_n) {
  ContrastivePair pair;
  const std::size_t n = scored.size();
  if (n <= 1 || m_p == 0 || m_n == 0) return pair;
  std::sort(scored.begin(), scored.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  });
  std::size_t take_p = m_p;
  std::size_t take_n = m_n;
  if (n < m_p + m_n) {
    take_p = std::max<std::size_t>(1, std::min(m_p, n * m_p / (m_p + m_n)));
    take_n = std::max<std::size_t>(1, std::min(m_n, n * m_n / (m_p + m_n)));
  }
  for (std::size_t i = 0; i < take_p; ++i) pair.positives.push_back(scored[i].item);
  for (std::size_t i = n - take_n; i < n; ++i) pair.negatives.push_back(scored[i].item);
  return pair;
}

ContrastivePair sample_pair(const market::MarketData& market,
                            const graph::PortfolioLedger& ledger, UserIndex user,
                            ItemIndex true_item, Timestamp t,
                            std::span<const ItemIndex> batch_items, const SamplerConfig& cfg,
                            Rng& rng) {
  const auto portfolio = ledger.portfolio_at(user, t);
  const auto candidates = sample_candidates(batch_items, portfolio, true_item, cfg.candidates, rng);
  return select_pairs(score_candidates(market, portfolio, candidates, t, cfg.sharpe),
                      cfg.positives, cfg.negatives);
}

}  // namespace pfotgn::sampler
