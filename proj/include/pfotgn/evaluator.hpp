#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfotgn/event_graph.hpp"
#include "pfotgn/market_data.hpp"
#include "pfotgn/tgn.hpp"

// Interaction-based ranking evaluation with recommendation metrics (HR,
// NDCG) and in-sample investment metrics (change in return and Sharpe of
// the user's portfolio after adding the top-k items).
namespace pfotgn::eval {

struct EvalConfig {
  std::size_t candidates = 100;  // sampled negatives per interaction
  std::vector<int> ks{3, 5};
  std::size_t batch_size = 200;
  market::SharpeConfig sharpe;
  std::uint64_t seed = 0;

  void validate() const;
};

// True item first, then up to n items of the batch the user has not touched
// up to and including t. Only the true item when nothing is eligible.
std::vector<ItemIndex> build_eval_candidates(const graph::PortfolioLedger& ledger, UserIndex user,
                                             Timestamp t, ItemIndex true_item,
                                             std::span<const ItemIndex> batch_items,
                                             std::size_t n, Rng& rng);

struct RankedList {
  std::vector<ItemIndex> items;
  std::vector<double> scores;
};

// Score descending, item ascending on ties.
RankedList rank(std::span<const ItemIndex> candidates, std::span<const double> scores);

// 1-based position of `item`, 0 if absent.
std::size_t rank_of(const RankedList& ranked, ItemIndex item);
double hit_at_k(const RankedList& ranked, ItemIndex true_item, int k);
double ndcg_at_k(const RankedList& ranked, ItemIndex true_item, int k);

struct InvestmentVerdict {
  double init_return = 0.0;
  double init_sharpe = 0.0;
  double after_return = 0.0;
  double after_sharpe = 0.0;
  double delta_return = 0.0;
  double delta_sharpe = 0.0;
  bool improved_return = false;
  bool improved_sharpe = false;
};

// Compares PO with PO + top_k on the trailing window at t. nullopt when PO is
// empty or either portfolio cannot be scored.
std::optional<InvestmentVerdict> investment_verdict(const market::MarketData& market,
                                                    std::span<const ItemIndex> portfolio,
                                                    std::span<const ItemIndex> top_k, Timestamp t,
                                                    const market::SharpeConfig& cfg);

struct InteractionVerdict {
  std::size_t event_index = 0;
  UserIndex user = 0;
  ItemIndex item = 0;
  Timestamp timestamp = 0;
  std::size_t candidate_count = 0;
  bool ranked = false;  // false: no eligible negatives
  std::size_t rank = 0;
  std::vector<double> hit;   // per k
  std::vector<double> ndcg;  // per k
  bool invested = false;     // investment verdict valid for every k
  std::vector<InvestmentVerdict> investment;  // per k when invested
};

struct Aggregate {
  std::vector<double> hr, ndcg, delta_return, delta_sharpe, p_return, p_sharpe;  // per k
};

struct MetricsReport {
  std::vector<int> ks;
  std::size_t total = 0;
  std::size_t ranking_evaluated = 0;
  std::size_t ranking_excluded = 0;
  std::size_t investment_evaluated = 0;
  std::size_t investment_excluded = 0;
  Aggregate per_interaction;
  Aggregate per_user;

  std::size_t k_index(int k) const;
  double hr(int k) const { return per_interaction.hr[k_index(k)]; }
  double p_sharpe(int k) const { return per_interaction.p_sharpe[k_index(k)]; }
  // Interactions excluded from ranking or investment, over the total.
  double excluded_fraction() const;
};

// Means over evaluated interactions; NaN where nothing was evaluated.
MetricsReport aggregate(const std::vector<InteractionVerdict>& verdicts, const std::vector<int>& ks);

// Produces candidate scores for each interaction of a batch.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<std::vector<double>> score_batch(
      std::span<const graph::InteractionEvent> batch,
      const std::vector<std::vector<ItemIndex>>& candidates) = 0;
  // Called once the batch has been scored; stateful models advance here.
  virtual void after_batch(std::span<const graph::InteractionEvent>) {}
};

// Non-personalized: one score per item for every interaction.
class StaticScorer : public Scorer {
 public:
  explicit StaticScorer(std::vector<double> item_scores) : scores_(std::move(item_scores)) {}
  // Scores that reproduce a fixed ranking: first item highest.
  static StaticScorer from_ranking(std::span<const ItemIndex> ranking, std::size_t item_count);

  std::vector<std::vector<double>> score_batch(
      std::span<const graph::InteractionEvent> batch,
      const std::vector<std::vector<ItemIndex>>& candidates) override;

 private:
  std::vector<double> scores_;
};

// Inner products of encoder embeddings at the interaction time, computed
// from pre-batch state; the batch is committed afterwards.
class ModelScorer : public Scorer {
 public:
  ModelScorer(const tgn::TemporalEncoder& encoder, tgn::TemporalState& state,
              const graph::NodeSpace& nodes)
      : encoder_(encoder), state_(state), nodes_(nodes) {}

  std::vector<std::vector<double>> score_batch(
      std::span<const graph::InteractionEvent> batch,
      const std::vector<std::vector<ItemIndex>>& candidates) override;
  void after_batch(std::span<const graph::InteractionEvent> batch) override;

 private:
  const tgn::TemporalEncoder& encoder_;
  tgn::TemporalState& state_;
  const graph::NodeSpace& nodes_;
  std::optional<tgn::BatchContext> ctx_;
};

// Replays events [begin, end) of the log through the encoder in batches.
void replay(const tgn::TemporalEncoder& encoder, tgn::TemporalState& state,
            const graph::EventLog& log, std::size_t begin, std::size_t end,
            std::size_t batch_size);

// Evaluates events [begin, end) of the log in time-ordered batches.
MetricsReport evaluate(const market::MarketData& market, const graph::EventLog& log,
                       const graph::PortfolioLedger& ledger, std::size_t begin, std::size_t end,
                       Scorer& scorer, const EvalConfig& cfg,
                       std::vector<InteractionVerdict>* verdicts = nullptr);

enum class BaselineKind { kReturn, kSharpe, kPopularity, kRandom };

std::string to_string(BaselineKind kind);
BaselineKind baseline_from_string(std::string_view name);

// Every item ordered best first. Return and Sharpe use the trailing window
// on the last training day (unscorable items last); popularity counts the
// training interactions; random is a seeded permutation. Ties by item index.
std::vector<ItemIndex> baseline_ranking(BaselineKind kind, const market::MarketData& market,
                                        std::span<const graph::InteractionEvent> train_events,
                                        Timestamp train_end, const market::SharpeConfig& cfg,
                                        std::uint64_t seed);

nlohmann::ordered_json report_to_json(const MetricsReport& report);
std::string report_to_text(const MetricsReport& report);

// Per-interaction table: one row per verdict.
void write_verdicts_csv(const std::filesystem::path& path,
                        const std::vector<InteractionVerdict>& verdicts,
                        const std::vector<int>& ks);

}  // namespace pfotgn::eval
