#pragma once

#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfotgn/autodiff.hpp"
#include "pfotgn/evaluator.hpp"
#include "pfotgn/event_graph.hpp"
#include "pfotgn/market_data.hpp"
#include "pfotgn/sampler.hpp"
#include "pfotgn/tgn.hpp"

namespace pfotgn::train {

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 200;
  std::size_t bpr_negatives = 3;  // k
  double alpha = 0.5;
  double temperature = 0.1;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  // Standard NT-Xent (positives also in the denominator) instead of the
  // positive-over-negative ratio.
  bool canonical_ntxent = false;
  sampler::SamplerConfig sampler;

  void validate() const;
};

// Up to k items of the batch the user has not touched up to and including t.
std::vector<ItemIndex> sample_bpr_negatives(const graph::PortfolioLedger& ledger, UserIndex user,
                                            Timestamp t, std::span<const ItemIndex> batch_items,
                                            std::size_t k, Rng& rng);

// Single-example losses on embedding vectors.
ad::Tensor bpr_loss(const ad::Tensor& z_u, const ad::Tensor& z_o,
                    const std::vector<ad::Tensor>& z_negatives);
ad::Tensor contrastive_loss(const ad::Tensor& z_u, const std::vector<ad::Tensor>& z_positives,
                            const std::vector<ad::Tensor>& z_negatives, double temperature,
                            bool canonical = false);
ad::Tensor joint_loss(const ad::Tensor& l_bpr, const ad::Tensor& l_cl, double alpha);

// Rows of an embedding matrix taking part in one training example.
struct ExampleRows {
  long user = 0;
  long positive = 0;
  std::vector<long> negatives;       // BPR negatives
  std::vector<long> pair_positives;  // P
  std::vector<long> pair_negatives;  // N
};

struct BatchLoss {
  ad::Tensor total;  // mean over examples of the joint loss
  double bpr_sum = 0.0;
  double cl_sum = 0.0;
  std::size_t bpr_terms = 0;
  std::size_t cl_terms = 0;
};

// Vectorized batch objective. Examples without negatives (or without a
// contrastive pair) contribute nothing for that term but still count in the
// batch mean.
BatchLoss batch_loss(const ad::Tensor& z, const std::vector<ExampleRows>& examples, double alpha,
                     double temperature, bool canonical = false);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_bpr = 0.0;  // NaN when the term was not computed
  double mean_cl = 0.0;
  std::size_t examples = 0;
  double seconds = 0.0;
};

struct EpochMetrics {
  int epoch = 0;
  double hr5 = 0.0;
  double psr5 = 0.0;
};

// Competition ranks per metric (1 = best, NaN worst, ties share the better
// rank); minimal mean rank wins, earlier epoch on ties. Returns an index.
std::size_t select_model(const std::vector<EpochMetrics>& metrics);

struct TrainingData {
  const market::MarketData* market = nullptr;
  const graph::EventLog* log = nullptr;
  const graph::PortfolioLedger* ledger = nullptr;
  graph::RollingSplit split;
};

struct Checkpoint {
  int epoch = 0;
  nlohmann::ordered_json params;
  nlohmann::ordered_json memory;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::vector<Checkpoint> checkpoints;  // index 0 is the untrained model
  std::vector<EpochMetrics> validation;  // one per trained epoch
  std::size_t selected = 0;              // index into checkpoints
  tgn::TimeScale time_scale;
};

// Event index ranges of the split's three windows.
struct SplitRanges {
  std::size_t begin = 0, train_end = 0, validation_end = 0, end = 0;
};
SplitRanges split_ranges(const graph::EventLog& log, const graph::RollingSplit& split);

class Trainer {
 public:
  Trainer(const TrainingData& data, const TrainConfig& cfg, const tgn::EncoderConfig& encoder_cfg,
          const eval::EvalConfig& validation_cfg);

  // Trains for cfg.epochs, evaluating every epoch on validation, and loads
  // the selected checkpoint into the encoder before returning.
  TrainResult run(const std::function<void(const EpochLog&)>& on_epoch = {});

  // One chronological pass over the training window; returns the epoch log.
  EpochLog train_epoch(int epoch);

  tgn::TemporalEncoder& encoder() { return encoder_; }
  tgn::TemporalState& state() { return state_; }
  const SplitRanges& ranges() const { return ranges_; }

 private:
  TrainingData data_;
  TrainConfig cfg_;
  eval::EvalConfig validation_cfg_;
  SplitRanges ranges_;
  tgn::TemporalEncoder encoder_;
  tgn::TemporalState state_;
};

// Restores a snapshot into `state`: memory from the checkpoint, neighbor
// history rebuilt from events [begin, end) of the log.
void restore_state(const Checkpoint& checkpoint, const graph::EventLog& log, std::size_t begin,
                   std::size_t end, tgn::TemporalState& state);

}  // namespace pfotgn::train
