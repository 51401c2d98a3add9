#pragma once

#include <map>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfotgn/autodiff.hpp"
#include "pfotgn/event_graph.hpp"

// Temporal graph encoder: per-node memory updated by a GRU from interaction
// messages, and time-encoded multi-head attention over recent neighbors.
namespace pfotgn::tgn {

struct EncoderConfig {
  int memory_dim = 32;
  int embedding_dim = 32;  // output width of every attention layer
  int time_dim = 8;
  int layers = 1;
  int neighbors = 10;
  int heads = 2;

  int message_dim() const { return 2 * memory_dim + 1 + static_cast<int>(graph::kEdgeFeatureWidth); }
  void validate() const;
};

// Unit in which time gaps enter the model: Delta t / seconds_per_unit.
struct TimeScale {
  double seconds_per_unit = 1.0;

  double scaled(Timestamp from, Timestamp to) const {
    return static_cast<double>(to - from) / seconds_per_unit;
  }
  // Mean gap between consecutive events of the same node, pooled over all
  // nodes. Falls back to 1 second when no node has two events.
  static TimeScale from_events(std::span<const graph::InteractionEvent> events,
                               const graph::NodeSpace& nodes);
};

struct NodeMemory {
  int dim = 0;
  std::vector<double> values;          // node-major, dim entries per node
  std::vector<Timestamp> last_update;  // the clock origin for untouched nodes

  NodeMemory() = default;
  NodeMemory(std::size_t nodes, int dim, Timestamp origin);
  std::size_t size() const { return last_update.size(); }
  std::span<const double> row(NodeIndex n) const {
    return {values.data() + static_cast<std::size_t>(n) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<double> row(NodeIndex n) {
    return {values.data() + static_cast<std::size_t>(n) * dim, static_cast<std::size_t>(dim)};
  }
};

// [s_self || s_other || Delta t scaled || edge feature]
struct RawMessage {
  NodeIndex node = 0;
  Timestamp timestamp = 0;
  std::vector<double> values;
};

// Two messages per event, the user's first.
std::vector<RawMessage> build_messages(std::span<const graph::InteractionEvent> events,
                                       const graph::NodeSpace& nodes, const NodeMemory& memory,
                                       const TimeScale& scale);

// Keeps the most recent message per node; among equal timestamps the later
// one in input order wins.
std::map<NodeIndex, RawMessage> aggregate_messages(const std::vector<RawMessage>& messages);

// Mutable replay state: memory, messages awaiting their GRU update, and the
// neighbor history. Events referenced by the neighbor store must outlive it.
struct TemporalState {
  TemporalState() = default;
  TemporalState(std::size_t nodes, int memory_dim, Timestamp origin);

  void reset();

  NodeMemory memory;
  std::map<NodeIndex, RawMessage> pending;
  graph::TemporalNeighborStore neighbors;
  Timestamp origin = 0;
  Timestamp clock = 0;  // latest committed event time
};

// Per-batch working set. Built from pre-batch state; pending messages have
// been run through the GRU here, on the active tape if any.
struct BatchContext {
  const TemporalState* state = nullptr;
  ad::Tensor table;                // updated rows first, then all base rows
  std::vector<NodeIndex> updated;  // nodes whose row was recomputed
  std::vector<Timestamp> updated_time;
  std::size_t base_offset = 0;
  std::map<NodeIndex, std::size_t> updated_row;

  long row_of(NodeIndex n) const;
};

struct Query {
  NodeIndex node = 0;
  Timestamp t = 0;
};

class TemporalEncoder {
 public:
  TemporalEncoder(const EncoderConfig& cfg, const TimeScale& scale, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  const TimeScale& time_scale() const { return scale_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  ad::GruParams gru() const;

  BatchContext begin_batch(const TemporalState& state) const;

  // z(t) for every query, one row each: {queries, embedding_dim}. Uses only
  // neighbor entries strictly before each query time.
  ad::Tensor embed(const BatchContext& ctx, const std::vector<Query>& queries,
                   std::vector<double>* attention_weights = nullptr) const;

  // Persists the context's updated memory, queues the batch's messages and
  // links its events into the neighbor store. OrderingError if the batch is
  // not in time order or precedes already committed events.
  void commit_batch(TemporalState& state, const BatchContext& ctx,
                    std::span<const graph::InteractionEvent> events,
                    const graph::NodeSpace& nodes) const;

  // Applies pending messages without recording.
  void flush(TemporalState& state) const;

  // Begin + commit without computing embeddings.
  void advance(TemporalState& state, std::span<const graph::InteractionEvent> events,
               const graph::NodeSpace& nodes) const;

 private:
  ad::Tensor embed_layer(const BatchContext& ctx, const std::vector<Query>& queries, int layer,
                         std::vector<double>* attention_weights) const;

  EncoderConfig cfg_;
  TimeScale scale_;
  ad::ParameterStore params_;
};

// Memory snapshot: {"origin", "clock", "dim", "nodes": [{"values", "last_update"}]}.
// Pending messages must have been flushed.
nlohmann::ordered_json memory_to_json(const TemporalState& state);
void memory_from_json(const nlohmann::ordered_json& doc, TemporalState& state);

}  // namespace pfotgn::tgn
