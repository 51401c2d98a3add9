#include "pfotgn/tgn.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

namespace pfotgn::tgn {

namespace {

std::string layer_name(const char* prefix, int layer, const char* field) {
  return fmt::format("{}{}.{}", prefix, layer, field);
}

}  // namespace

void EncoderConfig::validate() const {
  if (memory_dim <= 0 || embedding_dim <= 0 || time_dim <= 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (layers < 1) throw ConfigError("encoder needs at least one attention layer");
  if (neighbors < 1) throw ConfigError("neighbors per hop must be positive");
  if (heads < 1 || embedding_dim % heads != 0) {
    throw ConfigError(fmt::format("embedding_dim {} is not divisible by {} heads", embedding_dim,
                                  heads));
  }
}

TimeScale TimeScale::from_events(std::span<const graph::InteractionEvent> events,
                                 const graph::NodeSpace& nodes) {
  std::vector<Timestamp> last(nodes.size(), 0);
  std::vector<char> seen(nodes.size(), 0);
  double total = 0.0;
  std::size_t gaps = 0;
  for (const auto& e : events) {
    for (NodeIndex n : {nodes.user_node(e.user), nodes.item_node(e.item)}) {
      if (seen[n]) {
        total += static_cast<double>(e.timestamp - last[n]);
        ++gaps;
      }
      seen[n] = 1;
      last[n] = e.timestamp;
    }
  }
  TimeScale scale;
  if (gaps > 0 && total > 0.0) scale.seconds_per_unit = total / static_cast<double>(gaps);
  return scale;
}

NodeMemory::NodeMemory(std::size_t nodes, int d, Timestamp origin)
    : dim(d), values(nodes * static_cast<std::size_t>(d), 0.0), last_update(nodes, origin) {}

std::vector<RawMessage> build_messages(std::span<const graph::InteractionEvent> events,
                                       const graph::NodeSpace& nodes, const NodeMemory& memory,
                                       const TimeScale& scale) {
  std::vector<RawMessage> out;
  out.reserve(events.size() * 2);
  const auto d = static_cast<std::size_t>(memory.dim);
  for (const auto& e : events) {
    const NodeIndex u = nodes.user_node(e.user);
    const NodeIndex v = nodes.item_node(e.item);
    for (auto [self, other] : {std::pair{u, v}, std::pair{v, u}}) {
      RawMessage m;
      m.node = self;
      m.timestamp = e.timestamp;
      m.values.reserve(2 * d + 1 + graph::kEdgeFeatureWidth);
      const auto s_self = memory.row(self);
      const auto s_other = memory.row(other);
      m.values.insert(m.values.end(), s_self.begin(), s_self.end());
      m.values.insert(m.values.end(), s_other.begin(), s_other.end());
      m.values.push_back(scale.scaled(memory.last_update[self], e.timestamp));
      m.values.insert(m.values.end(), e.edge_feature.begin(), e.edge_feature.end());
      out.push_back(std::move(m));
    }
  }
  return out;
}

std::map<NodeIndex, RawMessage> aggregate_messages(const std::vector<RawMessage>& messages) {
  std::map<NodeIndex, RawMessage> latest;
  for (const auto& m : messages) {
    auto it = latest.find(m.node);
    if (it == latest.end()) {
      latest.emplace(m.node, m);
    } else if (m.timestamp >= it->second.timestamp) {
      it->second = m;
    }
  }
  return latest;
}

TemporalState::TemporalState(std::size_t nodes, int memory_dim, Timestamp origin_time)
    : memory(nodes, memory_dim, origin_time),
      neighbors(nodes),
      origin(origin_time),
      clock(origin_time) {}

void TemporalState::reset() {
  memory = NodeMemory(memory.size(), memory.dim, origin);
  pending.clear();
  neighbors.reset(memory.size());
  clock = origin;
}

long BatchContext::row_of(NodeIndex n) const {
  auto it = updated_row.find(n);
  if (it != updated_row.end()) return static_cast<long>(it->second);
  return static_cast<long>(base_offset + n);
}

TemporalEncoder::TemporalEncoder(const EncoderConfig& cfg, const TimeScale& scale,
                                 std::uint64_t seed)
    : cfg_(cfg), scale_(scale) {
  cfg_.validate();
  Rng rng = make_rng(seed, "init");
  const int d = cfg_.memory_dim;
  const int msg = cfg_.message_dim();
  using ad::Init;
  for (const char* gate : {"z", "r", "h"}) {
    params_.create(fmt::format("gru.w_{}", gate), {d, msg}, Init::kXavierUniform, rng);
    params_.create(fmt::format("gru.u_{}", gate), {d, d}, Init::kXavierUniform, rng);
    params_.create(fmt::format("gru.b_{}", gate), {d}, Init::kZeros, rng);
  }
  std::vector<double> omega(cfg_.time_dim);
  for (int k = 0; k < cfg_.time_dim; ++k) {
    omega[k] = 1.0 / std::pow(10.0, 2.0 * k / cfg_.time_dim);
  }
  params_.create("time.omega", {cfg_.time_dim}, std::move(omega));
  params_.create("time.phase", {cfg_.time_dim}, Init::kZeros, rng);

  const int e = static_cast<int>(graph::kEdgeFeatureWidth);
  const int out = cfg_.embedding_dim;
  for (int l = 1; l <= cfg_.layers; ++l) {
    const int in = l == 1 ? d : out;
    params_.create(layer_name("attn", l, "w_q"), {out, in + cfg_.time_dim}, Init::kXavierUniform, rng);
    params_.create(layer_name("attn", l, "w_k"), {out, in + e + cfg_.time_dim}, Init::kXavierUniform, rng);
    params_.create(layer_name("attn", l, "b_k"), {out}, Init::kZeros, rng);
    params_.create(layer_name("attn", l, "w_v"), {out, in + e + cfg_.time_dim}, Init::kXavierUniform, rng);
    params_.create(layer_name("attn", l, "b_v"), {out}, Init::kZeros, rng);
    params_.create(layer_name("mlp", l, "w1"), {out, in + out}, Init::kXavierUniform, rng);
    params_.create(layer_name("mlp", l, "b1"), {out}, Init::kZeros, rng);
    params_.create(layer_name("mlp", l, "w2"), {out, out}, Init::kXavierUniform, rng);
    params_.create(layer_name("mlp", l, "b2"), {out}, Init::kZeros, rng);
  }
}

ad::GruParams TemporalEncoder::gru() const {
  return {params_.get("gru.w_z"), params_.get("gru.u_z"), params_.get("gru.b_z"),
          params_.get("gru.w_r"), params_.get("gru.u_r"), params_.get("gru.b_r"),
          params_.get("gru.w_h"), params_.get("gru.u_h"), params_.get("gru.b_h")};
}

BatchContext TemporalEncoder::begin_batch(const TemporalState& state) const {
  BatchContext ctx;
  ctx.state = &state;
  const int d = cfg_.memory_dim;
  const auto nodes = static_cast<int>(state.memory.size());
  ad::Tensor base = ad::Tensor::constant({nodes, d}, state.memory.values);
  if (state.pending.empty()) {
    ctx.table = base;
    return ctx;
  }
  std::vector<double> messages;
  std::vector<double> previous;
  const int width = cfg_.message_dim();
  for (const auto& [node, m] : state.pending) {
    ctx.updated_row[node] = ctx.updated.size();
    ctx.updated.push_back(node);
    ctx.updated_time.push_back(m.timestamp);
    messages.insert(messages.end(), m.values.begin(), m.values.end());
    const auto row = state.memory.row(node);
    previous.insert(previous.end(), row.begin(), row.end());
  }
  const auto count = static_cast<int>(ctx.updated.size());
  ad::Tensor updated = ad::gru_cell(ad::Tensor::constant({count, width}, std::move(messages)),
                                    ad::Tensor::constant({count, d}, std::move(previous)), gru());
  ctx.base_offset = ctx.updated.size();
  ctx.table = ad::vstack({updated, base});
  return ctx;
}

ad::Tensor TemporalEncoder::embed(const BatchContext& ctx, const std::vector<Query>& queries,
                                  std::vector<double>* attention_weights) const {
  if (queries.empty()) throw ShapeError("embed called without queries");
  return embed_layer(ctx, queries, cfg_.layers, attention_weights);
}

ad::Tensor TemporalEncoder::embed_layer(const BatchContext& ctx, const std::vector<Query>& queries,
                                        int layer, std::vector<double>* attention_weights) const {
  if (layer == 0) {
    std::vector<long> rows;
    rows.reserve(queries.size());
    for (const auto& q : queries) rows.push_back(ctx.row_of(q.node));
    return ad::gather_rows(ctx.table, rows);
  }
  const TemporalState& state = *ctx.state;
  const int slots = cfg_.neighbors;
  const int q_count = static_cast<int>(queries.size());
  const int e_width = static_cast<int>(graph::kEdgeFeatureWidth);

  ad::Tensor h_self = embed_layer(ctx, queries, layer - 1, nullptr);

  std::vector<int> counts(q_count);
  std::vector<Query> neighbor_queries;
  std::vector<long> slot_source(static_cast<std::size_t>(q_count) * slots, -1);
  std::vector<double> edges(static_cast<std::size_t>(q_count) * slots * e_width, 0.0);
  std::vector<double> gaps(static_cast<std::size_t>(q_count) * slots, 0.0);
  for (int i = 0; i < q_count; ++i) {
    const auto found = state.neighbors.neighbors(queries[i].node, queries[i].t, slots);
    counts[i] = static_cast<int>(found.size());
    for (int j = 0; j < counts[i]; ++j) {
      const std::size_t slot = static_cast<std::size_t>(i) * slots + j;
      slot_source[slot] = static_cast<long>(neighbor_queries.size());
      neighbor_queries.push_back({found[j].node, found[j].timestamp});
      std::copy(found[j].feature->begin(), found[j].feature->end(),
                edges.begin() + static_cast<long>(slot * e_width));
      gaps[slot] = scale_.scaled(found[j].timestamp, queries[i].t);
    }
  }

  const ad::Tensor& omega = params_.get("time.omega");
  const ad::Tensor& phase = params_.get("time.phase");
  ad::Tensor query_in =
      ad::hconcat({h_self, ad::time_encode(std::vector<double>(q_count, 0.0), omega, phase)});
  ad::Tensor q = ad::linear(query_in, params_.get(layer_name("attn", layer, "w_q")));

  ad::Tensor attended;
  if (neighbor_queries.empty()) {
    attended = ad::Tensor::zeros({q_count, cfg_.embedding_dim});
    if (attention_weights != nullptr) {
      attention_weights->assign(static_cast<std::size_t>(q_count) * cfg_.heads * slots, 0.0);
    }
  } else {
    ad::Tensor h_neighbors = embed_layer(ctx, neighbor_queries, layer - 1, nullptr);
    ad::Tensor slotted = ad::gather_rows(h_neighbors, slot_source);
    ad::Tensor kv_in = ad::hconcat(
        {slotted, ad::Tensor::constant({q_count * slots, e_width}, std::move(edges)),
         ad::time_encode(gaps, omega, phase)});
    ad::Tensor k = ad::linear(kv_in, params_.get(layer_name("attn", layer, "w_k")),
                              params_.get(layer_name("attn", layer, "b_k")));
    ad::Tensor v = ad::linear(kv_in, params_.get(layer_name("attn", layer, "w_v")),
                              params_.get(layer_name("attn", layer, "b_v")));
    attended = ad::masked_attention(q, k, v, counts, slots, cfg_.heads, attention_weights);
  }
  ad::Tensor hidden = ad::tanh(ad::linear(ad::hconcat({h_self, attended}),
                                          params_.get(layer_name("mlp", layer, "w1")),
                                          params_.get(layer_name("mlp", layer, "b1"))));
  return ad::linear(hidden, params_.get(layer_name("mlp", layer, "w2")),
                    params_.get(layer_name("mlp", layer, "b2")));
}

void TemporalEncoder::commit_batch(TemporalState& state, const BatchContext& ctx,
                                   std::span<const graph::InteractionEvent> events,
                                   const graph::NodeSpace& nodes) const {
  if (ctx.state != &state) throw StateError("batch context belongs to a different state");
  Timestamp previous = state.clock;
  for (const auto& e : events) {
    if (e.timestamp < previous) {
      throw OrderingError(fmt::format("event at {} arrives after events at {}", e.timestamp,
                                      previous));
    }
    previous = e.timestamp;
  }
  if (!ctx.updated.empty()) {
    const auto& table = ctx.table.value();
    const auto d = static_cast<std::size_t>(cfg_.memory_dim);
    for (std::size_t r = 0; r < ctx.updated.size(); ++r) {
      auto row = state.memory.row(ctx.updated[r]);
      std::copy_n(table.begin() + static_cast<long>(r * d), d, row.begin());
      state.memory.last_update[ctx.updated[r]] = ctx.updated_time[r];
    }
  }
  state.pending = aggregate_messages(build_messages(events, nodes, state.memory, scale_));
  for (const auto& e : events) state.neighbors.insert(e, nodes);
  state.clock = previous;
}

void TemporalEncoder::flush(TemporalState& state) const {
  if (state.pending.empty()) return;
  ad::NoGradScope no_grad;
  BatchContext ctx = begin_batch(state);
  const auto& table = ctx.table.value();
  const auto d = static_cast<std::size_t>(cfg_.memory_dim);
  for (std::size_t r = 0; r < ctx.updated.size(); ++r) {
    auto row = state.memory.row(ctx.updated[r]);
    std::copy_n(table.begin() + static_cast<long>(r * d), d, row.begin());
    state.memory.last_update[ctx.updated[r]] = ctx.updated_time[r];
  }
  state.pending.clear();
}

void TemporalEncoder::advance(TemporalState& state,
                              std::span<const graph::InteractionEvent> events,
                              const graph::NodeSpace& nodes) const {
  ad::NoGradScope no_grad;
  BatchContext ctx = begin_batch(state);
  commit_batch(state, ctx, events, nodes);
}

nlohmann::ordered_json memory_to_json(const TemporalState& state) {
  if (!state.pending.empty()) throw StateError("flush pending messages before a snapshot");
  nlohmann::ordered_json doc;
  doc["origin"] = state.origin;
  doc["clock"] = state.clock;
  doc["dim"] = state.memory.dim;
  auto nodes = nlohmann::ordered_json::array();
  for (NodeIndex n = 0; n < state.memory.size(); ++n) {
    const auto row = state.memory.row(n);
    nodes.push_back({{"values", std::vector<double>(row.begin(), row.end())},
                     {"last_update", state.memory.last_update[n]}});
  }
  doc["nodes"] = std::move(nodes);
  return doc;
}

void memory_from_json(const nlohmann::ordered_json& doc, TemporalState& state) {
  const int dim = doc.at("dim").get<int>();
  const auto& nodes = doc.at("nodes");
  TemporalState loaded(nodes.size(), dim, doc.at("origin").get<Timestamp>());
  for (NodeIndex n = 0; n < nodes.size(); ++n) {
    auto values = nodes[n].at("values").get<std::vector<double>>();
    if (values.size() != static_cast<std::size_t>(dim)) {
      throw ParseError(fmt::format("memory row {} has {} values, expected {}", n, values.size(), dim));
    }
    std::copy(values.begin(), values.end(), loaded.memory.row(n).begin());
    loaded.memory.last_update[n] = nodes[n].at("last_update").get<Timestamp>();
  }
  loaded.clock = doc.at("clock").get<Timestamp>();
  state = std::move(loaded);
}

}  // namespace pfotgn::tgn
