#include "pfotgn/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <boost/random/uniform_real_distribution.hpp>
#include <fmt/core.h>

namespace pfotgn::pipeline {

namespace {

using nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ordered_json number(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

tgn::TemporalEncoder load_encoder(const Model& model, std::uint64_t seed) {
  tgn::TemporalEncoder encoder(model.encoder, model.time_scale, seed);
  encoder.params().load_json(model.params);
  return encoder;
}

ordered_json encoder_to_json(const tgn::EncoderConfig& c) {
  return {{"memory_dim", c.memory_dim}, {"embedding_dim", c.embedding_dim},
          {"time_dim", c.time_dim},     {"layers", c.layers},
          {"neighbors", c.neighbors},   {"heads", c.heads}};
}

SweepRow run_one(const Dataset& data, const RunConfig& cfg) {
  SweepRow row;
  row.alpha = cfg.train.alpha;
  row.negatives = cfg.train.bpr_negatives;
  const TrainOutcome outcome = train_model(data, cfg);
  row.first_loss = outcome.result.log.empty() ? kNaN : outcome.result.log.front().mean_loss;
  row.final_loss = outcome.result.log.empty() ? kNaN : outcome.result.log.back().mean_loss;
  row.selected_epoch = outcome.model.epoch;
  row.report = evaluate_model(data, cfg, outcome.model);
  return row;
}

}  // namespace

RawDataset generate(const RunConfig& cfg) {
  cfg.validate();
  scenario::GeneratedMarket market = scenario::gen_prices(cfg.market_spec());
  RawDataset raw;
  raw.events = scenario::gen_events(cfg.behavior_spec(), market);
  raw.prices = std::move(market.prices);
  raw.market_caps = std::move(market.market_caps);
  return raw;
}

Prepared prepare(const RawDataset& raw, const RunConfig& cfg) {
  const market::MarketData market(raw.prices);
  Prepared out;
  out.filter = graph::filter_dataset(raw.events, market, raw.market_caps, cfg.filter);
  out.events = std::move(out.filter.events);
  out.filter.events.clear();
  out.splits = graph::make_rolling_splits(parse_iso_date(cfg.split.begin),
                                          parse_iso_date(cfg.split.end), cfg.split.split);
  return out;
}

const graph::RollingSplit& Dataset::split(int period) const {
  if (period < 1 || static_cast<std::size_t>(period) > splits.size()) {
    throw ConfigError(fmt::format("split.period {} out of range; {} period(s) available", period,
                                  splits.size()));
  }
  return splits[static_cast<std::size_t>(period - 1)];
}

void build_dataset(std::vector<market::PriceSeries> prices,
                   std::span<const graph::RawEvent> filtered_events,
                   std::vector<graph::RollingSplit> splits, Dataset& out) {
  out.market = market::MarketData(std::move(prices));
  out.log = graph::ingest_events(filtered_events, out.market);
  out.ledger = graph::PortfolioLedger::from_events(out.log.events, out.log.user_ids.size());
  out.splits = std::move(splits);
}

void synthetic_dataset(const RunConfig& cfg, Dataset& out) {
  RawDataset raw = generate(cfg);
  Prepared prepared = prepare(raw, cfg);
  build_dataset(std::move(raw.prices), prepared.events, std::move(prepared.splits), out);
}

std::filesystem::path prepared_events_path(const RunConfig& cfg) {
  return std::filesystem::path(cfg.paths.work_dir) / "events_filtered.csv";
}

std::filesystem::path split_manifest_path(const RunConfig& cfg) {
  return std::filesystem::path(cfg.paths.work_dir) / "splits.json";
}

std::filesystem::path model_path(const RunConfig& cfg) {
  return std::filesystem::path(cfg.paths.work_dir) / "model.json";
}

ordered_json split_manifest(const Prepared& prepared, const RunConfig& cfg) {
  ordered_json doc;
  doc["config"] = cfg.to_json();
  ordered_json filter;
  filter["events_kept"] = prepared.events.size();
  filter["user_trade_threshold"] = number(prepared.filter.user_trade_threshold);
  filter["market_cap_threshold"] = number(prepared.filter.market_cap_threshold);
  filter["removed_users"] = prepared.filter.removed_users;
  filter["removed_items"] = prepared.filter.removed_items;
  doc["filter"] = filter;
  ordered_json periods = ordered_json::array();
  for (const auto& s : prepared.splits) {
    ordered_json p;
    p["period"] = s.period_index;
    p["start"] = to_iso_string(day_of(s.start));
    p["train_end"] = to_iso_string(day_of(s.train_end));
    p["validation_end"] = to_iso_string(day_of(s.validation_end));
    p["end"] = to_iso_string(day_of(s.end));
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& e : prepared.events) {
      if (e.timestamp >= s.start && e.timestamp < s.train_end) ++counts[0];
      if (e.timestamp >= s.train_end && e.timestamp < s.validation_end) ++counts[1];
      if (e.timestamp >= s.validation_end && e.timestamp < s.end) ++counts[2];
    }
    p["events"] = {{"train", counts[0]}, {"validation", counts[1]}, {"test", counts[2]}};
    periods.push_back(p);
  }
  doc["periods"] = periods;
  return doc;
}

std::vector<graph::RollingSplit> read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StateError(fmt::format("missing split manifest {}; run prep first", path.string()));
  const auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ParseError(fmt::format("malformed split manifest {}", path.string()));
  std::vector<graph::RollingSplit> splits;
  for (const auto& p : doc.at("periods")) {
    graph::RollingSplit s;
    s.period_index = p.at("period").get<int>();
    s.start = start_of(parse_iso_date(p.at("start").get<std::string>()));
    s.train_end = start_of(parse_iso_date(p.at("train_end").get<std::string>()));
    s.validation_end = start_of(parse_iso_date(p.at("validation_end").get<std::string>()));
    s.end = start_of(parse_iso_date(p.at("end").get<std::string>()));
    splits.push_back(s);
  }
  return splits;
}

void load_prepared(const RunConfig& cfg, Dataset& out) {
  const auto events_path = prepared_events_path(cfg);
  if (!std::filesystem::exists(events_path)) {
    throw StateError(fmt::format("missing {}; run prep first", events_path.string()));
  }
  auto prices = market::read_price_csv(cfg.paths.prices);
  const auto events = graph::read_event_csv(events_path);
  build_dataset(std::move(prices), events, read_split_manifest(split_manifest_path(cfg)), out);
}

TrainOutcome train_model(const Dataset& data, const RunConfig& cfg,
                         const std::function<void(const train::EpochLog&)>& on_epoch) {
  cfg.validate();
  train::TrainingData td{&data.market, &data.log, &data.ledger, data.split(cfg.split.period)};
  train::Trainer trainer(td, cfg.train_config(), cfg.model, cfg.eval_config());
  TrainOutcome out;
  out.result = trainer.run(on_epoch);
  const auto& chosen = out.result.checkpoints[out.result.selected];
  out.model = {cfg.model, out.result.time_scale, chosen.epoch, chosen.params, chosen.memory};
  return out;
}

eval::MetricsReport evaluate_model(const Dataset& data, const RunConfig& cfg, const Model& model,
                                   std::vector<eval::InteractionVerdict>* verdicts) {
  const auto& split = data.split(cfg.split.period);
  const auto ranges = train::split_ranges(data.log, split);
  const eval::EvalConfig ecfg = cfg.eval_config();
  const tgn::TemporalEncoder encoder = load_encoder(model, cfg.seed);
  tgn::TemporalState state(data.log.nodes.size(), model.encoder.memory_dim, split.start);
  train::restore_state({model.epoch, model.params, model.memory}, data.log, ranges.begin,
                       ranges.train_end, state);
  eval::replay(encoder, state, data.log, ranges.train_end, ranges.validation_end, ecfg.batch_size);
  eval::ModelScorer scorer(encoder, state, data.log.nodes);
  return eval::evaluate(data.market, data.log, data.ledger, ranges.validation_end, ranges.end,
                        scorer, ecfg, verdicts);
}

eval::MetricsReport evaluate_baseline(const Dataset& data, const RunConfig& cfg,
                                      eval::BaselineKind kind,
                                      std::vector<eval::InteractionVerdict>* verdicts) {
  const auto& split = data.split(cfg.split.period);
  const auto ranges = train::split_ranges(data.log, split);
  const eval::EvalConfig ecfg = cfg.eval_config();
  const auto ranking = eval::baseline_ranking(
      kind, data.market,
      std::span(data.log.events).subspan(ranges.begin, ranges.train_end - ranges.begin),
      split.train_end, ecfg.sharpe, cfg.seed);
  auto scorer = eval::StaticScorer::from_ranking(ranking, data.market.asset_count());
  return eval::evaluate(data.market, data.log, data.ledger, ranges.validation_end, ranges.end,
                        scorer, ecfg, verdicts);
}

ordered_json model_to_json(const Model& model, const RunConfig& cfg) {
  ordered_json doc;
  doc["config"] = cfg.to_json();
  doc["epoch"] = model.epoch;
  doc["encoder"] = encoder_to_json(model.encoder);
  doc["seconds_per_unit"] = model.time_scale.seconds_per_unit;
  doc["params"] = model.params;
  doc["memory"] = model.memory;
  return doc;
}

Model model_from_json(const ordered_json& doc) {
  Model m;
  const auto& e = doc.at("encoder");
  m.encoder.memory_dim = e.at("memory_dim").get<int>();
  m.encoder.embedding_dim = e.at("embedding_dim").get<int>();
  m.encoder.time_dim = e.at("time_dim").get<int>();
  m.encoder.layers = e.at("layers").get<int>();
  m.encoder.neighbors = e.at("neighbors").get<int>();
  m.encoder.heads = e.at("heads").get<int>();
  m.encoder.validate();
  m.time_scale.seconds_per_unit = doc.at("seconds_per_unit").get<double>();
  m.epoch = doc.at("epoch").get<int>();
  m.params = doc.at("params");
  m.memory = doc.at("memory");
  return m;
}

std::string epoch_log_line(const train::EpochLog& log) {
  return fmt::format("epoch={} loss={} bpr={} cl={} examples={} seconds={}", log.epoch,
                     format_number(log.mean_loss), format_number(log.mean_bpr),
                     format_number(log.mean_cl), log.examples, format_number(log.seconds));
}

std::vector<SweepRow> sweep_alpha(const Dataset& data, const RunConfig& cfg,
                                  const std::vector<double>& alphas) {
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    RunConfig c = cfg;
    c.train.alpha = a;
    rows.push_back(run_one(data, c));
  }
  return rows;
}

std::vector<SweepRow> sweep_negatives(const Dataset& data, const RunConfig& cfg,
                                      const std::vector<std::size_t>& negatives) {
  std::vector<SweepRow> rows;
  for (std::size_t k : negatives) {
    RunConfig c = cfg;
    c.train.bpr_negatives = k;
    rows.push_back(run_one(data, c));
  }
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows, const std::string& key) {
  if (rows.empty()) return "";
  const auto& ks = rows.front().report.ks;
  std::string out = key;
  for (int k : ks) out += fmt::format("\tHR@{}\tNDCG@{}\tP(R)@{}\tP(SR)@{}", k, k, k, k);
  out += "\tfirst_loss\tfinal_loss\tselected_epoch\n";
  for (const auto& r : rows) {
    out += key == "alpha" ? format_number(r.alpha) : std::to_string(r.negatives);
    const auto& a = r.report.per_interaction;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      out += fmt::format("\t{}\t{}\t{}\t{}", format_number(a.hr[i]), format_number(a.ndcg[i]),
                         format_number(a.p_return[i]), format_number(a.p_sharpe[i]));
    }
    out += fmt::format("\t{}\t{}\t{}\n", format_number(r.first_loss), format_number(r.final_loss),
                       r.selected_epoch);
  }
  return out;
}

ordered_json sweep_to_json(const std::vector<SweepRow>& rows, const std::string& key,
                           const RunConfig& cfg) {
  ordered_json doc;
  doc["config"] = cfg.to_json();
  doc["key"] = key;
  ordered_json list = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row;
    if (key == "alpha") {
      row["alpha"] = r.alpha;
    } else {
      row["negatives"] = r.negatives;
    }
    row["first_loss"] = number(r.first_loss);
    row["final_loss"] = number(r.final_loss);
    row["selected_epoch"] = r.selected_epoch;
    row["report"] = eval::report_to_json(r.report);
    list.push_back(row);
  }
  doc["rows"] = list;
  return doc;
}

GradCheckReport gradcheck_toy(std::uint64_t seed, int dim, double eps) {
  const auto started = std::chrono::steady_clock::now();
  scenario::MarketSpec ms;
  ms.n_assets = 4;
  ms.n_sectors = 2;
  ms.n_days = 80;
  ms.seed = seed;
  const auto generated = scenario::gen_prices(ms);
  const market::MarketData market(generated.prices);

  // Batch 1 seeds memory and neighbors; batch 2 is the one differentiated.
  const Timestamp day1 = start_of(Date{std::chrono::year{2021} / 3 / 1});
  const Timestamp day2 = start_of(Date{std::chrono::year{2021} / 3 / 3});
  const std::vector<graph::RawEvent> raw = {
      {day1 + 36000, "U0", market.asset_id(0), 0}, {day1 + 39600, "U1", market.asset_id(1), 0},
      {day2 + 36000, "U0", market.asset_id(1), 0}, {day2 + 39600, "U1", market.asset_id(2), 0},
      {day2 + 43200, "U0", market.asset_id(3), 0}, {day2 + 46800, "U1", market.asset_id(0), 0},
  };
  const graph::EventLog log = graph::ingest_events(raw, market);
  const auto ledger = graph::PortfolioLedger::from_events(log.events, log.user_ids.size());
  const auto batch1 = std::span(log.events).first(2);
  const auto batch2 = std::span(log.events).subspan(2);

  tgn::EncoderConfig ec;
  ec.memory_dim = dim;
  ec.embedding_dim = dim;
  ec.time_dim = 4;
  ec.heads = 2;
  ec.layers = 1;
  tgn::TemporalEncoder encoder(ec, tgn::TimeScale::from_events(log.events, log.nodes), seed);
  // Zero-initialized biases give cold nodes an exactly zero embedding, where
  // cosine similarity has no derivative. Check at a generic point instead.
  {
    Rng rng = make_rng(seed, "gradcheck.jitter");
    boost::random::uniform_real_distribution<double> jitter(-0.1, 0.1);
    for (const auto& name : encoder.params().names()) {
      for (double& v : encoder.params().get(name).mutable_value()) v += jitter(rng);
    }
  }

  train::TrainConfig tc;
  tc.alpha = 0.5;
  tc.sampler.positives = 1;
  tc.sampler.negatives = 1;
  std::vector<ItemIndex> items;
  for (const auto& e : batch2) items.push_back(e.item);
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());

  std::vector<tgn::Query> queries;
  std::vector<train::ExampleRows> examples;
  auto add_query = [&](NodeIndex node, Timestamp t) {
    queries.push_back({node, t});
    return static_cast<long>(queries.size() - 1);
  };
  for (std::size_t i = 0; i < batch2.size(); ++i) {
    const auto& ev = batch2[i];
    Rng rng = make_rng(seed, "gradcheck", i);
    train::ExampleRows ex;
    ex.user = add_query(log.nodes.user_node(ev.user), ev.timestamp);
    ex.positive = add_query(log.nodes.item_node(ev.item), ev.timestamp);
    for (ItemIndex x : train::sample_bpr_negatives(ledger, ev.user, ev.timestamp, items,
                                                   tc.bpr_negatives, rng)) {
      ex.negatives.push_back(add_query(log.nodes.item_node(x), ev.timestamp));
    }
    const auto pair = sampler::sample_pair(market, ledger, ev.user, ev.item, ev.timestamp, items,
                                           tc.sampler, rng);
    for (ItemIndex p : pair.positives) {
      ex.pair_positives.push_back(add_query(log.nodes.item_node(p), ev.timestamp));
    }
    for (ItemIndex n : pair.negatives) {
      ex.pair_negatives.push_back(add_query(log.nodes.item_node(n), ev.timestamp));
    }
    examples.push_back(std::move(ex));
  }

  tgn::TemporalState state(log.nodes.size(), ec.memory_dim, start_of(day_of(day1)));
  auto loss_fn = [&]() {
    state.reset();
    encoder.advance(state, batch1, log.nodes);
    const tgn::BatchContext ctx = encoder.begin_batch(state);
    const ad::Tensor z = encoder.embed(ctx, queries);
    return train::batch_loss(z, examples, tc.alpha, tc.temperature).total;
  };

  GradCheckReport report;
  {
    ad::NoGradScope no_grad;
    report.loss = loss_fn().item();
  }
  report.result = ad::finite_difference_check(loss_fn, encoder.params(), eps);
  report.parameters = encoder.params().parameter_count();
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

Recommendation recommend(const Dataset& data, const RunConfig& cfg, const Model& model,
                         std::string_view user_id, Timestamp t, std::size_t k) {
  const auto& split = data.split(cfg.split.period);
  const auto ranges = train::split_ranges(data.log, split);
  const tgn::TemporalEncoder encoder = load_encoder(model, cfg.seed);
  const std::size_t batch = cfg.eval_config().batch_size;
  const std::size_t upto = data.log.range(std::numeric_limits<Timestamp>::min(), t).second;

  tgn::TemporalState state(data.log.nodes.size(), model.encoder.memory_dim, split.start);
  if (t >= split.train_end) {
    train::restore_state({model.epoch, model.params, model.memory}, data.log, ranges.begin,
                         ranges.train_end, state);
    eval::replay(encoder, state, data.log, ranges.train_end, std::max(ranges.train_end, upto),
                 batch);
  } else {
    eval::replay(encoder, state, data.log, ranges.begin, std::max(ranges.begin, upto), batch);
  }

  ad::NoGradScope no_grad;
  Recommendation rec;
  const auto user = data.log.find_user(user_id);
  rec.unseen_user = !user.has_value();
  std::vector<ItemIndex> touched;
  if (user) touched = data.ledger.interacted_through(*user, t);

  std::vector<ItemIndex> candidates;
  std::vector<tgn::Query> queries;
  for (ItemIndex i = 0; i < data.market.asset_count(); ++i) {
    if (std::binary_search(touched.begin(), touched.end(), i)) continue;
    candidates.push_back(i);
    queries.push_back({data.log.nodes.item_node(i), t});
  }
  if (candidates.empty()) return rec;

  const tgn::BatchContext ctx = encoder.begin_batch(state);
  const ad::Tensor z_items = encoder.embed(ctx, queries);
  ad::Tensor z_user;
  if (user) {
    z_user = encoder.embed(ctx, {{data.log.nodes.user_node(*user), t}});
  } else {
    const tgn::TemporalState fresh(1, model.encoder.memory_dim, split.start);
    z_user = encoder.embed(encoder.begin_batch(fresh), {{0, t}});
  }

  const auto width = static_cast<std::size_t>(model.encoder.embedding_dim);
  std::vector<double> scores;
  for (std::size_t r = 0; r < candidates.size(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < width; ++c) s += z_user.value()[c] * z_items.value()[r * width + c];
    scores.push_back(s);
  }
  const eval::RankedList ranked = eval::rank(candidates, scores);
  const std::size_t take = std::min(k, ranked.items.size());
  rec.items.assign(ranked.items.begin(), ranked.items.begin() + static_cast<long>(take));
  rec.scores.assign(ranked.scores.begin(), ranked.scores.begin() + static_cast<long>(take));
  return rec;
}

}  // namespace pfotgn::pipeline
