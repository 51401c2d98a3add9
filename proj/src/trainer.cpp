#include "pfotgn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/core.h>

namespace pfotgn::train {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<ItemIndex> unique_items(std::span<const graph::InteractionEvent> batch) {
  std::vector<ItemIndex> items;
  for (const auto& e : batch) items.push_back(e.item);
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

// Competition rank of each value (higher is better, NaN last).
std::vector<double> competition_ranks(const std::vector<double>& values) {
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::size_t better = 0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const bool i_nan = std::isnan(values[i]);
      const bool j_nan = std::isnan(values[j]);
      if (i_nan ? !j_nan : (!j_nan && values[j] > values[i])) ++better;
    }
    ranks[i] = static_cast<double>(better + 1);
  }
  return ranks;
}

std::string parameter_summary(const ad::ParameterStore& params) {
  std::string out;
  for (const auto& name : params.names()) {
    double ss = 0.0;
    bool finite = true;
    for (double v : params.get(name).value()) {
      ss += v * v;
      finite = finite && std::isfinite(v);
    }
    out += fmt::format("  {} norm {}{}\n", name, format_number(std::sqrt(ss)),
                       finite ? "" : " (non-finite)");
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (bpr_negatives == 0) throw ConfigError("train.bpr_negatives must be at least 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("train.alpha must lie in [0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("train.temperature must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  sampler.validate();
}

std::vector<ItemIndex> sample_bpr_negatives(const graph::PortfolioLedger& ledger, UserIndex user,
                                            Timestamp t, std::span<const ItemIndex> batch_items,
                                            std::size_t k, Rng& rng) {
  const auto touched = ledger.interacted_through(user, t);
  std::vector<ItemIndex> pool;
  for (ItemIndex i : batch_items) {
    if (!std::binary_search(touched.begin(), touched.end(), i)) pool.push_back(i);
  }
  return sample_without_replacement(std::span<const ItemIndex>(pool), k, rng);
}

ad::Tensor bpr_loss(const ad::Tensor& z_u, const ad::Tensor& z_o,
                    const std::vector<ad::Tensor>& z_negatives) {
  if (z_negatives.empty()) throw ShapeError("bpr_loss needs at least one negative");
  const ad::Tensor positive = ad::dot(z_u, z_o);
  std::vector<ad::Tensor> margins;
  for (const auto& z_x : z_negatives) margins.push_back(ad::sub(positive, ad::dot(z_u, z_x)));
  return ad::scale(ad::mean(ad::log_sigmoid(ad::concat(margins))), -1.0);
}

ad::Tensor contrastive_loss(const ad::Tensor& z_u, const std::vector<ad::Tensor>& z_positives,
                            const std::vector<ad::Tensor>& z_negatives, double temperature,
                            bool canonical) {
  if (z_positives.empty() || z_negatives.empty()) {
    throw ShapeError("contrastive_loss needs positives and negatives");
  }
  std::vector<ad::Tensor> sp, sn;
  for (const auto& z : z_positives) sp.push_back(ad::cosine_similarity(z_u, z));
  for (const auto& z : z_negatives) sn.push_back(ad::cosine_similarity(z_u, z));
  const ad::Tensor lse_p = ad::logsumexp(ad::scale(ad::concat(sp), 1.0 / temperature));
  std::vector<ad::Tensor> denominator = sn;
  if (canonical) denominator.insert(denominator.begin(), sp.begin(), sp.end());
  const ad::Tensor lse_d = ad::logsumexp(ad::scale(ad::concat(denominator), 1.0 / temperature));
  return ad::sub(lse_d, lse_p);
}

ad::Tensor joint_loss(const ad::Tensor& l_bpr, const ad::Tensor& l_cl, double alpha) {
  return ad::add(ad::scale(l_bpr, 1.0 - alpha), ad::scale(l_cl, alpha));
}

BatchLoss batch_loss(const ad::Tensor& z, const std::vector<ExampleRows>& examples, double alpha,
                     double temperature, bool canonical) {
  BatchLoss out;
  if (examples.empty()) {
    out.total = ad::Tensor::scalar(0.0);
    return out;
  }
  const double inv_b = 1.0 / static_cast<double>(examples.size());
  std::vector<ad::Tensor> terms;

  // BPR: one row per (example, negative).
  std::vector<long> bu, bo, bx;
  std::vector<double> bw;
  std::vector<std::size_t> owner;
  for (const auto& ex : examples) {
    if (ex.negatives.empty()) continue;
    ++out.bpr_terms;
    for (long x : ex.negatives) {
      bu.push_back(ex.user);
      bo.push_back(ex.positive);
      bx.push_back(x);
      bw.push_back(1.0 / static_cast<double>(ex.negatives.size()));
      owner.push_back(out.bpr_terms);
    }
  }
  if (!bu.empty()) {
    const ad::Tensor zu = ad::gather_rows(z, bu);
    const ad::Tensor margin =
        ad::sub(ad::row_dot(zu, ad::gather_rows(z, bo)), ad::row_dot(zu, ad::gather_rows(z, bx)));
    const ad::Tensor ls = ad::log_sigmoid(margin);
    for (std::size_t i = 0; i < bw.size(); ++i) out.bpr_sum -= bw[i] * ls.value()[i];
    std::vector<double> w(bw.size());
    for (std::size_t i = 0; i < bw.size(); ++i) w[i] = -(1.0 - alpha) * inv_b * bw[i];
    terms.push_back(ad::weighted_sum(ls, std::move(w)));
  }

  // Contrastive: cosine similarities grouped per example.
  std::vector<long> pu, pv, nu, nv, du, dv;
  std::vector<std::size_t> p_off{0}, n_off{0}, d_off{0};
  for (const auto& ex : examples) {
    if (ex.pair_positives.empty() || ex.pair_negatives.empty()) continue;
    ++out.cl_terms;
    for (long p : ex.pair_positives) {
      pu.push_back(ex.user);
      pv.push_back(p);
    }
    for (long n : ex.pair_negatives) {
      nu.push_back(ex.user);
      nv.push_back(n);
    }
    p_off.push_back(pv.size());
    n_off.push_back(nv.size());
    if (canonical) {
      for (long p : ex.pair_positives) {
        du.push_back(ex.user);
        dv.push_back(p);
      }
      for (long n : ex.pair_negatives) {
        du.push_back(ex.user);
        dv.push_back(n);
      }
      d_off.push_back(dv.size());
    }
  }
  if (!pu.empty()) {
    const double inv_tau = 1.0 / temperature;
    const ad::Tensor lse_p = ad::segment_logsumexp(
        ad::scale(ad::row_cosine(ad::gather_rows(z, pu), ad::gather_rows(z, pv)), inv_tau), p_off);
    const ad::Tensor lse_d =
        canonical
            ? ad::segment_logsumexp(
                  ad::scale(ad::row_cosine(ad::gather_rows(z, du), ad::gather_rows(z, dv)), inv_tau),
                  d_off)
            : ad::segment_logsumexp(
                  ad::scale(ad::row_cosine(ad::gather_rows(z, nu), ad::gather_rows(z, nv)), inv_tau),
                  n_off);
    for (std::size_t i = 0; i < out.cl_terms; ++i) out.cl_sum += lse_d.value()[i] - lse_p.value()[i];
    const std::vector<double> w(out.cl_terms, alpha * inv_b);
    terms.push_back(ad::weighted_sum(lse_d, w));
    terms.push_back(ad::weighted_sum(lse_p, std::vector<double>(out.cl_terms, -alpha * inv_b)));
  }

  if (terms.empty()) {
    out.total = ad::Tensor::scalar(0.0);
    return out;
  }
  out.total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) out.total = ad::add(out.total, terms[i]);
  return out;
}

std::size_t select_model(const std::vector<EpochMetrics>& metrics) {
  if (metrics.empty()) throw StateError("model selection needs at least one checkpoint");
  std::vector<double> hr, psr;
  for (const auto& m : metrics) {
    hr.push_back(m.hr5);
    psr.push_back(m.psr5);
  }
  const auto r_hr = competition_ranks(hr);
  const auto r_psr = competition_ranks(psr);
  std::size_t best = 0;
  for (std::size_t i = 1; i < metrics.size(); ++i) {
    const double mean_i = (r_hr[i] + r_psr[i]) / 2.0;
    const double mean_best = (r_hr[best] + r_psr[best]) / 2.0;
    if (mean_i < mean_best || (mean_i == mean_best && metrics[i].epoch < metrics[best].epoch)) {
      best = i;
    }
  }
  return best;
}

SplitRanges split_ranges(const graph::EventLog& log, const graph::RollingSplit& split) {
  SplitRanges r;
  std::tie(r.begin, r.train_end) = log.range(split.start, split.train_end);
  r.validation_end = log.range(split.train_end, split.validation_end).second;
  r.end = log.range(split.validation_end, split.end).second;
  return r;
}

Trainer::Trainer(const TrainingData& data, const TrainConfig& cfg,
                 const tgn::EncoderConfig& encoder_cfg, const eval::EvalConfig& validation_cfg)
    : data_(data),
      cfg_(cfg),
      validation_cfg_(validation_cfg),
      ranges_(split_ranges(*data.log, data.split)),
      encoder_(encoder_cfg,
               tgn::TimeScale::from_events(
                   std::span(data.log->events).subspan(ranges_.begin, ranges_.train_end - ranges_.begin),
                   data.log->nodes),
               cfg.seed),
      state_(data.log->nodes.size(), encoder_cfg.memory_dim, data.split.start) {
  cfg_.validate();
  validation_cfg_.validate();
  if (ranges_.train_end == ranges_.begin) {
    throw EmptySplitError(fmt::format("period {} has no training events", data.split.period_index));
  }
}

EpochLog Trainer::train_epoch(int epoch) {
  const auto started = std::chrono::steady_clock::now();
  const graph::EventLog& log = *data_.log;
  const graph::NodeSpace& nodes = log.nodes;
  const bool use_bpr = cfg_.alpha < 1.0;
  const bool use_cl = cfg_.alpha > 0.0;
  ad::AdamConfig adam;
  adam.learning_rate = cfg_.learning_rate;

  state_.reset();
  EpochLog result;
  result.epoch = epoch;
  double loss_sum = 0.0, bpr_sum = 0.0, cl_sum = 0.0;
  std::size_t bpr_n = 0, cl_n = 0;

  for (std::size_t b = ranges_.begin; b < ranges_.train_end; b += cfg_.batch_size) {
    const std::size_t e = std::min(ranges_.train_end, b + cfg_.batch_size);
    const auto batch = std::span(log.events).subspan(b, e - b);
    const auto items = unique_items(batch);

    ad::Tape tape;
    ad::TapeScope scope(tape);
    try {
      tgn::BatchContext ctx = encoder_.begin_batch(state_);

      std::map<std::pair<NodeIndex, Timestamp>, long> row;
      std::vector<tgn::Query> queries;
      auto row_for = [&](NodeIndex node, Timestamp t) {
        auto [it, inserted] = row.try_emplace({node, t}, static_cast<long>(queries.size()));
        if (inserted) queries.push_back({node, t});
        return it->second;
      };
      std::vector<ExampleRows> examples;
      examples.reserve(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& ev = batch[i];
        Rng rng = make_rng(cfg_.seed, "train", static_cast<std::uint64_t>(epoch), b + i);
        ExampleRows ex;
        ex.user = row_for(nodes.user_node(ev.user), ev.timestamp);
        ex.positive = row_for(nodes.item_node(ev.item), ev.timestamp);
        if (use_bpr) {
          for (ItemIndex x : sample_bpr_negatives(*data_.ledger, ev.user, ev.timestamp, items,
                                                  cfg_.bpr_negatives, rng)) {
            ex.negatives.push_back(row_for(nodes.item_node(x), ev.timestamp));
          }
        }
        if (use_cl) {
          const auto pair = sampler::sample_pair(*data_.market, *data_.ledger, ev.user, ev.item,
                                                 ev.timestamp, items, cfg_.sampler, rng);
          if (!pair.empty()) {
            for (ItemIndex p : pair.positives) {
              ex.pair_positives.push_back(row_for(nodes.item_node(p), ev.timestamp));
            }
            for (ItemIndex n : pair.negatives) {
              ex.pair_negatives.push_back(row_for(nodes.item_node(n), ev.timestamp));
            }
          }
        }
        examples.push_back(std::move(ex));
      }

      const ad::Tensor z = encoder_.embed(ctx, queries);
      const BatchLoss loss = batch_loss(z, examples, cfg_.alpha, cfg_.temperature,
                                        cfg_.canonical_ntxent);
      if (!std::isfinite(loss.total.item())) throw NumericalError("non-finite batch loss");
      tape.backward(loss.total);
      encoder_.params().adam_step(adam);
      encoder_.commit_batch(state_, ctx, batch, nodes);

      loss_sum += loss.total.item() * static_cast<double>(batch.size());
      bpr_sum += loss.bpr_sum;
      cl_sum += loss.cl_sum;
      bpr_n += loss.bpr_terms;
      cl_n += loss.cl_terms;
      result.examples += batch.size();
    } catch (const NumericalError& err) {
      throw NumericalError(fmt::format(
          "{} at epoch {}, events [{}, {}), first timestamp {}\nparameters:\n{}", err.what(), epoch,
          b, e, batch.front().timestamp, parameter_summary(encoder_.params())));
    }
  }
  encoder_.flush(state_);

  result.mean_loss = result.examples ? loss_sum / static_cast<double>(result.examples) : 0.0;
  result.mean_bpr = use_bpr && bpr_n ? bpr_sum / static_cast<double>(bpr_n) : kNaN;
  result.mean_cl = use_cl && cl_n ? cl_sum / static_cast<double>(cl_n) : kNaN;
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

TrainResult Trainer::run(const std::function<void(const EpochLog&)>& on_epoch) {
  TrainResult result;
  result.time_scale = encoder_.time_scale();
  // The untrained model's memory comes from a replay with initial weights.
  state_.reset();
  eval::replay(encoder_, state_, *data_.log, ranges_.begin, ranges_.train_end, cfg_.batch_size);
  encoder_.flush(state_);
  result.checkpoints.push_back({0, encoder_.params().to_json(), tgn::memory_to_json(state_)});

  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    EpochLog entry = train_epoch(epoch);
    result.checkpoints.push_back({epoch, encoder_.params().to_json(), tgn::memory_to_json(state_)});

    tgn::TemporalState snapshot = state_;
    eval::ModelScorer scorer(encoder_, snapshot, data_.log->nodes);
    const auto report = eval::evaluate(*data_.market, *data_.log, *data_.ledger, ranges_.train_end,
                                       ranges_.validation_end, scorer, validation_cfg_);
    result.validation.push_back({epoch, report.hr(5), report.p_sharpe(5)});
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }

  result.selected = result.validation.empty() ? 0 : select_model(result.validation) + 1;
  const Checkpoint& chosen = result.checkpoints[result.selected];
  encoder_.params().load_json(chosen.params);
  restore_state(chosen, *data_.log, ranges_.begin, ranges_.train_end, state_);
  return result;
}

void restore_state(const Checkpoint& checkpoint, const graph::EventLog& log, std::size_t begin,
                   std::size_t end, tgn::TemporalState& state) {
  tgn::memory_from_json(checkpoint.memory, state);
  for (std::size_t i = begin; i < end; ++i) state.neighbors.insert(log.events[i], log.nodes);
}

}  // namespace pfotgn::train
