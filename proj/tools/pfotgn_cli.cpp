// Command-line front end: data generation, preparation, training,
// evaluation, sweeps, gradient check and single-query recommendation.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "pfotgn/csv.hpp"
#include "pfotgn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pfotgn;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;

  RunConfig resolve() const {
    RunConfig cfg = config_file.empty() ? RunConfig{} : load_run_config(config_file);
    for (const auto& s : sets) cfg.set(s);
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_file, "flat JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", common.sets, "override one config key: key=value (repeatable)");
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = csv::open_for_write(path);
  out << text;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& doc) {
  write_text(path, doc.dump(2) + "\n");
}

std::string config_line(const RunConfig& cfg) { return "config " + cfg.to_json().dump() + "\n"; }

Timestamp parse_time(const std::string& text) {
  if (text.size() == 10) return start_of(parse_iso_date(text));
  if (text.size() == 19 && text[10] == 'T') {
    const Timestamp day = start_of(parse_iso_date(text.substr(0, 10)));
    const int h = std::stoi(text.substr(11, 2));
    const int m = std::stoi(text.substr(14, 2));
    const int s = std::stoi(text.substr(17, 2));
    return day + h * 3600 + m * 60 + s;
  }
  throw ParseError("time must be YYYY-MM-DD or YYYY-MM-DDTHH:MM:SS, got '" + text + "'");
}

int gen_market(const RunConfig& cfg) {
  const auto market = scenario::gen_prices(cfg.market_spec());
  market::write_price_csv(cfg.paths.prices, market.prices);
  scenario::write_market_caps(cfg.paths.caps, market);
  fmt::print("wrote {} assets x {} days to {} and caps to {}\n", market.prices.size(),
             cfg.market.n_days, cfg.paths.prices, cfg.paths.caps);
  return 0;
}

int gen_events(const RunConfig& cfg) {
  scenario::GeneratedMarket market;
  market.prices = market::read_price_csv(cfg.paths.prices);
  for (std::size_t i = 0; i < market.prices.size(); ++i) {
    market.sector.push_back(i % cfg.market.n_sectors);
  }
  const auto events = scenario::gen_events(cfg.behavior_spec(), market);
  graph::write_event_csv(cfg.paths.events, events);
  fmt::print("wrote {} events to {}\n", events.size(), cfg.paths.events);
  return 0;
}

int prep(const RunConfig& cfg) {
  pipeline::RawDataset raw;
  raw.prices = market::read_price_csv(cfg.paths.prices);
  raw.market_caps = scenario::read_market_caps(cfg.paths.caps);
  raw.events = graph::read_event_csv(cfg.paths.events);
  const auto prepared = pipeline::prepare(raw, cfg);
  fs::create_directories(cfg.paths.work_dir);
  graph::write_event_csv(pipeline::prepared_events_path(cfg), prepared.events);
  write_json(pipeline::split_manifest_path(cfg), pipeline::split_manifest(prepared, cfg));
  fmt::print("kept {} of {} events; removed {} users and {} items; {} period(s)\n",
             prepared.events.size(), raw.events.size(), prepared.filter.removed_users.size(),
             prepared.filter.removed_items.size(), prepared.splits.size());
  for (const auto& s : prepared.splits) {
    fmt::print("period {}: {} / {} / {} / {}\n", s.period_index, to_iso_string(day_of(s.start)),
               to_iso_string(day_of(s.train_end)), to_iso_string(day_of(s.validation_end)),
               to_iso_string(day_of(s.end)));
  }
  return 0;
}

int train_cmd(const RunConfig& cfg) {
  pipeline::Dataset data;
  pipeline::load_prepared(cfg, data);
  const fs::path work = cfg.paths.work_dir;
  std::string log_text = config_line(cfg);
  const auto outcome = pipeline::train_model(data, cfg, [&](const train::EpochLog& e) {
    const std::string line = pipeline::epoch_log_line(e);
    fmt::print("{}\n", line);
    std::fflush(stdout);
    log_text += line + "\n";
  });
  for (const auto& m : outcome.result.validation) {
    log_text += fmt::format("validation epoch={} HR@5={} P(SR)@5={}\n", m.epoch,
                            format_number(m.hr5), format_number(m.psr5));
  }
  log_text += fmt::format("selected epoch={}\n", outcome.model.epoch);
  write_text(work / "train_log.txt", log_text);
  for (const auto& c : outcome.result.checkpoints) {
    const pipeline::Model m{cfg.model, outcome.result.time_scale, c.epoch, c.params, c.memory};
    write_json(work / fmt::format("checkpoint_{:03d}.json", c.epoch), pipeline::model_to_json(m, cfg));
  }
  write_json(pipeline::model_path(cfg), pipeline::model_to_json(outcome.model, cfg));
  fmt::print("selected epoch {}; model written to {}\n", outcome.model.epoch,
             pipeline::model_path(cfg).string());
  return 0;
}

pipeline::Model read_model(const RunConfig& cfg) {
  const auto path = pipeline::model_path(cfg);
  std::ifstream in(path);
  if (!in) throw StateError(fmt::format("missing {}; run train first", path.string()));
  const auto doc = nlohmann::ordered_json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ParseError(fmt::format("malformed model file {}", path.string()));
  return pipeline::model_from_json(doc);
}

int eval_cmd(const RunConfig& cfg, const std::string& baseline, const std::string& verdict_path) {
  pipeline::Dataset data;
  pipeline::load_prepared(cfg, data);
  std::vector<eval::InteractionVerdict> verdicts;
  const auto report =
      baseline.empty()
          ? pipeline::evaluate_model(data, cfg, read_model(cfg), &verdicts)
          : pipeline::evaluate_baseline(data, cfg, eval::baseline_from_string(baseline), &verdicts);
  const fs::path out = cfg.paths.out;
  const std::string stem = baseline.empty() ? "report" : "report_" + baseline;
  const std::string text = fmt::format("model {}\n{}{}", baseline.empty() ? "tgn" : baseline,
                                       eval::report_to_text(report), config_line(cfg));
  write_text(out / (stem + ".txt"), text);
  nlohmann::ordered_json doc;
  doc["model"] = baseline.empty() ? "tgn" : baseline;
  doc["report"] = eval::report_to_json(report);
  doc["config"] = cfg.to_json();
  write_json(out / (stem + ".json"), doc);
  if (!verdict_path.empty()) eval::write_verdicts_csv(verdict_path, verdicts, report.ks);
  fmt::print("{}", text);
  if (report.excluded_fraction() > 0.5) {
    fmt::print(stderr, "error: {} of interactions excluded from evaluation\n",
               format_number(report.excluded_fraction()));
    return 3;
  }
  return 0;
}

int sweep_cmd(const RunConfig& cfg, bool alpha) {
  pipeline::Dataset data;
  pipeline::load_prepared(cfg, data);
  const std::string key = alpha ? "alpha" : "negatives";
  const auto rows = alpha ? pipeline::sweep_alpha(data, cfg, cfg.sweep.alphas)
                          : pipeline::sweep_negatives(data, cfg, cfg.sweep.negatives);
  const std::string table = pipeline::sweep_table(rows, key);
  const fs::path out = cfg.paths.out;
  write_text(out / fmt::format("sweep_{}.tsv", key), table);
  write_json(out / fmt::format("sweep_{}.json", key), pipeline::sweep_to_json(rows, key, cfg));
  fmt::print("{}", table);
  return 0;
}

int gradcheck_cmd(const RunConfig& cfg, int dim) {
  const auto report = pipeline::gradcheck_toy(cfg.seed, dim);
  const auto& r = report.result;
  fmt::print("parameters {} coordinates {} loss {}\n", report.parameters, r.coordinates,
             format_number(report.loss));
  fmt::print("max relative error {} at {}[{}] (analytic {}, numeric {})\n",
             format_number(r.max_relative_error), r.worst_parameter, r.worst_index,
             format_number(r.analytic), format_number(r.numeric));
  fmt::print("seconds {}\n", format_number(report.seconds));
  return r.max_relative_error < 1e-4 ? 0 : 1;
}

int recommend_cmd(const RunConfig& cfg, const std::string& user, const std::string& time,
                  std::size_t k) {
  pipeline::Dataset data;
  pipeline::load_prepared(cfg, data);
  const auto rec = pipeline::recommend(data, cfg, read_model(cfg), user, parse_time(time), k);
  if (rec.unseen_user) {
    fmt::print(stderr, "warning: user '{}' has no history; ranking from an empty memory\n", user);
  }
  for (std::size_t i = 0; i < rec.items.size(); ++i) {
    fmt::print("{}\t{}\t{}\n", i + 1, data.market.asset_id(rec.items[i]),
               format_number(rec.scores[i]));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Portfolio-aware temporal graph recommender"};
  app.require_subcommand(1);
  app.footer(config_help());

  Common common;
  auto* gm = app.add_subcommand("gen-market", "generate synthetic prices and market caps");
  auto* ge = app.add_subcommand("gen-events", "generate synthetic interactions from prices");
  auto* pr = app.add_subcommand("prep", "filter the dataset and write the split manifest");
  auto* tr = app.add_subcommand("train", "train, select a checkpoint and write the model");
  auto* ev = app.add_subcommand("eval", "evaluate the model or a baseline on the test window");
  auto* sa = app.add_subcommand("sweep-alpha", "train and evaluate over sweep.alphas");
  auto* sn = app.add_subcommand("sweep-negatives", "train and evaluate over sweep.negatives");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check on a six-node toy graph");
  auto* rc = app.add_subcommand("recommend", "rank unseen items for one user at one time");
  for (auto* cmd : {gm, ge, pr, tr, ev, sa, sn, gc, rc}) add_common(cmd, common);

  std::string baseline, verdicts;
  ev->add_option("--baseline", baseline, "return, sharpe, popularity or random instead of the model");
  ev->add_option("--verdicts", verdicts, "write per-interaction verdicts to this CSV");
  int dim = 8;
  gc->add_option("--dim", dim, "memory and embedding width of the toy model");
  std::string user, time;
  std::size_t k = 5;
  rc->add_option("--user", user, "user id")->required();
  rc->add_option("--time", time, "YYYY-MM-DD or YYYY-MM-DDTHH:MM:SS (UTC)")->required();
  rc->add_option("--k", k, "list length");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = common.resolve();
    if (*gm) return gen_market(cfg);
    if (*ge) return gen_events(cfg);
    if (*pr) return prep(cfg);
    if (*tr) return train_cmd(cfg);
    if (*ev) return eval_cmd(cfg, baseline, verdicts);
    if (*sa) return sweep_cmd(cfg, true);
    if (*sn) return sweep_cmd(cfg, false);
    if (*gc) return gradcheck_cmd(cfg, dim);
    if (*rc) return recommend_cmd(cfg, user, time, k);
  } catch (const std::exception& err) {
    fmt::print(stderr, "error: {}\n", err.what());
    return 2;
  }
  return 1;
}
