// Experiment front end: dataset synthesis/ingestion, training, ablations,
// horizon/window sweeps, incident simulation and figure emission.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dclstm/baselines.hpp"
#include "dclstm/data.hpp"
#include "dclstm/model.hpp"
#include "dclstm/scenario.hpp"
#include "dclstm/serialize.hpp"
#include "dclstm/svg.hpp"
#include "dclstm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dclstm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------- run directory + manifest ----------

struct RunContext {
  fs::path dir;
  json manifest;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  explicit RunContext(const std::string& out_dir, const std::string& command,
                      std::uint64_t seed) {
    if (!out_dir.empty()) {
      dir = out_dir;
    } else {
      for (int i = 1;; ++i) {
        fs::path candidate = fs::path("runs") / (command + "-" + std::to_string(i));
        if (!fs::exists(candidate)) { dir = candidate; break; }
      }
    }
    fs::create_directories(dir);
    manifest["command"] = command;
    manifest["seed"] = seed;
    manifest["config"] = json::object();
    manifest["inputs"] = json::object();
    manifest["outputs"] = json::object();
  }

  void config(const std::string& key, const json& v) { manifest["config"][key] = v; }
  void input(const std::string& path) {
    manifest["inputs"][path] = fnv1a_file(path);
  }
  void output(const fs::path& path) {
    manifest["outputs"][path.string()] = fnv1a_file(path.string());
  }

  fs::path write_text(const std::string& name, const std::string& content) {
    const fs::path p = dir / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    out.close();
    output(p);
    return p;
  }

  void finish() {
    const auto dt = std::chrono::steady_clock::now() - t0;
    manifest["wall_time_seconds"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(dt).count() / 1000.0;
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
    std::cout << "wrote " << (dir / "manifest.json").string() << "\n";
  }
};

// ---------- dataset cache ----------

void save_dataset(const std::string& path, const CorridorDataset& ds, const json& extra) {
  json header;
  header["kind"] = "dataset";
  header["sites"] = ds.sites;
  json days = json::array();
  for (const Date& d : ds.days) days.push_back(date_str(d));
  header["days"] = days;
  header["extra"] = extra;
  Tensor grid(Shape{ds.n_sites(), ds.n_days(), kSlotsPerDay, kChannels}, ds.grid);
  Tensor prov(Shape{ds.n_sites(), ds.n_days(), kSlotsPerDay});
  for (std::size_t i = 0; i < ds.provenance.size(); ++i)
    prov[i] = static_cast<double>(ds.provenance[i]);
  write_container(path, header, {{"grid", &grid}, {"prov", &prov}});
}

CorridorDataset load_dataset(const std::string& path) {
  Container c;
  try {
    c = read_container(path);
  } catch (const std::exception& e) {
    throw DataError(std::string("cannot read dataset cache: ") + e.what());
  }
  if (c.header.value("kind", "") != "dataset")
    throw DataError("container at " + path + " is not a dataset cache");
  CorridorDataset ds;
  ds.sites = c.header["sites"].get<std::vector<std::string>>();
  for (const auto& s : c.header["days"]) {
    auto d = parse_date(s.get<std::string>());
    if (!d) throw DataError("bad date in dataset cache: " + s.get<std::string>());
    ds.days.push_back(*d);
  }
  ds.grid = c.array("grid").vec();
  const Tensor& prov = c.array("prov");
  ds.provenance.resize(prov.size());
  for (std::size_t i = 0; i < prov.size(); ++i)
    ds.provenance[i] = static_cast<std::uint8_t>(prov[i]);
  if (ds.grid.size() != ds.n_sites() * ds.n_days() * kSlotsPerDay * kChannels)
    throw DataError("dataset cache grid size does not match its site/day lists");
  return ds;
}

// ---------- shared helpers ----------

struct Split {
  std::vector<std::size_t> train, val, test;
};

Split split_days(std::size_t days, long train_n, long val_n, long test_n) {
  // defaults scale the canonical 35/5/2 proportions
  if (test_n < 0) test_n = std::max<long>(1, std::lround(days * 2.0 / 42.0));
  if (val_n < 0) val_n = std::max<long>(1, std::lround(days * 5.0 / 42.0));
  if (train_n < 0) train_n = static_cast<long>(days) - val_n - test_n;
  if (train_n <= 0 || train_n + val_n + test_n > static_cast<long>(days))
    throw DataError("split does not fit the dataset: " + std::to_string(days) + " days");
  Split s;
  for (long i = 0; i < train_n; ++i) s.train.push_back(i);
  for (long i = 0; i < val_n; ++i) s.val.push_back(train_n + i);
  for (long i = 0; i < test_n; ++i) s.test.push_back(train_n + val_n + i);
  return s;
}

std::vector<std::size_t> channels_for(Variant v) {
  if (v == Variant::SpeedOnly) return {kSpeedChannel};
  if (v == Variant::FlowOnly) return {0, 1, 2, 3, 4};
  return all_channels();
}

std::array<std::size_t, 3> parse_widths(const std::string& s) {
  std::array<std::size_t, 3> w{};
  std::istringstream is(s);
  std::string tok;
  std::size_t i = 0;
  while (std::getline(is, tok, ',') && i < 3) w[i++] = std::stoul(tok);
  if (i != 3) throw DataError("--widths needs three comma-separated integers");
  return w;
}

std::string epoch_csv(const Model& model, const FitResult& fit_result) {
  std::ostringstream os;
  os << "# variant=" << variant_name(model.spec().variant)
     << " params_total=" << model.total_params() << " best_epoch=" << fit_result.best_epoch
     << "\n";
  os << "epoch,train_loss,val_mse,val_mae\n";
  os.setf(std::ios::fixed);
  os.precision(10);
  for (const EpochRow& r : fit_result.history)
    os << r.epoch << "," << r.train_loss << "," << r.val_mse << "," << r.val_mae << "\n";
  return os.str();
}

struct TrainedRun {
  Model model;
  FitResult fit_result;
  Scaler scaler;
  Split split;
};

struct TrainOpts {
  std::string variant = "dclstm-t";
  std::size_t window = 4;
  std::size_t horizon = 1;
  std::string widths = "32,64,128";
  double lr = 0.003;
  double lambda = 0.0002;
  std::size_t batch = 4;
  int epochs = 50;
  int patience = 5;
  long train_days = -1, val_days = -1, test_days = -1;
};

TrainedRun run_training(const CorridorDataset& ds, const TrainOpts& opts, std::uint64_t seed) {
  const Variant variant = variant_from_name(opts.variant);
  ModelSpec mspec = make_model_spec(variant, ds.n_sites(), opts.window, opts.horizon);
  mspec.conv_widths = parse_widths(opts.widths);
  mspec.l2_lambda = opts.lambda;
  mspec.init_seed = seed;

  TrainedRun run{Model::build(mspec), {}, {}, split_days(ds.n_days(), opts.train_days,
                                                         opts.val_days, opts.test_days)};
  run.scaler = fit_scaler(ds, run.split.train);
  const auto channels = channels_for(variant);
  auto samples_for = [&](const std::vector<std::size_t>& days) {
    auto s = make_samples(ds, opts.window, opts.horizon, days, channels);
    scale_samples(s, run.scaler, channels);
    return s;
  };
  const auto train_samples = samples_for(run.split.train);
  const auto val_samples = samples_for(run.split.val);

  TrainConfig cfg;
  cfg.learning_rate = opts.lr;
  cfg.l2_lambda = opts.lambda;
  cfg.batch_size = opts.batch;
  cfg.max_epochs = opts.epochs;
  cfg.patience = opts.patience;
  cfg.seed = seed;
  std::cout << "training " << opts.variant << ": params_total=" << run.model.total_params()
            << " train=" << train_samples.size() << " val=" << val_samples.size()
            << " samples\n";
  run.fit_result = fit(run.model, train_samples, val_samples, cfg);
  return run;
}

void add_train_opts(CLI::App* cmd, TrainOpts& o) {
  cmd->add_option("--variant", o.variant, "model variant");
  cmd->add_option("--window", o.window, "history window n, in 15-min slots");
  cmd->add_option("--horizon", o.horizon, "forecast lead h, in 15-min slots");
  cmd->add_option("--widths", o.widths, "conv stack widths, three comma-separated values");
  cmd->add_option("--lr", o.lr, "Adam learning rate");
  cmd->add_option("--lambda", o.lambda, "L2 penalty on the final dense weights");
  cmd->add_option("--batch", o.batch, "mini-batch size");
  cmd->add_option("--epochs", o.epochs, "max training epochs");
  cmd->add_option("--patience", o.patience, "early-stopping patience");
  cmd->add_option("--train-days", o.train_days, "training day count (default: 35/42 of days)");
  cmd->add_option("--val-days", o.val_days, "validation day count");
  cmd->add_option("--test-days", o.test_days, "test day count");
}

void manifest_train_opts(RunContext& rc, const TrainOpts& o) {
  rc.config("variant", o.variant);
  rc.config("window", o.window);
  rc.config("horizon", o.horizon);
  rc.config("widths", o.widths);
  rc.config("lr", o.lr);
  rc.config("lambda", o.lambda);
  rc.config("batch", o.batch);
  rc.config("epochs", o.epochs);
  rc.config("patience", o.patience);
}

std::vector<SfcParams> sfc_params_for_sites(const CorridorDataset& ds,
                                            const std::string& table_path) {
  SfcParams d4;  // Rural Motorway D4
  SfcParams d3 = d4;
  d3.capacity_pcu = 6990.0;  // Rural Motorway D3
  std::vector<SfcParams> out(ds.n_sites(), d4);
  if (table_path.empty()) return out;
  std::ifstream in(table_path);
  if (!in) throw DataError("cannot open sfc table " + table_path);
  std::string line;
  std::getline(in, line);  // header: site_id,table3_row
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("bad sfc table line: " + line);
    const std::string site = line.substr(0, comma);
    const std::string row = line.substr(comma + 1);
    const auto it = std::find(ds.sites.begin(), ds.sites.end(), site);
    if (it == ds.sites.end()) throw DataError("sfc table names unknown site " + site);
    if (row == "D4") out[it - ds.sites.begin()] = d4;
    else if (row == "D3") out[it - ds.sites.begin()] = d3;
    else throw DataError("sfc table row must be D3 or D4, got " + row);
  }
  return out;
}

struct BaselineMetrics {
  double mse_norm = 0.0, mae_norm = 0.0;
};

// Baselines run on raw (mph) samples; metrics are reported in normalized
// units (mph / 100) to stay commensurate with the model rows.
BaselineMetrics baseline_metrics(const std::vector<Sample>& raw_samples, const Predictor& f) {
  const EvalReport r = evaluate_predictions(raw_samples, f);
  return {r.mse / 1e4, r.mae / 100.0};
}

// ---------- commands ----------

int cmd_synth(const std::string& out_dir, std::uint64_t seed, std::size_t sites, std::size_t days,
              double events_per_day, bool no_dow) {
  RunContext rc(out_dir, "synth", seed);
  rc.config("sites", sites);
  rc.config("days", days);
  rc.config("events_per_day", events_per_day);
  rc.config("dow_modifiers", !no_dow);

  SynthParams params;
  params.sites = sites;
  params.days = days;
  params.events_per_day = events_per_day;
  params.dow_modifiers = !no_dow;
  if (sites < 60) params.ramp_sites = {sites / 4, sites / 2};
  CorridorDataset ds = synthesize_corridor(seed, params);

  const std::size_t expected = sites * days * kSlotsPerDay;
  std::ostringstream qa;
  qa << "synthetic corridor\n"
     << "sites: " << sites << "\ndays: " << days << "\nexpected records: " << expected
     << "\nvalid records: " << expected << "\nmissing rate: 0.00%\n";
  rc.write_text("qa_report.txt", qa.str());

  const fs::path cache = rc.dir / "dataset.bin";
  save_dataset(cache.string(), ds, {{"seed", seed}, {"synthetic", true}});
  rc.output(cache);
  rc.finish();
  std::cout << qa.str();
  return kExitOk;
}

int cmd_ingest(const std::string& out_dir, std::uint64_t seed,
               const std::vector<std::string>& inputs, double max_missing) {
  RunContext rc(out_dir, "ingest", seed);
  rc.config("max_missing", max_missing);
  for (const auto& p : inputs) rc.input(p);

  IngestStats stats;
  std::vector<SiteDay> sitedays = ingest_csv(inputs, &stats);
  QualityResult qr = quality_filter(sitedays, max_missing);
  CorridorDataset ds = assemble(qr.kept);
  const auto infill_warnings = infill(ds);

  std::ostringstream qa;
  qa << render_qa(qr.report);
  qa << "invalid rows: " << stats.invalid_rows << "\n";
  qa << "consistency warnings: " << stats.consistency_warnings << "\n";
  for (const auto& w : infill_warnings) qa << "infill: " << w << "\n";
  rc.write_text("qa_report.txt", qa.str());

  const fs::path cache = rc.dir / "dataset.bin";
  save_dataset(cache.string(), ds, {{"synthetic", false}});
  rc.output(cache);
  rc.finish();
  std::cout << qa.str();
  return kExitOk;
}

int cmd_train(const std::string& out_dir, std::uint64_t seed, const std::string& dataset,
              const TrainOpts& opts) {
  RunContext rc(out_dir, "train", seed);
  rc.input(dataset);
  manifest_train_opts(rc, opts);

  const CorridorDataset ds = load_dataset(dataset);
  TrainedRun run = run_training(ds, opts, seed);

  rc.write_text("epochs.csv", epoch_csv(run.model, run.fit_result));
  CheckpointExtra extra;
  extra.has_scaler = true;
  extra.scaler = run.scaler;
  extra.seed = seed;
  extra.epoch = run.fit_result.best_epoch;
  for (const EpochRow& r : run.fit_result.history) extra.val_mse_history.push_back(r.val_mse);
  const fs::path ckpt = rc.dir / "checkpoint.bin";
  save_checkpoint(run.model, ckpt.string(), extra);
  rc.output(ckpt);
  rc.finish();
  std::cout << "best epoch " << run.fit_result.best_epoch << " val_mse "
            << run.fit_result.best_val_mse << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& out_dir, std::uint64_t seed, const std::string& dataset,
                 const std::string& checkpoint, const std::string& split_name, long train_days,
                 long val_days, long test_days) {
  RunContext rc(out_dir, "evaluate", seed);
  rc.input(dataset);
  rc.input(checkpoint);
  rc.config("split", split_name);

  const CorridorDataset ds = load_dataset(dataset);
  CheckpointExtra extra;
  Model model = load_checkpoint(checkpoint, &extra);
  if (!extra.has_scaler) throw DataError("checkpoint carries no scaler; cannot evaluate");

  const Split split = split_days(ds.n_days(), train_days, val_days, test_days);
  const std::vector<std::size_t>* days = &split.val;
  if (split_name == "train") days = &split.train;
  else if (split_name == "test") days = &split.test;
  else if (split_name != "val") throw DataError("--split must be train, val or test");

  const auto channels = channels_for(model.spec().variant);
  auto samples = make_samples(ds, model.spec().window, model.spec().horizon, *days, channels);
  scale_samples(samples, extra.scaler, channels);
  const EvalReport report = evaluate(model, samples);

  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(8);
  os << "split,samples,mse,mae,mae_mph\n"
     << split_name << "," << samples.size() << "," << report.mse << "," << report.mae << ","
     << report.mae * extra.scaler.speed_divisor << "\n";
  rc.write_text("metrics.csv", os.str());
  rc.finish();
  std::cout << os.str();
  return kExitOk;
}

int cmd_ablate(const std::string& out_dir, std::uint64_t seed, const std::string& dataset,
               TrainOpts opts, bool skip_training, const std::string& sfc_table) {
  RunContext rc(out_dir, "ablate", seed);
  rc.input(dataset);
  manifest_train_opts(rc, opts);
  rc.config("skip_training", skip_training);

  const CorridorDataset ds = load_dataset(dataset);
  const Split split = split_days(ds.n_days(), opts.train_days, opts.val_days, opts.test_days);
  const Scaler scaler = fit_scaler(ds, split.train);
  const auto raw_val = make_samples(ds, opts.window, opts.horizon, split.val, all_channels());

  struct Row {
    std::string id, description;
    double mse, mae;
  };
  std::vector<Row> rows;

  if (!skip_training) {
    const std::vector<std::pair<std::string, std::string>> tests = {
        {"a", "dclstm-t"},        {"b", "dclstm-t-conv2d"}, {"c", "clstm-s-t"},
        {"d", "clstm-t-t"},       {"e", "dclstm"},          {"f", "cnn-t"},
        {"j", "speed-only"},      {"k", "flow-only"},
    };
    for (const auto& [id, name] : tests) {
      opts.variant = name;
      TrainedRun run = run_training(ds, opts, seed);
      const auto channels = channels_for(run.model.spec().variant);
      auto val = make_samples(ds, opts.window, opts.horizon, split.val, channels);
      scale_samples(val, run.scaler, channels);
      const EvalReport r = evaluate(run.model, val);
      rows.push_back({id, name, r.mse, r.mae});
      rc.write_text("epochs_" + name + ".csv", epoch_csv(run.model, run.fit_result));
    }
  }

  const BaselineMetrics naive = baseline_metrics(raw_val, naive_forecast);
  rows.push_back({"h", "naive-forecast", naive.mse_norm, naive.mae_norm});
  const auto sfc = sfc_params_for_sites(ds, sfc_table);
  const BaselineMetrics sfcm =
      baseline_metrics(raw_val, [&](const Sample& s) { return sfc_predict(s, sfc); });
  rows.push_back({"i", "speed-flow-curve", sfcm.mse_norm, sfcm.mae_norm});

  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(8);
  os << "test,description,mse,mae\n";
  for (const Row& r : rows) os << r.id << "," << r.description << "," << r.mse << "," << r.mae << "\n";
  rc.write_text("ablation.csv", os.str());
  rc.finish();
  std::cout << os.str();
  return kExitOk;
}

int cmd_sweep(const std::string& what, const std::string& out_dir, std::uint64_t seed,
              const std::string& dataset, TrainOpts opts, const std::string& values_csv) {
  RunContext rc(out_dir, "sweep-" + what, seed);
  rc.input(dataset);
  manifest_train_opts(rc, opts);
  rc.config("values", values_csv);

  std::vector<std::size_t> values;
  std::istringstream is(values_csv);
  std::string tok;
  while (std::getline(is, tok, ',')) values.push_back(std::stoul(tok));
  if (values.empty()) throw DataError("sweep needs at least one value");

  const CorridorDataset ds = load_dataset(dataset);
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(8);
  os << what << ",samples_per_day,mse,mae\n";
  std::vector<double> maes;
  for (std::size_t v : values) {
    if (what == "horizon") opts.horizon = v;
    else opts.window = v;
    TrainedRun run = run_training(ds, opts, seed);
    const auto channels = channels_for(run.model.spec().variant);
    auto val = make_samples(ds, opts.window, opts.horizon, split_days(ds.n_days(),
                            opts.train_days, opts.val_days, opts.test_days).val, channels);
    scale_samples(val, run.scaler, channels);
    const EvalReport r = evaluate(run.model, val);
    os << v << "," << (kSlotsPerDay - opts.window - opts.horizon + 1) << "," << r.mse << ","
       << r.mae << "\n";
    maes.push_back(r.mae);
  }
  rc.write_text("sweep.csv", os.str());
  rc.write_text("sweep.svg",
                svg::line_chart("validation MAE vs " + what, {{"val MAE", maes, "#d62728"}}));
  rc.finish();
  std::cout << os.str();
  return kExitOk;
}

int cmd_simulate(const std::string& out_dir, std::uint64_t seed, const std::string& dataset,
                 const std::string& checkpoint, const std::string& scenario, long day,
                 long sample_idx, double threshold) {
  RunContext rc(out_dir, "simulate", seed);
  rc.input(dataset);
  rc.input(checkpoint);
  rc.input(scenario);
  rc.config("day", day);
  rc.config("sample", sample_idx);
  rc.config("threshold_mph", threshold);

  const CorridorDataset ds = load_dataset(dataset);
  CheckpointExtra extra;
  Model model = load_checkpoint(checkpoint, &extra);
  if (!extra.has_scaler) throw DataError("checkpoint carries no scaler; cannot simulate");
  if (model.spec().channels != kChannels)
    throw DataError("simulate needs a full-channel model variant");

  const std::size_t d = day < 0 ? ds.n_days() - 1 : static_cast<std::size_t>(day);
  if (d >= ds.n_days()) throw DataError("--day outside the dataset");
  const auto raw = make_samples(ds, model.spec().window, model.spec().horizon, {d},
                                all_channels());
  const std::size_t si = sample_idx < 0 ? raw.size() / 2 : static_cast<std::size_t>(sample_idx);
  if (si >= raw.size()) throw DataError("--sample outside the day");

  const IncidentSpec incident = parse_incident_file(scenario);
  const ImpactReport report = assess(model, raw[si], incident, extra.scaler, threshold);

  rc.write_text("impact.csv", impact_report_csv(report));
  rc.write_text("impact.svg",
                svg::line_chart("predicted speed, baseline vs incident",
                                {{"baseline mph", report.baseline_mph, "#1f77b4"},
                                 {"incident mph", report.incident_mph, "#d62728", true}}));
  std::ostringstream os;
  os << "upstream_extent_sites," << report.upstream_extent << "\n"
     << "propagation_speed_kmh," << report.propagation_speed_kmh << "\n";
  rc.write_text("summary.csv", os.str());
  rc.finish();
  std::cout << os.str();
  return kExitOk;
}

int cmd_plot(const std::string& out_dir, std::uint64_t seed, const std::string& dataset,
             const std::string& checkpoint, long day, long site) {
  RunContext rc(out_dir, "plot", seed);
  rc.input(dataset);
  rc.config("day", day);
  rc.config("site", site);

  const CorridorDataset ds = load_dataset(dataset);
  const std::size_t d = day < 0 ? 0 : static_cast<std::size_t>(day);
  if (d >= ds.n_days()) throw DataError("--day outside the dataset");

  // flow-speed scatter over every observed cell of the chosen day
  std::vector<double> flows, speeds;
  std::ostringstream scsv;
  scsv << "site,slot,total_flow,speed_mph\n";
  for (std::size_t s = 0; s < ds.n_sites(); ++s)
    for (std::size_t k = 0; k < kSlotsPerDay; ++k) {
      if (ds.prov(s, d, k) == Provenance::Missing) continue;
      flows.push_back(ds.at(s, d, k, 4));
      speeds.push_back(ds.at(s, d, k, kSpeedChannel));
      scsv << s << "," << k << "," << flows.back() << "," << speeds.back() << "\n";
    }
  rc.write_text("flow_speed.csv", scsv.str());
  rc.write_text("flow_speed.svg", svg::scatter("flow vs speed", "total flow per 15 min",
                                               "speed (mph)", flows, speeds));

  // space-time heatmaps, sites x 92
  for (const auto& [channel, name] : {std::pair<std::size_t, const char*>{kSpeedChannel, "speed"},
                                      {std::size_t{4}, "flow"}}) {
    std::vector<double> cells(ds.n_sites() * kSlotsPerDay);
    std::ostringstream hcsv;
    hcsv << "site,slot,value\n";
    for (std::size_t s = 0; s < ds.n_sites(); ++s)
      for (std::size_t k = 0; k < kSlotsPerDay; ++k) {
        cells[s * kSlotsPerDay + k] = ds.at(s, d, k, channel);
        hcsv << s << "," << k << "," << cells[s * kSlotsPerDay + k] << "\n";
      }
    rc.write_text(std::string("heatmap_") + name + ".csv", hcsv.str());
    rc.write_text(std::string("heatmap_") + name + ".svg",
                  svg::heatmap(std::string(name) + " by site and slot", ds.n_sites(),
                               kSlotsPerDay, cells));
  }

  // prediction-vs-observed with residual panel, if a checkpoint is given
  if (!checkpoint.empty()) {
    rc.input(checkpoint);
    CheckpointExtra extra;
    Model model = load_checkpoint(checkpoint, &extra);
    if (!extra.has_scaler) throw DataError("checkpoint carries no scaler; cannot plot residuals");
    const auto channels = channels_for(model.spec().variant);
    auto samples = make_samples(ds, model.spec().window, model.spec().horizon, {d}, channels);
    scale_samples(samples, extra.scaler, channels);
    const EvalReport report = evaluate(model, samples);
    const std::size_t s = site < 0 ? ds.n_sites() / 2 : static_cast<std::size_t>(site);
    if (s >= ds.n_sites()) throw DataError("--site outside the corridor");

    std::vector<double> obs, pred, resid;
    std::ostringstream pcsv;
    pcsv << "sample,anchor_slot,observed,predicted,residual\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double o = samples[i].target[s * model.spec().horizon + model.spec().horizon - 1];
      const double f = report.predictions[i][s];
      obs.push_back(o);
      pred.push_back(f);
      resid.push_back(o - f);
      pcsv << i << "," << samples[i].anchor_slot << "," << o << "," << f << "," << o - f << "\n";
    }
    rc.write_text("prediction_site.csv", pcsv.str());
    rc.write_text("prediction_site.svg",
                  svg::line_chart("site " + std::to_string(s) + ": observed vs predicted",
                                  {{"observed", obs, "#1f77b4"},
                                   {"predicted", pred, "#d62728", true},
                                   {"residual", resid, "#7f7f7f"}}));
  }
  rc.finish();
  return kExitOk;
}

// ---------- config file merging ----------

std::vector<std::string> merge_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;
  std::ifstream in(config_path);
  if (!in) throw DataError("cannot open config file " + config_path);
  std::vector<std::string> extra;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("config lines must be key=value: " + line);
    extra.push_back("--" + line.substr(0, eq) + "=" + line.substr(eq + 1));
  }
  // config entries go right after the subcommand token so explicit flags,
  // parsed later with take-last semantics, win
  std::vector<std::string> merged;
  bool inserted = false;
  for (const auto& a : args) {
    merged.push_back(a);
    if (!inserted && !a.empty() && a[0] != '-') {
      merged.insert(merged.end(), extra.begin(), extra.end());
      inserted = true;
    }
  }
  if (!inserted) merged.insert(merged.end(), extra.begin(), extra.end());
  return merged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"corridor traffic-speed forecasting experiments"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.fallthrough();
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string config_path, out_dir;
  int threads = 1;
  app.add_option("--seed", seed, "master RNG seed");
  app.add_option("--config", config_path, "key=value config file; explicit flags win");
  app.add_option("--out-dir", out_dir, "run directory (default: runs/<command>-<k>)");
  app.add_option("--threads", threads, "worker threads (commands are single-process)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corridor dataset");
  std::size_t sy_sites = 60, sy_days = 42;
  double sy_events = 2.0;
  bool sy_no_dow = false;
  synth->add_option("--sites", sy_sites, "corridor site count");
  synth->add_option("--days", sy_days, "weekday count");
  synth->add_option("--events-per-day", sy_events, "mean random congestion events per day");
  synth->add_flag("--no-dow", sy_no_dow, "disable day-of-week demand modifiers");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "ingest WebTRIS-style daily CSV reports");
  std::vector<std::string> in_files;
  double in_max_missing = 0.3;
  ingest->add_option("--input", in_files, "input CSV files, downstream to upstream")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  ingest->add_option("--max-missing", in_max_missing, "per-site missing-fraction threshold");

  // train / ablate / sweeps share TrainOpts
  auto* train_cmd = app.add_subcommand("train", "train one variant/horizon/window combination");
  std::string tr_dataset;
  TrainOpts tr_opts;
  train_cmd->add_option("--dataset", tr_dataset, "dataset cache")->required();
  add_train_opts(train_cmd, tr_opts);

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
  std::string ev_dataset, ev_checkpoint, ev_split = "val";
  long ev_train_days = -1, ev_val_days = -1, ev_test_days = -1;
  eval_cmd->add_option("--dataset", ev_dataset, "dataset cache")->required();
  eval_cmd->add_option("--checkpoint", ev_checkpoint, "trained checkpoint")->required();
  eval_cmd->add_option("--split", ev_split, "train, val or test");
  eval_cmd->add_option("--train-days", ev_train_days, "training day count");
  eval_cmd->add_option("--val-days", ev_val_days, "validation day count");
  eval_cmd->add_option("--test-days", ev_test_days, "test day count");

  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare the full variant set");
  std::string ab_dataset, ab_sfc_table;
  TrainOpts ab_opts;
  bool ab_skip = false;
  ablate_cmd->add_option("--dataset", ab_dataset, "dataset cache")->required();
  add_train_opts(ablate_cmd, ab_opts);
  ablate_cmd->add_flag("--skip-training", ab_skip, "emit only the analytic baseline rows");
  ablate_cmd->add_option("--sfc-table", ab_sfc_table, "per-site CSV site_id,table3_row");

  auto* sweep_h = app.add_subcommand("sweep-horizon", "train across forecast horizons");
  auto* sweep_w = app.add_subcommand("sweep-window", "train across history windows");
  std::string sh_dataset, sh_values = "1,2,3,4,5,6", sw_dataset, sw_values = "2,4,8,12";
  TrainOpts sh_opts, sw_opts;
  sweep_h->add_option("--dataset", sh_dataset, "dataset cache")->required();
  sweep_h->add_option("--values", sh_values, "horizons in slots, comma separated");
  add_train_opts(sweep_h, sh_opts);
  sweep_w->add_option("--dataset", sw_dataset, "dataset cache")->required();
  sweep_w->add_option("--values", sw_values, "windows in slots, comma separated");
  add_train_opts(sweep_w, sw_opts);

  auto* sim_cmd = app.add_subcommand("simulate", "incident what-if on a trained checkpoint");
  std::string si_dataset, si_checkpoint, si_scenario;
  long si_day = -1, si_sample = -1;
  double si_threshold = -5.0;
  sim_cmd->add_option("--dataset", si_dataset, "dataset cache")->required();
  sim_cmd->add_option("--checkpoint", si_checkpoint, "trained checkpoint")->required();
  sim_cmd->add_option("--scenario", si_scenario, "incident key=value file")->required();
  sim_cmd->add_option("--day", si_day, "day index (default: last)");
  sim_cmd->add_option("--sample", si_sample, "sample index within the day (default: middle)");
  sim_cmd->add_option("--threshold", si_threshold, "upstream-extent speed-delta threshold, mph");

  auto* plot_cmd = app.add_subcommand("plot", "emit CSV/SVG figures from a dataset");
  std::string pl_dataset, pl_checkpoint;
  long pl_day = -1, pl_site = -1;
  plot_cmd->add_option("--dataset", pl_dataset, "dataset cache")->required();
  plot_cmd->add_option("--checkpoint", pl_checkpoint, "optional checkpoint for residual panels");
  plot_cmd->add_option("--day", pl_day, "day index (default: first)");
  plot_cmd->add_option("--site", pl_site, "site for the residual panel (default: middle)");

  try {
    const std::vector<std::string> merged = merge_config(argc, argv);
    std::vector<const char*> cargs{argv[0]};
    for (const auto& a : merged) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());

    if (synth->parsed()) return cmd_synth(out_dir, seed, sy_sites, sy_days, sy_events, sy_no_dow);
    if (ingest->parsed()) return cmd_ingest(out_dir, seed, in_files, in_max_missing);
    if (train_cmd->parsed()) return cmd_train(out_dir, seed, tr_dataset, tr_opts);
    if (eval_cmd->parsed())
      return cmd_evaluate(out_dir, seed, ev_dataset, ev_checkpoint, ev_split, ev_train_days,
                          ev_val_days, ev_test_days);
    if (ablate_cmd->parsed())
      return cmd_ablate(out_dir, seed, ab_dataset, ab_opts, ab_skip, ab_sfc_table);
    if (sweep_h->parsed()) return cmd_sweep("horizon", out_dir, seed, sh_dataset, sh_opts, sh_values);
    if (sweep_w->parsed()) return cmd_sweep("window", out_dir, seed, sw_dataset, sw_opts, sw_values);
    if (sim_cmd->parsed())
      return cmd_simulate(out_dir, seed, si_dataset, si_checkpoint, si_scenario, si_day, si_sample,
                          si_threshold);
    if (plot_cmd->parsed()) return cmd_plot(out_dir, seed, pl_dataset, pl_checkpoint, pl_day, pl_site);
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
