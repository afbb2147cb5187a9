#include "ucd/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ucd/context.hpp"
#include "ucd/error.hpp"
#include "ucd/proximity.hpp"
#include "ucd/rng.hpp"
#include "ucd/synthetic.hpp"

namespace ucd {

std::string to_string(MetricKind m) {
  switch (m) {
    case MetricKind::ttc:
      return "ttc";
    case MetricKind::drac:
      return "drac";
    case MetricKind::psd:
      return "psd";
    case MetricKind::unified:
      break;
  }
  return "unified";
}

MetricKind metric_from_string(const std::string& s) {
  if (s == "ttc") return MetricKind::ttc;
  if (s == "drac") return MetricKind::drac;
  if (s == "psd") return MetricKind::psd;
  if (s == "unified") return MetricKind::unified;
  throw ParseError("unknown metric '" + s + "' (expected ttc, drac, psd or unified)");
}

Direction default_direction(MetricKind m) {
  return m == MetricKind::ttc || m == MetricKind::psd ? Direction::warn_below : Direction::warn_above;
}

std::vector<UnifiedFrame> unified_frames(const GPModel& model, const InteractionEvent& event) {
  if (!(model.schema == context_schema()))
    throw SchemaError("model feature schema " + model.schema.version + " (" + model.schema.hash() +
                      ") is not the traffic context schema " + context_schema().version + " (" +
                      context_schema().hash() + ")");
  const auto frames = aligned_states(event);
  std::vector<UnifiedFrame> out(frames.size());
  if (frames.empty()) return out;
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(frames.size()), ContextVector::kDimension);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto f = build_context(frames[i].first, frames[i].second).to_features();
    for (std::size_t j = 0; j < f.size(); ++j) raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f[j];
    out[i].time = frames[i].first.time;
    out[i].s = centre_distance(frames[i].first, frames[i].second);
  }
  Eigen::VectorXd mean, latent;
  model.predict_batch(raw, mean, latent);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out[i].phi = {mean(r), std::sqrt(latent(r) + model.kernel.noise_variance)};
  }
  return out;
}

std::vector<MetricSample> metric_series(const InteractionEvent& event, MetricKind metric,
                                        const GPModel* model) {
  std::vector<MetricSample> out;
  if (metric == MetricKind::unified) {
    if (!model) throw DataError("the unified metric needs a trained model");
    for (const auto& f : unified_frames(*model, event))
      out.push_back({f.time, max_intensity(f.s, f.phi), true});
    return out;
  }
  for (const auto& [ego, target] : aligned_states(event)) {
    MetricSample s{ego.time, 0.0, true};
    switch (metric) {
      case MetricKind::ttc:
        s.value = ttc_2d(ego, target);
        break;
      case MetricKind::drac:
        if (bounding_box_gap(ego, target) > 0.0)
          s.value = drac(ego, target);
        else
          s.defined = false;
        break;
      case MetricKind::psd: {
        const auto v = psd_pair(ego, target);
        s.defined = v.has_value();
        s.value = v.value_or(0.0);
        break;
      }
      case MetricKind::unified:
        break;
    }
    out.push_back(s);
  }
  return out;
}

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest round-trip decimal; non-finite values as inf, -inf, nan.
std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// JSON cannot hold infinities; they travel as strings.
json jnum(double v) {
  if (std::isfinite(v)) return v;
  return num(v);
}

double from_jnum(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> parse_number_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(flag + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw UsageError(flag + " must list at least one value");
  return out;
}

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

fs::path default_output_dir() {
  if (const char* env = std::getenv("UCD_OUTPUT_DIR"); env && *env) return env;
  return ".";
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw IoError("no such file: " + p.string(), p.string());
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  if (!p.empty()) fs::create_directories(p, ec);
  if (ec || (!p.empty() && !fs::is_directory(p)))
    throw IoError("cannot create directory " + p.string(), p.string());
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string(), p.string());
  return out;
}

void write_json(const fs::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(1) << '\n';
}

json read_json(const fs::path& p) {
  require_file(p);
  std::ifstream in(p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

std::string n_label(double n) { return "p_at_n_" + num(n); }

// Bookkeeping for the manifest every run writes.
struct Run {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  fs::path manifest_dir;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void output(const fs::path& p) { outputs.push_back(p.string()); }

  void finish() const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json m = {{"command", command},
              {"version", kVersion},
              {"libraries",
               {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                {"cli11", CLI11_VERSION}}},
              {"seed", seed},
              {"config", config},
              {"outputs", outputs},
              {"wall_time_s", wall}};
    ensure_dir(manifest_dir);
    write_json(manifest_dir / ("manifest_" + command + ".json"), m);
  }
};

// ---------------------------------------------------------------------------
// Sample files

void write_samples_csv(const fs::path& p, const SampleSet& set) {
  auto out = open_out(p);
  for (const auto& n : set.schema.names) out << n << ',';
  out << "log_s\n";
  for (Eigen::Index i = 0; i < set.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < set.features.cols(); ++j) out << num(set.features(i, j)) << ',';
    out << num(set.log_s(i)) << '\n';
  }
}

SampleSet read_samples_csv(const fs::path& p) {
  require_file(p);
  std::ifstream in(p);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(p.string() + ": empty sample file");
  std::vector<std::string> header = parse_name_list(line);
  if (header.size() < 2 || header.back() != "log_s")
    throw ParseError(p.string() + ": sample header must end with log_s");
  header.pop_back();
  FeatureSchema schema;
  if (header == context_schema().names) {
    schema = context_schema();
  } else {
    schema = generic_schema(header.size());
    schema.names = header;
  }
  std::vector<TrainingSample> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double x = 0.0;
      const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), x);
      if (r.ec != std::errc() || !std::isfinite(x))
        throw ParseError(p.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      v.push_back(x);
    }
    if (v.size() != header.size() + 1)
      throw ParseError(p.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size() + 1) + " fields");
    TrainingSample s;
    s.log_s = v.back();
    v.pop_back();
    s.features = std::move(v);
    rows.push_back(std::move(s));
  }
  return make_sample_set(std::move(schema), rows);
}

SampleSet samples_from_events(const std::vector<InteractionEvent>& events) {
  std::vector<TrainingSample> rows;
  for (const auto& ev : events) {
    for (const auto& [ego, target] : aligned_states(ev)) {
      if (centre_distance(ego, target) <= 0.0) continue;
      rows.push_back(traffic_sample(ego, target));
    }
  }
  return make_sample_set(context_schema(), rows);
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  std::string preset = "sinusoidal";
  std::uint64_t seed = 0;
  std::string out;
  std::size_t samples = 0;  // 0: preset default
  std::size_t events = 0;   // 0: encounter generator default
  std::string scenario = "car_following";
  std::size_t highway_vehicles = 6;
  double highway_duration = 30.0;
};

void cmd_simulate(const SimulateOpts& o, Run& run) {
  const fs::path dir = o.out.empty() ? default_output_dir() : fs::path(o.out);
  run.seed = o.seed;
  run.manifest_dir = dir;
  GeneratorSpec spec = preset(o.preset, o.seed);
  if (o.samples) spec.samples = o.samples;
  if (o.events) spec.encounter.events = o.events;
  if (o.scenario == "cut_in")
    spec.encounter.scenario = EncounterSpec::Scenario::cut_in;
  else if (o.scenario != "car_following")
    throw UsageError("--scenario must be car_following or cut_in");
  run.config = {{"preset", o.preset},       {"seed", o.seed},
                {"out", dir.string()},      {"samples", spec.samples},
                {"events", spec.encounter.events}, {"scenario", o.scenario},
                {"highway_vehicles", o.highway_vehicles}, {"highway_duration", o.highway_duration}};
  ensure_dir(dir);

  const SampleSet corpus = gen_context_set(spec);
  write_samples_csv(dir / "samples.csv", corpus);
  run.output(dir / "samples.csv");
  auto form_json = [](const AnalyticForm& f) {
    static const char* names[] = {"constant", "linear", "sinusoidal", "radial"};
    return json{{"kind", names[static_cast<int>(f.kind)]}, {"coeffs", f.coeffs}};
  };
  write_json(dir / "corpus.json", {{"preset", spec.preset},
                                   {"seed", spec.seed},
                                   {"dimension", spec.dimension},
                                   {"samples", spec.samples},
                                   {"domain_lo", spec.domain_lo},
                                   {"domain_hi", spec.domain_hi},
                                   {"mu", form_json(spec.mu)},
                                   {"sigma", form_json(spec.sigma)}});
  run.output(dir / "corpus.json");

  const auto encounters = gen_encounters(spec);
  std::vector<Trajectory> trajectories;
  std::vector<EventRecord> records;
  auto truth = open_out(dir / "truth.csv");
  truth << "event_id,time,danger\n";
  for (const auto& enc : encounters) {
    trajectories.push_back(enc.event.ego);
    trajectories.push_back(enc.event.target);
    EventRecord r = summarize_event(enc.event, "trajectories.csv", "event_like");
    r.critical_time = enc.critical_time;
    records.push_back(r);
    for (std::size_t i = 0; i < enc.danger.size(); ++i)
      truth << enc.event.id << ',' << num(enc.event.ego.states[i].time) << ',' << (enc.danger[i] ? 1 : 0) << '\n';
  }
  write_trajectory_csv((dir / "trajectories.csv").string(), trajectories);
  write_event_manifest((dir / "events.jsonl").string(), records);
  run.output(dir / "trajectories.csv");
  run.output(dir / "events.jsonl");
  run.output(dir / "truth.csv");

  const HighwayScene scene = gen_highway(o.seed, o.highway_vehicles, o.highway_duration);
  write_highd_csv((dir / "highway_tracks.csv").string(), scene.trajectories);
  write_json(dir / "highway_lanes.json",
             {{"upper_markings", json::array()}, {"lower_markings", scene.lower_markings}});
  run.output(dir / "highway_tracks.csv");
  run.output(dir / "highway_lanes.json");
  run.config["highway_lane_changes"] = scene.lane_changes;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string data;
  std::string mode = "sparse";
  std::size_t m = 256;
  double beta = 5.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string curves;
  std::size_t max_exact = 2000;
  std::size_t max_samples = 0;
  int epochs = 200;
  std::size_t batch_size = 2048;
  double lr = 0.01;
};

void cmd_train(const TrainOpts& o, Run& run) {
  if (o.mode != "exact" && o.mode != "sparse") throw UsageError("--mode must be exact or sparse");
  const fs::path data(o.data);
  fs::path events_path, samples_path;
  if (fs::is_directory(data)) {
    if (fs::is_regular_file(data / "events.jsonl"))
      events_path = data / "events.jsonl";
    else if (fs::is_regular_file(data / "samples.csv"))
      samples_path = data / "samples.csv";
    else
      throw IoError("no events.jsonl or samples.csv in " + data.string(), data.string());
  } else {
    require_file(data);
    (data.extension() == ".jsonl" ? events_path : samples_path) = data;
  }
  const fs::path model_path = o.out.empty() ? default_output_dir() / "model.json" : fs::path(o.out);
  const fs::path out_dir = model_path.has_parent_path() ? model_path.parent_path() : fs::path(".");
  const fs::path curve_path =
      o.curves.empty() ? out_dir / (model_path.stem().string() + "_curve.csv") : fs::path(o.curves);
  run.seed = o.seed;
  run.manifest_dir = out_dir;
  run.config = {{"data", o.data},   {"mode", o.mode}, {"m", o.m},
                {"beta", o.beta},   {"seed", o.seed}, {"out", model_path.string()},
                {"max_exact", o.max_exact}, {"max_samples", o.max_samples}, {"epochs", o.epochs},
                {"batch_size", o.batch_size}, {"learning_rate", o.lr}};
  ensure_dir(out_dir);

  SampleSet all = events_path.empty() ? read_samples_csv(samples_path)
                                      : samples_from_events(load_events(events_path.string()));
  run.config["source"] = events_path.empty() ? samples_path.string() : events_path.string();
  if (all.size() < 20) throw DataError("training needs at least 20 samples, found " + std::to_string(all.size()));

  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(o.seed, 7);
  std::shuffle(order.begin(), order.end(), rng);
  if (o.max_samples && order.size() > o.max_samples) order.resize(o.max_samples);
  const std::size_t n = order.size();
  const std::size_t n_train = n * 6 / 10, n_val = n * 2 / 10;
  std::vector<std::size_t> tr(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> va(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                              order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  std::vector<std::size_t> te(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  const SampleSet train = all.subset(tr), val = all.subset(va), test = all.subset(te);

  GPModel model;
  json summary = {{"samples", n}, {"train", n_train}, {"validation", n_val}, {"test", te.size()}};
  auto curve = open_out(curve_path);
  curve << "epoch,train_loss,val_loss,val_nll,learning_rate\n";
  if (o.mode == "exact") {
    SampleSet fit_set = train;
    if (train.size() > o.max_exact) {
      std::vector<std::size_t> head(o.max_exact);
      std::iota(head.begin(), head.end(), 0);
      fit_set = train.subset(head);
    }
    ExactFitOptions eo;
    eo.seed = o.seed;
    model = fit_exact(fit_set, eo);
    const double tl = evaluate_nll(model, fit_set), vl = evaluate_nll(model, val);
    curve << 0 << ',' << num(tl) << ',' << num(vl) << ',' << num(vl) << ",0\n";
    summary["exact_samples"] = fit_set.size();
  } else {
    SparseFitOptions so;
    so.inducing = std::min(o.m, train.size());
    so.beta = o.beta;
    so.seed = o.seed;
    so.max_epochs = o.epochs;
    so.batch_size = o.batch_size;
    so.learning_rate = o.lr;
    so.keep_checkpoints = true;
    SparseFitResult res = fit_sparse(train, val, so);
    for (const auto& h : res.history)
      curve << h.epoch << ',' << num(h.train_loss) << ',' << num(h.val_loss) << ',' << num(h.val_nll) << ','
            << num(h.learning_rate) << '\n';
    std::size_t pick = 0;
    if (!res.checkpoints.empty() && test.size() > 0) {
      pick = select_model(res.checkpoints, test, train.size());
      model = res.checkpoints[pick];
    } else {
      model = res.model;
    }
    summary["best_validation_epoch"] = res.best_epoch;
    summary["selected_epoch"] = res.checkpoints.empty() ? res.best_epoch : res.history[pick].epoch;
    summary["test_loss"] = test.size() ? jnum(-sparse_objective(model, test, train.size())) : json(nullptr);
    summary["inducing"] = so.inducing;
  }
  summary["test_nll"] = jnum(evaluate_nll(model, test));
  summary["validation_nll"] = jnum(evaluate_nll(model, val));
  save_model(model, model_path.string());
  run.output(model_path);
  run.output(curve_path);
  const fs::path summary_path = out_dir / (model_path.stem().string() + "_summary.json");
  write_json(summary_path, summary);
  run.output(summary_path);
}

// ---------------------------------------------------------------------------
// assess

struct AssessOpts {
  std::string metric = "ttc";
  std::string model;
  std::string events;
  std::string trajectories;
  std::string profile = "event_like";
  std::int64_t ego = -1;
  std::int64_t target = -1;
  std::string out;
  std::string n_list = "1,10,17,100";
};

std::vector<InteractionEvent> events_from_trajectories(const std::string& path, const std::string& profile,
                                                       std::int64_t ego_id, std::int64_t target_id) {
  auto parsed = parse_trajectory_csv(path, profile_by_name(profile));
  const auto& ts = parsed.trajectories;
  if (ego_id < 0 || target_id < 0) {
    if (ts.size() != 2)
      throw DataError(path + " holds " + std::to_string(ts.size()) +
                      " vehicles; pass --ego and --target to choose a pair");
    ego_id = ts[0].vehicle_id;
    target_id = ts[1].vehicle_id;
  }
  auto find = [&](std::int64_t id) -> const Trajectory& {
    for (const auto& t : ts)
      if (t.vehicle_id == id) return t;
    throw DataError("vehicle " + std::to_string(id) + " not found in " + path);
  };
  const Trajectory& e = find(ego_id);
  const Trajectory& t = find(target_id);
  const double t0 = std::max(e.t_begin(), t.t_begin()), t1 = std::min(e.t_end(), t.t_end());
  return {make_event(std::to_string(ego_id) + "-" + std::to_string(target_id), e, t, t0, t1, EventKind::generic)};
}

void cmd_assess(const AssessOpts& o, Run& run) {
  const MetricKind metric = metric_from_string(o.metric);
  if (o.events.empty() == o.trajectories.empty()) throw UsageError("pass exactly one of --events or --trajectories");
  if (metric == MetricKind::unified && o.model.empty()) throw UsageError("--metric unified needs --model");
  if (!o.events.empty()) require_file(o.events);
  if (!o.trajectories.empty()) require_file(o.trajectories);
  if (!o.model.empty()) require_file(o.model);
  const fs::path dir = o.out.empty() ? default_output_dir() : fs::path(o.out);
  const auto ns = parse_number_list(o.n_list, "--n");
  for (double n : ns)
    if (!(n >= 1.0)) throw UsageError("--n values must be >= 1");
  run.manifest_dir = dir;
  run.config = {{"metric", o.metric}, {"model", o.model},   {"events", o.events},
                {"trajectories", o.trajectories}, {"profile", o.profile}, {"ego", o.ego},
                {"target", o.target}, {"out", dir.string()}, {"n", ns}};
  ensure_dir(dir);

  std::optional<GPModel> model;
  if (!o.model.empty()) model = load_model(o.model);
  const auto events = o.events.empty() ? events_from_trajectories(o.trajectories, o.profile, o.ego, o.target)
                                       : load_events(o.events);
  const fs::path csv = dir / ("assess_" + o.metric + ".csv");
  auto out = open_out(csv);
  if (metric == MetricKind::unified) {
    out << "event_id,time,s,mu,sigma,exceedance,n_max,n_max_below_one";
    for (double n : ns) out << ',' << n_label(n);
    out << '\n';
    for (const auto& ev : events) {
      for (const auto& f : unified_frames(*model, ev)) {
        const auto a = assess_conflict(f.s, f.phi, ns);
        out << ev.id << ',' << num(f.time) << ',' << num(a.s) << ',' << num(a.phi.mu) << ',' << num(a.phi.sigma)
            << ',' << num(a.exceedance) << ',' << num(a.n_max) << ',' << (a.n_max_below_one ? 1 : 0);
        for (double p : a.p_at_n) out << ',' << num(p);
        out << '\n';
      }
    }
  } else {
    out << "event_id,time,value,defined\n";
    for (const auto& ev : events)
      for (const auto& s : metric_series(ev, metric))
        out << ev.id << ',' << num(s.time) << ',' << num(s.value) << ',' << (s.defined ? 1 : 0) << '\n';
  }
  run.output(csv);
}

// ---------------------------------------------------------------------------
// warn-eval

struct WarnOpts {
  std::string events;
  std::string metrics = "ttc,drac,psd,unified";
  std::string model;
  std::string out;
  bool no_filter = false;
};

json roc_json(const RocResult& roc, const WarningSummary* summary) {
  json pts = json::array();
  for (const auto& p : roc.points) pts.push_back({jnum(p.threshold), p.fpr, p.tpr});
  json j = {{"direction", to_string(roc.direction)},
            {"auc", roc.auc},
            {"degenerate", roc.degenerate},
            {"positives", roc.positives},
            {"negatives", roc.negatives},
            {"optimal", {{"threshold", jnum(roc.optimal_threshold)},
                         {"fpr", jnum(roc.optimal_fpr)},
                         {"tpr", jnum(roc.optimal_tpr)}}},
            {"points", pts}};
  if (summary) {
    json outcomes = json::array();
    for (const auto& w : summary->outcomes)
      outcomes.push_back({{"event_id", w.event_id},
                          {"warned", w.warned},
                          {"warning_period_pct", w.warning_period_pct},
                          {"timeliness", w.timeliness ? json(*w.timeliness) : json(nullptr)}});
    j["summary"] = {{"threshold", jnum(summary->threshold)},
                    {"tpr", summary->tpr},
                    {"fpr", summary->fpr},
                    {"mean_warning_period_pct", summary->mean_warning_period_pct},
                    {"mean_timeliness", summary->mean_timeliness},
                    {"warned_events", summary->warned_events}};
    j["outcomes"] = outcomes;
  }
  return j;
}

void export_report_csvs(const json& report, const fs::path& dir, const std::string& prefix, Run& run) {
  for (const auto& [name, m] : report.at("metrics").items()) {
    const fs::path roc = dir / (prefix + "roc_" + name + ".csv");
    auto out = open_out(roc);
    out << "threshold,fpr,tpr\n";
    for (const auto& p : m.at("points")) out << num(from_jnum(p[0])) << ',' << num(p[1].get<double>()) << ','
                                             << num(p[2].get<double>()) << '\n';
    run.output(roc);
    if (!m.contains("outcomes")) continue;
    const fs::path oc = dir / (prefix + "outcomes_" + name + ".csv");
    auto o2 = open_out(oc);
    o2 << "event_id,warned,warning_period_pct,timeliness\n";
    for (const auto& w : m.at("outcomes"))
      o2 << w.at("event_id").get<std::string>() << ',' << (w.at("warned").get<bool>() ? 1 : 0) << ','
         << num(w.at("warning_period_pct").get<double>()) << ','
         << (w.at("timeliness").is_null() ? std::string() : num(w.at("timeliness").get<double>())) << '\n';
    run.output(oc);
  }
}

void cmd_warn_eval(const WarnOpts& o, Run& run) {
  std::vector<MetricKind> metrics;
  for (const auto& name : parse_name_list(o.metrics)) metrics.push_back(metric_from_string(name));
  if (metrics.empty()) throw UsageError("--metrics must name at least one metric");
  const bool needs_model = std::find(metrics.begin(), metrics.end(), MetricKind::unified) != metrics.end();
  if (needs_model && o.model.empty()) throw UsageError("the unified metric needs --model");
  require_file(o.events);
  if (!o.model.empty()) require_file(o.model);
  const fs::path report_path = o.out.empty() ? default_output_dir() / "report.json" : fs::path(o.out);
  const fs::path dir = report_path.has_parent_path() ? report_path.parent_path() : fs::path(".");
  run.manifest_dir = dir;
  run.config = {{"events", o.events}, {"metrics", o.metrics}, {"model", o.model},
                {"out", report_path.string()}, {"filter", !o.no_filter}};
  ensure_dir(dir);

  std::optional<GPModel> model;
  if (!o.model.empty()) model = load_model(o.model);
  const auto all = load_events(o.events);
  const auto used = o.no_filter ? all : filter_warning_events(all);
  if (used.size() < 2)
    throw DataError("warning evaluation needs at least 2 events after filtering, found " +
                    std::to_string(used.size()));
  std::vector<LabeledEvent> labels;
  labels.reserve(used.size());
  for (const auto& ev : used) labels.push_back(label_event(ev));

  json report = {{"events_total", all.size()},
                 {"events_used", used.size()},
                 {"period_definition", "danger_window"},
                 {"metrics", json::object()}};
  for (MetricKind m : metrics) {
    std::vector<EventMetric> em;
    em.reserve(labels.size());
    for (const auto& l : labels) em.push_back({l, metric_series(l.event, m, model ? &*model : nullptr)});
    const Direction d = default_direction(m);
    const RocResult roc = sweep_roc(em, d);
    if (roc.degenerate) {
      report["metrics"][to_string(m)] = roc_json(roc, nullptr);
    } else {
      const WarningSummary ws = summarize_warnings(em, roc.optimal_threshold, d);
      report["metrics"][to_string(m)] = roc_json(roc, &ws);
    }
  }
  write_json(report_path, report);
  run.output(report_path);
  export_report_csvs(report, dir, report_path.stem().string() + "_", run);
}

// ---------------------------------------------------------------------------
// lanechange-eval

struct LaneOpts {
  std::string tracks;
  std::string profile = "highd_like";
  std::string lanes;
  std::string model;
  std::string out;
  double ttc_threshold = 4.2;
  double n_threshold = 17.0;
  double min_duration = 1.0;
  double max_gap = 100.0;
  double margin = 2.0;
  int bins_per_decade = kBinsPerDecade;
};

json fit_json(std::span<const double> values, int bpd) {
  try {
    const auto f = fit_power_law(values, bpd);
    return {{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}, {"bins", f.points}, {"values", values.size()}};
  } catch (const DataError&) {
    return nullptr;
  }
}

void cmd_lanechange(const LaneOpts& o, Run& run) {
  require_file(o.tracks);
  require_file(o.lanes);
  require_file(o.model);
  const fs::path dir = o.out.empty() ? default_output_dir() : fs::path(o.out);
  run.manifest_dir = dir;
  run.config = {{"tracks", o.tracks}, {"profile", o.profile}, {"lanes", o.lanes}, {"model", o.model},
                {"out", dir.string()}, {"ttc_threshold", o.ttc_threshold}, {"n_threshold", o.n_threshold},
                {"min_duration", o.min_duration}, {"max_gap", o.max_gap}, {"margin", o.margin},
                {"bins_per_decade", o.bins_per_decade}};
  ensure_dir(dir);

  const GPModel model = load_model(o.model);
  const LaneLayout layout = layout_from_json(read_json(o.lanes));
  const auto parsed = parse_trajectory_csv(o.tracks, profile_by_name(o.profile));
  std::size_t total_lc = 0;
  for (const auto& t : parsed.trajectories) total_lc += extract_lane_changes(t, layout).size();
  const auto events = pair_interactions(parsed.trajectories, layout, {o.max_gap, o.margin});

  const fs::path ep_path = dir / "lanechange_episodes.csv";
  auto ep = open_out(ep_path);
  ep << "event_id,lane_change_id,metric,t_start,t_end,duration\n";
  std::vector<ConflictVerdict> verdicts;
  std::vector<double> ttc_all, n_all, ttc_lc, n_lc;
  for (const auto& ev : events) {
    const double fr = ev.ego.frame_rate;
    const auto ttc = metric_series(ev, MetricKind::ttc);
    const auto uni = metric_series(ev, MetricKind::unified, &model);
    const auto et = conflict_episodes(ttc, fr, o.ttc_threshold, Direction::warn_below, o.min_duration);
    const auto eu = conflict_episodes(uni, fr, o.n_threshold, Direction::warn_above, o.min_duration);
    std::ostringstream key;
    key << ev.ego.vehicle_id << '@' << num(ev.lane_change ? ev.lane_change->t_start : ev.t_start);
    verdicts.push_back({ev.id, key.str(), !et.empty(), !eu.empty()});
    for (const auto& e : et)
      ep << ev.id << ',' << key.str() << ",ttc," << num(e.t_start) << ',' << num(e.t_end) << ',' << num(e.duration) << '\n';
    for (const auto& e : eu)
      ep << ev.id << ',' << key.str() << ",unified," << num(e.t_start) << ',' << num(e.t_end) << ',' << num(e.duration)
         << '\n';
    for (const auto& s : ttc)
      if (std::isfinite(s.value)) ttc_all.push_back(s.value);
    for (const auto& s : uni)
      if (std::isfinite(s.value)) n_all.push_back(s.value);
    // Averages over the lane-change period of conflicting events.
    if (ev.lane_change && (!et.empty() || !eu.empty())) {
      auto mean_in = [&](const std::vector<MetricSample>& xs) {
        double sum = 0.0;
        std::size_t k = 0;
        for (const auto& s : xs)
          if (s.time >= ev.lane_change->t_start - 1e-9 && s.time <= ev.lane_change->t_end + 1e-9 &&
              std::isfinite(s.value)) {
            sum += s.value;
            ++k;
          }
        return k ? sum / static_cast<double>(k) : std::numeric_limits<double>::quiet_NaN();
      };
      if (const double v = mean_in(ttc); std::isfinite(v)) ttc_lc.push_back(v);
      if (const double v = mean_in(uni); std::isfinite(v)) n_lc.push_back(v);
    }
  }
  run.output(ep_path);

  const auto part = partition_conflicts(verdicts, total_lc);
  json mult = json::object();
  for (const auto& [k, c] : part.multiplicity) mult[std::to_string(k)] = c;
  const double share = part.lane_changes ? static_cast<double>(part.conflicting_lane_changes) /
                                               static_cast<double>(part.lane_changes)
                                         : 0.0;
  json summary = {{"vehicles", parsed.trajectories.size()},
                  {"rejected_rows", parsed.diagnostics.size()},
                  {"lane_changes", part.lane_changes},
                  {"interaction_events", events.size()},
                  {"conflicting_lane_changes", part.conflicting_lane_changes},
                  {"conflicting_share", share},
                  {"conflicts", part.conflicts},
                  {"both", part.both},
                  {"ttc_only", part.ttc_only},
                  {"unified_only", part.unified_only},
                  {"multiplicity", mult},
                  {"power_law",
                   {{"ttc_moments", fit_json(ttc_all, o.bins_per_decade)},
                    {"unified_moments", fit_json(n_all, o.bins_per_decade)},
                    {"ttc_lane_change_mean", fit_json(ttc_lc, o.bins_per_decade)},
                    {"unified_lane_change_mean", fit_json(n_lc, o.bins_per_decade)}}}};
  const fs::path sum_path = dir / "lanechange_summary.json";
  write_json(sum_path, summary);
  run.output(sum_path);

  const fs::path hist_path = dir / "lanechange_intensity_histogram.csv";
  auto hist = open_out(hist_path);
  hist << "series,lower,upper,centre,count,density\n";
  const std::pair<const char*, const std::vector<double>*> series[] = {
      {"ttc_moments", &ttc_all}, {"unified_moments", &n_all}, {"ttc_lane_change_mean", &ttc_lc},
      {"unified_lane_change_mean", &n_lc}};
  for (const auto& [name, values] : series) {
    const auto h = log_histogram(*values, o.bins_per_decade);
    for (std::size_t i = 0; i < h.count.size(); ++i)
      hist << name << ',' << num(h.lower[i]) << ',' << num(h.upper[i]) << ',' << num(h.centre[i]) << ','
           << h.count[i] << ',' << num(h.density[i]) << '\n';
  }
  run.output(hist_path);
}

// ---------------------------------------------------------------------------
// export

struct ExportOpts {
  std::string report;
  std::string model;
  std::string events;
  std::string event_id;
  double time = std::numeric_limits<double>::quiet_NaN();
  std::string n_list = "1,10,17,100";
  std::size_t grid = 81;
  double extent_long = 40.0;
  double extent_lat = 20.0;
  std::string out;
};

void cmd_export(const ExportOpts& o, Run& run) {
  if (o.report.empty() && o.model.empty()) throw UsageError("pass --report and/or --model with --events");
  if (!o.model.empty() && o.events.empty()) throw UsageError("--model heatmaps need --events");
  if (o.grid < 2) throw UsageError("--grid must be at least 2");
  if (!o.report.empty()) require_file(o.report);
  if (!o.model.empty()) require_file(o.model);
  if (!o.events.empty()) require_file(o.events);
  const auto ns = parse_number_list(o.n_list, "--n");
  const fs::path dir = o.out.empty() ? default_output_dir() : fs::path(o.out);
  run.manifest_dir = dir;
  run.config = {{"report", o.report}, {"model", o.model}, {"events", o.events}, {"event", o.event_id},
                {"time", jnum(o.time)}, {"n", ns}, {"grid", o.grid}, {"extent_long", o.extent_long},
                {"extent_lat", o.extent_lat}, {"out", dir.string()}};
  ensure_dir(dir);

  if (!o.report.empty()) {
    const json report = read_json(o.report);
    if (!report.contains("metrics")) throw ParseError(o.report + ": not a warning report");
    export_report_csvs(report, dir, "", run);
  }
  if (o.model.empty()) return;

  const GPModel model = load_model(o.model);
  const auto events = load_events(o.events);
  if (events.empty()) throw DataError(o.events + " lists no events");
  const InteractionEvent* ev = &events.front();
  if (!o.event_id.empty()) {
    ev = nullptr;
    for (const auto& e : events)
      if (e.id == o.event_id) ev = &e;
    if (!ev) throw DataError("event " + o.event_id + " not in " + o.events);
  }
  const double t = std::isnan(o.time) ? label_event(*ev).critical_time : o.time;
  const auto frames = aligned_states(*ev);
  const auto nearest = std::min_element(frames.begin(), frames.end(), [t](const auto& a, const auto& b) {
    return std::abs(a.first.time - t) < std::abs(b.first.time - t);
  });
  const ContextVector base = build_context(nearest->first, nearest->second);

  const auto g = static_cast<Eigen::Index>(o.grid);
  Eigen::MatrixXd raw(g * g, ContextVector::kDimension);
  std::vector<std::pair<double, double>> cells;
  for (Eigen::Index i = 0; i < g; ++i) {
    const double lon = -o.extent_long + 2.0 * o.extent_long * static_cast<double>(i) / static_cast<double>(g - 1);
    for (Eigen::Index j = 0; j < g; ++j) {
      const double lat = -o.extent_lat + 2.0 * o.extent_lat * static_cast<double>(j) / static_cast<double>(g - 1);
      const auto f = context_at_offset(base, lat, lon).to_features();
      for (std::size_t k = 0; k < f.size(); ++k) raw(i * g + j, static_cast<Eigen::Index>(k)) = f[k];
      cells.emplace_back(lat, lon);
    }
  }
  if (!(model.schema == context_schema())) throw SchemaError("heatmaps need a traffic-context model");
  Eigen::VectorXd mean, latent;
  model.predict_batch(raw, mean, latent);
  const fs::path csv = dir / ("heatmap_" + ev->id + ".csv");
  auto out = open_out(csv);
  out << "x,y,s,mu,sigma,pdf,cdf,n_max";
  for (double n : ns) out << ',' << n_label(n);
  out << '\n';
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto r = static_cast<Eigen::Index>(c);
    const LognormalParams phi{mean(r), std::sqrt(latent(r) + model.kernel.noise_variance)};
    const double s = std::hypot(cells[c].first, cells[c].second);
    const double pdf = s > 0.0 ? lognormal_pdf(s, phi) : 0.0;
    out << num(cells[c].first) << ',' << num(cells[c].second) << ',' << num(s) << ',' << num(phi.mu) << ','
        << num(phi.sigma) << ',' << num(pdf) << ',' << num(conflict_function(s, phi)) << ','
        << num(max_intensity(s, phi));
    for (double n : ns) out << ',' << num(conflict_probability(n, s, phi));
    out << '\n';
  }
  run.output(csv);
  run.config["heatmap_time"] = nearest->first.time;
}

void emit_error(const std::string& kind, const std::string& message, const std::string& path = {}) {
  json e = {{"error", kind}, {"message", message}};
  if (!path.empty()) e["path"] = path;
  std::cerr << e.dump() << std::endl;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Unified probabilistic traffic-conflict detection", "ucd"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SimulateOpts sim;
  auto* c_sim = app.add_subcommand("simulate", "Write synthetic corpora with known ground truth");
  c_sim->add_option("--preset", sim.preset, "linear, sinusoidal or radial")->capture_default_str();
  c_sim->add_option("--seed", sim.seed)->capture_default_str();
  c_sim->add_option("--out", sim.out, "Output directory");
  c_sim->add_option("--samples", sim.samples, "Context samples (default: preset)");
  c_sim->add_option("--events", sim.events, "Encounter count (default 200)");
  c_sim->add_option("--scenario", sim.scenario, "car_following or cut_in")->capture_default_str();
  c_sim->add_option("--highway-vehicles", sim.highway_vehicles, "Vehicles per lane")->capture_default_str();
  c_sim->add_option("--highway-duration", sim.highway_duration, "Seconds")->capture_default_str();

  TrainOpts tr;
  auto* c_train = app.add_subcommand("train", "Fit the context-to-proximity Gaussian process");
  c_train->add_option("--data", tr.data, "Directory with events.jsonl or samples.csv, or one of those files")
      ->required();
  c_train->add_option("--mode", tr.mode, "exact or sparse")->capture_default_str();
  c_train->add_option("--m", tr.m, "Inducing points")->capture_default_str();
  c_train->add_option("--beta", tr.beta, "KL weight")->capture_default_str();
  c_train->add_option("--seed", tr.seed)->capture_default_str();
  c_train->add_option("--out", tr.out, "Model file");
  c_train->add_option("--curves", tr.curves, "Training curve CSV");
  c_train->add_option("--max-exact", tr.max_exact, "Training-set cap for exact mode")->capture_default_str();
  c_train->add_option("--max-samples", tr.max_samples, "Cap on samples before splitting (0: all)");
  c_train->add_option("--epochs", tr.epochs)->capture_default_str();
  c_train->add_option("--batch-size", tr.batch_size)->capture_default_str();
  c_train->add_option("--lr", tr.lr, "Initial learning rate")->capture_default_str();

  AssessOpts as;
  auto* c_assess = app.add_subcommand("assess", "Per-frame metric values");
  c_assess->add_option("--metric", as.metric, "ttc, drac, psd or unified")->capture_default_str();
  c_assess->add_option("--model", as.model, "Model file (unified)");
  c_assess->add_option("--events", as.events, "Event manifest");
  c_assess->add_option("--trajectories", as.trajectories, "Trajectory CSV");
  c_assess->add_option("--profile", as.profile, "Schema profile for --trajectories")->capture_default_str();
  c_assess->add_option("--ego", as.ego, "Ego vehicle id");
  c_assess->add_option("--target", as.target, "Target vehicle id");
  c_assess->add_option("--out", as.out, "Output directory");
  c_assess->add_option("--n", as.n_list, "Intensities for p_at_n columns")->capture_default_str();

  WarnOpts we;
  auto* c_warn = app.add_subcommand("warn-eval", "ROC and warning statistics over events");
  c_warn->add_option("--events", we.events, "Event manifest")->required();
  c_warn->add_option("--metrics", we.metrics)->capture_default_str();
  c_warn->add_option("--model", we.model, "Model file (unified)");
  c_warn->add_option("--out", we.out, "Report JSON");
  c_warn->add_flag("--no-filter", we.no_filter, "Skip the warning-event filter");

  LaneOpts lc;
  auto* c_lane = app.add_subcommand("lanechange-eval", "Conflict episodes and intensity distributions");
  c_lane->add_option("--tracks", lc.tracks, "Trajectory CSV")->required();
  c_lane->add_option("--profile", lc.profile)->capture_default_str();
  c_lane->add_option("--lanes", lc.lanes, "Lane layout JSON")->required();
  c_lane->add_option("--model", lc.model, "Model file")->required();
  c_lane->add_option("--out", lc.out, "Output directory");
  c_lane->add_option("--ttc-threshold", lc.ttc_threshold)->capture_default_str();
  c_lane->add_option("--n-threshold", lc.n_threshold)->capture_default_str();
  c_lane->add_option("--min-duration", lc.min_duration)->capture_default_str();
  c_lane->add_option("--max-gap", lc.max_gap)->capture_default_str();
  c_lane->add_option("--margin", lc.margin)->capture_default_str();
  c_lane->add_option("--bins-per-decade", lc.bins_per_decade)->capture_default_str();

  ExportOpts ex;
  auto* c_export = app.add_subcommand("export", "Flat CSVs for plotting");
  c_export->add_option("--report", ex.report, "Warning report JSON");
  c_export->add_option("--model", ex.model, "Model file for heatmaps");
  c_export->add_option("--events", ex.events, "Event manifest for heatmaps");
  c_export->add_option("--event", ex.event_id, "Event id (default: first)");
  c_export->add_option("--time", ex.time, "Moment (default: critical moment)");
  c_export->add_option("--n", ex.n_list)->capture_default_str();
  c_export->add_option("--grid", ex.grid)->capture_default_str();
  c_export->add_option("--extent-long", ex.extent_long)->capture_default_str();
  c_export->add_option("--extent-lat", ex.extent_lat)->capture_default_str();
  c_export->add_option("--out", ex.out, "Output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    std::cout << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return 2;
  }

  Run record;
  try {
    if (c_sim->parsed()) {
      record.command = "simulate";
      cmd_simulate(sim, record);
    } else if (c_train->parsed()) {
      record.command = "train";
      cmd_train(tr, record);
    } else if (c_assess->parsed()) {
      record.command = "assess";
      cmd_assess(as, record);
    } else if (c_warn->parsed()) {
      record.command = "warn-eval";
      cmd_warn_eval(we, record);
    } else if (c_lane->parsed()) {
      record.command = "lanechange-eval";
      cmd_lanechange(lc, record);
    } else if (c_export->parsed()) {
      record.command = "export";
      cmd_export(ex, record);
    }
    record.finish();
  } catch (const UsageError& e) {
    emit_error("usage", e.what());
    return 2;
  } catch (const IoError& e) {
    emit_error(e.kind(), e.what(), e.path());
    return 1;
  } catch (const Error& e) {
    emit_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return 1;
  }
  return 0;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace ucd
