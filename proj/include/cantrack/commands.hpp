#pragma once

// generate / train / track / evaluate, shared by the command-line tool and
// the tests. Each command reads its inputs from files and writes its outputs
// to RunConfig::out.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "cantrack/aggregation.hpp"
#include "cantrack/association.hpp"
#include "cantrack/error.hpp"
#include "cantrack/io.hpp"
#include "cantrack/metrics.hpp"
#include "cantrack/sampler.hpp"
#include "cantrack/synthworld.hpp"

namespace cantrack {

namespace fs = std::filesystem;

enum class AggregationMode { kCan, kMean };

inline AggregationMode parse_mode(const std::string& s) {
  if (s == "can") return AggregationMode::kCan;
  if (s == "mean") return AggregationMode::kMean;
  throw ValidationError("mode must be 'can' or 'mean', got '" + s + "'");
}

inline std::string mode_name(AggregationMode m) { return m == AggregationMode::kCan ? "can" : "mean"; }

struct RunConfig {
  // Inputs. `data` is a directory written by generate; `run` one written by
  // track. Explicit file paths take precedence over both.
  fs::path data;
  fs::path run;
  fs::path detections;
  fs::path features;
  fs::path ground_truth;
  fs::path model;
  fs::path trajectories;
  fs::path events;
  fs::path out = ".";
  std::optional<fs::path> resume;

  std::uint64_t seed = 0;
  AggregationMode mode = AggregationMode::kCan;
  std::int64_t window = 60;
  double tau_sct = 0.2;
  double tau_ict = 0.5;
  unsigned threads = 1;

  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t steps = 2000;
  std::size_t templates_per_batch = 8;
  std::size_t positives_per_batch = 4;
  std::size_t negatives_per_batch = 4;
  std::size_t max_template_len = 16;
  std::int64_t max_gap = 5;
  std::array<std::size_t, 3> hidden{256, 128, 64};
  MetaContext meta;

  fs::path detections_path() const { return pick(detections, data, "detections.csv"); }
  fs::path features_path() const { return pick(features, data, "features.canf"); }
  fs::path ground_truth_path() const { return pick(ground_truth, data, "ground_truth.csv"); }
  fs::path trajectories_path() const { return pick(trajectories, run, "trajectories.csv"); }
  fs::path events_path() const { return pick(events, run, "events.jsonl"); }

  void validate() const {
    if (window < 2 || window % 2 != 0) throw ValidationError("window must be an even integer >= 2");
    if (!(tau_sct >= -1.0)) throw ValidationError("tau_sct must be a number");
    if (!(tau_ict >= -1.0 && tau_ict <= 1.0)) throw ValidationError("tau_ict must lie in [-1, 1]");
    if (threads == 0) throw ValidationError("threads must be >= 1");
    if (!(lr >= 0.0)) throw ValidationError("lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
    if (max_template_len == 0) throw ValidationError("max_template_len must be positive");
    meta.validate();
  }

 private:
  static fs::path pick(const fs::path& explicit_path, const fs::path& dir, const char* name) {
    if (!explicit_path.empty()) return explicit_path;
    if (!dir.empty()) return dir / name;
    return {};
  }
};

namespace detail {

template <class T>
void config_field(const io::json& j, const char* name, T& into) {
  if (!j.contains(name)) return;
  try {
    into = j.at(name).get<T>();
  } catch (const io::json::exception&) {
    throw ValidationError(std::string("run config field '") + name + "': wrong type");
  }
}

inline void config_path(const io::json& j, const char* name, fs::path& into) {
  std::string s;
  config_field(j, name, s);
  if (!s.empty()) into = s;
}

inline fs::path require(const fs::path& p, const char* what) {
  if (p.empty()) throw ValidationError(std::string("no ") + what + " given");
  if (!fs::exists(p)) throw IoError(std::string(what) + " not found: " + p.string());
  return p;
}

}  // namespace detail

// Fields of a JSON run config. Unknown keys are rejected by name.
inline RunConfig run_config_from_json(const io::json& j, RunConfig c = {}) {
  if (!j.is_object()) throw ValidationError("run config: expected a JSON object");
  static const std::vector<std::string> known{
      "data", "run", "detections", "features", "ground_truth", "model", "trajectories", "events", "out",
      "seed", "mode", "window", "tau_sct", "tau_ict", "threads", "lr", "momentum", "steps",
      "templates_per_batch", "positives_per_batch", "negatives_per_batch", "max_template_len", "max_gap",
      "hidden", "frame_width", "frame_height", "num_cameras"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ValidationError("run config field '" + key + "': unknown field");
    }
  }
  detail::config_path(j, "data", c.data);
  detail::config_path(j, "run", c.run);
  detail::config_path(j, "detections", c.detections);
  detail::config_path(j, "features", c.features);
  detail::config_path(j, "ground_truth", c.ground_truth);
  detail::config_path(j, "model", c.model);
  detail::config_path(j, "trajectories", c.trajectories);
  detail::config_path(j, "events", c.events);
  detail::config_path(j, "out", c.out);
  detail::config_field(j, "seed", c.seed);
  if (j.contains("mode")) {
    std::string m;
    detail::config_field(j, "mode", m);
    c.mode = parse_mode(m);
  }
  detail::config_field(j, "window", c.window);
  detail::config_field(j, "tau_sct", c.tau_sct);
  detail::config_field(j, "tau_ict", c.tau_ict);
  detail::config_field(j, "threads", c.threads);
  detail::config_field(j, "lr", c.lr);
  detail::config_field(j, "momentum", c.momentum);
  detail::config_field(j, "steps", c.steps);
  detail::config_field(j, "templates_per_batch", c.templates_per_batch);
  detail::config_field(j, "positives_per_batch", c.positives_per_batch);
  detail::config_field(j, "negatives_per_batch", c.negatives_per_batch);
  detail::config_field(j, "max_template_len", c.max_template_len);
  detail::config_field(j, "max_gap", c.max_gap);
  detail::config_field(j, "hidden", c.hidden);
  detail::config_field(j, "frame_width", c.meta.frame_width);
  detail::config_field(j, "frame_height", c.meta.frame_height);
  detail::config_field(j, "num_cameras", c.meta.num_cameras);
  return c;
}

// ---------------------------------------------------------------- generate

// `world.seed` is overridden by `seed` when given.
inline io::ScenarioFiles cmd_generate(synth::WorldConfig world, const fs::path& out, std::optional<std::uint64_t> seed) {
  if (seed) world.seed = *seed;
  synth::validate(world);
  const auto ds = synth::generate_scenario(world);
  const auto files = io::export_scenario(ds, out);
  spdlog::info("generated {} detections of {} identities over {} cameras", ds.detections.size(), world.num_identities,
               world.num_cameras);
  return files;
}

// ---------------------------------------------------------------- train

struct TrainSummary {
  std::uint64_t first_step = 0;
  std::uint64_t last_step = 0;
  std::vector<double> costs;  // J per step run in this invocation
  fs::path model;
  fs::path log;
};

inline TrainSummary cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const auto dets = io::load_labeled_detections(detail::require(cfg.ground_truth_path(), "ground truth"),
                                                detail::require(cfg.features_path(), "features"));
  const auto dataset = build_labeled_dataset(dets, cfg.max_template_len, cfg.max_gap);
  if (dataset.num_classes() < 2) {
    throw ValidationError("training needs at least 2 identities, found " + std::to_string(dataset.num_classes()));
  }

  CanModel model;
  io::TrainingState state;
  if (cfg.resume) {
    auto loaded = io::load_model(detail::require(*cfg.resume, "resume model"));
    if (!loaded.state) throw ValidationError(cfg.resume->string() + ": no optimizer state to resume from");
    if (loaded.model.head.num_classes() != dataset.num_classes() ||
        loaded.model.evalnet.input_width() != dataset.feature_dim + kPairedMetaWidth) {
      throw ValidationError(cfg.resume->string() + ": model shape does not match the training data");
    }
    model = std::move(loaded.model);
    state = std::move(*loaded.state);
  } else {
    model = make_can_model(dataset.feature_dim, dataset.num_classes(), cfg.meta, cfg.seed, cfg.hidden);
    state.optimizer = make_optimizer_state(model);
    state.seed = cfg.seed;
  }

  SamplerConfig sc;
  sc.templates_per_batch = cfg.templates_per_batch;
  sc.positives_per_batch = cfg.positives_per_batch;
  sc.negatives_per_batch = cfg.negatives_per_batch;
  sc.seed = state.seed;
  const PairSampler sampler(dataset, sc);
  const TrainConfig tc{cfg.lr, cfg.momentum};

  TrainSummary summary;
  summary.model = cfg.out / "model.json";
  summary.log = cfg.out / "train_log.csv";
  summary.first_step = state.optimizer.step;
  const bool append = cfg.resume && fs::exists(summary.log);
  fs::create_directories(cfg.out);
  std::ofstream log(summary.log, append ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open " + summary.log.string() + " for writing");
  if (!append) log << "step,J\n";
  while (state.optimizer.step < cfg.steps) {
    const std::uint64_t step = state.optimizer.step;
    const double j = train_step(sampler.batch(step), model, state.optimizer, tc);
    summary.costs.push_back(j);
    log << step << ',' << io::fmt(j) << '\n';
    if ((step + 1) % 100 == 0) spdlog::debug("step {} J {}", step + 1, j);
  }
  summary.last_step = state.optimizer.step;
  if (!log) throw IoError("write failed: " + summary.log.string());
  io::save_model(summary.model, model, &state);
  spdlog::info("trained steps {}..{} on {} templates of {} identities", summary.first_step, summary.last_step,
               dataset.templates.size(), dataset.num_classes());
  return summary;
}

// ---------------------------------------------------------------- track

struct TrackSummary {
  TrackingOutput output;
  fs::path trajectories;
  fs::path events;
};

inline TrackSummary cmd_track(const RunConfig& cfg) {
  cfg.validate();
  std::optional<CanModel> model;
  if (cfg.mode == AggregationMode::kCan) {
    if (cfg.model.empty()) throw ValidationError("--mode can requires a model file (--model)");
    model = io::load_model(detail::require(cfg.model, "model")).model;
  }
  const auto feats = io::read_features(detail::require(cfg.features_path(), "features"));
  const auto dets = io::read_detections(detail::require(cfg.detections_path(), "detections"), &feats);
  if (model && model->evalnet.input_width() != (feats.empty() ? 0 : static_cast<std::size_t>(feats[0].size())) + kPairedMetaWidth) {
    throw ValidationError("model input width does not match the feature dimension");
  }

  TrackerConfig tc;
  tc.sct.window_len = cfg.window;
  tc.sct.tau_sct = cfg.tau_sct;
  tc.tau_ict = cfg.tau_ict;
  tc.threads = cfg.threads;
  TrackSummary s;
  s.output = run_tracker(dets, tc, model ? &*model : nullptr);
  s.trajectories = cfg.out / "trajectories.csv";
  s.events = cfg.out / "events.jsonl";
  io::write_trajectories(s.trajectories, dets, s.output.trajectories);
  io::write_events(s.events, s.output.events);
  std::size_t globals = 0;
  for (const auto& t : s.output.trajectories) globals = std::max(globals, static_cast<std::size_t>(*t.global_identity) + 1);
  spdlog::info("{} mode: {} tracklets merged into {} identities", mode_name(cfg.mode), s.output.trajectories.size(),
               globals);
  return s;
}

// ---------------------------------------------------------------- evaluate

inline MetricsReport evaluate_files(const fs::path& ground_truth, const fs::path& trajectories,
                                    const std::optional<fs::path>& events) {
  const auto gt = io::read_ground_truth(ground_truth);
  const auto hyp = io::read_trajectories(trajectories);
  auto report = evaluate_logs(gt.log, hyp.global, &hyp.tracklets);
  if (events) {
    const auto log = io::read_events(*events);
    if (!log.empty()) {
      const auto ie = inference_error(log, gt.identity_of);
      report.ie = ie.value;
      report.ie_steps = ie.steps;
    }
  }
  return report;
}

inline std::string format_report(const MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "  IE      " << (r.ie ? *r.ie * 100.0 : 0.0) << (r.ie ? " %" : " (no events)") << '\n';
  os << "  IDP     " << r.id.idp * 100.0 << '\n';
  os << "  IDR     " << r.id.idr * 100.0 << '\n';
  os << "  IDF1    " << r.id.idf1 * 100.0 << '\n';
  os << "  SCT IDF1 " << r.sct_id.idf1 * 100.0 << '\n';
  os << "  MOTA    " << r.mota * 100.0 << '\n';
  os << "  MCTA    " << r.mcta * 100.0 << '\n';
  os << "  TP " << r.counts.tp << "  FP " << r.counts.fp << "  FN " << r.counts.fn << "  M^s " << r.counts.m_s
     << "  M^i " << r.counts.m_i << '\n';
  return os.str();
}

struct EvaluateSummary {
  MetricsReport report;
  fs::path path;
};

inline EvaluateSummary cmd_evaluate(const RunConfig& cfg, std::ostream* table = nullptr) {
  const auto gt = detail::require(cfg.ground_truth_path(), "ground truth");
  const auto traj = detail::require(cfg.trajectories_path(), "trajectories");
  std::optional<fs::path> events;
  if (const auto e = cfg.events_path(); !e.empty()) events = detail::require(e, "event log");
  EvaluateSummary s;
  s.report = evaluate_files(gt, traj, events);
  s.path = cfg.out / "report.json";
  io::save_json(s.path, io::report_to_json(s.report, cfg.seed, mode_name(cfg.mode)));
  if (table) *table << format_report(s.report);
  return s;
}

// Side-by-side table of two report files, deltas as b - a in points.
inline std::string compare_reports(const fs::path& a_path, const fs::path& b_path) {
  const auto a = io::load_json(a_path);
  const auto b = io::load_json(b_path);
  struct Row {
    const char* label;
    io::json::json_pointer ptr;
  };
  const std::vector<Row> rows{{"IE", io::json::json_pointer("/ie")},
                              {"IDP", io::json::json_pointer("/ict/idp")},
                              {"IDR", io::json::json_pointer("/ict/idr")},
                              {"IDF1", io::json::json_pointer("/ict/idf1")},
                              {"SCT IDF1", io::json::json_pointer("/sct/idf1")},
                              {"MOTA", io::json::json_pointer("/mota")},
                              {"MCTA", io::json::json_pointer("/mcta")}};
  auto value = [](const io::json& j, const io::json::json_pointer& p, const fs::path& path) -> std::optional<double> {
    if (!j.contains(p)) throw ValidationError(path.string() + ": report lacks " + p.to_string());
    if (j.at(p).is_null()) return std::nullopt;
    return j.at(p).get<double>() * 100.0;
  };
  auto name = [](const io::json& j, const fs::path& path) {
    return j.value("mode", path.stem().string()) + " (seed " + std::to_string(j.value("seed", std::uint64_t{0})) + ")";
  };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(10) << "metric" << std::right << std::setw(20) << name(a, a_path) << std::setw(20)
     << name(b, b_path) << std::setw(10) << "delta" << '\n';
  for (const auto& r : rows) {
    const auto va = value(a, r.ptr, a_path);
    const auto vb = value(b, r.ptr, b_path);
    os << std::left << std::setw(10) << r.label << std::right;
    auto cell = [&os](const std::optional<double>& v, int w) {
      std::ostringstream c;
      c << std::fixed << std::setprecision(2);
      if (v) {
        c << *v;
      } else {
        c << "-";
      }
      os << std::setw(w) << c.str();
    };
    cell(va, 20);
    cell(vb, 20);
    cell(va && vb ? std::optional<double>(*vb - *va) : std::nullopt, 10);
    os << '\n';
  }
  return os.str();
}

}  // namespace cantrack
