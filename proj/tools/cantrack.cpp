// cantrack: generate | train | track | evaluate
//
// Exit codes: 0 success, 1 validation or usage error, 2 I/O error,
// 3 internal invariant violation.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cantrack/commands.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitInternal = 3;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("cantrack");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("CANTRACK_LOG")) {
    const std::string v = env;
    if (v == "error") {
      spdlog::set_level(spdlog::level::err);
    } else if (v == "warn") {
      spdlog::set_level(spdlog::level::warn);
    } else if (v == "info") {
      spdlog::set_level(spdlog::level::info);
    } else if (v == "debug") {
      spdlog::set_level(spdlog::level::debug);
    } else {
      spdlog::warn("ignoring CANTRACK_LOG={} (expected error, warn, info or debug)", v);
    }
  }
}

// Flags shared by every subcommand; unset values leave the config alone.
struct Flags {
  std::string config;
  std::optional<std::string> out, data, run, detections, features, ground_truth, model, trajectories, events, resume;
  std::optional<std::uint64_t> seed, steps;
  std::optional<std::string> mode;
  std::optional<std::int64_t> window;
  std::optional<double> tau_sct, tau_ict, lr, momentum;
  std::optional<unsigned> threads;
  std::vector<std::string> compare;

  void attach(CLI::App* app, bool training, bool tracking, bool evaluating) {
    app->add_option("--config", config, "JSON config file");
    app->add_option("--out", out, "output directory");
    app->add_option("--seed", seed, "random seed");
    if (training || tracking || evaluating) {
      app->add_option("--data", data, "directory written by generate");
      app->add_option("--features", features, "feature file (CANF or CSV)");
      app->add_option("--ground-truth", ground_truth, "ground-truth CSV");
      app->add_option("--mode", mode, "aggregation mode: can or mean");
    }
    if (training) {
      app->add_option("--resume", resume, "model file to continue training from");
      app->add_option("--steps", steps, "total number of training steps");
      app->add_option("--lr", lr, "learning rate");
      app->add_option("--momentum", momentum, "SGD momentum");
    }
    if (tracking) {
      app->add_option("--detections", detections, "detections CSV");
      app->add_option("--model", model, "model file (required in can mode)");
      app->add_option("--window", window, "SCT window length in frames (even)");
      app->add_option("--tau-sct", tau_sct, "SCT association threshold");
      app->add_option("--tau-ict", tau_ict, "ICT association threshold");
      app->add_option("--threads", threads, "worker threads for pair scoring");
    }
    if (evaluating) {
      app->add_option("--run", run, "directory written by track");
      app->add_option("--trajectories", trajectories, "trajectory CSV");
      app->add_option("--events", events, "event log (JSON lines)");
      app->add_option("--compare", compare, "print a delta table of two reports")->expected(2);
    }
  }

  cantrack::RunConfig resolve() const {
    cantrack::RunConfig c;
    if (!config.empty()) c = cantrack::run_config_from_json(cantrack::io::load_json(config));
    auto set_path = [](const std::optional<std::string>& v, std::filesystem::path& into) {
      if (v) into = *v;
    };
    set_path(out, c.out);
    set_path(data, c.data);
    set_path(run, c.run);
    set_path(detections, c.detections);
    set_path(features, c.features);
    set_path(ground_truth, c.ground_truth);
    set_path(model, c.model);
    set_path(trajectories, c.trajectories);
    set_path(events, c.events);
    if (resume) c.resume = *resume;
    if (seed) c.seed = *seed;
    if (steps) c.steps = *steps;
    if (mode) c.mode = cantrack::parse_mode(*mode);
    if (window) c.window = *window;
    if (tau_sct) c.tau_sct = *tau_sct;
    if (tau_ict) c.tau_ict = *tau_ict;
    if (lr) c.lr = *lr;
    if (momentum) c.momentum = *momentum;
    if (threads) c.threads = *threads;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Multi-camera tracking with learned template aggregation"};
  app.require_subcommand(1);

  Flags gen_flags, train_flags, track_flags, eval_flags;
  auto* gen = app.add_subcommand("generate", "synthesize a multi-camera scenario");
  gen_flags.attach(gen, false, false, false);
  gen->get_option("--config")->required()->description("world config JSON");
  auto* train = app.add_subcommand("train", "train the aggregation network");
  train_flags.attach(train, true, false, false);
  auto* track = app.add_subcommand("track", "single- and inter-camera tracking");
  track_flags.attach(track, false, true, false);
  auto* eval = app.add_subcommand("evaluate", "score a tracking run against ground truth");
  eval_flags.attach(eval, false, false, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const auto world = cantrack::io::load_world(gen_flags.config);
      cantrack::cmd_generate(world, gen_flags.out.value_or("."), gen_flags.seed);
    } else if (train->parsed()) {
      const auto s = cantrack::cmd_train(train_flags.resolve());
      if (!s.costs.empty()) std::cout << "final J " << cantrack::io::fmt(s.costs.back()) << '\n';
    } else if (track->parsed()) {
      cantrack::cmd_track(track_flags.resolve());
    } else if (eval->parsed()) {
      if (!eval_flags.compare.empty()) {
        std::cout << cantrack::compare_reports(eval_flags.compare[0], eval_flags.compare[1]);
      } else {
        cantrack::cmd_evaluate(eval_flags.resolve(), &std::cout);
      }
    }
  } catch (const cantrack::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const cantrack::ContractError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  } catch (const cantrack::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return 0;
}
