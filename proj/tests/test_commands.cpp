#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "cantrack/commands.hpp"

using namespace cantrack;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct CliResult {
  int code = -1;
  std::string err;
};

class CommandsTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("cantrack_cmd_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult cli(const std::string& args) const {
    const auto err = dir_ / "stderr.txt";
    const std::string cmd = std::string(CANTRACK_CLI) + " " + args + " > /dev/null 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
  }

  fs::path write(const std::string& name, const std::string& text) const {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  static synth::WorldConfig small_world(std::uint64_t seed, int ids = 4) {
    synth::WorldConfig w;
    w.num_cameras = 2;
    w.num_identities = ids;
    w.num_frames = 200;
    w.embedding_dim = 8;
    w.sigma = 0.3;
    w.beta = 0.2;
    w.occlusion_prob = 0.05;
    w.seed = seed;
    return w;
  }

  RunConfig train_config(const fs::path& data, const fs::path& out, std::uint64_t steps) const {
    RunConfig c;
    c.data = data;
    c.out = out;
    c.steps = steps;
    c.seed = 3;
    c.hidden = {12, 8, 6};
    c.templates_per_batch = 3;
    c.positives_per_batch = 2;
    c.negatives_per_batch = 1;
    c.meta = {1920, 1080, 2};
    return c;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CommandsTest, GenerateWritesThreeDeterministicFiles) {
  const auto world = write("world.json", io::world_to_json(small_world(5)).dump());
  ASSERT_EQ(cli("generate --config " + world.string() + " --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(cli("generate --config " + world.string() + " --out " + (dir_ / "b").string()).code, 0);
  ASSERT_EQ(cli("generate --config " + world.string() + " --seed 6 --out " + (dir_ / "c").string()).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "a")) {
    ++files;
    const auto name = e.path().filename();
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "b" / name)) << name;
  }
  EXPECT_EQ(files, 3u);
  EXPECT_NE(slurp(dir_ / "a" / "features.canf"), slurp(dir_ / "c" / "features.canf"));
  const auto gt = io::read_ground_truth(dir_ / "a" / "ground_truth.csv");
  EXPECT_EQ(gt.log.size(), io::read_features(dir_ / "a" / "features.canf").size());
}

TEST_F(CommandsTest, MalformedConfigsExitOneNamingTheField) {
  const auto unknown = write("u.json", R"({"num_cameras": 2, "sigmaa": 0.1})");
  auto r = cli("generate --config " + unknown.string() + " --out " + dir_.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("sigmaa"), std::string::npos) << r.err;
  const auto typed = write("t.json", R"({"occlusion_prob": "often"})");
  r = cli("generate --config " + typed.string() + " --out " + dir_.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("occlusion_prob"), std::string::npos) << r.err;
  const auto range = write("r.json", R"({"occlusion_prob": 1.5})");
  r = cli("generate --config " + range.string() + " --out " + dir_.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("occlusion_prob"), std::string::npos) << r.err;
  EXPECT_EQ(cli("generate --config " + (dir_ / "missing.json").string()).code, 2);
  EXPECT_EQ(cli("train --bogus-flag").code, 1);
  const auto run = write("run.json", R"({"window": 61})");
  r = cli("track --mode mean --config " + run.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("window"), std::string::npos) << r.err;
}

TEST_F(CommandsTest, CanModeWithoutModelIsUsageError) {
  cmd_generate(small_world(1), dir_ / "data", std::nullopt);
  const auto r = cli("track --mode can --data " + (dir_ / "data").string() + " --out " + (dir_ / "run").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("model"), std::string::npos) << r.err;
  EXPECT_EQ(cli("track --mode mean --data " + (dir_ / "data").string() + " --out " + (dir_ / "run").string()).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "run" / "trajectories.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "events.jsonl"));
}

TEST_F(CommandsTest, NoiselessSingleIdentityBecomesOneGlobalIdentity) {
  auto w = small_world(2, 1);
  w.sigma = 0.0;
  w.beta = 0.0;
  w.occlusion_prob = 0.0;
  cmd_generate(w, dir_ / "data", std::nullopt);
  RunConfig c;
  c.data = dir_ / "data";
  c.out = dir_ / "run";
  c.mode = AggregationMode::kMean;
  const auto s = cmd_track(c);
  std::set<int> globals;
  for (const auto& t : s.output.trajectories) globals.insert(*t.global_identity);
  EXPECT_EQ(globals.size(), 1u);
  EXPECT_GT(s.output.trajectories.size(), 1u);
}

TEST_F(CommandsTest, PerfectHypothesisScoresPerfectly) {
  auto w = small_world(3, 5);
  w.sigma = 0.0;
  w.beta = 0.0;
  w.occlusion_prob = 0.0;
  const auto files = cmd_generate(w, dir_ / "data", std::nullopt);
  RunConfig c;
  c.data = dir_ / "data";
  c.run = dir_ / "run";
  c.out = dir_ / "run";
  c.mode = AggregationMode::kMean;
  cmd_track(c);
  std::ostringstream table;
  const auto e = cmd_evaluate(c, &table);
  ASSERT_TRUE(e.report.ie.has_value());
  EXPECT_EQ(*e.report.ie, 0.0);
  EXPECT_EQ(e.report.id.idf1, 1.0);
  EXPECT_EQ(e.report.mota, 1.0);
  EXPECT_EQ(e.report.mcta, 1.0);
  EXPECT_NE(table.str().find("IDF1"), std::string::npos);
  const auto j = io::load_json(e.path);
  EXPECT_EQ(j["mode"], "mean");
  EXPECT_EQ(j["ict"]["idf1"], 1.0);

  // Ground truth written as a hypothesis needs no tracker at all.
  const auto gt = io::load_labeled_detections(files.ground_truth, files.features);
  std::map<std::pair<int, int>, Trajectory> by_key;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    auto& t = by_key[{*gt[i].gt_identity, gt[i].camera}];
    t.camera = gt[i].camera;
    t.global_identity = *gt[i].gt_identity;
    t.detections.push_back(i);
  }
  std::vector<Trajectory> trajs;
  for (auto& [k, t] : by_key) {
    t.id = static_cast<int>(trajs.size());
    trajs.push_back(t);
  }
  io::write_trajectories(dir_ / "oracle.csv", gt, trajs);
  const auto r = evaluate_files(files.ground_truth, dir_ / "oracle.csv", std::nullopt);
  EXPECT_FALSE(r.ie.has_value());
  EXPECT_EQ(r.id.idf1, 1.0);
  EXPECT_EQ(r.sct_id.idf1, 1.0);
  EXPECT_EQ(r.mota, 1.0);
  EXPECT_EQ(r.mcta, 1.0);
}

TEST_F(CommandsTest, TrainingWithZeroLearningRateKeepsParameters) {
  cmd_generate(small_world(4), dir_ / "data", std::nullopt);
  auto c = train_config(dir_ / "data", dir_ / "m", 5);
  c.lr = 0.0;
  const auto s = cmd_train(c);
  EXPECT_EQ(s.costs.size(), 5u);
  const auto trained = io::load_model(s.model).model;
  const auto initial = make_can_model(8, 4, c.meta, c.seed, c.hidden);
  for (std::size_t i = 0; i < initial.evalnet.layers.size(); ++i) {
    EXPECT_EQ(trained.evalnet.layers[i].weight, initial.evalnet.layers[i].weight);
    EXPECT_EQ(trained.evalnet.layers[i].bias, initial.evalnet.layers[i].bias);
    EXPECT_EQ(trained.evalnet.layers[i].bn_gamma, initial.evalnet.layers[i].bn_gamma);
  }
  EXPECT_EQ(trained.head.weight, initial.head.weight);
  EXPECT_EQ(trained.head.bias, initial.head.bias);
}

TEST_F(CommandsTest, TrainingLogShowsFallingCost) {
  auto w = small_world(5, 6);
  w.sigma = 0.1;
  w.beta = 0.0;
  cmd_generate(w, dir_ / "data", std::nullopt);
  auto c = train_config(dir_ / "data", dir_ / "m", 200);
  const auto s = cmd_train(c);
  const auto log = slurp(s.log);
  EXPECT_EQ(log.substr(0, 7), "step,J\n");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 201);
  auto block = [&](std::size_t b) {
    double sum = 0.0;
    for (std::size_t k = 10 * b; k < 10 * b + 10; ++k) sum += s.costs[k];
    return sum / 10.0;
  };
  EXPECT_LT(block(19), 0.5 * block(0));
}

TEST_F(CommandsTest, ResumeContinuesTheSameTrajectory) {
  cmd_generate(small_world(6), dir_ / "data", std::nullopt);
  const auto full = cmd_train(train_config(dir_ / "data", dir_ / "full", 30));
  cmd_train(train_config(dir_ / "data", dir_ / "part", 12));
  auto resumed = train_config(dir_ / "data", dir_ / "part", 30);
  resumed.resume = dir_ / "part" / "model.json";
  const auto s = cmd_train(resumed);
  EXPECT_EQ(s.first_step, 12u);
  EXPECT_EQ(s.last_step, 30u);
  EXPECT_EQ(slurp(full.model), slurp(dir_ / "part" / "model.json"));
  EXPECT_EQ(slurp(full.log), slurp(dir_ / "part" / "train_log.csv"));
}

TEST_F(CommandsTest, TrainingNeedsTwoIdentities) {
  cmd_generate(small_world(7, 1), dir_ / "data", std::nullopt);
  EXPECT_THROW(cmd_train(train_config(dir_ / "data", dir_ / "m", 5)), ValidationError);
}

TEST_F(CommandsTest, EveryCommandIsByteDeterministic) {
  const auto world = write("world.json", io::world_to_json(small_world(8)).dump());
  const auto cfg = write("run.json", R"({"hidden": [12, 8, 6], "templates_per_batch": 3, "positives_per_batch": 2,
                                         "negatives_per_batch": 1, "num_cameras": 2, "steps": 20, "seed": 4})");
  for (const char* tag : {"a", "b"}) {
    const auto root = dir_ / tag;
    const std::string data = (root / "data").string();
    ASSERT_EQ(cli("generate --config " + world.string() + " --out " + data).code, 0);
    ASSERT_EQ(cli("train --config " + cfg.string() + " --data " + data + " --out " + (root / "m").string()).code, 0);
    ASSERT_EQ(cli("track --config " + cfg.string() + " --data " + data + " --model " + (root / "m" / "model.json").string() +
                  " --threads 3 --out " + (root / "run").string())
                  .code,
              0);
    ASSERT_EQ(cli("evaluate --config " + cfg.string() + " --data " + data + " --run " + (root / "run").string() +
                  " --out " + (root / "eval").string())
                  .code,
              0);
  }
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir_ / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir_ / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "b" / rel)) << rel;
    ++compared;
  }
  EXPECT_EQ(compared, 3u + 2u + 2u + 1u);
}

TEST_F(CommandsTest, CompareModePrintsDeltas) {
  auto w = small_world(9, 5);
  cmd_generate(w, dir_ / "data", std::nullopt);
  RunConfig c;
  c.data = dir_ / "data";
  c.run = dir_ / "run";
  c.out = dir_ / "run";
  c.mode = AggregationMode::kMean;
  cmd_track(c);
  const auto a = cmd_evaluate(c);
  c.out = dir_ / "run2";
  c.seed = 11;
  const auto b = cmd_evaluate(c);
  const auto table = compare_reports(a.path, b.path);
  EXPECT_NE(table.find("IDF1"), std::string::npos);
  EXPECT_NE(table.find("seed 11"), std::string::npos);
  EXPECT_NE(table.find("0.00"), std::string::npos);
  write("broken.json", R"({"mode": "can"})");
  EXPECT_THROW(compare_reports(a.path, dir_ / "broken.json"), ValidationError);
}
