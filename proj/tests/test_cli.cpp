#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support.hpp"
#include "ucd/cli.hpp"

using namespace ucd;
using ucd::test::TempDir;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

struct Shell {
  int code = 0;
  std::string output;  // stdout and stderr
};

Shell shell(const std::string& args) {
  const std::string cmd = std::string(UCD_CLI_PATH) + " " + args + " 2>&1";
  Shell r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Ego at 10 m/s, 40 m behind a stopped target: TTC 4 s at t = 0.
const char* kToy =
    "id,time,x,y,vx,vy,length,width,heading_x,heading_y\n"
    "1,0.0,0,0,10,0,4,2,1,0\n"
    "2,0.0,44,0,0,0,4,2,1,0\n"
    "1,0.1,1,0,10,0,4,2,1,0\n"
    "2,0.1,44,0,0,0,4,2,1,0\n";

void simulate(const std::string& out, int seed = 1) {
  ASSERT_EQ(run({"simulate", "--preset", "sinusoidal", "--seed", std::to_string(seed), "--out", out,
                 "--samples", "300", "--events", "16", "--highway-vehicles", "4"}),
            0);
}

void train(const std::string& data, const std::string& model) {
  ASSERT_EQ(run({"train", "--data", data, "--mode", "sparse", "--m", "16", "--epochs", "5", "--seed", "2",
                 "--out", model}),
            0);
}

}  // namespace

TEST(Cli, AssessToyTtc) {
  TempDir dir("cli-assess");
  write_text(dir.str("toy.csv"), kToy);
  ASSERT_EQ(run({"assess", "--metric", "ttc", "--trajectories", dir.str("toy.csv"), "--ego", "1",
                 "--target", "2", "--out", dir.str("out")}),
            0);
  std::istringstream csv(slurp(dir.str("out/assess_ttc.csv")));
  std::string header, first;
  std::getline(csv, header);
  std::getline(csv, first);
  EXPECT_EQ(header, "event_id,time,value,defined");
  EXPECT_EQ(first, "1-2,0,4,1");
  EXPECT_TRUE(std::filesystem::exists(dir.str("out/manifest_assess.json")));
}

TEST(Cli, MissingModelIsIoError) {
  TempDir dir("cli-missing");
  write_text(dir.str("toy.csv"), kToy);
  const auto missing = dir.str("absent.json");
  const auto r = shell("assess --metric unified --trajectories " + dir.str("toy.csv") +
                       " --ego 1 --target 2 --model " + missing);
  EXPECT_EQ(r.code, 1);
  const auto doc = nlohmann::json::parse(r.output);
  EXPECT_EQ(doc.at("error"), "io");
  EXPECT_EQ(doc.at("path"), missing);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"train", "--data", "x", "--frobnicate"}), 2);
  EXPECT_EQ(run({}), 2);
  const auto r = shell("warn-eval");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(nlohmann::json::parse(r.output).at("error"), "usage");
}

TEST(Cli, VersionAndHelpSucceed) {
  const auto v = shell("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.output.find(kVersion), std::string::npos);
  EXPECT_EQ(shell("--help").code, 0);
}

TEST(Cli, SimulateTrainWarnEval) {
  TempDir dir("cli-e2e");
  const auto sim = dir.str("sim");
  simulate(sim);
  for (const char* f : {"samples.csv", "events.jsonl", "trajectories.csv", "truth.csv", "highway_tracks.csv",
                        "highway_lanes.json", "manifest_simulate.json"})
    EXPECT_TRUE(std::filesystem::exists(sim + "/" + f)) << f;
  const auto model = dir.str("model.json");
  train(sim, model);
  ASSERT_EQ(run({"warn-eval", "--events", sim + "/events.jsonl", "--metrics", "ttc,unified", "--model",
                 model, "--out", dir.str("report.json")}),
            0);
  const auto report = nlohmann::json::parse(slurp(dir.str("report.json")));
  EXPECT_EQ(report.at("events_used"), 16);
  for (const char* m : {"ttc", "unified"}) {
    const double auc = report.at("metrics").at(m).at("auc");
    EXPECT_GE(auc, 0.0);
    EXPECT_LE(auc, 1.0);
  }
  EXPECT_TRUE(std::filesystem::exists(dir.str("report_roc_ttc.csv")));

  ASSERT_EQ(run({"lanechange-eval", "--tracks", sim + "/highway_tracks.csv", "--lanes",
                 sim + "/highway_lanes.json", "--model", model, "--out", dir.str("lc")}),
            0);
  EXPECT_TRUE(std::filesystem::exists(dir.str("lc/manifest_lanechange-eval.json")));
}

TEST(Cli, OutputsAreDeterministic) {
  TempDir dir("cli-det");
  simulate(dir.str("a"), 7);
  simulate(dir.str("b"), 7);
  for (const char* f : {"samples.csv", "events.jsonl", "trajectories.csv", "truth.csv", "highway_tracks.csv"})
    EXPECT_EQ(slurp(dir.str("a/") + f), slurp(dir.str("b/") + f)) << f;
  train(dir.str("a"), dir.str("ma.json"));
  train(dir.str("b"), dir.str("mb.json"));
  EXPECT_EQ(slurp(dir.str("ma.json")), slurp(dir.str("mb.json")));
  auto config = [&dir](const std::string& sub) {
    auto j = nlohmann::json::parse(slurp(dir.str(sub + "/manifest_simulate.json"))).at("config");
    j.erase("out");
    return j;
  };
  EXPECT_EQ(config("a"), config("b"));
}
