#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

// End-to-end checks of the command-line front end; CHAOSCOPE_CLI_PATH is
// injected by the build.

namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd =
      std::string(CHAOSCOPE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string fresh_dir(const char* name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small, fast run: tiny reference length, short trajectories, two epochs.
const char* kFast =
    "--set dataset.n_ref=2000 --set dataset.n_k=8 --set dataset.m_tr=80 "
    "--set dataset.m_tt=40 --set dataset.k_min=2.5 --set dataset.k_max=2.5 "
    "--set dataset.m_k=1 --set training.epochs=2 --set training.patience=1";

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("") == 2);                        // missing subcommand
  CHECK(run("frobnicate") == 2);              // unknown subcommand
  CHECK(run("experiment nosuch --out /tmp/chaoscope_cli_none") == 2);
  CHECK(run("generate --set dataset.m_k=0 --out /tmp/chaoscope_cli_none") == 2);
  CHECK(run("generate --set dataset.nope=1 --out /tmp/chaoscope_cli_none") == 2);
  CHECK(run("generate --set training.epochs=fast "
            "--out /tmp/chaoscope_cli_none") == 2);
  CHECK(run("generate --config /no/such/file.json "
            "--out /tmp/chaoscope_cli_none") == 2);
}

TEST_CASE("config files with unknown keys are rejected") {
  const auto dir = fresh_dir("chaoscope_cli_cfg");
  fs::create_directories(dir);
  const auto cfg = fs::path(dir) / "bad.json";
  std::ofstream(cfg) << "{\"dataset\": {\"k_minimum\": 1.0}}";
  CHECK(run("generate --config " + cfg.string() + " --out " + dir) == 2);
  std::ofstream(cfg) << "{\"dataset\": {\"k_min\": \"one\"}}";
  CHECK(run("generate --config " + cfg.string() + " --out " + dir) == 2);
  std::ofstream(cfg) << "not json";
  CHECK(run("generate --config " + cfg.string() + " --out " + dir) == 2);
  fs::remove_all(dir);
}

TEST_CASE("generate / train / eval round trip with reproducible artifacts") {
  const auto dir = fresh_dir("chaoscope_cli_run");
  const std::string common = std::string(kFast) + " --seed 7 --out " + dir;

  REQUIRE(run("generate " + common) == 0);
  CHECK(fs::exists(fs::path(dir) / "dataset" / "trajectories.chsc"));
  CHECK(fs::exists(fs::path(dir) / "dataset" / "labels.csv"));
  CHECK(fs::exists(fs::path(dir) / "dataset" / "dataset.json"));
  CHECK(fs::exists(fs::path(dir) / "manifest.json"));
  const auto bytes_first = slurp(fs::path(dir) / "dataset" / "trajectories.chsc");

  // re-running with the same seed reproduces the dataset byte for byte
  const auto dir2 = fresh_dir("chaoscope_cli_run2");
  REQUIRE(run("generate " + std::string(kFast) + " --seed 7 --out " + dir2) ==
          0);
  CHECK(slurp(fs::path(dir2) / "dataset" / "trajectories.chsc") == bytes_first);
  fs::remove_all(dir2);

  REQUIRE(run("train " + common) == 0);
  CHECK(fs::exists(fs::path(dir) / "model.chsm"));
  CHECK(fs::exists(fs::path(dir) / "loss_curve.csv"));
  const auto model_first = slurp(fs::path(dir) / "model.chsm");

  REQUIRE(run("train " + common) == 0);  // same seed => same checkpoint bytes
  CHECK(slurp(fs::path(dir) / "model.chsm") == model_first);

  REQUIRE(run("eval " + common) == 0);
  CHECK(fs::exists(fs::path(dir) / "eval.csv"));
  CHECK(fs::exists(fs::path(dir) / "error_map.csv"));
  std::ifstream is(fs::path(dir) / "eval.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "K,N_K,P_C,P_R,P_tot");
  fs::remove_all(dir);
}

TEST_CASE("eval without a checkpoint is a runtime failure (exit 3)") {
  const auto dir = fresh_dir("chaoscope_cli_nockpt");
  const std::string common = std::string(kFast) + " --seed 3 --out " + dir;
  REQUIRE(run("generate " + common) == 0);
  CHECK(run("eval " + common) == 3);
  fs::remove_all(dir);
}

TEST_CASE("--resume skips completed stages without touching files") {
  const auto dir = fresh_dir("chaoscope_cli_resume");
  const std::string common = std::string(kFast) + " --seed 5 --out " + dir;
  REQUIRE(run("generate " + common) == 0);
  const auto target = fs::path(dir) / "dataset" / "trajectories.chsc";
  const auto stamp = fs::last_write_time(target);
  REQUIRE(run("generate " + common + " --resume") == 0);
  CHECK(fs::last_write_time(target) == stamp);  // untouched, not rewritten
  // a config change invalidates the manifest and the stage reruns
  REQUIRE(run("generate " + common + " --resume --set dataset.n_k=9") == 0);
  CHECK(fs::last_write_time(target) != stamp);
  fs::remove_all(dir);
}

TEST_CASE("label writes the grid labeling and histogram") {
  const auto dir = fresh_dir("chaoscope_cli_label");
  REQUIRE(run("label --set dataset.n_ref=1500 --set label.k=2.5 --out " + dir) ==
          0);
  std::ifstream is(fs::path(dir) / "labels.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "i,j,p0,x0,lambda_N,label");
  std::size_t rows = 0;
  for (std::string line; std::getline(is, line);) rows += !line.empty();
  CHECK(rows == 2601);
  CHECK(fs::exists(fs::path(dir) / "histogram.csv"));
  fs::remove_all(dir);
}

TEST_CASE("export-poincare dumps every grid orbit") {
  const auto dir = fresh_dir("chaoscope_cli_poincare");
  REQUIRE(run("export-poincare --set poincare.steps=3 --out " + dir) == 0);
  std::ifstream is(fs::path(dir) / "poincare.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "K,i,j,step,p,x");
  std::size_t rows = 0;
  for (std::string line; std::getline(is, line);) rows += !line.empty();
  CHECK(rows == 2601 * 3);
  fs::remove_all(dir);
}

TEST_CASE("CHAOSCOPE_OUT provides the default output root") {
  const auto dir = fresh_dir("chaoscope_cli_envout");
  const std::string cmd = std::string("CHAOSCOPE_OUT=") + dir + " " +
                          CHAOSCOPE_CLI_PATH +
                          " export-poincare --set poincare.steps=2 "
                          "> /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(rc));
  CHECK(WEXITSTATUS(rc) == 0);
  CHECK(fs::exists(fs::path(dir) / "poincare.csv"));
  fs::remove_all(dir);
}
