#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "chaoscope/common.hpp"
#include "chaoscope/dynamics.hpp"
#include "doctest.h"

using namespace chaoscope;
using namespace chaoscope::dynamics;

namespace {
std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("wrap_unit maps onto [0,1) with exact endpoints") {
  CHECK(wrap_unit(0.0) == 0.0);
  CHECK(wrap_unit(1.0) == 0.0);
  CHECK(wrap_unit(2.0) == 0.0);
  CHECK(wrap_unit(-0.25) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(wrap_unit(1.25) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(wrap_unit(0.6) == 0.6);
  // Values just below 1.0 whose fractional part rounds to 1.0 must wrap to 0.
  CHECK(wrap_unit(std::nextafter(1.0, 0.0) + 1.0) < 1.0);
}

TEST_CASE("standard map step matches frozen reference values") {
  const StandardMapParams params{2.5};
  auto s = standard_map_step({0.3, 0.7}, params);
  CHECK(s.p == doctest::Approx(0.9215866356796715).epsilon(1e-14));
  CHECK(s.x == doctest::Approx(0.6215866356796713).epsilon(1e-14));
  s = standard_map_step(s, params);
  CHECK(s.p == doctest::Approx(0.6463360598280531).epsilon(1e-13));
  CHECK(s.x == doctest::Approx(0.2679226955077243).epsilon(1e-13));
}

TEST_CASE("standard map at K=0 is the bare twist map") {
  const StandardMapParams params{0.0};
  PhaseState2D s{0.3, 0.1};
  for (int n = 0; n < 10; ++n) {
    const auto next = standard_map_step(s, params);
    CHECK(next.p == doctest::Approx(s.p).epsilon(1e-15));
    CHECK(next.x == doctest::Approx(wrap_unit(s.x + s.p)).epsilon(1e-15));
    s = next;
  }
}

TEST_CASE("standard map coordinates stay in [0,1)") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const StandardMapParams params{7.3};
  for (int t = 0; t < 200; ++t) {
    PhaseState2D s{uni(rng), uni(rng)};
    for (int n = 0; n < 50; ++n) s = standard_map_step(s, params);
    CHECK(s.p >= 0.0);
    CHECK(s.p < 1.0);
    CHECK(s.x >= 0.0);
    CHECK(s.x < 1.0);
  }
}

TEST_CASE("logistic step value and domain checks") {
  CHECK(logistic_step(0.3, {4.0}) == doctest::Approx(0.84).epsilon(1e-15));
  CHECK(logistic_step(0.0, {3.7}) == 0.0);
  CHECK(logistic_step(1.0, {3.7}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(logistic_step(-0.01, {4.0}), std::domain_error);
  CHECK_THROWS_AS(logistic_step(1.01, {4.0}), std::domain_error);
  CHECK_THROWS_AS(logistic_step(std::nan(""), {4.0}), std::domain_error);
}

TEST_CASE("lorenz step: both forms against frozen references") {
  LorenzParams params;  // sigma=10, rho defaults replaced below
  params.rho = 28.0;
  const std::array<double, 3> s{1.0, 2.0, 3.0};
  const auto printed = lorenz_step(s, params);
  CHECK(printed[0] == doctest::Approx(1.01).epsilon(1e-14));
  CHECK(printed[1] == doctest::Approx(2.022).epsilon(1e-14));
  CHECK(printed[2] == doctest::Approx(2.994).epsilon(1e-14));
  params.form = LorenzForm::Euler;
  const auto euler = lorenz_step(s, params);
  CHECK(euler[0] == printed[0]);
  CHECK(euler[1] == doctest::Approx(2.023).epsilon(1e-14));
  CHECK(euler[2] == printed[2]);
}

TEST_CASE("lorenz forms differ exactly by the delta*(Y - Z) relaxation term") {
  LorenzParams p1;
  p1.rho = 20.0;
  LorenzParams p2 = p1;
  p2.form = LorenzForm::Euler;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(-5.0, 5.0);
  for (int t = 0; t < 100; ++t) {
    const std::array<double, 3> s{uni(rng), uni(rng), uni(rng)};
    const auto a = lorenz_step(s, p1);
    const auto b = lorenz_step(s, p2);
    // printed Y-update subtracts delta*Z, Euler subtracts delta*Y
    CHECK(a[1] - b[1] == doctest::Approx(p1.delta * (s[1] - s[2])).epsilon(1e-12));
  }
}

TEST_CASE("iterate produces the expected shape and first row") {
  const MapParams params = StandardMapParams{1.5};
  const auto t = iterate(MapId::StandardMap, params, {0.25, 0.5}, 7);
  CHECK(t.length == 7);
  CHECK(t.channels == 2);
  CHECK(t.values.size() == 14);
  CHECK(t.at(0, 0) == 0.25);
  CHECK(t.at(0, 1) == 0.5);
  // row n+1 is one map application of row n
  for (std::size_t n = 0; n + 1 < t.length; ++n) {
    const auto s = standard_map_step({t.at(n, 0), t.at(n, 1)},
                                     std::get<StandardMapParams>(params));
    CHECK(t.at(n + 1, 0) == s.p);
    CHECK(t.at(n + 1, 1) == s.x);
  }
  CHECK_THROWS_AS(iterate(MapId::StandardMap, params, {0.1}, 5),
                  std::invalid_argument);
  CHECK_THROWS_AS(iterate(MapId::StandardMap, params, {0.1, 0.2}, 0),
                  std::invalid_argument);
  const auto one = iterate(MapId::Logistic, LogisticParams{3.5}, {0.2}, 1);
  CHECK(one.length == 1);
  CHECK(one.values == std::vector<double>{0.2});
}

TEST_CASE("grid initial conditions: row-major, p slow, spacing exact") {
  const GridSpec spec;  // 51 x 51, spacing 1/50
  const auto pts = grid_initial_conditions(spec);
  REQUIRE(pts.size() == 2601);
  CHECK(pts[0].p == 0.0);
  CHECK(pts[0].x == 0.0);
  CHECK(pts[1].p == 0.0);
  CHECK(pts[1].x == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(pts[51].p == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(pts[51].x == 0.0);
  CHECK(pts[2600].p == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pts[2600].x == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(grid_initial_conditions({1, 5, 0.1}), std::invalid_argument);
}

TEST_CASE("project_channels selects and validates") {
  const auto t = iterate(MapId::Lorenz, LorenzParams{}, {1.0, 2.0, 3.0}, 5);
  const auto xz = project_channels(t, {0, 2});
  CHECK(xz.channels == 2);
  CHECK(xz.length == 5);
  for (std::size_t s = 0; s < 5; ++s) {
    CHECK(xz.at(s, 0) == t.at(s, 0));
    CHECK(xz.at(s, 1) == t.at(s, 2));
  }
  CHECK_THROWS_AS(project_channels(t, {3}), std::out_of_range);
  CHECK_THROWS_AS(project_channels(t, {1, 1}), std::invalid_argument);
}

TEST_CASE("normalize_trajectory: min-max to [0,1], constant channel to 0.5") {
  Trajectory t;
  t.map_id = MapId::Lorenz;
  t.length = 4;
  t.channels = 2;
  t.values = {2.0, 7.0, 6.0, 7.0, -2.0, 7.0, 0.0, 7.0};
  const auto n = normalize_trajectory(t);
  CHECK(n.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(n.at(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(n.at(2, 0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(n.at(3, 0) == doctest::Approx(0.25).epsilon(1e-15));
  for (std::size_t s = 0; s < 4; ++s) CHECK(n.at(s, 1) == 0.5);
}

TEST_CASE("map names round-trip; unknown rejected") {
  for (MapId id : {MapId::StandardMap, MapId::Logistic, MapId::Lorenz})
    CHECK(map_from_name(map_name(id)) == id);
  CHECK_THROWS_AS(map_from_name("duffing"), ConfigError);
}

TEST_CASE("trajectory CSV header and quoting") {
  const auto t = iterate(MapId::Logistic, LogisticParams{3.2}, {0.4}, 3);
  std::ostringstream os;
  write_trajectory_csv(os, t);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "map,param_json,step,c0");
  std::getline(is, line);
  CHECK(line.substr(0, 9) == "logistic,");
  CHECK(line.find("\"{\"\"r\"\":3.2}\"") != std::string::npos);
}

TEST_CASE("trajectory container round-trips exactly") {
  std::vector<Trajectory> ts;
  ts.push_back(iterate(MapId::StandardMap, StandardMapParams{2.5}, {0.3, 0.7}, 20));
  ts.push_back(iterate(MapId::Logistic, LogisticParams{3.9}, {0.11}, 13));
  ts.push_back(iterate(MapId::Lorenz, LorenzParams{}, {0.5, -0.5, 1.5}, 8));
  const auto path = temp_path("chaoscope_test_traj.chsc");
  save_trajectories(path, ts);
  const auto back = load_trajectories(path);
  REQUIRE(back.size() == ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CHECK(back[i].map_id == ts[i].map_id);
    CHECK(back[i].param_json == ts[i].param_json);
    CHECK(back[i].length == ts[i].length);
    CHECK(back[i].channels == ts[i].channels);
    CHECK(back[i].values == ts[i].values);  // bit-exact
  }
  std::remove(path.c_str());
}

TEST_CASE("trajectory container detects corruption") {
  const auto path = temp_path("chaoscope_test_corrupt.chsc");
  save_trajectories(path, {iterate(MapId::Logistic, LogisticParams{3.5}, {0.2}, 9)});

  SUBCASE("flipped payload byte fails the checksum") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(32);
    char b;
    f.seekg(32);
    f.get(b);
    f.seekp(32);
    f.put(static_cast<char>(b ^ 0x40));
    f.close();
    CHECK_THROWS_WITH_AS(load_trajectories(path),
                         doctest::Contains("checksum"), std::runtime_error);
  }
  SUBCASE("bad magic rejected") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(load_trajectories(path), std::runtime_error);
  }
  SUBCASE("truncation rejected") {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    is.close();
    std::string raw = ss.str();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(raw.data(), static_cast<std::streamsize>(raw.size() / 2));
    os.close();
    CHECK_THROWS_AS(load_trajectories(path), std::runtime_error);
  }
  std::remove(path.c_str());
}

TEST_CASE("params_to_json carries the generating parameters") {
  CHECK(params_to_json(StandardMapParams{2.5}) == "{\"K\":2.5}");
  CHECK(params_to_json(LogisticParams{3.75}) == "{\"r\":3.75}");
  const auto j = params_to_json(LorenzParams{});
  CHECK(j.find("\"rho\":28.0") != std::string::npos);
  CHECK(j.find("\"form\":\"printed\"") != std::string::npos);
}
