#include "chaoscope/dynamics.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "chaoscope/common.hpp"
#include "json.hpp"

namespace chaoscope::dynamics {

using std::numbers::pi;

std::string map_name(MapId id) {
  switch (id) {
    case MapId::StandardMap: return "standard";
    case MapId::Logistic: return "logistic";
    case MapId::Lorenz: return "lorenz";
  }
  throw std::invalid_argument("unknown map id");
}

MapId map_from_name(const std::string& name) {
  if (name == "standard") return MapId::StandardMap;
  if (name == "logistic") return MapId::Logistic;
  if (name == "lorenz") return MapId::Lorenz;
  throw ConfigError("unknown map name: " + name);
}

double wrap_unit(double v) {
  double w = v - std::floor(v);
  if (w >= 1.0) w = 0.0;  // floor rounding can land exactly on 1.0
  return w;
}

PhaseState2D standard_map_step(PhaseState2D s, const StandardMapParams& params) {
  const double p1 = wrap_unit(s.p + params.K / (2.0 * pi) * std::sin(2.0 * pi * s.x));
  const double x1 = wrap_unit(s.x + p1);
  return {p1, x1};
}

double logistic_step(double x, const LogisticParams& params) {
  if (!(x >= 0.0 && x <= 1.0))
    throw std::domain_error("logistic_step: state outside [0,1]");
  return params.r * x * (1.0 - x);
}

std::array<double, 3> lorenz_step(const std::array<double, 3>& s,
                                  const LorenzParams& params) {
  const double X = s[0], Y = s[1], Z = s[2];
  const double d = params.delta;
  const double Xn = X + params.sigma * d * (Y - X);
  double Yn;
  if (params.form == LorenzForm::Printed) {
    Yn = Y + params.rho * d * X - d * X * Z - d * Z;
  } else {
    Yn = Y + d * (params.rho * X - X * Z - Y);
  }
  const double Zn = Z + d * X * Y - params.beta * d * Z;
  return {Xn, Yn, Zn};
}

std::string params_to_json(const MapParams& params) {
  nlohmann::json j;
  if (const auto* sm = std::get_if<StandardMapParams>(&params)) {
    j["K"] = sm->K;
  } else if (const auto* lg = std::get_if<LogisticParams>(&params)) {
    j["r"] = lg->r;
  } else {
    const auto& lz = std::get<LorenzParams>(params);
    j = {{"sigma", lz.sigma}, {"rho", lz.rho}, {"beta", lz.beta},
         {"delta", lz.delta},
         {"form", lz.form == LorenzForm::Printed ? "printed" : "euler"}};
  }
  return j.dump();
}

Trajectory iterate(MapId id, const MapParams& params,
                   const std::vector<double>& initial_state, std::size_t n) {
  if (n < 1) throw std::invalid_argument("iterate: N must be >= 1");
  Trajectory t;
  t.map_id = id;
  t.param_json = params_to_json(params);
  t.length = n;
  switch (id) {
    case MapId::StandardMap: {
      if (initial_state.size() != 2)
        throw std::invalid_argument("standard map state is (p, x)");
      const auto& sp = std::get<StandardMapParams>(params);
      t.channels = 2;
      t.values.resize(2 * n);
      PhaseState2D s{initial_state[0], initial_state[1]};
      t.values[0] = s.p;
      t.values[1] = s.x;
      for (std::size_t k = 1; k < n; ++k) {
        s = standard_map_step(s, sp);
        t.values[2 * k] = s.p;
        t.values[2 * k + 1] = s.x;
      }
      break;
    }
    case MapId::Logistic: {
      if (initial_state.size() != 1)
        throw std::invalid_argument("logistic state is scalar");
      const auto& lp = std::get<LogisticParams>(params);
      t.channels = 1;
      t.values.resize(n);
      double x = initial_state[0];
      t.values[0] = x;
      for (std::size_t k = 1; k < n; ++k) {
        x = logistic_step(x, lp);
        t.values[k] = x;
      }
      break;
    }
    case MapId::Lorenz: {
      if (initial_state.size() != 3)
        throw std::invalid_argument("lorenz state is (X, Y, Z)");
      const auto& lz = std::get<LorenzParams>(params);
      t.channels = 3;
      t.values.resize(3 * n);
      std::array<double, 3> s{initial_state[0], initial_state[1], initial_state[2]};
      for (std::size_t c = 0; c < 3; ++c) t.values[c] = s[c];
      for (std::size_t k = 1; k < n; ++k) {
        s = lorenz_step(s, lz);
        for (std::size_t c = 0; c < 3; ++c) t.values[3 * k + c] = s[c];
      }
      break;
    }
  }
  return t;
}

std::vector<PhaseState2D> grid_initial_conditions(const GridSpec& spec) {
  if (spec.rows < 2 || spec.cols < 2)
    throw std::invalid_argument("grid needs at least 2x2 points");
  std::vector<PhaseState2D> pts;
  pts.reserve(static_cast<std::size_t>(spec.rows) * spec.cols);
  for (int i = 0; i < spec.rows; ++i)
    for (int j = 0; j < spec.cols; ++j)
      pts.push_back({i * spec.spacing, j * spec.spacing});
  return pts;
}

Trajectory project_channels(const Trajectory& t,
                            const std::vector<std::size_t>& channel_indices) {
  for (std::size_t k = 0; k < channel_indices.size(); ++k) {
    if (channel_indices[k] >= t.channels)
      throw std::out_of_range("project_channels: channel index out of range");
    for (std::size_t m = k + 1; m < channel_indices.size(); ++m)
      if (channel_indices[k] == channel_indices[m])
        throw std::invalid_argument("project_channels: duplicate channel index");
  }
  Trajectory out = t;
  out.channels = channel_indices.size();
  out.values.resize(out.length * out.channels);
  for (std::size_t s = 0; s < t.length; ++s)
    for (std::size_t k = 0; k < channel_indices.size(); ++k)
      out.values[s * out.channels + k] = t.at(s, channel_indices[k]);
  return out;
}

Trajectory normalize_trajectory(const Trajectory& t) {
  Trajectory out = t;
  for (std::size_t c = 0; c < t.channels; ++c) {
    double lo = t.at(0, c), hi = t.at(0, c);
    for (std::size_t s = 1; s < t.length; ++s) {
      lo = std::min(lo, t.at(s, c));
      hi = std::max(hi, t.at(s, c));
    }
    if (hi > lo) {
      const double inv = 1.0 / (hi - lo);
      for (std::size_t s = 0; s < t.length; ++s)
        out.at(s, c) = (t.at(s, c) - lo) * inv;
    } else {
      for (std::size_t s = 0; s < t.length; ++s) out.at(s, c) = 0.5;
    }
  }
  return out;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& t) {
  os << "map,param_json,step";
  for (std::size_t c = 0; c < t.channels; ++c) os << ",c" << c;
  os << "\n";
  std::string quoted = "\"";
  for (char ch : t.param_json) quoted += (ch == '"') ? std::string("\"\"") : std::string(1, ch);
  quoted += "\"";
  os.precision(17);
  for (std::size_t s = 0; s < t.length; ++s) {
    os << map_name(t.map_id) << "," << quoted << "," << s;
    for (std::size_t c = 0; c < t.channels; ++c) os << "," << t.at(s, c);
    os << "\n";
  }
}

namespace {

constexpr char kMagic[4] = {'C', 'H', 'S', 'C'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::string& buf, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  buf.append(p, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size())
    throw std::runtime_error("trajectory container: truncated file");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void save_trajectories(const std::string& path,
                       const std::vector<Trajectory>& ts) {
  std::string body;
  put(body, static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    put(body, static_cast<std::uint16_t>(t.map_id));
    put(body, static_cast<std::uint16_t>(t.channels));
    put(body, static_cast<std::uint64_t>(t.length));
    put(body, static_cast<std::uint32_t>(t.param_json.size()));
    body.append(t.param_json);
    body.append(reinterpret_cast<const char*>(t.values.data()),
                t.values.size() * sizeof(double));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, 4);
  std::uint16_t ver = kVersion;
  os.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  std::uint64_t sum = fnv1a64(body.data(), body.size());
  os.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<Trajectory> load_trajectories(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  std::string raw = ss.str();
  if (raw.size() < 4 + 2 + 4 + 8 || std::memcmp(raw.data(), kMagic, 4) != 0)
    throw std::runtime_error("trajectory container: bad magic or truncated");
  std::size_t off = 4;
  std::uint16_t ver = get<std::uint16_t>(raw, off);
  if (ver != kVersion)
    throw std::runtime_error("trajectory container: unsupported version " +
                             std::to_string(ver));
  std::string body = raw.substr(off, raw.size() - off - 8);
  std::uint64_t stored;
  std::memcpy(&stored, raw.data() + raw.size() - 8, 8);
  if (fnv1a64(body.data(), body.size()) != stored)
    throw std::runtime_error("trajectory container: checksum mismatch");

  off = 0;
  auto count = get<std::uint32_t>(body, off);
  std::vector<Trajectory> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Trajectory t;
    t.map_id = static_cast<MapId>(get<std::uint16_t>(body, off));
    t.channels = get<std::uint16_t>(body, off);
    t.length = get<std::uint64_t>(body, off);
    auto jlen = get<std::uint32_t>(body, off);
    if (off + jlen > body.size())
      throw std::runtime_error("trajectory container: truncated file");
    t.param_json = body.substr(off, jlen);
    off += jlen;
    const std::size_t nvals = t.length * t.channels;
    if (off + nvals * sizeof(double) > body.size())
      throw std::runtime_error("trajectory container: truncated file");
    t.values.resize(nvals);
    std::memcpy(t.values.data(), body.data() + off, nvals * sizeof(double));
    off += nvals * sizeof(double);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace chaoscope::dynamics
