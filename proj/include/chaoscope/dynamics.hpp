#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

namespace chaoscope::dynamics {

enum class MapId : std::uint16_t { StandardMap = 0, Logistic = 1, Lorenz = 2 };

std::string map_name(MapId id);
MapId map_from_name(const std::string& name);

// Phase-space point of the kicked rotor; both coordinates wrap mod 1.
struct PhaseState2D {
  double p = 0.0;
  double x = 0.0;
};

struct StandardMapParams {
  double K = 0.0;  // kick strength, K >= 0
};

struct LogisticParams {
  double r = 0.0;  // growth parameter, 0 <= r <= 4
};

// Which discrete form of the Lorenz map to iterate. Printed is the default;
// Euler replaces the Y update with Y + delta*(rho*X - X*Z - Y).
enum class LorenzForm : std::uint8_t { Printed = 0, Euler = 1 };

struct LorenzParams {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  double delta = 0.001;  // discrete step size, > 0 (0 allowed in tests)
  LorenzForm form = LorenzForm::Printed;
};

using MapParams = std::variant<StandardMapParams, LogisticParams, LorenzParams>;

// Time series of d-dimensional states, row-major [length x channels].
struct Trajectory {
  MapId map_id = MapId::StandardMap;
  std::string param_json;  // parameter record of the generating map
  std::size_t length = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  double at(std::size_t step, std::size_t channel) const {
    return values[step * channels + channel];
  }
  double& at(std::size_t step, std::size_t channel) {
    return values[step * channels + channel];
  }
};

// Regular lattice of initial conditions, points (i-1)*spacing x (j-1)*spacing.
struct GridSpec {
  int rows = 51;
  int cols = 51;
  double spacing = 1.0 / 50.0;
};

// mod-1 wrap onto [0, 1): exact 1.0 maps to 0.0.
double wrap_unit(double v);

PhaseState2D standard_map_step(PhaseState2D s, const StandardMapParams& params);

// r*x*(1-x); rejects x outside [0,1].
double logistic_step(double x, const LogisticParams& params);

std::array<double, 3> lorenz_step(const std::array<double, 3>& s,
                                  const LorenzParams& params);

Trajectory iterate(MapId id, const MapParams& params,
                   const std::vector<double>& initial_state, std::size_t n);

std::vector<PhaseState2D> grid_initial_conditions(const GridSpec& spec);

Trajectory project_channels(const Trajectory& t,
                            const std::vector<std::size_t>& channel_indices);

// Per-channel min-max scaling to [0,1]; a constant channel maps to 0.5.
Trajectory normalize_trajectory(const Trajectory& t);

std::string params_to_json(const MapParams& params);

// --- persistence ------------------------------------------------------------

void write_trajectory_csv(std::ostream& os, const Trajectory& t);

// Multi-record binary container. Layout (all little-endian):
//   magic "CHSC", version u16, record count u32, then per record:
//   map_id u16, channels u16, length u64, param_json length u32, json bytes,
//   length*channels f64 row-major; finally fnv1a-64 checksum u64 over
//   everything after the version field.
void save_trajectories(const std::string& path,
                       const std::vector<Trajectory>& ts);
std::vector<Trajectory> load_trajectories(const std::string& path);

}  // namespace chaoscope::dynamics
