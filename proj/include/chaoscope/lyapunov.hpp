#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "chaoscope/dynamics.hpp"

namespace chaoscope::lyapunov {

// Tangent-space perturbation (delta along p, zeta along x).
struct TangentVector2D {
  double delta = 1.0;
  double zeta = 0.0;
};

// How the standard-map variational update is evaluated. Printed applies the
// update formula literally; Analytic applies the Jacobian matrix of
// standard_map_step. The two routes are algebraically identical
// (d/dx [K/(2*pi) * sin(2*pi*x)] = K*cos(2*pi*x)) and tests assert they agree.
enum class TangentMode : std::uint8_t { Printed = 0, Analytic = 1 };

TangentVector2D tangent_step(const dynamics::PhaseState2D& state,
                             const TangentVector2D& tv,
                             const dynamics::StandardMapParams& params,
                             TangentMode mode = TangentMode::Printed);

// Running finite-time exponent lambda_N for N = 2..N_max.
struct LyapunovSeries {
  std::vector<double> values;  // values[k] = lambda_{k+2}
  double final = 0.0;          // lambda_{N_max}

  double lyapunov_time() const { return 1.0 / final; }
};

// lambda_N = (1/N) sum_{n=2..N} ln(stretch_n), tangent renormalized to unit
// length after every step. For the logistic map the stretch factor is the
// scalar derivative |r(1-2x)|; for the Lorenz map a single 3-vector is pushed
// through the 3x3 Jacobian.
LyapunovSeries lyapunov_series(dynamics::MapId id,
                               const dynamics::MapParams& params,
                               const std::vector<double>& initial_state,
                               std::size_t n,
                               TangentMode mode = TangentMode::Printed);

// Same accumulation without storing the running values; returns lambda_N and
// optionally samples lambda at the requested N values (each must be >= 2 and
// <= n, ascending). sample_out[i] receives lambda_{sample_at[i]}.
double lyapunov_final(dynamics::MapId id, const dynamics::MapParams& params,
                      const std::vector<double>& initial_state, std::size_t n,
                      TangentMode mode = TangentMode::Printed,
                      const std::vector<std::size_t>* sample_at = nullptr,
                      std::vector<double>* sample_out = nullptr);

// Chaotic-sea exponent of the standard map as a function of K: ln(0.7+0.42K).
double lyapunov_fit(double k);

enum class ChaosLabel : std::uint8_t { Regular = 0, Chaotic = 1 };

struct HistogramSpec {
  int bin_count = 61;
  // Bin range; if unset, the observed [min, max] of the samples is used.
  std::optional<std::pair<double, double>> range;
};

struct Histogram {
  std::vector<std::size_t> counts;
  double lo = 0.0;
  double width = 0.0;
  double center(std::size_t bin) const { return lo + (bin + 0.5) * width; }
};

Histogram build_histogram(const std::vector<double>& values,
                          const HistogramSpec& spec);

// Two-peak protocol: take the two highest local maxima of the histogram
// (ties toward smaller lambda) and return the center of the deepest minimum
// bin strictly between them (tied minima resolve toward smaller lambda).
// Throws DegenerateDataError when fewer than two separated peaks exist.
double threshold_from_histogram(const std::vector<double>& lambda_values,
                                const HistogramSpec& spec);

ChaosLabel label_by_threshold(double lambda_value, double threshold);

struct ReferenceLabels {
  std::vector<double> lambda;      // lambda_{N_ref} per grid point
  std::vector<ChaosLabel> labels;  // one per grid point
  double threshold = 0.0;
  bool unimodal_fallback = false;
};

// Long-time labeling of a grid of standard-map initial conditions sharing one
// K. When the joint histogram has a single peak, all points take the label of
// that cluster: Regular if its mean lies below max(lyapunov_fit(K)/2, 1e-3).
ReferenceLabels reference_labels(const dynamics::StandardMapParams& params,
                                 const std::vector<dynamics::PhaseState2D>& grid,
                                 std::size_t n_ref,
                                 TangentMode mode = TangentMode::Printed,
                                 const HistogramSpec& spec = {});

struct SuccessRates {
  std::size_t a_c = 0, a_r = 0;  // reference class sizes
  std::size_t b_c = 0, b_r = 0;  // correct predictions within each class
  std::optional<double> p_c;     // undefined when a_c == 0
  std::optional<double> p_r;
  double p_tot = 0.0;
};

SuccessRates success_rates(const std::vector<ChaosLabel>& predicted,
                           const std::vector<ChaosLabel>& reference);

void write_labels_csv(std::ostream& os, const dynamics::GridSpec& grid,
                      const ReferenceLabels& ref);
void write_histogram_csv(std::ostream& os, const Histogram& h);

}  // namespace chaoscope::lyapunov
