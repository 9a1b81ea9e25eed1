#include "chaoscope/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "chaoscope/common.hpp"

namespace chaoscope::lyapunov {

using dynamics::MapId;
using std::numbers::pi;

TangentVector2D tangent_step(const dynamics::PhaseState2D& state,
                             const TangentVector2D& tv,
                             const dynamics::StandardMapParams& params,
                             TangentMode mode) {
  const double c = params.K * std::cos(2.0 * pi * state.x);
  if (mode == TangentMode::Printed) {
    const double d1 = tv.delta + c * tv.zeta;
    return {d1, tv.zeta + d1};
  }
  // Analytic route: apply the Jacobian [[1, c], [1, 1 + c]] of one map step.
  return {tv.delta + c * tv.zeta, tv.delta + (1.0 + c) * tv.zeta};
}

namespace {

// One renormalized tangent push; returns the stretch factor of a unit vector.
struct StandardTangent {
  dynamics::StandardMapParams params;
  TangentMode mode;
  dynamics::PhaseState2D s;
  TangentVector2D v{1.0, 0.0};

  double advance() {
    v = tangent_step(s, v, params, mode);
    s = dynamics::standard_map_step(s, params);
    const double nrm = std::hypot(v.delta, v.zeta);
    v.delta /= nrm;
    v.zeta /= nrm;
    return nrm;
  }
};

struct LogisticTangent {
  dynamics::LogisticParams params;
  double x;

  double advance() {
    const double stretch =
        std::max(std::abs(params.r * (1.0 - 2.0 * x)), 1e-300);
    x = dynamics::logistic_step(x, params);
    return stretch;
  }
};

struct LorenzTangent {
  dynamics::LorenzParams params;
  std::array<double, 3> s;
  std::array<double, 3> v{1.0, 0.0, 0.0};

  double advance() {
    const double d = params.delta;
    const double X = s[0], Y = s[1], Z = s[2];
    // Rows of the one-step Jacobian for the selected form.
    double j10, j11, j12;
    if (params.form == dynamics::LorenzForm::Printed) {
      j10 = d * (params.rho - Z);
      j11 = 1.0;
      j12 = -d * (X + 1.0);
    } else {
      j10 = d * (params.rho - Z);
      j11 = 1.0 - d;
      j12 = -d * X;
    }
    const std::array<double, 3> w{
        (1.0 - params.sigma * d) * v[0] + params.sigma * d * v[1],
        j10 * v[0] + j11 * v[1] + j12 * v[2],
        d * Y * v[0] + d * X * v[1] + (1.0 - params.beta * d) * v[2]};
    const double nrm = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    for (int i = 0; i < 3; ++i) v[i] = w[i] / nrm;
    s = dynamics::lorenz_step(s, params);
    return nrm;
  }
};

template <typename Tangent>
double accumulate(Tangent tan, std::size_t n, std::vector<double>* series,
                  const std::vector<std::size_t>* sample_at,
                  std::vector<double>* sample_out) {
  if (n < 2) throw std::invalid_argument("lyapunov: N must be >= 2");
  if (series) series->reserve(n - 1);
  if (sample_at && sample_out) sample_out->assign(sample_at->size(), 0.0);
  double sum = 0.0;
  std::size_t next_sample = 0;
  for (std::size_t step = 2; step <= n; ++step) {
    sum += std::log(tan.advance());
    if (!std::isfinite(sum))
      throw std::runtime_error("lyapunov: non-finite accumulation");
    if (series) series->push_back(sum / static_cast<double>(step));
    if (sample_at) {
      while (next_sample < sample_at->size() &&
             (*sample_at)[next_sample] == step) {
        (*sample_out)[next_sample] = sum / static_cast<double>(step);
        ++next_sample;
      }
    }
  }
  return sum / static_cast<double>(n);
}

template <typename Fn>
auto dispatch(MapId id, const dynamics::MapParams& params,
              const std::vector<double>& s0, Fn&& fn, TangentMode mode) {
  switch (id) {
    case MapId::StandardMap: {
      if (s0.size() != 2) throw std::invalid_argument("state size != 2");
      StandardTangent t{std::get<dynamics::StandardMapParams>(params), mode,
                        {s0[0], s0[1]}};
      return fn(t);
    }
    case MapId::Logistic: {
      if (s0.size() != 1) throw std::invalid_argument("state size != 1");
      LogisticTangent t{std::get<dynamics::LogisticParams>(params), s0[0]};
      return fn(t);
    }
    case MapId::Lorenz: {
      if (s0.size() != 3) throw std::invalid_argument("state size != 3");
      LorenzTangent t{std::get<dynamics::LorenzParams>(params),
                      {s0[0], s0[1], s0[2]}};
      return fn(t);
    }
  }
  throw std::invalid_argument("unknown map id");
}

}  // namespace

LyapunovSeries lyapunov_series(MapId id, const dynamics::MapParams& params,
                               const std::vector<double>& initial_state,
                               std::size_t n, TangentMode mode) {
  LyapunovSeries out;
  out.final = dispatch(id, params, initial_state,
                       [&](auto& t) {
                         return accumulate(t, n, &out.values, nullptr, nullptr);
                       },
                       mode);
  return out;
}

double lyapunov_final(MapId id, const dynamics::MapParams& params,
                      const std::vector<double>& initial_state, std::size_t n,
                      TangentMode mode, const std::vector<std::size_t>* sample_at,
                      std::vector<double>* sample_out) {
  return dispatch(id, params, initial_state,
                  [&](auto& t) {
                    return accumulate(t, n, nullptr, sample_at, sample_out);
                  },
                  mode);
}

double lyapunov_fit(double k) {
  const double arg = 0.7 + 0.42 * k;
  if (arg <= 0.0) throw std::domain_error("lyapunov_fit: log argument <= 0");
  return std::log(arg);
}

Histogram build_histogram(const std::vector<double>& values,
                          const HistogramSpec& spec) {
  if (spec.bin_count < 3)
    throw std::invalid_argument("histogram needs at least 3 bins");
  if (values.size() < static_cast<std::size_t>(spec.bin_count))
    throw std::invalid_argument("fewer samples than bins");
  double lo, hi;
  if (spec.range) {
    lo = spec.range->first;
    hi = spec.range->second;
  } else {
    auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    lo = *mn;
    hi = *mx;
  }
  if (!(lo < hi)) hi = lo + 1e-12;
  Histogram h;
  h.lo = lo;
  h.width = (hi - lo) / spec.bin_count;
  h.counts.assign(spec.bin_count, 0);
  for (double v : values) {
    auto bin = static_cast<long>((v - lo) / h.width);
    bin = std::clamp<long>(bin, 0, spec.bin_count - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  return h;
}

namespace {

// Local maxima of the bin counts; a plateau counts once (leftmost bin).
std::vector<std::size_t> find_peaks(const std::vector<std::size_t>& c) {
  std::vector<std::size_t> peaks;
  const std::size_t n = c.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (c[i] == 0) continue;
    if (i > 0 && c[i - 1] >= c[i]) continue;  // not leftmost of its plateau
    std::size_t j = i;
    while (j + 1 < n && c[j + 1] == c[i]) ++j;
    if (j + 1 == n || c[j + 1] < c[i]) peaks.push_back(i);
  }
  return peaks;
}

}  // namespace

double threshold_from_histogram(const std::vector<double>& lambda_values,
                                const HistogramSpec& spec) {
  const Histogram h = build_histogram(lambda_values, spec);
  auto peaks = find_peaks(h.counts);
  std::size_t nonempty = 0;
  for (auto c : h.counts) nonempty += (c > 0);
  if (peaks.size() < 2 || nonempty < 2)
    throw DegenerateDataError("threshold_from_histogram: unimodal histogram");
  // Two highest peaks, ties toward smaller lambda.
  std::stable_sort(peaks.begin(), peaks.end(), [&](std::size_t a, std::size_t b) {
    return h.counts[a] != h.counts[b] ? h.counts[a] > h.counts[b] : a < b;
  });
  std::size_t left = std::min(peaks[0], peaks[1]);
  std::size_t right = std::max(peaks[0], peaks[1]);
  if (right - left < 2)
    throw DegenerateDataError("threshold_from_histogram: peaks not separated");
  std::size_t best = left + 1;
  for (std::size_t i = left + 1; i < right; ++i)
    if (h.counts[i] < h.counts[best]) best = i;
  return h.center(best);
}

ChaosLabel label_by_threshold(double lambda_value, double threshold) {
  return lambda_value > threshold ? ChaosLabel::Chaotic : ChaosLabel::Regular;
}

ReferenceLabels reference_labels(const dynamics::StandardMapParams& params,
                                 const std::vector<dynamics::PhaseState2D>& grid,
                                 std::size_t n_ref, TangentMode mode,
                                 const HistogramSpec& spec) {
  ReferenceLabels out;
  out.lambda.resize(grid.size());
  dynamics::MapParams mp = params;
  parallel_for(grid.size(), [&](std::size_t i) {
    out.lambda[i] = lyapunov_final(MapId::StandardMap, mp,
                                   {grid[i].p, grid[i].x}, n_ref, mode);
  });
  try {
    out.threshold = threshold_from_histogram(out.lambda, spec);
  } catch (const DegenerateDataError&) {
    // Single-cluster fallback: the whole grid takes one label, decided by the
    // cluster mean against half the chaotic-sea fit. The floor must sit above
    // the integrable shear envelope ln(N)/N (a K=0 orbit stretches tangent
    // vectors linearly, so lambda_N ~ ln(N)/N stays positive at finite N),
    // with 1e-3 as the asymptotic minimum.
    double mean = 0.0;
    for (double v : out.lambda) mean += v;
    mean /= static_cast<double>(out.lambda.size());
    out.unimodal_fallback = true;
    const double n = static_cast<double>(n_ref);
    out.threshold =
        std::max({lyapunov_fit(params.K) / 2.0, 10.0 * std::log(n) / n, 1e-3});
    out.labels.assign(grid.size(), mean > out.threshold ? ChaosLabel::Chaotic
                                                        : ChaosLabel::Regular);
    return out;
  }
  out.labels.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i)
    out.labels[i] = label_by_threshold(out.lambda[i], out.threshold);
  return out;
}

SuccessRates success_rates(const std::vector<ChaosLabel>& predicted,
                           const std::vector<ChaosLabel>& reference) {
  if (predicted.size() != reference.size())
    throw std::invalid_argument("success_rates: length mismatch");
  SuccessRates r;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i] == ChaosLabel::Chaotic) {
      ++r.a_c;
      if (predicted[i] == ChaosLabel::Chaotic) ++r.b_c;
    } else {
      ++r.a_r;
      if (predicted[i] == ChaosLabel::Regular) ++r.b_r;
    }
  }
  if (r.a_c > 0) r.p_c = static_cast<double>(r.b_c) / static_cast<double>(r.a_c);
  if (r.a_r > 0) r.p_r = static_cast<double>(r.b_r) / static_cast<double>(r.a_r);
  r.p_tot = static_cast<double>(r.b_c + r.b_r) /
            static_cast<double>(r.a_c + r.a_r);
  return r;
}

void write_labels_csv(std::ostream& os, const dynamics::GridSpec& grid,
                      const ReferenceLabels& ref) {
  os << "i,j,p0,x0,lambda_N,label\n";
  os.precision(17);
  for (int i = 0; i < grid.rows; ++i) {
    for (int j = 0; j < grid.cols; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * grid.cols + j;
      os << (i + 1) << "," << (j + 1) << "," << i * grid.spacing << ","
         << j * grid.spacing << "," << ref.lambda[idx] << ","
         << (ref.labels[idx] == ChaosLabel::Chaotic ? "C" : "R") << "\n";
    }
  }
}

void write_histogram_csv(std::ostream& os, const Histogram& h) {
  os << "bin_center,count\n";
  os.precision(17);
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    os << h.center(i) << "," << h.counts[i] << "\n";
}

}  // namespace chaoscope::lyapunov
