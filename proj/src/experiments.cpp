#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "chaoscope/common.hpp"
#include "chaoscope/pipeline.hpp"
#include "json.hpp"

namespace chaoscope::pipeline {

namespace fs = std::filesystem;
using dynamics::MapId;
using lyapunov::ChaosLabel;

namespace {

struct WallClock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

std::string rate_str(const std::optional<double>& v) {
  return v ? std::to_string(*v) : std::string("nan");
}

// Success rates of a model over the full grid of one untrained K value.
lyapunov::SuccessRates eval_full_grid(const net::Model<float>& model,
                                      double k, const dynamics::GridSpec& grid,
                                      std::size_t n_k, std::size_t n_ref,
                                      lyapunov::TangentMode mode,
                                      ReferenceCache& cache,
                                      const std::vector<std::size_t>& channels,
                                      std::vector<bool>* correct_out = nullptr) {
  const dynamics::StandardMapParams params{k};
  const auto& ref = cache.get(params, grid, n_ref, mode);
  const auto pts = dynamics::grid_initial_conditions(grid);
  std::vector<dynamics::Trajectory> ts(pts.size());
  const dynamics::MapParams mp = params;
  parallel_for(pts.size(), [&](std::size_t i) {
    ts[i] = dynamics::iterate(MapId::StandardMap, mp, {pts[i].p, pts[i].x}, n_k);
  });
  const auto samples = samples_from_trajectories(ts, ref.labels, channels,
                                                 model.spec.input_cols);
  const auto pred = predict(model, samples);
  if (correct_out) {
    correct_out->resize(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      (*correct_out)[i] = pred[i] == ref.labels[i];
  }
  return lyapunov::success_rates(pred, ref.labels);
}

TrainResult train_preset_on(const LabeledDataset& ds, net::Preset preset,
                            const ExperimentConfig& cfg,
                            const std::vector<std::size_t>& channels,
                            std::uint64_t seed_salt = 0) {
  auto spec = net::build_preset(preset, static_cast<int>(ds.spec.n_k), cfg.scale);
  auto train_cfg = cfg.training;
  train_cfg.seed = split_seed(cfg.seed, "train", seed_salt);
  const auto samples =
      make_samples(ds, Partition::Train, channels, spec.input_cols);
  return train_model(samples, spec, train_cfg);
}

}  // namespace

// --- N_K sweep (accuracy table) ----------------------------------------------

NkSweepResult run_nk_sweep(const ExperimentConfig& cfg,
                           const std::vector<std::size_t>& nk_list) {
  WallClock clock;
  ReferenceCache local_cache;
  ReferenceCache& cache = cfg.cache ? *cfg.cache : local_cache;

  NkSweepResult res;
  res.nk_values = nk_list;
  for (int i = 0; i < 6; ++i) res.test_k.push_back(3.0 + 0.1 * i);
  res.rates.assign(res.test_k.size(), {});

  for (std::size_t nki = 0; nki < nk_list.size(); ++nki) {
    DatasetSpec spec;
    spec.k_min = 1.0;
    spec.k_max = 2.0;
    spec.m_k = 11;
    spec.m_tr = 2081;
    spec.m_tt = 520;
    spec.n_k = nk_list[nki];
    spec.n_ref = cfg.n_ref;
    spec.seed = split_seed(cfg.seed, "dataset", nki);
    const auto ds = build_dataset(spec, cfg.tangent_mode, &cache);
    const auto tr = train_preset_on(ds, net::Preset::Cnn2D, cfg, {0, 1}, nki);
    for (std::size_t ti = 0; ti < res.test_k.size(); ++ti)
      res.rates[ti].push_back(eval_full_grid(
          tr.model, res.test_k[ti], spec.grid, spec.n_k, cfg.n_ref,
          cfg.tangent_mode, cache, {0, 1}));
  }

  fs::create_directories(cfg.out_dir);
  std::ofstream os(fs::path(cfg.out_dir) / "nk_sweep.csv", std::ios::trunc);
  os << "K,N_K,P_C,P_R,P_tot\n";
  for (std::size_t ti = 0; ti < res.test_k.size(); ++ti)
    for (std::size_t nki = 0; nki < nk_list.size(); ++nki) {
      const auto& r = res.rates[ti][nki];
      os << res.test_k[ti] << "," << nk_list[nki] << "," << rate_str(r.p_c)
         << "," << rate_str(r.p_r) << "," << r.p_tot << "\n";
    }
  write_manifest(cfg.out_dir, "nk_sweep",
                 nlohmann::json{{"seed", cfg.seed}, {"nk", nk_list}}.dump(),
                 clock.seconds());
  return res;
}

// --- K-generalization sweeps -------------------------------------------------

KGeneralizationResult run_k_generalization(const ExperimentConfig& cfg,
                                           GeneralizationVariant variant) {
  WallClock clock;
  ReferenceCache local_cache;
  ReferenceCache& cache = cfg.cache ? *cfg.cache : local_cache;

  std::vector<DatasetSpec> specs;
  std::vector<std::string> names;
  if (variant == GeneralizationVariant::Count) {
    for (int m_k : {4, 7, 16, 31}) {
      DatasetSpec s;
      s.k_min = 0.1;
      s.k_max = 3.1;
      s.m_k = m_k;
      s.m_tr = 2081;
      s.m_tt = 520;
      s.n_k = 20;
      specs.push_back(s);
      names.push_back("M_K=" + std::to_string(m_k));
    }
  } else {
    const std::pair<double, int> ranges[] = {{3.7, 28}, {3.0, 21}, {2.5, 16}, {2.0, 11}};
    for (auto [k_max, m_k] : ranges) {
      DatasetSpec s;
      s.k_min = 1.0;
      s.k_max = k_max;
      s.m_k = m_k;
      s.m_tr = 2081;
      s.m_tt = 520;
      s.n_k = 20;
      specs.push_back(s);
      std::ostringstream name;
      name << "K_max=" << k_max;
      names.push_back(name.str());
    }
  }

  std::vector<double> eval_k;
  for (double k = 0.1; k <= 3.7 + 1e-9; k += cfg.gen_eval_k_step)
    eval_k.push_back(k);

  KGeneralizationResult res;
  for (std::size_t ci = 0; ci < specs.size(); ++ci) {
    auto& spec = specs[ci];
    spec.n_ref = cfg.n_ref;
    spec.seed = split_seed(cfg.seed, "dataset", ci);
    const auto ds = build_dataset(spec, cfg.tangent_mode, &cache);
    const auto tr = train_preset_on(ds, net::Preset::Cnn2D, cfg, {0, 1}, ci);
    KGeneralizationResult::Curve curve;
    curve.label = names[ci];
    curve.train_spec = spec;
    curve.eval_k = eval_k;
    for (double k : eval_k)
      curve.p_tot.push_back(eval_full_grid(tr.model, k, spec.grid, spec.n_k,
                                           cfg.n_ref, cfg.tangent_mode, cache,
                                           {0, 1})
                                .p_tot);
    res.curves.push_back(std::move(curve));
  }

  fs::create_directories(cfg.out_dir);
  const char* fname = variant == GeneralizationVariant::Count
                          ? "k_generalization_count.csv"
                          : "k_generalization_range.csv";
  std::ofstream os(fs::path(cfg.out_dir) / fname, std::ios::trunc);
  os << "curve,K,P_tot\n";
  for (const auto& c : res.curves)
    for (std::size_t i = 0; i < c.eval_k.size(); ++i)
      os << c.label << "," << c.eval_k[i] << "," << c.p_tot[i] << "\n";
  write_manifest(cfg.out_dir, "k_generalization",
                 nlohmann::json{{"seed", cfg.seed},
                                {"variant", variant == GeneralizationVariant::Count
                                                ? "count"
                                                : "range"}}
                     .dump(),
                 clock.seconds());
  return res;
}

// --- cross-map models --------------------------------------------------------

CrossModels train_cross_models(const ExperimentConfig& cfg,
                               const LabeledDataset& ds) {
  CrossModels m{
      train_preset_on(ds, net::Preset::Cnn2D, cfg, {0, 1}, 1001).model,
      train_preset_on(ds, net::Preset::Cnn1D, cfg, {0}, 1002).model};
  return m;
}

// --- logistic cross test -----------------------------------------------------

LogisticCrossResult run_logistic_cross(const ExperimentConfig& cfg,
                                       const net::Model<float>& model_1d,
                                       const net::Model<float>& model_2d) {
  WallClock clock;
  const int n_k = model_2d.spec.input_rows;
  if (model_1d.spec.input_rows != n_k)
    throw std::invalid_argument("cross models disagree on input length");

  std::vector<double> r_values;
  for (double r = 2.5; r <= 4.0 + 1e-12; r += cfg.logistic_r_step)
    r_values.push_back(std::min(r, 4.0));
  std::vector<double> x0_values;
  for (int i = 1; i <= cfg.logistic_x0_count; ++i)
    x0_values.push_back(static_cast<double>(i) /
                        (cfg.logistic_x0_count + 1));

  LogisticCrossResult res;
  res.points.resize(r_values.size() * x0_values.size());
  parallel_for(res.points.size(), [&](std::size_t idx) {
    auto& pt = res.points[idx];
    pt.r = r_values[idx / x0_values.size()];
    pt.x0 = x0_values[idx % x0_values.size()];
    const dynamics::MapParams mp = dynamics::LogisticParams{pt.r};
    pt.lambda = lyapunov::lyapunov_final(MapId::Logistic, mp, {pt.x0}, cfg.n_ref);
    pt.scored = std::abs(pt.lambda) > 1e-3;  // dead band around zero
    pt.truth = pt.lambda > 0.0 ? ChaosLabel::Chaotic : ChaosLabel::Regular;
  });

  std::vector<dynamics::Trajectory> ts(res.points.size());
  parallel_for(res.points.size(), [&](std::size_t idx) {
    const auto& pt = res.points[idx];
    ts[idx] = dynamics::iterate(MapId::Logistic,
                                dynamics::LogisticParams{pt.r}, {pt.x0}, n_k);
  });
  std::vector<ChaosLabel> truth(res.points.size());
  for (std::size_t i = 0; i < res.points.size(); ++i) truth[i] = res.points[i].truth;

  const auto s1 = samples_from_trajectories(ts, truth, {0}, model_1d.spec.input_cols);
  const auto s2 = samples_from_trajectories(ts, truth, {0}, model_2d.spec.input_cols);
  const auto p1 = predict(model_1d, s1);
  const auto p2 = predict(model_2d, s2);

  std::size_t scored = 0, ok1 = 0, ok2 = 0;
  for (std::size_t i = 0; i < res.points.size(); ++i) {
    auto& pt = res.points[i];
    pt.correct_1d = p1[i] == pt.truth;
    pt.correct_2d = p2[i] == pt.truth;
    if (pt.scored) {
      ++scored;
      ok1 += pt.correct_1d;
      ok2 += pt.correct_2d;
    }
  }
  if (scored == 0) throw DegenerateDataError("logistic cross: nothing to score");
  res.accuracy_1d = static_cast<double>(ok1) / static_cast<double>(scored);
  res.accuracy_2d = static_cast<double>(ok2) / static_cast<double>(scored);

  fs::create_directories(cfg.out_dir);
  std::ofstream os(fs::path(cfg.out_dir) / "logistic_cross.csv", std::ios::trunc);
  os << "r,x0,lambda,truth,scored,correct_1d,correct_2d\n";
  os.precision(12);
  for (const auto& pt : res.points)
    os << pt.r << "," << pt.x0 << "," << pt.lambda << ","
       << (pt.truth == ChaosLabel::Chaotic ? 'C' : 'R') << "," << pt.scored
       << "," << pt.correct_1d << "," << pt.correct_2d << "\n";
  write_manifest(cfg.out_dir, "logistic_cross",
                 nlohmann::json{{"seed", cfg.seed},
                                {"accuracy_1d", res.accuracy_1d},
                                {"accuracy_2d", res.accuracy_2d}}
                     .dump(),
                 clock.seconds());
  return res;
}

// --- Lorenz cross test -------------------------------------------------------

double LorenzCrossResult::accuracy(const std::string& projection,
                                   bool normalized) const {
  for (const auto& b : bars)
    if (b.projection == projection && b.normalized == normalized)
      return b.accuracy;
  throw std::out_of_range("no such projection: " + projection);
}

LorenzCrossResult run_lorenz_cross(const ExperimentConfig& cfg,
                                   const net::Model<float>& model_1d,
                                   const net::Model<float>& model_2d) {
  WallClock clock;
  const int n_k = model_2d.spec.input_rows;

  std::vector<double> rho_values;
  for (double rho = 0.0; rho <= 39.8 + 1e-9; rho += 0.2) rho_values.push_back(rho);

  struct Item {
    dynamics::Trajectory traj;  // first n_k steps, 3 channels
    ChaosLabel truth{};
    bool scored = false;
  };
  std::vector<Item> items(rho_values.size() * cfg.lorenz_ics_per_rho);
  parallel_for(items.size(), [&](std::size_t idx) {
    const std::size_t ri = idx / cfg.lorenz_ics_per_rho;
    const std::size_t ii = idx % cfg.lorenz_ics_per_rho;
    const double rho = rho_values[ri];
    dynamics::LorenzParams params;
    params.rho = rho;
    params.form = cfg.lorenz_form;
    // Seeded box of initial conditions, widened with rho so large attractors
    // are still covered.
    std::mt19937_64 rng(split_seed(cfg.seed, "lorenz_ic", idx));
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    const double box = 1.0 + rho / 4.0;
    const std::vector<double> ic{box * uni(rng), box * uni(rng), box * uni(rng)};
    auto& item = items[idx];
    const dynamics::MapParams mp = params;
    item.traj = dynamics::iterate(MapId::Lorenz, mp, ic, n_k);
    double lam_step;
    try {
      lam_step = lyapunov::lyapunov_final(MapId::Lorenz, mp, ic, cfg.lorenz_n_ref);
    } catch (const std::runtime_error&) {
      item.scored = false;  // diverged; leave out of the scoring set
      return;
    }
    const double lam_time = lam_step / params.delta;  // per unit time
    item.scored = std::abs(lam_time) > 1e-3;
    item.truth = lam_time > 0.0 ? ChaosLabel::Chaotic : ChaosLabel::Regular;
  });

  LorenzCrossResult res;
  std::size_t scored = 0, chaotic = 0;
  for (const auto& it : items) {
    scored += it.scored;
    chaotic += it.scored && it.truth == ChaosLabel::Chaotic;
  }
  if (scored == 0) throw DegenerateDataError("lorenz cross: nothing to score");
  res.chaotic_fraction = static_cast<double>(chaotic) / static_cast<double>(scored);

  const std::vector<std::pair<std::string, std::vector<std::size_t>>> projections{
      {"XY", {0, 1}}, {"XZ", {0, 2}}, {"YZ", {1, 2}},
      {"X", {0}},     {"Y", {1}},     {"Z", {2}}};
  for (const auto& [name, channels] : projections) {
    const bool two_d = channels.size() == 2;
    const auto& model = two_d ? model_2d : model_1d;
    for (bool normalized : {false, true}) {
      std::vector<dynamics::Trajectory> ts;
      std::vector<ChaosLabel> truth;
      ts.reserve(scored);
      for (const auto& it : items) {
        if (!it.scored) continue;
        auto proj = dynamics::project_channels(it.traj, channels);
        ts.push_back(normalized ? dynamics::normalize_trajectory(proj)
                                : std::move(proj));
        truth.push_back(it.truth);
      }
      const auto samples = samples_from_trajectories(
          ts, truth, two_d ? std::vector<std::size_t>{0, 1}
                           : std::vector<std::size_t>{0},
          model.spec.input_cols);
      const auto pred = predict(model, samples);
      std::size_t ok = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == truth[i];
      res.bars.push_back({name, normalized,
                          static_cast<double>(ok) / static_cast<double>(pred.size()),
                          pred.size()});
    }
  }

  fs::create_directories(cfg.out_dir);
  std::ofstream os(fs::path(cfg.out_dir) / "lorenz_cross.csv", std::ios::trunc);
  os << "projection,normalized,accuracy,scored\n";
  for (const auto& b : res.bars)
    os << b.projection << "," << (b.normalized ? 1 : 0) << "," << b.accuracy
       << "," << b.scored << "\n";
  write_manifest(cfg.out_dir, "lorenz_cross",
                 nlohmann::json{{"seed", cfg.seed},
                                {"ics_per_rho", cfg.lorenz_ics_per_rho},
                                {"chaotic_fraction", res.chaotic_fraction}}
                     .dump(),
                 clock.seconds());
  return res;
}

// --- Lyapunov-threshold baseline ---------------------------------------------

LyapunovBaselineResult run_lyapunov_baseline(const ExperimentConfig& cfg,
                                             double k,
                                             const std::vector<std::size_t>& n_list) {
  WallClock clock;
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    if (n_list[i] < 2 || n_list[i] > cfg.n_ref)
      throw ConfigError("baseline N values must lie in [2, N_ref]");
    if (i > 0 && n_list[i] <= n_list[i - 1])
      throw ConfigError("baseline N values must be ascending");
  }
  const dynamics::GridSpec grid;
  const auto pts = dynamics::grid_initial_conditions(grid);
  const dynamics::MapParams mp = dynamics::StandardMapParams{k};

  // One tangent pass per grid point; lambda_N sampled along the way.
  std::vector<double> ref_lambda(pts.size());
  std::vector<std::vector<double>> samples(pts.size());
  parallel_for(pts.size(), [&](std::size_t i) {
    ref_lambda[i] = lyapunov::lyapunov_final(MapId::StandardMap, mp,
                                             {pts[i].p, pts[i].x}, cfg.n_ref,
                                             cfg.tangent_mode, &n_list,
                                             &samples[i]);
  });

  const double ref_threshold = lyapunov::threshold_from_histogram(ref_lambda, {});
  std::vector<ChaosLabel> reference(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    reference[i] = lyapunov::label_by_threshold(ref_lambda[i], ref_threshold);

  LyapunovBaselineResult res;
  res.n_values = n_list;
  for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
    std::vector<double> lam(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) lam[i] = samples[i][ni];
    lyapunov::SuccessRates rates;
    try {
      // The threshold is recomputed at every reported N.
      const double th = lyapunov::threshold_from_histogram(lam, {});
      std::vector<ChaosLabel> pred(pts.size());
      for (std::size_t i = 0; i < pts.size(); ++i)
        pred[i] = lyapunov::label_by_threshold(lam[i], th);
      rates = lyapunov::success_rates(pred, reference);
    } catch (const DegenerateDataError&) {
      rates.p_tot = std::numeric_limits<double>::quiet_NaN();
    }
    res.rates.push_back(rates);
  }

  fs::create_directories(cfg.out_dir);
  std::ofstream os(fs::path(cfg.out_dir) / "lyapunov_baseline.csv",
                   std::ios::trunc);
  os << "N,P_C,P_R,P_tot\n";
  for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
    const auto& r = res.rates[ni];
    os << n_list[ni] << "," << rate_str(r.p_c) << "," << rate_str(r.p_r) << ","
       << r.p_tot << "\n";
  }
  write_manifest(cfg.out_dir, "lyapunov_baseline",
                 nlohmann::json{{"seed", cfg.seed}, {"K", k}}.dump(),
                 clock.seconds());
  return res;
}

// --- classifier comparison ---------------------------------------------------

ClassifierCompareResult run_classifier_compare(const ExperimentConfig& cfg) {
  WallClock clock;
  ReferenceCache local_cache;
  ReferenceCache& cache = cfg.cache ? *cfg.cache : local_cache;

  DatasetSpec spec;
  spec.k_min = 1.0;
  spec.k_max = 2.0;
  spec.m_k = 11;
  spec.m_tr = 2601;  // the whole grid trains; testing happens at other K
  spec.m_tt = 0;
  spec.n_k = 20;
  spec.n_ref = cfg.n_ref;
  spec.seed = split_seed(cfg.seed, "dataset");
  const auto ds = build_dataset(spec, cfg.tangent_mode, &cache);

  ClassifierCompareResult res;
  const std::pair<std::string, net::Preset> classifiers[] = {
      {"FCN", net::Preset::Fcn}, {"CNN", net::Preset::Cnn2D}};
  for (const auto& [name, preset] : classifiers) {
    const auto tr = train_preset_on(ds, preset, cfg, {0, 1},
                                    fnv1a64(name.data(), name.size()));
    std::vector<lyapunov::SuccessRates> parts;
    for (int i = 0; i < 6; ++i)
      parts.push_back(eval_full_grid(tr.model, 3.0 + 0.1 * i, spec.grid,
                                     spec.n_k, cfg.n_ref, cfg.tangent_mode,
                                     cache, {0, 1}));
    res.rows.push_back({name, aggregate_rates(parts)});
  }

  fs::create_directories(cfg.out_dir);
  std::ofstream os(fs::path(cfg.out_dir) / "classifier_compare.csv",
                   std::ios::trunc);
  os << "classifier,P_tot,P_C,P_R\n";
  for (const auto& row : res.rows)
    os << row.classifier << "," << row.rates.p_tot << ","
       << rate_str(row.rates.p_c) << "," << rate_str(row.rates.p_r) << "\n";
  write_manifest(cfg.out_dir, "classifier_compare",
                 nlohmann::json{{"seed", cfg.seed}}.dump(), clock.seconds());
  return res;
}

}  // namespace chaoscope::pipeline
