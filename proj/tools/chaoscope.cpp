// Command-line front end: dataset generation, labeling, training, evaluation,
// experiment sweeps, and Poincare-section export. One JSON config per run plus
// `--set key=value` overrides; all randomness flows from the single global
// seed via the documented splitting rule.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "chaoscope/common.hpp"
#include "chaoscope/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace chaoscope;

namespace {

// --- config schema -----------------------------------------------------------

json default_config() {
  return json{
      {"seed", 0},
      {"out_dir", ""},
      {"threads", 0},
      {"dataset",
       {{"k_min", 1.0},
        {"k_max", 2.0},
        {"m_k", 11},
        {"m_tr", 2081},
        {"m_tt", 520},
        {"n_k", 20},
        {"n_ref", 300000}}},
      {"training",
       {{"batch_size", 64},
        {"epochs", 50},
        {"lr", 1e-3},
        {"patience", 10},
        {"validation_fraction", 0.1},
        {"balance_classes", true}}},
      {"model", {{"preset", "cnn2d"}, {"scale", "desk"}}},
      {"label", {{"k", 2.5}}},
      {"poincare", {{"k", 2.5}, {"steps", 1000}}},
      {"experiment",
       {{"tangent_mode", "printed"},
        {"lorenz_form", "printed"},
        {"lorenz_ics_per_rho", 200},
        {"lorenz_n_ref", 300000},
        {"logistic_r_step", 0.01},
        {"logistic_x0_count", 34},
        {"gen_eval_k_step", 0.2},
        {"generalization_variant", "count"},
        {"nk_list", json::array({1, 5, 10, 20, 30})},
        {"baseline_k", 2.5},
        {"baseline_n_list",
         json::array({100, 200, 300, 500, 700, 1000, 1500, 2000, 3000, 5000,
                      10000})}}}};
}

// Rejects unknown keys and type mismatches against the default-config shape.
void validate_against(const json& schema, const json& value,
                      const std::string& path) {
  if (!value.is_object())
    throw ConfigError("config: expected object at '" + path + "'");
  for (const auto& [key, sub] : value.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!schema.contains(key))
      throw ConfigError("config: unknown key '" + here + "'");
    const json& ref = schema.at(key);
    if (ref.is_object()) {
      validate_against(ref, sub, here);
    } else if (ref.is_array()) {
      if (!sub.is_array())
        throw ConfigError("config: '" + here + "' must be an array");
      for (const auto& v : sub)
        if (!v.is_number())
          throw ConfigError("config: '" + here + "' entries must be numbers");
    } else if (ref.is_number() && !sub.is_number()) {
      throw ConfigError("config: '" + here + "' must be a number");
    } else if (ref.is_string() && !sub.is_string()) {
      throw ConfigError("config: '" + here + "' must be a string");
    } else if (ref.is_boolean() && !sub.is_boolean()) {
      throw ConfigError("config: '" + here + "' must be a boolean");
    }
  }
}

void apply_override(json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--set expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings need no quoting
  }
  json* node = &cfg;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("--set: empty key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]))
      throw ConfigError("config: unknown key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

struct Run {
  json cfg;
  std::string out_dir;
  bool resume = false;
};

pipeline::DatasetSpec dataset_spec(const Run& run) {
  const json& d = run.cfg.at("dataset");
  pipeline::DatasetSpec spec;
  spec.k_min = d.at("k_min").get<double>();
  spec.k_max = d.at("k_max").get<double>();
  spec.m_k = d.at("m_k").get<int>();
  spec.m_tr = d.at("m_tr").get<int>();
  spec.m_tt = d.at("m_tt").get<int>();
  spec.n_k = d.at("n_k").get<std::size_t>();
  spec.n_ref = d.at("n_ref").get<std::size_t>();
  spec.seed = split_seed(run.cfg.at("seed").get<std::uint64_t>(), "dataset");
  spec.validate();
  return spec;
}

pipeline::TrainingConfig training_config(const Run& run) {
  const json& t = run.cfg.at("training");
  pipeline::TrainingConfig c;
  c.batch_size = t.at("batch_size").get<int>();
  c.epochs = t.at("epochs").get<int>();
  c.lr = t.at("lr").get<float>();
  c.patience = t.at("patience").get<int>();
  c.validation_fraction = t.at("validation_fraction").get<double>();
  c.balance_classes = t.at("balance_classes").get<bool>();
  c.seed = split_seed(run.cfg.at("seed").get<std::uint64_t>(), "train");
  if (c.batch_size < 1 || c.epochs < 0 || c.validation_fraction < 0.0 ||
      c.validation_fraction >= 1.0)
    throw ConfigError("config: invalid training section");
  return c;
}

lyapunov::TangentMode tangent_mode(const Run& run) {
  const auto s = run.cfg.at("experiment").at("tangent_mode").get<std::string>();
  if (s == "printed") return lyapunov::TangentMode::Printed;
  if (s == "analytic" || s == "exact-jacobian")
    return lyapunov::TangentMode::Analytic;
  throw ConfigError("config: unknown tangent_mode '" + s + "'");
}

dynamics::LorenzForm lorenz_form(const Run& run) {
  const auto s = run.cfg.at("experiment").at("lorenz_form").get<std::string>();
  if (s == "printed") return dynamics::LorenzForm::Printed;
  if (s == "euler") return dynamics::LorenzForm::Euler;
  throw ConfigError("config: unknown lorenz_form '" + s + "'");
}

net::Scale model_scale(const Run& run) {
  const auto s = run.cfg.at("model").at("scale").get<std::string>();
  if (s == "desk") return net::Scale::Desk;
  if (s == "paper") return net::Scale::Paper;
  throw ConfigError("config: unknown model scale '" + s + "'");
}

pipeline::ExperimentConfig experiment_config(const Run& run) {
  const json& e = run.cfg.at("experiment");
  pipeline::ExperimentConfig cfg;
  cfg.out_dir = run.out_dir;
  cfg.seed = run.cfg.at("seed").get<std::uint64_t>();
  cfg.scale = model_scale(run);
  cfg.training = training_config(run);
  cfg.tangent_mode = tangent_mode(run);
  cfg.lorenz_form = lorenz_form(run);
  cfg.n_ref = run.cfg.at("dataset").at("n_ref").get<std::size_t>();
  cfg.lorenz_ics_per_rho = e.at("lorenz_ics_per_rho").get<int>();
  cfg.lorenz_n_ref = e.at("lorenz_n_ref").get<std::size_t>();
  cfg.logistic_r_step = e.at("logistic_r_step").get<double>();
  cfg.logistic_x0_count = e.at("logistic_x0_count").get<int>();
  cfg.gen_eval_k_step = e.at("gen_eval_k_step").get<double>();
  if (cfg.lorenz_ics_per_rho < 1 || cfg.logistic_x0_count < 1 ||
      cfg.logistic_r_step <= 0.0 || cfg.gen_eval_k_step <= 0.0)
    throw ConfigError("config: invalid experiment section");
  return cfg;
}

// Manifest-based idempotency: with --resume, a stage whose manifest already
// records the same command and config is skipped without touching any file.
bool stage_done(const Run& run, const std::string& command) {
  if (!run.resume) return false;
  const fs::path path = fs::path(run.out_dir) / "manifest.json";
  std::ifstream is(path);
  if (!is) return false;
  json m;
  try {
    is >> m;
  } catch (const json::parse_error&) {
    return false;
  }
  return m.value("experiment", "") == command &&
         m.value("config", json{}) == run.cfg;
}

void finish_stage(const Run& run, const std::string& command, double seconds) {
  pipeline::write_manifest(run.out_dir, command, run.cfg.dump(), seconds);
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

// --- subcommands -------------------------------------------------------------

int cmd_generate(const Run& run) {
  if (stage_done(run, "generate")) return 0;
  Timer t;
  const auto spec = dataset_spec(run);
  const auto ds = pipeline::build_dataset(spec, tangent_mode(run));
  pipeline::save_dataset(ds, (fs::path(run.out_dir) / "dataset").string());
  finish_stage(run, "generate", t.seconds());
  return 0;
}

int cmd_label(const Run& run) {
  if (stage_done(run, "label")) return 0;
  Timer t;
  const double k = run.cfg.at("label").at("k").get<double>();
  if (k < 0.0) throw ConfigError("label.k must be >= 0");
  const dynamics::GridSpec grid;
  const auto n_ref = run.cfg.at("dataset").at("n_ref").get<std::size_t>();
  const auto ref = lyapunov::reference_labels(
      dynamics::StandardMapParams{k}, dynamics::grid_initial_conditions(grid),
      n_ref, tangent_mode(run));
  fs::create_directories(run.out_dir);
  {
    std::ofstream os(fs::path(run.out_dir) / "labels.csv", std::ios::trunc);
    lyapunov::write_labels_csv(os, grid, ref);
  }
  {
    std::ofstream os(fs::path(run.out_dir) / "histogram.csv", std::ios::trunc);
    lyapunov::write_histogram_csv(os, lyapunov::build_histogram(ref.lambda, {}));
  }
  finish_stage(run, "label", t.seconds());
  return 0;
}

int cmd_train(const Run& run) {
  if (stage_done(run, "train")) return 0;
  Timer t;
  const auto ds =
      pipeline::load_dataset((fs::path(run.out_dir) / "dataset").string());
  const auto preset =
      net::preset_from_name(run.cfg.at("model").at("preset").get<std::string>());
  const auto spec = net::build_preset(preset, static_cast<int>(ds.spec.n_k),
                                      model_scale(run));
  const std::vector<std::size_t> channels =
      spec.input_cols == 2 ? std::vector<std::size_t>{0, 1}
                           : std::vector<std::size_t>{0};
  const auto samples =
      pipeline::make_samples(ds, pipeline::Partition::Train, channels,
                             spec.input_cols);
  const auto cfg = training_config(run);
  const auto tr = pipeline::train_model(samples, spec, cfg);
  net::save_model(tr.model, (fs::path(run.out_dir) / "model.chsm").string(),
                  cfg.to_json(), cfg.seed);
  std::ofstream os(fs::path(run.out_dir) / "loss_curve.csv", std::ios::trunc);
  os << "epoch,train_loss,val_loss\n";
  for (int e = 0; e < tr.epochs_run; ++e) {
    os << e << "," << tr.train_loss[e] << ",";
    if (e < static_cast<int>(tr.val_loss.size())) os << tr.val_loss[e];
    os << "\n";
  }
  finish_stage(run, "train", t.seconds());
  return 0;
}

int cmd_eval(const Run& run) {
  if (stage_done(run, "eval")) return 0;
  Timer t;
  const auto ds =
      pipeline::load_dataset((fs::path(run.out_dir) / "dataset").string());
  const auto model =
      net::load_model((fs::path(run.out_dir) / "model.chsm").string());
  const std::vector<std::size_t> channels =
      model.spec.input_cols == 2 ? std::vector<std::size_t>{0, 1}
                                 : std::vector<std::size_t>{0};
  const auto report =
      pipeline::evaluate(model, ds, pipeline::Partition::Test, channels);
  fs::create_directories(run.out_dir);
  pipeline::write_eval_csv((fs::path(run.out_dir) / "eval.csv").string(),
                           report, ds.spec.n_k);
  pipeline::write_error_map_csv(
      (fs::path(run.out_dir) / "error_map.csv").string(), ds, report);
  finish_stage(run, "eval", t.seconds());
  return 0;
}

int cmd_export_poincare(const Run& run) {
  if (stage_done(run, "export-poincare")) return 0;
  Timer t;
  const double k = run.cfg.at("poincare").at("k").get<double>();
  const auto steps = run.cfg.at("poincare").at("steps").get<std::size_t>();
  if (k < 0.0 || steps < 1) throw ConfigError("invalid poincare section");
  const dynamics::GridSpec grid;
  const auto pts = dynamics::grid_initial_conditions(grid);
  fs::create_directories(run.out_dir);
  std::ofstream os(fs::path(run.out_dir) / "poincare.csv", std::ios::trunc);
  os << "K,i,j,step,p,x\n";
  os.precision(12);
  const dynamics::MapParams mp = dynamics::StandardMapParams{k};
  for (std::size_t gi = 0; gi < pts.size(); ++gi) {
    const auto traj = dynamics::iterate(dynamics::MapId::StandardMap, mp,
                                        {pts[gi].p, pts[gi].x}, steps);
    const int i = static_cast<int>(gi) / grid.cols;
    const int j = static_cast<int>(gi) % grid.cols;
    for (std::size_t s = 0; s < traj.length; ++s)
      os << k << "," << i << "," << j << "," << s << "," << traj.at(s, 0)
         << "," << traj.at(s, 1) << "\n";
  }
  finish_stage(run, "export-poincare", t.seconds());
  return 0;
}

int cmd_experiment(const Run& run, const std::string& name) {
  const std::string stage = "experiment:" + name;
  if (stage_done(run, stage)) return 0;
  Timer t;
  auto cfg = experiment_config(run);
  pipeline::ReferenceCache cache;
  cfg.cache = &cache;

  auto cross_models = [&]() {
    auto spec = dataset_spec(run);
    const auto ds = pipeline::build_dataset(spec, cfg.tangent_mode, &cache);
    return pipeline::train_cross_models(cfg, ds);
  };

  const json& e = run.cfg.at("experiment");
  if (name == "nk_sweep") {
    pipeline::run_nk_sweep(cfg, e.at("nk_list").get<std::vector<std::size_t>>());
  } else if (name == "k_generalization") {
    const auto variant = e.at("generalization_variant").get<std::string>();
    if (variant != "count" && variant != "range")
      throw ConfigError("generalization_variant must be count or range");
    pipeline::run_k_generalization(cfg,
                                   variant == "count"
                                       ? pipeline::GeneralizationVariant::Count
                                       : pipeline::GeneralizationVariant::Range);
  } else if (name == "logistic_cross") {
    const auto models = cross_models();
    pipeline::run_logistic_cross(cfg, models.model_1d, models.model_2d);
  } else if (name == "lorenz_cross") {
    const auto models = cross_models();
    pipeline::run_lorenz_cross(cfg, models.model_1d, models.model_2d);
  } else if (name == "lyapunov_baseline") {
    pipeline::run_lyapunov_baseline(
        cfg, e.at("baseline_k").get<double>(),
        e.at("baseline_n_list").get<std::vector<std::size_t>>());
  } else if (name == "classifier_compare") {
    pipeline::run_classifier_compare(cfg);
  } else {
    throw ConfigError("unknown experiment '" + name + "'");
  }
  // The experiment runners write their own manifest; rewrite it with the full
  // CLI config so --resume can compare against it.
  finish_stage(run, stage, t.seconds());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chaoscope: chaos classification toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_flag;
  std::optional<std::uint64_t> seed_flag;
  int threads_flag = -1;
  std::vector<std::string> overrides;
  bool resume = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_flag, "output directory");
  app.add_option("--seed", seed_flag, "global seed (overrides config)");
  app.add_option("--threads", threads_flag, "worker thread cap (0 = auto)");
  app.add_option("--set", overrides, "config override key=value (repeatable)");
  app.add_flag("--resume", resume, "skip stages already recorded in manifest");

  auto* c_gen = app.add_subcommand("generate", "build + save a labeled dataset");
  auto* c_label = app.add_subcommand("label", "reference-label one K grid");
  auto* c_train = app.add_subcommand("train", "train a model on a saved dataset");
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* c_exp = app.add_subcommand("experiment", "run a named experiment");
  std::string exp_name;
  c_exp->add_option("name", exp_name, "experiment id")->required();
  auto* c_poinc =
      app.add_subcommand("export-poincare", "dump raw phase-space points");
  // Global flags may appear after the subcommand name (e.g. `generate --out d`).
  for (auto* sub : {c_gen, c_label, c_train, c_eval, c_exp, c_poinc})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);  // --help
    app.exit(err);
    return 2;
  }

  try {
    Run run;
    run.cfg = default_config();
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      if (!is) throw ConfigError("cannot open config file: " + config_path);
      json user;
      try {
        is >> user;
      } catch (const json::parse_error& err) {
        throw ConfigError(std::string("config parse error: ") + err.what());
      }
      validate_against(run.cfg, user, "");
      run.cfg.merge_patch(user);
    }
    for (const auto& kv : overrides) apply_override(run.cfg, kv);
    {
      json merged = run.cfg;
      run.cfg = default_config();
      validate_against(run.cfg, merged, "");
      run.cfg.merge_patch(merged);
    }
    if (seed_flag) run.cfg["seed"] = *seed_flag;
    if (threads_flag >= 0) run.cfg["threads"] = threads_flag;
    run.resume = resume;

    // Output root precedence: --out flag, then config, then CHAOSCOPE_OUT.
    run.out_dir = out_flag;
    if (run.out_dir.empty())
      run.out_dir = run.cfg.at("out_dir").get<std::string>();
    if (run.out_dir.empty())
      if (const char* env = std::getenv("CHAOSCOPE_OUT")) run.out_dir = env;
    if (run.out_dir.empty()) run.out_dir = ".";
    run.cfg["out_dir"] = run.out_dir;

    set_worker_threads(run.cfg.at("threads").get<int>());

    if (*c_gen) return cmd_generate(run);
    if (*c_label) return cmd_label(run);
    if (*c_train) return cmd_train(run);
    if (*c_eval) return cmd_eval(run);
    if (*c_exp) return cmd_experiment(run, exp_name);
    if (*c_poinc) return cmd_export_poincare(run);
    return 2;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const DegenerateDataError& err) {
    std::cerr << "degenerate data: " << err.what() << "\n";
    return 4;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  }
}
