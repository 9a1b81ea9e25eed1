#include "chaoscope/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "chaoscope/common.hpp"
#include "json.hpp"

namespace chaoscope::pipeline {

namespace fs = std::filesystem;
using dynamics::MapId;
using lyapunov::ChaosLabel;

void DatasetSpec::validate() const {
  const long grid_size = static_cast<long>(grid.rows) * grid.cols;
  if (m_k < 1) throw ConfigError("m_k must be >= 1");
  if (k_min > k_max) throw ConfigError("k_min must be <= k_max");
  if (m_k == 1 && k_min != k_max)
    throw ConfigError("m_k = 1 requires k_min == k_max");
  if (n_k < 1) throw ConfigError("n_k must be >= 1");
  if (m_tr < 0 || m_tt < 0 || m_tr + m_tt > grid_size)
    throw ConfigError("m_tr + m_tt exceeds the grid size");
  if (k_min < 0) throw ConfigError("K must be >= 0");
}

std::vector<double> DatasetSpec::k_values() const {
  std::vector<double> ks(m_k);
  for (int i = 0; i < m_k; ++i)
    ks[i] = m_k == 1 ? k_min
                     : k_min + (k_max - k_min) * i / static_cast<double>(m_k - 1);
  return ks;
}

const lyapunov::ReferenceLabels& ReferenceCache::get(
    const dynamics::StandardMapParams& params, const dynamics::GridSpec& grid,
    std::size_t n_ref, lyapunov::TangentMode mode) {
  const auto key = std::make_tuple(params.K, grid.rows, grid.cols, grid.spacing,
                                   n_ref, static_cast<int>(mode));
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    it = entries_
             .emplace(key, lyapunov::reference_labels(
                               params, dynamics::grid_initial_conditions(grid),
                               n_ref, mode))
             .first;
  }
  return it->second;
}

LabeledDataset build_dataset(const DatasetSpec& spec, lyapunov::TangentMode mode,
                             ReferenceCache* cache) {
  spec.validate();
  LabeledDataset ds;
  ds.spec = spec;
  const auto grid = dynamics::grid_initial_conditions(spec.grid);
  const auto ks = spec.k_values();
  ds.per_k.resize(ks.size());
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    auto& pk = ds.per_k[ki];
    pk.k = ks[ki];
    const dynamics::StandardMapParams params{pk.k};
    pk.ref = cache ? cache->get(params, spec.grid, spec.n_ref, mode)
                   : lyapunov::reference_labels(params, grid, spec.n_ref, mode);
    pk.trajectories.resize(grid.size());
    const dynamics::MapParams mp = params;
    parallel_for(grid.size(), [&](std::size_t i) {
      pk.trajectories[i] = dynamics::iterate(MapId::StandardMap, mp,
                                             {grid[i].p, grid[i].x}, spec.n_k);
    });
    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(split_seed(spec.seed, "partition", ki));
    std::shuffle(order.begin(), order.end(), rng);
    pk.train_idx.assign(order.begin(), order.begin() + spec.m_tr);
    pk.test_idx.assign(order.begin() + spec.m_tr,
                       order.begin() + spec.m_tr + spec.m_tt);
  }
  return ds;
}

// --- sample assembly ---------------------------------------------------------

SampleSet samples_from_trajectories(const std::vector<dynamics::Trajectory>& ts,
                                    const std::vector<ChaosLabel>& labels,
                                    const std::vector<std::size_t>& channels,
                                    int model_cols) {
  if (ts.size() != labels.size())
    throw std::invalid_argument("samples: trajectory/label count mismatch");
  const bool duplicate = channels.size() == 1 && model_cols == 2;
  if (!duplicate && static_cast<int>(channels.size()) != model_cols)
    throw std::invalid_argument("samples: channel count does not match model input");
  SampleSet out;
  out.cols = model_cols;
  if (!ts.empty()) out.rows = static_cast<int>(ts.front().length);
  out.inputs.reserve(ts.size() * out.rows * out.cols);
  out.labels.reserve(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& t = ts[i];
    if (static_cast<int>(t.length) != out.rows)
      throw std::invalid_argument("samples: inconsistent trajectory length");
    for (std::size_t s = 0; s < t.length; ++s) {
      if (duplicate) {
        const auto v = static_cast<float>(t.at(s, channels[0]));
        out.inputs.push_back(v);
        out.inputs.push_back(v);
      } else {
        for (auto c : channels)
          out.inputs.push_back(static_cast<float>(t.at(s, c)));
      }
    }
    out.labels.push_back(labels[i] == ChaosLabel::Chaotic ? 1 : 0);
  }
  return out;
}

SampleSet make_samples(const LabeledDataset& ds, Partition part,
                       const std::vector<std::size_t>& channels, int model_cols) {
  std::vector<dynamics::Trajectory> ts;
  std::vector<ChaosLabel> labels;
  for (const auto& pk : ds.per_k) {
    const auto& idx = part == Partition::Train ? pk.train_idx : pk.test_idx;
    for (auto i : idx) {
      ts.push_back(pk.trajectories[i]);
      labels.push_back(pk.ref.labels[i]);
    }
  }
  return samples_from_trajectories(ts, labels, channels, model_cols);
}

// --- training ----------------------------------------------------------------

std::string TrainingConfig::to_json() const {
  nlohmann::json j{{"batch_size", batch_size},
                   {"epochs", epochs},
                   {"lr", lr},
                   {"patience", patience},
                   {"validation_fraction", validation_fraction},
                   {"balance_classes", balance_classes},
                   {"seed", seed}};
  return j.dump();
}

namespace {

constexpr std::size_t kGradChunk = 8;  // reduction granularity, thread-invariant

double batch_pass(const net::Model<float>& model, const SampleSet& samples,
                  std::span<const std::size_t> batch,
                  std::span<const float> class_weight,  // per label, or empty
                  std::vector<net::GradientSet<float>>& chunk_grads,
                  std::vector<net::Workspace<float>>& chunk_ws,
                  net::GradientSet<float>& grads) {
  const std::size_t n_chunks = (batch.size() + kGradChunk - 1) / kGradChunk;
  if (chunk_grads.size() < n_chunks) {
    chunk_grads.resize(n_chunks, net::zero_gradients(model));
    chunk_ws.resize(n_chunks);
  }
  std::vector<double> chunk_loss(n_chunks, 0.0);
  parallel_for(n_chunks, [&](std::size_t c) {
    auto& g = chunk_grads[c];
    for (auto& blk : g) std::fill(blk.begin(), blk.end(), 0.0f);
    auto& ws = chunk_ws[c];
    const std::size_t lo = c * kGradChunk;
    const std::size_t hi = std::min(lo + kGradChunk, batch.size());
    for (std::size_t s = lo; s < hi; ++s) {
      const std::size_t i = batch[s];
      const float w =
          class_weight.empty() ? 1.0f : class_weight[samples.labels[i]];
      const float pred = net::forward(model, samples.input(i), ws);
      chunk_loss[c] += w * net::cross_entropy(pred, samples.labels[i]);
      net::backward(model, samples.input(i), samples.labels[i], ws, g, w);
    }
  });
  // Fixed reduction order over chunks keeps results thread-count independent.
  double loss = 0.0;
  for (auto& blk : grads) std::fill(blk.begin(), blk.end(), 0.0f);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    loss += chunk_loss[c];
    for (std::size_t b = 0; b < grads.size(); ++b)
      for (std::size_t k = 0; k < grads[b].size(); ++k)
        grads[b][k] += chunk_grads[c][b][k];
  }
  const auto inv = static_cast<float>(1.0 / static_cast<double>(batch.size()));
  for (auto& blk : grads)
    for (auto& v : blk) v *= inv;
  return loss / static_cast<double>(batch.size());
}

double mean_loss(const net::Model<float>& model, const SampleSet& samples,
                 std::span<const std::size_t> idx) {
  if (idx.empty()) return 0.0;
  std::vector<double> partial((idx.size() + 255) / 256, 0.0);
  parallel_for(partial.size(), [&](std::size_t c) {
    net::Workspace<float> ws;
    const std::size_t lo = c * 256;
    const std::size_t hi = std::min(lo + 256, idx.size());
    for (std::size_t s = lo; s < hi; ++s) {
      const float pred = net::forward(model, samples.input(idx[s]), ws);
      partial[c] += net::cross_entropy(pred, samples.labels[idx[s]]);
    }
  });
  double sum = 0.0;
  for (double v : partial) sum += v;
  return sum / static_cast<double>(idx.size());
}

}  // namespace

TrainResult train_model(const SampleSet& train, const net::ModelSpec& spec,
                        const TrainingConfig& config) {
  if (!spec.valid()) throw std::invalid_argument("train_model: invalid spec");
  if (train.rows != spec.input_rows || train.cols != spec.input_cols)
    throw std::invalid_argument("train_model: sample shape does not match model");

  TrainResult res{net::Model<float>::init(spec, split_seed(config.seed, "init"))};

  std::vector<std::size_t> pool(train.size());
  std::iota(pool.begin(), pool.end(), 0);
  std::mt19937_64 split_rng(split_seed(config.seed, "valsplit"));
  std::shuffle(pool.begin(), pool.end(), split_rng);
  const auto n_val = static_cast<std::size_t>(
      std::floor(config.validation_fraction * static_cast<double>(pool.size())));
  std::vector<std::size_t> val_idx(pool.end() - n_val, pool.end());
  pool.resize(pool.size() - n_val);

  // Class weights 0.5/fraction, computed over the optimization pool.
  std::vector<float> class_weight;
  if (config.balance_classes) {
    std::size_t n_c = 0;
    for (std::size_t i : pool) n_c += train.labels[i];
    const std::size_t n_r = pool.size() - n_c;
    if (n_c > 0 && n_r > 0)
      class_weight = {0.5f * pool.size() / n_r, 0.5f * pool.size() / n_c};
  }

  auto state = net::AdamState<float>::init(res.model, config.lr);
  auto grads = net::zero_gradients(res.model);
  std::vector<net::GradientSet<float>> chunk_grads;
  std::vector<net::Workspace<float>> chunk_ws;

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_params = res.model.params;
  int since_best = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::mt19937_64 rng(split_seed(config.seed, "epoch", epoch));
    std::shuffle(pool.begin(), pool.end(), rng);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t at = 0; at < pool.size(); at += config.batch_size) {
      const std::size_t len =
          std::min<std::size_t>(config.batch_size, pool.size() - at);
      const double loss =
          batch_pass(res.model, train, {pool.data() + at, len}, class_weight,
                     chunk_grads, chunk_ws, grads);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_model: loss diverged (non-finite)");
      net::adam_update(res.model, grads, state);
      epoch_loss += loss;
      ++n_batches;
    }
    res.train_loss.push_back(n_batches ? epoch_loss / n_batches : 0.0);
    res.epochs_run = epoch + 1;
    if (!val_idx.empty()) {
      const double vl = mean_loss(res.model, train, val_idx);
      res.val_loss.push_back(vl);
      if (vl < best_val) {
        best_val = vl;
        best_params = res.model.params;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        res.model.params = best_params;
        break;
      }
    }
  }
  if (!val_idx.empty() && std::isfinite(best_val)) res.model.params = best_params;
  return res;
}

std::vector<ChaosLabel> predict(const net::Model<float>& m,
                                const SampleSet& samples) {
  std::vector<ChaosLabel> out(samples.size());
  parallel_for((samples.size() + 255) / 256, [&](std::size_t c) {
    net::Workspace<float> ws;
    const std::size_t lo = c * 256;
    const std::size_t hi = std::min(lo + 256, samples.size());
    for (std::size_t i = lo; i < hi; ++i)
      out[i] = net::forward(m, samples.input(i), ws) > 0.5f
                   ? ChaosLabel::Chaotic
                   : ChaosLabel::Regular;
  });
  return out;
}

// --- evaluation --------------------------------------------------------------

lyapunov::SuccessRates aggregate_rates(const std::vector<lyapunov::SuccessRates>& parts) {
  lyapunov::SuccessRates agg;
  for (const auto& r : parts) {
    agg.a_c += r.a_c;
    agg.a_r += r.a_r;
    agg.b_c += r.b_c;
    agg.b_r += r.b_r;
  }
  if (agg.a_c > 0)
    agg.p_c = static_cast<double>(agg.b_c) / static_cast<double>(agg.a_c);
  if (agg.a_r > 0)
    agg.p_r = static_cast<double>(agg.b_r) / static_cast<double>(agg.a_r);
  if (agg.a_c + agg.a_r > 0)
    agg.p_tot = static_cast<double>(agg.b_c + agg.b_r) /
                static_cast<double>(agg.a_c + agg.a_r);
  return agg;
}

EvalReport evaluate(const net::Model<float>& m, const LabeledDataset& ds,
                    Partition part, const std::vector<std::size_t>& channels) {
  EvalReport report;
  std::vector<lyapunov::SuccessRates> parts;
  for (const auto& pk : ds.per_k) {
    const auto& idx = part == Partition::Train ? pk.train_idx : pk.test_idx;
    std::vector<dynamics::Trajectory> ts;
    std::vector<ChaosLabel> truth;
    for (auto i : idx) {
      ts.push_back(pk.trajectories[i]);
      truth.push_back(pk.ref.labels[i]);
    }
    const auto samples =
        samples_from_trajectories(ts, truth, channels, m.spec.input_cols);
    const auto pred = predict(m, samples);
    EvalReport::PerK row;
    row.k = pk.k;
    row.rates = lyapunov::success_rates(pred, truth);
    row.grid_indices = idx;
    row.correct.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      row.correct[i] = pred[i] == truth[i];
    parts.push_back(row.rates);
    report.per_k.push_back(std::move(row));
  }
  report.aggregate = aggregate_rates(parts);
  return report;
}

void write_eval_csv(const std::string& path, const EvalReport& report,
                    std::size_t n_k) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "K,N_K,P_C,P_R,P_tot\n";
  auto rate = [](const std::optional<double>& v) {
    return v ? std::to_string(*v) : std::string("nan");
  };
  for (const auto& pk : report.per_k)
    os << pk.k << "," << n_k << "," << rate(pk.rates.p_c) << ","
       << rate(pk.rates.p_r) << "," << pk.rates.p_tot << "\n";
  os << "all," << n_k << "," << rate(report.aggregate.p_c) << ","
     << rate(report.aggregate.p_r) << "," << report.aggregate.p_tot << "\n";
}

void write_error_map_csv(const std::string& path, const LabeledDataset& ds,
                         const EvalReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "K,i,j,p0,x0,true,pred\n";
  const auto& grid = ds.spec.grid;
  for (std::size_t ki = 0; ki < report.per_k.size(); ++ki) {
    const auto& row = report.per_k[ki];
    const auto& ref = ds.per_k[ki].ref;
    for (std::size_t s = 0; s < row.grid_indices.size(); ++s) {
      const std::size_t g = row.grid_indices[s];
      const int i = static_cast<int>(g) / grid.cols;
      const int j = static_cast<int>(g) % grid.cols;
      const char truth = ref.labels[g] == ChaosLabel::Chaotic ? 'C' : 'R';
      const char pred = row.correct[s] ? truth : (truth == 'C' ? 'R' : 'C');
      os << row.k << "," << (i + 1) << "," << (j + 1) << ","
         << i * grid.spacing << "," << j * grid.spacing << "," << truth << ","
         << pred << "\n";
    }
  }
}

// --- persistence -------------------------------------------------------------

void save_dataset(const LabeledDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  std::vector<dynamics::Trajectory> all;
  for (const auto& pk : ds.per_k)
    for (const auto& t : pk.trajectories) all.push_back(t);
  dynamics::save_trajectories((fs::path(dir) / "trajectories.chsc").string(), all);

  std::ofstream os(fs::path(dir) / "labels.csv", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write labels.csv in " + dir);
  os << "K,i,j,p0,x0,lambda_N,label,partition\n";
  os.precision(17);
  const auto& grid = ds.spec.grid;
  for (const auto& pk : ds.per_k) {
    std::vector<char> part(pk.trajectories.size(), '-');
    for (auto i : pk.train_idx) part[i] = 't';
    for (auto i : pk.test_idx) part[i] = 'e';
    for (std::size_t g = 0; g < pk.trajectories.size(); ++g) {
      const int i = static_cast<int>(g) / grid.cols;
      const int j = static_cast<int>(g) % grid.cols;
      os << pk.k << "," << (i + 1) << "," << (j + 1) << "," << i * grid.spacing
         << "," << j * grid.spacing << "," << pk.ref.lambda[g] << ","
         << (pk.ref.labels[g] == ChaosLabel::Chaotic ? 'C' : 'R') << ","
         << (part[g] == 't' ? "train" : part[g] == 'e' ? "test" : "none")
         << "\n";
    }
  }

  nlohmann::json j;
  j["spec"] = {{"k_min", ds.spec.k_min},   {"k_max", ds.spec.k_max},
               {"m_k", ds.spec.m_k},       {"m_tr", ds.spec.m_tr},
               {"m_tt", ds.spec.m_tt},     {"n_k", ds.spec.n_k},
               {"n_ref", ds.spec.n_ref},   {"seed", ds.spec.seed},
               {"grid_rows", ds.spec.grid.rows},
               {"grid_cols", ds.spec.grid.cols},
               {"grid_spacing", ds.spec.grid.spacing}};
  for (const auto& pk : ds.per_k)
    j["per_k"].push_back({{"k", pk.k},
                          {"threshold", pk.ref.threshold},
                          {"unimodal_fallback", pk.ref.unimodal_fallback},
                          {"train_idx", pk.train_idx},
                          {"test_idx", pk.test_idx}});
  std::ofstream js(fs::path(dir) / "dataset.json", std::ios::trunc);
  js << j.dump(2) << "\n";
}

LabeledDataset load_dataset(const std::string& dir) {
  const auto meta_path = fs::path(dir) / "dataset.json";
  const auto labels_path = fs::path(dir) / "labels.csv";
  const auto traj_path = fs::path(dir) / "trajectories.chsc";
  if (!fs::exists(labels_path))
    throw std::runtime_error("dataset sidecar missing: " + labels_path.string());
  if (!fs::exists(meta_path))
    throw std::runtime_error("dataset metadata missing: " + meta_path.string());

  std::ifstream js(meta_path);
  nlohmann::json j;
  js >> j;
  LabeledDataset ds;
  const auto& sj = j.at("spec");
  ds.spec.k_min = sj.at("k_min");
  ds.spec.k_max = sj.at("k_max");
  ds.spec.m_k = sj.at("m_k");
  ds.spec.m_tr = sj.at("m_tr");
  ds.spec.m_tt = sj.at("m_tt");
  ds.spec.n_k = sj.at("n_k");
  ds.spec.n_ref = sj.at("n_ref");
  ds.spec.seed = sj.at("seed");
  ds.spec.grid.rows = sj.at("grid_rows");
  ds.spec.grid.cols = sj.at("grid_cols");
  ds.spec.grid.spacing = sj.at("grid_spacing");

  const auto all = dynamics::load_trajectories(traj_path.string());
  const std::size_t grid_size =
      static_cast<std::size_t>(ds.spec.grid.rows) * ds.spec.grid.cols;
  const auto& per_k_meta = j.at("per_k");
  if (all.size() != grid_size * per_k_meta.size())
    throw std::runtime_error("dataset container size does not match metadata");

  ds.per_k.resize(per_k_meta.size());
  for (std::size_t ki = 0; ki < ds.per_k.size(); ++ki) {
    auto& pk = ds.per_k[ki];
    pk.k = per_k_meta[ki].at("k");
    pk.ref.threshold = per_k_meta[ki].at("threshold");
    pk.ref.unimodal_fallback = per_k_meta[ki].at("unimodal_fallback");
    pk.train_idx = per_k_meta[ki].at("train_idx").get<std::vector<std::size_t>>();
    pk.test_idx = per_k_meta[ki].at("test_idx").get<std::vector<std::size_t>>();
    pk.trajectories.assign(all.begin() + ki * grid_size,
                           all.begin() + (ki + 1) * grid_size);
    pk.ref.lambda.resize(grid_size);
    pk.ref.labels.resize(grid_size);
  }

  std::ifstream ls(labels_path);
  std::string line;
  std::getline(ls, line);  // header
  std::size_t row = 0;
  while (std::getline(ls, line)) {
    if (line.empty()) continue;
    const std::size_t ki = row / grid_size;
    const std::size_t g = row % grid_size;
    if (ki >= ds.per_k.size())
      throw std::runtime_error("labels.csv has more rows than expected");
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 8)
      throw std::runtime_error("labels.csv: malformed row " + std::to_string(row));
    auto& pk = ds.per_k[ki];
    pk.ref.lambda[g] = std::stod(fields[5]);
    pk.ref.labels[g] =
        fields[6] == "C" ? ChaosLabel::Chaotic : ChaosLabel::Regular;
    ++row;
  }
  if (row != grid_size * ds.per_k.size())
    throw std::runtime_error("labels.csv row count does not match metadata");
  return ds;
}

void write_manifest(const std::string& dir, const std::string& experiment,
                    const std::string& config_json, double wall_seconds) {
  nlohmann::json j;
  j["experiment"] = experiment;
  j["config"] = nlohmann::json::parse(config_json);
  j["wall_seconds"] = wall_seconds;
  j["format_version"] = 1;
  fs::create_directories(dir);
  std::ofstream os(fs::path(dir) / "manifest.json", std::ios::trunc);
  os << j.dump(2) << "\n";
}

}  // namespace chaoscope::pipeline
