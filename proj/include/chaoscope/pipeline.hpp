#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "chaoscope/dynamics.hpp"
#include "chaoscope/lyapunov.hpp"
#include "chaoscope/tensornet.hpp"

namespace chaoscope::pipeline {

struct DatasetSpec {
  double k_min = 1.0;
  double k_max = 2.0;
  int m_k = 11;          // equidistant K values
  int m_tr = 2081;       // training trajectories per K
  int m_tt = 520;        // test trajectories per K
  std::size_t n_k = 20;  // trajectory length fed to the network
  std::size_t n_ref = 300000;  // reference-label length
  std::uint64_t seed = 0;
  dynamics::GridSpec grid;

  void validate() const;
  std::vector<double> k_values() const;
};

// Grid trajectories with long-time reference labels, split train/test per K.
struct LabeledDataset {
  struct PerK {
    double k = 0.0;
    lyapunov::ReferenceLabels ref;
    // One length-n_k trajectory per grid point, grid order; row-major p,x.
    std::vector<dynamics::Trajectory> trajectories;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
  };
  DatasetSpec spec;
  std::vector<PerK> per_k;
};

// Memoizes long-time grid labelings; sweeps reuse one labeling per (K, grid,
// N_ref) across models and trajectory lengths. Not thread-safe.
class ReferenceCache {
 public:
  const lyapunov::ReferenceLabels& get(const dynamics::StandardMapParams& params,
                                       const dynamics::GridSpec& grid,
                                       std::size_t n_ref,
                                       lyapunov::TangentMode mode);

 private:
  std::map<std::tuple<double, int, int, double, std::size_t, int>,
           lyapunov::ReferenceLabels>
      entries_;
};

LabeledDataset build_dataset(const DatasetSpec& spec,
                             lyapunov::TangentMode mode = lyapunov::TangentMode::Printed,
                             ReferenceCache* cache = nullptr);

// Directory layout: <dir>/trajectories.chsc (binary container, all K blocks
// in order) and <dir>/labels.csv sidecar
// (K,i,j,p0,x0,lambda_N,label,partition).
void save_dataset(const LabeledDataset& ds, const std::string& dir);
LabeledDataset load_dataset(const std::string& dir);

// --- training ----------------------------------------------------------------

struct TrainingConfig {
  int batch_size = 64;
  int epochs = 50;
  float lr = 1e-3f;
  int patience = 10;  // early stop after this many epochs without val improvement
  double validation_fraction = 0.1;  // carved from the training pool
  // Reweight the loss so both classes contribute equally (weight 0.5/fraction
  // per class). Off, the majority class dominates when the K range skews
  // chaotic.
  bool balance_classes = true;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

// Flat, network-ready view of a set of trajectories.
struct SampleSet {
  int rows = 0;  // time steps
  int cols = 0;  // input columns
  std::vector<float> inputs;  // size() * rows * cols
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const float> input(std::size_t i) const {
    return {inputs.data() + i * static_cast<std::size_t>(rows) * cols,
            static_cast<std::size_t>(rows) * cols};
  }
};

enum class Partition { Train, Test };

// Channel selection when flattening trajectories for a model input. A
// 1-column trajectory fed to a 2-column model is duplicated into both
// columns.
SampleSet make_samples(const LabeledDataset& ds, Partition part,
                       const std::vector<std::size_t>& channels,
                       int model_cols);

SampleSet samples_from_trajectories(const std::vector<dynamics::Trajectory>& ts,
                                    const std::vector<lyapunov::ChaosLabel>& labels,
                                    const std::vector<std::size_t>& channels,
                                    int model_cols);

struct TrainResult {
  net::Model<float> model;
  std::vector<double> train_loss;  // per epoch, mean over batches
  std::vector<double> val_loss;    // empty when no validation split
  int epochs_run = 0;
};

TrainResult train_model(const SampleSet& train, const net::ModelSpec& spec,
                        const TrainingConfig& config);

std::vector<lyapunov::ChaosLabel> predict(const net::Model<float>& m,
                                          const SampleSet& samples);

// --- evaluation --------------------------------------------------------------

struct EvalReport {
  struct PerK {
    double k = 0.0;
    lyapunov::SuccessRates rates;
    std::vector<std::size_t> grid_indices;  // evaluated points
    std::vector<bool> correct;              // aligned with grid_indices
  };
  std::vector<PerK> per_k;
  lyapunov::SuccessRates aggregate;
};

// Evaluates the model on the given partition of every K in the dataset.
EvalReport evaluate(const net::Model<float>& m, const LabeledDataset& ds,
                    Partition part, const std::vector<std::size_t>& channels);

lyapunov::SuccessRates aggregate_rates(const std::vector<lyapunov::SuccessRates>& parts);

void write_eval_csv(const std::string& path, const EvalReport& report,
                    std::size_t n_k);
void write_error_map_csv(const std::string& path, const LabeledDataset& ds,
                         const EvalReport& report);

// --- experiments -------------------------------------------------------------

struct ExperimentConfig {
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  net::Scale scale = net::Scale::Desk;
  TrainingConfig training;
  lyapunov::TangentMode tangent_mode = lyapunov::TangentMode::Printed;
  dynamics::LorenzForm lorenz_form = dynamics::LorenzForm::Printed;
  std::size_t n_ref = 300000;
  int lorenz_ics_per_rho = 200;
  std::size_t lorenz_n_ref = 300000;
  double logistic_r_step = 0.01;
  int logistic_x0_count = 34;
  double gen_eval_k_step = 0.2;  // evaluation grid pitch for the K sweeps
  ReferenceCache* cache = nullptr;  // optional shared labeling cache
};

// Table-shaped results: one success-rate triple per (test K, N_K).
struct NkSweepResult {
  std::vector<std::size_t> nk_values;
  std::vector<double> test_k;
  // rates[i][j]: test_k[i] x nk_values[j]
  std::vector<std::vector<lyapunov::SuccessRates>> rates;
};

NkSweepResult run_nk_sweep(const ExperimentConfig& cfg,
                           const std::vector<std::size_t>& nk_list);

enum class GeneralizationVariant { Count, Range };

struct KGeneralizationResult {
  struct Curve {
    std::string label;
    DatasetSpec train_spec;
    std::vector<double> eval_k;
    std::vector<double> p_tot;
  };
  std::vector<Curve> curves;
};

KGeneralizationResult run_k_generalization(const ExperimentConfig& cfg,
                                           GeneralizationVariant variant);

struct LogisticCrossResult {
  struct Point {
    double r = 0.0;
    double x0 = 0.0;
    double lambda = 0.0;  // scalar-derivative exponent
    lyapunov::ChaosLabel truth{};
    bool scored = false;  // outside the +-1e-3 dead band
    bool correct_1d = false;
    bool correct_2d = false;
  };
  std::vector<Point> points;
  double accuracy_1d = 0.0;
  double accuracy_2d = 0.0;
};

LogisticCrossResult run_logistic_cross(const ExperimentConfig& cfg,
                                       const net::Model<float>& model_1d,
                                       const net::Model<float>& model_2d);

struct LorenzCrossResult {
  struct Bar {
    std::string projection;  // XY, XZ, YZ, X, Y, Z
    bool normalized = false;
    double accuracy = 0.0;
    std::size_t scored = 0;
  };
  std::vector<Bar> bars;
  double chaotic_fraction = 0.0;  // of the scored reference labels

  double accuracy(const std::string& projection, bool normalized) const;
};

LorenzCrossResult run_lorenz_cross(const ExperimentConfig& cfg,
                                   const net::Model<float>& model_1d,
                                   const net::Model<float>& model_2d);

struct LyapunovBaselineResult {
  std::vector<std::size_t> n_values;
  std::vector<lyapunov::SuccessRates> rates;  // aligned with n_values
};

LyapunovBaselineResult run_lyapunov_baseline(const ExperimentConfig& cfg,
                                             double k,
                                             const std::vector<std::size_t>& n_list);

struct ClassifierCompareResult {
  struct Row {
    std::string classifier;
    lyapunov::SuccessRates rates;
  };
  std::vector<Row> rows;
};

ClassifierCompareResult run_classifier_compare(const ExperimentConfig& cfg);

// Trains the Fig.-5 pair of networks (2D on (p,x), 1D on p only) used by the
// logistic and Lorenz cross tests.
struct CrossModels {
  net::Model<float> model_2d;
  net::Model<float> model_1d;
};
CrossModels train_cross_models(const ExperimentConfig& cfg,
                               const LabeledDataset& ds);

void write_manifest(const std::string& dir, const std::string& experiment,
                    const std::string& config_json, double wall_seconds);

}  // namespace chaoscope::pipeline
