#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace chaoscope::net {

// Architecture descriptor. Layers run in order: conv stack (ReLU after each,
// omitted for the fcn preset), global max pool, dense stack with ReLU between
// layers and a sigmoid on the final single unit. The input is a time series
// arranged as rows = time steps, cols = coordinate channels; the conv stack
// treats the coordinates as input CHANNELS of an input_rows x 1 image, so
// every filter learns separate weights per coordinate and the global pool
// runs over time only.
struct ModelSpec {
  int input_rows = 0;
  int input_cols = 0;
  std::vector<int> conv_widths;   // output channels per conv layer; may be empty
  std::vector<int> dense_widths;  // hidden widths + final width (must end in 1)
  int filter_rows = 2;
  int filter_cols = 1;
  bool dense_bias = false;  // the dense update has no bias term by default
  std::string preset = "custom";

  // Size of the flattened input to the first dense layer.
  int dense_input() const {
    return conv_widths.empty() ? input_rows * input_cols : conv_widths.back();
  }
  bool valid() const;
};

enum class Preset { Cnn2D, Cnn1D, Fcn };
enum class Scale { Paper, Desk };

Preset preset_from_name(const std::string& name);

// cnn presets: four 2x1 conv layers + global max pool + three dense layers
// ending in one sigmoid unit. fcn: eight ReLU hidden layers + sigmoid unit on
// the flattened input. Desk scale divides every width by 8.
ModelSpec build_preset(Preset preset, int input_len, Scale scale = Scale::Desk);

// Clamp applied to the sigmoid output before the cross-entropy log terms.
inline constexpr double kLossClamp = 1e-7;

template <typename T>
struct Model {
  ModelSpec spec;
  // Parameter blocks in serialization order: per conv layer weights
  // [p][q][in][out] then bias [out]; per dense layer weights [in][out]
  // (then bias [out] if enabled).
  std::vector<std::vector<T>> params;

  static Model init(const ModelSpec& spec, std::uint64_t seed);
  std::size_t parameter_count() const;
};

template <typename T>
using GradientSet = std::vector<std::vector<T>>;

template <typename T>
GradientSet<T> zero_gradients(const Model<T>& m);

// Per-sample activation cache; reusable across forward/backward calls.
template <typename T>
struct Workspace {
  std::vector<std::vector<T>> conv_act;  // post-ReLU activations per conv layer
  std::vector<std::vector<T>> conv_grad;
  std::vector<T> pooled;
  std::vector<std::size_t> argmax;  // flat spatial index per pooled channel
  std::vector<std::vector<T>> dense_act;  // post-activation per dense layer
  std::vector<std::vector<T>> dense_grad;
  T prediction = 0;
};

// --- primitive ops (exposed for direct testing) -----------------------------

// z[i,j,o] = sum_in sum_q sum_p w[p,q,in,o] * a[i+p, j+q, in] + b[o], reading
// past the trailing edge as zero so the output spatial size equals the input.
template <typename T>
void conv2d_forward(std::span<const T> input, int h, int w, int in_ch,
                    std::span<const T> weights, std::span<const T> bias,
                    int f_row, int f_col, int out_ch, std::span<T> output);

template <typename T>
void relu_inplace(std::span<T> t) {
  for (auto& v : t)
    if (v < T(0)) v = T(0);
}

template <typename T>
void global_max_pool(std::span<const T> input, int h, int w, int ch,
                     std::span<T> output, std::span<std::size_t> argmax);

// z[i] = sum_j w[j,i] * a[j] (+ b[i] if bias given).
template <typename T>
void dense_forward(std::span<const T> input, std::span<const T> weights,
                   std::span<const T> bias, int out, std::span<T> output);

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T cross_entropy(T pred, int true_label);

// --- model-level passes ------------------------------------------------------

template <typename T>
T forward(const Model<T>& m, std::span<const T> input, Workspace<T>& ws);

// Gradients of weight * cross_entropy at true_label w.r.t. every parameter,
// accumulated into grads (callers zero them per batch). Requires the
// workspace of the matching forward call.
template <typename T>
void backward(const Model<T>& m, std::span<const T> input, int true_label,
              Workspace<T>& ws, GradientSet<T>& grads, T weight = T(1));

// --- optimizer ---------------------------------------------------------------

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m1, m2;
  long step = 0;
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  static AdamState init(const Model<T>& model, T lr = T(1e-3));
};

template <typename T>
void adam_update(Model<T>& model, const GradientSet<T>& grads,
                 AdamState<T>& state);

// --- persistence -------------------------------------------------------------

// Checkpoint: magic "CHSM", u32 JSON header length, JSON (architecture, seed,
// training config, fnv1a-64 checksum of the parameter bytes), then raw
// little-endian f32 parameter blocks in layer order.
void save_model(const Model<float>& m, const std::string& path,
                const std::string& train_config_json = "{}",
                std::uint64_t seed = 0);
Model<float> load_model(const std::string& path);

extern template struct Model<float>;
extern template struct Model<double>;

}  // namespace chaoscope::net
