#include "chaoscope/tensornet.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "chaoscope/common.hpp"
#include "json.hpp"

namespace chaoscope::net {

bool ModelSpec::valid() const {
  if (input_rows < 1 || input_cols < 1) return false;
  if (dense_widths.empty() || dense_widths.back() != 1) return false;
  if (filter_rows < 1 || filter_cols < 1) return false;
  for (int w : conv_widths)
    if (w < 1) return false;
  for (int w : dense_widths)
    if (w < 1) return false;
  return true;
}

Preset preset_from_name(const std::string& name) {
  if (name == "cnn2d") return Preset::Cnn2D;
  if (name == "cnn1d") return Preset::Cnn1D;
  if (name == "fcn") return Preset::Fcn;
  throw ConfigError("unknown preset: " + name);
}

ModelSpec build_preset(Preset preset, int input_len, Scale scale) {
  if (input_len < 1) throw std::invalid_argument("input_len must be >= 1");
  const int div = scale == Scale::Desk ? 8 : 1;
  ModelSpec s;
  s.input_rows = input_len;
  switch (preset) {
    case Preset::Cnn2D:
      s.input_cols = 2;
      s.conv_widths = {1024 / div, 512 / div, 256 / div, 128 / div};
      s.dense_widths = {128 / div, 32 / div, 1};
      s.preset = "cnn2d";
      break;
    case Preset::Cnn1D:
      s.input_cols = 1;
      s.conv_widths = {1024 / div, 512 / div, 256 / div, 128 / div};
      s.dense_widths = {128 / div, 32 / div, 1};
      s.preset = "cnn1d";
      break;
    case Preset::Fcn:
      s.input_cols = 2;
      s.dense_widths = {256 / div, 256 / div, 512 / div, 512 / div,
                        512 / div, 256 / div, 128 / div, 64 / div, 1};
      s.preset = "fcn";
      break;
  }
  return s;
}

namespace {

// Sizes of the parameter blocks in serialization order.
std::vector<std::size_t> block_sizes(const ModelSpec& s) {
  std::vector<std::size_t> out;
  int in_ch = s.input_cols;  // coordinates enter as channels, not image columns
  for (int oc : s.conv_widths) {
    out.push_back(static_cast<std::size_t>(s.filter_rows) * s.filter_cols *
                  in_ch * oc);
    out.push_back(static_cast<std::size_t>(oc));
    in_ch = oc;
  }
  int in = s.dense_input();
  for (int ow : s.dense_widths) {
    out.push_back(static_cast<std::size_t>(in) * ow);
    if (s.dense_bias) out.push_back(static_cast<std::size_t>(ow));
    in = ow;
  }
  return out;
}

std::vector<std::size_t> block_fanin(const ModelSpec& s) {
  std::vector<std::size_t> out;
  int in_ch = s.input_cols;
  for (int oc : s.conv_widths) {
    out.push_back(static_cast<std::size_t>(s.filter_rows) * s.filter_cols * in_ch);
    out.push_back(0);  // bias
    in_ch = oc;
  }
  int in = s.dense_input();
  for (int ow : s.dense_widths) {
    out.push_back(static_cast<std::size_t>(in));
    if (s.dense_bias) out.push_back(0);
    in = ow;
  }
  return out;
}

}  // namespace

template <typename T>
Model<T> Model<T>::init(const ModelSpec& spec, std::uint64_t seed) {
  if (!spec.valid()) throw std::invalid_argument("invalid model spec");
  Model<T> m;
  m.spec = spec;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  auto sizes = block_sizes(spec);
  auto fanin = block_fanin(spec);
  m.params.resize(sizes.size());
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    m.params[b].assign(sizes[b], T(0));
    if (fanin[b] == 0) continue;  // biases start at zero
    const double scale = 1.0 / std::sqrt(static_cast<double>(fanin[b]));
    for (auto& v : m.params[b]) v = static_cast<T>(uni(rng) * scale);
  }
  return m;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : params) n += b.size();
  return n;
}

template <typename T>
GradientSet<T> zero_gradients(const Model<T>& m) {
  GradientSet<T> g(m.params.size());
  for (std::size_t b = 0; b < m.params.size(); ++b)
    g[b].assign(m.params[b].size(), T(0));
  return g;
}

template <typename T>
void conv2d_forward(std::span<const T> input, int h, int w, int in_ch,
                    std::span<const T> weights, std::span<const T> bias,
                    int f_row, int f_col, int out_ch, std::span<T> output) {
  assert(input.size() == static_cast<std::size_t>(h) * w * in_ch);
  assert(output.size() == static_cast<std::size_t>(h) * w * out_ch);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      T* z = output.data() + (static_cast<std::size_t>(i) * w + j) * out_ch;
      for (int o = 0; o < out_ch; ++o) z[o] = bias.empty() ? T(0) : bias[o];
      for (int dp = 0; dp < f_row && i + dp < h; ++dp)
        for (int dq = 0; dq < f_col && j + dq < w; ++dq) {
          const T* a = input.data() +
                       (static_cast<std::size_t>(i + dp) * w + (j + dq)) * in_ch;
          const T* wr =
              weights.data() +
              (static_cast<std::size_t>(dp) * f_col + dq) * in_ch * out_ch;
          for (int c = 0; c < in_ch; ++c) {
            const T av = a[c];
            const T* wc = wr + static_cast<std::size_t>(c) * out_ch;
            for (int o = 0; o < out_ch; ++o) z[o] += av * wc[o];
          }
        }
    }
}

template <typename T>
void global_max_pool(std::span<const T> input, int h, int w, int ch,
                     std::span<T> output, std::span<std::size_t> argmax) {
  assert(h >= 1 && w >= 1);
  for (int c = 0; c < ch; ++c) {
    T best = input[c];
    std::size_t best_at = 0;
    for (std::size_t s = 1; s < static_cast<std::size_t>(h) * w; ++s) {
      const T v = input[s * ch + c];
      if (v > best) {
        best = v;
        best_at = s;
      }
    }
    output[c] = best;
    argmax[c] = best_at;
  }
}

template <typename T>
void dense_forward(std::span<const T> input, std::span<const T> weights,
                   std::span<const T> bias, int out, std::span<T> output) {
  assert(weights.size() == input.size() * static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) output[o] = bias.empty() ? T(0) : bias[o];
  for (std::size_t j = 0; j < input.size(); ++j) {
    const T av = input[j];
    const T* wr = weights.data() + j * out;
    for (int o = 0; o < out; ++o) output[o] += av * wr[o];
  }
}

template <typename T>
T cross_entropy(T pred, int true_label) {
  const T lo = static_cast<T>(kLossClamp);
  const T a = std::clamp(pred, lo, T(1) - lo);
  return true_label ? -std::log(a) : -std::log(T(1) - a);
}

template <typename T>
T forward(const Model<T>& m, std::span<const T> input, Workspace<T>& ws) {
  const auto& s = m.spec;
  // Each time step is one spatial row; the coordinate columns are the input
  // channels, so the 2x1 filters learn separate weights per coordinate and the
  // global pool runs over time only.
  const int h = s.input_rows, w = 1;
  if (input.size() != static_cast<std::size_t>(h) * s.input_cols)
    throw std::invalid_argument("forward: input shape mismatch");

  const std::size_t n_conv = s.conv_widths.size();
  ws.conv_act.resize(n_conv);
  ws.dense_act.resize(s.dense_widths.size());

  std::span<const T> act = input;
  int in_ch = s.input_cols;
  for (std::size_t l = 0; l < n_conv; ++l) {
    const int oc = s.conv_widths[l];
    ws.conv_act[l].resize(static_cast<std::size_t>(h) * w * oc);
    conv2d_forward<T>(act, h, w, in_ch, m.params[2 * l], m.params[2 * l + 1],
                      s.filter_rows, s.filter_cols, oc, ws.conv_act[l]);
    relu_inplace<T>(ws.conv_act[l]);
    act = ws.conv_act[l];
    in_ch = oc;
  }

  std::span<const T> flat;
  if (n_conv > 0) {
    ws.pooled.resize(in_ch);
    ws.argmax.resize(in_ch);
    global_max_pool<T>(act, h, w, in_ch, ws.pooled, ws.argmax);
    flat = ws.pooled;
  } else {
    flat = input;  // fcn: flattened time series straight into the dense stack
  }

  std::size_t blk = 2 * n_conv;
  for (std::size_t l = 0; l < s.dense_widths.size(); ++l) {
    const int ow = s.dense_widths[l];
    ws.dense_act[l].resize(ow);
    std::span<const T> bias;
    if (s.dense_bias) bias = m.params[blk + 1];
    dense_forward<T>(flat, m.params[blk], bias, ow, ws.dense_act[l]);
    blk += s.dense_bias ? 2 : 1;
    if (l + 1 < s.dense_widths.size())
      relu_inplace<T>(ws.dense_act[l]);  // final unit goes through the sigmoid
    flat = ws.dense_act[l];
  }

  ws.prediction = sigmoid(ws.dense_act.back()[0]);
  return ws.prediction;
}

template <typename T>
void backward(const Model<T>& m, std::span<const T> input, int true_label,
              Workspace<T>& ws, GradientSet<T>& grads, T weight) {
  const auto& s = m.spec;
  const int h = s.input_rows, w = 1;  // channels-as-coordinates (see forward)
  const std::size_t n_conv = s.conv_widths.size();
  const std::size_t n_dense = s.dense_widths.size();
  ws.dense_grad.resize(n_dense);
  ws.conv_grad.resize(n_conv);

  // d(cross_entropy o sigmoid)/dz at the output unit.
  ws.dense_grad[n_dense - 1] = {weight *
                                (ws.prediction - static_cast<T>(true_label))};

  // Dense stack, last to first.
  for (std::size_t l = n_dense; l-- > 0;) {
    const int ow = s.dense_widths[l];
    std::size_t blk = 2 * n_conv;
    for (std::size_t k = 0; k < l; ++k) blk += s.dense_bias ? 2 : 1;

    std::span<const T> a_prev;
    if (l > 0)
      a_prev = ws.dense_act[l - 1];
    else if (n_conv > 0)
      a_prev = ws.pooled;
    else
      a_prev = input;

    auto& gz = ws.dense_grad[l];
    auto& gw = grads[blk];
    for (std::size_t j = 0; j < a_prev.size(); ++j) {
      const T av = a_prev[j];
      T* wrow = gw.data() + j * ow;
      for (int o = 0; o < ow; ++o) wrow[o] += av * gz[o];
    }
    if (s.dense_bias)
      for (int o = 0; o < ow; ++o) grads[blk + 1][o] += gz[o];

    // Gradient w.r.t. the previous activation, through its ReLU.
    std::vector<T>* dst = nullptr;
    if (l > 0) {
      ws.dense_grad[l - 1].assign(a_prev.size(), T(0));
      dst = &ws.dense_grad[l - 1];
    } else if (n_conv > 0) {
      ws.conv_grad[n_conv - 1].assign(
          static_cast<std::size_t>(h) * w * s.conv_widths[n_conv - 1], T(0));
      // route below
    } else {
      break;  // no gradient w.r.t. the raw input needed
    }
    const auto& wts = m.params[blk];
    if (dst) {
      for (std::size_t j = 0; j < a_prev.size(); ++j) {
        T acc = T(0);
        const T* wrow = wts.data() + j * ow;
        for (int o = 0; o < ow; ++o) acc += wrow[o] * gz[o];
        (*dst)[j] = a_prev[j] > T(0) ? acc : T(0);
      }
    } else {
      // l == 0 with a conv stack: scatter through the max pool (argmax only).
      const int ch = s.conv_widths[n_conv - 1];
      auto& gc = ws.conv_grad[n_conv - 1];
      for (int c = 0; c < ch; ++c) {
        T acc = T(0);
        const T* wrow = wts.data() + static_cast<std::size_t>(c) * ow;
        for (int o = 0; o < ow; ++o) acc += wrow[o] * gz[o];
        if (ws.pooled[c] > T(0))
          gc[ws.argmax[c] * ch + c] = acc;
        else if (ws.pooled[c] == T(0))
          gc[ws.argmax[c] * ch + c] = T(0);  // ReLU blocked
      }
    }
  }

  // Conv stack, last to first.
  for (std::size_t l = n_conv; l-- > 0;) {
    const int oc = s.conv_widths[l];
    const int ic = l == 0 ? s.input_cols : s.conv_widths[l - 1];
    std::span<const T> a_prev = l == 0 ? input : std::span<const T>(ws.conv_act[l - 1]);
    auto& gz = ws.conv_grad[l];  // already masked by this layer's ReLU
    auto& gw = grads[2 * l];
    auto& gb = grads[2 * l + 1];
    std::vector<T>* gprev = nullptr;
    if (l > 0) {
      ws.conv_grad[l - 1].assign(static_cast<std::size_t>(h) * w * ic, T(0));
      gprev = &ws.conv_grad[l - 1];
    }
    const auto& wts = m.params[2 * l];
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        T* gzrow = gz.data() + (static_cast<std::size_t>(i) * w + j) * oc;
        for (int o = 0; o < oc; ++o) gb[o] += gzrow[o];
        for (int dp = 0; dp < s.filter_rows && i + dp < h; ++dp)
          for (int dq = 0; dq < s.filter_cols && j + dq < w; ++dq) {
            const std::size_t src =
                (static_cast<std::size_t>(i + dp) * w + (j + dq)) * ic;
            const std::size_t woff =
                (static_cast<std::size_t>(dp) * s.filter_cols + dq) * ic * oc;
            for (int c = 0; c < ic; ++c) {
              const T av = a_prev[src + c];
              T* gwrow = gw.data() + woff + static_cast<std::size_t>(c) * oc;
              for (int o = 0; o < oc; ++o) gwrow[o] += av * gzrow[o];
              if (gprev) {
                const T* wrow = wts.data() + woff + static_cast<std::size_t>(c) * oc;
                T acc = T(0);
                for (int o = 0; o < oc; ++o) acc += wrow[o] * gzrow[o];
                (*gprev)[src + c] += acc;
              }
            }
          }
      }
    // Mask the propagated gradient by the previous layer's ReLU.
    if (gprev) {
      const auto& a = ws.conv_act[l - 1];
      for (std::size_t k = 0; k < gprev->size(); ++k)
        if (a[k] <= T(0)) (*gprev)[k] = T(0);
    }
  }
}

template <typename T>
AdamState<T> AdamState<T>::init(const Model<T>& model, T lr) {
  AdamState<T> s;
  s.lr = lr;
  s.m1.resize(model.params.size());
  s.m2.resize(model.params.size());
  for (std::size_t b = 0; b < model.params.size(); ++b) {
    s.m1[b].assign(model.params[b].size(), T(0));
    s.m2[b].assign(model.params[b].size(), T(0));
  }
  return s;
}

template <typename T>
void adam_update(Model<T>& model, const GradientSet<T>& grads,
                 AdamState<T>& state) {
  if (grads.size() != model.params.size())
    throw std::invalid_argument("adam_update: gradient shape mismatch");
  ++state.step;
  const T c1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  const T c2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  for (std::size_t b = 0; b < model.params.size(); ++b) {
    auto& p = model.params[b];
    const auto& g = grads[b];
    auto& m1 = state.m1[b];
    auto& m2 = state.m2[b];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m1[k] = state.beta1 * m1[k] + (T(1) - state.beta1) * g[k];
      m2[k] = state.beta2 * m2[k] + (T(1) - state.beta2) * g[k] * g[k];
      const T mhat = m1[k] / c1;
      const T vhat = m2[k] / c2;
      p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// --- persistence -------------------------------------------------------------

namespace {
constexpr char kModelMagic[4] = {'C', 'H', 'S', 'M'};

nlohmann::json spec_to_json(const ModelSpec& s) {
  return {{"input_rows", s.input_rows},   {"input_cols", s.input_cols},
          {"conv_widths", s.conv_widths}, {"dense_widths", s.dense_widths},
          {"filter_rows", s.filter_rows}, {"filter_cols", s.filter_cols},
          {"dense_bias", s.dense_bias},   {"preset", s.preset}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.input_rows = j.at("input_rows");
  s.input_cols = j.at("input_cols");
  s.conv_widths = j.at("conv_widths").get<std::vector<int>>();
  s.dense_widths = j.at("dense_widths").get<std::vector<int>>();
  s.filter_rows = j.at("filter_rows");
  s.filter_cols = j.at("filter_cols");
  s.dense_bias = j.at("dense_bias");
  s.preset = j.at("preset");
  return s;
}
}  // namespace

void save_model(const Model<float>& m, const std::string& path,
                const std::string& train_config_json, std::uint64_t seed) {
  std::string blob;
  for (const auto& b : m.params)
    blob.append(reinterpret_cast<const char*>(b.data()),
                b.size() * sizeof(float));
  nlohmann::json hdr;
  hdr["format_version"] = 1;
  hdr["spec"] = spec_to_json(m.spec);
  hdr["seed"] = seed;
  hdr["train_config"] = nlohmann::json::parse(train_config_json);
  hdr["checksum"] = fnv1a64(blob.data(), blob.size());
  const std::string hs = hdr.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kModelMagic, 4);
  const auto hlen = static_cast<std::uint32_t>(hs.size());
  os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

Model<float> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string raw = ss.str();
  if (raw.size() < 8 || std::memcmp(raw.data(), kModelMagic, 4) != 0)
    throw std::runtime_error("model checkpoint: bad magic");
  std::uint32_t hlen;
  std::memcpy(&hlen, raw.data() + 4, 4);
  if (raw.size() < 8 + static_cast<std::size_t>(hlen))
    throw std::runtime_error("model checkpoint: truncated header");
  const auto hdr = nlohmann::json::parse(raw.substr(8, hlen));
  if (hdr.at("format_version").get<int>() != 1)
    throw std::runtime_error("model checkpoint: unsupported version");
  Model<float> m;
  m.spec = spec_from_json(hdr.at("spec"));
  if (!m.spec.valid()) throw std::runtime_error("model checkpoint: bad spec");

  auto sizes = block_sizes(m.spec);
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  const std::string blob = raw.substr(8 + hlen);
  if (blob.size() != total * sizeof(float))
    throw std::runtime_error("model checkpoint: truncated parameter data");
  if (fnv1a64(blob.data(), blob.size()) != hdr.at("checksum").get<std::uint64_t>())
    throw std::runtime_error("model checkpoint: checksum mismatch");
  m.params.resize(sizes.size());
  std::size_t off = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    m.params[b].resize(sizes[b]);
    std::memcpy(m.params[b].data(), blob.data() + off, sizes[b] * sizeof(float));
    off += sizes[b] * sizeof(float);
  }
  return m;
}

// --- explicit instantiations -------------------------------------------------

#define CHAOSCOPE_INSTANTIATE(T)                                               \
  template struct Model<T>;                                                    \
  template GradientSet<T> zero_gradients(const Model<T>&);                     \
  template void conv2d_forward<T>(std::span<const T>, int, int, int,           \
                                  std::span<const T>, std::span<const T>, int, \
                                  int, int, std::span<T>);                     \
  template void global_max_pool<T>(std::span<const T>, int, int, int,          \
                                   std::span<T>, std::span<std::size_t>);      \
  template void dense_forward<T>(std::span<const T>, std::span<const T>,       \
                                 std::span<const T>, int, std::span<T>);       \
  template T cross_entropy<T>(T, int);                                         \
  template T forward<T>(const Model<T>&, std::span<const T>, Workspace<T>&);   \
  template void backward<T>(const Model<T>&, std::span<const T>, int,          \
                            Workspace<T>&, GradientSet<T>&, T);                \
  template struct AdamState<T>;                                                \
  template void adam_update<T>(Model<T>&, const GradientSet<T>&, AdamState<T>&);

CHAOSCOPE_INSTANTIATE(float)
CHAOSCOPE_INSTANTIATE(double)

#undef CHAOSCOPE_INSTANTIATE

}  // namespace chaoscope::net
