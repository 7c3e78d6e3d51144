#include "tst/backbone.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "tst/error.hpp"
#include "tst/parallel.hpp"

namespace tst {

// ---------------------------------------------------------------------------
// Configuration and layout
// ---------------------------------------------------------------------------

void BackboneConfig::validate() const {
  if (stage_channels.empty()) throw InvalidConfig("at least one encoder stage is required");
  for (int c : stage_channels)
    if (c < 1) throw InvalidConfig("stage channel counts must be positive");
  if (num_classes < 2) throw InvalidConfig("num_classes must be >= 2 (background + one class)");
  if (in_channels < 1) throw InvalidConfig("in_channels must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw InvalidConfig("kernel_size must be odd and positive");
  const int factor = 1 << stage_channels.size();
  if (height < 1 || width < 1 || height % factor != 0 || width % factor != 0)
    throw InvalidConfig("input height and width must be divisible by 2^stages (" + std::to_string(factor) + ")");
}

nlohmann::json BackboneConfig::to_json() const {
  return {{"height", height},       {"width", width},
          {"in_channels", in_channels}, {"num_classes", num_classes},
          {"stage_channels", stage_channels}, {"kernel_size", kernel_size},
          {"seed", seed}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.stage_channels = j.value("stage_channels", c.stage_channels);
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.seed = j.value("seed", c.seed);
  return c;
}

ParamLayout ParamLayout::for_config(const BackboneConfig& config) {
  config.validate();
  ParamLayout layout;
  auto add = [&](std::string name, int in, int out) {
    Entry e{std::move(name), ConvShape{in, out, config.kernel_size}, layout.total, 0};
    layout.total += e.shape.weight_count();
    e.bias_offset = layout.total;
    layout.total += static_cast<std::size_t>(out);
    layout.convs.push_back(std::move(e));
  };
  const auto& ch = config.stage_channels;
  const int stages = static_cast<int>(ch.size());
  for (int s = 0; s < stages; ++s) add("enc" + std::to_string(s), s == 0 ? config.in_channels : ch[s - 1], ch[s]);
  for (int s = stages - 1; s >= 0; --s) add("dec" + std::to_string(s), ch[s], s == 0 ? ch[0] : ch[s - 1]);
  add("cls", ch[0], config.num_classes);
  return layout;
}

template <typename T>
BackboneParams<T> init_params(const BackboneConfig& config) {
  BackboneParams<T> p;
  p.config = config;
  p.layout = ParamLayout::for_config(config);
  p.values.assign(p.layout.total, T(0));
  std::mt19937_64 rng(config.seed);
  for (const auto& e : p.layout.convs) {
    const double window = static_cast<double>(e.shape.kernel) * e.shape.kernel;
    const double bound = std::sqrt(6.0 / (window * e.shape.in_channels + window * e.shape.out_channels));
    for (std::size_t i = 0; i < e.shape.weight_count(); ++i) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      p.values[e.weight_offset + i] = static_cast<T>((2.0 * u - 1.0) * bound);
    }
  }
  return p;
}

template <typename T>
BackboneParams<T> convert_params(const BackboneParams<double>& params) {
  BackboneParams<T> out;
  out.config = params.config;
  out.layout = params.layout;
  out.values.assign(params.values.begin(), params.values.end());
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

template <typename T>
struct Workspace {
  std::vector<std::vector<T>> cols;            // per conv
  std::vector<FeatureMap<T>> activations;      // per conv (post-ReLU; classifier: logits)
  std::vector<std::vector<std::int32_t>> argmax;  // per stage
  std::vector<std::pair<int, int>> pooled_from;   // per stage, pre-pool (h, w)
  FeatureMap<T> probs;
  std::vector<T> dcol;
  // scratch volumes reused across calls
  FeatureMap<T> pooled, unpooled, dx, dact, dunpooled, dlogits;
};

template <typename T>
std::span<T> mutable_span(std::vector<T>& v, std::size_t offset, std::size_t count) {
  return {v.data() + offset, count};
}

template <typename T>
void check_input(const BackboneParams<T>& params, const FeatureMap<T>& input) {
  const auto& c = params.config;
  if (input.channels != c.in_channels || input.height != c.height || input.width != c.width)
    throw InvalidInput("input is " + std::to_string(input.channels) + "x" + std::to_string(input.height) + "x" +
                       std::to_string(input.width) + ", backbone expects " + std::to_string(c.in_channels) +
                       "x" + std::to_string(c.height) + "x" + std::to_string(c.width));
  if (params.values.size() != params.layout.total) throw InvalidInput("parameter vector does not match layout");
}

// Runs the network and leaves every intermediate needed by backward in `ws`.
template <typename T>
void run_forward(const BackboneParams<T>& params, const FeatureMap<T>& input, Workspace<T>& ws) {
  check_input(params, input);
  const int stages = static_cast<int>(params.config.stage_channels.size());
  const std::size_t convs = params.layout.convs.size();
  ws.cols.resize(convs);
  ws.activations.resize(convs);
  ws.argmax.resize(stages);
  ws.pooled_from.resize(stages);

  const FeatureMap<T>* x = &input;
  for (int s = 0; s < stages; ++s) {
    const auto& e = params.layout.convs[s];
    layers::conv_forward(e.shape, params.weight(s), params.bias(s), *x, ws.activations[s], ws.cols[s]);
    layers::relu_forward(ws.activations[s]);
    ws.pooled_from[s] = {ws.activations[s].height, ws.activations[s].width};
    layers::maxpool_forward(ws.activations[s], ws.pooled, ws.argmax[s]);
    x = &ws.pooled;
  }
  for (int s = stages - 1; s >= 0; --s) {
    const std::size_t idx = static_cast<std::size_t>(stages + (stages - 1 - s));
    const auto& e = params.layout.convs[idx];
    layers::maxunpool_forward(*x, ws.argmax[s], ws.pooled_from[s].first, ws.pooled_from[s].second, ws.unpooled);
    layers::conv_forward(e.shape, params.weight(idx), params.bias(idx), ws.unpooled, ws.activations[idx],
                         ws.cols[idx]);
    layers::relu_forward(ws.activations[idx]);
    x = &ws.activations[idx];
  }
  const std::size_t cls = params.classifier();
  layers::conv_forward(params.layout.convs[cls].shape, params.weight(cls), params.bias(cls), *x,
                       ws.activations[cls], ws.cols[cls]);
}

template <typename T>
void run_backward(const BackboneParams<T>& params, Workspace<T>& ws, std::vector<T>& grads) {
  const int stages = static_cast<int>(params.config.stage_channels.size());
  const auto& convs = params.layout.convs;
  FeatureMap<T>& dx = ws.dx;

  auto conv_back = [&](std::size_t idx, FeatureMap<T>& dout, FeatureMap<T>* din) {
    const auto& e = convs[idx];
    layers::conv_backward(e.shape, params.weight(idx), ws.cols[idx], dout,
                          mutable_span(grads, e.weight_offset, e.shape.weight_count()),
                          mutable_span(grads, e.bias_offset, static_cast<std::size_t>(e.shape.out_channels)),
                          din, ws.dcol);
  };

  conv_back(params.classifier(), ws.dlogits, &dx);
  for (int s = 0; s < stages; ++s) {
    const std::size_t idx = static_cast<std::size_t>(stages + (stages - 1 - s));
    layers::relu_backward(ws.activations[idx], dx);
    conv_back(idx, dx, &ws.dunpooled);
    layers::maxunpool_backward(ws.dunpooled, ws.argmax[s], dx);
  }
  for (int s = stages - 1; s >= 0; --s) {
    layers::maxpool_backward(dx, ws.argmax[s], ws.pooled_from[s].first, ws.pooled_from[s].second, ws.dact);
    layers::relu_backward(ws.activations[s], ws.dact);
    conv_back(static_cast<std::size_t>(s), ws.dact, s == 0 ? nullptr : &dx);
  }
}

template <typename T>
T backward_with(const BackboneParams<T>& params, const FeatureMap<T>& input, const LabelMap& target,
                std::span<const double> class_weights, std::vector<T>& grads, Workspace<T>& ws) {
  if (class_weights.size() != static_cast<std::size_t>(params.config.num_classes))
    throw InvalidInput("one class weight per class is required");
  run_forward(params, input, ws);
  const T value = layers::softmax_cross_entropy(ws.activations[params.classifier()], target, class_weights,
                                                ws.probs, &ws.dlogits);
  grads.assign(params.values.size(), T(0));
  run_backward(params, ws, grads);
  return value;
}

}  // namespace

template <typename T>
FeatureMap<T> forward(const BackboneParams<T>& params, const FeatureMap<T>& input) {
  Workspace<T> ws;
  run_forward(params, input, ws);
  FeatureMap<T> probs;
  layers::softmax(ws.activations[params.classifier()], probs);
  return probs;
}

double loss(const FeatureMap<double>& probs, const LabelMap& target, std::span<const double> class_weights) {
  if (target.width != probs.width || target.height != probs.height)
    throw InvalidInput("target and prediction dimensions differ");
  if (class_weights.size() != static_cast<std::size_t>(probs.channels))
    throw InvalidInput("one class weight per class is required");
  const std::size_t plane = probs.plane();
  double total = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    const int t = target.labels[p];
    if (t < 0 || t >= probs.channels) throw InvalidInput("target class out of range");
    total -= class_weights[t] * std::log(std::max(probs.data[t * plane + p], 1e-300));
  }
  return std::max(0.0, total / static_cast<double>(plane));
}

template <typename T>
T backward(const BackboneParams<T>& params, const FeatureMap<T>& input, const LabelMap& target,
           std::span<const double> class_weights, std::vector<T>& grads) {
  Workspace<T> ws;
  return backward_with(params, input, target, class_weights, grads, ws);
}

std::vector<double> median_frequency_weights(std::span<const LabelMap> targets, int num_classes) {
  std::vector<double> pixels(num_classes, 0.0);
  std::vector<double> support(num_classes, 0.0);
  for (const auto& t : targets) {
    std::vector<double> counts(num_classes, 0.0);
    for (int v : t.labels) {
      if (v < 0 || v >= num_classes) throw InvalidInput("target class out of range");
      counts[v] += 1.0;
    }
    for (int c = 0; c < num_classes; ++c) {
      pixels[c] += counts[c];
      if (counts[c] > 0) support[c] += static_cast<double>(t.labels.size());
    }
  }
  std::vector<double> freq;
  for (int c = 0; c < num_classes; ++c)
    if (support[c] > 0) freq.push_back(pixels[c] / support[c]);
  std::vector<double> weights(num_classes, 1.0);
  if (freq.empty()) return weights;
  std::sort(freq.begin(), freq.end());
  const std::size_t n = freq.size();
  const double median = n % 2 == 1 ? freq[n / 2] : 0.5 * (freq[n / 2 - 1] + freq[n / 2]);
  for (int c = 0; c < num_classes; ++c)
    if (support[c] > 0) weights[c] = median / (pixels[c] / support[c]);
  return weights;
}

template <typename T>
void adadelta_step(std::span<T> params, std::span<const T> grads, OptimizerState<T>& state) {
  if (params.size() != grads.size()) throw InvalidInput("parameter and gradient sizes differ");
  if (!(state.rho > 0.0 && state.rho < 1.0)) throw InvalidParameter("rho must lie in (0, 1)");
  if (state.mean_sq_grad.empty()) {
    state.mean_sq_grad.assign(params.size(), T(0));
    state.mean_sq_update.assign(params.size(), T(0));
  }
  if (state.mean_sq_grad.size() != params.size() || state.mean_sq_update.size() != params.size())
    throw InvalidInput("optimizer state does not match the parameter count");
  const T rho = static_cast<T>(state.rho);
  const T eps = static_cast<T>(state.eps);
  const T lr = static_cast<T>(state.lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    T& eg = state.mean_sq_grad[i];
    T& ed = state.mean_sq_update[i];
    eg = rho * eg + (T(1) - rho) * g * g;
    const T delta = -(std::sqrt(ed + eps) / std::sqrt(eg + eps)) * g;
    ed = rho * ed + (T(1) - rho) * delta * delta;
    params[i] += lr * delta;
  }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainResult train(std::span<const TrainRecord> dataset, const BackboneConfig& config, const TrainOptions& options) {
  if (dataset.empty()) throw InvalidInput("training dataset is empty");
  config.validate();
  if (options.epochs < 0) throw InvalidParameter("epochs must be >= 0");
  if (options.batch_size < 1) throw InvalidParameter("batch size must be >= 1");
  for (const auto& r : dataset) {
    if (r.input.channels != config.in_channels || r.input.height != config.height || r.input.width != config.width)
      throw InvalidInput("training input does not match the backbone configuration");
    if (r.target.width != config.width || r.target.height != config.height)
      throw InvalidInput("training target does not match the backbone configuration");
  }

  TrainResult result;
  if (options.class_weights.empty()) {
    std::vector<LabelMap> targets;
    targets.reserve(dataset.size());
    for (const auto& r : dataset) targets.push_back(r.target);
    result.class_weights = median_frequency_weights(targets, config.num_classes);
  } else {
    if (options.class_weights.size() != static_cast<std::size_t>(config.num_classes))
      throw InvalidInput("one class weight per class is required");
    result.class_weights = options.class_weights;
  }
  result.params = init_params<float>(config);

  OptimizerState<float> state;
  state.rho = options.rho;
  state.lr = options.lr;
  state.eps = options.eps;

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const std::size_t batch = static_cast<std::size_t>(options.batch_size);
  const std::size_t pixels = static_cast<std::size_t>(config.height) * config.width;
  std::vector<Workspace<float>> workspaces(std::min(batch, dataset.size()));
  std::vector<std::vector<float>> sample_grads(workspaces.size());
  std::vector<float> sample_loss(workspaces.size());
  std::vector<float> grad(result.params.values.size());

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      parallel_for(
          count,
          [&](std::size_t j) {
            const auto& rec = dataset[order[start + j]];
            sample_loss[j] = backward_with(result.params, rec.input, rec.target, result.class_weights,
                                           sample_grads[j], workspaces[j]);
          },
          options.workers);
      std::fill(grad.begin(), grad.end(), 0.0f);
      double batch_loss = 0.0;
      for (std::size_t j = 0; j < count; ++j) {
        batch_loss += sample_loss[j];
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += sample_grads[j][i];
      }
      // The reported loss is a per-pixel mean, but the step follows the per-image pixel
      // sum. Mean-sized gradients sit far below sqrt(eps), where ADADELTA collapses into
      // plain gradient descent with a unit step and barely moves.
      const float scale = static_cast<float>(pixels) / static_cast<float>(count);
      for (auto& g : grad) g *= scale;
      if (!std::isfinite(batch_loss))
        throw NumericError("non-finite training loss in epoch " + std::to_string(epoch));
      epoch_loss += batch_loss;
      adadelta_step<float>(result.params.values, grad, state);
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::all_of(result.params.values.begin(), result.params.values.end(),
                     [](float v) { return std::isfinite(v); }))
      throw NumericError("non-finite parameter after epoch " + std::to_string(epoch));
    result.loss_history.push_back(epoch_loss);
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'S', 'T', 'B'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_bytes(std::istream& in, std::uint32_t n) {
  if (n > (1u << 28)) throw IoError("corrupt checkpoint (oversized field)");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw IoError("truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const BackboneParams<float>& params,
                     const nlohmann::json& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string header = nlohmann::json{{"backbone", params.config.to_json()}, {"metadata", metadata}}.dump();
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_u32(out, static_cast<std::uint32_t>(2 * params.layout.convs.size()));
  for (const auto& e : params.layout.convs) {
    const auto write_tensor = [&](const std::string& name, std::vector<std::uint32_t> dims, std::size_t offset,
                                  std::size_t count) {
      put_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(out, static_cast<std::uint32_t>(dims.size()));
      for (auto d : dims) put_u32(out, d);
      for (std::size_t i = 0; i < count; ++i) put_u32(out, std::bit_cast<std::uint32_t>(params.values[offset + i]));
    };
    const auto& s = e.shape;
    write_tensor(e.name + ".weight",
                 {static_cast<std::uint32_t>(s.out_channels), static_cast<std::uint32_t>(s.in_channels),
                  static_cast<std::uint32_t>(s.kernel), static_cast<std::uint32_t>(s.kernel)},
                 e.weight_offset, s.weight_count());
    write_tensor(e.name + ".bias", {static_cast<std::uint32_t>(s.out_channels)}, e.bias_offset,
                 static_cast<std::size_t>(s.out_channels));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not a TSTB checkpoint: " + path.string());
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(get_bytes(in, get_u32(in)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  Checkpoint ckpt;
  ckpt.params.config = BackboneConfig::from_json(header.at("backbone"));
  ckpt.params.layout = ParamLayout::for_config(ckpt.params.config);
  ckpt.params.values.assign(ckpt.params.layout.total, 0.0f);
  ckpt.metadata = header.value("metadata", nlohmann::json::object());

  const std::uint32_t tensors = get_u32(in);
  if (tensors != 2 * ckpt.params.layout.convs.size()) throw IoError("checkpoint tensor count mismatch");
  for (std::uint32_t t = 0; t < tensors; ++t) {
    const auto& e = ckpt.params.layout.convs[t / 2];
    const bool is_weight = t % 2 == 0;
    const std::string name = get_bytes(in, get_u32(in));
    if (name != e.name + (is_weight ? ".weight" : ".bias")) throw IoError("unexpected tensor " + name);
    const std::uint32_t rank = get_u32(in);
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) count *= get_u32(in);
    const std::size_t expected = is_weight ? e.shape.weight_count() : static_cast<std::size_t>(e.shape.out_channels);
    if (count != expected) throw IoError("tensor " + name + " has the wrong size");
    const std::size_t offset = is_weight ? e.weight_offset : e.bias_offset;
    for (std::size_t i = 0; i < count; ++i) ckpt.params.values[offset + i] = std::bit_cast<float>(get_u32(in));
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

namespace {

constexpr double kStep = 1e-4;

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

void fill_uniform(std::vector<double>& v, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& x : v) x = dist(rng);
}

// Compares analytic gradient `grad` of f at `x` against central differences.
// When `pattern` is given, coordinates whose perturbation changes it are skipped.
GradcheckEntry compare(std::string name, std::vector<double>& x, const std::vector<double>& grad,
                       const std::function<double()>& f,
                       const std::function<std::vector<std::int32_t>()>& pattern = {}) {
  GradcheckEntry entry{std::move(name), 0.0, 0, 0};
  const std::vector<std::int32_t> base = pattern ? pattern() : std::vector<std::int32_t>{};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + kStep;
    const double plus = f();
    const bool plus_kink = pattern && pattern() != base;
    x[i] = saved - kStep;
    const double minus = f();
    const bool minus_kink = pattern && pattern() != base;
    x[i] = saved;
    if (plus_kink || minus_kink) {
      ++entry.skipped;
      continue;
    }
    const double numeric = (plus - minus) / (2 * kStep);
    entry.max_relative_error = std::max(entry.max_relative_error, relative_error(grad[i], numeric));
    ++entry.checked;
  }
  return entry;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradcheckEntry> report;

  {  // convolution: inputs, weights, bias under a random linear read-out
    const ConvShape shape{2, 3, 3};
    FeatureMap<double> in(2, 5, 6);
    std::vector<double> w(shape.weight_count()), b(3), col, dcol;
    fill_uniform(in.data, rng, -1, 1);
    fill_uniform(w, rng, -1, 1);
    fill_uniform(b, rng, -1, 1);
    FeatureMap<double> out;
    layers::conv_forward<double>(shape, w, b, in, out, col);
    FeatureMap<double> readout(out.channels, out.height, out.width);
    fill_uniform(readout.data, rng, -1, 1);
    auto f = [&] {
      std::vector<double> c;
      FeatureMap<double> o;
      layers::conv_forward<double>(shape, w, b, in, o, c);
      return dot(o.data, readout.data);
    };
    std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
    FeatureMap<double> din;
    layers::conv_backward<double>(shape, w, col, readout, dw, db, &din, dcol);
    auto e1 = compare("conv.input", in.data, din.data, f);
    auto e2 = compare("conv.weight", w, dw, f);
    auto e3 = compare("conv.bias", b, db, f);
    report.push_back({"conv", std::max({e1.max_relative_error, e2.max_relative_error, e3.max_relative_error}),
                      e1.checked + e2.checked + e3.checked, 0});
  }

  {  // ReLU, inputs kept away from the kink
    FeatureMap<double> in(2, 4, 4);
    for (auto& v : in.data) {
      std::uniform_real_distribution<double> mag(0.05, 1.0);
      v = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
    }
    FeatureMap<double> readout(2, 4, 4);
    fill_uniform(readout.data, rng, -1, 1);
    auto f = [&] {
      FeatureMap<double> o = in;
      layers::relu_forward(o);
      return dot(o.data, readout.data);
    };
    FeatureMap<double> act = in;
    layers::relu_forward(act);
    FeatureMap<double> g = readout;
    layers::relu_backward(act, g);
    report.push_back(compare("relu", in.data, g.data, f));
  }

  {  // max pooling with indices
    FeatureMap<double> in(2, 4, 6);
    fill_uniform(in.data, rng, -1, 1);
    FeatureMap<double> out;
    std::vector<std::int32_t> idx;
    layers::maxpool_forward(in, out, idx);
    FeatureMap<double> readout(out.channels, out.height, out.width);
    fill_uniform(readout.data, rng, -1, 1);
    auto f = [&] {
      FeatureMap<double> o;
      std::vector<std::int32_t> i2;
      layers::maxpool_forward(in, o, i2);
      return dot(o.data, readout.data);
    };
    FeatureMap<double> din;
    layers::maxpool_backward(readout, idx, in.height, in.width, din);
    report.push_back(compare("maxpool", in.data, din.data, f));
  }

  {  // unpooling with fixed indices
    FeatureMap<double> source(2, 4, 4), pooled;
    fill_uniform(source.data, rng, -1, 1);
    std::vector<std::int32_t> idx;
    layers::maxpool_forward(source, pooled, idx);
    FeatureMap<double> in(2, 2, 2);
    fill_uniform(in.data, rng, -1, 1);
    FeatureMap<double> readout(2, 4, 4);
    fill_uniform(readout.data, rng, -1, 1);
    auto f = [&] {
      FeatureMap<double> o;
      layers::maxunpool_forward(in, idx, 4, 4, o);
      return dot(o.data, readout.data);
    };
    FeatureMap<double> din;
    layers::maxunpool_backward(readout, idx, din);
    report.push_back(compare("unpool", in.data, din.data, f));
  }

  {  // softmax + weighted cross-entropy
    FeatureMap<double> logits(3, 4, 4);
    fill_uniform(logits.data, rng, -2, 2);
    LabelMap target(4, 4);
    for (auto& t : target.labels) t = static_cast<int>(rng() % 3);
    std::vector<double> weights(3);
    fill_uniform(weights, rng, 0.5, 2.0);
    FeatureMap<double> probs, dlogits;
    layers::softmax_cross_entropy<double>(logits, target, weights, probs, &dlogits);
    auto f = [&] {
      FeatureMap<double> p;
      return layers::softmax_cross_entropy<double>(logits, target, weights, p, nullptr);
    };
    report.push_back(compare("softmax_cross_entropy", logits.data, dlogits.data, f));
  }

  {  // full 2-stage network on 8x8
    BackboneConfig cfg;
    cfg.height = 8;
    cfg.width = 8;
    cfg.in_channels = 1;
    cfg.num_classes = 3;
    cfg.stage_channels = {3, 4};
    cfg.seed = seed;
    auto params = init_params<double>(cfg);
    for (std::size_t i = 0; i < params.values.size(); ++i)
      if (params.values[i] == 0.0) params.values[i] = 0.05 * std::uniform_real_distribution<double>(-1, 1)(rng);
    FeatureMap<double> input(1, 8, 8);
    fill_uniform(input.data, rng, 0, 1);
    LabelMap target(8, 8);
    for (auto& t : target.labels) t = static_cast<int>(rng() % 3);
    const std::vector<double> weights{0.5, 1.5, 2.0};
    std::vector<double> grads;
    backward<double>(params, input, target, weights, grads);
    auto f = [&] {
      Workspace<double> ws;
      run_forward(params, input, ws);
      FeatureMap<double> p;
      return layers::softmax_cross_entropy<double>(ws.activations[params.classifier()], target, weights, p, nullptr);
    };
    auto pattern = [&] {
      Workspace<double> ws;
      run_forward(params, input, ws);
      std::vector<std::int32_t> bits;
      for (std::size_t c = 0; c < params.classifier(); ++c)
        for (double v : ws.activations[c].data) bits.push_back(v > 0.0);
      for (const auto& a : ws.argmax) bits.insert(bits.end(), a.begin(), a.end());
      return bits;
    };
    report.push_back(compare("network", params.values, grads, f, pattern));
  }
  return report;
}

template BackboneParams<float> init_params<float>(const BackboneConfig&);
template BackboneParams<double> init_params<double>(const BackboneConfig&);
template BackboneParams<float> convert_params<float>(const BackboneParams<double>&);
template BackboneParams<double> convert_params<double>(const BackboneParams<double>&);
template FeatureMap<float> forward<float>(const BackboneParams<float>&, const FeatureMap<float>&);
template FeatureMap<double> forward<double>(const BackboneParams<double>&, const FeatureMap<double>&);
template float backward<float>(const BackboneParams<float>&, const FeatureMap<float>&, const LabelMap&,
                               std::span<const double>, std::vector<float>&);
template double backward<double>(const BackboneParams<double>&, const FeatureMap<double>&, const LabelMap&,
                                 std::span<const double>, std::vector<double>&);
template void adadelta_step<float>(std::span<float>, std::span<const float>, OptimizerState<float>&);
template void adadelta_step<double>(std::span<double>, std::span<const double>, OptimizerState<double>&);

}  // namespace tst
