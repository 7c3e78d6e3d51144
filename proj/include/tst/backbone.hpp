#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tst/image.hpp"
#include "tst/layers.hpp"

namespace tst {

/// SegNet-style encoder-decoder geometry.
///
/// Encoder stage s: conv(3x3) + ReLU + 2x2 max-pool (indices kept).
/// Decoder stage s, deepest first: index unpool + conv(3x3) + ReLU, mapping
/// stage_channels[s] back to stage_channels[s-1] (stage 0 keeps its width).
/// A final 3x3 classifier conv produces num_classes logits per pixel.
struct BackboneConfig {
  int height = 128;
  int width = 128;
  int in_channels = 1;
  int num_classes = 4;  ///< background + threat classes
  std::vector<int> stage_channels{16, 32, 64};
  int kernel_size = 3;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig when dimensions are inconsistent.
  void validate() const;

  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Where each convolution's weights and bias live in the flat parameter vector.
struct ParamLayout {
  struct Entry {
    std::string name;
    ConvShape shape;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
  };
  std::vector<Entry> convs;  ///< encoder 0..S-1, decoder S-1..0, classifier
  std::size_t total = 0;

  static ParamLayout for_config(const BackboneConfig& config);
};

template <typename T>
struct BackboneParams {
  BackboneConfig config;
  ParamLayout layout;
  std::vector<T> values;

  std::span<const T> weight(std::size_t conv) const {
    const auto& e = layout.convs[conv];
    return {values.data() + e.weight_offset, e.shape.weight_count()};
  }
  std::span<const T> bias(std::size_t conv) const {
    const auto& e = layout.convs[conv];
    return {values.data() + e.bias_offset, static_cast<std::size_t>(e.shape.out_channels)};
  }
  /// Index of the classifier convolution.
  std::size_t classifier() const { return layout.convs.size() - 1; }
};

/// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out)), fans counting the
/// kernel window), zero biases. Identical seeds give bitwise-identical values.
template <typename T>
BackboneParams<T> init_params(const BackboneConfig& config);

template <typename T>
BackboneParams<T> convert_params(const BackboneParams<double>& params);

/// Per-pixel class probabilities, [num_classes][H][W].
template <typename T>
FeatureMap<T> forward(const BackboneParams<T>& params, const FeatureMap<T>& input);

/// Pixel-averaged weighted cross-entropy of probabilities against labels.
double loss(const FeatureMap<double>& probs, const LabelMap& target, std::span<const double> class_weights);

/// Reverse-mode pass. Overwrites `grads` (resized to match params) and returns the loss.
template <typename T>
T backward(const BackboneParams<T>& params, const FeatureMap<T>& input, const LabelMap& target,
           std::span<const double> class_weights, std::vector<T>& grads);

/// Median-frequency balancing: freq(c) = pixels of c / pixels of images that
/// contain c; weight(c) = median(freq) / freq(c). Classes never seen get 1.
std::vector<double> median_frequency_weights(std::span<const LabelMap> targets, int num_classes);

template <typename T>
struct OptimizerState {
  double rho = 0.95;
  double eps = 1e-6;
  double lr = 1.0;
  std::vector<T> mean_sq_grad;    ///< E[g^2]
  std::vector<T> mean_sq_update;  ///< E[dx^2]
};

/// One ADADELTA update. Accumulators are sized on first use.
template <typename T>
void adadelta_step(std::span<T> params, std::span<const T> grads, OptimizerState<T>& state);

struct TrainRecord {
  FeatureMap<float> input;
  LabelMap target;
};

struct TrainOptions {
  int epochs = 50;
  int batch_size = 8;
  double rho = 0.95;
  double lr = 1.0;
  double eps = 1e-6;
  /// Empty means median-frequency weights computed from the records.
  std::vector<double> class_weights;
  /// Worker cap for per-sample gradients (0 = worker_count()).
  int workers = 0;
  /// Called after every epoch with (epoch index, mean batch loss).
  std::function<void(int, double)> on_epoch;
};

struct TrainResult {
  BackboneParams<float> params;
  std::vector<double> loss_history;  ///< one entry per epoch
  std::vector<double> class_weights;
};

/// Mini-batch ADADELTA training. Shuffling is seeded from config.seed and
/// per-sample gradients are reduced in batch order, so results are
/// reproducible regardless of the worker count. Throws NumericError on a
/// non-finite loss.
TrainResult train(std::span<const TrainRecord> dataset, const BackboneConfig& config, const TrainOptions& options);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Layout: "TSTB", u32 version, u32 json length, json bytes (config echo plus
/// caller metadata under "metadata"), u32 tensor count, then per tensor:
/// u32 name length, name, u32 rank, u32 dims..., float32 values. All integers
/// and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const BackboneParams<float>& params,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct Checkpoint {
  BackboneParams<float> params;
  nlohmann::json metadata;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradcheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +-step changes a ReLU sign or a pooling winner; the central
  /// difference straddles a kink there and says nothing about the gradient.
  std::size_t skipped = 0;
};

/// Central finite differences (step 1e-4, 64-bit) against the analytic
/// gradients of each layer type and of a 2-stage network on an 8x8 input.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
std::vector<GradcheckEntry> run_gradcheck(std::uint64_t seed = 1);

}  // namespace tst
