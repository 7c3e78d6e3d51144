#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tst/backbone.hpp"
#include "tst/detection.hpp"
#include "tst/tensor_core.hpp"

namespace tst {

/// What the backbone sees: the coherent representation, plain luminance
/// (the ablation baseline) or both stacked as two channels.
enum class InputMode { kCoherent, kLuminance, kCoherentLuminance };

std::string input_mode_name(InputMode mode);
InputMode parse_input_mode(const std::string& name);
int input_channels(InputMode mode);

struct PipelineConfig {
  int m = 4;
  int k = 2;
  GaussianSpec gaussian;
  int input_height = 128;
  int input_width = 128;
  int open_radius = 1;
  int close_radius = 3;
  int min_area = 20;
  std::vector<std::string> class_names;  ///< threat classes, class_id = index + 1
  InputMode input_mode = InputMode::kCoherent;

  int num_classes() const { return static_cast<int>(class_names.size()) + 1; }

  /// Throws InvalidConfig.
  void validate() const;

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
};

/// Backbone geometry matching the pipeline's input size, channels and classes.
BackboneConfig backbone_config_for(const PipelineConfig& config, std::vector<int> stage_channels, std::uint64_t seed);

/// Luminance conversion plus bilinear resize to the input size.
ImageBuffer prepare_scan(const ImageBuffer& scan, const PipelineConfig& config);

CoherentRepresentation preprocess(const ImageBuffer& scan, const PipelineConfig& config);

/// Backbone input planes for `config.input_mode`.
FeatureMap<float> network_input(const ImageBuffer& scan, const PipelineConfig& config);

struct Segmentation {
  LabelMap labels;          ///< input resolution
  FeatureMap<float> probs;  ///< [num_classes][H][W]
};

/// Per-pixel argmax; ties go to the lower class id, so background wins them.
Segmentation segment(const ImageBuffer& scan, const BackboneParams<float>& params, const PipelineConfig& config);
Segmentation labels_from_probs(FeatureMap<float> probs);

/// Opening, component filtering, contour filling and box fitting per class,
/// with geometry rescaled to original_width x original_height.
std::vector<Detection> postprocess(const LabelMap& labels, const FeatureMap<float>& probs,
                                   const PipelineConfig& config, int original_width, int original_height);

/// preprocess + segment + postprocess, sorted by descending score.
std::vector<Detection> detect(const ImageBuffer& scan, const BackboneParams<float>& params,
                              const PipelineConfig& config);

/// Training target at input resolution: the inner boundary of every item mask,
/// grown inwards into a 3-pixel band that stays inside the item, labeled with its class.
LabelMap contour_target(std::span<const BinaryMask> masks, std::span<const int> class_ids,
                        const PipelineConfig& config);

TrainRecord make_train_record(const ImageBuffer& scan, std::span<const BinaryMask> masks,
                              std::span<const int> class_ids, const PipelineConfig& config);

}  // namespace tst
