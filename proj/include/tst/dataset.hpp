#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tst/detection.hpp"

namespace tst {

// On-disk dataset layout shared by the generator and external datasets:
//
//   <root>/images/<image_id>.{png,pgm,pfm}
//   <root>/annotations/<image_id>.json
//   <root>/masks/<image_id>_<item_index>.png      ({0,255})
//   <root>/manifest.json                         (optional: classes + splits)
//
// Annotation JSON:
//   {"image_id": str, "items": [{"class": str, "bbox": [x,y,w,h],
//    "polygon": [[x,y],...]}]}
// with optional "width", "height" and "tags" keys.

struct ImageAnnotation {
  std::string image_id;
  int width = 0;  ///< 0 when unknown
  int height = 0;
  std::vector<GroundTruthItem> items;  ///< class_id indexes `classes` (1-based)
  std::vector<std::string> tags;
};

nlohmann::json annotation_to_json(const ImageAnnotation& ann, const std::vector<std::string>& classes);

/// Unknown class names are appended to `classes` when `extend` is set,
/// otherwise they raise InvalidInput.
ImageAnnotation annotation_from_json(const nlohmann::json& j, std::vector<std::string>& classes, bool extend);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<std::string> classes;  ///< threat class names, class_id = index + 1
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Uses manifest.json when present; otherwise every annotation file becomes a
/// training entry and classes are collected in order of first appearance.
DatasetIndex load_dataset_index(const std::filesystem::path& root);

/// Locates images/<id> with any supported extension.
std::filesystem::path find_image(const std::filesystem::path& root, const std::string& image_id);

/// Loads annotations/<id>.json; fills width/height from the image when absent.
ImageAnnotation load_annotation(const DatasetIndex& index, const std::string& image_id);

// ---------------------------------------------------------------------------
// Prediction files written by inference:
//   {"image_id", "width", "height", "detections": [{"class", "score",
//    "aabb": [x,y,w,h], "rbox": {"cx","cy","w","h","angle_deg"}, "mask": path}]}
// Mask paths are relative to the JSON file's directory.
// ---------------------------------------------------------------------------

struct ImagePrediction {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<Detection> detections;
};

/// Writes <dir>/<image_id>.json and one mask PNG per detection.
void write_prediction(const std::filesystem::path& dir, const ImagePrediction& pred,
                      const std::vector<std::string>& classes);

ImagePrediction read_prediction(const std::filesystem::path& json_path, std::vector<std::string>& classes);

}  // namespace tst
