#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tst/detection.hpp"
#include "tst/image.hpp"

namespace tst {

enum class ShapeTemplate { kKnife, kGun, kShuriken, kRazor, kEllipse, kRect };

/// Template used for a threat class name ("knife", "gun", "shuriken", "razor").
ShapeTemplate template_for_class(const std::string& class_name);
std::string template_name(ShapeTemplate t);

struct Pose {
  Point2 center;
  double rotation = 0.0;  ///< radians
  double scale = 1.0;     ///< pixels per template unit
};

struct ShapeSpec {
  int class_id = 0;  ///< 1..C for threats, 0 for clutter
  ShapeTemplate shape = ShapeTemplate::kEllipse;
  Pose pose;
  /// Full width/height at scale 1 for ellipse and rect clutter; ignored by threat templates.
  Point2 extent{2.0, 2.0};
  double transmittance = 0.5;  ///< in (0, 1]
};

/// Polygon of the shape in canvas coordinates.
std::vector<Point2> shape_polygon(const ShapeSpec& spec);

struct RenderedShape {
  ImageBuffer transmittance;  ///< 1 outside the shape, spec.transmittance inside
  BinaryMask mask;
  std::vector<Point2> polygon;
};

/// Throws InvalidParameter when the shape lies completely off the canvas or
/// has invalid scale or transmittance.
RenderedShape render_shape(const ShapeSpec& spec, int width, int height);

struct SceneSpec {
  int width = 128;
  int height = 128;
  std::vector<ShapeSpec> items;  ///< threats and clutter in paint order
  double occlusion_level = 0.0;  ///< targeted overlap fraction of each threat item
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
};

/// Knobs for random scene sampling.
struct SceneTemplate {
  int width = 128;
  int height = 128;
  std::vector<std::string> classes{"knife", "gun", "shuriken"};
  int min_threats = 1;
  int max_threats = 2;
  int min_clutter = 2;
  int max_clutter = 4;
  double occlusion_level = 0.4;
  double noise_sigma = 0.02;
  double min_threat_scale = 14.0;
  double max_threat_scale = 22.0;

  nlohmann::json to_json() const;
  static SceneTemplate from_json(const nlohmann::json& j);
};

/// Samples threat poses (kept inside the canvas and apart from each other),
/// then one occluder per threat and the free clutter. Each clutter item is the
/// best of 100 candidate placements under the total deviation of the threats'
/// overlap fractions from the occlusion target.
SceneSpec sample_scene(const SceneTemplate& tmpl, std::uint64_t seed);

struct Scan {
  ImageBuffer image;  ///< single channel, values in [0, 1]
  std::vector<GroundTruthItem> items;
  std::vector<BinaryMask> masks;  ///< one per item, same order
};

/// Multiplicative transmittance compositing plus clamped Gaussian noise.
/// Only threat items (class_id >= 1) produce ground truth.
Scan compose_scan(const SceneSpec& scene);

/// Fraction of each threat mask covered by any other shape, in item order.
std::vector<double> threat_overlap_fractions(const SceneSpec& scene);

/// Per-index seed derivation (splitmix64 of seed and index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

struct Manifest {
  std::uint64_t seed = 0;
  int n = 0;
  SceneTemplate scene;
  std::vector<std::string> classes;
  std::vector<std::string> train;
  std::vector<std::string> test;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

/// Test split size for n items: n / 5 (the last ones), the rest train.
int test_split_size(int n);

/// Writes images/, annotations/, masks/ and manifest.json under out_dir.
Manifest generate_dataset(int n, const SceneTemplate& tmpl, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace tst
