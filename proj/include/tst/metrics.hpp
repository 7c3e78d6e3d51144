#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tst/detection.hpp"

namespace tst {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Pixel counts of `pred` against `truth`. Throws InvalidInput on size mismatch.
ConfusionCounts pixel_counts(const BinaryMask& pred, const BinaryMask& truth);

double iou_from_counts(const ConfusionCounts& c);   // both-empty gives 1
double dice_from_counts(const ConfusionCounts& c);  // both-empty gives 1

double mask_iou(const BinaryMask& a, const BinaryMask& b);
double mask_dice(const BinaryMask& a, const BinaryMask& b);

/// Area IoU of two axis-aligned boxes; zero-area union gives 0.
double box_iou(const Box& a, const Box& b);

struct MatchResult {
  std::vector<bool> is_tp;  ///< one flag per detection, input order
  std::vector<int> matched_gt;  ///< index into gts or -1
  std::size_t unmatched_gt = 0;
};

/// Greedy matching for one image. Detections must be sorted by descending
/// score (InvalidInput otherwise). Each detection takes the highest-IoU
/// unmatched ground truth of its class with box IoU >= threshold.
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthItem>& gts,
                             double iou_threshold = 0.5);

/// All-points AP from TP/FP flags ordered by descending score. Returns
/// nullopt when total_gt is 0.
std::optional<double> average_precision(const std::vector<bool>& flags, std::size_t total_gt);

struct PrPoint {
  double score = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

/// One image's detections and ground truth.
struct EvalImage {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<Detection> detections;
  std::vector<GroundTruthItem> ground_truth;
};

struct ClassReport {
  std::string name;
  std::size_t gt_count = 0;
  std::size_t det_count = 0;
  ConfusionCounts detections;  ///< detection-level
  ConfusionCounts pixels;      ///< summed over evaluated images
  std::optional<double> ap;    ///< absent when the class has no ground truth
  std::optional<double> dice;  ///< mean over images where the class appears
  std::optional<double> iou;
  std::vector<PrPoint> pr_curve;
};

struct EvalReport {
  double iou_threshold = 0.5;
  std::size_t image_count = 0;
  std::vector<ClassReport> classes;  ///< class_id - 1 indexes this
  double mean_ap = 0.0;
  double mean_dice = 0.0;
  double mean_iou = 0.0;
  ConfusionCounts totals;

  nlohmann::json to_json() const;
  /// CSV with header class,score,recall,precision.
  std::string pr_csv() const;
};

/// Box-level AP at `iou_threshold` per class, mAP over classes with ground
/// truth. Mask DC and IoU compare the union of predicted masks with the union
/// of ground-truth rasterizations of each class, per image; images where the
/// class is absent from both are skipped. Throws InvalidInput when there is no
/// ground truth at all.
EvalReport evaluate(const std::vector<EvalImage>& images, const std::vector<std::string>& class_names,
                    double iou_threshold = 0.5);

}  // namespace tst
