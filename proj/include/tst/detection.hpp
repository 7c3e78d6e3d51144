#pragma once

#include <string>
#include <vector>

#include "tst/image.hpp"
#include "tst/imaging.hpp"

namespace tst {

/// One predicted item instance.
struct Detection {
  int class_id = 0;  ///< 1..C
  double score = 0.0;
  RotatedRect rbox;
  Box aabb;  ///< envelope of rbox
  BinaryMask mask;
};

/// One annotated item.
struct GroundTruthItem {
  std::string image_id;
  int class_id = 0;
  Box aabb;
  std::vector<Point2> polygon;  ///< empty when only a box is annotated
};

/// Rasterizes the item's polygon, or its box when no polygon is present.
BinaryMask ground_truth_mask(const GroundTruthItem& item, int width, int height);

}  // namespace tst
