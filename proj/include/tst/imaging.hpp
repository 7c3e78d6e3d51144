#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "tst/image.hpp"

namespace tst {

/// Dense 2D filter with odd extents, row-major weights.
struct Kernel2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> weights;

  double at(int r, int c) const { return weights[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int r, int c) { return weights[static_cast<std::size_t>(r) * cols + c]; }
};

/// Maps an out-of-range coordinate back into [0, n) by mirroring about the
/// edge pixel (… 2 1 | 0 1 2 … n-1 | n-2 …).
int reflect_index(int i, int n);

/// Correlates a single-channel image with `kernel` (the kernel is not flipped,
/// which only matters for asymmetric kernels). Borders are reflect-padded.
ImageBuffer convolve2d(const ImageBuffer& img, const Kernel2D& kernel);

/// Rec. 601 luma of an RGB image; single-channel input is returned unchanged.
ImageBuffer to_luminance(const ImageBuffer& img);

/// Bilinear resampling over pixel centres.
ImageBuffer resize_bilinear(const ImageBuffer& img, int width, int height);

/// Nearest-neighbour mask resampling over pixel centres.
BinaryMask resize_nearest(const BinaryMask& mask, int width, int height);

// ---------------------------------------------------------------------------
// Binary morphology
// ---------------------------------------------------------------------------

enum class StructuringShape { kDisk, kSquare };

/// Offsets (dx, dy) of a structuring element. Disk: dx^2 + dy^2 <= r^2.
std::vector<std::array<int, 2>> structuring_element(int radius, StructuringShape shape);

// Pixels outside the image never constrain a result: dilation treats them as
// unset and erosion ignores them. This keeps erosion and dilation exact duals
// under complement.
BinaryMask erode(const BinaryMask& mask, int radius, StructuringShape shape = StructuringShape::kDisk);
BinaryMask dilate(const BinaryMask& mask, int radius, StructuringShape shape = StructuringShape::kDisk);
BinaryMask open(const BinaryMask& mask, int radius, StructuringShape shape = StructuringShape::kDisk);
BinaryMask close(const BinaryMask& mask, int radius, StructuringShape shape = StructuringShape::kDisk);

/// Set pixels with at least one 4-neighbour that is unset or outside the image.
BinaryMask inner_boundary(const BinaryMask& mask);

// ---------------------------------------------------------------------------
// Connected components
// ---------------------------------------------------------------------------

struct PixelCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

struct Component {
  int label = 0;  ///< 1-based, in raster order of each component's first pixel
  std::vector<PixelCoord> pixels;
  std::size_t area() const { return pixels.size(); }
};

std::vector<Component> connected_components(const BinaryMask& mask, int connectivity = 8);

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Rectangle of extent `w` along direction `angle` and `h` along its normal.
struct RotatedRect {
  Point2 center;
  double w = 0.0;
  double h = 0.0;
  double angle = 0.0;  ///< radians in [0, pi)

  double area() const { return w * h; }
  /// Corners in order: -u-v, +u-v, +u+v, -u+v.
  std::array<Point2, 4> corners() const;
  /// Tight axis-aligned envelope of the four corners.
  Box envelope() const;
  bool contains(Point2 p, double tol = 1e-6) const;
};

/// Counter-clockwise hull (positive orientation in x/y) without collinear vertices.
/// Collinear input yields its two extreme points, identical input a single point.
std::vector<Point2> convex_hull(std::span<const Point2> points);

/// Minimum-area enclosing rectangle. Only orientations parallel to a hull edge
/// are candidates, which is sufficient for the optimum.
RotatedRect min_bounding_rectangle(std::span<const Point2> points);

/// Corner points of every pixel in the list, i.e. the pixel squares' footprint.
std::vector<Point2> pixel_footprint(std::span<const PixelCoord> pixels);

/// Closes the contour, flood-fills the exterior from the image border
/// (4-connected) and returns everything the flood did not reach, plus the
/// original contour pixels.
BinaryMask fill_closed_contour(const BinaryMask& contour, int close_radius = 3);

/// Even-odd scanline fill sampled at pixel centres (x + 0.5, y + 0.5).
BinaryMask rasterize_polygon(std::span<const Point2> polygon, int width, int height);

/// Tight axis-aligned envelope of a point set (empty set gives a zero box).
Box envelope(std::span<const Point2> points);

/// True when no two non-adjacent edges of the closed polygon intersect.
bool is_simple_polygon(std::span<const Point2> polygon);

}  // namespace tst
