#include "tst/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

#include "tst/error.hpp"

namespace tst {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

ImageBuffer convolve2d(const ImageBuffer& img, const Kernel2D& kernel) {
  if (img.channels() != 1) throw InvalidInput("convolve2d expects a single-channel image");
  if (kernel.rows % 2 == 0 || kernel.cols % 2 == 0 || kernel.rows < 1 || kernel.cols < 1)
    throw InvalidParameter("kernel dimensions must be odd");
  if (kernel.weights.size() != static_cast<std::size_t>(kernel.rows) * kernel.cols)
    throw InvalidParameter("kernel weight count does not match its dimensions");

  const int w = img.width();
  const int h = img.height();
  const int ry = kernel.rows / 2;
  const int rx = kernel.cols / 2;
  ImageBuffer out(w, h, 1);
  if (img.empty()) return out;

  // Precompute reflected column indices once per kernel column.
  std::vector<int> xs(static_cast<std::size_t>(w) * kernel.cols);
  for (int x = 0; x < w; ++x)
    for (int kc = 0; kc < kernel.cols; ++kc)
      xs[static_cast<std::size_t>(x) * kernel.cols + kc] = reflect_index(x + kc - rx, w);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int kr = 0; kr < kernel.rows; ++kr) {
        const int sy = reflect_index(y + kr - ry, h);
        for (int kc = 0; kc < kernel.cols; ++kc) {
          acc += kernel.at(kr, kc) * img.at(xs[static_cast<std::size_t>(x) * kernel.cols + kc], sy);
        }
      }
      out.at(x, y) = acc;
    }
  }
  return out;
}

ImageBuffer to_luminance(const ImageBuffer& img) {
  if (img.channels() == 1) return img;
  ImageBuffer out(img.width(), img.height(), 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(x, y) = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
  return out;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, int width, int height) {
  if (img.empty() || width <= 0 || height <= 0) throw InvalidInput("cannot resize an empty image");
  if (img.width() == width && img.height() == height) return img;
  ImageBuffer out(width, height, img.channels());
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double tx = fx - x0;
      for (int c = 0; c < img.channels(); ++c) {
        const double top = (1 - tx) * img.at(x0, y0, c) + tx * img.at(x1, y0, c);
        const double bot = (1 - tx) * img.at(x0, y1, c) + tx * img.at(x1, y1, c);
        out.at(x, y, c) = (1 - ty) * top + ty * bot;
      }
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidInput("cannot resize to an empty mask");
  if (mask.width() == width && mask.height() == height) return mask;
  BinaryMask out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(mask.height() - 1,
                            static_cast<int>(std::floor((y + 0.5) * mask.height() / height)));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(mask.width() - 1,
                              static_cast<int>(std::floor((x + 0.5) * mask.width() / width)));
      out.set(x, y, mask.get(sx, sy));
    }
  }
  return out;
}

std::vector<std::array<int, 2>> structuring_element(int radius, StructuringShape shape) {
  if (radius < 1) throw InvalidParameter("structuring element radius must be >= 1");
  std::vector<std::array<int, 2>> offsets;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (shape == StructuringShape::kSquare || dx * dx + dy * dy <= radius * radius)
        offsets.push_back({dx, dy});
  return offsets;
}

namespace {

// Shared sweep: `want` is the value that decides the output as soon as it is
// found in the neighbourhood.
BinaryMask morph_sweep(const BinaryMask& mask, int radius, StructuringShape shape, bool want) {
  const auto se = structuring_element(radius, shape);
  BinaryMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      bool found = false;
      for (const auto& [dx, dy] : se) {
        const int sx = x + dx;
        const int sy = y + dy;
        if (sx < 0 || sy < 0 || sx >= mask.width() || sy >= mask.height()) continue;
        if (mask.get(sx, sy) == want) {
          found = true;
          break;
        }
      }
      out.set(x, y, want ? found : !found);
    }
  }
  return out;
}

}  // namespace

BinaryMask erode(const BinaryMask& mask, int radius, StructuringShape shape) {
  return morph_sweep(mask, radius, shape, false);
}

BinaryMask dilate(const BinaryMask& mask, int radius, StructuringShape shape) {
  return morph_sweep(mask, radius, shape, true);
}

BinaryMask open(const BinaryMask& mask, int radius, StructuringShape shape) {
  return dilate(erode(mask, radius, shape), radius, shape);
}

BinaryMask close(const BinaryMask& mask, int radius, StructuringShape shape) {
  return erode(dilate(mask, radius, shape), radius, shape);
}

BinaryMask inner_boundary(const BinaryMask& mask) {
  BinaryMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.get(x, y) && (!mask.get_or_false(x - 1, y) || !mask.get_or_false(x + 1, y) ||
                             !mask.get_or_false(x, y - 1) || !mask.get_or_false(x, y + 1)))
        out.set(x, y);
  return out;
}

std::vector<Component> connected_components(const BinaryMask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw InvalidParameter("connectivity must be 4 or 8");
  static constexpr int kN4[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  static constexpr int kN8[8][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1},
                                    {1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
  const int w = mask.width();
  const int h = mask.height();
  std::vector<int> label(static_cast<std::size_t>(w) * h, 0);
  std::vector<Component> comps;
  std::deque<PixelCoord> queue;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.get(x, y) || label[static_cast<std::size_t>(y) * w + x] != 0) continue;
      Component comp;
      comp.label = static_cast<int>(comps.size()) + 1;
      label[static_cast<std::size_t>(y) * w + x] = comp.label;
      queue.push_back({x, y});
      while (!queue.empty()) {
        const PixelCoord p = queue.front();
        queue.pop_front();
        comp.pixels.push_back(p);
        for (int n = 0; n < connectivity; ++n) {
          const int nx = p.x + (connectivity == 4 ? kN4[n][0] : kN8[n][0]);
          const int ny = p.y + (connectivity == 4 ? kN4[n][1] : kN8[n][1]);
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          auto& l = label[static_cast<std::size_t>(ny) * w + nx];
          if (l != 0 || !mask.get(nx, ny)) continue;
          l = comp.label;
          queue.push_back({nx, ny});
        }
      }
      std::sort(comp.pixels.begin(), comp.pixels.end(), [](const PixelCoord& a, const PixelCoord& b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
      });
      comps.push_back(std::move(comp));
    }
  }
  return comps;
}

std::array<Point2, 4> RotatedRect::corners() const {
  const double ux = std::cos(angle), uy = std::sin(angle);
  const double vx = -uy, vy = ux;
  const double hw = w / 2, hh = h / 2;
  return {Point2{center.x - hw * ux - hh * vx, center.y - hw * uy - hh * vy},
          Point2{center.x + hw * ux - hh * vx, center.y + hw * uy - hh * vy},
          Point2{center.x + hw * ux + hh * vx, center.y + hw * uy + hh * vy},
          Point2{center.x - hw * ux + hh * vx, center.y - hw * uy + hh * vy}};
}

Box RotatedRect::envelope() const {
  const auto c = corners();
  return tst::envelope(c);
}

bool RotatedRect::contains(Point2 p, double tol) const {
  const double ux = std::cos(angle), uy = std::sin(angle);
  const double dx = p.x - center.x, dy = p.y - center.y;
  const double along = dx * ux + dy * uy;
  const double across = -dx * uy + dy * ux;
  return std::abs(along) <= w / 2 + tol && std::abs(across) <= h / 2 + tol;
}

namespace {

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<Point2> convex_hull(std::span<const Point2> points) {
  if (points.empty()) throw InvalidInput("convex hull of an empty point set");
  std::vector<Point2> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(),
            [](const Point2& a, const Point2& b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;

  // Andrew's monotone chain; popping on cross <= 0 drops collinear vertices.
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

RotatedRect min_bounding_rectangle(std::span<const Point2> points) {
  const auto hull = convex_hull(points);
  if (hull.size() == 1) return RotatedRect{hull[0], 0.0, 0.0, 0.0};

  RotatedRect best;
  double best_area = std::numeric_limits<double>::infinity();
  const std::size_t n = hull.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& a = hull[i];
    const Point2& b = hull[(i + 1) % n];
    double angle = std::atan2(b.y - a.y, b.x - a.x);
    if (angle < 0) angle += std::numbers::pi;
    if (angle >= std::numbers::pi) angle -= std::numbers::pi;
    const double ux = std::cos(angle), uy = std::sin(angle);
    double min_u = std::numeric_limits<double>::infinity(), max_u = -min_u;
    double min_v = min_u, max_v = -min_u;
    for (const auto& p : hull) {
      const double pu = p.x * ux + p.y * uy;
      const double pv = -p.x * uy + p.y * ux;
      min_u = std::min(min_u, pu);
      max_u = std::max(max_u, pu);
      min_v = std::min(min_v, pv);
      max_v = std::max(max_v, pv);
    }
    const double area = (max_u - min_u) * (max_v - min_v);
    const double slack = std::isfinite(best_area) ? 1e-12 * std::max(1.0, best_area) : 0.0;
    const bool better = area < best_area - slack || (area <= best_area + slack && angle < best.angle);
    if (better) {
      best_area = std::min(best_area, area);
      const double cu = (min_u + max_u) / 2, cv = (min_v + max_v) / 2;
      best.center = {cu * ux - cv * uy, cu * uy + cv * ux};
      best.w = max_u - min_u;
      best.h = max_v - min_v;
      best.angle = angle;
    }
  }
  return best;
}

std::vector<Point2> pixel_footprint(std::span<const PixelCoord> pixels) {
  std::vector<Point2> pts;
  pts.reserve(pixels.size() * 4);
  for (const auto& p : pixels) {
    pts.push_back({static_cast<double>(p.x), static_cast<double>(p.y)});
    pts.push_back({p.x + 1.0, static_cast<double>(p.y)});
    pts.push_back({static_cast<double>(p.x), p.y + 1.0});
    pts.push_back({p.x + 1.0, p.y + 1.0});
  }
  return pts;
}

BinaryMask fill_closed_contour(const BinaryMask& contour, int close_radius) {
  // Work on a background-padded copy: erosion ignores pixels outside the frame, so
  // closing an unpadded mask would drag objects near the border out to the edge.
  const int pad = std::max(close_radius, 0) + 1;
  BinaryMask padded(contour.width() + 2 * pad, contour.height() + 2 * pad);
  for (int y = 0; y < contour.height(); ++y)
    for (int x = 0; x < contour.width(); ++x)
      if (contour.get(x, y)) padded.set(x + pad, y + pad);
  const BinaryMask closed = close(padded, close_radius);
  const int w = closed.width();
  const int h = closed.height();
  BinaryMask exterior(w, h);
  std::deque<PixelCoord> queue;
  auto seed = [&](int x, int y) {
    if (!closed.get(x, y) && !exterior.get(x, y)) {
      exterior.set(x, y);
      queue.push_back({x, y});
    }
  };
  for (int x = 0; x < w; ++x) {
    seed(x, 0);
    seed(x, h - 1);
  }
  for (int y = 0; y < h; ++y) {
    seed(0, y);
    seed(w - 1, y);
  }
  while (!queue.empty()) {
    const PixelCoord p = queue.front();
    queue.pop_front();
    if (p.x > 0) seed(p.x - 1, p.y);
    if (p.x < w - 1) seed(p.x + 1, p.y);
    if (p.y > 0) seed(p.x, p.y - 1);
    if (p.y < h - 1) seed(p.x, p.y + 1);
  }
  BinaryMask filled(contour.width(), contour.height());
  for (int y = 0; y < contour.height(); ++y)
    for (int x = 0; x < contour.width(); ++x)
      if (!exterior.get(x + pad, y + pad) || contour.get(x, y)) filled.set(x, y);
  return filled;
}

BinaryMask rasterize_polygon(std::span<const Point2> polygon, int width, int height) {
  BinaryMask mask(width, height);
  const std::size_t n = polygon.size();
  if (n < 3) return mask;
  std::vector<double> xs;
  for (int y = 0; y < height; ++y) {
    const double yc = y + 0.5;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point2& a = polygon[i];
      const Point2& b = polygon[(i + 1) % n];
      if ((a.y <= yc) != (b.y <= yc)) xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      // Pixel centres xc with xs[i] <= xc < xs[i+1].
      const int x0 = std::max(0, static_cast<int>(std::ceil(xs[i] - 0.5)));
      const int x1 = std::min(width - 1, static_cast<int>(std::ceil(xs[i + 1] - 0.5)) - 1);
      for (int x = x0; x <= x1; ++x) mask.set(x, y);
    }
  }
  return mask;
}

Box envelope(std::span<const Point2> points) {
  if (points.empty()) return {};
  double x0 = points[0].x, x1 = points[0].x, y0 = points[0].y, y1 = points[0].y;
  for (const auto& p : points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

namespace {

bool segments_intersect(Point2 p1, Point2 p2, Point2 q1, Point2 q2) {
  auto orient = [](Point2 a, Point2 b, Point2 c) {
    const double v = cross(a, b, c);
    return (v > 0) - (v < 0);
  };
  auto on_segment = [](Point2 a, Point2 b, Point2 p) {
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
           p.y <= std::max(a.y, b.y);
  };
  const int o1 = orient(p1, p2, q1), o2 = orient(p1, p2, q2);
  const int o3 = orient(q1, q2, p1), o4 = orient(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

}  // namespace

bool is_simple_polygon(std::span<const Point2> polygon) {
  const std::size_t n = polygon.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;  // adjacent edges share a vertex
      if (segments_intersect(polygon[i], polygon[(i + 1) % n], polygon[j], polygon[(j + 1) % n]))
        return false;
    }
  }
  return true;
}

}  // namespace tst
