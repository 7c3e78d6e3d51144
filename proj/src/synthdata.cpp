#include "tst/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tst/dataset.hpp"
#include "tst/error.hpp"
#include "tst/image_io.hpp"
#include "tst/imaging.hpp"
#include "tst/parallel.hpp"

namespace tst {
namespace {

constexpr int kPlacementAttempts = 100;
constexpr int kEllipseVertices = 32;

std::vector<Point2> template_vertices(const ShapeSpec& spec) {
  switch (spec.shape) {
    case ShapeTemplate::kKnife:
      return {{-1.0, -0.22}, {1.0, 0.0}, {-1.0, 0.22}};
    case ShapeTemplate::kGun:
      return {{-1.0, -0.45}, {1.0, -0.45}, {1.0, -0.05}, {-0.35, -0.05}, {-0.35, 0.85}, {-1.0, 0.85}};
    case ShapeTemplate::kShuriken: {
      std::vector<Point2> v;
      for (int i = 0; i < 8; ++i) {
        const double a = i * std::numbers::pi / 4;
        const double r = i % 2 == 0 ? 1.0 : 0.38;
        v.push_back({r * std::cos(a), r * std::sin(a)});
      }
      return v;
    }
    case ShapeTemplate::kRazor:
      return {{-1.0, -0.3}, {1.0, -0.3}, {1.0, 0.3}, {-1.0, 0.3}};
    case ShapeTemplate::kEllipse: {
      std::vector<Point2> v;
      for (int i = 0; i < kEllipseVertices; ++i) {
        const double a = 2 * std::numbers::pi * i / kEllipseVertices;
        v.push_back({0.5 * spec.extent.x * std::cos(a), 0.5 * spec.extent.y * std::sin(a)});
      }
      return v;
    }
    case ShapeTemplate::kRect: {
      const double hx = 0.5 * spec.extent.x, hy = 0.5 * spec.extent.y;
      return {{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}};
    }
  }
  return {};
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1)); }
  double normal() {
    const double u1 = 1.0 - unit();
    const double u2 = unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits().size(); ++i) n += a.bits()[i] & b.bits()[i];
  return n;
}

bool inside_canvas(const std::vector<Point2>& poly, int width, int height, double margin) {
  const Box b = envelope(poly);
  return b.x >= margin && b.y >= margin && b.x + b.w <= width - margin && b.y + b.h <= height - margin;
}

// Tracks, for every threat, the union of all other shapes placed so far.
struct OcclusionTracker {
  std::vector<BinaryMask> threat_masks;
  std::vector<BinaryMask> cover;
  double target = 0.0;

  double fraction(std::size_t i, const BinaryMask* extra) const {
    const auto& m = threat_masks[i];
    const std::size_t area = m.count();
    if (area == 0) return 0.0;
    std::size_t covered = 0;
    for (std::size_t p = 0; p < m.bits().size(); ++p)
      covered += m.bits()[p] & (cover[i].bits()[p] | (extra ? extra->bits()[p] : 0));
    return static_cast<double>(covered) / static_cast<double>(area);
  }

  double deviation(const BinaryMask* extra) const {
    double d = 0.0;
    for (std::size_t i = 0; i < threat_masks.size(); ++i) d += std::abs(fraction(i, extra) - target);
    return d;
  }

  void add_clutter(const BinaryMask& mask) {
    for (auto& c : cover) c |= mask;
  }
};

}  // namespace

ShapeTemplate template_for_class(const std::string& name) {
  if (name == "knife") return ShapeTemplate::kKnife;
  if (name == "gun") return ShapeTemplate::kGun;
  if (name == "shuriken") return ShapeTemplate::kShuriken;
  if (name == "razor") return ShapeTemplate::kRazor;
  throw InvalidParameter("no shape template for class '" + name + "'");
}

std::string template_name(ShapeTemplate t) {
  switch (t) {
    case ShapeTemplate::kKnife: return "knife";
    case ShapeTemplate::kGun: return "gun";
    case ShapeTemplate::kShuriken: return "shuriken";
    case ShapeTemplate::kRazor: return "razor";
    case ShapeTemplate::kEllipse: return "ellipse";
    case ShapeTemplate::kRect: return "rect";
  }
  return "unknown";
}

std::vector<Point2> shape_polygon(const ShapeSpec& spec) {
  const double c = std::cos(spec.pose.rotation);
  const double s = std::sin(spec.pose.rotation);
  std::vector<Point2> poly;
  for (const auto& v : template_vertices(spec)) {
    const double x = spec.pose.scale * v.x;
    const double y = spec.pose.scale * v.y;
    poly.push_back({spec.pose.center.x + c * x - s * y, spec.pose.center.y + s * x + c * y});
  }
  return poly;
}

RenderedShape render_shape(const ShapeSpec& spec, int width, int height) {
  if (!(spec.pose.scale > 0.0)) throw InvalidParameter("shape scale must be positive");
  if (!(spec.transmittance > 0.0 && spec.transmittance <= 1.0))
    throw InvalidParameter("transmittance must lie in (0, 1]");
  RenderedShape out;
  out.polygon = shape_polygon(spec);
  const Box b = envelope(out.polygon);
  if (b.x >= width || b.y >= height || b.x + b.w <= 0 || b.y + b.h <= 0)
    throw InvalidParameter("shape lies completely off the canvas");
  out.mask = rasterize_polygon(out.polygon, width, height);
  out.transmittance = ImageBuffer(width, height, 1, 1.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (out.mask.get(x, y)) out.transmittance.at(x, y) = spec.transmittance;
  return out;
}

nlohmann::json SceneTemplate::to_json() const {
  return {{"width", width},
          {"height", height},
          {"classes", classes},
          {"min_threats", min_threats},
          {"max_threats", max_threats},
          {"min_clutter", min_clutter},
          {"max_clutter", max_clutter},
          {"occlusion_level", occlusion_level},
          {"noise_sigma", noise_sigma},
          {"min_threat_scale", min_threat_scale},
          {"max_threat_scale", max_threat_scale}};
}

SceneTemplate SceneTemplate::from_json(const nlohmann::json& j) {
  SceneTemplate t;
  t.width = j.value("width", t.width);
  t.height = j.value("height", t.height);
  t.classes = j.value("classes", t.classes);
  t.min_threats = j.value("min_threats", t.min_threats);
  t.max_threats = j.value("max_threats", t.max_threats);
  t.min_clutter = j.value("min_clutter", t.min_clutter);
  t.max_clutter = j.value("max_clutter", t.max_clutter);
  t.occlusion_level = j.value("occlusion_level", t.occlusion_level);
  t.noise_sigma = j.value("noise_sigma", t.noise_sigma);
  t.min_threat_scale = j.value("min_threat_scale", t.min_threat_scale);
  t.max_threat_scale = j.value("max_threat_scale", t.max_threat_scale);
  return t;
}

SceneSpec sample_scene(const SceneTemplate& tmpl, std::uint64_t seed) {
  if (tmpl.width < 8 || tmpl.height < 8) throw InvalidParameter("canvas too small");
  if (tmpl.classes.empty()) throw InvalidParameter("scene template needs at least one class");
  if (tmpl.min_threats < 0 || tmpl.max_threats < tmpl.min_threats || tmpl.min_clutter < 0 ||
      tmpl.max_clutter < tmpl.min_clutter)
    throw InvalidParameter("invalid item count range");
  if (!(tmpl.occlusion_level >= 0.0 && tmpl.occlusion_level <= 1.0))
    throw InvalidParameter("occlusion level must lie in [0, 1]");
  if (!(tmpl.min_threat_scale > 0.0) || tmpl.max_threat_scale < tmpl.min_threat_scale)
    throw InvalidParameter("invalid threat scale range");

  Rng rng(seed);
  SceneSpec scene;
  scene.width = tmpl.width;
  scene.height = tmpl.height;
  scene.occlusion_level = tmpl.occlusion_level;
  scene.noise_sigma = tmpl.noise_sigma;
  scene.seed = derive_seed(seed, 0xa5a5a5a5ULL);

  OcclusionTracker tracker;
  tracker.target = tmpl.occlusion_level;
  BinaryMask keep_out(tmpl.width, tmpl.height);  // dilated threats placed so far

  // Threats: fully inside the canvas and separated by a few pixels.
  const int threats = rng.integer(tmpl.min_threats, tmpl.max_threats);
  for (int t = 0; t < threats; ++t) {
    const int cls = rng.integer(1, static_cast<int>(tmpl.classes.size()));
    ShapeSpec spec;
    spec.class_id = cls;
    spec.shape = template_for_class(tmpl.classes[cls - 1]);
    spec.pose.scale = rng.uniform(tmpl.min_threat_scale, tmpl.max_threat_scale);
    spec.transmittance = rng.uniform(0.25, 0.55);
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      spec.pose.rotation = rng.uniform(0.0, 2 * std::numbers::pi);
      spec.pose.center = {rng.uniform(0.0, tmpl.width), rng.uniform(0.0, tmpl.height)};
      const auto poly = shape_polygon(spec);
      if (!inside_canvas(poly, tmpl.width, tmpl.height, 2.0)) continue;
      const BinaryMask mask = rasterize_polygon(poly, tmpl.width, tmpl.height);
      if (mask.count() == 0 || intersection_count(mask, keep_out) > 0) continue;
      keep_out |= dilate(mask, 4, StructuringShape::kSquare);
      for (auto& c : tracker.cover) c |= mask;
      BinaryMask cover(tmpl.width, tmpl.height);
      for (const auto& m : tracker.threat_masks) cover |= m;
      tracker.threat_masks.push_back(mask);
      tracker.cover.push_back(std::move(cover));
      scene.items.push_back(spec);
      placed = true;
    }
  }

  auto random_clutter = [&](double size_lo, double size_hi) {
    ShapeSpec spec;
    spec.class_id = 0;
    spec.shape = rng.unit() < 0.5 ? ShapeTemplate::kEllipse : ShapeTemplate::kRect;
    spec.extent = {rng.uniform(size_lo, size_hi), rng.uniform(size_lo, size_hi)};
    spec.transmittance = rng.uniform(0.55, 0.9);
    spec.pose.scale = 1.0;
    return spec;
  };

  auto place_best = [&](ShapeSpec spec, auto&& sample_center) {
    double best = std::numeric_limits<double>::infinity();
    ShapeSpec best_spec = spec;
    BinaryMask best_mask;
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      spec.pose.rotation = rng.uniform(0.0, std::numbers::pi);
      spec.pose.center = sample_center();
      const auto poly = shape_polygon(spec);
      const Box b = envelope(poly);
      if (b.x >= tmpl.width || b.y >= tmpl.height || b.x + b.w <= 0 || b.y + b.h <= 0) continue;
      BinaryMask mask = rasterize_polygon(poly, tmpl.width, tmpl.height);
      const double dev = tracker.deviation(&mask);
      if (dev < best) {
        best = dev;
        best_spec = spec;
        best_mask = std::move(mask);
      }
    }
    if (best_mask.pixel_count() == 0) return;
    tracker.add_clutter(best_mask);
    scene.items.push_back(best_spec);
  };

  // One occluder per threat, drawn near it.
  if (tmpl.occlusion_level > 0.0) {
    const std::size_t placed_threats = scene.items.size();
    for (std::size_t t = 0; t < placed_threats; ++t) {
      const ShapeSpec threat = scene.items[t];
      const double s = threat.pose.scale;
      ShapeSpec occluder = random_clutter(0.8 * s, 1.8 * s);
      place_best(occluder, [&] {
        return Point2{threat.pose.center.x + rng.uniform(-s, s), threat.pose.center.y + rng.uniform(-s, s)};
      });
    }
  }

  const int clutter = rng.integer(tmpl.min_clutter, tmpl.max_clutter);
  for (int c = 0; c < clutter; ++c) {
    const double lo = 0.08 * std::min(tmpl.width, tmpl.height);
    place_best(random_clutter(lo, 4 * lo),
               [&] { return Point2{rng.uniform(0.0, tmpl.width), rng.uniform(0.0, tmpl.height)}; });
  }
  return scene;
}

Scan compose_scan(const SceneSpec& scene) {
  if (scene.width < 1 || scene.height < 1) throw InvalidParameter("scene canvas must be non-empty");
  if (!(scene.occlusion_level >= 0.0 && scene.occlusion_level <= 1.0))
    throw InvalidParameter("occlusion level must lie in [0, 1]");
  Scan scan;
  scan.image = ImageBuffer(scene.width, scene.height, 1, 1.0);
  for (const auto& item : scene.items) {
    const RenderedShape r = render_shape(item, scene.width, scene.height);
    for (std::size_t i = 0; i < scan.image.data().size(); ++i) scan.image.data()[i] *= r.transmittance.data()[i];
    if (item.class_id >= 1) {
      GroundTruthItem gt;
      gt.class_id = item.class_id;
      gt.polygon = r.polygon;
      gt.aabb = envelope(r.polygon);
      scan.items.push_back(std::move(gt));
      scan.masks.push_back(r.mask);
    }
  }
  if (scene.noise_sigma > 0.0) {
    Rng rng(scene.seed);
    for (auto& v : scan.image.data()) v = std::clamp(v + scene.noise_sigma * rng.normal(), 0.0, 1.0);
  }
  return scan;
}

std::vector<double> threat_overlap_fractions(const SceneSpec& scene) {
  std::vector<BinaryMask> masks;
  for (const auto& item : scene.items) masks.push_back(render_shape(item, scene.width, scene.height).mask);
  std::vector<double> fractions;
  for (std::size_t i = 0; i < scene.items.size(); ++i) {
    if (scene.items[i].class_id < 1) continue;
    BinaryMask others(scene.width, scene.height);
    for (std::size_t j = 0; j < masks.size(); ++j)
      if (j != i) others |= masks[j];
    const std::size_t area = masks[i].count();
    fractions.push_back(area == 0 ? 0.0 : static_cast<double>(intersection_count(masks[i], others)) / area);
  }
  return fractions;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

nlohmann::json Manifest::to_json() const {
  return {{"seed", seed}, {"n", n}, {"scene", scene.to_json()}, {"classes", classes}, {"train", train}, {"test", test}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  m.seed = j.value("seed", std::uint64_t{0});
  m.n = j.value("n", 0);
  if (j.contains("scene")) m.scene = SceneTemplate::from_json(j.at("scene"));
  m.classes = j.value("classes", std::vector<std::string>{});
  m.train = j.value("train", std::vector<std::string>{});
  m.test = j.value("test", std::vector<std::string>{});
  return m;
}

int test_split_size(int n) { return n / 5; }

Manifest generate_dataset(int n, const SceneTemplate& tmpl, std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (n < 1) throw InvalidParameter("dataset size must be >= 1");
  std::error_code ec;
  for (const char* sub : {"images", "annotations", "masks"}) {
    std::filesystem::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }

  Manifest manifest;
  manifest.seed = seed;
  manifest.n = n;
  manifest.scene = tmpl;
  manifest.classes = tmpl.classes;
  std::vector<std::string> ids(n);
  for (int i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scan_%05d", i);
    ids[i] = buf;
  }

  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const Scan scan = compose_scan(sample_scene(tmpl, derive_seed(seed, i)));
    ImageAnnotation ann;
    ann.image_id = ids[i];
    ann.width = scan.image.width();
    ann.height = scan.image.height();
    ann.items = scan.items;
    for (auto& item : ann.items) item.image_id = ids[i];
    char occlusion[32];
    std::snprintf(occlusion, sizeof occlusion, "occlusion:%.2f", tmpl.occlusion_level);
    ann.tags = {occlusion};
    write_image(out_dir / "images" / (ids[i] + ".png"), scan.image);
    write_json(out_dir / "annotations" / (ids[i] + ".json"), annotation_to_json(ann, tmpl.classes));
    for (std::size_t k = 0; k < scan.masks.size(); ++k)
      write_mask(out_dir / "masks" / (ids[i] + "_" + std::to_string(k) + ".png"), scan.masks[k]);
  });

  const int test = test_split_size(n);
  manifest.train.assign(ids.begin(), ids.end() - test);
  manifest.test.assign(ids.end() - test, ids.end());
  write_json(out_dir / "manifest.json", manifest.to_json());
  return manifest;
}

}  // namespace tst
