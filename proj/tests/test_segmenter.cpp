#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "tst/error.hpp"
#include "tst/imaging.hpp"
#include "tst/metrics.hpp"
#include "tst/segmenter.hpp"
#include "tst/synthdata.hpp"

using namespace tst;

namespace {

PipelineConfig small_pipeline() {
  PipelineConfig c;
  c.input_height = c.input_width = 32;
  c.class_names = {"knife", "gun"};
  return c;
}

BinaryMask disk(int size, double cx, double cy, double r) {
  BinaryMask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) m.set(x, y);
  return m;
}

ImageBuffer scene_with_disk(int size) {
  ImageBuffer img(size, size, 1, 1.0);
  const BinaryMask d = disk(size, size / 2.0, size / 2.0, size / 4.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (d.get(x, y)) img.at(x, y) = 0.4;
  return img;
}

}  // namespace

TEST(Pipeline, ConfigValidationAndJson) {
  PipelineConfig c = small_pipeline();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.num_classes(), 3);
  const PipelineConfig back = PipelineConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  c.k = 11;
  EXPECT_THROW(c.validate(), InvalidConfig);
  c = small_pipeline();
  c.min_area = 0;
  EXPECT_THROW(c.validate(), InvalidConfig);
  EXPECT_THROW(parse_input_mode("rgb"), InvalidConfig);
  EXPECT_EQ(input_channels(InputMode::kCoherentLuminance), 2);
}

TEST(Preprocess, GrayAtInputSize) {
  const PipelineConfig c = small_pipeline();
  const CoherentRepresentation r = preprocess(scene_with_disk(32), c);
  EXPECT_EQ(r.values.width(), 32);
  double hi = 0.0;
  for (double v : r.values.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    hi = std::max(hi, v);
  }
  EXPECT_EQ(hi, 1.0);
}

TEST(Preprocess, RgbEqualsLuminance) {
  const PipelineConfig c = small_pipeline();
  ImageBuffer rgb(40, 24, 3);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 40; ++x) {
      rgb.at(x, y, 0) = (x % 7) / 7.0;
      rgb.at(x, y, 1) = (y % 5) / 5.0;
      rgb.at(x, y, 2) = ((x + y) % 3) / 3.0;
    }
  EXPECT_EQ(preprocess(rgb, c).values, preprocess(to_luminance(rgb), c).values);
  EXPECT_EQ(preprocess(rgb, c).values.width(), 32);
}

TEST(Preprocess, ConstantAndEmpty) {
  const PipelineConfig c = small_pipeline();
  const CoherentRepresentation flat = preprocess(ImageBuffer(50, 50, 1, 0.7), c);
  for (double v : flat.values.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(preprocess(ImageBuffer(), c), InvalidInput);
}

TEST(NetworkInput, ChannelsPerMode) {
  PipelineConfig c = small_pipeline();
  const ImageBuffer scan = scene_with_disk(32);
  EXPECT_EQ(network_input(scan, c).channels, 1);
  c.input_mode = InputMode::kLuminance;
  const FeatureMap<float> lum = network_input(scan, c);
  EXPECT_EQ(lum.channels, 1);
  EXPECT_FLOAT_EQ(lum.at(0, 0, 0), 1.0f);
  c.input_mode = InputMode::kCoherentLuminance;
  EXPECT_EQ(network_input(scan, c).channels, 2);
}

TEST(Segment, ZeroClassifierLabelsNothing) {
  const PipelineConfig c = small_pipeline();
  auto params = init_params<float>(backbone_config_for(c, {4, 8}, 1));
  const auto& cls = params.layout.convs[params.classifier()];
  std::fill(params.values.begin() + cls.weight_offset,
            params.values.begin() + cls.bias_offset + cls.shape.out_channels, 0.0f);
  const Segmentation s = segment(scene_with_disk(64), params, c);
  EXPECT_EQ(s.labels.width, 32);
  EXPECT_EQ(s.labels.height, 32);
  for (int v : s.labels.labels) EXPECT_EQ(v, 0);
}

TEST(Segment, LabelsBelowClassCount) {
  const PipelineConfig c = small_pipeline();
  const auto params = init_params<float>(backbone_config_for(c, {4, 8}, 2));
  for (int v : segment(scene_with_disk(32), params, c).labels.labels) {
    EXPECT_GE(v, 0);
    EXPECT_LT(v, 3);
  }
  PipelineConfig other = c;
  other.class_names.push_back("razor");
  EXPECT_THROW(segment(scene_with_disk(32), params, other), InvalidInput);
}

TEST(Segment, TiesGoToBackground) {
  FeatureMap<float> probs(3, 1, 2, 0.0f);
  probs.at(0, 0, 0) = probs.at(2, 0, 0) = 0.5f;
  probs.at(1, 0, 1) = probs.at(2, 0, 1) = 0.5f;
  const Segmentation s = labels_from_probs(probs);
  EXPECT_EQ(s.labels.labels, (std::vector<int>{0, 1}));
}

TEST(Postprocess, EmptyLabelsGiveNothing) {
  const PipelineConfig c = small_pipeline();
  EXPECT_TRUE(postprocess(LabelMap(32, 32), FeatureMap<float>(3, 32, 32, 1.0f / 3), c, 32, 32).empty());
}

TEST(Postprocess, RingBecomesOneFilledDetection) {
  const PipelineConfig c = small_pipeline();
  const int n = 32;
  const BinaryMask solid = disk(n, 16, 16, 9);
  const BinaryMask band = dilate(inner_boundary(solid), 1, StructuringShape::kSquare);
  LabelMap labels(n, n);
  FeatureMap<float> probs(3, n, n, 0.0f);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const float p1 = band.get(x, y) ? (x < 16 ? 0.6f : 0.9f) : 0.1f;
      probs.at(1, y, x) = p1;
      probs.at(0, y, x) = 1.0f - p1;
      if (band.get(x, y)) labels.at(x, y) = 1;
    }
  const auto dets = postprocess(labels, probs, c, n, n);
  ASSERT_EQ(dets.size(), 1u);
  const Detection& d = dets[0];
  EXPECT_EQ(d.class_id, 1);

  // Hand-computed score: mean class-1 probability over the surviving ring.
  const BinaryMask kept = open(band, c.open_radius);
  double sum = 0.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (kept.get(x, y)) sum += probs.at(1, y, x);
  EXPECT_NEAR(d.score, sum / kept.count(), 1e-9);

  BinaryMask outer = solid;
  outer |= band;
  EXPECT_GT(mask_iou(d.mask, outer), 0.95);
  EXPECT_EQ(d.aabb, d.rbox.envelope());
}

TEST(Postprocess, SpeckleRemoved) {
  const PipelineConfig c = small_pipeline();
  LabelMap labels(32, 32);
  labels.at(5, 5) = 2;
  labels.at(20, 9) = 2;
  EXPECT_TRUE(postprocess(labels, FeatureMap<float>(3, 32, 32, 0.5f), c, 32, 32).empty());
}

TEST(Postprocess, RescalesToOriginalSize) {
  const PipelineConfig c = small_pipeline();
  LabelMap labels(32, 32);
  const BinaryMask band = dilate(inner_boundary(disk(32, 12, 20, 6)), 1, StructuringShape::kSquare);
  for (std::size_t i = 0; i < band.bits().size(); ++i) labels.labels[i] = band.bits()[i];
  const auto small = postprocess(labels, FeatureMap<float>(3, 32, 32, 0.5f), c, 32, 32);
  const auto big = postprocess(labels, FeatureMap<float>(3, 32, 32, 0.5f), c, 96, 64);
  ASSERT_EQ(small.size(), 1u);
  ASSERT_EQ(big.size(), 1u);
  EXPECT_EQ(big[0].mask.width(), 96);
  EXPECT_EQ(big[0].mask.height(), 64);
  EXPECT_NEAR(big[0].rbox.center.x, 3.0 * small[0].rbox.center.x, 1.0);
  EXPECT_NEAR(big[0].rbox.center.y, 2.0 * small[0].rbox.center.y, 1.0);
}

TEST(Postprocess, MaskBetweenComponentAndBox) {
  const PipelineConfig c = small_pipeline();
  LabelMap labels(32, 32);
  // Two classes, two separate rectangles' outlines (3 px thick).
  for (int y = 3; y < 15; ++y)
    for (int x = 3; x < 20; ++x)
      if (x < 6 || x > 16 || y < 6 || y > 11) labels.at(x, y) = 1;
  for (int y = 18; y < 30; ++y)
    for (int x = 10; x < 28; ++x)
      if (x < 13 || x > 24 || y < 21 || y > 26) labels.at(x, y) = 2;
  const auto dets = postprocess(labels, FeatureMap<float>(3, 32, 32, 0.5f), c, 32, 32);
  ASSERT_EQ(dets.size(), 2u);
  for (const auto& d : dets) {
    BinaryMask component(32, 32);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) component.bits()[i] = labels.labels[i] == d.class_id;
    component = open(component, c.open_radius);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        if (component.get(x, y)) EXPECT_TRUE(d.mask.get(x, y));
        if (d.mask.get(x, y)) {
          RotatedRect grown = d.rbox;
          grown.w += 2;
          grown.h += 2;
          EXPECT_TRUE(grown.contains({x + 0.5, y + 0.5})) << "cls " << d.class_id << " px " << x << "," << y << " rbox " << d.rbox.center.x << "," << d.rbox.center.y << " " << d.rbox.w << "x" << d.rbox.h << " a" << d.rbox.angle;
        }
      }
  }
  EXPECT_GE(dets[0].score, dets[1].score);
}

TEST(Detect, ConstantScanGivesNothingAndIsDeterministic) {
  const PipelineConfig c = small_pipeline();
  const auto params = init_params<float>(backbone_config_for(c, {4, 8}, 3));
  EXPECT_TRUE(detect(ImageBuffer(48, 48, 1, 0.8), params, c).empty());
  const ImageBuffer scan = compose_scan(sample_scene(SceneTemplate{}, 9)).image;
  const auto a = detect(scan, params, c), b = detect(scan, params, c);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(a[i].score, b[i].score);
    if (i > 0) EXPECT_GE(a[i - 1].score, a[i].score);
  }
}

TEST(ContourTarget, ThreePixelBandPerClass) {
  const PipelineConfig c = small_pipeline();
  std::vector<BinaryMask> masks{disk(32, 10, 10, 5), disk(32, 22, 22, 6)};
  std::vector<int> ids{1, 2};
  const LabelMap t = contour_target(masks, ids, c);
  EXPECT_EQ(t.at(10, 10), 0);  // interior stays background
  EXPECT_EQ(t.at(0, 31), 0);
  int c1 = 0, c2 = 0;
  for (int v : t.labels) c1 += v == 1, c2 += v == 2;
  EXPECT_GT(c1, 0);
  EXPECT_GT(c2, 0);
  // A square item shows the thickness cleanly: 3 pixels in from each side.
  BinaryMask sq(32, 32);
  for (int y = 4; y < 20; ++y)
    for (int x = 4; x < 20; ++x) sq.set(x, y);
  const std::vector<BinaryMask> one{sq};
  const LabelMap ts = contour_target(one, std::vector<int>{1}, c);
  for (int x = 0; x < 32; ++x) EXPECT_EQ(ts.at(x, 12), (x >= 4 && x < 7) || (x >= 17 && x < 20) ? 1 : 0) << x;
  // and it never leaves the item
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (t.at(x, y) != 0) EXPECT_TRUE(masks[t.at(x, y) - 1].get(x, y)) << x << "," << y;
  EXPECT_THROW(contour_target(masks, std::vector<int>{1, 3}, c), InvalidInput);
}
