#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <algorithm>
#include <numeric>
#include <random>

#include "tst/error.hpp"
#include "tst/imaging.hpp"
#include "tst/tensor_core.hpp"

using namespace tst;

namespace {

ImageBuffer random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageBuffer img(w, h);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

void expect_images_near(const ImageBuffer& a, const ImageBuffer& b, double tol) {
  ASSERT_TRUE(a.same_shape(b));
  for (std::size_t i = 0; i < a.data().size(); ++i) ASSERT_NEAR(a.data()[i], b.data()[i], tol) << "index " << i;
}

}  // namespace

TEST(Gaussian, NormalisedSymmetricPeaked) {
  const Kernel2D k = gaussian_kernel({1.0, 3});
  ASSERT_EQ(k.rows, 7);
  double sum = 0.0, peak = 0.0;
  for (double w : k.weights) sum += w, peak = std::max(peak, w);
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_EQ(peak, k.at(3, 3));
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 7; ++c) {
      EXPECT_EQ(k.at(r, c), k.at(c, r));
      EXPECT_EQ(k.at(r, c), k.at(6 - r, c));
    }
}

TEST(Gaussian, DeltaLimit) {
  const Kernel2D k = gaussian_kernel({1e-3, 1});
  EXPECT_NEAR(k.at(1, 1), 1.0, 1e-12);
  EXPECT_NEAR(k.at(0, 1), 0.0, 1e-12);
}

TEST(Gaussian, RatioMatchesAnalyticValue) {
  const Kernel2D k = gaussian_kernel({2.0, 6});
  EXPECT_NEAR(k.at(6, 6) / k.at(6, 8), std::exp(0.5), 1e-12);
}

TEST(Gaussian, Validation) {
  EXPECT_THROW(gaussian_kernel({0.0, 3}), InvalidParameter);
  EXPECT_THROW(gaussian_kernel({1.0, 0}), InvalidParameter);
  EXPECT_EQ(GaussianSpec::from_sigma(1.0).radius, 3);
  EXPECT_EQ(GaussianSpec::from_sigma(1.5).radius, 5);
}

TEST(Gradient, RampSlope) {
  const int w = 12, h = 9;
  ImageBuffer ramp(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) ramp.at(x, y) = static_cast<double>(x) / (w - 1);
  const ImageBuffer g = directional_gradient(ramp, 0.0);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) EXPECT_NEAR(g.at(x, y), 1.0 / (w - 1), 1e-12);
}

TEST(Gradient, DiagonalProjection) {
  ImageBuffer ramp(10, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) ramp.at(x, y) = x + y;
  const ImageBuffer g = directional_gradient(ramp, std::numbers::pi / 4);
  for (int y = 1; y < 9; ++y)
    for (int x = 1; x < 9; ++x) EXPECT_NEAR(g.at(x, y), std::sqrt(2.0), 1e-12);
}

TEST(Gradient, OppositeDirectionNegates) {
  const ImageBuffer img = random_image(11, 13, 1);
  const ImageBuffer a = directional_gradient(img, 0.0), b = directional_gradient(img, std::numbers::pi);
  for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_NEAR(b.data()[i], -a.data()[i], 1e-15);
  EXPECT_THROW(directional_gradient(ImageBuffer(4, 4, 3), 0.0), InvalidInput);
}

TEST(GradientStack, Angles) {
  const ImageBuffer img = random_image(8, 8, 2);
  const GradientStack s4 = gradient_stack(img, 4);
  ASSERT_EQ(s4.angles.size(), 4u);
  for (int t = 0; t < 4; ++t) EXPECT_DOUBLE_EQ(s4.angles[t], t * std::numbers::pi / 2);
  for (std::size_t i = 0; i < s4.gradients[0].data().size(); ++i)
    EXPECT_NEAR(s4.gradients[2].data()[i], -s4.gradients[0].data()[i], 1e-15);
  const GradientStack s1 = gradient_stack(img, 1);
  EXPECT_EQ(s1.angles, std::vector<double>{0.0});
  EXPECT_THROW(gradient_stack(img, 0), InvalidParameter);
}

TEST(StructureTensor, ConstantImageIsZero) {
  const StructureTensorField f = conventional_structure_tensor(ImageBuffer(9, 9, 1, 0.3), {});
  for (const auto* img : {&f.jxx, &f.jxy, &f.jyy})
    for (double v : img->data()) EXPECT_NEAR(v, 0.0, 1e-28);  // Sobel sums leave rounding residue
}

TEST(StructureTensor, VerticalEdge) {
  ImageBuffer img(16, 12);
  for (int y = 0; y < 12; ++y)
    for (int x = 8; x < 16; ++x) img.at(x, y) = 1.0;
  const StructureTensorField f = conventional_structure_tensor(img, {1.0, 3});
  for (double v : f.jyy.data()) EXPECT_NEAR(v, 0.0, 1e-15);
  EXPECT_GT(f.jxx.at(8, 6), 0.0);
  EXPECT_GT(f.jxx.at(7, 6), 0.0);
}

TEST(StructureTensor, PositiveSemiDefinite) {
  const StructureTensorField f = conventional_structure_tensor(random_image(16, 16, 3), {1.0, 3});
  for (std::size_t i = 0; i < f.jxx.data().size(); ++i) {
    const double a = f.jxx.data()[i], b = f.jxy.data()[i], c = f.jyy.data()[i];
    // Eigenvalues of [[a, b], [b, c]] from the characteristic polynomial.
    const double mean = 0.5 * (a + c), disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
    EXPECT_GE(mean - disc, -1e-9);
    EXPECT_GE(a * c - b * b, -1e-9);
  }
}

TEST(Coherency, AnalyticCases) {
  EXPECT_NEAR(coherency(3.0, 1.0), 0.25, 1e-12);
  EXPECT_NEAR(coherency(2.0, 2.0), 0.0, 1e-12);
  EXPECT_NEAR(coherency(5.0, 0.0), 1.0, 1e-12);
  EXPECT_EQ(coherency(0.0, 0.0), 0.0);
  EXPECT_THROW(coherency(1.0, 0.0, 0.0), InvalidParameter);

  const Eigenvalues2 e = symmetric_eigenvalues(2.0, 0.0, 0.0);
  EXPECT_NEAR(e.major, 2.0, 1e-15);
  EXPECT_NEAR(e.minor, 0.0, 1e-15);
}

TEST(Coherency, MapRangeAndScaleInvariance) {
  const ImageBuffer img = random_image(20, 20, 4);
  ImageBuffer scaled = img;
  for (auto& v : scaled.data()) v *= 7.5;
  const StructureTensorField f = conventional_structure_tensor(img, {}), fs = conventional_structure_tensor(scaled, {});
  const CoherencyMap a = coherency_map(f), b = coherency_map(fs);
  for (std::size_t i = 0; i < a.values.data().size(); ++i) {
    EXPECT_GE(a.values.data()[i], 0.0);
    EXPECT_LE(a.values.data()[i], 1.0);
    if (f.jxx.data()[i] + f.jyy.data()[i] > 1e-12 * 7.5 * 7.5) EXPECT_NEAR(a.values.data()[i], b.values.data()[i], 1e-6);
  }
  EXPECT_THROW(coherency_map(f, -1.0), InvalidParameter);
}

TEST(TensorSet, SizesAndPairs) {
  const ImageBuffer img = random_image(10, 10, 5);
  for (int m : {1, 2, 4, 6}) {
    const TensorSet set = modified_tensor_set(gradient_stack(img, m), {});
    ASSERT_EQ(set.tensors.size(), static_cast<std::size_t>(m * (m + 1) / 2));
    std::size_t i = 0;
    for (int a = 0; a < m; ++a)
      for (int b = a; b < m; ++b) EXPECT_EQ(set.pairs[i++], (TensorPair{a, b}));
  }
}

TEST(TensorSet, SingleOrientation) {
  const ImageBuffer img = random_image(10, 10, 6);
  const GaussianSpec spec{1.0, 3};
  const TensorSet set = modified_tensor_set(gradient_stack(img, 1), spec);
  const ImageBuffer gx = gradient_x(img);
  expect_images_near(set.tensors[0], smoothed_product(gx, gx, gaussian_kernel(spec)), 1e-15);
}

TEST(TensorSet, AxisPairsMatchConventionalTensor) {
  const GaussianSpec spec{1.0, 3};
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const ImageBuffer img = random_image(32, 32, seed);
    const TensorSet set = modified_tensor_set(gradient_stack(img, 4), spec);
    const StructureTensorField f = conventional_structure_tensor(img, spec);
    expect_images_near(set.tensors[0], f.jxx, 1e-9);  // (0,0)
    expect_images_near(set.tensors[1], f.jxy, 1e-9);  // (0,1)
    expect_images_near(set.tensors[4], f.jyy, 1e-9);  // (1,1)
  }
}

TEST(TensorSet, ProductIsSymmetric) {
  const ImageBuffer img = random_image(12, 12, 7);
  const GradientStack s = gradient_stack(img, 3);
  const Kernel2D phi = gaussian_kernel({1.0, 3});
  expect_images_near(smoothed_product(s.gradients[0], s.gradients[2], phi),
                     smoothed_product(s.gradients[2], s.gradients[0], phi), 1e-12);
}

TEST(Selection, LargestNormsWithTieBreak) {
  TensorSet set;
  set.order = 2;
  set.pairs = {{0, 0}, {0, 1}, {1, 1}};
  for (double v : {5.0, 1.0, 9.0}) {
    ImageBuffer img(1, 1);
    img.at(0, 0) = v;
    set.tensors.push_back(img);
  }
  EXPECT_EQ(select_coherent(set, 2), (std::vector<TensorPair>{{1, 1}, {0, 0}}));

  for (auto& t : set.tensors) t.at(0, 0) = 0.0;
  EXPECT_EQ(select_coherent(set, 2), (std::vector<TensorPair>{{0, 0}, {0, 1}}));
  EXPECT_THROW(select_coherent(set, 0), InvalidParameter);
  EXPECT_THROW(select_coherent(set, 4), InvalidParameter);
}

TEST(Selection, SkipsSignDuplicatesWhileAlternativesRemain) {
  TensorSet set;
  set.order = 2;
  set.pairs = {{0, 0}, {0, 1}, {1, 1}};
  for (double v : {4.0, -4.0, 2.0}) {
    ImageBuffer img(2, 1, 1, v);
    set.tensors.push_back(img);
  }
  EXPECT_EQ(select_coherent(set, 2), (std::vector<TensorPair>{{0, 0}, {1, 1}}));
  EXPECT_EQ(select_coherent(set, 3), (std::vector<TensorPair>{{0, 0}, {1, 1}, {0, 1}}));
}

TEST(Selection, RoundingNeverPicksANegatedAxisTensor) {
  // With M=4 the axis tensors come in families {Jxx, -Jxx} and {Jyy, -Jyy} whose
  // norms differ only by rounding; the lexicographic tie rule keeps the positive one.
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const TensorSet set = modified_tensor_set(gradient_stack(random_image(20, 20, seed), 4), {});
    const CoherentRepresentation rep = coherent_representation(set, 2);
    for (const auto& p : rep.selected) EXPECT_TRUE((p == TensorPair{0, 0} || p == TensorPair{1, 1} || p == TensorPair{0, 1}));
  }
}

TEST(Selection, PermutationInvariant) {
  const ImageBuffer img = random_image(16, 16, 8);
  TensorSet set = modified_tensor_set(gradient_stack(img, 3), {});
  const auto expected = select_coherent(set, 3);
  std::mt19937_64 rng(9);
  std::vector<std::size_t> order(set.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  TensorSet shuffled;
  shuffled.order = set.order;
  for (std::size_t i : order) {
    shuffled.pairs.push_back(set.pairs[i]);
    shuffled.tensors.push_back(set.tensors[i]);
  }
  EXPECT_EQ(select_coherent(shuffled, 3), expected);
}

TEST(Representation, ConstantImageIsZero) {
  const CoherentRepresentation r = coherent_representation(ImageBuffer(12, 12, 1, 0.5), 4, 2, {});
  for (double v : r.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(Representation, SelectAllSumsEverything) {
  const ImageBuffer img = random_image(12, 12, 11);
  const TensorSet set = modified_tensor_set(gradient_stack(img, 3), {});
  const CoherentRepresentation r = coherent_representation(set, 6);
  ImageBuffer sum(12, 12);
  for (const auto& t : set.tensors)
    for (std::size_t i = 0; i < sum.data().size(); ++i) sum.data()[i] += t.data()[i];
  expect_images_near(r.values, min_max_normalize(sum), 1e-12);
  EXPECT_EQ(r.selected.size(), 6u);
}

TEST(Representation, PeakOnBarTransition) {
  ImageBuffer img(48, 48, 1, 1.0);
  for (int y = 8; y < 40; ++y) {
    for (int x = 10; x < 16; ++x) img.at(x, y) = 0.3;
    for (int x = 30; x < 38; ++x) img.at(x, y) = 0.5;
  }
  const CoherentRepresentation r = coherent_representation(img, 4, 2, {});
  double lo = 1.0, hi = 0.0;
  int bx = 0, by = 0;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      lo = std::min(lo, r.values.at(x, y));
      if (r.values.at(x, y) > hi) hi = r.values.at(x, y), bx = x, by = y;
    }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  // Ground-truth transition band: within 3 px of a bar edge.
  BinaryMask bars(48, 48);
  for (int y = 8; y < 40; ++y)
    for (int x : {10, 11, 12, 13, 14, 15, 30, 31, 32, 33, 34, 35, 36, 37}) bars.set(x, y);
  const BinaryMask band = dilate(inner_boundary(bars), 3, StructuringShape::kSquare);
  EXPECT_TRUE(band.get(bx, by)) << "peak at " << bx << "," << by;
  EXPECT_LT(r.values.at(2, 2), 0.05);
}

TEST(Representation, NormaliseConstant) {
  const ImageBuffer flat = min_max_normalize(ImageBuffer(3, 3, 1, 4.0));
  for (double v : flat.data()) EXPECT_EQ(v, 0.0);
}
