#pragma once

#include <vector>

#include "tst/image.hpp"
#include "tst/imaging.hpp"

namespace tst {

/// Isotropic Gaussian smoothing window.
struct GaussianSpec {
  double sigma = 1.0;
  int radius = 3;

  /// radius = ceil(3 sigma), at least 1.
  static GaussianSpec from_sigma(double sigma);
};

/// (2r+1)x(2r+1) normalized Gaussian. Throws InvalidParameter for sigma <= 0 or radius < 1.
Kernel2D gaussian_kernel(const GaussianSpec& spec);

/// x and y derivatives from the 3x3 Sobel operator scaled by 1/8, so a unit
/// ramp yields a unit gradient. y grows downwards.
ImageBuffer gradient_x(const ImageBuffer& img);
ImageBuffer gradient_y(const ImageBuffer& img);

/// cos(theta) * d/dx + sin(theta) * d/dy.
ImageBuffer directional_gradient(const ImageBuffer& img, double theta);

struct GradientStack {
  std::vector<ImageBuffer> gradients;
  std::vector<double> angles;  ///< angles[t] = 2 pi t / order
  int order = 0;
};

GradientStack gradient_stack(const ImageBuffer& img, int m);

/// Smoothed gradient products of the classic 2x2 structure tensor.
struct StructureTensorField {
  ImageBuffer jxx;
  ImageBuffer jxy;
  ImageBuffer jyy;
};

StructureTensorField conventional_structure_tensor(const ImageBuffer& img, const GaussianSpec& spec);

struct Eigenvalues2 {
  double major = 0.0;  ///< lambda1
  double minor = 0.0;  ///< lambda2 <= lambda1
};

Eigenvalues2 symmetric_eigenvalues(double a, double b, double c);

/// ((l1 - l2) / (l1 + l2))^2 clamped to [0, 1]; 0 when l1 + l2 <= eps.
double coherency(double lambda1, double lambda2, double eps = 1e-12);

struct CoherencyMap {
  ImageBuffer values;
};

CoherencyMap coherency_map(const StructureTensorField& field, double eps = 1e-12);

/// Index pair (m, n), m <= n, of a generalized tensor.
struct TensorPair {
  int m = 0;
  int n = 0;
  friend auto operator<=>(const TensorPair&, const TensorPair&) = default;
};

/// The M(M+1)/2 unique tensors phi * (grad_m . grad_n), in lexicographic pair order.
struct TensorSet {
  std::vector<ImageBuffer> tensors;
  std::vector<TensorPair> pairs;
  int order = 0;
};

/// phi * (a . b) for two same-sized single-channel images.
ImageBuffer smoothed_product(const ImageBuffer& a, const ImageBuffer& b, const Kernel2D& phi);

TensorSet modified_tensor_set(const GradientStack& stack, const GaussianSpec& spec);

/// Frobenius norm of an image treated as a matrix.
double frobenius_norm(const ImageBuffer& img);

/// The k tensors of largest Frobenius norm, ties broken by the smaller pair.
///
/// A non-zero tensor that equals an already selected one up to sign (within
/// a relative 1e-9) is passed over while unselected candidates remain: with
/// antipodal orientations phi*(g0.g2) is exactly -phi*(g0.g0), and summing the
/// two would erase the representation. Passed-over tensors fill any
/// remaining slots in rank order.
std::vector<TensorPair> select_coherent(const TensorSet& set, int k);

struct CoherentRepresentation {
  ImageBuffer values;  ///< min-max normalized to [0, 1]
  std::vector<TensorPair> selected;
  int k = 0;
};

CoherentRepresentation coherent_representation(const TensorSet& set, int k);

/// Full front-end on a single-channel image: gradients, tensors, selection, fusion.
CoherentRepresentation coherent_representation(const ImageBuffer& img, int m, int k,
                                               const GaussianSpec& spec);

/// Rescales to [0, 1]; a constant image maps to all zeros.
ImageBuffer min_max_normalize(const ImageBuffer& img);

}  // namespace tst
