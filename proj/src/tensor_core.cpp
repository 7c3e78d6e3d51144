#include "tst/tensor_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "tst/error.hpp"
#include "tst/parallel.hpp"

namespace tst {
namespace {

void require_single_channel(const ImageBuffer& img, const char* what) {
  if (img.channels() != 1) throw InvalidInput(std::string(what) + " expects a single-channel image");
}

Kernel2D sobel(bool along_x) {
  Kernel2D k{3, 3, std::vector<double>(9, 0.0)};
  const double taps[3] = {1.0, 2.0, 1.0};
  for (int i = 0; i < 3; ++i) {
    if (along_x) {
      k.at(i, 0) = -taps[i] / 8.0;
      k.at(i, 2) = taps[i] / 8.0;
    } else {
      k.at(0, i) = -taps[i] / 8.0;
      k.at(2, i) = taps[i] / 8.0;
    }
  }
  return k;
}

}  // namespace

GaussianSpec GaussianSpec::from_sigma(double sigma) {
  return {sigma, std::max(1, static_cast<int>(std::ceil(3.0 * sigma)))};
}

Kernel2D gaussian_kernel(const GaussianSpec& spec) {
  if (!(spec.sigma > 0.0)) throw InvalidParameter("Gaussian sigma must be positive");
  if (spec.radius < 1) throw InvalidParameter("Gaussian radius must be >= 1");
  const int r = spec.radius;
  const int size = 2 * r + 1;
  Kernel2D k{size, size, std::vector<double>(static_cast<std::size_t>(size) * size)};
  const double denom = 2.0 * spec.sigma * spec.sigma;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) k.at(y + r, x + r) = std::exp(-(x * x + y * y) / denom);
  const double sum = std::accumulate(k.weights.begin(), k.weights.end(), 0.0);
  for (auto& w : k.weights) w /= sum;
  return k;
}

ImageBuffer gradient_x(const ImageBuffer& img) {
  require_single_channel(img, "gradient_x");
  return convolve2d(img, sobel(true));
}

ImageBuffer gradient_y(const ImageBuffer& img) {
  require_single_channel(img, "gradient_y");
  return convolve2d(img, sobel(false));
}

ImageBuffer directional_gradient(const ImageBuffer& img, double theta) {
  require_single_channel(img, "directional_gradient");
  const ImageBuffer gx = gradient_x(img);
  const ImageBuffer gy = gradient_y(img);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  ImageBuffer out(img.width(), img.height(), 1);
  auto o = out.data();
  auto dx = gx.data();
  auto dy = gy.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * dx[i] + s * dy[i];
  return out;
}

GradientStack gradient_stack(const ImageBuffer& img, int m) {
  if (m < 1) throw InvalidParameter("gradient order M must be >= 1");
  require_single_channel(img, "gradient_stack");
  const ImageBuffer gx = gradient_x(img);
  const ImageBuffer gy = gradient_y(img);
  GradientStack stack;
  stack.order = m;
  for (int t = 0; t < m; ++t) {
    const double theta = 2.0 * std::numbers::pi * t / m;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    ImageBuffer g(img.width(), img.height(), 1);
    auto o = g.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * gx.data()[i] + s * gy.data()[i];
    stack.gradients.push_back(std::move(g));
    stack.angles.push_back(theta);
  }
  return stack;
}

ImageBuffer smoothed_product(const ImageBuffer& a, const ImageBuffer& b, const Kernel2D& phi) {
  if (!a.same_shape(b)) throw InvalidInput("gradient images differ in shape");
  ImageBuffer prod(a.width(), a.height(), 1);
  auto p = prod.data();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = a.data()[i] * b.data()[i];
  return convolve2d(prod, phi);
}

StructureTensorField conventional_structure_tensor(const ImageBuffer& img, const GaussianSpec& spec) {
  require_single_channel(img, "conventional_structure_tensor");
  const Kernel2D phi = gaussian_kernel(spec);
  const ImageBuffer gx = gradient_x(img);
  const ImageBuffer gy = gradient_y(img);
  return {smoothed_product(gx, gx, phi), smoothed_product(gx, gy, phi), smoothed_product(gy, gy, phi)};
}

Eigenvalues2 symmetric_eigenvalues(double a, double b, double c) {
  // [[a, b], [b, c]]
  const double half_trace = 0.5 * (a + c);
  const double radius = std::hypot(0.5 * (a - c), b);
  return {half_trace + radius, half_trace - radius};
}

double coherency(double lambda1, double lambda2, double eps) {
  if (!(eps > 0.0)) throw InvalidParameter("coherency epsilon must be positive");
  const double sum = lambda1 + lambda2;
  if (!(sum > eps)) return 0.0;
  const double ratio = (lambda1 - lambda2) / sum;
  return std::clamp(ratio * ratio, 0.0, 1.0);
}

CoherencyMap coherency_map(const StructureTensorField& field, double eps) {
  if (!(eps > 0.0)) throw InvalidParameter("coherency epsilon must be positive");
  if (!field.jxx.same_shape(field.jxy) || !field.jxx.same_shape(field.jyy))
    throw InvalidInput("structure tensor fields differ in shape");
  CoherencyMap map{ImageBuffer(field.jxx.width(), field.jxx.height(), 1)};
  auto out = map.values.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto ev = symmetric_eigenvalues(field.jxx.data()[i], field.jxy.data()[i], field.jyy.data()[i]);
    out[i] = coherency(ev.major, ev.minor, eps);
  }
  return map;
}

TensorSet modified_tensor_set(const GradientStack& stack, const GaussianSpec& spec) {
  if (stack.order < 1 || stack.gradients.size() != static_cast<std::size_t>(stack.order) ||
      stack.angles.size() != stack.gradients.size())
    throw InvalidInput("inconsistent gradient stack");
  const Kernel2D phi = gaussian_kernel(spec);
  TensorSet set;
  set.order = stack.order;
  for (int m = 0; m < stack.order; ++m)
    for (int n = m; n < stack.order; ++n) set.pairs.push_back({m, n});
  set.tensors.resize(set.pairs.size());
  parallel_for(set.pairs.size(), [&](std::size_t i) {
    const auto [m, n] = set.pairs[i];
    set.tensors[i] = smoothed_product(stack.gradients[m], stack.gradients[n], phi);
  });
  return set;
}

double frobenius_norm(const ImageBuffer& img) {
  double sum = 0.0;
  for (double v : img.data()) sum += v * v;
  return std::sqrt(sum);
}

namespace {

// True when a == b or a == -b within a relative tolerance.
bool equal_up_to_sign(const ImageBuffer& a, const ImageBuffer& b, double norm_a) {
  double diff_same = 0.0, diff_flip = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    diff_same += (x - y) * (x - y);
    diff_flip += (x + y) * (x + y);
  }
  const double tol = 1e-9 * norm_a;
  return std::sqrt(diff_same) <= tol || std::sqrt(diff_flip) <= tol;
}

}  // namespace

std::vector<TensorPair> select_coherent(const TensorSet& set, int k) {
  const int count = static_cast<int>(set.tensors.size());
  if (set.pairs.size() != set.tensors.size()) throw InvalidInput("tensor set pairs and tensors disagree");
  if (k < 1 || k > count) throw InvalidParameter("k must lie in [1, number of tensors]");

  std::vector<double> norms(count);
  for (int i = 0; i < count; ++i) norms[i] = frobenius_norm(set.tensors[i]);
  // Norms that agree to within rounding count as ties. Angles such as 3pi/2 are not
  // exact in floating point, so (1,1), (1,3) and (3,3) differ only in the last bits and
  // a strict comparison would pick the sign of Jyy by accident.
  constexpr double kTieTolerance = 1e-9;
  std::vector<int> order;
  std::vector<bool> used(count, false);
  for (int step = 0; step < count; ++step) {
    double top = -1.0;
    for (int i = 0; i < count; ++i)
      if (!used[i]) top = std::max(top, norms[i]);
    int pick = -1;
    for (int i = 0; i < count; ++i)
      if (!used[i] && norms[i] >= top * (1.0 - kTieTolerance) && (pick < 0 || set.pairs[i] < set.pairs[pick]))
        pick = i;
    used[pick] = true;
    order.push_back(pick);
  }

  std::vector<int> chosen;
  std::vector<int> passed_over;
  for (int idx : order) {
    if (static_cast<int>(chosen.size()) == k) break;
    const bool redundant =
        norms[idx] > 0.0 && std::any_of(chosen.begin(), chosen.end(), [&](int c) {
          return equal_up_to_sign(set.tensors[idx], set.tensors[c], norms[idx]);
        });
    (redundant ? passed_over : chosen).push_back(idx);
  }
  for (int idx : passed_over) {
    if (static_cast<int>(chosen.size()) == k) break;
    chosen.push_back(idx);
  }
  // Any candidates never visited by the first loop come after the passed-over ones.
  for (int idx : order) {
    if (static_cast<int>(chosen.size()) == k) break;
    if (std::find(chosen.begin(), chosen.end(), idx) == chosen.end()) chosen.push_back(idx);
  }

  std::vector<TensorPair> result;
  result.reserve(k);
  for (int idx : chosen) result.push_back(set.pairs[idx]);
  return result;
}

ImageBuffer min_max_normalize(const ImageBuffer& img) {
  ImageBuffer out(img.width(), img.height(), img.channels());
  if (img.empty()) return out;
  const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp((img.data()[i] - *lo) / range, 0.0, 1.0);
  return out;
}

CoherentRepresentation coherent_representation(const TensorSet& set, int k) {
  CoherentRepresentation rep;
  rep.selected = select_coherent(set, k);
  rep.k = k;
  const ImageBuffer& first = set.tensors.front();
  ImageBuffer sum(first.width(), first.height(), 1);
  for (const auto& pair : rep.selected) {
    const auto it = std::find(set.pairs.begin(), set.pairs.end(), pair);
    const auto& t = set.tensors[static_cast<std::size_t>(it - set.pairs.begin())];
    for (std::size_t i = 0; i < sum.data().size(); ++i) sum.data()[i] += t.data()[i];
  }
  rep.values = min_max_normalize(sum);
  return rep;
}

CoherentRepresentation coherent_representation(const ImageBuffer& img, int m, int k,
                                               const GaussianSpec& spec) {
  return coherent_representation(modified_tensor_set(gradient_stack(img, m), spec), k);
}

}  // namespace tst
