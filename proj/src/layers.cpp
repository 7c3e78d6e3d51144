#include "tst/layers.hpp"

// Small products otherwise take a lazy path whose vector peeling depends on the
// buffers' alignment, which makes results differ in the last bits between runs.
// The packed GEMM kernels do not care.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "tst/error.hpp"

namespace tst {

template <typename T>
FeatureMap<T> to_feature_map(std::span<const ImageBuffer> planes) {
  if (planes.empty()) throw InvalidInput("no input planes");
  const int w = planes[0].width();
  const int h = planes[0].height();
  FeatureMap<T> fm(static_cast<int>(planes.size()), h, w);
  for (std::size_t c = 0; c < planes.size(); ++c) {
    if (planes[c].channels() != 1 || planes[c].width() != w || planes[c].height() != h)
      throw InvalidInput("input planes must be single-channel and equally sized");
    std::transform(planes[c].data().begin(), planes[c].data().end(),
                   fm.data.begin() + static_cast<std::ptrdiff_t>(c * fm.plane()),
                   [](double v) { return static_cast<T>(v); });
  }
  return fm;
}

namespace layers {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void im2col(const FeatureMap<T>& in, int kernel, std::vector<T>& col) {
  const int pad = kernel / 2;
  const int h = in.height, w = in.width;
  const std::size_t plane = in.plane();
  col.resize(static_cast<std::size_t>(in.channels) * kernel * kernel * plane);
  std::size_t row = 0;
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.data.data() + c * plane;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx, ++row) {
        T* dst = col.data() + row * plane;
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          T* drow = dst + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(drow, drow + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * w;
          std::fill(drow, drow + x0, T(0));
          std::copy(srow + x0 + dx, srow + x1 + dx, drow + x0);
          std::fill(drow + x1, drow + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const ConvShape& shape, std::span<const T> weight, std::span<const T> bias,
                  const FeatureMap<T>& in, FeatureMap<T>& out, std::vector<T>& col) {
  if (in.channels != shape.in_channels) throw InvalidInput("convolution input channel mismatch");
  im2col(in, shape.kernel, col);
  const auto plane = static_cast<Eigen::Index>(in.plane());
  out.reshape(shape.out_channels, in.height, in.width);
  Eigen::Map<const RowMat<T>> wm(weight.data(), shape.out_channels, static_cast<Eigen::Index>(shape.col_rows()));
  Eigen::Map<const RowMat<T>> cm(col.data(), static_cast<Eigen::Index>(shape.col_rows()), plane);
  Eigen::Map<RowMat<T>> om(out.data.data(), shape.out_channels, plane);
  Eigen::Map<const Vec<T>> bv(bias.data(), shape.out_channels);
  om.noalias() = wm * cm;
  om.colwise() += bv;
}

template <typename T>
void conv_backward(const ConvShape& shape, std::span<const T> weight, const std::vector<T>& col,
                   const FeatureMap<T>& dout, std::span<T> dweight, std::span<T> dbias,
                   FeatureMap<T>* din, std::vector<T>& dcol) {
  const auto plane = static_cast<Eigen::Index>(dout.plane());
  const auto rows = static_cast<Eigen::Index>(shape.col_rows());
  Eigen::Map<const RowMat<T>> dy(dout.data.data(), shape.out_channels, plane);
  Eigen::Map<const RowMat<T>> cm(col.data(), rows, plane);
  Eigen::Map<RowMat<T>> dw(dweight.data(), shape.out_channels, rows);
  dw.noalias() += dy * cm.transpose();
  for (int o = 0; o < shape.out_channels; ++o) {
    const T* g = dout.data.data() + static_cast<std::size_t>(o) * plane;
    T acc = 0;
    for (Eigen::Index i = 0; i < plane; ++i) acc += g[i];
    dbias[o] += acc;
  }
  if (din == nullptr) return;

  Eigen::Map<const RowMat<T>> wm(weight.data(), shape.out_channels, rows);
  dcol.resize(static_cast<std::size_t>(rows * plane));
  Eigen::Map<RowMat<T>> dc(dcol.data(), rows, plane);
  dc.noalias() = wm.transpose() * dy;

  // col2im
  const int k = shape.kernel;
  const int pad = k / 2;
  const int h = dout.height, w = dout.width;
  din->reset(shape.in_channels, h, w);
  std::size_t row = 0;
  for (int c = 0; c < shape.in_channels; ++c) {
    T* dst = din->data.data() + c * din->plane();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const T* src = dcol.data() + row * static_cast<std::size_t>(plane);
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          T* drow = dst + static_cast<std::size_t>(sy) * w;
          const T* srow = src + static_cast<std::size_t>(y) * w;
          for (int x = x0; x < x1; ++x) drow[x + dx] += srow[x];
        }
      }
    }
  }
}

template <typename T>
void relu_forward(FeatureMap<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward(const FeatureMap<T>& activated, FeatureMap<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (!(activated.data[i] > T(0))) grad.data[i] = T(0);
}

template <typename T>
void maxpool_forward(const FeatureMap<T>& in, FeatureMap<T>& out, std::vector<std::int32_t>& argmax) {
  if (in.height % 2 != 0 || in.width % 2 != 0) throw InvalidInput("max pooling needs even dimensions");
  const int oh = in.height / 2, ow = in.width / 2;
  out.reshape(in.channels, oh, ow);
  argmax.assign(out.data.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.data.data() + c * in.plane();
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x, ++o) {
        std::int32_t best = (2 * y) * in.width + 2 * x;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::int32_t idx = (2 * y + dy) * in.width + 2 * x + dx;
            if (src[idx] > src[best]) best = idx;
          }
        argmax[o] = best;
        out.data[o] = src[best];
      }
    }
  }
}

template <typename T>
void maxpool_backward(const FeatureMap<T>& dout, const std::vector<std::int32_t>& argmax, int in_height,
                      int in_width, FeatureMap<T>& din) {
  din.reset(dout.channels, in_height, in_width);
  const std::size_t out_plane = dout.plane();
  for (int c = 0; c < dout.channels; ++c) {
    T* dst = din.data.data() + c * din.plane();
    for (std::size_t i = 0; i < out_plane; ++i) dst[argmax[c * out_plane + i]] += dout.data[c * out_plane + i];
  }
}

template <typename T>
void maxunpool_forward(const FeatureMap<T>& in, const std::vector<std::int32_t>& argmax, int out_height,
                       int out_width, FeatureMap<T>& out) {
  if (argmax.size() != in.data.size()) throw InvalidInput("unpooling indices do not match the input");
  out.reset(in.channels, out_height, out_width);
  const std::size_t in_plane = in.plane();
  for (int c = 0; c < in.channels; ++c) {
    T* dst = out.data.data() + c * out.plane();
    for (std::size_t i = 0; i < in_plane; ++i) dst[argmax[c * in_plane + i]] = in.data[c * in_plane + i];
  }
}

template <typename T>
void maxunpool_backward(const FeatureMap<T>& dout, const std::vector<std::int32_t>& argmax,
                        FeatureMap<T>& din) {
  din.reshape(dout.channels, dout.height / 2, dout.width / 2);
  const std::size_t in_plane = din.plane();
  for (int c = 0; c < dout.channels; ++c) {
    const T* src = dout.data.data() + c * dout.plane();
    for (std::size_t i = 0; i < in_plane; ++i) din.data[c * in_plane + i] = src[argmax[c * in_plane + i]];
  }
}

template <typename T>
void softmax(const FeatureMap<T>& logits, FeatureMap<T>& probs) {
  probs.reshape(logits.channels, logits.height, logits.width);
  const std::size_t plane = logits.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    T mx = logits.data[p];
    for (int c = 1; c < logits.channels; ++c) mx = std::max(mx, logits.data[c * plane + p]);
    T sum = T(0);
    for (int c = 0; c < logits.channels; ++c) {
      const T e = std::exp(logits.data[c * plane + p] - mx);
      probs.data[c * plane + p] = e;
      sum += e;
    }
    for (int c = 0; c < logits.channels; ++c) probs.data[c * plane + p] /= sum;
  }
}

template <typename T>
T softmax_cross_entropy(const FeatureMap<T>& logits, const LabelMap& target,
                        std::span<const double> class_weights, FeatureMap<T>& probs,
                        FeatureMap<T>* dlogits) {
  if (target.width != logits.width || target.height != logits.height)
    throw InvalidInput("target and prediction dimensions differ");
  if (class_weights.size() != static_cast<std::size_t>(logits.channels))
    throw InvalidInput("one class weight per class is required");
  const std::size_t plane = logits.plane();
  const int classes = logits.channels;
  probs.reshape(classes, logits.height, logits.width);
  if (dlogits) dlogits->reshape(classes, logits.height, logits.width);
  const T inv_n = T(1) / static_cast<T>(plane);
  // Accumulate in double so the float path loses nothing in the reduction.
  double total = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    const int t = target.labels[p];
    if (t < 0 || t >= classes) throw InvalidInput("target class out of range");
    T mx = logits.data[p];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, logits.data[c * plane + p]);
    T sum = T(0);
    for (int c = 0; c < classes; ++c) sum += std::exp(logits.data[c * plane + p] - mx);
    const T log_sum = std::log(sum);
    for (int c = 0; c < classes; ++c) probs.data[c * plane + p] = std::exp(logits.data[c * plane + p] - mx - log_sum);
    const T wt = static_cast<T>(class_weights[t]);
    total += static_cast<double>(wt) * static_cast<double>(log_sum + mx - logits.data[t * plane + p]);
    if (dlogits) {
      const T scale = wt * inv_n;
      for (int c = 0; c < classes; ++c)
        dlogits->data[c * plane + p] = scale * (probs.data[c * plane + p] - (c == t ? T(1) : T(0)));
    }
  }
  return static_cast<T>(total / static_cast<double>(plane));
}

#define TST_INSTANTIATE(T)                                                                              \
  template void im2col<T>(const FeatureMap<T>&, int, std::vector<T>&);                                 \
  template void conv_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>,              \
                                const FeatureMap<T>&, FeatureMap<T>&, std::vector<T>&);                \
  template void conv_backward<T>(const ConvShape&, std::span<const T>, const std::vector<T>&,          \
                                 const FeatureMap<T>&, std::span<T>, std::span<T>, FeatureMap<T>*,     \
                                 std::vector<T>&);                                                     \
  template void relu_forward<T>(FeatureMap<T>&);                                                       \
  template void relu_backward<T>(const FeatureMap<T>&, FeatureMap<T>&);                                \
  template void maxpool_forward<T>(const FeatureMap<T>&, FeatureMap<T>&, std::vector<std::int32_t>&);  \
  template void maxpool_backward<T>(const FeatureMap<T>&, const std::vector<std::int32_t>&, int, int,  \
                                    FeatureMap<T>&);                                                   \
  template void maxunpool_forward<T>(const FeatureMap<T>&, const std::vector<std::int32_t>&, int, int, \
                                     FeatureMap<T>&);                                                  \
  template void maxunpool_backward<T>(const FeatureMap<T>&, const std::vector<std::int32_t>&,          \
                                      FeatureMap<T>&);                                                 \
  template void softmax<T>(const FeatureMap<T>&, FeatureMap<T>&);                                      \
  template T softmax_cross_entropy<T>(const FeatureMap<T>&, const LabelMap&, std::span<const double>,  \
                                      FeatureMap<T>&, FeatureMap<T>*);

TST_INSTANTIATE(float)
TST_INSTANTIATE(double)
#undef TST_INSTANTIATE

}  // namespace layers

template FeatureMap<float> to_feature_map<float>(std::span<const ImageBuffer>);
template FeatureMap<double> to_feature_map<double>(std::span<const ImageBuffer>);

}  // namespace tst
