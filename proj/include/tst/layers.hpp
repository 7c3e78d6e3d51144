#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tst/image.hpp"

namespace tst {

/// Channel-major activation volume [channels][height][width].
template <typename T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  /// Changes the shape, keeping capacity; contents are unspecified afterwards.
  void reshape(int c, int h, int w) {
    channels = c;
    height = h;
    width = w;
    data.resize(static_cast<std::size_t>(c) * h * w);
  }
  /// Changes the shape and zero-fills, keeping capacity.
  void reset(int c, int h, int w) {
    reshape(c, h, w);
    std::fill(data.begin(), data.end(), T(0));
  }

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  T& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  T at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

/// Stacks single-channel images into one volume (all images must share dimensions).
template <typename T>
FeatureMap<T> to_feature_map(std::span<const ImageBuffer> planes);

/// Geometry of one "same"-padded convolution (zero padding, stride 1).
struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
  std::size_t col_rows() const { return static_cast<std::size_t>(in_channels) * kernel * kernel; }
};

// Building blocks of the encoder-decoder. Each backward pass accumulates into
// its gradient outputs, so callers zero them once per sample.
namespace layers {

/// Unrolls `in` into a [in*k*k, H*W] row-major patch matrix.
template <typename T>
void im2col(const FeatureMap<T>& in, int kernel, std::vector<T>& col);

/// out = W * col + b, weights row-major [out][in*k*k]. `col` is filled as a side effect.
template <typename T>
void conv_forward(const ConvShape& shape, std::span<const T> weight, std::span<const T> bias,
                  const FeatureMap<T>& in, FeatureMap<T>& out, std::vector<T>& col);

/// Given the forward patch matrix, accumulates dW and db and, when `din` is
/// non-null, overwrites it with the input gradient.
template <typename T>
void conv_backward(const ConvShape& shape, std::span<const T> weight, const std::vector<T>& col,
                   const FeatureMap<T>& dout, std::span<T> dweight, std::span<T> dbias,
                   FeatureMap<T>* din, std::vector<T>& dcol_scratch);

template <typename T>
void relu_forward(FeatureMap<T>& x);

/// Zeroes gradient entries whose forward output was not positive.
template <typename T>
void relu_backward(const FeatureMap<T>& activated, FeatureMap<T>& grad);

/// 2x2 stride-2 max pooling. `argmax` receives, per output cell, the flat index
/// of the winning input within its channel plane (first maximum in raster order).
template <typename T>
void maxpool_forward(const FeatureMap<T>& in, FeatureMap<T>& out, std::vector<std::int32_t>& argmax);

template <typename T>
void maxpool_backward(const FeatureMap<T>& dout, const std::vector<std::int32_t>& argmax, int in_height,
                      int in_width, FeatureMap<T>& din);

/// Places each value at its recorded argmax position in a zeroed larger map.
template <typename T>
void maxunpool_forward(const FeatureMap<T>& in, const std::vector<std::int32_t>& argmax, int out_height,
                       int out_width, FeatureMap<T>& out);

template <typename T>
void maxunpool_backward(const FeatureMap<T>& dout, const std::vector<std::int32_t>& argmax,
                        FeatureMap<T>& din);

/// Per-pixel softmax over channels. Returns the weighted cross-entropy
/// (1/N) sum_p w[t_p] * -log p_{t_p}; when `dlogits` is non-null it receives
/// the gradient of that loss with respect to the logits.
template <typename T>
T softmax_cross_entropy(const FeatureMap<T>& logits, const LabelMap& target,
                        std::span<const double> class_weights, FeatureMap<T>& probs,
                        FeatureMap<T>* dlogits);

template <typename T>
void softmax(const FeatureMap<T>& logits, FeatureMap<T>& probs);

}  // namespace layers
}  // namespace tst
