#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tst {

/// Row-major raster of real intensities with 1 or 3 interleaved channels.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, int channels = 1, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const ImageBuffer& other) const {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }

  /// True when every sample is finite.
  bool all_finite() const;

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

/// One boolean per pixel, stored as bytes (0 or 1).
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  bool get(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v = true) {
    bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0;
  }
  /// Out-of-range coordinates read as unset.
  bool get_or_false(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_ && get(x, y);
  }

  std::span<std::uint8_t> bits() { return bits_; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  std::size_t count() const;
  bool same_shape(const BinaryMask& o) const { return width_ == o.width_ && height_ == o.height_; }

  BinaryMask complement() const;
  BinaryMask& operator|=(const BinaryMask& o);
  BinaryMask& operator&=(const BinaryMask& o);

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Per-pixel integer class labels (0 = background).
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(int w, int h, int fill = 0)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}

  int& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
  int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Axis-aligned box: top-left corner plus extent.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double area() const { return w * h; }
  friend bool operator==(const Box&, const Box&) = default;
};

}  // namespace tst
