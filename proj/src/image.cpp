#include "tst/image.hpp"

#include <algorithm>
#include <cmath>

#include "tst/error.hpp"

namespace tst {

ImageBuffer::ImageBuffer(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
  if (width < 0 || height < 0) throw InvalidInput("image dimensions must be non-negative");
  if (channels != 1 && channels != 3) throw InvalidInput("image must have 1 or 3 channels");
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

bool ImageBuffer::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

BinaryMask::BinaryMask(int width, int height, bool fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw InvalidInput("mask dimensions must be non-negative");
  bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out = *this;
  for (auto& b : out.bits_) b = b ? 0 : 1;
  return out;
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& o) {
  if (!same_shape(o)) throw InvalidInput("mask dimension mismatch");
  for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] = (bits_[i] | o.bits_[i]) ? 1 : 0;
  return *this;
}

BinaryMask& BinaryMask::operator&=(const BinaryMask& o) {
  if (!same_shape(o)) throw InvalidInput("mask dimension mismatch");
  for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] = (bits_[i] & o.bits_[i]) ? 1 : 0;
  return *this;
}

}  // namespace tst
