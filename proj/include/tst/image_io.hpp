#pragma once

#include <filesystem>

#include "tst/image.hpp"

namespace tst {

// Samples are mapped linearly between [0, 1] and [0, 255] (or the file's
// maxval for PGM). Writers clamp and round. Failures raise IoError.

/// Reads PNG (gray, RGB, with or without alpha, 8/16 bit), binary or ASCII
/// PGM, or PFM, chosen by file extension. Colour files load as 3 channels.
ImageBuffer read_image(const std::filesystem::path& path);

/// Writes 8-bit PNG or binary PGM depending on the extension (1 or 3 channels;
/// PGM requires 1), or PFM for lossless float output.
void write_image(const std::filesystem::path& path, const ImageBuffer& img);

/// Masks are stored as single-channel PNG with values {0, 255}.
BinaryMask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);

}  // namespace tst
