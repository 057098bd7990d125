#pragma once

#include <filesystem>

#include "mcgaze/datamodel.hpp"

namespace mcgaze {

/// 8-bit RGB PNG. Values are rounded to the nearest of 256 levels.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Rounds every channel to k/255, matching what a PNG round trip yields.
Image quantize_8bit(const Image& image);

/// Bilinear resize (no-op when the size already matches).
Image resize_image(const Image& image, int height, int width);

}  // namespace mcgaze
