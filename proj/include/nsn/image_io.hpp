#pragma once

#include <filesystem>

#include "nsn/raster.hpp"

namespace nsn {

/// Decodes an 8-bit PNG or JPEG (detected by signature). Gray stays 1-channel, alpha is dropped.
RasterImage read_image(const std::filesystem::path& path);

/// Like read_image but always returns 3 channels.
RasterImage read_rgb(const std::filesystem::path& path);

/// Encodes as PNG with fixed settings, so identical pixels give identical bytes.
void write_png(const RasterImage& image, const std::filesystem::path& path);

/// Single-channel PNG, nonzero samples are members.
BinaryMask read_mask(const std::filesystem::path& path);
void write_mask(const BinaryMask& mask, const std::filesystem::path& path);

}  // namespace nsn
