#pragma once

#include "lidarsplat/scene.hpp"

#include <filesystem>

namespace lsplat {

/// 8-bit PNG; values are clamped to [0,1] and rounded. 1 or 3 channels.
void write_png(const Image& img, const std::filesystem::path& path);
/// Grey, grey+alpha, RGB and RGBA inputs; alpha is dropped.
Image read_png(const std::filesystem::path& path);

/// Little-endian float32 PFM, 1 or 3 channels.
void write_pfm(const Image& img, const std::filesystem::path& path);
Image read_pfm(const std::filesystem::path& path);

/// Depth (1 channel, 0 = invalid) and normal (3 channels) views of maps.
Image depth_image(const DepthNormalMaps& maps);
Image normal_image(const DepthNormalMaps& maps);

} // namespace lsplat
