#pragma once

#include "lidarsplat/scene.hpp"

#include <limits>

namespace lsplat {

/// 10 log10(1 / MSE) for images in [0, 1]. Identical images give +inf.
double psnr(const Image& a, const Image& b);

enum class RmseDirection {
    GaussianToLidar, // each Gaussian center to its nearest LiDAR point
    LidarToGaussian, // each LiDAR point to its nearest Gaussian center
};

/// Root mean square nearest-neighbour distance in meters.
double lidar_rmse(const GaussianSet& set, const LidarCloud& cloud,
                  RmseDirection direction = RmseDirection::GaussianToLidar);

/// Mean |a - b| over pixels where both masks are set; NaN when none are.
double masked_mean_abs_error(const std::vector<double>& a, const std::vector<double>& b,
                             const std::vector<std::uint8_t>& mask_a, const std::vector<std::uint8_t>& mask_b);

} // namespace lsplat
