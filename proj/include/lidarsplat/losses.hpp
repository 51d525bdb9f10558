#pragma once

#include "lidarsplat/rasterizer.hpp"
#include "lidarsplat/scene.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace lsplat {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean absolute difference over all elements. `grad` (optional) receives
/// dL/d rendered.
double l1_loss(const Image& rendered, const Image& target, Image* grad = nullptr);

/// Mean SSIM over pixels and channels with an 11x11 Gaussian window
/// (sigma 1.5). Border windows are renormalised over in-image taps.
double ssim(const Image& a, const Image& b);

/// (1 - SSIM) / 2 with its gradient with respect to `rendered`.
double dssim_loss(const Image& rendered, const Image& target, Image* grad = nullptr);

enum class DepthLossMode {
    L1,      // |D - D_lidar|
    Literal, // |D - D_lidar| + |1 - D * D_lidar|
};

/// Mean over masked pixels. Zero (with zero gradient) when nothing is valid.
double depth_loss(std::span<const double> rendered, std::span<const double> target, std::span<const std::uint8_t> mask,
                  DepthLossMode mode = DepthLossMode::L1, std::vector<double>* grad = nullptr);

/// Mean over masked pixels of |N - N_lidar|_1 + |1 - N . N_lidar|.
double normal_loss(std::span<const Vec3> rendered, std::span<const Vec3> target, std::span<const std::uint8_t> mask,
                   std::vector<Vec3>* grad = nullptr);

/// Mean over Gaussians of the smallest scale (meters). The gradient goes to
/// the smallest log-scale axis only, lowest index on ties.
double scale_loss(const GaussianSet& set, std::vector<Vec3>* grad_log_scale = nullptr);

struct LossWeights {
    double alpha = 100.0; // depth
    double beta = 0.001;  // normal
    double gamma = 0.001; // scale
    double lambda = 0.2;  // D-SSIM share of the photometric term
    DepthLossMode depth_mode = DepthLossMode::L1;
};

struct LossBreakdown {
    double l1 = 0.0, dssim = 0.0, depth = 0.0, normal = 0.0, scale = 0.0;
    double total = 0.0;
};

struct TotalLoss {
    LossBreakdown parts;
    BufferGradients buffers;
    std::vector<Vec3> log_scale_grad;
};

/// (1-lambda) L1 + lambda D-SSIM + alpha depth + beta normal + gamma scale.
/// Geometric terms use pixels valid in both the render and the LiDAR maps.
TotalLoss total_loss(const RenderOutput& render, const Image& target, const DepthNormalMaps& lidar,
                     const GaussianSet& set, const LossWeights& weights = {});

} // namespace lsplat
