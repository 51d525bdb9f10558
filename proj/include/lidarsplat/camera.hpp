#pragma once

#include "lidarsplat/scene.hpp"

#include <optional>
#include <vector>

namespace lsplat {

/// Cull threshold on camera-frame depth.
constexpr double kBehindCamera = 1e-9;

struct PixelCoord {
    double u = 0.0, v = 0.0;
    double depth = 0.0; // camera-frame z
};

struct ProjectedPoint {
    std::size_t index;
    PixelCoord pixel;
};

/// World point to observed (distorted) pixel. nullopt when z <= kBehindCamera.
std::optional<PixelCoord> project(const DistortedCamera& cam, const Vec3& p_world);

/// Camera-frame point to observed pixel; requires z > kBehindCamera.
Vec2 project_camera(const DistortedCamera& cam, const Vec3& p_cam);

/// Ideal (pinhole) pixel to observed pixel.
Vec2 distort(const DistortedCamera& cam, const Vec2& ideal_uv);

/// Observed pixel to ideal pixel by fixed-point iteration (<= 50 iterations,
/// 1e-10 px tolerance). Throws NumericError carrying the last residual.
Vec2 undistort(const DistortedCamera& cam, const Vec2& distorted_uv);

/// d(u,v)/d(p_world). Throws Error when the point is behind the camera.
Mat23 project_jacobian(const DistortedCamera& cam, const Vec3& p_world);

/// d(u,v)/d(p_cam).
Mat23 projection_jacobian_camera(const DistortedCamera& cam, const Vec3& p_cam);

/// Gradient with respect to p_cam of sum_ij G_ij J_ij(p_cam), where J is
/// projection_jacobian_camera. Used to push covariance gradients through the
/// point-dependent Jacobian.
Vec3 projection_jacobian_vjp(const DistortedCamera& cam, const Vec3& p_cam, const Mat23& g);

/// Every cloud point in front of the camera whose pixel lies inside
/// [0,width) x [0,height), in cloud order.
std::vector<ProjectedPoint> project_cloud(const DistortedCamera& cam, const LidarCloud& cloud);

/// Unit-depth ray direction (camera frame) through an observed pixel.
Vec3 pixel_ray_camera(const DistortedCamera& cam, const Vec2& distorted_uv);

} // namespace lsplat
