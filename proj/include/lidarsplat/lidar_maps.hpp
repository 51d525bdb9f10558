#pragma once

#include "lidarsplat/camera.hpp"
#include "lidarsplat/scene.hpp"

namespace lsplat {

/// Z-buffered projection of the cloud: each visible point writes its
/// camera-frame normal (turned toward the camera) and the depth of its
/// tangent plane along the pixel-centre ray into the pixel that contains it.
/// Grazing planes keep the raw point depth. Nearest point wins; equal depths
/// keep the earlier point.
DepthNormalMaps splat_sparse(const LidarCloud& cloud, const DistortedCamera& cam);

/// Fills invalid pixels from valid samples inside a `window` x `window`
/// neighbourhood by a least-squares plane in (u, v, 1/depth) over ideal
/// (undistorted) pixel coordinates. Needs >= 3 non-collinear samples; valid
/// input pixels are copied through unchanged.
DepthNormalMaps densify_maps(const DepthNormalMaps& sparse, const DistortedCamera& cam, int window = 21);

/// splat_sparse followed by densify_maps.
DepthNormalMaps lidar_maps(const LidarCloud& cloud, const DistortedCamera& cam, int window = 21);

} // namespace lsplat
