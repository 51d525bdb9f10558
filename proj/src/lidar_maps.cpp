#include "lidarsplat/lidar_maps.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>

namespace lsplat {

namespace {
// Below this |cos| between the point normal and the pixel ray the tangent
// plane is too oblique to extrapolate and the raw point depth is kept.
constexpr double kMinPlaneCosine = 0.2;
} // namespace

DepthNormalMaps splat_sparse(const LidarCloud& cloud, const DistortedCamera& cam) {
    DepthNormalMaps maps(cam.width, cam.height);
    if (cloud.empty()) {
        return maps;
    }
    std::vector<double> zbuf(maps.depth.size(), 0.0);
    for (const auto& pp : project_cloud(cam, cloud)) {
        const int x = static_cast<int>(std::floor(pp.pixel.u));
        const int y = static_cast<int>(std::floor(pp.pixel.v));
        const std::size_t i = maps.index(x, y);
        if (maps.valid[i] && !(pp.pixel.depth < zbuf[i])) {
            continue;
        }
        const Vec3 p_cam = cam.rotation * cloud.points()[pp.index] + cam.translation;
        Vec3 n = cam.rotation * cloud.normals()[pp.index];
        if (n.dot(p_cam) > 0.0) {
            n = -n;
        }
        // Depth of the point's tangent plane along the pixel-centre ray.
        const Vec2 centre(x + 0.5, y + 0.5);
        const Vec3 ray = pixel_ray_camera(cam, centre);
        const double cos_ray = n.dot(ray) / ray.norm();
        maps.valid[i] = 1;
        maps.normal[i] = n;
        if (std::abs(cos_ray) >= kMinPlaneCosine) {
            maps.depth[i] = n.dot(p_cam) / n.dot(ray);
            maps.sample_uv[i] = centre;
        } else {
            maps.depth[i] = pp.pixel.depth;
            maps.sample_uv[i] = {pp.pixel.u, pp.pixel.v};
        }
        zbuf[i] = pp.pixel.depth;
    }
    return maps;
}

DepthNormalMaps densify_maps(const DepthNormalMaps& sparse, const DistortedCamera& cam, int window) {
    DepthNormalMaps out = sparse;
    const int w = sparse.width, h = sparse.height;
    const int half = std::max(0, window / 2);

    // Ideal coordinates of every valid sample.
    std::vector<Vec2> ideal(sparse.depth.size(), Vec2::Zero());
    for (std::size_t i = 0; i < ideal.size(); ++i) {
        if (sparse.valid[i]) ideal[i] = undistort(cam, sparse.sample_uv[i]);
    }

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = sparse.index(x, y);
            if (sparse.valid[p]) {
                continue;
            }
            const Vec2 centre(x + 0.5, y + 0.5);
            const Vec2 centre_ideal = undistort(cam, centre);

            Mat3 ata = Mat3::Zero();
            Vec3 atb = Vec3::Zero();
            int count = 0;
            for (int yy = std::max(0, y - half); yy <= std::min(h - 1, y + half); ++yy) {
                for (int xx = std::max(0, x - half); xx <= std::min(w - 1, x + half); ++xx) {
                    const std::size_t q = sparse.index(xx, yy);
                    if (!sparse.valid[q]) continue;
                    const Vec3 row(ideal[q].x() - centre_ideal.x(), ideal[q].y() - centre_ideal.y(), 1.0);
                    ata += row * row.transpose();
                    atb += row / sparse.depth[q];
                    ++count;
                }
            }
            if (count < 3) {
                continue;
            }
            // Reject collinear supports (rank-deficient system).
            Eigen::SelfAdjointEigenSolver<Mat3> eig(ata);
            if (eig.eigenvalues()[0] <= 1e-9 * eig.eigenvalues()[2]) {
                continue;
            }
            const Vec3 plane = ata.ldlt().solve(atb); // disparity = a du + b dv + c
            const double disparity = plane[2];
            if (!(disparity > 0.0) || !std::isfinite(disparity)) {
                continue;
            }
            const double a = plane[0], b = plane[1];
            const double c0 = disparity + a * (cam.cx - centre_ideal.x()) + b * (cam.cy - centre_ideal.y());
            Vec3 n(a * cam.fx, b * cam.fy, c0);
            const double nn = n.norm();
            if (!(nn > 0.0)) {
                continue;
            }
            n /= nn;
            const Vec3 ray((centre_ideal.x() - cam.cx) / cam.fx, (centre_ideal.y() - cam.cy) / cam.fy, 1.0);
            if (n.dot(ray) > 0.0) {
                n = -n;
            }
            out.valid[p] = 1;
            out.depth[p] = 1.0 / disparity;
            out.normal[p] = n;
            out.sample_uv[p] = centre;
        }
    }
    return out;
}

DepthNormalMaps lidar_maps(const LidarCloud& cloud, const DistortedCamera& cam, int window) {
    return densify_maps(splat_sparse(cloud, cam), cam, window);
}

} // namespace lsplat
