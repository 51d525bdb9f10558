#pragma once

#include "lidarsplat/camera.hpp"
#include "lidarsplat/scene.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lsplat {

struct Correspondence {
    Vec2 feature_uv = Vec2::Zero(); // observed (distorted) pixel
    Vec3 lidar_point = Vec3::Zero();
    double weight = 1.0;
    std::size_t feature_index = 0;
};

/// Matches each feature to at most one projected LiDAR point within
/// `radius` pixels, choosing the smallest pixel distance times depth.
/// `voxel_size` is accepted for interface compatibility and unused.
std::vector<Correspondence> find_correspondences(const LidarCloud& cloud, const DistortedCamera& cam,
                                                 const std::vector<Vec2>& features, double voxel_size = 0.5,
                                                 double radius = 3.0);

struct RefineOptions {
    int max_iterations = 100;
    double step_tolerance = 1e-10;
    double initial_damping = 1e-3;
};

struct RefineResult {
    DistortedCamera camera;
    double initial_rms = 0.0;
    double final_rms = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Weighted RMS over residual components: sqrt(sum w |r|^2 / (2 sum w)).
double reprojection_rms(const DistortedCamera& cam, const std::vector<Correspondence>& corr);

/// Levenberg-Marquardt over the pose only. The rotation is updated as
/// exp([w]x) R so it stays orthonormal. Throws Error with fewer than three
/// correspondences and DegenerateError when the pose is not determined.
RefineResult refine_pose(const DistortedCamera& cam, const std::vector<Correspondence>& corr,
                         const RefineOptions& options = {});

/// Rotation matrix of the axis-angle vector w.
Mat3 rotation_exp(const Vec3& w);
/// Angle of R_a^T R_b in radians.
double rotation_distance(const Mat3& a, const Mat3& b);

struct AlignmentRow {
    std::size_t camera = 0;
    bool ok = false;
    std::string error;
    std::size_t correspondences = 0;
    double rms_before = 0.0;
    double rms_after = 0.0;
    DistortedCamera refined;
};

/// find_correspondences + refine_pose for every camera. Failures are
/// recorded per row and do not stop the batch.
std::vector<AlignmentRow> alignment_report(const LidarCloud& cloud, const std::vector<DistortedCamera>& cams,
                                           const std::vector<std::vector<Vec2>>& features, double radius = 3.0);

struct FeatureRecord {
    int image_id = 0;
    Vec2 uv = Vec2::Zero();
    std::optional<Vec3> xyz;
};

/// CSV rows `image_id,u,v[,x,y,z]`; an optional header starting with
/// "image_id" is skipped. Throws ParseError on malformed rows.
std::vector<FeatureRecord> read_feature_csv(const std::filesystem::path& path);
void write_feature_csv(const std::vector<FeatureRecord>& rows, const std::filesystem::path& path);

} // namespace lsplat
