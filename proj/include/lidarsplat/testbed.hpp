#pragma once

#include "lidarsplat/align.hpp"
#include "lidarsplat/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lsplat {

/// Checkerboard of two colours plus a linear ramp along the face's u edge.
struct Texture {
    Vec3 color_a = Vec3::Constant(0.6);
    Vec3 color_b = Vec3::Constant(0.4);
    double checker = 2.0;            // square size, meters
    Vec3 gradient = Vec3::Zero();    // colour added at the far end of u

    Vec3 at(double s, double t, double u_length) const;
};

/// Planar parallelogram (o + a u + b v, a, b in [0, 1]) or triangle
/// (a, b >= 0, a + b <= 1). The outward normal is u x v.
struct Face {
    Vec3 origin = Vec3::Zero();
    Vec3 edge_u = Vec3::UnitX();
    Vec3 edge_v = Vec3::UnitY();
    bool triangle = false;
    Texture texture;

    Vec3 normal() const { return edge_u.cross(edge_v).normalized(); }
    double area() const;
    Vec3 point(double a, double b) const { return origin + a * edge_u + b * edge_v; }
    Vec3 color(double a, double b) const;
    /// Euclidean distance from p to the face.
    double distance(const Vec3& p) const;
};

struct Hit {
    double t = 0.0;
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ(); // facing the ray origin
    Vec3 color = Vec3::Zero();
    std::size_t face = 0;
};

class SurfaceModel {
public:
    std::vector<Face> faces;

    void add_plane(const Vec3& center, double size_x, double size_y, const Texture& tex);
    /// Axis-aligned box standing on z = min_corner.z(); the bottom face is omitted.
    void add_box(const Vec3& min_corner, const Vec3& size, const Texture& tex);
    /// Wedge rising along +x from height 0 at x0 to `rise` at x0 + length.
    void add_ramp(const Vec3& min_corner, double length, double width, double rise, const Texture& tex);

    /// Nearest intersection with t > t_min.
    std::optional<Hit> intersect(const Vec3& origin, const Vec3& dir, double t_min = 1e-9) const;
    double distance(const Vec3& p) const;
    double area() const;
};

struct CameraRing {
    int count = 12;
    double radius = 20.0;
    double height = 15.0;
};

struct SceneSpec {
    SurfaceModel surfaces;
    double lidar_density = 8.0; // points per square meter
    double lidar_noise = 0.0;   // std-dev along the surface normal, meters
    /// Keep only samples with an unobstructed vertical line of sight, as an
    /// airborne scanner would see them.
    bool airborne_visibility = true;
    std::vector<CameraRing> rings;
    Vec3 look_at = Vec3::Zero();
    int width = 64, height = 48;
    double fov_x_deg = 60.0;
    double k1 = 0.0, k2 = 0.0;
    RadialUnits radial_units = RadialUnits::Normalized;
    int supersample = 4;
    Vec3 background = Vec3::Zero();
    std::uint64_t seed = 0;
    /// Feature points per camera for alignment (exact LiDAR projections).
    int features_per_camera = 200;
    /// Pose perturbation applied to produce the initial (unaligned) cameras.
    double pose_noise_deg = 0.5;
    double pose_noise_m = 0.25;
};

struct SyntheticScene {
    SurfaceModel surfaces;
    LidarCloud cloud;
    std::vector<DistortedCamera> cameras;       // ground-truth poses
    std::vector<DistortedCamera> initial_cameras; // perturbed poses
    std::vector<Image> images;
    std::vector<DepthNormalMaps> geometry;      // ground-truth depth and normals
    std::vector<FeatureRecord> features;        // image_id indexes cameras
};

/// Throws Error for a spec with no surfaces or no cameras.
SyntheticScene make_scene(const SceneSpec& spec);

/// 20 x 20 m ground, a 5 x 5 x 8 m box and a ramp, 24 cameras on rings at
/// 15 m and 25 m height, k1 = 0.05, k2 = 0.005, 8 LiDAR points per m^2.
SceneSpec standard_scene_spec(std::uint64_t seed = 42);
/// One textured plane seen by `cameras` cameras on a single ring.
SceneSpec single_plane_spec(std::uint64_t seed = 0, int cameras = 1);

/// Uniform LiDAR samples by area; the count per face is Poisson distributed.
std::vector<Vec3> sample_surfaces(const SurfaceModel& surfaces, double density, double noise, bool airborne_visibility,
                                  std::uint64_t seed);

DistortedCamera look_at_camera(const Vec3& position, const Vec3& target, int width, int height, double fov_x_deg,
                               double k1, double k2, RadialUnits units);
std::vector<DistortedCamera> ring_cameras(const SceneSpec& spec);

Image render_ground_truth(const SurfaceModel& surfaces, const DistortedCamera& cam, int supersample,
                          const Vec3& background);
DepthNormalMaps ground_truth_geometry(const SurfaceModel& surfaces, const DistortedCamera& cam);

/// Seeded uniform subsample of ceil(fraction n) points, original order kept,
/// normals re-estimated.
LidarCloud downsample_cloud(const LidarCloud& cloud, double fraction, std::uint64_t seed = 0);

/// Random rigid perturbation with the given rotation angle and translation length.
DistortedCamera perturb_pose(const DistortedCamera& cam, double angle_rad, double translation_m, std::uint64_t seed);

struct DatasetSplit {
    std::vector<std::size_t> train, val, test;
};
/// Seeded 70/15/15 split. With fewer than three views every list holds all views.
DatasetSplit split_views(std::size_t count, std::uint64_t seed);

/// Writes lidar.ply, cameras/, cameras_init/, images/, depth/, normals/,
/// features.csv and split.json under `dir`.
void write_dataset(const SyntheticScene& scene, const std::filesystem::path& dir, std::uint64_t seed);

struct Dataset {
    LidarCloud cloud;
    std::vector<DistortedCamera> cameras;
    std::vector<DistortedCamera> initial_cameras;
    std::vector<Image> images;
    std::vector<Image> depth; // 1-channel, 0 where no surface
    DatasetSplit split;
    std::vector<FeatureRecord> features;
};

/// Reads a dataset directory. `camera_dir` selects which pose set fills
/// `cameras` (default "cameras").
Dataset load_dataset(const std::filesystem::path& dir, const std::string& camera_dir = "cameras");

std::string view_name(std::size_t i);

} // namespace lsplat
