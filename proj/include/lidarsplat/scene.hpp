#pragma once

#include "lidarsplat/spatial.hpp"
#include "lidarsplat/types.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <vector>

namespace lsplat {

constexpr int kMaxShDegree = 3;
constexpr int kMaxShCoeffs = 16;
/// Scales below this are clamped when a Gaussian is constructed.
constexpr double kMinScale = 1e-8;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

inline std::array<Vec3, kMaxShCoeffs> zero_sh() {
    std::array<Vec3, kMaxShCoeffs> sh;
    sh.fill(Vec3::Zero());
    return sh;
}

/// One anisotropic Gaussian primitive. Scale lives in log space and opacity
/// in logit space so unconstrained optimizer steps keep them in range.
struct Gaussian {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0); // quaternion (w, x, y, z)
    Vec3 log_scale = Vec3::Zero();
    double logit_opacity = 0.0;
    std::array<Vec3, kMaxShCoeffs> sh = zero_sh(); // sh[k] = rgb coefficient k

    Mat3 rotation_matrix() const;
    Vec3 scale() const { return log_scale.array().exp(); }
    double opacity() const { return sigmoid(logit_opacity); }
    /// R diag(s^2) R^T.
    Mat3 covariance() const;

    /// Unit quaternion and scales clamped to kMinScale.
    void normalize();
};

Gaussian make_gaussian(const Vec3& position, const Vec4& rotation, const Vec3& scale, double opacity);
/// Recovers rotation and scale from a symmetric PSD matrix.
Gaussian gaussian_from_covariance(const Vec3& position, const Mat3& covariance, double opacity);
Mat3 quaternion_to_matrix(const Vec4& q);

struct GaussianSet {
    int sh_degree = 0;
    std::vector<Gaussian> gaussians;
    std::vector<double> grad_accum;   // sum over views of m * |dL/dmu_ndc|
    std::vector<double> weight_accum; // sum over views of m

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }
    void push_back(const Gaussian& g);
    void reset_accumulators();
    /// Throws Error if the accumulator lengths disagree with the count.
    void check_consistent() const;
};

/// Static LiDAR cloud with per-point unit normals and a kd-tree over points.
class LidarCloud {
public:
    LidarCloud() = default;
    /// Normals are estimated (k neighbours, +z orientation) when omitted.
    explicit LidarCloud(std::vector<Vec3> points, std::vector<Vec3> normals = {}, std::size_t normal_k = 16);

    std::size_t size() const { return tree_.size(); }
    bool empty() const { return tree_.empty(); }
    const std::vector<Vec3>& points() const { return tree_.points(); }
    const std::vector<Vec3>& normals() const { return normals_; }
    const KdTree& index() const { return tree_; }

    void recompute_normals(std::size_t k = 16, const Vec3& reference = Vec3::UnitZ());

private:
    KdTree tree_;
    std::vector<Vec3> normals_;
};

enum class RadialUnits { Pixel, Normalized };

/// Pinhole intrinsics with two-term radial distortion about the principal
/// point, plus a world-to-camera pose p_cam = R p_world + t.
struct DistortedCamera {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    double k1 = 0.0, k2 = 0.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    int width = 1, height = 1;
    /// Units of the radius fed to the distortion polynomial.
    RadialUnits radial_units = RadialUnits::Pixel;

    Vec3 center() const { return -rotation.transpose() * translation; }
    /// Throws Error when an invariant is violated.
    void validate() const;
};

struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<double> data; // row-major, interleaved channels

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// Per-pixel depth (camera z, meters) and camera-frame unit normal.
/// `sample_uv` holds the sub-pixel location each valid sample refers to.
struct DepthNormalMaps {
    int width = 0, height = 0;
    std::vector<double> depth;
    std::vector<Vec3> normal;
    std::vector<std::uint8_t> valid;
    std::vector<Vec2> sample_uv;

    DepthNormalMaps() = default;
    DepthNormalMaps(int w, int h);

    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    std::size_t valid_count() const;
};

GaussianSet load_ply_gaussians(const std::filesystem::path& path);
void save_ply_gaussians(const GaussianSet& set, const std::filesystem::path& path);

/// Points with optional nx, ny, nz. Missing normals are estimated.
LidarCloud load_ply_points(const std::filesystem::path& path);
void save_ply_points(const LidarCloud& cloud, const std::filesystem::path& path);

DistortedCamera load_camera_json(const std::filesystem::path& path);
void save_camera_json(const DistortedCamera& cam, const std::filesystem::path& path);
std::string camera_to_json_string(const DistortedCamera& cam);
DistortedCamera camera_from_json_string(const std::string& text);

} // namespace lsplat
