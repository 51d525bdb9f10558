#pragma once

#include "lidarsplat/camera.hpp"
#include "lidarsplat/scene.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace lsplat {

/// Pixels whose accumulated alpha falls below this carry no depth or normal.
constexpr double kMinValidAlpha = 1e-4;
/// Effective alpha above which a Gaussian counts as covering a pixel.
constexpr double kCoverageAlpha = 1.0 / 255.0;

struct RenderSettings {
    Vec3 background = Vec3::Zero();
    /// Splats whose effective alpha at a pixel is below this are skipped
    /// there. Footprints are culled exactly at this level; 0 disables culling
    /// so every splat touches every pixel (smooth, used by gradient checks).
    double min_alpha = 1.0 / 255.0;
    double max_alpha = 0.99;
    double transmittance_stop = 1e-4;
    double dilation = 0.3; // px^2 added to the projected covariance diagonal
    double near_plane = 0.01;
    int tile_size = 16;
    int threads = 1;
};

/// A Gaussian projected into one view.
struct Splat2D {
    bool visible = false;
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    Mat2 conic = Mat2::Identity(); // inverse of cov2d
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
    Vec3 normal_cam = Vec3::UnitZ();
    // pixel bounding box, inclusive
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;

    // cached for the backward pass
    Vec3 p_cam = Vec3::Zero();
    Mat23 jacobian = Mat23::Zero();
    Vec3 color_raw = Vec3::Zero();
    Vec3 view_dir = Vec3::UnitZ();
    double view_dist = 1.0;
    int normal_axis = 0;
    double normal_sign = 1.0;
};

struct RenderOutput {
    int width = 0, height = 0;
    Image color;                      // 3 channels, background included
    std::vector<double> depth;        // expected depth, 0 where invalid
    std::vector<Vec3> normal;         // unit camera-frame normal, 0 where invalid
    std::vector<double> alpha;        // 1 - final transmittance
    std::vector<std::uint8_t> valid;  // alpha >= kMinValidAlpha
    std::vector<Splat2D> splats;      // one per Gaussian
    std::vector<std::uint32_t> coverage; // pixels with effective alpha > 1/255

    // per-pixel intermediates consumed by the backward pass
    std::vector<Vec3> normal_sum;
    std::vector<double> depth_sum;
    std::vector<double> final_transmittance;
    std::vector<std::vector<std::uint32_t>> tile_lists;
    int tiles_x = 0, tiles_y = 0;
};

/// Upstream gradients with respect to the rendered buffers. Empty vectors
/// (or an empty image) mean zero.
struct BufferGradients {
    Image color;
    std::vector<double> depth;
    std::vector<Vec3> normal;
    std::vector<double> alpha;
};

struct GaussianGradients {
    std::vector<Vec3> position;
    std::vector<Vec4> rotation;
    std::vector<Vec3> log_scale;
    std::vector<double> logit_opacity;
    std::vector<std::array<Vec3, kMaxShCoeffs>> sh;
    /// |dL/d mu_ndc| for this view, NDC = pixel mapped to [-1, 1].
    std::vector<double> ndc_grad_norm;
    std::vector<std::uint32_t> coverage;

    explicit GaussianGradients(std::size_t n = 0);
    std::size_t size() const { return position.size(); }
};

/// Forward splatting. Throws Error naming the first Gaussian with a
/// non-finite parameter.
RenderOutput render(const GaussianSet& set, const DistortedCamera& cam, const RenderSettings& settings = {});

/// Analytic gradients of a scalar loss given its gradients with respect to
/// the buffers of `output`, which must come from render() on the same inputs.
GaussianGradients render_backward(const GaussianSet& set, const DistortedCamera& cam, const RenderOutput& output,
                                  const BufferGradients& upstream, const RenderSettings& settings = {});

/// grad_accum[i] += m_i * |dL/d mu_ndc|_i and weight_accum[i] += m_i.
void accumulate_densify_stats(GaussianSet& set, const GaussianGradients& grads);

/// Projects one Gaussian; exposed for tests and the CLI.
Splat2D project_gaussian(const Gaussian& g, int sh_degree, const DistortedCamera& cam, const RenderSettings& settings);

} // namespace lsplat
