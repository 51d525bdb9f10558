#pragma once

#include "lidarsplat/scene.hpp"

#include <cstdint>
#include <limits>
#include <vector>

namespace lsplat {

struct DensifyConfig {
    double sigma = 1.0;       // max nearest-LiDAR distance, meters
    double epsilon = 0.005;   // min opacity
    double tau_pos = 0.0002;  // NDC gradient threshold
    int interval = 50;
    double split_offset = 0.5; // child displacement as a fraction of the largest scale
    double scale_shrink = 1.6;

    void validate() const;
};

/// Marks Gaussians that did not exist before a pass (split children).
constexpr std::size_t kNoOrigin = std::numeric_limits<std::size_t>::max();

struct PruneResult {
    GaussianSet set;
    std::vector<std::size_t> removed; // ascending indices into the input
    std::vector<std::size_t> origin;  // input index of each survivor
};

/// Drops Gaussians farther than sigma from the cloud or with opacity below
/// epsilon. Survivors keep their parameters and accumulators.
PruneResult prune(const GaussianSet& set, const LidarCloud& cloud, const DensifyConfig& cfg);

/// Indices with weight_accum > 0 and grad_accum / weight_accum > tau_pos.
std::vector<std::size_t> select_split(const GaussianSet& set, const DensifyConfig& cfg);

/// Column of R for the largest scale (lowest index on ties).
Vec3 long_axis(const Gaussian& g);

struct SplitEvent {
    std::size_t parent = 0;
    Vec3 direction = Vec3::Zero();    // unit displacement direction
    Vec3 lidar_normal = Vec3::UnitZ(); // normal of the nearest LiDAR point
    bool degenerate = false;          // long axis parallel to the normal
    Vec3 child_a = Vec3::Zero(), child_b = Vec3::Zero();
};

struct SplitResult {
    GaussianSet set;
    std::vector<std::size_t> origin; // kNoOrigin for children
    std::vector<SplitEvent> events;
};

/// Replaces each listed Gaussian by two children offset along its long axis
/// projected onto the tangent plane of the nearest LiDAR point. Children
/// are appended after the unsplit Gaussians, in index order.
SplitResult split(const GaussianSet& set, const std::vector<std::size_t>& indices, const LidarCloud& cloud,
                  const DensifyConfig& cfg);

struct DensifyResult {
    GaussianSet set;
    std::vector<std::size_t> origin;
    std::vector<SplitEvent> splits;
    std::size_t selected = 0;
    std::size_t pruned = 0;
};

/// select_split, split, prune, then accumulator reset. Throws Error if no
/// Gaussian survives.
DensifyResult densify_pass(const GaussianSet& set, const LidarCloud& cloud, const DensifyConfig& cfg);

struct InitConfig {
    std::size_t max_points = 0; // 0 keeps every point
    double opacity = 0.1;
    double gray = 0.5;
    int sh_degree = 0;
    std::uint64_t seed = 0;
};

/// One isotropic Gaussian per (optionally subsampled) LiDAR point, scaled
/// to the mean distance of its three nearest neighbours.
GaussianSet init_from_lidar(const LidarCloud& cloud, const InitConfig& cfg = {});

} // namespace lsplat
