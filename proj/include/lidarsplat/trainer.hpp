#pragma once

#include "lidarsplat/densify.hpp"
#include "lidarsplat/lidar_maps.hpp"
#include "lidarsplat/losses.hpp"
#include "lidarsplat/rasterizer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace lsplat {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

struct AdamState {
    std::vector<double> m, v;
    std::int64_t step = 0;
};

/// One adaptive-moment update in the bias-corrected form
/// p -= lr / (1 - b1^t) * m / (sqrt(v) / sqrt(1 - b2^t) + eps).
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, std::span<const double> lrs,
               const AdamOptions& options = {});

struct LearningRates {
    double position_init = 1.6e-4;  // times scene extent
    double position_final = 1.6e-6; // times scene extent
    double sh_dc = 2.5e-3;
    double sh_rest = 2.5e-3 / 20.0;
    double opacity = 5e-2;
    double scale = 5e-3;
    double rotation = 1e-3;
};

/// Log-linear interpolation from init to final over `steps`.
double position_lr(const LearningRates& lr, double extent, int iteration, int steps);

struct TrainConfig {
    int iterations = 30000;
    int densify_start = 500;
    int densify_stop = -1; // -1: iterations / 2
    DensifyConfig densify;
    LossWeights weights;
    LearningRates lr;
    double scene_extent = 0.0; // 0: derived from the training cameras
    int max_sh_degree = 3;
    int sh_increase_interval = 1000;
    std::uint64_t seed = 0;
    int validation_interval = 100;
    int checkpoint_interval = 0; // 0: final state only
    std::filesystem::path checkpoint_dir; // empty: nothing written
    RenderSettings render;

    int resolved_densify_stop() const { return densify_stop < 0 ? iterations / 2 : densify_stop; }
    void validate() const;
};

struct TrainView {
    DistortedCamera camera;
    Image image;
    DepthNormalMaps lidar;
};

struct LogRow {
    int iteration = 0;
    LossBreakdown loss;
    std::size_t count = 0;
    double val_psnr = 0.0;
    bool has_val = false;
};

struct DensifyRecord {
    int iteration = 0;
    std::size_t before = 0, after = 0, selected = 0, pruned = 0;
    double max_distance = 0.0; // largest nearest-LiDAR distance after the pass
    double min_opacity = 1.0;
    std::vector<SplitEvent> splits;
};

struct CheckpointRecord {
    int iteration = 0;
    double lidar_rmse = 0.0;
    std::filesystem::path ply;
};

struct TrainResult {
    GaussianSet set;
    std::vector<LogRow> log;
    std::vector<DensifyRecord> densify;
    std::vector<CheckpointRecord> checkpoints;
};

/// Views `indices` of (cams, images) with LiDAR maps computed from `cloud`.
std::vector<TrainView> make_train_views(const LidarCloud& cloud, const std::vector<DistortedCamera>& cams,
                                        const std::vector<Image>& images, const std::vector<std::size_t>& indices);

/// 1.1 times the largest distance of a camera centre from their mean.
double camera_extent(const std::vector<TrainView>& views);

/// Optimises `init` against the training views. Throws NumericError on a
/// non-finite loss and Error if densification empties the set.
TrainResult train(GaussianSet init, const LidarCloud& cloud, const std::vector<TrainView>& train_views,
                  const std::vector<TrainView>& val_views, const TrainConfig& cfg);

/// Mean PSNR of renders against the views' images.
double mean_psnr(const GaussianSet& set, const std::vector<TrainView>& views, const RenderSettings& settings);

void write_log_csv(const std::vector<LogRow>& log, const std::filesystem::path& path);

/// Raw little-endian dump: magic, step, count, m, v.
void save_adam_state(const AdamState& state, const std::filesystem::path& path);
AdamState load_adam_state(const std::filesystem::path& path);

/// Number of optimised scalars per Gaussian.
constexpr std::size_t kParamsPerGaussian = 3 + 4 + 3 + 1 + 3 * kMaxShCoeffs;

} // namespace lsplat
