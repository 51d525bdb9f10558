#include "lidarsplat/eval.hpp"

#include <cmath>

namespace lsplat {

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) {
        throw Error("psnr: image shapes differ");
    }
    if (a.data.empty()) {
        throw Error("psnr: empty images");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.data.size());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(1.0 / mse);
}

double lidar_rmse(const GaussianSet& set, const LidarCloud& cloud, RmseDirection direction) {
    if (set.empty() || cloud.empty()) {
        throw Error("lidar_rmse: needs a non-empty Gaussian set and LiDAR cloud");
    }
    double sum = 0.0;
    std::size_t n = 0;
    if (direction == RmseDirection::GaussianToLidar) {
        for (const auto& g : set.gaussians) {
            const double d = cloud.index().nearest(g.position).distance;
            sum += d * d;
        }
        n = set.size();
    } else {
        std::vector<Vec3> centers;
        centers.reserve(set.size());
        for (const auto& g : set.gaussians) centers.push_back(g.position);
        const KdTree tree(std::move(centers));
        for (const auto& p : cloud.points()) {
            const double d = tree.nearest(p).distance;
            sum += d * d;
        }
        n = cloud.size();
    }
    return std::sqrt(sum / static_cast<double>(n));
}

double masked_mean_abs_error(const std::vector<double>& a, const std::vector<double>& b,
                             const std::vector<std::uint8_t>& mask_a, const std::vector<std::uint8_t>& mask_b) {
    if (a.size() != b.size() || a.size() != mask_a.size() || a.size() != mask_b.size()) {
        throw Error("masked_mean_abs_error: buffer sizes differ");
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (mask_a[i] && mask_b[i]) {
            sum += std::abs(a[i] - b[i]);
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

} // namespace lsplat
