#include "lidarsplat/densify.hpp"

#include "lidarsplat/log.hpp"
#include "lidarsplat/sh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace lsplat {

void DensifyConfig::validate() const {
    if (!(sigma > 0.0) || !(epsilon > 0.0) || !(tau_pos > 0.0) || !(split_offset > 0.0) || !(scale_shrink > 0.0)) {
        throw Error("densify config: sigma, epsilon, tau_pos, split_offset and scale_shrink must be positive");
    }
    if (interval < 1) {
        throw Error("densify config: interval must be at least 1");
    }
}

namespace {

void append(GaussianSet& out, const GaussianSet& in, std::size_t i) {
    out.gaussians.push_back(in.gaussians[i]);
    out.grad_accum.push_back(in.grad_accum[i]);
    out.weight_accum.push_back(in.weight_accum[i]);
}

} // namespace

PruneResult prune(const GaussianSet& set, const LidarCloud& cloud, const DensifyConfig& cfg) {
    set.check_consistent();
    if (cloud.empty()) {
        throw Error("prune: LiDAR cloud is empty");
    }
    PruneResult r;
    r.set.sh_degree = set.sh_degree;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Gaussian& g = set.gaussians[i];
        const double d = cloud.index().nearest(g.position).distance;
        if (d > cfg.sigma || g.opacity() < cfg.epsilon) {
            r.removed.push_back(i);
        } else {
            append(r.set, set, i);
            r.origin.push_back(i);
        }
    }
    return r;
}

std::vector<std::size_t> select_split(const GaussianSet& set, const DensifyConfig& cfg) {
    set.check_consistent();
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const double w = set.weight_accum[i];
        if (w > 0.0 && set.grad_accum[i] / w > cfg.tau_pos) {
            out.push_back(i);
        }
    }
    return out;
}

Vec3 long_axis(const Gaussian& g) {
    int k = 0;
    for (int j = 1; j < 3; ++j) {
        if (g.log_scale[j] > g.log_scale[k]) k = j;
    }
    return g.rotation_matrix().col(k).normalized();
}

SplitResult split(const GaussianSet& set, const std::vector<std::size_t>& indices, const LidarCloud& cloud,
                  const DensifyConfig& cfg) {
    set.check_consistent();
    if (cloud.empty()) {
        throw Error("split: LiDAR cloud is empty");
    }
    std::vector<std::uint8_t> selected(set.size(), 0);
    for (auto i : indices) {
        if (i >= set.size()) {
            throw Error("split: index " + std::to_string(i) + " out of range");
        }
        selected[i] = 1;
    }

    SplitResult r;
    r.set.sh_degree = set.sh_degree;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!selected[i]) {
            append(r.set, set, i);
            r.origin.push_back(i);
        }
    }
    const double shrink = std::log(cfg.scale_shrink);
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!selected[i]) continue;
        const Gaussian& parent = set.gaussians[i];
        const Vec3 axis = long_axis(parent);
        const Neighbor nb = cloud.index().nearest(parent.position);
        const Vec3& normal = cloud.normals()[nb.index];

        SplitEvent ev;
        ev.parent = i;
        ev.lidar_normal = normal;
        const Vec3 tangent = project_to_tangent(axis, normal);
        if (tangent.norm() < 1e-9 * axis.norm()) {
            ev.degenerate = true;
            ev.direction = axis;
            std::ostringstream msg;
            msg << "split: Gaussian " << i << " long axis parallel to LiDAR normal, splitting along the long axis";
            log_message(LogLevel::Debug, msg.str());
        } else {
            ev.direction = tangent.normalized();
        }
        const Vec3 delta = cfg.split_offset * std::exp(parent.log_scale.maxCoeff()) * ev.direction;
        for (int s = 0; s < 2; ++s) {
            Gaussian child = parent;
            child.position = parent.position + (s == 0 ? delta : Vec3(-delta));
            child.log_scale = parent.log_scale.array() - shrink;
            r.set.gaussians.push_back(child);
            r.set.grad_accum.push_back(0.0);
            r.set.weight_accum.push_back(0.0);
            r.origin.push_back(kNoOrigin);
            (s == 0 ? ev.child_a : ev.child_b) = child.position;
        }
        r.events.push_back(ev);
    }
    return r;
}

DensifyResult densify_pass(const GaussianSet& set, const LidarCloud& cloud, const DensifyConfig& cfg) {
    cfg.validate();
    DensifyResult out;
    const auto picked = select_split(set, cfg);
    out.selected = picked.size();
    SplitResult s = split(set, picked, cloud, cfg);
    PruneResult p = prune(s.set, cloud, cfg);
    out.pruned = p.removed.size();
    out.set = std::move(p.set);
    out.origin.reserve(p.origin.size());
    for (auto o : p.origin) out.origin.push_back(s.origin[o]);
    out.splits = std::move(s.events);
    out.set.reset_accumulators();
    if (out.set.empty()) {
        throw Error("densification removed every Gaussian; re-initialize from the LiDAR cloud or raise sigma/lower "
                    "epsilon");
    }
    return out;
}

GaussianSet init_from_lidar(const LidarCloud& cloud, const InitConfig& cfg) {
    if (cloud.empty()) {
        throw Error("init_from_lidar: LiDAR cloud is empty");
    }
    if (!(cfg.opacity > 0.0 && cfg.opacity < 1.0)) {
        throw Error("init_from_lidar: opacity must lie in (0, 1)");
    }
    if (cfg.sh_degree < 0 || cfg.sh_degree > kMaxShDegree) {
        throw Error("init_from_lidar: sh_degree must be in [0, 3]");
    }
    std::vector<std::size_t> ids(cloud.size());
    std::iota(ids.begin(), ids.end(), 0);
    if (cfg.max_points > 0 && cfg.max_points < ids.size()) {
        std::mt19937_64 rng(cfg.seed);
        // partial Fisher-Yates
        for (std::size_t i = 0; i < cfg.max_points; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
            std::swap(ids[i], ids[pick(rng)]);
        }
        ids.resize(cfg.max_points);
        std::sort(ids.begin(), ids.end());
    }

    GaussianSet set;
    set.sh_degree = cfg.sh_degree;
    const Vec3 dc = rgb_to_sh0(Vec3::Constant(cfg.gray));
    for (auto id : ids) {
        const Vec3& p = cloud.points()[id];
        const auto nn = cloud.index().knn(p, 4); // includes the point itself
        double spacing = 0.0;
        int count = 0;
        for (const auto& n : nn) {
            if (n.index == id) continue;
            if (count == 3) break;
            spacing += n.distance;
            ++count;
        }
        spacing = count > 0 ? spacing / count : 1.0;
        spacing = std::max(spacing, 1e-4);
        Gaussian g = make_gaussian(p, Vec4(1, 0, 0, 0), Vec3::Constant(spacing), cfg.opacity);
        g.sh[0] = dc;
        set.push_back(g);
    }
    return set;
}

} // namespace lsplat
