#include "lidarsplat/trainer.hpp"

#include "lidarsplat/eval.hpp"
#include "lidarsplat/log.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace lsplat {

namespace {

constexpr std::size_t kPos = 0, kRot = 3, kScale = 7, kOpacity = 10, kSh = 11;

void pack(const GaussianSet& set, std::vector<double>& params) {
    params.resize(set.size() * kParamsPerGaussian);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Gaussian& g = set.gaussians[i];
        double* p = params.data() + i * kParamsPerGaussian;
        for (int k = 0; k < 3; ++k) p[kPos + k] = g.position[k];
        for (int k = 0; k < 4; ++k) p[kRot + k] = g.rotation[k];
        for (int k = 0; k < 3; ++k) p[kScale + k] = g.log_scale[k];
        p[kOpacity] = g.logit_opacity;
        for (int k = 0; k < kMaxShCoeffs; ++k)
            for (int c = 0; c < 3; ++c) p[kSh + 3 * k + c] = g.sh[k][c];
    }
}

void unpack(const std::vector<double>& params, GaussianSet& set) {
    for (std::size_t i = 0; i < set.size(); ++i) {
        Gaussian& g = set.gaussians[i];
        const double* p = params.data() + i * kParamsPerGaussian;
        for (int k = 0; k < 3; ++k) g.position[k] = p[kPos + k];
        for (int k = 0; k < 4; ++k) g.rotation[k] = p[kRot + k];
        for (int k = 0; k < 3; ++k) g.log_scale[k] = p[kScale + k];
        g.logit_opacity = p[kOpacity];
        for (int k = 0; k < kMaxShCoeffs; ++k)
            for (int c = 0; c < 3; ++c) g.sh[k][c] = p[kSh + 3 * k + c];
        g.normalize();
    }
}

void pack_grads(const GaussianGradients& gr, const std::vector<Vec3>& scale_grad, std::vector<double>& out) {
    out.assign(gr.size() * kParamsPerGaussian, 0.0);
    for (std::size_t i = 0; i < gr.size(); ++i) {
        double* p = out.data() + i * kParamsPerGaussian;
        for (int k = 0; k < 3; ++k) p[kPos + k] = gr.position[i][k];
        for (int k = 0; k < 4; ++k) p[kRot + k] = gr.rotation[i][k];
        for (int k = 0; k < 3; ++k) p[kScale + k] = gr.log_scale[i][k] + scale_grad[i][k];
        p[kOpacity] = gr.logit_opacity[i];
        for (int k = 0; k < kMaxShCoeffs; ++k)
            for (int c = 0; c < 3; ++c) p[kSh + 3 * k + c] = gr.sh[i][k][c];
    }
}

void fill_lrs(std::size_t count, const LearningRates& lr, double pos_lr, std::vector<double>& out) {
    out.resize(count * kParamsPerGaussian);
    for (std::size_t i = 0; i < count; ++i) {
        double* p = out.data() + i * kParamsPerGaussian;
        for (int k = 0; k < 3; ++k) p[kPos + k] = pos_lr;
        for (int k = 0; k < 4; ++k) p[kRot + k] = lr.rotation;
        for (int k = 0; k < 3; ++k) p[kScale + k] = lr.scale;
        p[kOpacity] = lr.opacity;
        for (int k = 0; k < kMaxShCoeffs; ++k)
            for (int c = 0; c < 3; ++c) p[kSh + 3 * k + c] = k == 0 ? lr.sh_dc : lr.sh_rest;
    }
}

void remap_state(AdamState& state, const std::vector<std::size_t>& origin) {
    std::vector<double> m(origin.size() * kParamsPerGaussian, 0.0), v(origin.size() * kParamsPerGaussian, 0.0);
    for (std::size_t j = 0; j < origin.size(); ++j) {
        if (origin[j] == kNoOrigin) continue;
        std::copy_n(state.m.begin() + origin[j] * kParamsPerGaussian, kParamsPerGaussian,
                    m.begin() + j * kParamsPerGaussian);
        std::copy_n(state.v.begin() + origin[j] * kParamsPerGaussian, kParamsPerGaussian,
                    v.begin() + j * kParamsPerGaussian);
    }
    state.m = std::move(m);
    state.v = std::move(v);
}

std::string checkpoint_stem(int iteration) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "checkpoint_%06d", iteration);
    return buf;
}

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, std::span<const double> lrs,
               const AdamOptions& o) {
    if (grads.size() != params.size() || lrs.size() != params.size()) {
        throw Error("adam_step: parameter, gradient and learning-rate sizes differ");
    }
    if (state.m.size() != params.size()) state.m.assign(params.size(), 0.0);
    if (state.v.size() != params.size()) state.v.assign(params.size(), 0.0);
    ++state.step;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    const double sqrt_bc2 = std::sqrt(bc2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = o.beta1 * state.m[i] + (1.0 - o.beta1) * g;
        state.v[i] = o.beta2 * state.v[i] + (1.0 - o.beta2) * g * g;
        const double denom = std::sqrt(state.v[i]) / sqrt_bc2 + o.eps;
        params[i] -= lrs[i] / bc1 * state.m[i] / denom;
    }
}

double position_lr(const LearningRates& lr, double extent, int iteration, int steps) {
    const double t = steps > 0 ? std::clamp(static_cast<double>(iteration) / steps, 0.0, 1.0) : 1.0;
    return extent * std::exp(std::log(lr.position_init) * (1.0 - t) + std::log(lr.position_final) * t);
}

void TrainConfig::validate() const {
    if (iterations < 0) throw Error("train config: iterations must be non-negative");
    densify.validate();
    const int stop = resolved_densify_stop();
    if (densify_start < 0 || stop < 0 || (iterations > 0 && stop > iterations)) {
        throw Error("train config: need 0 <= densify_start and densify_stop <= iterations");
    }
    if (max_sh_degree < 0 || max_sh_degree > kMaxShDegree) throw Error("train config: max_sh_degree must be in [0, 3]");
    if (sh_increase_interval < 1) throw Error("train config: sh_increase_interval must be at least 1");
    if (validation_interval < 0 || checkpoint_interval < 0) throw Error("train config: intervals must be >= 0");
    if (!(lr.position_init > 0.0) || !(lr.position_final > 0.0)) throw Error("train config: position rates must be > 0");
    if (scene_extent < 0.0) throw Error("train config: scene_extent must be >= 0");
}

std::vector<TrainView> make_train_views(const LidarCloud& cloud, const std::vector<DistortedCamera>& cams,
                                        const std::vector<Image>& images, const std::vector<std::size_t>& indices) {
    if (cams.size() != images.size()) {
        throw Error("make_train_views: camera and image counts differ");
    }
    std::vector<TrainView> out;
    out.reserve(indices.size());
    for (auto i : indices) {
        if (i >= cams.size()) {
            throw Error("make_train_views: view " + std::to_string(i) + " out of range");
        }
        out.push_back({cams[i], images[i], lidar_maps(cloud, cams[i])});
    }
    return out;
}

double camera_extent(const std::vector<TrainView>& views) {
    if (views.empty()) return 1.0;
    Vec3 mean = Vec3::Zero();
    for (const auto& v : views) mean += v.camera.center();
    mean /= static_cast<double>(views.size());
    double r = 0.0;
    for (const auto& v : views) r = std::max(r, (v.camera.center() - mean).norm());
    return r > 0.0 ? 1.1 * r : 1.0;
}

double mean_psnr(const GaussianSet& set, const std::vector<TrainView>& views, const RenderSettings& settings) {
    if (views.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& v : views) {
        RenderOutput out = render(set, v.camera, settings);
        for (auto& c : out.color.data) c = std::clamp(c, 0.0, 1.0);
        sum += psnr(out.color, v.image);
    }
    return sum / static_cast<double>(views.size());
}

TrainResult train(GaussianSet init, const LidarCloud& cloud, const std::vector<TrainView>& train_views,
                  const std::vector<TrainView>& val_views, const TrainConfig& cfg) {
    cfg.validate();
    init.check_consistent();
    TrainResult result;
    result.set = std::move(init);
    GaussianSet& set = result.set;

    auto checkpoint = [&](int it, const AdamState& state) {
        CheckpointRecord rec;
        rec.iteration = it;
        rec.lidar_rmse = (set.empty() || cloud.empty()) ? 0.0 : lidar_rmse(set, cloud);
        if (!cfg.checkpoint_dir.empty()) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            rec.ply = cfg.checkpoint_dir / (checkpoint_stem(it) + ".ply");
            save_ply_gaussians(set, rec.ply);
            save_adam_state(state, cfg.checkpoint_dir / (checkpoint_stem(it) + ".adam"));
        }
        result.checkpoints.push_back(rec);
    };

    AdamState state;
    state.m.assign(set.size() * kParamsPerGaussian, 0.0);
    state.v.assign(set.size() * kParamsPerGaussian, 0.0);
    if (cfg.iterations == 0) {
        checkpoint(0, state);
        return result;
    }
    if (train_views.empty()) {
        throw Error("train: no training views");
    }
    if (set.empty()) {
        throw Error("train: the initial Gaussian set is empty; initialize from the LiDAR cloud first");
    }
    if (cloud.empty()) {
        throw Error("train: the LiDAR cloud is empty");
    }
    if (set.sh_degree > cfg.max_sh_degree) set.sh_degree = cfg.max_sh_degree;
    const double extent = cfg.scene_extent > 0.0 ? cfg.scene_extent : camera_extent(train_views);
    const int stop = cfg.resolved_densify_stop();

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::vector<double> params, grads, lrs;

    for (int it = 1; it <= cfg.iterations; ++it) {
        if (it % cfg.sh_increase_interval == 0 && set.sh_degree < cfg.max_sh_degree) ++set.sh_degree;
        if (cursor == order.size()) {
            order.resize(train_views.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            for (std::size_t i = order.size() - 1; i > 0; --i) {
                std::uniform_int_distribution<std::size_t> pick(0, i);
                std::swap(order[i], order[pick(rng)]);
            }
            cursor = 0;
        }
        const TrainView& view = train_views[order[cursor++]];

        const RenderOutput out = render(set, view.camera, cfg.render);
        TotalLoss loss = total_loss(out, view.image, view.lidar, set, cfg.weights);
        const std::pair<const char*, double> parts[] = {{"L1", loss.parts.l1},         {"D-SSIM", loss.parts.dssim},
                                                        {"depth", loss.parts.depth},   {"normal", loss.parts.normal},
                                                        {"scale", loss.parts.scale},   {"total", loss.parts.total}};
        for (const auto& [name, value] : parts) {
            if (!std::isfinite(value)) {
                throw NumericError("iteration " + std::to_string(it) + ": " + name + " loss is not finite", value);
            }
        }
        const GaussianGradients g = render_backward(set, view.camera, out, loss.buffers, cfg.render);
        if (it <= stop) accumulate_densify_stats(set, g);

        pack(set, params);
        pack_grads(g, loss.log_scale_grad, grads);
        fill_lrs(set.size(), cfg.lr, position_lr(cfg.lr, extent, it - 1, cfg.iterations), lrs);
        adam_step(params, grads, state, lrs);
        unpack(params, set);

        LogRow row;
        row.iteration = it;
        row.loss = loss.parts;
        row.count = set.size();
        if (!val_views.empty() && cfg.validation_interval > 0 && it % cfg.validation_interval == 0) {
            row.val_psnr = mean_psnr(set, val_views, cfg.render);
            row.has_val = true;
        }

        if (it >= cfg.densify_start && it <= stop && it % cfg.densify.interval == 0) {
            DensifyRecord rec;
            rec.iteration = it;
            rec.before = set.size();
            DensifyResult d = densify_pass(set, cloud, cfg.densify);
            remap_state(state, d.origin);
            set = std::move(d.set);
            rec.after = set.size();
            rec.selected = d.selected;
            rec.pruned = d.pruned;
            rec.splits = std::move(d.splits);
            for (const auto& gs : set.gaussians) {
                rec.max_distance = std::max(rec.max_distance, cloud.index().nearest(gs.position).distance);
                rec.min_opacity = std::min(rec.min_opacity, gs.opacity());
            }
            std::ostringstream msg;
            msg << "iteration " << it << ": densify " << rec.before << " -> " << set.size() << " (split "
                << d.selected << ", pruned " << d.pruned << ")";
            log_message(LogLevel::Debug, msg.str());
            result.densify.push_back(std::move(rec));
            row.count = set.size();
        }
        result.log.push_back(row);

        if (cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0 && it != cfg.iterations) {
            checkpoint(it, state);
        }
    }
    checkpoint(cfg.iterations, state);
    return result;
}

void write_log_csv(const std::vector<LogRow>& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << "iteration,l1,dssim,depth,normal,scale,total,count,val_psnr\n";
    for (const auto& r : log) {
        out << r.iteration << ',' << format_double(r.loss.l1) << ',' << format_double(r.loss.dssim) << ','
            << format_double(r.loss.depth) << ',' << format_double(r.loss.normal) << ','
            << format_double(r.loss.scale) << ',' << format_double(r.loss.total) << ',' << r.count << ','
            << (r.has_val ? format_double(r.val_psnr) : std::string()) << '\n';
    }
}

namespace {
constexpr char kAdamMagic[8] = {'L', 'S', 'A', 'D', 'A', 'M', '0', '1'};
}

void save_adam_state(const AdamState& state, const std::filesystem::path& path) {
    if (state.m.size() != state.v.size()) {
        throw Error("save_adam_state: moment sizes differ");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    const std::int64_t step = state.step;
    const std::uint64_t n = state.m.size();
    out.write(kAdamMagic, sizeof(kAdamMagic));
    out.write(reinterpret_cast<const char*>(&step), sizeof(step));
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(state.m.data()), static_cast<std::streamsize>(n * sizeof(double)));
    out.write(reinterpret_cast<const char*>(state.v.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

AdamState load_adam_state(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kAdamMagic, sizeof(magic)) != 0) {
        throw ParseError("optimizer state: bad magic", 0);
    }
    AdamState s;
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&s.step), sizeof(s.step));
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (!in) throw ParseError("optimizer state: truncated header", 8);
    if (n > (1ULL << 32)) throw ParseError("optimizer state: implausible size", 16);
    s.m.resize(n);
    s.v.resize(n);
    in.read(reinterpret_cast<char*>(s.m.data()), static_cast<std::streamsize>(n * sizeof(double)));
    in.read(reinterpret_cast<char*>(s.v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw ParseError("optimizer state: truncated data", 24);
    return s;
}

} // namespace lsplat
