// Acceptance suite. Prints one PASS/FAIL line per criterion.

#include "oracles.hpp"

#include "lidarsplat/align.hpp"
#include "lidarsplat/camera.hpp"
#include "lidarsplat/eval.hpp"
#include "lidarsplat/lidar_maps.hpp"
#include "lidarsplat/log.hpp"
#include "lidarsplat/losses.hpp"
#include "lidarsplat/sh.hpp"
#include "lidarsplat/testbed.hpp"
#include "lidarsplat/trainer.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

using namespace lsplat;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Context {
    int threads = 1;
    fs::path work;
    std::uint64_t scene_seed = 42;
    int iterations = 3000;
    int sweep_iterations = 1000;

    std::optional<SyntheticScene> scene_cache;
    std::optional<DatasetSplit> split_cache;

    // training runs whose densify passes and checkpoints feed criteria 3 and 4
    struct LoggedRun {
        std::string name;
        TrainResult result;
        double sigma = 1.0;
        double epsilon = 0.005;
        int densify_start = 0, densify_stop = 0, densify_interval = 50;
    };
    std::vector<LoggedRun> runs;
    std::optional<TrainResult> e2e;
    std::optional<TrainResult> ablation_full;

    const SyntheticScene& scene() {
        if (!scene_cache) scene_cache = make_scene(standard_scene_spec(scene_seed));
        return *scene_cache;
    }
    const DatasetSplit& split() {
        if (!split_cache) split_cache = split_views(scene().cameras.size(), scene_seed);
        return *split_cache;
    }

    RenderSettings render() const {
        RenderSettings s;
        s.threads = threads;
        return s;
    }

    // Shared training configuration for the standard scene.
    TrainConfig config(int iters) const {
        TrainConfig cfg;
        cfg.iterations = iters;
        cfg.densify_start = std::min(500, iters / 2);
        cfg.densify.tau_pos = 0.5;
        cfg.validation_interval = 0;
        cfg.render = render();
        return cfg;
    }

    void log_run(const std::string& name, const TrainResult& r, const TrainConfig& cfg) {
        runs.push_back({name, r, cfg.densify.sigma, cfg.densify.epsilon, cfg.densify_start, cfg.resolved_densify_stop(),
                        cfg.densify.interval});
    }
};

std::vector<TrainView> views_for(const LidarCloud& cloud, const std::vector<DistortedCamera>& cams,
                                 const std::vector<Image>& images, const std::vector<std::size_t>& ids) {
    return make_train_views(cloud, cams, images, ids);
}

// Mean over views of the mean |rendered - true| depth where both exist.
double depth_mae(const GaussianSet& set, const SyntheticScene& scene, const std::vector<std::size_t>& ids,
                 const RenderSettings& st) {
    double sum = 0.0;
    std::size_t n = 0;
    for (auto i : ids) {
        const RenderOutput out = render(set, scene.cameras[i], st);
        const double e = masked_mean_abs_error(out.depth, scene.geometry[i].depth, out.valid, scene.geometry[i].valid);
        if (std::isfinite(e)) {
            sum += e;
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : std::nan("");
}

std::vector<std::size_t> held_out(const DatasetSplit& s) {
    std::vector<std::size_t> ids = s.val;
    ids.insert(ids.end(), s.test.begin(), s.test.end());
    return ids;
}

// ---------------------------------------------------------------------------
// 1. analytic gradients against central differences

double& param(Gaussian& g, int k) {
    if (k < 3) return g.position[k];
    if (k < 7) return g.rotation[k - 3];
    if (k < 10) return g.log_scale[k - 7];
    if (k == 10) return g.logit_opacity;
    return g.sh[(k - 11) / 3][(k - 11) % 3];
}

double analytic(const GaussianGradients& gr, std::size_t i, int k) {
    if (k < 3) return gr.position[i][k];
    if (k < 7) return gr.rotation[i][k - 3];
    if (k < 10) return gr.log_scale[i][k - 7];
    if (k == 10) return gr.logit_opacity[i];
    return gr.sh[i][(k - 11) / 3][(k - 11) % 3];
}

struct GradTally {
    std::size_t checked = 0, bad = 0, skipped = 0;
    double worst = 0.0;
    std::string first_bad;

    void add(const std::string& what, double an, double fd) {
        ++checked;
        const double scale = std::max(std::abs(an), std::abs(fd));
        worst = std::max(worst, std::abs(an - fd) / std::max(scale, 1e-6));
        if (!oracle::grad_close(an, fd)) {
            if (bad++ == 0) first_bad = what + ": analytic " + fmt(an, 8) + " numeric " + fmt(fd, 8);
        }
    }
};

// Inner product of every render buffer with fixed random weights.
struct LinearLoss {
    BufferGradients g;
    LinearLoss(int w, int h, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const std::size_t n = static_cast<std::size_t>(w) * h;
        g.color = Image(w, h, 3);
        for (auto& v : g.color.data) v = u(rng);
        g.depth.resize(n);
        g.normal.resize(n);
        g.alpha.resize(n);
        for (std::size_t p = 0; p < n; ++p) {
            g.depth[p] = 0.2 * u(rng);
            g.normal[p] = Vec3(u(rng), u(rng), u(rng));
            g.alpha[p] = u(rng);
        }
    }
    double operator()(const RenderOutput& out) const {
        double s = 0.0;
        for (std::size_t i = 0; i < out.color.data.size(); ++i) s += g.color.data[i] * out.color.data[i];
        for (std::size_t p = 0; p < out.alpha.size(); ++p)
            s += g.depth[p] * out.depth[p] + g.normal[p].dot(out.normal[p]) + g.alpha[p] * out.alpha[p];
        return s;
    }
};

void check_rasterizer(GradTally& t, std::mt19937_64& rng) {
    RenderSettings st;
    st.min_alpha = 0.0;
    const double h = 1e-4;
    for (int degree = 0; degree <= 3; ++degree) {
        const DistortedCamera cam = oracle::small_camera(32, 32, 0.05, 0.005);
        GaussianSet set = oracle::random_scene(rng, 20, degree, 3.0, 6.0, 1.0);
        const LinearLoss loss(32, 32, 100 + degree);
        const RenderOutput out = render(set, cam, st);
        const GaussianGradients gr = render_backward(set, cam, out, loss.g, st);
        const int nparam = 11 + 3 * sh_coeff_count(degree);
        for (std::size_t i = 0; i < set.size(); ++i) {
            for (int k = 0; k < nparam; ++k) {
                const double base = param(set.gaussians[i], k);
                const auto render_at = [&](double dx) {
                    param(set.gaussians[i], k) = base + dx;
                    RenderOutput o = render(set, cam, st);
                    param(set.gaussians[i], k) = base;
                    return o;
                };
                auto fd = oracle::render_difference(render_at, loss, out.valid, h);
                if (!fd) fd = oracle::render_difference(render_at, loss, out.valid, h * 1e-2);
                if (!fd) {
                    ++t.skipped;
                    continue;
                }
                t.add("rasterizer degree " + std::to_string(degree) + " gaussian " + std::to_string(i) + " param " +
                          std::to_string(k),
                      analytic(gr, i, k), *fd);
            }
        }
    }
}

Image random_image(std::mt19937_64& rng, int w, int h) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image im(w, h, 3);
    for (auto& v : im.data) v = u(rng);
    return im;
}

void check_losses(GradTally& t, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int w = 32, hgt = 32;
    const std::size_t n = static_cast<std::size_t>(w) * hgt;

    // photometric terms with respect to the rendered image
    {
        Image a = random_image(rng, w, hgt);
        const Image b = random_image(rng, w, hgt);
        Image g1, g2;
        l1_loss(a, b, &g1);
        dssim_loss(a, b, &g2);
        const double h = 1e-6;
        for (std::size_t i = 0; i < a.data.size(); i += 7) {
            const double base = a.data[i];
            if (std::abs(base - b.data[i]) < 10 * h) continue; // L1 kink
            a.data[i] = base + h;
            const double l1_hi = l1_loss(a, b), ds_hi = dssim_loss(a, b);
            a.data[i] = base - h;
            const double l1_lo = l1_loss(a, b), ds_lo = dssim_loss(a, b);
            a.data[i] = base;
            t.add("L1 pixel " + std::to_string(i), g1.data[i], (l1_hi - l1_lo) / (2 * h));
            t.add("D-SSIM pixel " + std::to_string(i), g2.data[i], (ds_hi - ds_lo) / (2 * h));
        }
    }
    // depth, both modes
    for (const auto mode : {DepthLossMode::L1, DepthLossMode::Literal}) {
        std::vector<double> d(n), target(n);
        std::vector<std::uint8_t> mask(n);
        for (std::size_t p = 0; p < n; ++p) {
            d[p] = 2.0 + 5.0 * u(rng);
            target[p] = 2.0 + 5.0 * u(rng);
            mask[p] = u(rng) < 0.7;
        }
        std::vector<double> g;
        depth_loss(d, target, mask, mode, &g);
        const double h = 1e-7;
        for (std::size_t p = 0; p < n; p += 5) {
            if (std::abs(d[p] - target[p]) < 1e-4 || std::abs(1.0 - d[p] * target[p]) < 1e-4) continue;
            const double base = d[p];
            d[p] = base + h;
            const double hi = depth_loss(d, target, mask, mode);
            d[p] = base - h;
            const double lo = depth_loss(d, target, mask, mode);
            d[p] = base;
            t.add(std::string("depth ") + (mode == DepthLossMode::L1 ? "L1" : "literal") + " pixel " +
                      std::to_string(p),
                  g[p], (hi - lo) / (2 * h));
        }
    }
    // normal
    {
        std::normal_distribution<double> gd(0.0, 1.0);
        std::vector<Vec3> r(n), target(n);
        std::vector<std::uint8_t> mask(n);
        for (std::size_t p = 0; p < n; ++p) {
            r[p] = Vec3(gd(rng), gd(rng), gd(rng)).normalized();
            target[p] = Vec3(gd(rng), gd(rng), gd(rng)).normalized();
            mask[p] = u(rng) < 0.7;
        }
        std::vector<Vec3> g;
        normal_loss(r, target, mask, &g);
        const double h = 1e-7;
        for (std::size_t p = 0; p < n; p += 5) {
            const Vec3 diff = r[p] - target[p];
            if (diff.cwiseAbs().minCoeff() < 1e-4 || std::abs(1.0 - r[p].dot(target[p])) < 1e-4) continue;
            for (int k = 0; k < 3; ++k) {
                const double base = r[p][k];
                r[p][k] = base + h;
                const double hi = normal_loss(r, target, mask);
                r[p][k] = base - h;
                const double lo = normal_loss(r, target, mask);
                r[p][k] = base;
                t.add("normal pixel " + std::to_string(p), g[p][k], (hi - lo) / (2 * h));
            }
        }
    }
    // scale
    {
        std::uniform_real_distribution<double> ls(-3.0, 0.5);
        GaussianSet set;
        for (int i = 0; i < 20; ++i) {
            Gaussian g;
            g.log_scale = Vec3(ls(rng), ls(rng), ls(rng));
            set.push_back(g);
        }
        std::vector<Vec3> g;
        scale_loss(set, &g);
        const double h = 1e-6;
        for (std::size_t i = 0; i < set.size(); ++i) {
            for (int k = 0; k < 3; ++k) {
                double& v = set.gaussians[i].log_scale[k];
                const double base = v;
                v = base + h;
                const double hi = scale_loss(set);
                v = base - h;
                const double lo = scale_loss(set);
                v = base;
                t.add("scale gaussian " + std::to_string(i), g[i][k], (hi - lo) / (2 * h));
            }
        }
    }
}

// Total loss through the renderer. Targets sit a fixed offset away from the
// current render so no absolute-value term is near its kink.
void check_chain(GradTally& t, std::mt19937_64& rng) {
    RenderSettings st;
    st.min_alpha = 0.0;
    const DistortedCamera cam = oracle::small_camera(32, 32, 0.05, 0.005);
    GaussianSet set = oracle::random_scene(rng, 20, 2, 3.0, 6.0, 1.0);
    const RenderOutput out = render(set, cam, st);
    Image target = out.color;
    for (auto& v : target.data) v += 0.3;
    DepthNormalMaps lidar(32, 32);
    for (std::size_t p = 0; p < lidar.depth.size(); ++p) {
        lidar.valid[p] = out.valid[p] && out.normal[p].squaredNorm() > 0.0 && p % 3 != 0;
        lidar.depth[p] = out.depth[p] + 1.0;
        Vec3 d;
        for (int k = 0; k < 3; ++k) d[k] = out.normal[p][k] >= 0.0 ? 0.5 : -0.5;
        lidar.normal[p] = out.normal[p] + d;
    }
    LossWeights w;
    w.alpha = 1.0;
    w.beta = 0.5;
    w.gamma = 0.5;
    const TotalLoss tl = total_loss(out, target, lidar, set, w);
    const GaussianGradients gr = render_backward(set, cam, out, tl.buffers, st);
    const auto value = [&](const RenderOutput& o) { return total_loss(o, target, lidar, set, w).parts.total; };
    const double h = 1e-5;
    const int nparam = 11 + 3 * sh_coeff_count(set.sh_degree);
    for (std::size_t i = 0; i < set.size(); ++i) {
        for (int k = 0; k < nparam; ++k) {
            const double base = param(set.gaussians[i], k);
            const auto render_at = [&](double dx) {
                param(set.gaussians[i], k) = base + dx;
                RenderOutput o = render(set, cam, st);
                param(set.gaussians[i], k) = base;
                return o;
            };
            // the scale term reads the set, so it must see the perturbed value too
            const auto loss_at = [&](double dx) {
                param(set.gaussians[i], k) = base + dx;
                const double v = value(render(set, cam, st));
                param(set.gaussians[i], k) = base;
                return v;
            };
            if (!oracle::render_difference(render_at, [](const RenderOutput&) { return 0.0; }, out.valid, h)) {
                ++t.skipped;
                continue;
            }
            const double fd = (loss_at(h) - loss_at(-h)) / (2 * h);
            double an = analytic(gr, i, k);
            if (k >= 7 && k < 10) an += tl.log_scale_grad[i][k - 7];
            t.add("total loss gaussian " + std::to_string(i) + " param " + std::to_string(k), an, fd);
        }
    }
}

DistortedCamera random_camera(std::mt19937_64& rng, RadialUnits units) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    DistortedCamera cam;
    cam.width = 160;
    cam.height = 120;
    cam.fx = 150.0 + 20.0 * u(rng);
    cam.fy = cam.fx * (1.0 + 0.05 * u(rng));
    cam.cx = 80.0 + 3.0 * u(rng);
    cam.cy = 60.0 + 3.0 * u(rng);
    cam.radial_units = units;
    if (units == RadialUnits::Normalized) {
        cam.k1 = 0.1 * u(rng);
        cam.k2 = 0.02 * u(rng);
    } else {
        cam.k1 = 4e-6 * u(rng);
        cam.k2 = 2e-11 * u(rng);
    }
    cam.rotation = Eigen::AngleAxisd(0.4 * u(rng), Vec3(u(rng), u(rng), u(rng)).normalized()).toRotationMatrix();
    cam.translation = Vec3(u(rng), u(rng), 6.0 + u(rng));
    return cam;
}

void check_jacobian(GradTally& t, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double h = 1e-6;
    for (const auto units : {RadialUnits::Pixel, RadialUnits::Normalized}) {
        for (int trial = 0; trial < 50; ++trial) {
            const DistortedCamera c = random_camera(rng, units);
            const Vec3 p(2.0 * u(rng), 1.5 * u(rng), 0.0);
            const Mat23 a = project_jacobian(c, p);
            for (int k = 0; k < 3; ++k) {
                Vec3 e = Vec3::Zero();
                e[k] = h;
                const auto hi = project(c, p + e), lo = project(c, p - e);
                t.add("projection Jacobian u", a(0, k), (hi->u - lo->u) / (2 * h));
                t.add("projection Jacobian v", a(1, k), (hi->v - lo->v) / (2 * h));
            }
        }
    }
}

Outcome criterion_gradients(Context&) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    GradTally rast, loss, chain, jac;
    check_rasterizer(rast, rng);
    check_losses(loss, rng);
    check_chain(chain, rng);
    check_jacobian(jac, rng);
    const double secs = seconds_since(t0);
    Outcome o;
    std::size_t bad = 0, skipped = 0, checked = 0;
    std::string first;
    for (const auto* t : {&rast, &loss, &chain, &jac}) {
        bad += t->bad;
        skipped += t->skipped;
        checked += t->checked;
        if (first.empty()) first = t->first_bad;
    }
    // a step in the valid mask is not differentiable; such checks are skipped but capped
    o.pass = bad == 0 && skipped * 50 <= checked && secs < 120.0;
    o.detail = "rasterizer " + std::to_string(rast.checked) + ", losses " + std::to_string(loss.checked) +
               ", total loss " + std::to_string(chain.checked) + ", Jacobian " + std::to_string(jac.checked) +
               " checks; " + std::to_string(bad) + " outside 2e-3 rel / 1e-6 abs; " + std::to_string(skipped) +
               " skipped at a validity step; " + fmt(secs, 3) + " s";
    if (!first.empty()) o.detail += "; first: " + first;
    return o;
}

// ---------------------------------------------------------------------------
// 2. tiled renderer against the naive reference

Outcome criterion_rasterizer(Context&) {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2);
    const RenderSettings st;
    RenderSettings untruncated;
    untruncated.transmittance_stop = 0.0;
    double worst = 0.0, worst_untruncated = 0.0;
    for (int scene = 0; scene < 50; ++scene) {
        const GaussianSet set = oracle::random_scene(rng, 200, scene % 4);
        const DistortedCamera cam = oracle::small_camera(64, 48, 0.05, 0.005);
        const RenderOutput out = render(set, cam, st);
        const oracle::NaiveImage ref = oracle::naive_render(set, cam, st);
        const oracle::NaiveImage full = oracle::naive_render(set, cam, untruncated);
        for (std::size_t i = 0; i < ref.rgb.size(); ++i) {
            worst = std::max(worst, std::abs(ref.rgb[i] - out.color.data[i]));
            worst_untruncated = std::max(worst_untruncated, std::abs(full.rgb[i] - out.color.data[i]));
        }
        for (std::size_t p = 0; p < ref.alpha.size(); ++p) {
            worst = std::max(worst, std::abs(ref.alpha[p] - out.alpha[p]));
            worst = std::max(worst, std::abs(ref.depth[p] - out.depth[p]));
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 300.0,
            "50 scenes of 200 Gaussians, max colour/alpha/depth difference " + fmt(worst, 3) +
                " (" + fmt(worst_untruncated, 3) + " against compositing without the early stop); " + fmt(secs, 3) +
                " s"};
}

// ---------------------------------------------------------------------------
// 11. end to end (run before 3, 4 and 7, which reuse its logs)

Outcome criterion_end_to_end(Context& ctx) {
    const auto t0 = Clock::now();
    const fs::path data = ctx.work / "e2e_data";
    fs::remove_all(data);
    write_dataset(ctx.scene(), data, ctx.scene_seed);

    Dataset initial = load_dataset(data, "cameras_init");
    std::vector<std::vector<Vec2>> features(initial.cameras.size());
    for (const auto& f : initial.features) features.at(f.image_id).push_back(f.uv);
    const auto rows = alignment_report(initial.cloud, initial.cameras, features);
    fs::create_directories(data / "cameras_aligned");
    std::size_t aligned = 0;
    for (const auto& r : rows) {
        save_camera_json(r.ok ? r.refined : initial.cameras[r.camera], data / "cameras_aligned" / (view_name(r.camera) + ".json"));
        aligned += r.ok;
    }
    const Dataset d = load_dataset(data, "cameras_aligned");

    const auto train_views = views_for(d.cloud, d.cameras, d.images, d.split.train);
    const auto val_views = views_for(d.cloud, d.cameras, d.images, d.split.val);
    TrainConfig cfg = ctx.config(ctx.iterations);
    cfg.checkpoint_interval = 250;
    cfg.checkpoint_dir = ctx.work / "e2e_checkpoints";
    fs::remove_all(cfg.checkpoint_dir);
    TrainResult r = train(init_from_lidar(d.cloud), d.cloud, train_views, val_views, cfg);
    const double val_psnr = mean_psnr(r.set, val_views, cfg.render);
    const double rmse = lidar_rmse(r.set, d.cloud);
    const double secs = seconds_since(t0);
    ctx.log_run("end-to-end", r, cfg);
    ctx.e2e = std::move(r);

    Outcome o;
    o.pass = val_psnr > 25.0 && rmse < cfg.densify.sigma && secs < 1800.0;
    o.detail = std::to_string(aligned) + "/" + std::to_string(rows.size()) + " cameras aligned, " +
               std::to_string(ctx.iterations) + " iterations, " + std::to_string(ctx.e2e->set.size()) +
               " Gaussians; val PSNR " + fmt(val_psnr) + " dB (need > 25), lidar_rmse " + fmt(rmse) + " m (need < " +
               fmt(cfg.densify.sigma) + "); " + fmt(secs, 4) + " s with " + std::to_string(ctx.threads) + " thread(s)";
    return o;
}

// ---------------------------------------------------------------------------
// 7. geometric-loss ablation

Outcome criterion_ablation(Context& ctx) {
    const SyntheticScene& s = ctx.scene();
    const auto& split = ctx.split();
    const auto tv = views_for(s.cloud, s.cameras, s.images, split.train);
    const auto ids = held_out(split);
    const GaussianSet init = init_from_lidar(s.cloud);

    TrainConfig full = ctx.config(ctx.iterations);
    TrainResult rf = train(init, s.cloud, tv, {}, full);
    TrainConfig none = full;
    none.weights.alpha = none.weights.beta = none.weights.gamma = 0.0;
    const TrainResult rn = train(init, s.cloud, tv, {}, none);
    const double e_full = depth_mae(rf.set, s, ids, full.render);
    const double e_none = depth_mae(rn.set, s, ids, full.render);
    ctx.log_run("ablation (100, 0.001, 0.001)", rf, full);
    ctx.log_run("ablation (0, 0, 0)", rn, none);
    return {e_full < e_none, "held-out depth MAE " + fmt(e_full) + " m with geometric losses vs " + fmt(e_none) +
                                 " m without (" + std::to_string(ctx.iterations) + " iterations each)"};
}

// ---------------------------------------------------------------------------
// 3. densification predicate

Outcome criterion_predicate(Context& ctx) {
    std::size_t passes = 0, violations = 0, checkpoints = 0, verified = 0, ckpt_bad = 0;
    double worst_distance = 0.0, min_opacity = 1.0, worst_rmse = 0.0;
    const auto& pts = ctx.scene().cloud.points();
    for (const auto& run : ctx.runs) {
        for (const auto& d : run.result.densify) {
            ++passes;
            worst_distance = std::max(worst_distance, d.max_distance);
            min_opacity = std::min(min_opacity, d.min_opacity);
            if (d.max_distance > run.sigma || d.min_opacity < run.epsilon) ++violations;
        }
        for (const auto& c : run.result.checkpoints) {
            ++checkpoints;
            worst_rmse = std::max(worst_rmse, c.lidar_rmse);
            if (c.lidar_rmse > run.sigma) ++ckpt_bad;
            // Checkpoints written right after a pass are re-verified from disk
            // by brute force. The PLY stores float32, hence the tolerance.
            const bool after_pass = c.iteration >= run.densify_start && c.iteration <= run.densify_stop &&
                                    c.iteration % run.densify_interval == 0;
            if (!after_pass || c.ply.empty()) continue;
            ++verified;
            const GaussianSet set = load_ply_gaussians(c.ply);
            for (const auto& g : set.gaussians) {
                double dist = 0.0;
                oracle::brute_nearest(pts, g.position, &dist);
                if (dist > run.sigma + 1e-5 || g.opacity() < run.epsilon - 1e-6) ++ckpt_bad;
            }
        }
    }
    Outcome o;
    o.pass = passes > 0 && violations == 0 && ckpt_bad == 0;
    o.detail = std::to_string(passes) + " densify passes in " + std::to_string(ctx.runs.size()) +
               " runs, max LiDAR distance " + fmt(worst_distance) + " m, min opacity " + fmt(min_opacity) + "; " +
               std::to_string(checkpoints) + " checkpoints (" + std::to_string(verified) +
               " re-verified by brute force), max lidar_rmse " + fmt(worst_rmse) + " m; violations " +
               std::to_string(violations + ckpt_bad);
    return o;
}

// ---------------------------------------------------------------------------
// 4. split orthogonality

Outcome criterion_orthogonal_split(Context& ctx) {
    std::size_t splits = 0, degenerate = 0, bad = 0;
    double worst = 0.0;
    for (const auto& run : ctx.runs) {
        for (const auto& d : run.result.densify) {
            for (const auto& e : d.splits) {
                if (e.degenerate) {
                    ++degenerate;
                    continue;
                }
                ++splits;
                const double c = std::abs((e.child_a - e.child_b).normalized().dot(e.lidar_normal));
                worst = std::max(worst, c);
                if (c > 1e-9) ++bad;
            }
        }
    }
    return {splits > 0 && bad == 0, std::to_string(splits) + " splits (" + std::to_string(degenerate) +
                                        " degenerate skipped), max |cos| to the LiDAR normal " + fmt(worst, 3)};
}

// ---------------------------------------------------------------------------
// 5. sigma sweep

Outcome criterion_sigma_sweep(Context& ctx) {
    const auto t0 = Clock::now();
    const SyntheticScene& s = ctx.scene();
    const auto tv = views_for(s.cloud, s.cameras, s.images, ctx.split().train);
    const GaussianSet init = init_from_lidar(s.cloud);
    std::vector<std::size_t> counts;
    for (const double sigma : {20.0, 10.0, 2.0, 1.0}) {
        TrainConfig cfg = ctx.config(ctx.sweep_iterations);
        cfg.densify.sigma = sigma;
        TrainResult r = train(init, s.cloud, tv, {}, cfg);
        counts.push_back(r.set.size());
        ctx.log_run("sigma " + fmt(sigma), r, cfg);
    }
    const double secs = seconds_since(t0);
    bool monotone = true;
    for (std::size_t i = 1; i < counts.size(); ++i) monotone = monotone && counts[i] <= counts[i - 1];
    std::string detail = "final counts for sigma 20, 10, 2, 1 m:";
    for (auto c : counts) detail += " " + std::to_string(c);
    detail += " (" + std::to_string(ctx.sweep_iterations) + " iterations each); " + fmt(secs, 4) + " s";
    return {monotone && secs < 1800.0, detail};
}

// ---------------------------------------------------------------------------
// 6. LiDAR density sweep

Outcome criterion_density_sweep(Context& ctx) {
    const SyntheticScene& s = ctx.scene();
    std::vector<double> rmse;
    for (const double fraction : {0.10, 0.25, 0.50, 0.75, 1.00}) {
        const LidarCloud cloud = downsample_cloud(s.cloud, fraction, ctx.scene_seed);
        const auto tv = views_for(cloud, s.cameras, s.images, ctx.split().train);
        TrainConfig cfg = ctx.config(ctx.sweep_iterations);
        const TrainResult r = train(init_from_lidar(cloud), cloud, tv, {}, cfg);
        // scored against the full cloud so every run shares one reference
        rmse.push_back(lidar_rmse(r.set, s.cloud));
    }
    bool monotone = true;
    for (std::size_t i = 1; i < rmse.size(); ++i) monotone = monotone && rmse[i] <= rmse[i - 1];
    std::string detail = "lidar_rmse at 10/25/50/75/100% density:";
    for (auto v : rmse) detail += " " + fmt(v);
    detail += " m (" + std::to_string(ctx.sweep_iterations) + " iterations each)";
    return {monotone, detail};
}

// ---------------------------------------------------------------------------
// 8. pose recovery and the misalignment penalty

DistortedCamera view_camera() {
    DistortedCamera cam = oracle::small_camera(64, 48, 0.05, 0.005);
    cam.rotation = Eigen::AngleAxisd(0.2, Vec3(1, -1, 0.3).normalized()).toRotationMatrix();
    cam.translation = Vec3(0.3, -0.2, 8.0);
    return cam;
}

std::vector<Correspondence> exact_correspondences(const DistortedCamera& cam, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Correspondence> out;
    for (int i = 0; i < n; ++i) {
        const Vec2 px(u(rng) * cam.width, u(rng) * cam.height);
        const Vec3 ray = pixel_ray_camera(cam, px);
        const Vec3 p_cam = ray / ray.z() * (5.0 + 7.0 * u(rng));
        Correspondence c;
        c.lidar_point = cam.rotation.transpose() * (p_cam - cam.translation);
        c.feature_uv = project_camera(cam, p_cam);
        c.feature_index = static_cast<std::size_t>(i);
        out.push_back(c);
    }
    return out;
}

Outcome criterion_alignment(Context& ctx) {
    const DistortedCamera truth = view_camera();
    const double deg = std::acos(-1.0) / 180.0;
    double worst_rot = 0.0, worst_trans = 0.0;
    int recovered = 0, trials = 0;
    for (const double angle : {0.5, 1.0, 2.0, 5.0}) {
        for (const double shift : {0.1, 0.5, 2.0}) {
            for (std::uint64_t seed = 0; seed < 5; ++seed) {
                const auto corr = exact_correspondences(truth, 100, 1000 + seed);
                const DistortedCamera start = perturb_pose(truth, angle * deg, shift, 2000 + seed);
                const RefineResult r = refine_pose(start, corr);
                const double er = rotation_distance(r.camera.rotation, truth.rotation);
                const double et = (r.camera.center() - truth.center()).norm();
                worst_rot = std::max(worst_rot, er);
                worst_trans = std::max(worst_trans, et);
                recovered += er < 1e-4 && et < 1e-4;
                ++trials;
            }
        }
    }
    double rms_lo = 1e9, rms_hi = 0.0;
    int in_band = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto corr = exact_correspondences(truth, 200, 3000 + seed);
        std::mt19937_64 rng(4000 + seed);
        std::normal_distribution<double> g(0.0, 0.5);
        for (auto& c : corr) c.feature_uv += Vec2(g(rng), g(rng));
        const RefineResult r = refine_pose(perturb_pose(truth, 2.0 * deg, 0.5, 5000 + seed), corr);
        rms_lo = std::min(rms_lo, r.final_rms);
        rms_hi = std::max(rms_hi, r.final_rms);
        in_band += r.final_rms >= 0.3 && r.final_rms <= 0.7;
    }

    // training with every training camera turned by 5 px against aligned training
    const SyntheticScene& s = ctx.scene();
    const auto& split = ctx.split();
    std::vector<DistortedCamera> shifted = s.cameras;
    for (auto i : split.train) {
        DistortedCamera& c = shifted[i];
        c.rotation = rotation_exp(Vec3(0.0, std::atan(5.0 / c.fx), 0.0)) * c.rotation;
        c.translation = rotation_exp(Vec3(0.0, std::atan(5.0 / c.fx), 0.0)) * c.translation;
    }
    const GaussianSet init = init_from_lidar(s.cloud);
    const TrainConfig cfg = ctx.config(ctx.sweep_iterations);
    const auto good_views = views_for(s.cloud, s.cameras, s.images, split.train);
    const auto bad_views = views_for(s.cloud, shifted, s.images, split.train);
    const TrainResult good = train(init, s.cloud, good_views, {}, cfg);
    const TrainResult bad = train(init, s.cloud, bad_views, {}, cfg);
    const auto ids = held_out(split);
    const double e_good = depth_mae(good.set, s, ids, cfg.render);
    const double e_bad = depth_mae(bad.set, s, ids, cfg.render);

    Outcome o;
    o.pass = recovered == trials && in_band == 20 && e_bad > e_good;
    o.detail = std::to_string(recovered) + "/" + std::to_string(trials) +
               " perturbations up to 5 deg / 2 m recovered (worst " + fmt(worst_rot, 3) + " rad, " +
               fmt(worst_trans, 3) + " m); 0.5 px noise rms in [" + fmt(rms_lo) + ", " + fmt(rms_hi) + "] px, " +
               std::to_string(in_band) + "/20 in [0.3, 0.7]; depth MAE " + fmt(e_bad) + " m misaligned vs " +
               fmt(e_good) + " m aligned (train PSNR " + fmt(mean_psnr(bad.set, bad_views, cfg.render)) + " vs " +
               fmt(mean_psnr(good.set, good_views, cfg.render)) + " dB)";
    return o;
}

// ---------------------------------------------------------------------------
// 9. camera model

Outcome criterion_camera(Context&) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    int points = 0;
    for (const auto units : {RadialUnits::Pixel, RadialUnits::Normalized}) {
        for (int c = 0; c < 10; ++c) {
            const DistortedCamera cam = random_camera(rng, units);
            for (int i = 0; i < 1000; ++i) {
                const Vec2 q(cam.width * u(rng), cam.height * u(rng));
                worst = std::max(worst, (distort(cam, undistort(cam, q)) - q).norm());
                ++points;
            }
        }
    }
    // k1 = k2 = 0 against the pinhole formula on inputs where every step is exact
    DistortedCamera pin;
    pin.width = 640;
    pin.height = 480;
    pin.fx = 512.0;
    pin.fy = 384.0;
    pin.cx = 320.0;
    pin.cy = 240.0;
    std::size_t mismatches = 0, exact_checks = 0;
    for (const auto units : {RadialUnits::Pixel, RadialUnits::Normalized}) {
        pin.radial_units = units;
        for (int x = -8; x <= 8; ++x) {
            for (int y = -8; y <= 8; ++y) {
                for (const double z : {1.0, 2.0, 4.0, 8.0}) {
                    const auto p = project(pin, Vec3(x, y, z));
                    const double u_ref = pin.fx * x / z + pin.cx;
                    const double v_ref = pin.fy * y / z + pin.cy;
                    ++exact_checks;
                    if (!p || p->u != u_ref || p->v != v_ref || p->depth != z) ++mismatches;
                    const Vec2 ideal(x + 300.0, y + 200.0);
                    if (distort(pin, ideal) != ideal || undistort(pin, ideal) != ideal) ++mismatches;
                }
            }
        }
    }
    return {points >= 10000 && worst < 1e-6 && mismatches == 0,
            std::to_string(points) + " round trips, worst " + fmt(worst, 3) + " px; " + std::to_string(exact_checks) +
                " pinhole projections, " + std::to_string(mismatches) + " bit mismatches"};
}

// ---------------------------------------------------------------------------
// 10. determinism

bool same_files(const fs::path& a, const fs::path& b) {
    auto read = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    return read(a) == read(b);
}

Outcome criterion_determinism(Context& ctx) {
    const SyntheticScene& s = ctx.scene();
    const auto& split = ctx.split();
    const auto tv = views_for(s.cloud, s.cameras, s.images, split.train);
    const auto vv = views_for(s.cloud, s.cameras, s.images, split.val);
    const GaussianSet init = init_from_lidar(s.cloud);
    const int hw = std::max(2u, std::thread::hardware_concurrency());
    const int thread_counts[] = {1, 1, 3, hw};
    std::vector<fs::path> dirs;
    for (std::size_t k = 0; k < std::size(thread_counts); ++k) {
        TrainConfig cfg = ctx.config(300);
        cfg.densify_start = 100;
        cfg.validation_interval = 50;
        cfg.checkpoint_interval = 100;
        cfg.render.threads = thread_counts[k];
        cfg.seed = 7;
        cfg.checkpoint_dir = ctx.work / ("determinism_" + std::to_string(k));
        fs::remove_all(cfg.checkpoint_dir);
        const TrainResult r = train(init, s.cloud, tv, vv, cfg);
        write_log_csv(r.log, cfg.checkpoint_dir / "log.csv");
        dirs.push_back(cfg.checkpoint_dir);
    }
    std::size_t files = 0, differ = 0;
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
        for (std::size_t k = 1; k < dirs.size(); ++k) {
            ++files;
            const fs::path other = dirs[k] / entry.path().filename();
            if (!fs::exists(other) || !same_files(entry.path(), other)) ++differ;
        }
    }
    return {files > 0 && differ == 0, "300-iteration runs with 1, 1, 3 and " + std::to_string(hw) + " threads: " +
                                          std::to_string(files) + " log/checkpoint comparisons, " +
                                          std::to_string(differ) + " differ"};
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*run)(Context&);
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    std::vector<int> known;
    Context ctx;
    ctx.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::string work = (fs::temp_directory_path() / "lidarsplat_acceptance").string();
    app.add_option("--only", only, "Run only these criteria (3, 4 and 7 also run 11's training)")->delimiter(',');
    app.add_option("--known-failure", known,
                   "Criteria whose FAIL does not set the exit code; they are still run and reported")
        ->delimiter(',');
    app.add_option("--threads", ctx.threads, "Rasterizer threads for training runs");
    app.add_option("--iterations", ctx.iterations, "Iterations of the end-to-end and ablation runs");
    app.add_option("--sweep-iterations", ctx.sweep_iterations, "Iterations of each sweep run");
    app.add_option("--work", work, "Scratch directory");
    CLI11_PARSE(app, argc, argv);
    ctx.work = work;
    fs::create_directories(ctx.work);
    set_log_sink([](LogLevel level, const std::string& msg) {
        if (level >= LogLevel::Warning) std::cerr << "warning: " << msg << "\n";
    });

    // 11 and 7 come first: 3 and 4 check every split and pass they logged.
    const Criterion all[] = {
        {1, "gradient fidelity", criterion_gradients},
        {2, "rasterizer oracle equivalence", criterion_rasterizer},
        {9, "camera model", criterion_camera},
        {11, "end-to-end", criterion_end_to_end},
        {7, "geometric-loss ablation", criterion_ablation},
        {5, "sigma sweep trend", criterion_sigma_sweep},
        {3, "densification predicate invariant", criterion_predicate},
        {4, "split orthogonal to the LiDAR normal", criterion_orthogonal_split},
        {6, "LiDAR density sweep trend", criterion_density_sweep},
        {8, "alignment recovery", criterion_alignment},
        {10, "determinism", criterion_determinism},
    };
    std::set<int> selected(only.begin(), only.end());
    if (selected.count(3) || selected.count(4)) selected.insert(11);
    const std::set<int> known_set(known.begin(), known.end());

    std::map<int, std::pair<std::string, Outcome>> results;
    for (const auto& c : all) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cerr << "criterion " << c.id << " finished in " << fmt(seconds_since(t0), 4) << " s\n";
        results[c.id] = {c.name, o};
    }

    int failed = 0;
    for (const auto& [id, r] : results) {
        const auto& [name, o] = r;
        const bool excused = !o.pass && known_set.count(id);
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << id << "  " << name << ": " << o.detail
                  << (excused ? " [known failure]" : "") << "\n";
        if (!o.pass && !excused) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
