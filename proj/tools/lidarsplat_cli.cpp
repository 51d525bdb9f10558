#include "lidarsplat/align.hpp"
#include "lidarsplat/eval.hpp"
#include "lidarsplat/image_io.hpp"
#include "lidarsplat/lidar_maps.hpp"
#include "lidarsplat/log.hpp"
#include "lidarsplat/losses.hpp"
#include "lidarsplat/testbed.hpp"
#include "lidarsplat/trainer.hpp"

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace lsplat;

namespace {

struct SynthOptions {
    std::string preset = "standard";
    std::uint64_t seed = 42;
    fs::path out;
    int width = 64, height = 48;
    double density = 8.0;
    double lidar_noise = 0.0;
    double pose_noise_deg = 0.5;
    double pose_noise_m = 0.25;
    int features = 200;
};

struct AlignOptions {
    fs::path data;
    std::string cameras = "cameras_init";
    std::string out_cameras = "cameras_aligned";
    double radius = 3.0;
};

struct TrainOptions {
    fs::path data;
    fs::path out;
    std::string cameras = "cameras";
    fs::path init;
    int iterations = 30000;
    int densify_start = 500;
    int densify_stop = -1;
    int densify_interval = 50;
    double sigma = 1.0;
    double epsilon = 0.005;
    double tau_pos = 0.0002;
    double alpha = 100.0, beta = 0.001, gamma = 0.001, lambda = 0.2;
    bool literal_depth = false;
    int max_sh = 3;
    int checkpoint_interval = 0;
    int validation_interval = 100;
    std::size_t init_points = 0;
    double lidar_fraction = 1.0;
    std::uint64_t seed = 0;
};

struct RenderOptions {
    fs::path data;
    fs::path model;
    fs::path out;
    std::string cameras = "cameras";
    std::string views = "test";
};

struct EvalOptions {
    fs::path data;
    fs::path model;
    fs::path out;
    std::string cameras = "cameras";
    std::string views = "test";
    bool reverse_rmse = false;
};

int g_threads = 1;

RenderSettings render_settings() {
    RenderSettings s;
    s.threads = g_threads;
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

void write_manifest(const CLI::App& sub, const fs::path& dir, std::uint64_t seed) {
    nlohmann::ordered_json j;
    j["command"] = sub.get_name();
    j["seed"] = seed;
    j["threads"] = g_threads;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    std::stringstream lines(sub.config_to_str(true, false));
    std::string line;
    while (std::getline(lines, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string value = line.substr(eq + 1);
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        cfg[line.substr(0, eq)] = value;
    }
    j["config"] = cfg;
    write_text(dir / "manifest.json", j.dump(2) + "\n");
}

nlohmann::json number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    return v;
}

std::vector<std::size_t> select_views(const Dataset& d, const std::string& which) {
    if (which == "train") return d.split.train;
    if (which == "val") return d.split.val;
    if (which == "test") return d.split.test;
    std::vector<std::size_t> out;
    if (which == "all") {
        for (std::size_t i = 0; i < d.cameras.size(); ++i) out.push_back(i);
        return out;
    }
    std::stringstream ss(which);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size() || item.empty()) {
            throw Error("--views: expected train, val, test, all or a comma list of indices, got '" + which + "'");
        }
        if (v >= d.cameras.size()) throw Error("--views: view " + item + " out of range");
        out.push_back(v);
    }
    return out;
}

int run_synth(const SynthOptions& o, const CLI::App& sub) {
    SceneSpec spec;
    if (o.preset == "standard") {
        spec = standard_scene_spec(o.seed);
    } else if (o.preset == "plane") {
        spec = single_plane_spec(o.seed, 4);
    } else {
        throw Error("unknown preset '" + o.preset + "' (standard, plane)");
    }
    spec.width = o.width;
    spec.height = o.height;
    spec.lidar_density = o.density;
    spec.lidar_noise = o.lidar_noise;
    spec.pose_noise_deg = o.pose_noise_deg;
    spec.pose_noise_m = o.pose_noise_m;
    spec.features_per_camera = o.features;
    const SyntheticScene scene = make_scene(spec);
    write_dataset(scene, o.out, o.seed);
    write_manifest(sub, o.out, o.seed);
    std::cout << "wrote " << scene.cameras.size() << " views and " << scene.cloud.size() << " LiDAR points to "
              << o.out.string() << "\n";
    return 0;
}

int run_align(const AlignOptions& o) {
    const Dataset d = load_dataset(o.data, o.cameras);
    std::vector<std::vector<Vec2>> features(d.cameras.size());
    for (const auto& f : d.features) {
        if (f.image_id < 0 || static_cast<std::size_t>(f.image_id) >= d.cameras.size()) {
            throw Error("features.csv: image_id " + std::to_string(f.image_id) + " has no camera");
        }
        features[f.image_id].push_back(f.uv);
    }
    const auto rows = alignment_report(d.cloud, d.cameras, features, o.radius);
    fs::create_directories(o.data / o.out_cameras);
    nlohmann::ordered_json report = nlohmann::ordered_json::array();
    std::size_t failed = 0;
    for (const auto& r : rows) {
        const DistortedCamera& cam = r.ok ? r.refined : d.cameras[r.camera];
        save_camera_json(cam, o.data / o.out_cameras / (view_name(r.camera) + ".json"));
        nlohmann::ordered_json row;
        row["view"] = view_name(r.camera);
        row["ok"] = r.ok;
        row["correspondences"] = r.correspondences;
        row["rms_before_px"] = number(r.rms_before);
        row["rms_after_px"] = number(r.rms_after);
        if (!r.ok) {
            row["error"] = r.error;
            ++failed;
        }
        report.push_back(row);
        std::cout << view_name(r.camera) << (r.ok ? "  rms " : "  failed: ");
        if (r.ok) {
            std::cout << r.rms_before << " -> " << r.rms_after << " px (" << r.correspondences << " matches)\n";
        } else {
            std::cout << r.error << "\n";
        }
    }
    write_text(o.data / "align_report.json", report.dump(2) + "\n");
    if (failed == rows.size()) throw Error("alignment failed for every camera");
    return 0;
}

int run_train(const TrainOptions& o, const CLI::App& sub) {
    const Dataset d = load_dataset(o.data, o.cameras);
    const LidarCloud cloud = o.lidar_fraction < 1.0 ? downsample_cloud(d.cloud, o.lidar_fraction, o.seed) : d.cloud;
    const auto train_views = make_train_views(cloud, d.cameras, d.images, d.split.train);
    const auto val_views = make_train_views(cloud, d.cameras, d.images, d.split.val);

    GaussianSet init;
    if (!o.init.empty()) {
        init = load_ply_gaussians(o.init);
    } else {
        InitConfig ic;
        ic.max_points = o.init_points;
        ic.seed = o.seed;
        init = init_from_lidar(cloud, ic);
    }

    TrainConfig cfg;
    cfg.iterations = o.iterations;
    cfg.densify_start = o.densify_start;
    cfg.densify_stop = o.densify_stop;
    cfg.densify.interval = o.densify_interval;
    cfg.densify.sigma = o.sigma;
    cfg.densify.epsilon = o.epsilon;
    cfg.densify.tau_pos = o.tau_pos;
    cfg.weights.alpha = o.alpha;
    cfg.weights.beta = o.beta;
    cfg.weights.gamma = o.gamma;
    cfg.weights.lambda = o.lambda;
    cfg.weights.depth_mode = o.literal_depth ? DepthLossMode::Literal : DepthLossMode::L1;
    cfg.max_sh_degree = o.max_sh;
    cfg.seed = o.seed;
    cfg.validation_interval = o.validation_interval;
    cfg.checkpoint_interval = o.checkpoint_interval;
    cfg.checkpoint_dir = o.out / "checkpoints";
    cfg.render = render_settings();

    fs::create_directories(o.out);
    write_manifest(sub, o.out, o.seed);
    const TrainResult r = train(std::move(init), cloud, train_views, val_views, cfg);
    write_log_csv(r.log, o.out / "log.csv");
    save_ply_gaussians(r.set, o.out / "final.ply");

    nlohmann::ordered_json summary;
    summary["gaussians"] = r.set.size();
    summary["lidar_rmse"] = number(lidar_rmse(r.set, cloud));
    summary["val_psnr"] = number(val_views.empty() ? std::nan("") : mean_psnr(r.set, val_views, cfg.render));
    nlohmann::ordered_json passes = nlohmann::ordered_json::array();
    for (const auto& p : r.densify) {
        passes.push_back({{"iteration", p.iteration},
                          {"before", p.before},
                          {"after", p.after},
                          {"split", p.selected},
                          {"pruned", p.pruned},
                          {"max_lidar_distance", p.max_distance},
                          {"min_opacity", p.min_opacity}});
    }
    summary["densify"] = passes;
    write_text(o.out / "summary.json", summary.dump(2) + "\n");
    std::cout << "trained " << r.set.size() << " Gaussians; lidar_rmse " << summary["lidar_rmse"].dump()
              << ", val_psnr " << summary["val_psnr"].dump() << "\n";
    return 0;
}

int run_render(const RenderOptions& o) {
    const Dataset d = load_dataset(o.data, o.cameras);
    const GaussianSet set = load_ply_gaussians(o.model);
    const RenderSettings settings = render_settings();
    fs::create_directories(o.out);
    for (auto i : select_views(d, o.views)) {
        const RenderOutput r = render(set, d.cameras[i], settings);
        DepthNormalMaps maps(r.width, r.height);
        maps.depth = r.depth;
        maps.normal = r.normal;
        maps.valid = r.valid;
        const std::string name = view_name(i);
        write_png(r.color, o.out / (name + ".png"));
        write_pfm(depth_image(maps), o.out / (name + "_depth.pfm"));
        write_pfm(normal_image(maps), o.out / (name + "_normal.pfm"));
    }
    std::cout << "rendered to " << o.out.string() << "\n";
    return 0;
}

int run_eval(const EvalOptions& o) {
    const Dataset d = load_dataset(o.data, o.cameras);
    const GaussianSet set = load_ply_gaussians(o.model);
    const RenderSettings settings = render_settings();
    nlohmann::ordered_json views = nlohmann::ordered_json::array();
    double psnr_sum = 0.0, ssim_sum = 0.0, depth_sum = 0.0;
    std::size_t n = 0, depth_n = 0;
    for (auto i : select_views(d, o.views)) {
        RenderOutput r = render(set, d.cameras[i], settings);
        for (auto& c : r.color.data) c = std::clamp(c, 0.0, 1.0);
        const double p = psnr(r.color, d.images[i]);
        const double s = ssim(r.color, d.images[i]);
        double mae = std::nan("");
        if (!d.depth[i].data.empty()) {
            std::vector<std::uint8_t> gt_valid(d.depth[i].data.size());
            for (std::size_t k = 0; k < gt_valid.size(); ++k) gt_valid[k] = d.depth[i].data[k] > 0.0;
            mae = masked_mean_abs_error(r.depth, d.depth[i].data, r.valid, gt_valid);
        }
        views.push_back({{"view", view_name(i)}, {"psnr", number(p)}, {"ssim", s}, {"depth_mae", number(mae)}});
        psnr_sum += p;
        ssim_sum += s;
        ++n;
        if (std::isfinite(mae)) {
            depth_sum += mae;
            ++depth_n;
        }
    }
    if (n == 0) throw Error("no views selected");
    nlohmann::ordered_json report;
    report["views"] = views;
    report["mean_psnr"] = number(psnr_sum / n);
    report["mean_ssim"] = ssim_sum / n;
    report["mean_depth_mae"] = number(depth_n ? depth_sum / depth_n : std::nan(""));
    report["lidar_rmse"] = lidar_rmse(set, d.cloud,
                                      o.reverse_rmse ? RmseDirection::LidarToGaussian : RmseDirection::GaussianToLidar);
    report["lidar_rmse_direction"] = o.reverse_rmse ? "lidar_to_gaussian" : "gaussian_to_lidar";
    report["gaussians"] = set.size();
    const std::string text = report.dump(2) + "\n";
    if (o.out.empty()) {
        std::cout << text;
    } else {
        write_text(o.out, text);
        std::cout << "psnr " << report["mean_psnr"].dump() << "  ssim " << report["mean_ssim"].dump()
                  << "  lidar_rmse " << report["lidar_rmse"].dump() << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LiDAR-constrained Gaussian splatting on the CPU"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML config; [synth], [align], [train], [render] or [eval] sections hold "
                                   "subcommand options and flags override them");
    app.option_defaults()->always_capture_default();
    bool verbose = false;
    app.add_option("--threads", g_threads, "Rasterizer worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
    app.add_flag("-v,--verbose", verbose, "Log densification and other progress messages");

    SynthOptions so;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset with ground truth");
    synth->add_option("--preset", so.preset, "Scene preset: standard or plane");
    synth->add_option("--seed", so.seed, "Random seed");
    synth->add_option("-o,--out", so.out, "Output dataset directory")->required();
    synth->add_option("--width", so.width, "Image width")->check(CLI::PositiveNumber);
    synth->add_option("--height", so.height, "Image height")->check(CLI::PositiveNumber);
    synth->add_option("--density", so.density, "LiDAR points per square meter")->check(CLI::PositiveNumber);
    synth->add_option("--lidar-noise", so.lidar_noise, "LiDAR noise along the normal, meters")
        ->check(CLI::NonNegativeNumber);
    synth->add_option("--pose-noise-deg", so.pose_noise_deg, "Rotation error of the initial poses, degrees");
    synth->add_option("--pose-noise-m", so.pose_noise_m, "Translation error of the initial poses, meters");
    synth->add_option("--features", so.features, "Feature points per view")->check(CLI::NonNegativeNumber);

    AlignOptions ao;
    CLI::App* align = app.add_subcommand("align", "Refine camera poses against the LiDAR cloud");
    align->add_option("-d,--data", ao.data, "Dataset directory")->required();
    align->add_option("--cameras", ao.cameras, "Camera subdirectory holding the initial poses");
    align->add_option("--out-cameras", ao.out_cameras, "Subdirectory for the refined poses");
    align->add_option("--radius", ao.radius, "Correspondence search radius, pixels")->check(CLI::PositiveNumber);

    TrainOptions to;
    CLI::App* trn = app.add_subcommand("train", "Optimise Gaussians against a dataset");
    trn->add_option("-d,--data", to.data, "Dataset directory")->required();
    trn->add_option("-o,--out", to.out, "Run directory")->required();
    trn->add_option("--cameras", to.cameras, "Camera subdirectory (e.g. cameras_aligned)");
    trn->add_option("--init", to.init, "Start from this Gaussian PLY instead of the LiDAR cloud");
    trn->add_option("--iterations", to.iterations, "Optimisation steps")->check(CLI::NonNegativeNumber);
    trn->add_option("--densify-start", to.densify_start, "First densification iteration");
    trn->add_option("--densify-stop", to.densify_stop, "Last densification iteration (-1: half of the run)");
    trn->add_option("--densify-interval", to.densify_interval, "Iterations between densification passes");
    trn->add_option("--sigma", to.sigma, "Max distance to the LiDAR cloud, meters");
    trn->add_option("--epsilon", to.epsilon, "Min opacity kept by pruning");
    trn->add_option("--tau-pos", to.tau_pos, "NDC gradient threshold for splitting");
    trn->add_option("--alpha", to.alpha, "Depth loss weight");
    trn->add_option("--beta", to.beta, "Normal loss weight");
    trn->add_option("--gamma", to.gamma, "Scale loss weight");
    trn->add_option("--lambda", to.lambda, "D-SSIM share of the photometric loss");
    trn->add_flag("--literal-depth", to.literal_depth, "Add the |1 - D*D_lidar| term to the depth loss");
    trn->add_option("--max-sh", to.max_sh, "Largest spherical-harmonics degree")->check(CLI::Range(0, 3));
    trn->add_option("--checkpoint-interval", to.checkpoint_interval, "Iterations between checkpoints (0: final only)");
    trn->add_option("--validation-interval", to.validation_interval, "Iterations between validation PSNR entries");
    trn->add_option("--init-points", to.init_points, "Subsample the LiDAR cloud for initialisation (0: all)");
    trn->add_option("--lidar-fraction", to.lidar_fraction, "Use a seeded subsample of the LiDAR cloud")
        ->check(CLI::Range(0.0, 1.0));
    trn->add_option("--seed", to.seed, "Random seed");

    RenderOptions ro;
    CLI::App* rnd = app.add_subcommand("render", "Render colour, depth and normals for dataset views");
    rnd->add_option("-d,--data", ro.data, "Dataset directory")->required();
    rnd->add_option("-m,--model", ro.model, "Gaussian PLY")->required();
    rnd->add_option("-o,--out", ro.out, "Output directory")->required();
    rnd->add_option("--cameras", ro.cameras, "Camera subdirectory");
    rnd->add_option("--views", ro.views, "train, val, test, all or indices like 0,3,5");

    EvalOptions eo;
    CLI::App* ev = app.add_subcommand("eval", "Report PSNR, SSIM, depth error and LiDAR RMSE as JSON");
    ev->add_option("-d,--data", eo.data, "Dataset directory")->required();
    ev->add_option("-m,--model", eo.model, "Gaussian PLY")->required();
    ev->add_option("-o,--out", eo.out, "Write the report here instead of stdout");
    ev->add_option("--cameras", eo.cameras, "Camera subdirectory");
    ev->add_option("--views", eo.views, "train, val, test, all or indices like 0,3,5");
    ev->add_flag("--reverse-rmse", eo.reverse_rmse, "Measure LiDAR points to their nearest Gaussian instead");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    set_log_sink([verbose](LogLevel level, const std::string& msg) {
        if (level >= LogLevel::Warning) {
            std::cerr << (level == LogLevel::Warning ? "warning: " : "error: ") << msg << "\n";
        } else if (verbose) {
            std::cerr << msg << "\n";
        }
    });

    try {
        if (*synth) return run_synth(so, *synth);
        if (*align) return run_align(ao);
        if (*trn) return run_train(to, *trn);
        if (*rnd) return run_render(ro);
        if (*ev) return run_eval(eo);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (auto& c : msg) {
            if (c == '\n') c = ' ';
        }
        std::cerr << "error: " << msg << "\n";
        return 1;
    }
    return 1;
}
