#include "doctest.h"
#include "oracles.hpp"

#include "lidarsplat/eval.hpp"
#include "lidarsplat/testbed.hpp"
#include "lidarsplat/trainer.hpp"

#include <fstream>
#include <sstream>

using namespace lsplat;

namespace {

struct PlaneFixture {
    SyntheticScene scene;
    std::vector<TrainView> views;
    GaussianSet init;

    explicit PlaneFixture(int cameras = 1) : scene(make_scene(single_plane_spec(3, cameras))) {
        std::vector<std::size_t> all(scene.cameras.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        views = make_train_views(scene.cloud, scene.cameras, scene.images, all);
        init = init_from_lidar(scene.cloud);
    }
};

TrainConfig short_config(int iterations) {
    TrainConfig cfg;
    cfg.iterations = iterations;
    cfg.densify_start = std::min(100, iterations);
    cfg.densify.tau_pos = 0.5;
    cfg.validation_interval = 50;
    return cfg;
}

bool same_set(const GaussianSet& a, const GaussianSet& b) {
    if (a.size() != b.size() || a.sh_degree != b.sh_degree) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Gaussian& x = a.gaussians[i];
        const Gaussian& y = b.gaussians[i];
        if (x.position != y.position || x.rotation != y.rotation || x.log_scale != y.log_scale ||
            x.logit_opacity != y.logit_opacity)
            return false;
        for (int k = 0; k < kMaxShCoeffs; ++k)
            if (x.sh[k] != y.sh[k]) return false;
    }
    return true;
}

bool same_log(const std::vector<LogRow>& a, const std::vector<LogRow>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const LossBreakdown& x = a[i].loss;
        const LossBreakdown& y = b[i].loss;
        if (a[i].count != b[i].count || x.total != y.total || x.l1 != y.l1 || x.dssim != y.dssim ||
            x.depth != y.depth || x.normal != y.normal || x.scale != y.scale || a[i].val_psnr != b[i].val_psnr)
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    std::vector<double> p{1.0, -2.0, 3.5}, g(3, 0.0), lr(3, 0.1);
    AdamState s;
    for (int i = 0; i < 5; ++i) adam_step(p, g, s, lr);
    CHECK(p == std::vector<double>{1.0, -2.0, 3.5});
    CHECK(s.step == 5);
}

TEST_CASE("adam: constant gradient steps approach the learning rate") {
    std::vector<double> p{0.0}, g{0.37}, lr{0.01};
    AdamState s;
    double prev = 0.0, step = 0.0;
    for (int i = 0; i < 2000; ++i) {
        adam_step(p, g, s, lr);
        step = prev - p[0];
        prev = p[0];
    }
    CHECK(step == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("adam: two steps against a hand computation") {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-15, lr = 0.05;
    const double g1 = 0.3, g2 = -1.2;
    double x = 2.0;
    double m = (1 - b1) * g1, v = (1 - b2) * g1 * g1;
    x -= lr / (1 - b1) * m / (std::sqrt(v) / std::sqrt(1 - b2) + eps);
    m = b1 * m + (1 - b1) * g2;
    v = b2 * v + (1 - b2) * g2 * g2;
    x -= lr / (1 - b1 * b1) * m / (std::sqrt(v) / std::sqrt(1 - b2 * b2) + eps);

    std::vector<double> p{2.0}, lrs{lr};
    AdamState s;
    std::vector<double> grad{g1};
    adam_step(p, grad, s, lrs);
    grad[0] = g2;
    adam_step(p, grad, s, lrs);
    CHECK(std::abs(p[0] - x) < 1e-12);

    std::vector<double> bad(2, 0.0);
    CHECK_THROWS_AS(adam_step(p, bad, s, lrs), Error);
}

TEST_CASE("adam state file round trip") {
    const auto dir = oracle::scratch_dir("adam_state");
    AdamState s;
    s.step = 17;
    s.m = {0.1, -2.0, 1e-300};
    s.v = {3.0, 0.0, 5.5};
    save_adam_state(s, dir / "a.adam");
    const AdamState t = load_adam_state(dir / "a.adam");
    CHECK(t.step == 17);
    CHECK(t.m == s.m);
    CHECK(t.v == s.v);
    {
        std::ofstream out(dir / "bad.adam", std::ios::binary);
        out << "NOTADAM0";
    }
    CHECK_THROWS_AS(load_adam_state(dir / "bad.adam"), ParseError);
}

TEST_CASE("position learning rate schedule") {
    LearningRates lr;
    CHECK(position_lr(lr, 10.0, 0, 1000) == doctest::Approx(1.6e-3));
    CHECK(position_lr(lr, 10.0, 1000, 1000) == doctest::Approx(1.6e-5));
    CHECK(position_lr(lr, 1.0, 500, 1000) == doctest::Approx(1.6e-5));
    CHECK(position_lr(lr, 1.0, 5000, 1000) == doctest::Approx(1.6e-6));
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.resolved_densify_stop() == 15000);
    CHECK(cfg.weights.alpha == 100.0);
    CHECK(cfg.weights.lambda == 0.2);
    CHECK(cfg.densify.interval == 50);
    CHECK(cfg.densify.sigma == 1.0);
    cfg.densify_stop = cfg.iterations + 1;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.max_sh_degree = 4;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.iterations = -1;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("camera extent") {
    std::vector<TrainView> views(2);
    views[0].camera.translation = Vec3(-1, 0, 0);
    views[1].camera.translation = Vec3(3, 0, 0);
    CHECK(camera_extent(views) == doctest::Approx(2.2));
    CHECK(camera_extent({}) == 1.0);
}

TEST_CASE("zero iterations return the input") {
    PlaneFixture f;
    const TrainResult r = train(f.init, f.scene.cloud, f.views, f.views, short_config(0));
    CHECK(same_set(r.set, f.init));
    CHECK(r.log.empty());
    REQUIRE(r.checkpoints.size() == 1);
    CHECK(r.checkpoints[0].iteration == 0);
}

TEST_CASE("single-view plane training converges") {
    PlaneFixture f;
    TrainConfig cfg = short_config(500);
    const TrainResult r = train(f.init, f.scene.cloud, f.views, f.views, cfg);
    REQUIRE(r.log.size() == 500);
    const auto photometric = [&](const LossBreakdown& l) {
        return (1.0 - cfg.weights.lambda) * l.l1 + cfg.weights.lambda * l.dssim;
    };
    CHECK(photometric(r.log.back().loss) < photometric(r.log.front().loss));
    CHECK(r.log[49].has_val);
    CHECK_FALSE(r.log[50].has_val);
    CHECK(mean_psnr(r.set, f.views, cfg.render) > mean_psnr(f.init, f.views, cfg.render) + 1.0);

    // densification invariant after every pass
    REQUIRE_FALSE(r.densify.empty());
    for (const auto& d : r.densify) {
        CHECK(d.max_distance <= cfg.densify.sigma);
        CHECK(d.min_opacity >= cfg.densify.epsilon);
        for (const auto& e : d.splits) {
            if (!e.degenerate) CHECK(std::abs((e.child_a - e.child_b).normalized().dot(e.lidar_normal)) < 1e-9);
        }
    }
    for (const auto& c : r.checkpoints) CHECK(c.lidar_rmse <= cfg.densify.sigma);
}

TEST_CASE("training is reproducible across runs and thread counts") {
    PlaneFixture f(3);
    TrainConfig cfg = short_config(150);
    const TrainResult a = train(f.init, f.scene.cloud, f.views, f.views, cfg);
    const TrainResult b = train(f.init, f.scene.cloud, f.views, f.views, cfg);
    cfg.render.threads = 3;
    const TrainResult c = train(f.init, f.scene.cloud, f.views, f.views, cfg);
    CHECK(same_log(a.log, b.log));
    CHECK(same_set(a.set, b.set));
    CHECK(same_log(a.log, c.log));
    CHECK(same_set(a.set, c.set));
    cfg.seed = 99;
    const TrainResult d = train(f.init, f.scene.cloud, f.views, f.views, cfg);
    CHECK_FALSE(same_log(a.log, d.log));
}

TEST_CASE("checkpoints and log files") {
    PlaneFixture f;
    const auto dir = oracle::scratch_dir("train_ckpt");
    TrainConfig cfg = short_config(20);
    cfg.densify_start = 20;
    cfg.checkpoint_interval = 10;
    cfg.checkpoint_dir = dir;
    cfg.validation_interval = 10;
    const TrainResult r = train(f.init, f.scene.cloud, f.views, f.views, cfg);
    REQUIRE(r.checkpoints.size() == 2);
    CHECK(r.checkpoints[0].iteration == 10);
    CHECK(r.checkpoints[1].iteration == 20);
    const GaussianSet back = load_ply_gaussians(r.checkpoints[1].ply);
    CHECK(back.size() == r.set.size());
    CHECK(std::filesystem::exists(dir / "checkpoint_000020.adam"));
    CHECK(load_adam_state(dir / "checkpoint_000020.adam").step == 20);

    write_log_csv(r.log, dir / "log.csv");
    std::ifstream in(dir / "log.csv");
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "iteration,l1,dssim,depth,normal,scale,total,count,val_psnr");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        const auto commas = std::count(line.begin(), line.end(), ',');
        CHECK(commas == 8);
        if (rows == 10) CHECK(line.back() != ',');
        if (rows == 9) CHECK(line.back() == ',');
    }
    CHECK(rows == 20);
}

TEST_CASE("non-finite loss aborts with the iteration and component") {
    PlaneFixture f;
    DepthNormalMaps& m = f.views[0].lidar;
    const std::size_t centre = m.index(m.width / 2, m.height / 2);
    REQUIRE(m.valid[centre]);
    m.depth[centre] = std::numeric_limits<double>::quiet_NaN();
    try {
        train(f.init, f.scene.cloud, f.views, {}, short_config(5));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("iteration 1") != std::string::npos);
        CHECK(msg.find("depth") != std::string::npos);
    }
}

TEST_CASE("input errors") {
    PlaneFixture f;
    CHECK_THROWS_AS(train(f.init, f.scene.cloud, {}, {}, short_config(5)), Error);
    CHECK_THROWS_AS(train(GaussianSet{}, f.scene.cloud, f.views, {}, short_config(5)), Error);
    CHECK_THROWS_AS(make_train_views(f.scene.cloud, f.scene.cameras, f.scene.images, {7}), Error);
}
