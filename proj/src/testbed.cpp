#include "lidarsplat/testbed.hpp"

#include "lidarsplat/camera.hpp"
#include "lidarsplat/image_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace lsplat {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Local parameters (a, b) of the projection of p onto the face plane.
Vec2 face_params(const Face& f, const Vec3& p) {
    const Vec3 n = f.edge_u.cross(f.edge_v);
    const Vec3 w = p - f.origin;
    const double nn = n.squaredNorm();
    return {w.cross(f.edge_v).dot(n) / nn, f.edge_u.cross(w).dot(n) / nn};
}

bool inside(const Face& f, const Vec2& ab) {
    if (ab.x() < 0.0 || ab.y() < 0.0) return false;
    return f.triangle ? ab.x() + ab.y() <= 1.0 : (ab.x() <= 1.0 && ab.y() <= 1.0);
}

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    return (p - (a + t * ab)).norm();
}

} // namespace

Vec3 Texture::at(double s, double t, double u_length) const {
    const long k = static_cast<long>(std::floor(s / checker)) + static_cast<long>(std::floor(t / checker));
    Vec3 c = (k % 2 == 0) ? color_a : color_b;
    c += gradient * (u_length > 0.0 ? s / u_length : 0.0);
    return c.cwiseMax(0.0).cwiseMin(1.0);
}

double Face::area() const {
    const double a = edge_u.cross(edge_v).norm();
    return triangle ? 0.5 * a : a;
}

Vec3 Face::color(double a, double b) const {
    const double lu = edge_u.norm();
    return texture.at(a * lu, b * edge_v.norm(), lu);
}

double Face::distance(const Vec3& p) const {
    const Vec2 ab = face_params(*this, p);
    if (inside(*this, ab)) {
        return std::abs((p - origin).dot(normal()));
    }
    const Vec3 p0 = origin, p1 = origin + edge_u, p2 = origin + edge_v;
    if (triangle) {
        return std::min({segment_distance(p, p0, p1), segment_distance(p, p1, p2), segment_distance(p, p2, p0)});
    }
    const Vec3 p3 = origin + edge_u + edge_v;
    return std::min({segment_distance(p, p0, p1), segment_distance(p, p1, p3), segment_distance(p, p3, p2),
                     segment_distance(p, p2, p0)});
}

void SurfaceModel::add_plane(const Vec3& center, double size_x, double size_y, const Texture& tex) {
    faces.push_back({center - Vec3(size_x / 2, size_y / 2, 0.0), Vec3(size_x, 0, 0), Vec3(0, size_y, 0), false, tex});
}

void SurfaceModel::add_box(const Vec3& m, const Vec3& s, const Texture& tex) {
    const double a = s.x(), b = s.y(), c = s.z();
    faces.push_back({m + Vec3(0, 0, c), Vec3(a, 0, 0), Vec3(0, b, 0), false, tex});
    faces.push_back({m, Vec3(a, 0, 0), Vec3(0, 0, c), false, tex});
    faces.push_back({m + Vec3(0, b, 0), Vec3(0, 0, c), Vec3(a, 0, 0), false, tex});
    faces.push_back({m, Vec3(0, 0, c), Vec3(0, b, 0), false, tex});
    faces.push_back({m + Vec3(a, 0, 0), Vec3(0, b, 0), Vec3(0, 0, c), false, tex});
}

void SurfaceModel::add_ramp(const Vec3& m, double length, double width, double rise, const Texture& tex) {
    faces.push_back({m, Vec3(length, 0, rise), Vec3(0, width, 0), false, tex});
    faces.push_back({m + Vec3(length, 0, 0), Vec3(0, width, 0), Vec3(0, 0, rise), false, tex});
    faces.push_back({m, Vec3(length, 0, 0), Vec3(length, 0, rise), true, tex});
    faces.push_back({m + Vec3(0, width, 0), Vec3(length, 0, rise), Vec3(length, 0, 0), true, tex});
}

std::optional<Hit> SurfaceModel::intersect(const Vec3& origin, const Vec3& dir, double t_min) const {
    std::optional<Hit> best;
    for (std::size_t i = 0; i < faces.size(); ++i) {
        const Face& f = faces[i];
        const Vec3 n = f.normal();
        const double denom = dir.dot(n);
        if (std::abs(denom) < 1e-15) continue;
        const double t = (f.origin - origin).dot(n) / denom;
        if (!(t > t_min)) continue;
        if (best && !(t < best->t)) continue;
        const Vec3 p = origin + t * dir;
        const Vec2 ab = face_params(f, p);
        if (!inside(f, ab)) continue;
        Hit h;
        h.t = t;
        h.point = p;
        h.normal = denom < 0.0 ? n : Vec3(-n);
        h.color = f.color(ab.x(), ab.y());
        h.face = i;
        best = h;
    }
    return best;
}

double SurfaceModel::distance(const Vec3& p) const {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& f : faces) d = std::min(d, f.distance(p));
    return d;
}

double SurfaceModel::area() const {
    double a = 0.0;
    for (const auto& f : faces) a += f.area();
    return a;
}

std::vector<Vec3> sample_surfaces(const SurfaceModel& surfaces, double density, double noise, bool airborne_visibility,
                                  std::uint64_t seed) {
    if (!(density > 0.0)) {
        throw Error("sample_surfaces: density must be positive");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Vec3> pts;
    for (const auto& f : surfaces.faces) {
        std::poisson_distribution<long> count_dist(f.area() * density);
        const long count = count_dist(rng);
        const Vec3 n = f.normal();
        for (long k = 0; k < count; ++k) {
            double a = uni(rng), b = uni(rng);
            if (f.triangle && a + b > 1.0) {
                a = 1.0 - a;
                b = 1.0 - b;
            }
            const Vec3 p = f.point(a, b);
            const double e = noise > 0.0 ? noise * gauss(rng) : 0.0;
            if (airborne_visibility && surfaces.intersect(p + 1e-6 * n, Vec3::UnitZ())) {
                continue;
            }
            pts.push_back(p + e * n);
        }
    }
    return pts;
}

DistortedCamera look_at_camera(const Vec3& position, const Vec3& target, int width, int height, double fov_x_deg,
                               double k1, double k2, RadialUnits units) {
    const Vec3 forward = (target - position).normalized();
    Vec3 right = forward.cross(Vec3::UnitZ());
    if (right.norm() < 1e-9) {
        right = forward.cross(Vec3::UnitY());
    }
    right.normalize();
    const Vec3 down = forward.cross(right);
    DistortedCamera cam;
    cam.rotation.row(0) = right;
    cam.rotation.row(1) = down;
    cam.rotation.row(2) = forward;
    cam.translation = -cam.rotation * position;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = 0.5 * width / std::tan(0.5 * fov_x_deg * kPi / 180.0);
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.k1 = k1;
    cam.k2 = k2;
    cam.radial_units = units;
    cam.validate();
    return cam;
}

std::vector<DistortedCamera> ring_cameras(const SceneSpec& spec) {
    std::vector<DistortedCamera> cams;
    for (std::size_t r = 0; r < spec.rings.size(); ++r) {
        const CameraRing& ring = spec.rings[r];
        for (int k = 0; k < ring.count; ++k) {
            const double theta = 2.0 * kPi * k / ring.count + static_cast<double>(r) * kPi / ring.count;
            const Vec3 pos = spec.look_at + Vec3(ring.radius * std::cos(theta), ring.radius * std::sin(theta), 0.0);
            const Vec3 eye(pos.x(), pos.y(), ring.height);
            cams.push_back(look_at_camera(eye, spec.look_at, spec.width, spec.height, spec.fov_x_deg, spec.k1, spec.k2,
                                          spec.radial_units));
        }
    }
    return cams;
}

Image render_ground_truth(const SurfaceModel& surfaces, const DistortedCamera& cam, int supersample,
                          const Vec3& background) {
    const int ss = std::max(1, supersample);
    Image img(cam.width, cam.height, 3);
    const Vec3 c = cam.center();
    const Mat3 rt = cam.rotation.transpose();
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            Vec3 sum = Vec3::Zero();
            for (int j = 0; j < ss; ++j) {
                for (int i = 0; i < ss; ++i) {
                    const Vec2 uv(x + (i + 0.5) / ss, y + (j + 0.5) / ss);
                    const Vec3 dir = (rt * pixel_ray_camera(cam, uv)).normalized();
                    const auto hit = surfaces.intersect(c, dir);
                    sum += hit ? hit->color : background;
                }
            }
            sum /= static_cast<double>(ss * ss);
            for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = sum[ch];
        }
    }
    return img;
}

DepthNormalMaps ground_truth_geometry(const SurfaceModel& surfaces, const DistortedCamera& cam) {
    DepthNormalMaps maps(cam.width, cam.height);
    const Vec3 c = cam.center();
    const Mat3 rt = cam.rotation.transpose();
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Vec2 uv(x + 0.5, y + 0.5);
            const Vec3 dir = (rt * pixel_ray_camera(cam, uv)).normalized();
            const auto hit = surfaces.intersect(c, dir);
            if (!hit) continue;
            const std::size_t i = maps.index(x, y);
            maps.valid[i] = 1;
            maps.depth[i] = (cam.rotation * hit->point + cam.translation).z();
            maps.normal[i] = cam.rotation * hit->normal;
            maps.sample_uv[i] = uv;
        }
    }
    return maps;
}

LidarCloud downsample_cloud(const LidarCloud& cloud, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw Error("downsample_cloud: fraction must lie in (0, 1]");
    }
    if (fraction == 1.0) {
        return cloud;
    }
    const std::size_t n = cloud.size();
    const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < keep; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(keep);
    std::sort(ids.begin(), ids.end());
    std::vector<Vec3> pts;
    pts.reserve(keep);
    for (auto i : ids) pts.push_back(cloud.points()[i]);
    return LidarCloud(std::move(pts));
}

DistortedCamera perturb_pose(const DistortedCamera& cam, double angle_rad, double translation_m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto unit = [&] {
        Vec3 v;
        do {
            v = Vec3(gauss(rng), gauss(rng), gauss(rng));
        } while (v.norm() < 1e-6);
        return Vec3(v.normalized());
    };
    const Vec3 axis = unit();
    const Vec3 shift = unit();
    DistortedCamera out = cam;
    out.rotation = rotation_exp(angle_rad * axis) * cam.rotation;
    out.translation = cam.translation + translation_m * shift;
    return out;
}

DatasetSplit split_views(std::size_t count, std::uint64_t seed) {
    DatasetSplit s;
    std::vector<std::size_t> ids(count);
    std::iota(ids.begin(), ids.end(), 0);
    if (count < 3) {
        s.train = s.val = s.test = ids;
        return s;
    }
    std::mt19937_64 rng(seed);
    for (std::size_t i = count - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(ids[i], ids[pick(rng)]);
    }
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.15 * count)));
    const auto n_test = std::max<std::size_t>(1, count - n_val - static_cast<std::size_t>(std::lround(0.70 * count)));
    const std::size_t n_train = count - n_val - n_test;
    s.train.assign(ids.begin(), ids.begin() + n_train);
    s.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
    s.test.assign(ids.begin() + n_train + n_val, ids.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

SyntheticScene make_scene(const SceneSpec& spec) {
    if (spec.surfaces.faces.empty()) {
        throw Error("make_scene: the scene has no surfaces");
    }
    if (spec.rings.empty()) {
        throw Error("make_scene: the scene has no cameras");
    }
    SyntheticScene s;
    s.surfaces = spec.surfaces;
    auto pts = sample_surfaces(spec.surfaces, spec.lidar_density, spec.lidar_noise, spec.airborne_visibility, spec.seed);
    if (pts.empty()) {
        throw Error("make_scene: LiDAR sampling produced no points");
    }
    s.cloud = LidarCloud(std::move(pts));
    s.cameras = ring_cameras(spec);
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t i = 0; i < s.cameras.size(); ++i) {
        const DistortedCamera& cam = s.cameras[i];
        s.images.push_back(render_ground_truth(spec.surfaces, cam, spec.supersample, spec.background));
        s.geometry.push_back(ground_truth_geometry(spec.surfaces, cam));
        s.initial_cameras.push_back(
            perturb_pose(cam, spec.pose_noise_deg * kPi / 180.0, spec.pose_noise_m, rng()));

        // Features: exact projections of LiDAR points visible from this camera.
        std::vector<ProjectedPoint> visible;
        const Vec3 c = cam.center();
        for (const auto& pp : project_cloud(cam, s.cloud)) {
            const Vec3& p = s.cloud.points()[pp.index];
            const double dist = (p - c).norm();
            const auto hit = s.surfaces.intersect(c, (p - c) / dist);
            if (hit && hit->t > dist - 1e-6 * dist - 1e-6) visible.push_back(pp);
        }
        const std::size_t want = std::min<std::size_t>(visible.size(), std::max(0, spec.features_per_camera));
        for (std::size_t k = 0; k < want; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, visible.size() - 1);
            std::swap(visible[k], visible[pick(rng)]);
        }
        visible.resize(want);
        std::sort(visible.begin(), visible.end(),
                  [](const ProjectedPoint& a, const ProjectedPoint& b) { return a.index < b.index; });
        for (const auto& pp : visible) {
            s.features.push_back({static_cast<int>(i), Vec2(pp.pixel.u, pp.pixel.v), s.cloud.points()[pp.index]});
        }
    }
    return s;
}

SceneSpec standard_scene_spec(std::uint64_t seed) {
    SceneSpec spec;
    Texture ground;
    ground.color_a = Vec3(0.62, 0.58, 0.50);
    ground.color_b = Vec3(0.50, 0.52, 0.44);
    ground.checker = 2.5;
    ground.gradient = Vec3(-0.15, 0.05, 0.15);
    Texture box;
    box.color_a = Vec3(0.74, 0.46, 0.36);
    box.color_b = Vec3(0.62, 0.40, 0.33);
    box.checker = 2.0;
    box.gradient = Vec3(0.0, 0.10, 0.10);
    Texture ramp;
    ramp.color_a = Vec3(0.36, 0.46, 0.68);
    ramp.color_b = Vec3(0.31, 0.39, 0.58);
    ramp.checker = 1.5;
    ramp.gradient = Vec3(0.10, 0.05, 0.0);

    spec.surfaces.add_plane(Vec3::Zero(), 20.0, 20.0, ground);
    spec.surfaces.add_box(Vec3(-7.0, -6.0, 0.0), Vec3(5.0, 5.0, 8.0), box);
    spec.surfaces.add_ramp(Vec3(2.0, 2.0, 0.0), 6.0, 5.0, 3.0, ramp);
    spec.lidar_density = 8.0;
    spec.rings = {{12, 20.0, 15.0}, {12, 20.0, 25.0}};
    spec.look_at = Vec3(0.0, 0.0, 1.0);
    spec.k1 = 0.05;
    spec.k2 = 0.005;
    spec.radial_units = RadialUnits::Normalized;
    spec.seed = seed;
    return spec;
}

SceneSpec single_plane_spec(std::uint64_t seed, int cameras) {
    SceneSpec spec;
    Texture t;
    t.color_a = Vec3(0.62, 0.56, 0.48);
    t.color_b = Vec3(0.48, 0.52, 0.46);
    t.checker = 2.0;
    t.gradient = Vec3(-0.1, 0.05, 0.12);
    spec.surfaces.add_plane(Vec3::Zero(), 12.0, 12.0, t);
    spec.rings = {{cameras, 6.0, 12.0}};
    spec.k1 = 0.05;
    spec.k2 = 0.005;
    spec.seed = seed;
    return spec;
}

std::string view_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%03zu", i);
    return buf;
}

void write_dataset(const SyntheticScene& scene, const std::filesystem::path& dir, std::uint64_t seed) {
    namespace fs = std::filesystem;
    for (const char* sub : {"cameras", "cameras_init", "images", "depth", "normals"}) {
        fs::create_directories(dir / sub);
    }
    save_ply_points(scene.cloud, dir / "lidar.ply");
    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        const std::string name = view_name(i);
        save_camera_json(scene.cameras[i], dir / "cameras" / (name + ".json"));
        save_camera_json(scene.initial_cameras[i], dir / "cameras_init" / (name + ".json"));
        write_png(scene.images[i], dir / "images" / (name + ".png"));
        write_pfm(depth_image(scene.geometry[i]), dir / "depth" / (name + ".pfm"));
        write_pfm(normal_image(scene.geometry[i]), dir / "normals" / (name + ".pfm"));
    }
    write_feature_csv(scene.features, dir / "features.csv");
    const DatasetSplit split = split_views(scene.cameras.size(), seed);
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["train"] = split.train;
    j["val"] = split.val;
    j["test"] = split.test;
    std::ofstream out(dir / "split.json");
    if (!out) {
        throw Error("cannot write " + (dir / "split.json").string());
    }
    out << j.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& camera_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw Error("dataset directory not found: " + dir.string());
    }
    Dataset d;
    d.cloud = load_ply_points(dir / "lidar.ply");
    std::vector<std::string> names;
    if (!fs::is_directory(dir / camera_dir)) {
        throw Error("dataset has no " + camera_dir + "/ directory: " + dir.string());
    }
    for (const auto& e : fs::directory_iterator(dir / camera_dir)) {
        if (e.path().extension() == ".json") names.push_back(e.path().stem().string());
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) {
        throw Error("dataset has no cameras in " + (dir / camera_dir).string());
    }
    for (const auto& n : names) {
        d.cameras.push_back(load_camera_json(dir / camera_dir / (n + ".json")));
        if (fs::exists(dir / "cameras_init" / (n + ".json"))) {
            d.initial_cameras.push_back(load_camera_json(dir / "cameras_init" / (n + ".json")));
        }
        d.images.push_back(read_png(dir / "images" / (n + ".png")));
        const fs::path depth = dir / "depth" / (n + ".pfm");
        d.depth.push_back(fs::exists(depth) ? read_pfm(depth) : Image());
        if (d.images.back().width != d.cameras.back().width || d.images.back().height != d.cameras.back().height) {
            throw Error("image size does not match camera for " + n);
        }
    }
    if (fs::exists(dir / "split.json")) {
        std::ifstream in(dir / "split.json");
        nlohmann::json j;
        try {
            in >> j;
            d.split.train = j.at("train").get<std::vector<std::size_t>>();
            d.split.val = j.at("val").get<std::vector<std::size_t>>();
            d.split.test = j.at("test").get<std::vector<std::size_t>>();
        } catch (const nlohmann::json::exception& e) {
            throw Error("malformed split.json: " + std::string(e.what()));
        }
        for (const auto* list : {&d.split.train, &d.split.val, &d.split.test}) {
            for (auto i : *list) {
                if (i >= d.cameras.size()) throw Error("split.json references a missing view");
            }
        }
    } else {
        d.split = split_views(d.cameras.size(), 0);
    }
    if (fs::exists(dir / "features.csv")) {
        d.features = read_feature_csv(dir / "features.csv");
    }
    return d;
}

} // namespace lsplat
