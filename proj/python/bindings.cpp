#include "lidarsplat/align.hpp"
#include "lidarsplat/eval.hpp"
#include "lidarsplat/lidar_maps.hpp"
#include "lidarsplat/losses.hpp"
#include "lidarsplat/testbed.hpp"
#include "lidarsplat/trainer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace lsplat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Shape = std::vector<py::ssize_t>;

Array to_array(const Image& img) {
    Array a(Shape{img.height, img.width, img.channels});
    std::copy(img.data.begin(), img.data.end(), a.mutable_data());
    return a;
}

Image from_array(const Array& a) {
    if (a.ndim() != 3 && a.ndim() != 2) throw Error("expected an (H, W) or (H, W, C) array");
    Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1);
    std::copy(a.data(), a.data() + img.data.size(), img.data.begin());
    return img;
}

Array scalar_map(const std::vector<double>& v, int w, int h) {
    Array a(Shape{h, w});
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

Array vector_map(const std::vector<Vec3>& v, int w, int h) {
    Array a(Shape{h, w, 3});
    double* out = a.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i)
        for (int k = 0; k < 3; ++k) out[3 * i + k] = v[i][k];
    return a;
}

py::array_t<bool> mask_map(const std::vector<std::uint8_t>& v, int w, int h) {
    py::array_t<bool> a(Shape{h, w});
    bool* out = a.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] != 0;
    return a;
}

std::vector<Vec3> points_from(const Array& a) {
    if (a.ndim() != 2 || a.shape(1) != 3) throw Error("expected an (N, 3) array");
    std::vector<Vec3> pts(a.shape(0));
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = Vec3(a.at(i, 0), a.at(i, 1), a.at(i, 2));
    return pts;
}

Array points_to(const std::vector<Vec3>& pts) {
    Array a(Shape{static_cast<py::ssize_t>(pts.size()), 3});
    double* out = a.mutable_data();
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (int k = 0; k < 3; ++k) out[3 * i + k] = pts[i][k];
    return a;
}

py::dict maps_dict(const DepthNormalMaps& m) {
    py::dict d;
    d["depth"] = scalar_map(m.depth, m.width, m.height);
    d["normal"] = vector_map(m.normal, m.width, m.height);
    d["valid"] = mask_map(m.valid, m.width, m.height);
    return d;
}

std::vector<TrainView> build_views(const LidarCloud& cloud, const std::vector<DistortedCamera>& cams,
                                   const std::vector<Array>& images, const std::vector<std::size_t>& ids) {
    std::vector<Image> imgs;
    imgs.reserve(images.size());
    for (const auto& a : images) imgs.push_back(from_array(a));
    return make_train_views(cloud, cams, imgs, ids);
}

} // namespace

PYBIND11_MODULE(_lidarsplat, m) {
    m.doc() = "LiDAR-constrained Gaussian splatting";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ParseError>(m, "ParseError", error.ptr());
    py::register_exception<NumericError>(m, "NumericError", error.ptr());
    py::register_exception<DegenerateError>(m, "DegenerateError", error.ptr());

    py::enum_<RadialUnits>(m, "RadialUnits")
        .value("PIXEL", RadialUnits::Pixel)
        .value("NORMALIZED", RadialUnits::Normalized);

    py::class_<DistortedCamera>(m, "Camera")
        .def(py::init<>())
        .def_readwrite("fx", &DistortedCamera::fx)
        .def_readwrite("fy", &DistortedCamera::fy)
        .def_readwrite("cx", &DistortedCamera::cx)
        .def_readwrite("cy", &DistortedCamera::cy)
        .def_readwrite("k1", &DistortedCamera::k1)
        .def_readwrite("k2", &DistortedCamera::k2)
        .def_readwrite("rotation", &DistortedCamera::rotation)
        .def_readwrite("translation", &DistortedCamera::translation)
        .def_readwrite("width", &DistortedCamera::width)
        .def_readwrite("height", &DistortedCamera::height)
        .def_readwrite("radial_units", &DistortedCamera::radial_units)
        .def("center", &DistortedCamera::center)
        .def("validate", &DistortedCamera::validate)
        .def("__repr__", [](const DistortedCamera& c) {
            return "<Camera " + std::to_string(c.width) + "x" + std::to_string(c.height) + ">";
        });

    m.def("load_camera", &load_camera_json, py::arg("path"));
    m.def("save_camera", &save_camera_json, py::arg("camera"), py::arg("path"));
    m.def(
        "project",
        [](const DistortedCamera& cam, const Array& pts) {
            const auto p = points_from(pts);
            Array out(Shape{static_cast<py::ssize_t>(p.size()), 2});
            double* o = out.mutable_data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const auto px = project(cam, p[i]);
                o[2 * i] = px ? px->u : std::nan("");
                o[2 * i + 1] = px ? px->v : std::nan("");
            }
            return out;
        },
        py::arg("camera"), py::arg("points"), "World points (N, 3) to distorted pixels (N, 2); NaN behind the camera.");
    m.def("distort", &distort, py::arg("camera"), py::arg("uv"));
    m.def("undistort", &undistort, py::arg("camera"), py::arg("uv"));

    py::class_<LidarCloud>(m, "LidarCloud")
        .def(py::init([](const Array& pts) { return LidarCloud(points_from(pts)); }), py::arg("points"))
        .def(py::init([](const Array& pts, const Array& normals) {
                 return LidarCloud(points_from(pts), points_from(normals));
             }),
             py::arg("points"), py::arg("normals"))
        .def("__len__", &LidarCloud::size)
        .def_property_readonly("points", [](const LidarCloud& c) { return points_to(c.points()); })
        .def_property_readonly("normals", [](const LidarCloud& c) { return points_to(c.normals()); });
    m.def("load_lidar", [](const std::filesystem::path& p) { return load_ply_points(p); }, py::arg("path"));
    m.def("downsample", &downsample_cloud, py::arg("cloud"), py::arg("fraction"), py::arg("seed") = 0);

    py::class_<GaussianSet>(m, "GaussianSet")
        .def(py::init<>())
        .def("__len__", &GaussianSet::size)
        .def_readwrite("sh_degree", &GaussianSet::sh_degree)
        .def_property_readonly("positions",
                               [](const GaussianSet& s) {
                                   std::vector<Vec3> p;
                                   for (const auto& g : s.gaussians) p.push_back(g.position);
                                   return points_to(p);
                               })
        .def_property_readonly("scales",
                               [](const GaussianSet& s) {
                                   std::vector<Vec3> p;
                                   for (const auto& g : s.gaussians) p.push_back(g.scale());
                                   return points_to(p);
                               })
        .def_property_readonly("opacities", [](const GaussianSet& s) {
            Array a(Shape{static_cast<py::ssize_t>(s.size())});
            for (std::size_t i = 0; i < s.size(); ++i) a.mutable_data()[i] = s.gaussians[i].opacity();
            return a;
        });
    m.def("load_gaussians", &load_ply_gaussians, py::arg("path"));
    m.def("save_gaussians", &save_ply_gaussians, py::arg("gaussians"), py::arg("path"));
    m.def(
        "init_from_lidar",
        [](const LidarCloud& cloud, std::size_t max_points, std::uint64_t seed) {
            InitConfig cfg;
            cfg.max_points = max_points;
            cfg.seed = seed;
            return init_from_lidar(cloud, cfg);
        },
        py::arg("cloud"), py::arg("max_points") = 0, py::arg("seed") = 0);

    m.def(
        "render",
        [](const GaussianSet& set, const DistortedCamera& cam, int threads, const Vec3& background) {
            RenderSettings st;
            st.threads = threads;
            st.background = background;
            RenderOutput out;
            {
                py::gil_scoped_release release;
                out = render(set, cam, st);
            }
            py::dict d;
            d["color"] = to_array(out.color);
            d["depth"] = scalar_map(out.depth, out.width, out.height);
            d["normal"] = vector_map(out.normal, out.width, out.height);
            d["alpha"] = scalar_map(out.alpha, out.width, out.height);
            d["valid"] = mask_map(out.valid, out.width, out.height);
            return d;
        },
        py::arg("gaussians"), py::arg("camera"), py::arg("threads") = 1, py::arg("background") = Vec3::Zero());

    m.def(
        "lidar_maps",
        [](const LidarCloud& cloud, const DistortedCamera& cam, int window) {
            return maps_dict(lidar_maps(cloud, cam, window));
        },
        py::arg("cloud"), py::arg("camera"), py::arg("window") = 21);

    m.def(
        "psnr", [](const Array& a, const Array& b) { return psnr(from_array(a), from_array(b)); }, py::arg("a"),
        py::arg("b"));
    m.def(
        "ssim", [](const Array& a, const Array& b) { return ssim(from_array(a), from_array(b)); }, py::arg("a"),
        py::arg("b"));
    m.def(
        "lidar_rmse",
        [](const GaussianSet& set, const LidarCloud& cloud, bool reverse) {
            return lidar_rmse(set, cloud, reverse ? RmseDirection::LidarToGaussian : RmseDirection::GaussianToLidar);
        },
        py::arg("gaussians"), py::arg("cloud"), py::arg("reverse") = false);

    m.def(
        "synth",
        [](const std::filesystem::path& out, const std::string& preset, std::uint64_t seed) {
            SceneSpec spec;
            if (preset == "standard") {
                spec = standard_scene_spec(seed);
            } else if (preset == "plane") {
                spec = single_plane_spec(seed, 4);
            } else {
                throw Error("unknown preset '" + preset + "' (standard, plane)");
            }
            py::gil_scoped_release release;
            write_dataset(make_scene(spec), out, seed);
        },
        py::arg("out"), py::arg("preset") = "standard", py::arg("seed") = 42,
        "Write a synthetic dataset with ground truth to `out`.");

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("cloud", &Dataset::cloud)
        .def_readonly("cameras", &Dataset::cameras)
        .def_readonly("initial_cameras", &Dataset::initial_cameras)
        .def_property_readonly("images",
                               [](const Dataset& d) {
                                   py::list l;
                                   for (const auto& im : d.images) l.append(to_array(im));
                                   return l;
                               })
        .def_property_readonly("depth",
                               [](const Dataset& d) {
                                   py::list l;
                                   for (const auto& im : d.depth) l.append(to_array(im));
                                   return l;
                               })
        .def_property_readonly("split",
                               [](const Dataset& d) {
                                   py::dict s;
                                   s["train"] = d.split.train;
                                   s["val"] = d.split.val;
                                   s["test"] = d.split.test;
                                   return s;
                               })
        .def_property_readonly("features", [](const Dataset& d) {
            std::vector<std::vector<Vec2>> f(d.cameras.size());
            for (const auto& r : d.features) {
                if (r.image_id >= 0 && static_cast<std::size_t>(r.image_id) < f.size()) f[r.image_id].push_back(r.uv);
            }
            return f;
        });
    m.def("load_dataset", &load_dataset, py::arg("path"), py::arg("cameras") = "cameras");

    m.def(
        "align",
        [](const LidarCloud& cloud, const std::vector<DistortedCamera>& cams,
           const std::vector<std::vector<Vec2>>& features, double radius) {
            const auto rows = alignment_report(cloud, cams, features, radius);
            py::list out;
            for (const auto& r : rows) {
                py::dict d;
                d["ok"] = r.ok;
                d["error"] = r.error;
                d["correspondences"] = r.correspondences;
                d["rms_before"] = r.rms_before;
                d["rms_after"] = r.rms_after;
                d["camera"] = r.ok ? r.refined : cams[r.camera];
                out.append(d);
            }
            return out;
        },
        py::arg("cloud"), py::arg("cameras"), py::arg("features"), py::arg("radius") = 3.0,
        "Refine every pose against the cloud; one dict per camera.");

    m.def(
        "train",
        [](GaussianSet init, const LidarCloud& cloud, const std::vector<DistortedCamera>& cams,
           const std::vector<Array>& images, const std::vector<std::size_t>& train_ids,
           const std::vector<std::size_t>& val_ids, int iterations, std::uint64_t seed, double sigma, double epsilon,
           double tau_pos, double alpha, double beta, double gamma, double lambda, int max_sh_degree, int threads,
           int validation_interval) {
            const auto tv = build_views(cloud, cams, images, train_ids);
            const auto vv = build_views(cloud, cams, images, val_ids);
            TrainConfig cfg;
            cfg.iterations = iterations;
            cfg.densify_start = std::min(cfg.densify_start, iterations);
            cfg.seed = seed;
            cfg.densify.sigma = sigma;
            cfg.densify.epsilon = epsilon;
            cfg.densify.tau_pos = tau_pos;
            cfg.weights.alpha = alpha;
            cfg.weights.beta = beta;
            cfg.weights.gamma = gamma;
            cfg.weights.lambda = lambda;
            cfg.max_sh_degree = max_sh_degree;
            cfg.render.threads = threads;
            cfg.validation_interval = validation_interval;
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(std::move(init), cloud, tv, vv, cfg);
            }
            py::list log;
            for (const auto& row : r.log) {
                py::dict d;
                d["iteration"] = row.iteration;
                d["l1"] = row.loss.l1;
                d["dssim"] = row.loss.dssim;
                d["depth"] = row.loss.depth;
                d["normal"] = row.loss.normal;
                d["scale"] = row.loss.scale;
                d["total"] = row.loss.total;
                d["count"] = row.count;
                if (row.has_val) d["val_psnr"] = row.val_psnr;
                log.append(d);
            }
            return py::make_tuple(r.set, log);
        },
        py::arg("init"), py::arg("cloud"), py::arg("cameras"), py::arg("images"), py::arg("train"),
        py::arg("val") = std::vector<std::size_t>{}, py::arg("iterations") = 30000, py::arg("seed") = 0,
        py::arg("sigma") = 1.0, py::arg("epsilon") = 0.005, py::arg("tau_pos") = 0.0002, py::arg("alpha") = 100.0,
        py::arg("beta") = 0.001, py::arg("gamma") = 0.001, py::arg("lambda_") = 0.2, py::arg("max_sh_degree") = 3,
        py::arg("threads") = 1, py::arg("validation_interval") = 100,
        "Optimise `init` on the views `train` of (cameras, images); returns (gaussians, log).");
}
