#include "lidarsplat/scene.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace lsplat {

// ---------------------------------------------------------------------------
// Gaussian

Mat3 quaternion_to_matrix(const Vec4& q_in) {
    const Vec4 q = q_in.normalized();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 Gaussian::rotation_matrix() const { return quaternion_to_matrix(rotation); }

Mat3 Gaussian::covariance() const {
    const Mat3 r = rotation_matrix();
    const Vec3 s2 = (2.0 * log_scale).array().exp();
    return r * s2.asDiagonal() * r.transpose();
}

void Gaussian::normalize() {
    const double n = rotation.norm();
    rotation = n > 0.0 ? Vec4(rotation / n) : Vec4(1.0, 0.0, 0.0, 0.0);
    log_scale = log_scale.cwiseMax(std::log(kMinScale));
}

Gaussian make_gaussian(const Vec3& position, const Vec4& rotation, const Vec3& scale, double opacity) {
    Gaussian g;
    g.position = position;
    g.rotation = rotation;
    g.log_scale = scale.cwiseMax(kMinScale).array().log();
    g.logit_opacity = logit(opacity);
    g.normalize();
    return g;
}

Gaussian gaussian_from_covariance(const Vec3& position, const Mat3& covariance, double opacity) {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(0.5 * (covariance + covariance.transpose()));
    Mat3 v = eig.eigenvectors();
    if (v.determinant() < 0.0) {
        v.col(0) = -v.col(0);
    }
    const Eigen::Quaterniond q(v);
    const Vec3 scale = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return make_gaussian(position, Vec4(q.w(), q.x(), q.y(), q.z()), scale, opacity);
}

void GaussianSet::push_back(const Gaussian& g) {
    gaussians.push_back(g);
    grad_accum.push_back(0.0);
    weight_accum.push_back(0.0);
}

void GaussianSet::reset_accumulators() {
    grad_accum.assign(gaussians.size(), 0.0);
    weight_accum.assign(gaussians.size(), 0.0);
}

void GaussianSet::check_consistent() const {
    if (grad_accum.size() != gaussians.size() || weight_accum.size() != gaussians.size()) {
        throw Error("GaussianSet: accumulator length does not match Gaussian count");
    }
}

// ---------------------------------------------------------------------------
// LidarCloud

LidarCloud::LidarCloud(std::vector<Vec3> points, std::vector<Vec3> normals, std::size_t normal_k) {
    if (points.empty()) {
        return;
    }
    tree_ = KdTree(std::move(points));
    if (normals.empty()) {
        recompute_normals(normal_k);
        return;
    }
    if (normals.size() != tree_.size()) {
        throw Error("LidarCloud: normal count does not match point count");
    }
    for (std::size_t i = 0; i < normals.size(); ++i) {
        const double n = normals[i].norm();
        if (!(n > 0.0) || !std::isfinite(n)) {
            throw Error("LidarCloud: normal " + std::to_string(i) + " has zero or non-finite length");
        }
        normals[i] /= n;
    }
    normals_ = std::move(normals);
}

void LidarCloud::recompute_normals(std::size_t k, const Vec3& reference) {
    if (tree_.size() < 3) {
        normals_.assign(tree_.size(), reference.normalized());
        return;
    }
    normals_ = estimate_normals(tree_, std::min(k, tree_.size()), reference);
}

// ---------------------------------------------------------------------------
// DistortedCamera / maps

void DistortedCamera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw Error("camera: focal lengths must be positive");
    }
    if (width < 1 || height < 1) {
        throw Error("camera: image size must be at least 1x1");
    }
    if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(k1) || !std::isfinite(k2) ||
        !rotation.allFinite() || !translation.allFinite()) {
        throw Error("camera: non-finite parameter");
    }
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9) {
        throw Error("camera: rotation is not a proper orthonormal matrix");
    }
}

DepthNormalMaps::DepthNormalMaps(int w, int h)
    : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0),
      normal(static_cast<std::size_t>(w) * h, Vec3::Zero()), valid(static_cast<std::size_t>(w) * h, 0),
      sample_uv(static_cast<std::size_t>(w) * h, Vec2::Zero()) {}

std::size_t DepthNormalMaps::valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) {
        n += v ? 1 : 0;
    }
    return n;
}

// ---------------------------------------------------------------------------
// PLY

namespace {

struct PlyProperty {
    std::string name;
    std::string type;
    std::size_t size = 0;
    std::size_t offset = 0; // within one element record
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::size_t record_size = 0;
    std::vector<PlyProperty> properties;

    std::optional<std::size_t> find(const std::string& prop) const {
        for (std::size_t i = 0; i < properties.size(); ++i) {
            if (properties[i].name == prop) {
                return i;
            }
        }
        return std::nullopt;
    }
};

struct PlyFile {
    std::vector<char> bytes;
    std::vector<PlyElement> elements;
    std::size_t data_begin = 0;
};

std::size_t ply_type_size(const std::string& t) {
    static const std::map<std::string, std::size_t> sizes{
        {"char", 1},   {"uchar", 1},  {"int8", 1},    {"uint8", 1},   {"short", 2},   {"ushort", 2},
        {"int16", 2},  {"uint16", 2}, {"int", 4},     {"uint", 4},    {"int32", 4},   {"uint32", 4},
        {"float", 4},  {"float32", 4}, {"double", 8}, {"float64", 8}};
    const auto it = sizes.find(t);
    return it == sizes.end() ? 0 : it->second;
}

template <typename T>
T load_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    return v;
}

template <typename T>
void store_le(std::ostream& out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        std::reverse(b, b + sizeof(T));
    }
    out.write(b, sizeof(T));
}

double read_scalar(const char* p, const std::string& t) {
    if (t == "float" || t == "float32") return load_le<float>(p);
    if (t == "double" || t == "float64") return load_le<double>(p);
    if (t == "char" || t == "int8") return load_le<std::int8_t>(p);
    if (t == "uchar" || t == "uint8") return load_le<std::uint8_t>(p);
    if (t == "short" || t == "int16") return load_le<std::int16_t>(p);
    if (t == "ushort" || t == "uint16") return load_le<std::uint16_t>(p);
    if (t == "int" || t == "int32") return load_le<std::int32_t>(p);
    return load_le<std::uint32_t>(p);
}

PlyFile read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    PlyFile ply;
    ply.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    const auto& b = ply.bytes;

    std::size_t pos = 0;
    auto next_line = [&](std::string& line) -> bool {
        if (pos >= b.size()) return false;
        std::size_t end = pos;
        while (end < b.size() && b[end] != '\n') ++end;
        if (end >= b.size()) return false; // header lines must be newline terminated
        line.assign(b.data() + pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = end + 1;
        return true;
    };

    std::string line;
    if (!next_line(line) || line != "ply") {
        throw ParseError("PLY: missing 'ply' magic", 0);
    }
    bool have_format = false;
    bool ended = false;
    while (true) {
        const std::size_t line_start = pos;
        if (!next_line(line)) {
            break;
        }
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt != "binary_little_endian") {
                throw ParseError("PLY: unsupported format '" + fmt + "' (binary_little_endian required)", line_start);
            }
            have_format = true;
        } else if (kw == "comment" || kw == "obj_info" || kw.empty()) {
            continue;
        } else if (kw == "element") {
            PlyElement e;
            long long count = -1;
            ls >> e.name >> count;
            if (e.name.empty() || count < 0) {
                throw ParseError("PLY: malformed element line '" + line + "'", line_start);
            }
            e.count = static_cast<std::size_t>(count);
            ply.elements.push_back(e);
        } else if (kw == "property") {
            if (ply.elements.empty()) {
                throw ParseError("PLY: property before any element", line_start);
            }
            PlyProperty p;
            ls >> p.type >> p.name;
            if (p.type == "list") {
                throw ParseError("PLY: list properties are not supported", line_start);
            }
            p.size = ply_type_size(p.type);
            if (p.size == 0 || p.name.empty()) {
                throw ParseError("PLY: malformed property line '" + line + "'", line_start);
            }
            auto& e = ply.elements.back();
            p.offset = e.record_size;
            e.record_size += p.size;
            e.properties.push_back(p);
        } else if (kw == "end_header") {
            ended = true;
            break;
        } else {
            throw ParseError("PLY: unknown header keyword '" + kw + "'", line_start);
        }
    }
    if (!ended) {
        throw ParseError("PLY: truncated header, missing 'end_header'", b.size());
    }
    if (!have_format) {
        throw ParseError("PLY: missing format line", pos);
    }
    ply.data_begin = pos;
    return ply;
}

struct ElementView {
    const PlyElement* element;
    std::size_t begin; // byte offset of first record
};

ElementView locate_element(const PlyFile& ply, const std::string& name) {
    std::size_t offset = ply.data_begin;
    for (const auto& e : ply.elements) {
        if (e.name == name) {
            const std::size_t need = e.count * e.record_size;
            if (ply.bytes.size() < offset + need) {
                throw ParseError("PLY: '" + name + "' data truncated: expected " + std::to_string(need) +
                                     " bytes, found " + std::to_string(ply.bytes.size() - std::min(offset, ply.bytes.size())),
                                 ply.bytes.size());
            }
            return {&e, offset};
        }
        offset += e.count * e.record_size;
    }
    throw ParseError("PLY: missing element '" + name + "'", ply.data_begin);
}

std::size_t require_property(const ElementView& v, const std::string& prop, std::size_t header_end) {
    const auto idx = v.element->find(prop);
    if (!idx) {
        throw ParseError("PLY: missing property '" + prop + "' in element '" + v.element->name + "'", header_end);
    }
    return *idx;
}

double read_value(const PlyFile& ply, const ElementView& v, std::size_t row, std::size_t prop_index) {
    const auto& p = v.element->properties[prop_index];
    const std::size_t at = v.begin + row * v.element->record_size + p.offset;
    const double x = read_scalar(ply.bytes.data() + at, p.type);
    if (!std::isfinite(x)) {
        throw ParseError("PLY: non-finite value in property '" + p.name + "' of row " + std::to_string(row), at);
    }
    return x;
}

void write_header(std::ostream& out, std::size_t count, const std::vector<std::string>& props) {
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << count << "\n";
    for (const auto& p : props) {
        out << "property float " << p << "\n";
    }
    out << "end_header\n";
}

std::vector<std::string> gaussian_property_names(int sh_degree) {
    std::vector<std::string> names{"x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3",
                                   "log_scale_0", "log_scale_1", "log_scale_2", "logit_opacity"};
    const int k = sh_coeff_count(sh_degree);
    for (int i = 0; i < 3 * k; ++i) {
        names.push_back("sh_" + std::to_string(i));
    }
    return names;
}

} // namespace

GaussianSet load_ply_gaussians(const std::filesystem::path& path) {
    const PlyFile ply = read_ply(path);
    const ElementView v = locate_element(ply, "vertex");

    std::size_t sh_props = 0;
    while (v.element->find("sh_" + std::to_string(sh_props))) {
        ++sh_props;
    }
    int degree = -1;
    for (int d = 0; d <= kMaxShDegree; ++d) {
        if (static_cast<std::size_t>(3 * sh_coeff_count(d)) == sh_props) {
            degree = d;
        }
    }
    if (degree < 0) {
        throw ParseError("PLY: found " + std::to_string(sh_props) +
                             " sh_* properties; expected 3, 12, 27 or 48",
                         ply.data_begin);
    }

    const auto names = gaussian_property_names(degree);
    std::vector<std::size_t> idx;
    for (const auto& n : names) {
        idx.push_back(require_property(v, n, ply.data_begin));
    }

    GaussianSet set;
    set.sh_degree = degree;
    const int k = sh_coeff_count(degree);
    set.gaussians.reserve(v.element->count);
    for (std::size_t row = 0; row < v.element->count; ++row) {
        Gaussian g;
        for (int i = 0; i < 3; ++i) g.position[i] = read_value(ply, v, row, idx[i]);
        for (int i = 0; i < 4; ++i) g.rotation[i] = read_value(ply, v, row, idx[3 + i]);
        for (int i = 0; i < 3; ++i) g.log_scale[i] = read_value(ply, v, row, idx[7 + i]);
        g.logit_opacity = read_value(ply, v, row, idx[10]);
        for (int c = 0; c < 3; ++c) {
            for (int j = 0; j < k; ++j) {
                g.sh[j][c] = read_value(ply, v, row, idx[11 + c * k + j]);
            }
        }
        if (g.rotation.norm() == 0.0) {
            throw ParseError("PLY: zero quaternion in row " + std::to_string(row), v.begin + row * v.element->record_size);
        }
        set.push_back(g);
    }
    return set;
}

void save_ply_gaussians(const GaussianSet& set, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    const int k = sh_coeff_count(set.sh_degree);
    write_header(out, set.size(), gaussian_property_names(set.sh_degree));
    for (const auto& g : set.gaussians) {
        for (int i = 0; i < 3; ++i) store_le(out, static_cast<float>(g.position[i]));
        for (int i = 0; i < 4; ++i) store_le(out, static_cast<float>(g.rotation[i]));
        for (int i = 0; i < 3; ++i) store_le(out, static_cast<float>(g.log_scale[i]));
        store_le(out, static_cast<float>(g.logit_opacity));
        for (int c = 0; c < 3; ++c) {
            for (int j = 0; j < k; ++j) store_le(out, static_cast<float>(g.sh[j][c]));
        }
    }
    if (!out) {
        throw Error("write failed: " + path.string());
    }
}

LidarCloud load_ply_points(const std::filesystem::path& path) {
    const PlyFile ply = read_ply(path);
    const ElementView v = locate_element(ply, "vertex");
    const std::size_t ix = require_property(v, "x", ply.data_begin);
    const std::size_t iy = require_property(v, "y", ply.data_begin);
    const std::size_t iz = require_property(v, "z", ply.data_begin);
    const auto inx = v.element->find("nx");
    const auto iny = v.element->find("ny");
    const auto inz = v.element->find("nz");
    const bool has_normals = inx && iny && inz;

    std::vector<Vec3> points(v.element->count);
    std::vector<Vec3> normals;
    if (has_normals) normals.resize(v.element->count);
    for (std::size_t row = 0; row < v.element->count; ++row) {
        points[row] = {read_value(ply, v, row, ix), read_value(ply, v, row, iy), read_value(ply, v, row, iz)};
        if (has_normals) {
            normals[row] = {read_value(ply, v, row, *inx), read_value(ply, v, row, *iny), read_value(ply, v, row, *inz)};
        }
    }
    return LidarCloud(std::move(points), std::move(normals));
}

void save_ply_points(const LidarCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    write_header(out, cloud.size(), {"x", "y", "z", "nx", "ny", "nz"});
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int c = 0; c < 3; ++c) store_le(out, static_cast<float>(cloud.points()[i][c]));
        for (int c = 0; c < 3; ++c) store_le(out, static_cast<float>(cloud.normals()[i][c]));
    }
    if (!out) {
        throw Error("write failed: " + path.string());
    }
}

// ---------------------------------------------------------------------------
// Camera JSON

std::string camera_to_json_string(const DistortedCamera& cam) {
    nlohmann::ordered_json j;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    j["k1"] = cam.k1;
    j["k2"] = cam.k2;
    j["width"] = cam.width;
    j["height"] = cam.height;
    std::vector<double> r;
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) r.push_back(cam.rotation(i, c));
    j["rotation"] = r;
    j["translation"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
    j["radial_units"] = cam.radial_units == RadialUnits::Pixel ? "pixel" : "normalized";
    return j.dump(2);
}

DistortedCamera camera_from_json_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("camera JSON: ") + e.what(), e.byte);
    }
    DistortedCamera cam;
    try {
        cam.fx = j.at("fx").get<double>();
        cam.fy = j.at("fy").get<double>();
        cam.cx = j.at("cx").get<double>();
        cam.cy = j.at("cy").get<double>();
        cam.k1 = j.at("k1").get<double>();
        cam.k2 = j.at("k2").get<double>();
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        const auto r = j.at("rotation").get<std::vector<double>>();
        const auto t = j.at("translation").get<std::vector<double>>();
        if (r.size() != 9 || t.size() != 3) {
            throw Error("camera JSON: rotation needs 9 values and translation 3");
        }
        for (int i = 0; i < 9; ++i) cam.rotation(i / 3, i % 3) = r[i];
        cam.translation = {t[0], t[1], t[2]};
        if (j.contains("radial_units")) {
            const auto u = j.at("radial_units").get<std::string>();
            if (u == "pixel") cam.radial_units = RadialUnits::Pixel;
            else if (u == "normalized") cam.radial_units = RadialUnits::Normalized;
            else throw Error("camera JSON: radial_units must be 'pixel' or 'normalized'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("camera JSON: ") + e.what());
    }
    // Rotations typed by hand carry a few digits; snap small deviations.
    const double ortho = (cam.rotation.transpose() * cam.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-9 && ortho < 1e-6) {
        Eigen::JacobiSVD<Mat3> svd(cam.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
        cam.rotation = svd.matrixU() * svd.matrixV().transpose();
    }
    cam.validate();
    return cam;
}

DistortedCamera load_camera_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return camera_from_json_string(ss.str());
}

void save_camera_json(const DistortedCamera& cam, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << camera_to_json_string(cam) << "\n";
}

} // namespace lsplat
