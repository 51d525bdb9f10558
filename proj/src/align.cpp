#include "lidarsplat/align.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace lsplat {

namespace {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

Mat3 skew(const Vec3& v) {
    Mat3 s;
    s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return s;
}

// Weighted squared error, or +inf if any point is behind the camera.
double cost(const DistortedCamera& cam, const std::vector<Correspondence>& corr) {
    double c = 0.0;
    for (const auto& k : corr) {
        const Vec3 p = cam.rotation * k.lidar_point + cam.translation;
        if (!(p.z() > kBehindCamera)) {
            return std::numeric_limits<double>::infinity();
        }
        c += k.weight * (project_camera(cam, p) - k.feature_uv).squaredNorm();
    }
    return c;
}

double rms_from_cost(double c, double weight_sum) {
    return weight_sum > 0.0 ? std::sqrt(c / (2.0 * weight_sum)) : 0.0;
}

} // namespace

Mat3 rotation_exp(const Vec3& w) {
    const double angle = w.norm();
    if (angle == 0.0) {
        return Mat3::Identity();
    }
    return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

double rotation_distance(const Mat3& a, const Mat3& b) {
    return Eigen::AngleAxisd(a.transpose() * b).angle();
}

std::vector<Correspondence> find_correspondences(const LidarCloud& cloud, const DistortedCamera& cam,
                                                 const std::vector<Vec2>& features, double /*voxel_size*/,
                                                 double radius) {
    if (cloud.empty()) {
        throw Error("find_correspondences: LiDAR cloud is empty");
    }
    const auto projected = project_cloud(cam, cloud);
    const int w = cam.width, h = cam.height;
    std::vector<std::vector<std::size_t>> bins(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < projected.size(); ++i) {
        const int x = static_cast<int>(std::floor(projected[i].pixel.u));
        const int y = static_cast<int>(std::floor(projected[i].pixel.v));
        bins[static_cast<std::size_t>(y) * w + x].push_back(i);
    }

    std::vector<Correspondence> out;
    const int reach = static_cast<int>(std::ceil(radius));
    for (std::size_t f = 0; f < features.size(); ++f) {
        const Vec2& uv = features[f];
        if (!std::isfinite(uv.x()) || !std::isfinite(uv.y())) continue;
        const int fx = static_cast<int>(std::floor(uv.x()));
        const int fy = static_cast<int>(std::floor(uv.y()));
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        bool found = false;
        for (int y = std::max(0, fy - reach); y <= std::min(h - 1, fy + reach); ++y) {
            for (int x = std::max(0, fx - reach); x <= std::min(w - 1, fx + reach); ++x) {
                for (auto i : bins[static_cast<std::size_t>(y) * w + x]) {
                    const auto& pp = projected[i];
                    const double d = std::hypot(pp.pixel.u - uv.x(), pp.pixel.v - uv.y());
                    if (d > radius) continue;
                    const double score = d * pp.pixel.depth;
                    if (score < best || (score == best && pp.index < projected[best_i].index)) {
                        best = score;
                        best_i = i;
                        found = true;
                    }
                }
            }
        }
        if (found) {
            Correspondence c;
            c.feature_uv = uv;
            c.lidar_point = cloud.points()[projected[best_i].index];
            c.feature_index = f;
            out.push_back(c);
        }
    }
    return out;
}

double reprojection_rms(const DistortedCamera& cam, const std::vector<Correspondence>& corr) {
    double wsum = 0.0;
    for (const auto& c : corr) wsum += c.weight;
    return rms_from_cost(cost(cam, corr), wsum);
}

RefineResult refine_pose(const DistortedCamera& cam, const std::vector<Correspondence>& corr,
                         const RefineOptions& options) {
    if (corr.size() < 3) {
        throw Error("refine_pose: need at least 3 correspondences, got " + std::to_string(corr.size()));
    }
    double wsum = 0.0;
    for (const auto& c : corr) {
        if (!std::isfinite(c.weight) || c.weight < 0.0 || !c.lidar_point.allFinite() || !c.feature_uv.allFinite()) {
            throw Error("refine_pose: correspondence with non-finite or negative values");
        }
        wsum += c.weight;
    }
    if (!(wsum > 0.0)) {
        throw Error("refine_pose: all correspondence weights are zero");
    }

    RefineResult res;
    res.camera = cam;
    double current = cost(cam, corr);
    if (!std::isfinite(current)) {
        throw Error("refine_pose: a correspondence lies behind the initial camera");
    }
    res.initial_rms = rms_from_cost(current, wsum);
    double lambda = options.initial_damping;
    bool checked_rank = false;

    for (int it = 0; it < options.max_iterations && current > 0.0; ++it) {
        res.iterations = it + 1;
        Mat6 H = Mat6::Zero();
        Vec6 g = Vec6::Zero();
        const DistortedCamera& c = res.camera;
        for (const auto& k : corr) {
            const Vec3 rp = c.rotation * k.lidar_point;
            const Vec3 p = rp + c.translation;
            const Vec2 r = project_camera(c, p) - k.feature_uv;
            const Mat23 jp = projection_jacobian_camera(c, p);
            Eigen::Matrix<double, 2, 6> J;
            J.leftCols<3>() = -jp * skew(rp);
            J.rightCols<3>() = jp;
            H += k.weight * J.transpose() * J;
            g += k.weight * J.transpose() * r;
        }
        Vec6 diag = H.diagonal();
        if (!checked_rank) {
            // Scale-free rank test on the Jacobi-preconditioned system.
            Vec6 inv_sqrt;
            for (int i = 0; i < 6; ++i) {
                inv_sqrt[i] = diag[i] > 0.0 ? 1.0 / std::sqrt(diag[i]) : 0.0;
            }
            const Mat6 scaled = inv_sqrt.asDiagonal() * H * inv_sqrt.asDiagonal();
            Eigen::SelfAdjointEigenSolver<Mat6> eig(scaled);
            if (diag.minCoeff() <= 0.0 || eig.eigenvalues()[0] <= 1e-12 * eig.eigenvalues()[5]) {
                throw DegenerateError("refine_pose: pose is not determined by the correspondences "
                                      "(rank-deficient normal equations, e.g. collinear points)");
            }
            checked_rank = true;
        }

        bool accepted = false;
        double step_norm = 0.0;
        while (!accepted) {
            Mat6 A = H;
            A.diagonal() += lambda * diag;
            const Vec6 delta = A.ldlt().solve(-g);
            step_norm = delta.norm();
            DistortedCamera trial = c;
            const Mat3 dR = rotation_exp(delta.head<3>());
            // p_cam = dR (R p) + t + dt
            trial.translation = c.translation + delta.tail<3>();
            trial.rotation = dR * c.rotation;
            const double trial_cost = cost(trial, corr);
            if (trial_cost < current) {
                res.camera = trial;
                current = trial_cost;
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
            } else {
                lambda *= 10.0;
                if (lambda > 1e16 || step_norm < options.step_tolerance) {
                    break;
                }
            }
        }
        if (step_norm < options.step_tolerance || !accepted) {
            res.converged = true;
            break;
        }
    }
    if (current == 0.0) res.converged = true;
    res.final_rms = rms_from_cost(current, wsum);
    return res;
}

std::vector<AlignmentRow> alignment_report(const LidarCloud& cloud, const std::vector<DistortedCamera>& cams,
                                           const std::vector<std::vector<Vec2>>& features, double radius) {
    if (features.size() != cams.size()) {
        throw Error("alignment_report: one feature list per camera is required");
    }
    std::vector<AlignmentRow> rows;
    for (std::size_t i = 0; i < cams.size(); ++i) {
        AlignmentRow row;
        row.camera = i;
        row.refined = cams[i];
        try {
            const auto corr = find_correspondences(cloud, cams[i], features[i], 0.5, radius);
            row.correspondences = corr.size();
            const auto r = refine_pose(cams[i], corr);
            row.rms_before = r.initial_rms;
            row.rms_after = r.final_rms;
            row.refined = r.camera;
            row.ok = true;
        } catch (const Error& e) {
            row.error = e.what();
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<FeatureRecord> read_feature_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open feature file " + path.string());
    }
    std::vector<FeatureRecord> rows;
    std::string line;
    std::size_t offset = 0;
    bool first = true;
    while (std::getline(in, line)) {
        const std::size_t line_start = offset;
        offset += line.size() + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first && line.rfind("image_id", 0) == 0) {
            first = false;
            continue;
        }
        first = false;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) fields.push_back(item);
        if (fields.size() != 3 && fields.size() != 6) {
            throw ParseError("feature CSV: expected 3 or 6 fields, got " + std::to_string(fields.size()), line_start);
        }
        FeatureRecord r;
        try {
            std::size_t used = 0;
            r.image_id = std::stoi(fields[0], &used);
            double v[5];
            for (std::size_t k = 1; k < fields.size(); ++k) {
                v[k - 1] = std::stod(fields[k]);
                if (!std::isfinite(v[k - 1])) throw std::invalid_argument("non-finite");
            }
            r.uv = {v[0], v[1]};
            if (fields.size() == 6) r.xyz = Vec3(v[2], v[3], v[4]);
        } catch (const std::exception&) {
            throw ParseError("feature CSV: malformed number", line_start);
        }
        rows.push_back(r);
    }
    return rows;
}

void write_feature_csv(const std::vector<FeatureRecord>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write feature file " + path.string());
    }
    bool any_xyz = false;
    for (const auto& r : rows) any_xyz = any_xyz || r.xyz.has_value();
    out << (any_xyz ? "image_id,u,v,x,y,z\n" : "image_id,u,v\n") << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.image_id << ',' << r.uv.x() << ',' << r.uv.y();
        if (r.xyz) out << ',' << r.xyz->x() << ',' << r.xyz->y() << ',' << r.xyz->z();
        out << '\n';
    }
}

} // namespace lsplat
