#include "lidarsplat/camera.hpp"

#include <cmath>

namespace lsplat {

namespace {

// Radial polynomial kappa(a, b) = k1 s + k2 s^2 with s = (sx a)^2 + (sy b)^2
// and (a, b) the ideal offset from the principal point, plus derivatives.
struct Radial {
    double sx2, sy2; // squared unit scales
    double s, kappa;
    double dk_ds, d2k_ds2;
    double ka, kb;        // d kappa / da, d kappa / db
    double kaa, kab, kbb; // second derivatives

    Radial(const DistortedCamera& cam, double a, double b) {
        const bool pixel = cam.radial_units == RadialUnits::Pixel;
        sx2 = pixel ? 1.0 : 1.0 / (cam.fx * cam.fx);
        sy2 = pixel ? 1.0 : 1.0 / (cam.fy * cam.fy);
        s = sx2 * a * a + sy2 * b * b;
        kappa = cam.k1 * s + cam.k2 * s * s;
        dk_ds = cam.k1 + 2.0 * cam.k2 * s;
        d2k_ds2 = 2.0 * cam.k2;
        const double sa = 2.0 * sx2 * a, sb = 2.0 * sy2 * b;
        ka = dk_ds * sa;
        kb = dk_ds * sb;
        kaa = d2k_ds2 * sa * sa + dk_ds * 2.0 * sx2;
        kab = d2k_ds2 * sa * sb;
        kbb = d2k_ds2 * sb * sb + dk_ds * 2.0 * sy2;
    }
};

// d(distorted offset)/d(ideal offset).
Mat2 distortion_jacobian(const Radial& r, double a, double b) {
    Mat2 d;
    d << 1.0 + r.kappa + a * r.ka, a * r.kb,
        b * r.ka, 1.0 + r.kappa + b * r.kb;
    return d;
}

Mat23 pinhole_jacobian(const DistortedCamera& cam, const Vec3& p) {
    const double iz = 1.0 / p.z();
    Mat23 j;
    j << cam.fx * iz, 0.0, -cam.fx * p.x() * iz * iz,
        0.0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
    return j;
}

} // namespace

Vec2 distort(const DistortedCamera& cam, const Vec2& ideal_uv) {
    const double a = ideal_uv.x() - cam.cx;
    const double b = ideal_uv.y() - cam.cy;
    const Radial r(cam, a, b);
    return {cam.cx + a * (1.0 + r.kappa), cam.cy + b * (1.0 + r.kappa)};
}

Vec2 undistort(const DistortedCamera& cam, const Vec2& distorted_uv) {
    const double da = distorted_uv.x() - cam.cx;
    const double db = distorted_uv.y() - cam.cy;
    if (cam.k1 == 0.0 && cam.k2 == 0.0) {
        return distorted_uv;
    }
    double a = da, b = db;
    double residual = 0.0;
    for (int it = 0; it < 50; ++it) {
        const Radial r(cam, a, b);
        const double f = 1.0 + r.kappa;
        if (!(f > 0.0)) {
            throw NumericError("undistort: distortion factor is not positive", std::hypot(a * f - da, b * f - db));
        }
        const double na = da / f, nb = db / f;
        const double step = std::hypot(na - a, nb - b);
        a = na;
        b = nb;
        const Radial rn(cam, a, b);
        residual = std::hypot(a * (1.0 + rn.kappa) - da, b * (1.0 + rn.kappa) - db);
        if (step < 1e-10) {
            return {cam.cx + a, cam.cy + b};
        }
    }
    throw NumericError("undistort: no convergence after 50 iterations", residual);
}

Vec2 project_camera(const DistortedCamera& cam, const Vec3& p_cam) {
    const double a = cam.fx * p_cam.x() / p_cam.z();
    const double b = cam.fy * p_cam.y() / p_cam.z();
    if (cam.k1 == 0.0 && cam.k2 == 0.0) {
        return {a + cam.cx, b + cam.cy};
    }
    const Radial r(cam, a, b);
    return {cam.cx + a * (1.0 + r.kappa), cam.cy + b * (1.0 + r.kappa)};
}

std::optional<PixelCoord> project(const DistortedCamera& cam, const Vec3& p_world) {
    const Vec3 p = cam.rotation * p_world + cam.translation;
    if (!(p.z() > kBehindCamera)) {
        return std::nullopt;
    }
    const Vec2 uv = project_camera(cam, p);
    return PixelCoord{uv.x(), uv.y(), p.z()};
}

Mat23 projection_jacobian_camera(const DistortedCamera& cam, const Vec3& p_cam) {
    const double a = cam.fx * p_cam.x() / p_cam.z();
    const double b = cam.fy * p_cam.y() / p_cam.z();
    const Radial r(cam, a, b);
    return distortion_jacobian(r, a, b) * pinhole_jacobian(cam, p_cam);
}

Vec3 projection_jacobian_vjp(const DistortedCamera& cam, const Vec3& p, const Mat23& g) {
    const double iz = 1.0 / p.z();
    const double iz2 = iz * iz;
    const double a = cam.fx * p.x() / p.z();
    const double b = cam.fy * p.y() / p.z();
    const Radial r(cam, a, b);
    const Mat2 d = distortion_jacobian(r, a, b);
    const Mat23 pj = pinhole_jacobian(cam, p);

    Mat2 dd_da, dd_db;
    dd_da << 2.0 * r.ka + a * r.kaa, r.kb + a * r.kab,
        b * r.kaa, r.ka + b * r.kab;
    dd_db << r.kb + a * r.kab, a * r.kbb,
        r.ka + b * r.kab, 2.0 * r.kb + b * r.kbb;

    // d P / d p_k
    Mat23 dp[3];
    dp[0] << 0.0, 0.0, -cam.fx * iz2, 0.0, 0.0, 0.0;
    dp[1] << 0.0, 0.0, 0.0, 0.0, 0.0, -cam.fy * iz2;
    dp[2] << -cam.fx * iz2, 0.0, 2.0 * cam.fx * p.x() * iz2 * iz,
        0.0, -cam.fy * iz2, 2.0 * cam.fy * p.y() * iz2 * iz;

    // (d/dp_k of D) P = (dD/da * da/dp_k + dD/db * db/dp_k) P, with
    // (da, db)/dp = P.
    const Mat23 gpt_a = (dd_da * pj);
    const Mat23 gpt_b = (dd_db * pj);
    const double ga = (g.array() * gpt_a.array()).sum();
    const double gb = (g.array() * gpt_b.array()).sum();

    Vec3 out;
    for (int k = 0; k < 3; ++k) {
        out[k] = ga * pj(0, k) + gb * pj(1, k) + (g.array() * (d * dp[k]).array()).sum();
    }
    return out;
}

Mat23 project_jacobian(const DistortedCamera& cam, const Vec3& p_world) {
    const Vec3 p = cam.rotation * p_world + cam.translation;
    if (!(p.z() > kBehindCamera)) {
        throw Error("project_jacobian: point is behind the camera");
    }
    return projection_jacobian_camera(cam, p) * cam.rotation;
}

std::vector<ProjectedPoint> project_cloud(const DistortedCamera& cam, const LidarCloud& cloud) {
    std::vector<ProjectedPoint> out;
    const auto& pts = cloud.points();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto px = project(cam, pts[i]);
        if (!px) {
            continue;
        }
        if (px->u >= 0.0 && px->u < cam.width && px->v >= 0.0 && px->v < cam.height) {
            out.push_back({i, *px});
        }
    }
    return out;
}

Vec3 pixel_ray_camera(const DistortedCamera& cam, const Vec2& distorted_uv) {
    const Vec2 ideal = undistort(cam, distorted_uv);
    return {(ideal.x() - cam.cx) / cam.fx, (ideal.y() - cam.cy) / cam.fy, 1.0};
}

} // namespace lsplat
