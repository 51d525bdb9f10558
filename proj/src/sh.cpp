#include "lidarsplat/sh.hpp"

namespace lsplat {

namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                          0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                          -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

} // namespace

void sh_basis(int degree, const Vec3& dir, ShBasis& out, ShBasisGrad* grad) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    out.fill(0.0);
    if (grad) {
        grad->fill(Vec3::Zero());
    }
    out[0] = kC0;
    if (degree < 1) {
        return;
    }
    out[1] = -kC1 * y;
    out[2] = kC1 * z;
    out[3] = -kC1 * x;
    if (grad) {
        auto& g = *grad;
        g[1] = {0.0, -kC1, 0.0};
        g[2] = {0.0, 0.0, kC1};
        g[3] = {-kC1, 0.0, 0.0};
    }
    if (degree < 2) {
        return;
    }
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kC2[0] * x * y;
    out[5] = kC2[1] * y * z;
    out[6] = kC2[2] * (2.0 * zz - xx - yy);
    out[7] = kC2[3] * x * z;
    out[8] = kC2[4] * (xx - yy);
    if (grad) {
        auto& g = *grad;
        g[4] = kC2[0] * Vec3(y, x, 0.0);
        g[5] = kC2[1] * Vec3(0.0, z, y);
        g[6] = kC2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
        g[7] = kC2[3] * Vec3(z, 0.0, x);
        g[8] = kC2[4] * Vec3(2.0 * x, -2.0 * y, 0.0);
    }
    if (degree < 3) {
        return;
    }
    out[9] = kC3[0] * y * (3.0 * xx - yy);
    out[10] = kC3[1] * x * y * z;
    out[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    out[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    out[14] = kC3[5] * z * (xx - yy);
    out[15] = kC3[6] * x * (xx - 3.0 * yy);
    if (grad) {
        auto& g = *grad;
        g[9] = kC3[0] * Vec3(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
        g[10] = kC3[1] * Vec3(y * z, x * z, x * y);
        g[11] = kC3[2] * Vec3(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
        g[12] = kC3[3] * Vec3(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
        g[13] = kC3[4] * Vec3(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
        g[14] = kC3[5] * Vec3(2.0 * x * z, -2.0 * y * z, xx - yy);
        g[15] = kC3[6] * Vec3(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
    }
}

Vec3 sh_color(int degree, const std::array<Vec3, kMaxShCoeffs>& sh, const Vec3& dir) {
    ShBasis basis;
    sh_basis(degree, dir, basis);
    Vec3 c = Vec3::Constant(0.5);
    for (int k = 0; k < sh_coeff_count(degree); ++k) {
        c += basis[k] * sh[k];
    }
    return c;
}

Vec3 rgb_to_sh0(const Vec3& rgb) { return (rgb.array() - 0.5) / kC0; }

} // namespace lsplat
