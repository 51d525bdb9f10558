#pragma once

#include "lidarsplat/scene.hpp"

#include <array>

namespace lsplat {

using ShBasis = std::array<double, kMaxShCoeffs>;
using ShBasisGrad = std::array<Vec3, kMaxShCoeffs>;

/// Real SH basis values for a unit direction, coefficients 0..(degree+1)^2-1.
/// When `grad` is non-null it receives d basis / d dir (dir treated as free).
void sh_basis(int degree, const Vec3& dir, ShBasis& out, ShBasisGrad* grad = nullptr);

/// RGB = sum_k sh[k] Y_k(dir) + 0.5 (before clamping).
Vec3 sh_color(int degree, const std::array<Vec3, kMaxShCoeffs>& sh, const Vec3& dir);

/// sh[0] value producing the given colour for any view direction.
Vec3 rgb_to_sh0(const Vec3& rgb);

} // namespace lsplat
