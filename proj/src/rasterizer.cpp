#include "lidarsplat/rasterizer.hpp"

#include "lidarsplat/parallel.hpp"
#include "lidarsplat/sh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lsplat {

namespace {

// Splats whose pinhole projection lands further than this fraction of the
// image size outside the frame are culled; far off-axis the radial
// polynomial is no longer a faithful lens model.
constexpr double kGuardBand = 0.5;

struct Contribution {
    std::uint32_t slot; // position in the tile list
    double alpha;
    double gauss;       // exp(power)
    double transmittance; // before this splat
    Vec2 offset;        // pixel - mean
    bool clamped;
};

// Effective alpha of splat `s` at pixel centre `pix`, or a negative value
// when the splat is skipped there.
inline double splat_alpha(const Splat2D& s, const Vec2& pix, const RenderSettings& st, double& gauss, Vec2& d,
                          bool& clamped) {
    d = pix - s.mean2d;
    const double power = -0.5 * (s.conic(0, 0) * d.x() * d.x() + 2.0 * s.conic(0, 1) * d.x() * d.y() +
                                 s.conic(1, 1) * d.y() * d.y());
    if (power > 0.0) {
        return -1.0;
    }
    gauss = std::exp(power);
    const double raw = s.opacity * gauss;
    clamped = raw > st.max_alpha;
    const double a = clamped ? st.max_alpha : raw;
    if (a < st.min_alpha) {
        return -1.0;
    }
    return a;
}

// Slots of `list` whose bounding box spans row py, in list order.
void rows_touching(const RenderOutput& out, const std::vector<std::uint32_t>& list, int py,
                   std::vector<std::uint32_t>& row) {
    row.clear();
    for (std::size_t j = 0; j < list.size(); ++j) {
        const Splat2D& s = out.splats[list[j]];
        if (py >= s.y0 && py <= s.y1) row.push_back(static_cast<std::uint32_t>(j));
    }
}

void check_finite(const GaussianSet& set) {
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& g = set.gaussians[i];
        bool ok = g.position.allFinite() && g.rotation.allFinite() && g.log_scale.allFinite() &&
                  std::isfinite(g.logit_opacity);
        for (int k = 0; k < sh_coeff_count(set.sh_degree) && ok; ++k) {
            ok = g.sh[k].allFinite();
        }
        if (!ok) {
            throw Error("render: Gaussian " + std::to_string(i) + " has a non-finite parameter");
        }
    }
}

// Gradient of a loss through R(q / |q|) given dL/dR.
Vec4 quaternion_backward(const Vec4& q_raw, const Mat3& gr) {
    const double n = q_raw.norm();
    const Vec4 q = q_raw / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 gq;
    gq[0] = 2.0 * (-z * gr(0, 1) + y * gr(0, 2) + z * gr(1, 0) - x * gr(1, 2) - y * gr(2, 0) + x * gr(2, 1));
    gq[1] = 2.0 * (y * gr(0, 1) + z * gr(0, 2) + y * gr(1, 0) - 2.0 * x * gr(1, 1) - w * gr(1, 2) + z * gr(2, 0) +
                   w * gr(2, 1) - 2.0 * x * gr(2, 2));
    gq[2] = 2.0 * (-2.0 * y * gr(0, 0) + x * gr(0, 1) + w * gr(0, 2) + x * gr(1, 0) + z * gr(1, 2) - w * gr(2, 0) +
                   z * gr(2, 1) - 2.0 * y * gr(2, 2));
    gq[3] = 2.0 * (-2.0 * z * gr(0, 0) - w * gr(0, 1) + x * gr(0, 2) + w * gr(1, 0) - 2.0 * z * gr(1, 1) +
                   y * gr(1, 2) + x * gr(2, 0) + y * gr(2, 1));
    // through the normalisation
    return (gq - q * q.dot(gq)) / n;
}

struct SplatGrad {
    Vec2 mean = Vec2::Zero();
    Mat2 conic = Mat2::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    double depth = 0.0;
    Vec3 normal = Vec3::Zero();

    SplatGrad& operator+=(const SplatGrad& o) {
        mean += o.mean;
        conic += o.conic;
        opacity += o.opacity;
        color += o.color;
        depth += o.depth;
        normal += o.normal;
        return *this;
    }
};

} // namespace

GaussianGradients::GaussianGradients(std::size_t n)
    : position(n, Vec3::Zero()), rotation(n, Vec4::Zero()), log_scale(n, Vec3::Zero()), logit_opacity(n, 0.0),
      sh(n), ndc_grad_norm(n, 0.0), coverage(n, 0) {
    for (auto& s : sh) {
        s.fill(Vec3::Zero());
    }
}

Splat2D project_gaussian(const Gaussian& g, int sh_degree, const DistortedCamera& cam, const RenderSettings& st) {
    Splat2D s;
    const Mat3& w = cam.rotation;
    s.p_cam = w * g.position + cam.translation;
    if (!(s.p_cam.z() > std::max(st.near_plane, kBehindCamera))) {
        return s;
    }
    const double ia = cam.fx * s.p_cam.x() / s.p_cam.z();
    const double ib = cam.fy * s.p_cam.y() / s.p_cam.z();
    const double ideal_u = ia + cam.cx, ideal_v = ib + cam.cy;
    if (ideal_u < -kGuardBand * cam.width || ideal_u > (1.0 + kGuardBand) * cam.width ||
        ideal_v < -kGuardBand * cam.height || ideal_v > (1.0 + kGuardBand) * cam.height) {
        return s;
    }

    s.mean2d = project_camera(cam, s.p_cam);
    s.jacobian = projection_jacobian_camera(cam, s.p_cam);
    const Mat23 t = s.jacobian * w;
    s.cov2d = t * g.covariance() * t.transpose();
    s.cov2d(0, 0) += st.dilation;
    s.cov2d(1, 1) += st.dilation;
    s.cov2d(1, 0) = s.cov2d(0, 1);
    const double det = s.cov2d.determinant();
    if (!(det > 0.0)) {
        return s;
    }
    s.conic << s.cov2d(1, 1) / det, -s.cov2d(0, 1) / det, -s.cov2d(0, 1) / det, s.cov2d(0, 0) / det;
    s.depth = s.p_cam.z();
    s.opacity = g.opacity();

    const Vec3 v = g.position - cam.center();
    s.view_dist = v.norm();
    s.view_dir = s.view_dist > 0.0 ? Vec3(v / s.view_dist) : Vec3::UnitZ();
    s.color_raw = sh_color(sh_degree, g.sh, s.view_dir);
    s.color = s.color_raw.cwiseMax(0.0);

    int axis = 0;
    for (int k = 1; k < 3; ++k) {
        if (g.log_scale[k] < g.log_scale[axis]) axis = k;
    }
    s.normal_axis = axis;
    const Vec3 n = w * g.rotation_matrix().col(axis);
    s.normal_sign = n.dot(s.p_cam) > 0.0 ? -1.0 : 1.0;
    s.normal_cam = s.normal_sign * n;

    if (st.min_alpha > 0.0) {
        if (s.opacity < st.min_alpha) {
            return s;
        }
        const double a = s.cov2d(0, 0), b = s.cov2d(0, 1), c = s.cov2d(1, 1);
        const double lambda_max = 0.5 * (a + c) + std::sqrt(0.25 * (a - c) * (a - c) + b * b);
        const double r = std::sqrt(2.0 * std::log(s.opacity / st.min_alpha) * lambda_max) + 1e-6;
        s.x0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.x() - r - 0.5)));
        s.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(s.mean2d.x() + r - 0.5)));
        s.y0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.y() - r - 0.5)));
        s.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(s.mean2d.y() + r - 0.5)));
    } else {
        s.x0 = 0;
        s.y0 = 0;
        s.x1 = cam.width - 1;
        s.y1 = cam.height - 1;
    }
    s.visible = s.x0 <= s.x1 && s.y0 <= s.y1;
    return s;
}

RenderOutput render(const GaussianSet& set, const DistortedCamera& cam, const RenderSettings& st) {
    check_finite(set);
    const int width = cam.width, height = cam.height;
    const std::size_t npix = static_cast<std::size_t>(width) * height;

    RenderOutput out;
    out.width = width;
    out.height = height;
    out.color = Image(width, height, 3);
    out.depth.assign(npix, 0.0);
    out.normal.assign(npix, Vec3::Zero());
    out.alpha.assign(npix, 0.0);
    out.valid.assign(npix, 0);
    out.normal_sum.assign(npix, Vec3::Zero());
    out.depth_sum.assign(npix, 0.0);
    out.final_transmittance.assign(npix, 1.0);
    out.coverage.assign(set.size(), 0);
    out.splats.resize(set.size());

    parallel_for(set.size(), st.threads, [&](std::size_t i) {
        out.splats[i] = project_gaussian(set.gaussians[i], set.sh_degree, cam, st);
    });

    const int ts = std::max(1, st.tile_size);
    out.tiles_x = (width + ts - 1) / ts;
    out.tiles_y = (height + ts - 1) / ts;
    out.tile_lists.assign(static_cast<std::size_t>(out.tiles_x) * out.tiles_y, {});
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& s = out.splats[i];
        if (!s.visible) continue;
        for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty) {
            for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx) {
                out.tile_lists[static_cast<std::size_t>(ty) * out.tiles_x + tx].push_back(static_cast<std::uint32_t>(i));
            }
        }
    }
    for (auto& list : out.tile_lists) {
        std::sort(list.begin(), list.end(), [&](std::uint32_t a, std::uint32_t b) {
            const double da = out.splats[a].depth, db = out.splats[b].depth;
            return da < db || (da == db && a < b);
        });
    }

    std::vector<std::vector<std::uint32_t>> tile_cov(out.tile_lists.size());
    parallel_for(out.tile_lists.size(), st.threads, [&](std::size_t tile) {
        const auto& list = out.tile_lists[tile];
        auto& cov = tile_cov[tile];
        cov.assign(list.size(), 0);
        const int tx = static_cast<int>(tile % out.tiles_x), ty = static_cast<int>(tile / out.tiles_x);
        std::vector<std::uint32_t> row;
        for (int py = ty * ts; py < std::min(height, (ty + 1) * ts); ++py) {
            rows_touching(out, list, py, row);
            for (int px = tx * ts; px < std::min(width, (tx + 1) * ts); ++px) {
                const Vec2 pix(px + 0.5, py + 0.5);
                double t = 1.0;
                Vec3 c = Vec3::Zero(), nsum = Vec3::Zero();
                double zsum = 0.0;
                for (const std::uint32_t j : row) {
                    const Splat2D& s = out.splats[list[j]];
                    if (px < s.x0 || px > s.x1) continue;
                    double gauss;
                    Vec2 d;
                    bool clamped;
                    const double a = splat_alpha(s, pix, st, gauss, d, clamped);
                    if (a < 0.0) continue;
                    if (a > kCoverageAlpha) ++cov[j];
                    const double wgt = a * t;
                    c += wgt * s.color;
                    zsum += wgt * s.depth;
                    nsum += wgt * s.normal_cam;
                    t *= 1.0 - a;
                    if (t < st.transmittance_stop) break;
                }
                const std::size_t p = static_cast<std::size_t>(py) * width + px;
                const Vec3 rgb = c + t * st.background;
                for (int ch = 0; ch < 3; ++ch) out.color.at(px, py, ch) = rgb[ch];
                out.alpha[p] = 1.0 - t;
                out.final_transmittance[p] = t;
                out.depth_sum[p] = zsum;
                out.normal_sum[p] = nsum;
                if (out.alpha[p] >= kMinValidAlpha) {
                    out.valid[p] = 1;
                    out.depth[p] = zsum / out.alpha[p];
                    const double nn = nsum.norm();
                    if (nn > 0.0) out.normal[p] = nsum / nn;
                }
            }
        }
    });
    for (std::size_t tile = 0; tile < out.tile_lists.size(); ++tile) {
        const auto& list = out.tile_lists[tile];
        for (std::size_t j = 0; j < list.size(); ++j) out.coverage[list[j]] += tile_cov[tile][j];
    }
    return out;
}

GaussianGradients render_backward(const GaussianSet& set, const DistortedCamera& cam, const RenderOutput& out,
                                  const BufferGradients& up, const RenderSettings& st) {
    const int width = cam.width, height = cam.height;
    const std::size_t npix = static_cast<std::size_t>(width) * height;
    if (out.width != width || out.height != height || out.splats.size() != set.size()) {
        throw Error("render_backward: render output does not match the scene or camera");
    }
    const bool has_color = !up.color.data.empty();
    if (has_color && (up.color.width != width || up.color.height != height || up.color.channels != 3)) {
        throw Error("render_backward: colour gradient has the wrong shape");
    }
    if ((!up.depth.empty() && up.depth.size() != npix) || (!up.normal.empty() && up.normal.size() != npix) ||
        (!up.alpha.empty() && up.alpha.size() != npix)) {
        throw Error("render_backward: buffer gradient has the wrong size");
    }

    const int ts = std::max(1, st.tile_size);
    std::vector<std::vector<SplatGrad>> tile_grads(out.tile_lists.size());

    parallel_for(out.tile_lists.size(), st.threads, [&](std::size_t tile) {
        const auto& list = out.tile_lists[tile];
        auto& grads = tile_grads[tile];
        grads.assign(list.size(), SplatGrad{});
        const int tx = static_cast<int>(tile % out.tiles_x), ty = static_cast<int>(tile / out.tiles_x);
        std::vector<Contribution> contrib;
        std::vector<std::uint32_t> row;
        for (int py = ty * ts; py < std::min(height, (ty + 1) * ts); ++py) {
            rows_touching(out, list, py, row);
            for (int px = tx * ts; px < std::min(width, (tx + 1) * ts); ++px) {
                const std::size_t p = static_cast<std::size_t>(py) * width + px;
                const Vec3 g_color = has_color ? Vec3(up.color.at(px, py, 0), up.color.at(px, py, 1),
                                                      up.color.at(px, py, 2))
                                               : Vec3::Zero();
                const double g_depth = up.depth.empty() ? 0.0 : up.depth[p];
                const Vec3 g_normal = up.normal.empty() ? Vec3::Zero() : up.normal[p];
                double g_alpha = up.alpha.empty() ? 0.0 : up.alpha[p];

                // Buffer gradients to gradients of the linear accumulators.
                double g_zsum = 0.0;
                Vec3 g_nsum = Vec3::Zero();
                if (out.valid[p]) {
                    const double a = out.alpha[p];
                    g_zsum = g_depth / a;
                    g_alpha -= g_depth * out.depth[p] / a;
                    const double nn = out.normal_sum[p].norm();
                    if (nn > 0.0) {
                        const Vec3 n = out.normal[p];
                        g_nsum = (g_normal - n * n.dot(g_normal)) / nn;
                    }
                }
                if (g_color.isZero() && g_zsum == 0.0 && g_nsum.isZero() && g_alpha == 0.0) continue;

                // Replay the forward compositing for this pixel.
                contrib.clear();
                const Vec2 pix(px + 0.5, py + 0.5);
                double t = 1.0;
                for (const std::uint32_t j : row) {
                    const Splat2D& s = out.splats[list[j]];
                    if (px < s.x0 || px > s.x1) continue;
                    Contribution c;
                    const double a = splat_alpha(s, pix, st, c.gauss, c.offset, c.clamped);
                    if (a < 0.0) continue;
                    c.slot = static_cast<std::uint32_t>(j);
                    c.alpha = a;
                    c.transmittance = t;
                    contrib.push_back(c);
                    t *= 1.0 - a;
                    if (t < st.transmittance_stop) break;
                }

                // alpha = sum of weights, so its gradient adds to every weight.
                double after = g_color.dot(st.background) * t;
                for (std::size_t k = contrib.size(); k-- > 0;) {
                    const Contribution& c = contrib[k];
                    const Splat2D& s = out.splats[list[c.slot]];
                    const double wgt = c.alpha * c.transmittance;
                    const double g_w = g_color.dot(s.color) + g_zsum * s.depth + g_nsum.dot(s.normal_cam) + g_alpha;
                    SplatGrad& sg = grads[c.slot];
                    sg.color += wgt * g_color;
                    sg.depth += wgt * g_zsum;
                    sg.normal += wgt * g_nsum;
                    const double g_a = g_w * c.transmittance - after / (1.0 - c.alpha);
                    after += g_w * wgt;
                    if (c.clamped) continue;
                    sg.opacity += g_a * c.gauss;
                    const double g_power = g_a * c.alpha;
                    sg.mean += g_power * (s.conic * c.offset);
                    sg.conic += (-0.5 * g_power) * (c.offset * c.offset.transpose());
                }
            }
        }
    });

    std::vector<SplatGrad> acc(set.size());
    for (std::size_t tile = 0; tile < out.tile_lists.size(); ++tile) {
        const auto& list = out.tile_lists[tile];
        for (std::size_t j = 0; j < list.size(); ++j) acc[list[j]] += tile_grads[tile][j];
    }

    GaussianGradients grads(set.size());
    grads.coverage = out.coverage;
    const Mat3& w = cam.rotation;
    parallel_for(set.size(), st.threads, [&](std::size_t i) {
        const Splat2D& s = out.splats[i];
        if (!s.visible) return;
        const Gaussian& g = set.gaussians[i];
        const SplatGrad& sg = acc[i];

        grads.ndc_grad_norm[i] = std::hypot(sg.mean.x() * 0.5 * width, sg.mean.y() * 0.5 * height);

        // conic -> cov2d -> (Sigma, J)
        const Mat2 g_cov = -s.conic * sg.conic * s.conic;
        const Mat23 t = s.jacobian * w;
        const Mat3 sigma = g.covariance();
        const Mat3 g_sigma = t.transpose() * g_cov * t;
        const Mat23 g_t = 2.0 * g_cov * t * sigma;
        const Mat23 g_j = g_t * w.transpose();

        Vec3 g_pcam = projection_jacobian_vjp(cam, s.p_cam, g_j) + s.jacobian.transpose() * sg.mean;
        g_pcam.z() += sg.depth;
        Vec3 g_pos = w.transpose() * g_pcam;

        // Sigma = R diag(s^2) R^T
        const Mat3 r = g.rotation_matrix();
        const Vec3 s2 = (2.0 * g.log_scale).array().exp();
        Mat3 g_r = 2.0 * g_sigma * r * s2.asDiagonal();
        const Mat3 rt_g_r = r.transpose() * g_sigma * r;
        for (int k = 0; k < 3; ++k) grads.log_scale[i][k] = 2.0 * s2[k] * rt_g_r(k, k);

        // normal = sign * W R e_axis
        g_r.col(s.normal_axis) += s.normal_sign * (w.transpose() * sg.normal);
        grads.rotation[i] = quaternion_backward(g.rotation, g_r);

        grads.logit_opacity[i] = sg.opacity * s.opacity * (1.0 - s.opacity);

        // colour = max(0, SH(dir) + 0.5)
        Vec3 g_c = sg.color;
        for (int ch = 0; ch < 3; ++ch) {
            if (s.color_raw[ch] < 0.0) g_c[ch] = 0.0;
        }
        ShBasis basis;
        ShBasisGrad basis_grad;
        sh_basis(set.sh_degree, s.view_dir, basis, set.sh_degree > 0 ? &basis_grad : nullptr);
        Vec3 g_dir = Vec3::Zero();
        for (int k = 0; k < sh_coeff_count(set.sh_degree); ++k) {
            grads.sh[i][k] = basis[k] * g_c;
            if (k > 0) g_dir += g_c.dot(g.sh[k]) * basis_grad[k];
        }
        if (set.sh_degree > 0) {
            g_pos += (g_dir - s.view_dir * s.view_dir.dot(g_dir)) / s.view_dist;
        }
        grads.position[i] = g_pos;
    });
    return grads;
}

void accumulate_densify_stats(GaussianSet& set, const GaussianGradients& grads) {
    set.check_consistent();
    if (grads.size() != set.size()) {
        throw Error("accumulate_densify_stats: gradient count does not match the set");
    }
    for (std::size_t i = 0; i < set.size(); ++i) {
        const double m = grads.coverage[i];
        if (m == 0.0) continue;
        set.grad_accum[i] += m * grads.ndc_grad_norm[i];
        set.weight_accum[i] += m;
    }
}

} // namespace lsplat
