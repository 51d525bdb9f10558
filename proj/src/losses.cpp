#include "lidarsplat/losses.hpp"

#include "lidarsplat/log.hpp"

#include <array>
#include <cmath>

namespace lsplat {

namespace {

inline double sign(double x) { return (x > 0.0) - (x < 0.0); }

// 1-D Gaussian taps for offsets -5..5.
const std::array<double, kSsimWindow>& ssim_taps() {
    static const std::array<double, kSsimWindow> taps = [] {
        std::array<double, kSsimWindow> t{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = i - kSsimWindow / 2;
            t[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += t[i];
        }
        for (auto& v : t) v /= sum;
        return t;
    }();
    return taps;
}

// Separable Gaussian filtering of a single-channel w x h plane. When
// `normalise` is set each output is divided by the sum of in-image taps.
struct Blur {
    int w, h;
    std::vector<double> zx, zy; // in-image tap sums per column / row

    Blur(int width, int height) : w(width), h(height), zx(width), zy(height) {
        zx.assign(w, 0.0);
        zy.assign(h, 0.0);
        const auto& k = ssim_taps();
        const int r = kSsimWindow / 2;
        for (int x = 0; x < w; ++x)
            for (int d = -r; d <= r; ++d)
                if (x + d >= 0 && x + d < w) zx[x] += k[d + r];
        for (int y = 0; y < h; ++y)
            for (int d = -r; d <= r; ++d)
                if (y + d >= 0 && y + d < h) zy[y] += k[d + r];
    }

    std::vector<double> apply(const std::vector<double>& src, bool normalise) const {
        const auto& k = ssim_taps();
        const int r = kSsimWindow / 2;
        std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int d = -r; d <= r; ++d) {
                    const int xx = x + d;
                    if (xx >= 0 && xx < w) s += k[d + r] * src[static_cast<std::size_t>(y) * w + xx];
                }
                tmp[static_cast<std::size_t>(y) * w + x] = normalise ? s / zx[x] : s;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int d = -r; d <= r; ++d) {
                    const int yy = y + d;
                    if (yy >= 0 && yy < h) s += k[d + r] * tmp[static_cast<std::size_t>(yy) * w + x];
                }
                out[static_cast<std::size_t>(y) * w + x] = normalise ? s / zy[y] : s;
            }
        return out;
    }

    // Adjoint of apply(src, true).
    std::vector<double> adjoint(std::vector<double> m) const {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) m[static_cast<std::size_t>(y) * w + x] /= zx[x] * zy[y];
        return apply(m, false);
    }
};

std::vector<double> channel(const Image& img, int c) {
    std::vector<double> out(img.pixel_count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.data[i * img.channels + c];
    return out;
}

void check_ssim_shape(const Image& a, const Image& b) {
    if (!a.same_shape(b)) {
        throw Error("ssim: image shapes differ");
    }
    if (a.width < kSsimWindow || a.height < kSsimWindow) {
        throw Error("ssim: images must be at least 11x11");
    }
}

// Mean SSIM; when `grad` is set it receives d(mean SSIM)/d a.
double ssim_impl(const Image& a, const Image& b, Image* grad) {
    check_ssim_shape(a, b);
    const Blur blur(a.width, a.height);
    const std::size_t n = a.pixel_count();
    const double inv_count = 1.0 / static_cast<double>(n * a.channels);
    if (grad) *grad = Image(a.width, a.height, a.channels);

    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const auto x = channel(a, c);
        const auto y = channel(b, c);
        std::vector<double> xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = blur.apply(x, true), my = blur.apply(y, true);
        const auto bxx = blur.apply(xx, true), byy = blur.apply(yy, true), bxy = blur.apply(xy, true);

        std::vector<double> d_mu(n), d_bxx(n), d_bxy(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double sxx = bxx[i] - mx[i] * mx[i];
            const double syy = byy[i] - my[i] * my[i];
            const double sxy = bxy[i] - mx[i] * my[i];
            const double a1 = 2.0 * mx[i] * my[i] + kSsimC1;
            const double a2 = 2.0 * sxy + kSsimC2;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1;
            const double b2 = sxx + syy + kSsimC2;
            const double s = a1 * a2 / (b1 * b2);
            total += s;
            if (grad) {
                const double ds_dmu = 2.0 * my[i] * a2 / (b1 * b2) - 2.0 * mx[i] * s / b1;
                const double ds_dsxx = -s / b2;
                const double ds_dsxy = 2.0 * a1 / (b1 * b2);
                d_mu[i] = inv_count * (ds_dmu - 2.0 * mx[i] * ds_dsxx - my[i] * ds_dsxy);
                d_bxx[i] = inv_count * ds_dsxx;
                d_bxy[i] = inv_count * ds_dsxy;
            }
        }
        if (grad) {
            const auto g_mu = blur.adjoint(d_mu);
            const auto g_xx = blur.adjoint(d_bxx);
            const auto g_xy = blur.adjoint(d_bxy);
            for (std::size_t i = 0; i < n; ++i) {
                grad->data[i * a.channels + c] = g_mu[i] + 2.0 * x[i] * g_xx[i] + y[i] * g_xy[i];
            }
        }
    }
    return total * inv_count;
}

} // namespace

double l1_loss(const Image& rendered, const Image& target, Image* grad) {
    if (!rendered.same_shape(target)) {
        throw Error("l1_loss: image shapes differ");
    }
    const std::size_t n = rendered.data.size();
    if (grad) *grad = Image(rendered.width, rendered.height, rendered.channels);
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = rendered.data[i] - target.data[i];
        sum += std::abs(d);
        if (grad) grad->data[i] = sign(d) / static_cast<double>(n);
    }
    return sum / static_cast<double>(n);
}

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, nullptr); }

double dssim_loss(const Image& rendered, const Image& target, Image* grad) {
    const double s = ssim_impl(rendered, target, grad);
    if (grad) {
        for (auto& v : grad->data) v *= -0.5;
    }
    return 0.5 * (1.0 - s);
}

double depth_loss(std::span<const double> rendered, std::span<const double> target, std::span<const std::uint8_t> mask,
                  DepthLossMode mode, std::vector<double>* grad) {
    if (rendered.size() != target.size() || rendered.size() != mask.size()) {
        throw Error("depth_loss: buffer sizes differ");
    }
    if (grad) grad->assign(rendered.size(), 0.0);
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0) {
        log_message(LogLevel::Debug, "depth_loss: no valid pixels");
        return 0.0;
    }
    const double inv = 1.0 / static_cast<double>(count);
    double sum = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (!mask[i]) continue;
        const double d = rendered[i] - target[i];
        sum += std::abs(d);
        double g = sign(d);
        if (mode == DepthLossMode::Literal) {
            const double e = 1.0 - rendered[i] * target[i];
            sum += std::abs(e);
            g -= sign(e) * target[i];
        }
        if (grad) (*grad)[i] = g * inv;
    }
    return sum * inv;
}

double normal_loss(std::span<const Vec3> rendered, std::span<const Vec3> target, std::span<const std::uint8_t> mask,
                   std::vector<Vec3>* grad) {
    if (rendered.size() != target.size() || rendered.size() != mask.size()) {
        throw Error("normal_loss: buffer sizes differ");
    }
    if (grad) grad->assign(rendered.size(), Vec3::Zero());
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0) {
        log_message(LogLevel::Debug, "normal_loss: no valid pixels");
        return 0.0;
    }
    const double inv = 1.0 / static_cast<double>(count);
    double sum = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (!mask[i]) continue;
        const Vec3 d = rendered[i] - target[i];
        const double e = 1.0 - rendered[i].dot(target[i]);
        sum += d.cwiseAbs().sum() + std::abs(e);
        if (grad) {
            const Vec3 g(sign(d.x()), sign(d.y()), sign(d.z()));
            (*grad)[i] = (g - sign(e) * target[i]) * inv;
        }
    }
    return sum * inv;
}

double scale_loss(const GaussianSet& set, std::vector<Vec3>* grad) {
    if (grad) grad->assign(set.size(), Vec3::Zero());
    if (set.empty()) return 0.0;
    const double inv = 1.0 / static_cast<double>(set.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Vec3& ls = set.gaussians[i].log_scale;
        int k = 0;
        for (int j = 1; j < 3; ++j) {
            if (ls[j] < ls[k]) k = j;
        }
        const double s = std::exp(ls[k]);
        sum += s;
        if (grad) (*grad)[i][k] = s * inv;
    }
    return sum * inv;
}

TotalLoss total_loss(const RenderOutput& render, const Image& target, const DepthNormalMaps& lidar,
                     const GaussianSet& set, const LossWeights& w) {
    const std::size_t npix = static_cast<std::size_t>(render.width) * render.height;
    if (lidar.width != render.width || lidar.height != render.height) {
        throw Error("total_loss: LiDAR maps and render differ in size");
    }
    TotalLoss out;
    Image g_l1, g_ssim;
    out.parts.l1 = l1_loss(render.color, target, &g_l1);
    if (w.lambda != 0.0) {
        out.parts.dssim = dssim_loss(render.color, target, &g_ssim);
    }
    std::vector<std::uint8_t> mask(npix, 0);
    std::vector<std::uint8_t> nmask(npix, 0);
    for (std::size_t i = 0; i < npix; ++i) {
        mask[i] = lidar.valid[i] && render.valid[i];
        nmask[i] = mask[i] && render.normal[i].squaredNorm() > 0.0;
    }
    std::vector<double> g_depth;
    std::vector<Vec3> g_normal;
    out.parts.depth = depth_loss(render.depth, lidar.depth, mask, w.depth_mode, &g_depth);
    out.parts.normal = normal_loss(render.normal, lidar.normal, nmask, &g_normal);
    out.parts.scale = scale_loss(set, &out.log_scale_grad);
    out.parts.total = (1.0 - w.lambda) * out.parts.l1 + w.lambda * out.parts.dssim + w.alpha * out.parts.depth +
                      w.beta * out.parts.normal + w.gamma * out.parts.scale;

    out.buffers.color = Image(render.width, render.height, 3);
    for (std::size_t i = 0; i < out.buffers.color.data.size(); ++i) {
        out.buffers.color.data[i] = (1.0 - w.lambda) * g_l1.data[i] + (w.lambda != 0.0 ? w.lambda * g_ssim.data[i] : 0.0);
    }
    out.buffers.depth.resize(npix);
    out.buffers.normal.resize(npix);
    for (std::size_t i = 0; i < npix; ++i) {
        out.buffers.depth[i] = w.alpha * g_depth[i];
        out.buffers.normal[i] = w.beta * g_normal[i];
    }
    for (auto& g : out.log_scale_grad) g *= w.gamma;
    return out;
}

} // namespace lsplat
