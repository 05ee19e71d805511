// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Photometric and opacity losses with analytic gradients, plus PSNR / SSIM.
//
// SSIM uses an 11 x 11 Gaussian window (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2, and is averaged over the positions where the window fits
// entirely inside the image, per channel.
#pragma once

#include "volsplat/core.hpp"

#include <limits>

namespace volsplat {

struct LossWeights {
    double ssim    = 0.2; // lambda_r
    double entropy = 0.1; // lambda_e

    void
    validate() const {
        require(ssim >= 0.0 && ssim <= 1.0, "loss weights: lambda_r must be in [0, 1]");
        require(entropy >= 0.0, "loss weights: lambda_e must be non-negative");
    }
};

inline void
require_same_shape(const Image &a, const Image &b, const char *what) {
    if (!a.same_shape(b)) {
        throw Error(std::string(what) + ": shape mismatch");
    }
}

/// Mean absolute error over all values; gradient written to `grad` if given.
inline double
l1_loss(const Image &render, const Image &target, Image *grad = nullptr) {
    require_same_shape(render, target, "l1_loss");
    const double n = double(render.data.size());
    double sum     = 0.0;
    if (grad) {
        *grad = Image(render.width, render.height, render.channels);
    }
    for (std::size_t i = 0; i < render.data.size(); ++i) {
        const double d = render.data[i] - target.data[i];
        sum += std::abs(d);
        if (grad) {
            grad->data[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
        }
    }
    return sum / n;
}

namespace detail {

inline constexpr int kSsimWindow = 11;

inline const std::array<double, kSsimWindow> &
ssim_kernel() {
    static const std::array<double, kSsimWindow> k = [] {
        std::array<double, kSsimWindow> w{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double x = i - kSsimWindow / 2;
            w[i]           = std::exp(-x * x / (2.0 * 1.5 * 1.5));
            sum += w[i];
        }
        for (double &v : w) v /= sum;
        return w;
    }();
    return k;
}

/// Valid-mode separable Gaussian correlation.
inline Mat
filter_valid(const Mat &in) {
    const auto &w = ssim_kernel();
    const int h = int(in.rows()) - kSsimWindow + 1, wd = int(in.cols()) - kSsimWindow + 1;
    Mat rows = Mat::Zero(in.rows(), wd);
    for (int y = 0; y < in.rows(); ++y) {
        for (int x = 0; x < wd; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) acc += w[k] * in(y, x + k);
            rows(y, x) = acc;
        }
    }
    Mat out = Mat::Zero(h, wd);
    for (int y = 0; y < h; ++y) {
        for (int k = 0; k < kSsimWindow; ++k) out.row(y) += w[k] * rows.row(y + k);
    }
    return out;
}

/// Adjoint of filter_valid.
inline Mat
filter_valid_adjoint(const Mat &in, int height, int width) {
    const auto &w = ssim_kernel();
    Mat cols      = Mat::Zero(height, in.cols());
    for (int y = 0; y < in.rows(); ++y) {
        for (int k = 0; k < kSsimWindow; ++k) cols.row(y + k) += w[k] * in.row(y);
    }
    Mat out = Mat::Zero(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < in.cols(); ++x) {
            for (int k = 0; k < kSsimWindow; ++k) out(y, x + k) += w[k] * cols(y, x);
        }
    }
    return out;
}

inline Mat
channel_plane(const Image &img, int c) {
    Mat p(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) p(y, x) = img.at(x, y, c);
    }
    return p;
}

} // namespace detail

/// Mean SSIM; if `grad` is given it receives d(SSIM)/d(a).
inline double
ssim(const Image &a, const Image &b, Image *grad = nullptr) {
    using namespace detail;
    require_same_shape(a, b, "ssim");
    require(a.width >= kSsimWindow && a.height >= kSsimWindow,
            "ssim: image smaller than the 11x11 window");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int vh = a.height - kSsimWindow + 1, vw = a.width - kSsimWindow + 1;
    const double count = double(vh) * vw * a.channels;
    if (grad) {
        *grad = Image(a.width, a.height, a.channels);
    }
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const Mat x = channel_plane(a, c), y = channel_plane(b, c);
        const Mat mx = filter_valid(x), my = filter_valid(y);
        const Mat sxx = filter_valid(x.cwiseProduct(x)) - mx.cwiseProduct(mx);
        const Mat syy = filter_valid(y.cwiseProduct(y)) - my.cwiseProduct(my);
        const Mat sxy = filter_valid(x.cwiseProduct(y)) - mx.cwiseProduct(my);
        Mat dmx(vh, vw), dsxx(vh, vw), dsxy(vh, vw);
        for (int i = 0; i < vh; ++i) {
            for (int j = 0; j < vw; ++j) {
                const double n1 = 2 * mx(i, j) * my(i, j) + c1, n2 = 2 * sxy(i, j) + c2;
                const double d1 = mx(i, j) * mx(i, j) + my(i, j) * my(i, j) + c1;
                const double d2 = sxx(i, j) + syy(i, j) + c2;
                const double s  = n1 * n2 / (d1 * d2);
                total += s;
                dsxx(i, j) = -s / d2 / count;
                dsxy(i, j) = 2.0 * n1 / (d1 * d2) / count;
                dmx(i, j)  = (2.0 * my(i, j) * n2 / (d1 * d2) - s * 2.0 * mx(i, j) / d1) / count;
            }
        }
        if (grad) {
            // sxx = E[x^2] - mx^2 and sxy = E[xy] - mx my push extra terms onto mx
            const Mat lin = dmx - 2.0 * mx.cwiseProduct(dsxx) - my.cwiseProduct(dsxy);
            const Mat ga  = filter_valid_adjoint(lin, a.height, a.width);
            const Mat gb  = filter_valid_adjoint(dsxx, a.height, a.width);
            const Mat gc  = filter_valid_adjoint(dsxy, a.height, a.width);
            for (int yy = 0; yy < a.height; ++yy) {
                for (int xx = 0; xx < a.width; ++xx) {
                    grad->at(xx, yy, c) = ga(yy, xx) + 2.0 * x(yy, xx) * gb(yy, xx) + y(yy, xx) * gc(yy, xx);
                }
            }
        }
    }
    return total / count;
}

/// 1 - SSIM.
inline double
ssim_loss(const Image &render, const Image &target, Image *grad = nullptr) {
    const double s = ssim(render, target, grad);
    if (grad) {
        for (double &v : grad->data) v = -v;
    }
    return 1.0 - s;
}

inline constexpr double kEntropyClamp = 1e-6;

/// Per-pixel mean binary entropy of the accumulated foreground alpha.
inline double
entropy_loss(const Image &fg_alpha, Image *grad = nullptr) {
    require(fg_alpha.channels == 1, "entropy_loss: expects a single-channel raster");
    const double n = double(fg_alpha.data.size());
    if (grad) {
        *grad = Image(fg_alpha.width, fg_alpha.height, 1);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < fg_alpha.data.size(); ++i) {
        const double raw = fg_alpha.data[i];
        const double o   = std::clamp(raw, kEntropyClamp, 1.0 - kEntropyClamp);
        sum += -(o * std::log(o) + (1.0 - o) * std::log(1.0 - o));
        if (grad) {
            const bool clamped = raw < kEntropyClamp || raw > 1.0 - kEntropyClamp;
            grad->data[i]      = clamped ? 0.0 : -std::log(o / (1.0 - o)) / n;
        }
    }
    return sum / n;
}

struct LossTerms {
    double l1      = 0.0;
    double ssim    = 0.0; // 1 - SSIM
    double entropy = 0.0;
    double total   = 0.0;
};

/// (1 - lr) L1 + lr (1 - SSIM) + le * entropy, with gradients wrt the color
/// and O_fg rasters.
inline LossTerms
total_loss(const Image &render, const Image &fg_alpha, const Image &target,
           const LossWeights &w = {}, Image *grad_color = nullptr, Image *grad_fg = nullptr) {
    w.validate();
    LossTerms t;
    Image g_l1, g_ssim, g_ent;
    const bool want = grad_color != nullptr;
    t.l1      = l1_loss(render, target, want ? &g_l1 : nullptr);
    t.ssim    = ssim_loss(render, target, want ? &g_ssim : nullptr);
    t.entropy = entropy_loss(fg_alpha, grad_fg ? &g_ent : nullptr);
    t.total   = (1.0 - w.ssim) * t.l1 + w.ssim * t.ssim + w.entropy * t.entropy;
    if (grad_color) {
        *grad_color = Image(render.width, render.height, render.channels);
        for (std::size_t i = 0; i < g_l1.data.size(); ++i) {
            grad_color->data[i] = (1.0 - w.ssim) * g_l1.data[i] + w.ssim * g_ssim.data[i];
        }
    }
    if (grad_fg) {
        *grad_fg = g_ent;
        for (double &v : grad_fg->data) v *= w.entropy;
    }
    return t;
}

/// -10 log10(MSE); +inf for identical images.
inline double
psnr(const Image &a, const Image &b) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= double(a.data.size());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return -10.0 * std::log10(mse);
}

} // namespace volsplat
