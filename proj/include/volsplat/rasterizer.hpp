// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Tile-based software Gaussian splatting with a hand-written backward pass.
//
// Each splat's kernel is truncated at Mahalanobis distance q > 9 (its 3-sigma
// ellipse); the ellipse's bounding box decides tile membership and culling,
// so the tiled result matches compositing every splat at every pixel. Splats
// whose centers fall outside a guard band around the frustum are culled.
#pragma once

#include "volsplat/gaussian_decoder.hpp"
#include "volsplat/ibr_color.hpp"

#include <optional>

namespace volsplat {

struct RenderOptions {
    int tile                 = 16;
    double near_plane        = 0.01;
    double dilation          = 0.3; // px^2 added to the 2D covariance diagonal
    double cutoff            = 9.0; // max Mahalanobis q that still contributes
    double guard_band        = 1.3; // cull centers beyond this multiple of the half field of view
    double min_transmittance = 1e-4;
    bool record_hits         = false; // needed by render_backward
};

struct Splat2D {
    int index   = -1; // primitive index in the input set
    Vec2 mean   = Vec2::Zero();
    Mat2 cov    = Mat2::Identity(); // includes the dilation
    Mat2 conic  = Mat2::Identity(); // inverse of cov
    double depth   = 0.0;
    double opacity = 0.0;
    Vec3 color     = Vec3::Zero();
    bool foreground = true;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1; // inclusive pixel bounds of the 3-sigma box

    // kept for the backward pass
    Vec3 cam_point = Vec3::Zero();
    Eigen::Matrix<double, 2, 3> jacobian = Eigen::Matrix<double, 2, 3>::Zero();
    Mat3 cov_cam   = Mat3::Zero();
    Vec3 view_dir  = Vec3::UnitZ();
};

struct PixelHit {
    int splat           = -1; // slot in RenderOutput::splats
    double alpha        = 0.0;
    double transmittance = 1.0; // before this splat
};

struct RenderOutput {
    Image color;    // H x W x 3
    Image fg_alpha; // H x W x 1
    Image depth;    // H x W x 1, alpha-weighted view depth
    std::vector<Splat2D> splats;
    std::vector<std::vector<PixelHit>> hits; // per pixel, front to back
};

inline void
validate_gaussians(const GaussianSet &g) {
    require(g.quats.size() == g.size() && g.log_scales.size() == g.size() &&
                g.opacity_logits.size() == g.size() && g.sh.size() == g.size() &&
                g.flags.size() == g.size(),
            "render: attribute arrays differ in length");
    for (std::size_t i = 0; i < g.size(); ++i) {
        bool ok = g.means[i].allFinite() && g.quats[i].allFinite() && g.log_scales[i].allFinite() &&
                  !std::isnan(g.opacity_logits[i]) && g.quats[i].norm() > 0.0;
        for (double c : g.sh[i]) {
            ok = ok && std::isfinite(c);
        }
        if (!ok) {
            throw Error("render: primitive " + std::to_string(i) + " has non-finite fields");
        }
    }
}

/// EWA projection of primitive i; nullopt when culled.
inline std::optional<Splat2D>
project_splat(const GaussianSet &g, std::size_t i, const Pinhole &cam, const RigidPose &pose,
              const RenderOptions &opt = {}) {
    Splat2D s;
    s.index       = int(i);
    s.cam_point   = pose.to_camera(g.means[i]);
    const double x = s.cam_point.x(), y = s.cam_point.y(), z = s.cam_point.z();
    if (!(z > opt.near_plane)) {
        return std::nullopt;
    }
    s.depth = z;
    // the linearized projection is meaningless far off-axis near the image plane
    const double half_x = std::max(cam.cx + 0.5, cam.width - 0.5 - cam.cx) / cam.fx;
    const double half_y = std::max(cam.cy + 0.5, cam.height - 0.5 - cam.cy) / cam.fy;
    if (std::abs(x / z) > opt.guard_band * half_x || std::abs(y / z) > opt.guard_band * half_y) {
        return std::nullopt;
    }
    s.mean  = Vec2(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy);
    s.jacobian << cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z);
    const Vec3 scale = g.log_scales[i].array().exp();
    const Mat3 world = build_covariance(g.quats[i], scale);
    const Mat3 &rot  = pose.rotation;
    s.cov_cam        = rot.transpose() * world * rot;
    s.cov            = s.jacobian * s.cov_cam * s.jacobian.transpose();
    s.cov            = 0.5 * (s.cov + s.cov.transpose());
    s.cov.diagonal().array() += opt.dilation;
    const double det = s.cov.determinant();
    if (!(det > 0.0)) {
        return std::nullopt;
    }
    s.conic = s.cov.inverse();

    const double k  = std::sqrt(opt.cutoff);
    const double rx = k * std::sqrt(s.cov(0, 0)), ry = k * std::sqrt(s.cov(1, 1));
    constexpr double kPad = 1e-9;
    s.x0 = std::max(0, int(std::ceil(s.mean.x() - rx - kPad)));
    s.x1 = std::min(cam.width - 1, int(std::floor(s.mean.x() + rx + kPad)));
    s.y0 = std::max(0, int(std::ceil(s.mean.y() - ry - kPad)));
    s.y1 = std::min(cam.height - 1, int(std::floor(s.mean.y() + ry + kPad)));
    if (s.x0 > s.x1 || s.y0 > s.y1) {
        return std::nullopt;
    }
    s.opacity    = sigmoid(g.opacity_logits[i]);
    s.foreground = g.flags[i] == GaussianFlag::foreground;
    const Vec3 d = g.means[i] - pose.center();
    s.view_dir   = d / d.norm();
    s.color      = eval_sh(g.sh[i], s.view_dir);
    return s;
}

/// Mahalanobis distance of `pixel` under the splat's 2D Gaussian.
inline double
splat_mahalanobis(const Splat2D &s, const Vec2 &pixel) {
    const Vec2 d = pixel - s.mean;
    return d.dot(s.conic * d);
}

inline RenderOutput
render(const GaussianSet &g, const Pinhole &cam, const RigidPose &pose,
       const RenderOptions &opt = {}) {
    cam.validate();
    validate_gaussians(g);
    require(opt.tile > 0, "render: tile size must be positive");
    RenderOutput out;
    out.color    = Image(cam.width, cam.height, 3);
    out.fg_alpha = Image(cam.width, cam.height, 1);
    out.depth    = Image(cam.width, cam.height, 1);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (auto s = project_splat(g, i, cam, pose, opt)) {
            out.splats.push_back(*s);
        }
    }
    const int tiles_x = (cam.width + opt.tile - 1) / opt.tile;
    const int tiles_y = (cam.height + opt.tile - 1) / opt.tile;
    std::vector<std::vector<int>> bins(std::size_t(tiles_x) * tiles_y);
    for (int slot = 0; slot < int(out.splats.size()); ++slot) {
        const Splat2D &s = out.splats[slot];
        for (int ty = s.y0 / opt.tile; ty <= s.y1 / opt.tile; ++ty) {
            for (int tx = s.x0 / opt.tile; tx <= s.x1 / opt.tile; ++tx) {
                bins[std::size_t(ty) * tiles_x + tx].push_back(slot);
            }
        }
    }
    if (opt.record_hits) {
        out.hits.assign(out.color.pixel_count(), {});
    }

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int t = 0; t < int(bins.size()); ++t) {
        std::vector<int> &bin = bins[t];
        std::sort(bin.begin(), bin.end(), [&](int a, int b) {
            const Splat2D &sa = out.splats[a], &sb = out.splats[b];
            return sa.depth != sb.depth ? sa.depth < sb.depth : sa.index < sb.index;
        });
        const int px0 = (t % tiles_x) * opt.tile, py0 = (t / tiles_x) * opt.tile;
        const int px1 = std::min(px0 + opt.tile, cam.width);
        const int py1 = std::min(py0 + opt.tile, cam.height);
        for (int py = py0; py < py1; ++py) {
            for (int px = px0; px < px1; ++px) {
                double trans = 1.0;
                Vec3 color   = Vec3::Zero();
                double fg = 0.0, depth = 0.0;
                std::vector<PixelHit> *hits =
                    opt.record_hits ? &out.hits[std::size_t(py) * cam.width + px] : nullptr;
                for (int slot : bin) {
                    const Splat2D &s = out.splats[slot];
                    if (px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1) {
                        continue;
                    }
                    const double q = splat_mahalanobis(s, Vec2(px, py));
                    if (q > opt.cutoff) {
                        continue;
                    }
                    const double alpha = s.opacity * std::exp(-0.5 * q);
                    const double w     = trans * alpha;
                    color += w * s.color;
                    depth += w * s.depth;
                    if (s.foreground) {
                        fg += w;
                    }
                    if (hits) {
                        hits->push_back({slot, alpha, trans});
                    }
                    trans *= 1.0 - alpha;
                    if (trans < opt.min_transmittance) {
                        break;
                    }
                }
                for (int c = 0; c < 3; ++c) {
                    out.color.at(px, py, c) = color[c];
                }
                out.fg_alpha.at(px, py) = fg;
                out.depth.at(px, py)    = depth;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward

struct GaussianGrads {
    Mat means;          // N x 3
    Mat quats;          // N x 4
    Mat log_scales;     // N x 3
    Mat opacity_logits; // N x 1
    Mat sh;             // N x 12

    explicit GaussianGrads(std::size_t n = 0)
        : means(Mat::Zero(n, 3)), quats(Mat::Zero(n, 4)), log_scales(Mat::Zero(n, 3)),
          opacity_logits(Mat::Zero(n, 1)), sh(Mat::Zero(n, kShCoeffs)) {}
};

/// Gradients wrt every primitive attribute given d(loss)/d(color) and
/// d(loss)/d(O_fg). `fwd` must come from render(..., record_hits = true).
/// `grad_fg` may be empty.
inline GaussianGrads
render_backward(const GaussianSet &g, const Pinhole &cam, const RigidPose &pose,
                const RenderOutput &fwd, const Image &grad_color, const Image &grad_fg) {
    require(fwd.hits.size() == fwd.color.pixel_count(),
            "render_backward: forward pass did not record hits");
    require(grad_color.same_shape(fwd.color), "render_backward: color gradient shape mismatch");
    const bool has_fg = !grad_fg.data.empty();
    require(!has_fg || grad_fg.same_shape(fwd.fg_alpha), "render_backward: O_fg gradient shape");

    const std::size_t n_splats = fwd.splats.size();
    std::vector<Vec2> g_mean2d(n_splats, Vec2::Zero());
    std::vector<Mat2> g_conic(n_splats, Mat2::Zero());
    std::vector<double> g_opacity(n_splats, 0.0);
    std::vector<Vec3> g_color(n_splats, Vec3::Zero());

    for (int py = 0; py < cam.height; ++py) {
        for (int px = 0; px < cam.width; ++px) {
            const auto &hits = fwd.hits[std::size_t(py) * cam.width + px];
            if (hits.empty()) {
                continue;
            }
            const Vec3 gc(grad_color.at(px, py, 0), grad_color.at(px, py, 1),
                          grad_color.at(px, py, 2));
            const double go = has_fg ? grad_fg.at(px, py) : 0.0;
            // suffix sums of what lies behind the current splat
            Vec3 rest_c   = Vec3::Zero();
            double rest_o = 0.0;
            for (std::size_t h = hits.size(); h-- > 0;) {
                const PixelHit &hit = hits[h];
                const Splat2D &s    = fwd.splats[hit.splat];
                const double a = hit.alpha, t = hit.transmittance;
                const double fg = s.foreground ? 1.0 : 0.0;
                const double g_alpha = t * ((s.color - rest_c).dot(gc) + (fg - rest_o) * go);
                g_color[hit.splat] += t * a * gc;
                rest_c = a * s.color + (1.0 - a) * rest_c;
                rest_o = a * fg + (1.0 - a) * rest_o;

                const Vec2 d     = Vec2(px, py) - s.mean;
                const double q   = d.dot(s.conic * d);
                const double fall = std::exp(-0.5 * q);
                g_opacity[hit.splat] += g_alpha * fall;
                const double g_q = -0.5 * g_alpha * a;
                g_mean2d[hit.splat] += g_q * (-2.0 * (s.conic * d));
                g_conic[hit.splat] += g_q * (d * d.transpose());
            }
        }
    }

    GaussianGrads out(g.size());
    const Mat3 &rot = pose.rotation;
    for (std::size_t slot = 0; slot < n_splats; ++slot) {
        const Splat2D &s = fwd.splats[slot];
        const int i      = s.index;
        const double o   = s.opacity;
        out.opacity_logits(i, 0) += g_opacity[slot] * o * (1.0 - o);

        // color -> SH and view direction
        const Vec3 g_dir = eval_sh_backward(g.sh[i].data(), s.view_dir, g_color[slot],
                                            out.sh.row(i).data());
        const double dist = (g.means[i] - pose.center()).norm();
        Vec3 g_mean       = (g_dir - s.view_dir * s.view_dir.dot(g_dir)) / dist;

        // conic -> 2D covariance -> Jacobian and camera covariance
        const Mat2 g_cov2 = -s.conic * g_conic[slot] * s.conic;
        const Eigen::Matrix<double, 2, 3> g_jac = 2.0 * g_cov2 * s.jacobian * s.cov_cam;
        const Mat3 g_cov_cam = s.jacobian.transpose() * g_cov2 * s.jacobian;

        const double x = s.cam_point.x(), y = s.cam_point.y(), z = s.cam_point.z();
        const double fx = cam.fx, fy = cam.fy;
        Vec3 g_pc;
        g_pc.x() = g_mean2d[slot].x() * fx / z + g_jac(0, 2) * (-fx / (z * z));
        g_pc.y() = g_mean2d[slot].y() * fy / z + g_jac(1, 2) * (-fy / (z * z));
        g_pc.z() = g_mean2d[slot].x() * (-fx * x / (z * z)) + g_mean2d[slot].y() * (-fy * y / (z * z)) +
                   g_jac(0, 0) * (-fx / (z * z)) + g_jac(0, 2) * (2.0 * fx * x / (z * z * z)) +
                   g_jac(1, 1) * (-fy / (z * z)) + g_jac(1, 2) * (2.0 * fy * y / (z * z * z));
        g_mean += rot * g_pc;
        out.means.row(i) += g_mean.transpose();

        // world covariance -> rotation and scale
        const Mat3 g_cov3     = rot * g_cov_cam * rot.transpose();
        const Vec3 scale      = g.log_scales[i].array().exp();
        const Mat3 r          = quat_to_rotation(g.quats[i]);
        const Mat3 m          = r * scale.asDiagonal();
        const Mat3 g_m        = (g_cov3 + g_cov3.transpose()) * m;
        const Mat3 g_r        = g_m * scale.asDiagonal();
        for (int a = 0; a < 3; ++a) {
            const double g_s = g_m.col(a).dot(r.col(a));
            out.log_scales(i, a) += g_s * scale[a];
        }
        out.quats.row(i) += quat_to_rotation_backward(g.quats[i], g_r).transpose();
    }
    return out;
}

} // namespace volsplat
