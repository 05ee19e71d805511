// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Hemisphere background: a fixed-radius shell of Gaussians that translates
// with the rendering camera, colored and scaled by a small network over
// single-pixel reference samples.
//
// Shell positions live on a 2^-24 m lattice (center, camera displacement and
// per-point offsets are each rounded to it), so following a camera
// translation moves every mean by exactly the rounded displacement.
#pragma once

#include "volsplat/gaussian_decoder.hpp"
#include "volsplat/ibr_color.hpp"

#include <numbers>

namespace volsplat {

inline constexpr double kShellLattice = 1.0 / double(1 << 24);

inline double
lattice_round(double v) {
    return std::round(v / kShellLattice) * kShellLattice;
}

inline Vec3
lattice_round(const Vec3 &v) {
    return Vec3(lattice_round(v.x()), lattice_round(v.y()), lattice_round(v.z()));
}

struct HemisphereShell {
    double radius = 100.0;
    Vec3 center   = Vec3::Zero(); // at the anchor camera
    Vec3 anchor   = Vec3::Zero(); // camera center the shell was built for
    std::vector<Vec3> directions;
    std::vector<Vec3> offsets; // lattice-rounded radius * direction
    std::vector<double> s_init;

    std::size_t
    size() const {
        return offsets.size();
    }

    /// Shell center when rendering from a camera at `camera_center`.
    Vec3
    center_for(const Vec3 &camera_center) const {
        return center + (lattice_round(camera_center) - anchor);
    }

    std::vector<Vec3>
    points_for(const Vec3 &camera_center) const {
        const Vec3 c = center_for(camera_center);
        std::vector<Vec3> out(offsets.size());
        for (std::size_t i = 0; i < offsets.size(); ++i) {
            out[i] = c + offsets[i];
        }
        return out;
    }
};

/// Fibonacci-spiral directions over the upper hemisphere (world up is -y),
/// equal-area in elevation.
inline std::vector<Vec3>
fibonacci_hemisphere(int n) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<Vec3> dirs(n);
    for (int i = 0; i < n; ++i) {
        const double up  = (i + 0.5) / n;
        const double rho = std::sqrt(std::max(0.0, 1.0 - up * up));
        const double phi = golden * i;
        dirs[i]          = Vec3(rho * std::cos(phi), -up, rho * std::sin(phi));
    }
    return dirs;
}

inline HemisphereShell
build_shell(int n_points, double radius, const Vec3 &center, const Vec3 &anchor_camera = Vec3::Zero()) {
    require(n_points >= 64, "build_shell: need at least 64 points");
    require(radius > 0.0, "build_shell: radius must be positive");
    HemisphereShell shell;
    shell.radius     = radius;
    shell.center     = lattice_round(center);
    shell.anchor     = lattice_round(anchor_camera);
    shell.directions = fibonacci_hemisphere(n_points);
    shell.offsets.reserve(n_points);
    for (const Vec3 &d : shell.directions) {
        shell.offsets.push_back(lattice_round(radius * d));
    }
    shell.s_init = knn_scale_init(shell.offsets, 3);
    return shell;
}

// ---------------------------------------------------------------------------

/// Two-layer network: K single-pixel colors -> RGB and 3 scale residuals.
class BackgroundHead {
  public:
    BackgroundHead() = default;
    explicit BackgroundHead(int references, int hidden = 64)
        : references_(references), net("background", references * 3, hidden, 1, 6) {}

    void
    init(std::mt19937_64 &rng) {
        net.init(rng);
        for (int c = 0; c < 3; ++c) {
            net.output_layer().bias.value(0, c) = 0.5;
        }
    }
    int
    references() const {
        return references_;
    }
    void
    collect(ParamList &out) {
        net.collect(out);
    }

    int references_ = 3;
    Mlp net;
};

inline Mat
build_background_inputs(const std::vector<Vec3> &points, const std::vector<PosedFrame> &frames,
                        int k, int exclude = -1) {
    Mat x = Mat::Zero(points.size(), 3 * k);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::vector<int> refs = select_references(points[i], frames, k, exclude);
        for (int r = 0; r < k && !refs.empty(); ++r) {
            const int f        = refs[std::min<int>(r, int(refs.size()) - 1)];
            const Projection p = project(points[i], frames[f].camera, frames[f].pose);
            const Vec3 c       = sample_rgb(frames[f].image, p.pixel.x(), p.pixel.y());
            x.block<1, 3>(i, 3 * r) = c.transpose();
        }
    }
    return x;
}

struct BackgroundCache {
    Mat inputs;
    Mlp::Cache net;
    Mat raw; // N x 6
};

/// Background-flagged Gaussians for a camera at `camera_center`: opacity 1,
/// identity rotation, DC-only color.
inline GaussianSet
decode_background(const HemisphereShell &shell, const Vec3 &camera_center,
                  const std::vector<PosedFrame> &frames, const BackgroundHead &head,
                  int exclude = -1, BackgroundCache *cache = nullptr) {
    const std::vector<Vec3> points = shell.points_for(camera_center);
    BackgroundCache local;
    BackgroundCache &c = cache ? *cache : local;
    c.inputs           = build_background_inputs(points, frames, head.references(), exclude);
    c.raw              = head.net.forward(c.inputs, &c.net);
    GaussianSet g;
    for (std::size_t i = 0; i < points.size(); ++i) {
        Vec3 log_scale;
        for (int a = 0; a < 3; ++a) {
            const double s = shell.s_init[i] * (1.0 + std::tanh(c.raw(i, 3 + a)));
            log_scale[a]   = std::log(std::max(s, kMinScale));
        }
        const Vec3 rgb(c.raw(i, 0), c.raw(i, 1), c.raw(i, 2));
        g.push_back(points[i], Vec4(1.0, 0.0, 0.0, 0.0), log_scale, kOpaqueLogit,
                    sh_from_color(rgb), GaussianFlag::background);
    }
    return g;
}

/// Back-propagates gradients on the background primitives' SH (DC entries)
/// and log scales into the head.
inline void
decode_background_backward(const HemisphereShell &shell, BackgroundHead &head,
                           const BackgroundCache &c, const Mat &grad_sh,
                           const Mat &grad_log_scales) {
    Mat g_raw(c.raw.rows(), 6);
    for (Eigen::Index i = 0; i < c.raw.rows(); ++i) {
        for (int k = 0; k < 3; ++k) {
            g_raw(i, k) = grad_sh(i, k) / kShC0;
        }
        for (int a = 0; a < 3; ++a) {
            const double t = std::tanh(c.raw(i, 3 + a));
            const double s = shell.s_init[i] * (1.0 + t);
            g_raw(i, 3 + a) =
                s < kMinScale ? 0.0 : grad_log_scales(i, a) * shell.s_init[i] * (1.0 - t * t) / s;
        }
    }
    head.net.backward(c.net, g_raw);
}

} // namespace volsplat
