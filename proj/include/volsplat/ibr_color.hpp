// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Image-based color: reference-view selection, W x W color and visibility
// windows, the aggregation head producing degree-1 SH coefficients, and SH
// evaluation.
//
// Visibility per window cell is v = (delta - d) / delta, where delta is the
// distance from the reference camera center to the point and d is the stored
// depth converted to range along that cell's ray. Cells without valid depth
// get v = -1 (nothing stored in front).
#pragma once

#include "volsplat/camera.hpp"
#include "volsplat/nn.hpp"
#include "volsplat/scene_io.hpp"
#include "volsplat/snapshot.hpp"

namespace volsplat {

/// rgb = C0 sh0 - C1 y sh1 + C1 z sh2 - C1 x sh3 + 0.5, clamped to [0, 1].
/// Coefficients are basis-major with RGB inner.
inline Vec3
eval_sh_unclamped(const double *sh, const Vec3 &dir) {
    Vec3 rgb;
    for (int c = 0; c < 3; ++c) {
        rgb[c] = kShC0 * sh[c] - kShC1 * dir.y() * sh[3 + c] + kShC1 * dir.z() * sh[6 + c] -
                 kShC1 * dir.x() * sh[9 + c] + 0.5;
    }
    return rgb;
}

inline Vec3
eval_sh(const double *sh, const Vec3 &dir) {
    return eval_sh_unclamped(sh, dir).cwiseMax(0.0).cwiseMin(1.0);
}

inline Vec3
eval_sh(const ShCoeffs &sh, const Vec3 &dir) {
    return eval_sh(sh.data(), dir);
}

/// Accumulates d(loss)/d(sh) into `grad_sh` and returns d(loss)/d(dir) for
/// upstream gradient `g` on the clamped color. Clamped channels pass nothing.
inline Vec3
eval_sh_backward(const double *sh, const Vec3 &dir, const Vec3 &g, double *grad_sh) {
    const Vec3 raw = eval_sh_unclamped(sh, dir);
    Vec3 g_dir     = Vec3::Zero();
    for (int c = 0; c < 3; ++c) {
        if (raw[c] < 0.0 || raw[c] > 1.0) {
            continue;
        }
        grad_sh[c] += kShC0 * g[c];
        grad_sh[3 + c] += -kShC1 * dir.y() * g[c];
        grad_sh[6 + c] += kShC1 * dir.z() * g[c];
        grad_sh[9 + c] += -kShC1 * dir.x() * g[c];
        g_dir.x() += -kShC1 * sh[9 + c] * g[c];
        g_dir.y() += -kShC1 * sh[3 + c] * g[c];
        g_dir.z() += kShC1 * sh[6 + c] * g[c];
    }
    return g_dir;
}

/// DC-only coefficients reproducing `rgb` in every direction.
inline ShCoeffs
sh_from_color(const Vec3 &rgb) {
    ShCoeffs sh{};
    for (int c = 0; c < 3; ++c) {
        sh[c] = (rgb[c] - 0.5) / kShC0;
    }
    return sh;
}

// ---------------------------------------------------------------------------
// Reference sampling

struct IbrConfig {
    int references = 3; // K
    int window     = 3; // W, odd
};

inline int
reference_feature_width(int window) {
    return window * window * 3 + window * window + 1 + 3;
}

inline int
color_input_width(const IbrConfig &cfg) {
    return cfg.references * reference_feature_width(cfg.window);
}

struct ReferenceSample {
    int frame       = -1;
    Vec2 pixel      = Vec2::Zero();
    double distance = 0.0;          // delta
    Vec3 direction  = Vec3::Zero(); // unit, from reference camera to point
    std::vector<double> colors;     // W*W*3, cell-major, row-major cells
    std::vector<double> depths;     // W*W range along the cell ray, NaN if invalid
    std::vector<double> visibility; // W*W
    bool padded = false;
};

struct ReferenceSet {
    std::vector<ReferenceSample> samples; // exactly K
    bool no_reference = false;
};

/// Frames that see `mu` in front and inside the raster, ordered by camera
/// distance with ties broken by frame index. `exclude` removes one frame.
inline std::vector<int>
select_references(const Vec3 &mu, const std::vector<PosedFrame> &frames, int k, int exclude = -1) {
    std::vector<std::pair<double, int>> seen;
    for (int f = 0; f < int(frames.size()); ++f) {
        if (f == exclude) {
            continue;
        }
        const Projection p = project(mu, frames[f].camera, frames[f].pose);
        if (p.in_front && frames[f].camera.contains(p.pixel)) {
            seen.emplace_back((mu - frames[f].pose.center()).norm(), f);
        }
    }
    std::sort(seen.begin(), seen.end());
    std::vector<int> out;
    for (int i = 0; i < std::min<int>(k, int(seen.size())); ++i) {
        out.push_back(seen[i].second);
    }
    return out;
}

inline ReferenceSample
sample_reference(const Vec3 &mu, const PosedFrame &frame, int frame_index, int window) {
    require(window >= 1 && window % 2 == 1, "sample_reference: window must be odd");
    ReferenceSample s;
    s.frame            = frame_index;
    const Projection p = project(mu, frame.camera, frame.pose);
    s.pixel            = p.pixel;
    const Vec3 ray     = mu - frame.pose.center();
    s.distance         = ray.norm();
    s.direction        = ray / s.distance;
    const int r        = window / 2;
    s.colors.reserve(window * window * 3);
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            const double u = p.pixel.x() + dx, v = p.pixel.y() + dy;
            const Vec3 c   = sample_rgb(frame.image, u, v);
            s.colors.insert(s.colors.end(), {c[0], c[1], c[2]});
            const double z = sample_depth(frame.depth, u, v);
            const double d = valid_depth(z) ? z * pixel_ray(Vec2(u, v), frame.camera).norm() : kNaN;
            s.depths.push_back(d);
            s.visibility.push_back(std::isnan(d) ? -1.0 : (s.distance - d) / s.distance);
        }
    }
    return s;
}

/// K reference samples for one point; pads by repeating the nearest reference
/// with its visibility window set to 1.
inline ReferenceSet
gather_reference_samples(const Vec3 &mu, const std::vector<PosedFrame> &frames, int k, int window,
                         int exclude = -1) {
    require(k >= 1, "gather_reference_samples: K must be >= 1");
    ReferenceSet set;
    const std::vector<int> refs = select_references(mu, frames, k, exclude);
    if (refs.empty()) {
        set.no_reference = true;
        ReferenceSample zero;
        zero.colors.assign(window * window * 3, 0.0);
        zero.depths.assign(window * window, kNaN);
        zero.visibility.assign(window * window, 0.0);
        zero.padded = true;
        set.samples.assign(k, zero);
        return set;
    }
    for (int f : refs) {
        set.samples.push_back(sample_reference(mu, frames[f], f, window));
    }
    while (int(set.samples.size()) < k) {
        ReferenceSample pad = set.samples.front();
        std::fill(pad.visibility.begin(), pad.visibility.end(), 1.0);
        pad.padded = true;
        set.samples.push_back(std::move(pad));
    }
    return set;
}

/// Concatenated head input: per reference colors, visibility, delta, theta.
inline void
encode_references(const ReferenceSet &set, double *out) {
    for (const ReferenceSample &s : set.samples) {
        out = std::copy(s.colors.begin(), s.colors.end(), out);
        out = std::copy(s.visibility.begin(), s.visibility.end(), out);
        *out++ = s.distance;
        for (int a = 0; a < 3; ++a) {
            *out++ = s.direction[a];
        }
    }
}

struct ColorInputs {
    Mat features; // N x color_input_width
    std::vector<bool> no_reference;
};

inline ColorInputs
build_color_inputs(const std::vector<Vec3> &points, const std::vector<PosedFrame> &frames,
                   const IbrConfig &cfg, int exclude = -1) {
    ColorInputs in;
    in.features.resize(points.size(), color_input_width(cfg));
    in.no_reference.resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const ReferenceSet set =
            gather_reference_samples(points[i], frames, cfg.references, cfg.window, exclude);
        encode_references(set, in.features.row(i).data());
        in.no_reference[i] = set.no_reference;
    }
    return in;
}

/// Aggregation network: references -> 12 SH coefficients.
class ColorHead {
  public:
    ColorHead() = default;
    ColorHead(const IbrConfig &cfg, int hidden = 64)
        : cfg_(cfg), net("color", color_input_width(cfg), hidden, 2, kShCoeffs) {}

    void
    init(std::mt19937_64 &rng) {
        net.init(rng);
    }
    const IbrConfig &
    config() const {
        return cfg_;
    }
    void
    collect(ParamList &out) {
        net.collect(out);
    }

    Mat
    forward(const Mat &inputs, Mlp::Cache *cache = nullptr) const {
        return net.forward(inputs, cache);
    }

    IbrConfig cfg_;
    Mlp net;
};

/// SH coefficients for one reference set.
inline ShCoeffs
aggregate_color(const ReferenceSet &set, const ColorHead &head) {
    Mat x(1, color_input_width(head.config()));
    encode_references(set, x.row(0).data());
    const Mat y = head.forward(x);
    ShCoeffs sh{};
    for (int k = 0; k < kShCoeffs; ++k) {
        sh[k] = y(0, k);
    }
    return sh;
}

} // namespace volsplat
