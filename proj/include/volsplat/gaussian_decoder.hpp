// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Foreground geometry decoding from the feature volume: opacity, rotation and
// scale residual, and the recursive position offset.
#pragma once

#include "volsplat/feature_volume.hpp"
#include "volsplat/snapshot.hpp"

namespace volsplat {

inline constexpr double kMinScale = 1e-4;

/// tanh kept strictly inside (-1, 1); in double precision tanh(x) rounds to
/// 1 for x > 19, which would put the offset exactly on the voxel bound.
inline double
bounded_tanh(double x) {
    constexpr double kMax = 1.0 - 1e-12;
    return std::clamp(std::tanh(x), -kMax, kMax);
}

inline Vec3
offset_from_raw(const Eigen::RowVectorXd &raw, double voxel) {
    return voxel * Vec3(bounded_tanh(raw(0)), bounded_tanh(raw(1)), bounded_tanh(raw(2)));
}

/// Isotropic initial scale per point: mean distance to its k nearest others,
/// floored at kMinScale.
inline std::vector<double>
knn_scale_init(std::span<const Vec3> points, int k = 3) {
    require(k >= 1, "knn_scale_init: k must be positive");
    require(int(points.size()) > k, "knn_scale_init: cloud must have more than k points");
    std::vector<double> s = mean_knn_distance(points, k);
    for (double &v : s) {
        v = std::max(v, kMinScale);
    }
    return s;
}

/// Rotation of the normalized quaternion (w, x, y, z).
inline Mat3
quat_to_rotation(const Vec4 &q_raw) {
    const Vec4 q       = q_raw.normalized();
    const double w     = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// d(loss)/d(q_raw) given d(loss)/d(R) for R = quat_to_rotation(q_raw).
inline Vec4
quat_to_rotation_backward(const Vec4 &q_raw, const Mat3 &g) {
    const double n = q_raw.norm();
    const Vec4 q   = q_raw / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 gq;
    gq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    gq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
                 z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
    gq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                 w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
    gq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
                 y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return (gq - q * q.dot(gq)) / n;
}

/// Sigma = R S S^T R^T.
inline Mat3
build_covariance(const Vec4 &q, const Vec3 &s) {
    const Mat3 m = quat_to_rotation(q) * s.asDiagonal();
    return m * m.transpose();
}

// ---------------------------------------------------------------------------

struct HeadConfig {
    int hidden        = 64;
    int hidden_layers = 2;
};

/// Opacity (1), covariance (3 scale residual + 4 quaternion) and position
/// offset (3) heads over the queried feature.
class GeometryHeads {
  public:
    GeometryHeads() = default;
    GeometryHeads(int feature_width, HeadConfig cfg)
        : opacity("geo.opacity", feature_width, cfg.hidden, cfg.hidden_layers, 1),
          covariance("geo.covariance", feature_width, cfg.hidden, cfg.hidden_layers, 7),
          position("geo.position", feature_width, cfg.hidden, cfg.hidden_layers, 3) {}

    void
    init(std::mt19937_64 &rng) {
        opacity.init(rng);
        covariance.init(rng);
        position.init(rng);
        position.zero_output_layer();
        covariance.output_layer().bias.value(0, 3) = 1.0;
    }

    void
    collect(ParamList &out) {
        opacity.collect(out);
        covariance.collect(out);
        position.collect(out);
    }

    Mlp opacity;
    Mlp covariance;
    Mlp position;
};

struct DecodedGeometry {
    std::vector<Vec3> means;
    std::vector<Vec3> offsets; // final offset per point
    std::vector<double> opacity_logits;
    std::vector<Vec4> quats_raw; // unnormalized head output
    std::vector<Vec3> scales;
    std::vector<bool> scale_floored;
};

/// State of the final decoding pass kept for the backward pass.
struct GeometryCache {
    std::vector<TrilinearStencil> stencils;
    Mat features;
    Mlp::Cache opacity, covariance, position;
    Mat cov_raw, pos_raw;
};

inline Mat
query_features(const FeatureVolume &volume, const std::vector<Vec3> &points,
               std::vector<TrilinearStencil> *stencils = nullptr) {
    Mat f(points.size(), volume.channels());
    if (stencils) {
        stencils->resize(points.size());
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        const TrilinearStencil s = volume.stencil(points[i]);
        f.row(i)                 = volume.query(s);
        if (stencils) {
            (*stencils)[i] = s;
        }
    }
    return f;
}

/// Offset recursion: each pass queries F at mu_init + offset_prev and sets
/// offset = tanh(D_pos(f)) * voxel. `offset_prev` holds the state on entry
/// and the last offset on return.
inline std::vector<Vec3>
decode_offsets(const FeatureVolume &volume, const GeometryHeads &heads,
               const std::vector<Vec3> &mu_init, std::vector<Vec3> &offset_prev, int recursions,
               double voxel) {
    require(recursions >= 1, "decode_offsets: recursions must be >= 1");
    require(offset_prev.size() == mu_init.size(), "decode_offsets: state size mismatch");
    std::vector<Vec3> probe(mu_init.size());
    for (int r = 0; r < recursions; ++r) {
        for (std::size_t i = 0; i < mu_init.size(); ++i) {
            probe[i] = mu_init[i] + offset_prev[i];
        }
        const Mat raw = heads.position.forward(query_features(volume, probe));
        for (std::size_t i = 0; i < mu_init.size(); ++i) {
            offset_prev[i] = offset_from_raw(raw.row(i), voxel);
        }
    }
    std::vector<Vec3> mu(mu_init.size());
    for (std::size_t i = 0; i < mu_init.size(); ++i) {
        mu[i] = mu_init[i] + offset_prev[i];
    }
    return mu;
}

/// Full decode. The first `recursions - 1` passes only advance the offset;
/// the last pass queries f = F(mu_init + offset_prev) once and feeds every
/// head from it. `offset_state` is updated in place.
inline DecodedGeometry
decode_geometry(const FeatureVolume &volume, const GeometryHeads &heads,
                const std::vector<Vec3> &mu_init, const std::vector<double> &s_init,
                std::vector<Vec3> &offset_state, int recursions, double voxel,
                GeometryCache *cache = nullptr) {
    require(recursions >= 1, "decode_geometry: recursions must be >= 1");
    require(s_init.size() == mu_init.size(), "decode_geometry: s_init size mismatch");
    if (recursions > 1) {
        decode_offsets(volume, heads, mu_init, offset_state, recursions - 1, voxel);
    }
    const std::size_t n = mu_init.size();
    std::vector<Vec3> probe(n);
    for (std::size_t i = 0; i < n; ++i) {
        probe[i] = mu_init[i] + offset_state[i];
    }
    GeometryCache local;
    GeometryCache &c = cache ? *cache : local;
    c.features       = query_features(volume, probe, &c.stencils);
    const Mat opa    = heads.opacity.forward(c.features, &c.opacity);
    c.cov_raw        = heads.covariance.forward(c.features, &c.covariance);
    c.pos_raw        = heads.position.forward(c.features, &c.position);

    DecodedGeometry out;
    out.means.resize(n);
    out.offsets.resize(n);
    out.opacity_logits.resize(n);
    out.quats_raw.resize(n);
    out.scales.resize(n);
    out.scale_floored.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 off       = offset_from_raw(c.pos_raw.row(i), voxel);
        offset_state[i]      = off;
        out.offsets[i]       = off;
        out.means[i]         = mu_init[i] + off;
        out.opacity_logits[i] = opa(i, 0);
        out.quats_raw[i]     = c.cov_raw.row(i).segment<4>(3).transpose();
        bool floored         = false;
        for (int a = 0; a < 3; ++a) {
            const double s = s_init[i] * (1.0 + std::tanh(c.cov_raw(i, a)));
            floored        = floored || s < kMinScale;
            out.scales[i][a] = std::max(s, kMinScale);
        }
        out.scale_floored[i] = floored;
    }
    return out;
}

/// Gradients of the loss wrt the decoded attributes, as the rasterizer sees
/// them (log scales, raw quaternion, opacity logit, mean).
struct GeometryGrads {
    Mat means;          // N x 3
    Mat opacity_logits; // N x 1
    Mat quats;          // N x 4
    Mat log_scales;     // N x 3
};

/// Back-propagates through the heads; returns d(loss)/d(queried feature).
inline Mat
decode_geometry_backward(GeometryHeads &heads, const GeometryCache &c,
                         const std::vector<double> &s_init, const DecodedGeometry &geo,
                         const GeometryGrads &g, double voxel) {
    const std::size_t n = s_init.size();
    Mat g_pos(n, 3), g_cov(n, 7);
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            const double t = bounded_tanh(c.pos_raw(i, a));
            g_pos(i, a)    = g.means(i, a) * voxel * (1.0 - t * t);
            const double u = std::tanh(c.cov_raw(i, a));
            const double s = s_init[i] * (1.0 + u);
            g_cov(i, a)    = s < kMinScale ? 0.0
                                           : g.log_scales(i, a) * s_init[i] * (1.0 - u * u) /
                                              geo.scales[i][a];
        }
        for (int k = 0; k < 4; ++k) {
            g_cov(i, 3 + k) = g.quats(i, k);
        }
    }
    Mat g_f = heads.opacity.backward(c.opacity, g.opacity_logits);
    g_f += heads.covariance.backward(c.covariance, g_cov);
    g_f += heads.position.backward(c.position, g_pos);
    return g_f;
}

inline void
scatter_feature_grads(const std::vector<TrilinearStencil> &stencils, const Mat &g_f,
                      Mat &grad_features) {
    for (std::size_t i = 0; i < stencils.size(); ++i) {
        FeatureVolume::query_backward(stencils[i], g_f.row(i), grad_features);
    }
}

} // namespace volsplat
