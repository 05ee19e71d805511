// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Pinhole projection, rigid camera-to-world poses and raster sampling.
//
// Camera frame: x right, y down, z forward. Pixel (x, y) has its center at
// integer coordinates, so a raster covers [-0.5, W - 0.5) x [-0.5, H - 0.5).
// Depth is always the camera-space z coordinate, never the ray length.
#pragma once

#include "volsplat/core.hpp"

#include <algorithm>
#include <sstream>

namespace volsplat {

struct Pinhole {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width  = 0;
    int height = 0;

    void
    validate() const {
        require(fx > 0.0 && fy > 0.0, "pinhole: focal lengths must be positive");
        require(width > 0 && height > 0, "pinhole: resolution must be positive");
        require(cx > 0.0 && cx < width && cy > 0.0 && cy < height,
                "pinhole: principal point outside the image");
    }

    Mat3
    matrix() const {
        Mat3 k;
        k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
        return k;
    }

    bool
    contains(const Vec2 &pixel) const {
        return pixel.x() >= -0.5 && pixel.x() < width - 0.5 && pixel.y() >= -0.5 &&
               pixel.y() < height - 0.5;
    }
};

/// Camera-to-world rigid transform: p_world = rotation * p_cam + translation.
struct RigidPose {
    Mat3 rotation    = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidPose
    identity() {
        return {};
    }

    static RigidPose
    from_matrix(const Mat4 &m, double tol = 1e-5) {
        RigidPose pose;
        pose.rotation    = m.topLeftCorner<3, 3>();
        pose.translation = m.topRightCorner<3, 1>();
        require(is_rotation(pose.rotation, tol), "pose: rotation block is not orthonormal");
        return pose;
    }

    static bool
    is_rotation(const Mat3 &r, double tol = 1e-5) {
        if (!r.allFinite()) {
            return false;
        }
        const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
        return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
    }

    Mat4
    matrix() const {
        Mat4 m                    = Mat4::Identity();
        m.topLeftCorner<3, 3>()  = rotation;
        m.topRightCorner<3, 1>() = translation;
        return m;
    }

    RigidPose
    inverse() const {
        RigidPose inv;
        inv.rotation    = rotation.transpose();
        inv.translation = -(inv.rotation * translation);
        return inv;
    }

    /// (this * other)(p) = this(other(p)).
    RigidPose
    operator*(const RigidPose &other) const {
        RigidPose out;
        out.rotation    = rotation * other.rotation;
        out.translation = rotation * other.translation + translation;
        return out;
    }

    Vec3
    apply(const Vec3 &p) const {
        return rotation * p + translation;
    }

    Vec3
    to_camera(const Vec3 &world) const {
        return rotation.transpose() * (world - translation);
    }

    const Vec3 &
    center() const {
        return translation;
    }
};

/// Rotation about an axis through the origin, angle in radians.
inline Mat3
axis_angle(const Vec3 &axis, double angle) {
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

/// Camera-to-world pose placed at `eye` looking at `target` with world "down" as +y.
inline RigidPose
look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &down = Vec3(0.0, 1.0, 0.0)) {
    const Vec3 z = (target - eye).normalized();
    const Vec3 x = down.cross(z).normalized();
    const Vec3 y = z.cross(x);
    RigidPose pose;
    pose.rotation.col(0) = x;
    pose.rotation.col(1) = y;
    pose.rotation.col(2) = z;
    pose.translation     = eye;
    return pose;
}

struct Projection {
    Vec2 pixel    = Vec2::Zero();
    double depth  = 0.0;
    bool in_front = false;
};

inline constexpr double kBehindCameraEps = 1e-6;

inline Projection
project(const Vec3 &world, const Pinhole &cam, const RigidPose &pose) {
    require(world.allFinite(), "project: non-finite point");
    const Vec3 pc = pose.to_camera(world);
    Projection out;
    out.depth    = pc.z();
    out.in_front = pc.z() > kBehindCameraEps;
    if (out.in_front) {
        out.pixel = Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
    }
    return out;
}

inline Vec3
unproject(const Vec2 &pixel, double depth, const Pinhole &cam, const RigidPose &pose) {
    if (!(depth > 0.0) || !std::isfinite(depth)) {
        std::ostringstream msg;
        msg << "unproject: non-positive depth " << depth;
        throw Error(msg.str());
    }
    const Vec3 pc((pixel.x() - cam.cx) / cam.fx * depth, (pixel.y() - cam.cy) / cam.fy * depth,
                  depth);
    return pose.apply(pc);
}

/// Camera-space direction (z = 1) of the ray through a pixel.
inline Vec3
pixel_ray(const Vec2 &pixel, const Pinhole &cam) {
    return Vec3((pixel.x() - cam.cx) / cam.fx, (pixel.y() - cam.cy) / cam.fy, 1.0);
}

// ---------------------------------------------------------------------------
// Bilinear sampling. Coordinates are clamped to the raster so window reads
// near the border replicate edge pixels.

struct BilinearStencil {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double tx = 0.0, ty = 0.0;
};

inline BilinearStencil
bilinear_stencil(double u, double v, int width, int height) {
    u = std::clamp(u, 0.0, double(width - 1));
    v = std::clamp(v, 0.0, double(height - 1));
    BilinearStencil s;
    s.x0 = std::min(int(std::floor(u)), width - 1);
    s.y0 = std::min(int(std::floor(v)), height - 1);
    s.x1 = std::min(s.x0 + 1, width - 1);
    s.y1 = std::min(s.y0 + 1, height - 1);
    s.tx = u - s.x0;
    s.ty = v - s.y0;
    return s;
}

inline Vec3
sample_rgb(const Image &img, double u, double v) {
    const BilinearStencil s = bilinear_stencil(u, v, img.width, img.height);
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - s.tx) * img.at(s.x0, s.y0, c) + s.tx * img.at(s.x1, s.y0, c);
        const double bot = (1.0 - s.tx) * img.at(s.x0, s.y1, c) + s.tx * img.at(s.x1, s.y1, c);
        out[c]           = (1.0 - s.ty) * top + s.ty * bot;
    }
    return out;
}

/// Bilinear depth read; NaN when any corner with non-zero weight is invalid.
inline double
sample_depth(const DepthMap &depth, double u, double v) {
    const BilinearStencil s = bilinear_stencil(u, v, depth.width, depth.height);
    const double w[4]       = {(1.0 - s.tx) * (1.0 - s.ty), s.tx * (1.0 - s.ty),
                               (1.0 - s.tx) * s.ty, s.tx * s.ty};
    const int xs[4]         = {s.x0, s.x1, s.x0, s.x1};
    const int ys[4]         = {s.y0, s.y0, s.y1, s.y1};
    double acc              = 0.0;
    for (int k = 0; k < 4; ++k) {
        if (w[k] == 0.0) {
            continue;
        }
        const double d = depth.at(xs[k], ys[k]);
        if (!valid_depth(d)) {
            return kNaN;
        }
        acc += w[k] * d;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Cross-view depth reprojection.

enum class ReprojectStatus : std::uint8_t { invalid_source, behind, outside, ok };

struct ReprojectedPixel {
    ReprojectStatus status = ReprojectStatus::invalid_source;
    Vec2 target            = Vec2::Zero();
    double depth           = kNaN; // z in the target camera
};

/// Lifts every valid pixel of `depth_i` to world space and projects it into
/// camera j. Result is indexed like the source raster.
inline std::vector<ReprojectedPixel>
reproject_depth(const DepthMap &depth_i, const Pinhole &cam_i, const RigidPose &pose_i,
                const Pinhole &cam_j, const RigidPose &pose_j) {
    std::vector<ReprojectedPixel> out(depth_i.data.size());
    for (int y = 0; y < depth_i.height; ++y) {
        for (int x = 0; x < depth_i.width; ++x) {
            ReprojectedPixel &r = out[std::size_t(y) * depth_i.width + x];
            if (!depth_i.valid(x, y)) {
                continue;
            }
            const Vec3 world = unproject(Vec2(x, y), depth_i.at(x, y), cam_i, pose_i);
            const Projection p = project(world, cam_j, pose_j);
            r.depth            = p.depth;
            if (!p.in_front) {
                r.status = ReprojectStatus::behind;
                continue;
            }
            r.target = p.pixel;
            r.status = cam_j.contains(p.pixel) ? ReprojectStatus::ok : ReprojectStatus::outside;
        }
    }
    return out;
}

} // namespace volsplat
