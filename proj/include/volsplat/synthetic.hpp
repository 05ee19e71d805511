// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Procedural RGB-D scenes: textured boxes and spheres in an optional corridor
// (floor, side walls, back wall) under a direction-only sky. Depth is
// analytic ray casting, optionally corrupted with Gaussian noise.
#pragma once

#include "volsplat/camera.hpp"
#include "volsplat/scene_io.hpp"

#include <optional>
#include <random>

namespace volsplat {

struct SyntheticObject {
    enum class Kind { box, sphere };
    Kind kind = Kind::box;
    Vec3 center = Vec3::Zero();
    Vec3 half_extent = Vec3::Constant(0.5); // box only
    double radius    = 0.5;                 // sphere only
    Vec3 base_color  = Vec3::Constant(0.5);
    double amplitude = 0.15;
    double frequency = 2.0; // radians per meter
    Vec3 phase       = Vec3::Zero();

    static SyntheticObject
    box(const Vec3 &center, const Vec3 &half, const Vec3 &color) {
        SyntheticObject o;
        o.center      = center;
        o.half_extent = half;
        o.base_color  = color;
        return o;
    }
    static SyntheticObject
    sphere(const Vec3 &center, double radius, const Vec3 &color) {
        SyntheticObject o;
        o.kind       = Kind::sphere;
        o.center     = center;
        o.radius     = radius;
        o.base_color = color;
        return o;
    }

    bool
    contains(const Vec3 &p) const {
        if (kind == Kind::sphere) {
            return (p - center).norm() < radius;
        }
        return ((p - center).cwiseAbs().array() < half_extent.array()).all();
    }

    /// Ray parameter of the first entry hit with t > t_min, if any.
    std::optional<double>
    intersect(const Vec3 &origin, const Vec3 &dir, double t_min = 1e-9) const {
        if (kind == Kind::sphere) {
            const Vec3 oc  = origin - center;
            const double a = dir.squaredNorm();
            const double b = oc.dot(dir);
            const double c = oc.squaredNorm() - radius * radius;
            const double disc = b * b - a * c;
            if (disc < 0.0) {
                return std::nullopt;
            }
            const double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / a, (-b + sq) / a}) {
                if (t > t_min) {
                    return t;
                }
            }
            return std::nullopt;
        }
        double t0 = -std::numeric_limits<double>::infinity();
        double t1 = std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
            const double lo = center[a] - half_extent[a];
            const double hi = center[a] + half_extent[a];
            if (dir[a] == 0.0) {
                if (origin[a] < lo || origin[a] > hi) {
                    return std::nullopt;
                }
                continue;
            }
            double ta = (lo - origin[a]) / dir[a];
            double tb = (hi - origin[a]) / dir[a];
            if (ta > tb) {
                std::swap(ta, tb);
            }
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
        }
        if (t0 > t1) {
            return std::nullopt;
        }
        if (t0 > t_min) {
            return t0;
        }
        if (t1 > t_min) {
            return t1;
        }
        return std::nullopt;
    }

    Vec3
    color_at(const Vec3 &p) const {
        const double f = frequency;
        const Vec3 wave(std::sin(f * (p.x() + p.y()) + phase.x()),
                        std::sin(f * (p.y() + p.z()) + phase.y()),
                        std::sin(f * (p.z() + p.x()) + phase.z()));
        return (base_color + amplitude * wave).cwiseMax(0.0).cwiseMin(1.0);
    }
};

struct CorridorSpec {
    double half_width = 3.0;  // side walls at x = +-half_width
    double floor_y    = 1.5;  // floor plane (y is down)
    double wall_top_y = -1.5; // top edge of all walls
    double z_begin    = -1.0;
    double z_end      = 12.6; // back wall plane
    double thickness  = 0.2;
};

struct SyntheticSpec {
    std::vector<SyntheticObject> objects;
    std::optional<CorridorSpec> corridor;
    Pinhole camera;
    std::vector<RigidPose> train_poses;
    std::vector<RigidPose> heldout_poses;
    double depth_noise_std      = 0.0; // additive, meters
    double depth_noise_relative = 0.0; // multiplicative, fraction of depth
    Box3 foreground_box;
    double voxel_size = 0.1;
    Vec3 sky_zenith   = Vec3(0.35, 0.55, 0.9);
    Vec3 sky_horizon  = Vec3(0.8, 0.85, 0.9);
};

struct RayHit {
    double t = std::numeric_limits<double>::infinity();
    int object = -1;
    Vec3 color = Vec3::Zero();
};

/// Full geometry (objects plus corridor slabs) with analytic ray casting.
class SyntheticWorld {
  public:
    explicit SyntheticWorld(const SyntheticSpec &spec) : spec_(spec) {
        require(!spec.objects.empty() && spec.objects.size() <= 16,
                "synthetic scene needs 1 to 16 objects");
        prims_ = spec.objects;
        if (spec.corridor) {
            const CorridorSpec &c = *spec.corridor;
            const double mid_y    = 0.5 * (c.floor_y + c.wall_top_y);
            const double half_y   = 0.5 * (c.floor_y - c.wall_top_y);
            const double mid_z    = 0.5 * (c.z_begin + c.z_end);
            const double half_z   = 0.5 * (c.z_end - c.z_begin);
            const double t        = c.thickness;
            SyntheticObject floor = SyntheticObject::box(
                Vec3(0.0, c.floor_y + 0.5 * t, mid_z), Vec3(c.half_width + t, 0.5 * t, half_z),
                Vec3(0.45, 0.42, 0.38));
            floor.frequency = 1.3;
            floor.amplitude = 0.18;
            SyntheticObject left = SyntheticObject::box(
                Vec3(-c.half_width - 0.5 * t, mid_y, mid_z), Vec3(0.5 * t, half_y, half_z),
                Vec3(0.62, 0.5, 0.42));
            left.frequency = 1.1;
            left.phase     = Vec3(0.4, 1.3, 2.1);
            SyntheticObject right = SyntheticObject::box(
                Vec3(c.half_width + 0.5 * t, mid_y, mid_z), Vec3(0.5 * t, half_y, half_z),
                Vec3(0.42, 0.52, 0.6));
            right.frequency = 1.1;
            right.phase     = Vec3(2.0, 0.2, 1.0);
            SyntheticObject back = SyntheticObject::box(
                Vec3(0.0, mid_y, c.z_end + 0.5 * t), Vec3(c.half_width + t, half_y, 0.5 * t),
                Vec3(0.55, 0.58, 0.5));
            back.frequency = 1.2;
            back.phase     = Vec3(1.0, 2.5, 0.3);
            for (auto &s : {floor, left, right, back}) {
                prims_.push_back(s);
            }
        }
    }

    const std::vector<SyntheticObject> &
    primitives() const {
        return prims_;
    }

    RayHit
    cast(const Vec3 &origin, const Vec3 &dir) const {
        RayHit hit;
        for (std::size_t i = 0; i < prims_.size(); ++i) {
            if (auto t = prims_[i].intersect(origin, dir); t && *t < hit.t) {
                hit.t      = *t;
                hit.object = int(i);
            }
        }
        if (hit.object >= 0) {
            hit.color = prims_[hit.object].color_at(origin + hit.t * dir);
        } else {
            hit.color = sky(dir.normalized());
        }
        return hit;
    }

    Vec3
    sky(const Vec3 &d) const {
        const double elevation = std::clamp(-d.y(), 0.0, 1.0);
        const double azimuth   = std::atan2(d.x(), d.z());
        Vec3 c = spec_.sky_horizon + (spec_.sky_zenith - spec_.sky_horizon) * std::sqrt(elevation);
        c += Vec3::Constant(0.04 * std::sin(2.0 * azimuth));
        return c.cwiseMax(0.0).cwiseMin(1.0);
    }

    bool
    inside_geometry(const Vec3 &p) const {
        for (const auto &s : prims_) {
            if (s.contains(p)) {
                return true;
            }
        }
        return false;
    }

    /// Noise-free render: colors plus exact z-depth (NaN for sky).
    PosedFrame
    render(const Pinhole &cam, const RigidPose &pose) const {
        PosedFrame f;
        f.camera = cam;
        f.pose   = pose;
        f.image  = Image(cam.width, cam.height, 3);
        f.depth  = DepthMap(cam.width, cam.height);
        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Vec3 dir = pose.rotation * pixel_ray(Vec2(x, y), cam);
                const RayHit h = cast(pose.translation, dir);
                for (int c = 0; c < 3; ++c) {
                    f.image.at(x, y, c) = h.color[c];
                }
                if (h.object >= 0) {
                    f.depth.at(x, y) = float(h.t); // dir has unit camera z
                }
            }
        }
        return f;
    }

  private:
    SyntheticSpec spec_;
    std::vector<SyntheticObject> prims_;
};

struct SyntheticScene {
    SceneManifest manifest; // raster paths empty until written
    std::vector<PosedFrame> frames;
    std::vector<PosedFrame> heldout;
    std::vector<DepthMap> clean_depth; // noise-free depth for `frames`
};

inline SyntheticScene
make_synthetic_scene(const SyntheticSpec &spec, std::uint64_t seed) {
    spec.camera.validate();
    require(!spec.train_poses.empty(), "synthetic scene needs at least one camera");
    SyntheticWorld world(spec);
    for (const auto *poses : {&spec.train_poses, &spec.heldout_poses}) {
        for (const RigidPose &p : *poses) {
            if (world.inside_geometry(p.translation)) {
                throw Error("camera path intersects geometry");
            }
        }
    }

    SyntheticScene scene;
    scene.manifest.foreground_box = spec.foreground_box;
    scene.manifest.voxel_size     = spec.voxel_size;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const RigidPose &pose : spec.train_poses) {
        PosedFrame f = world.render(spec.camera, pose);
        scene.clean_depth.push_back(f.depth);
        if (spec.depth_noise_std > 0.0 || spec.depth_noise_relative > 0.0) {
            for (float &d : f.depth.data) {
                if (!std::isfinite(d)) {
                    continue;
                }
                const double noisy = d * (1.0 + spec.depth_noise_relative * normal(rng)) +
                                     spec.depth_noise_std * normal(rng);
                d = noisy > 0.0 ? float(noisy) : std::numeric_limits<float>::quiet_NaN();
            }
        }
        FrameEntry e;
        e.camera          = spec.camera;
        e.camera_to_world = pose.matrix();
        scene.manifest.frames.push_back(e);
        scene.frames.push_back(std::move(f));
    }
    for (const RigidPose &pose : spec.heldout_poses) {
        scene.heldout.push_back(world.render(spec.camera, pose));
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Canned scenes.

inline Pinhole
default_camera(int width = 64, int height = 48, double focal = 48.0) {
    Pinhole cam;
    cam.width  = width;
    cam.height = height;
    cam.fx     = focal;
    cam.fy     = focal;
    cam.cx     = 0.5 * (width - 1);
    cam.cy     = 0.5 * (height - 1);
    return cam;
}

/// Corridor with `n_boxes` textured boxes, 8 training views and 2 held-out
/// views interleaved along a gently swaying forward path.
inline SyntheticSpec
corridor_spec(int n_boxes = 3, const Pinhole &cam = default_camera()) {
    SyntheticSpec spec;
    spec.camera   = cam;
    spec.corridor = CorridorSpec{};
    const Vec3 colors[] = {{0.8, 0.3, 0.25}, {0.25, 0.6, 0.35}, {0.3, 0.35, 0.8},
                           {0.85, 0.75, 0.3}, {0.6, 0.3, 0.7},   {0.3, 0.7, 0.75}};
    for (int i = 0; i < n_boxes; ++i) {
        const double side = (i % 2 == 0) ? -1.0 : 1.0;
        const double size = 0.5 + 0.15 * (i % 3);
        SyntheticObject box = SyntheticObject::box(
            Vec3(side * (1.0 + 0.3 * (i % 3)), 1.5 - size, 5.5 + 2.0 * i),
            Vec3(0.6, size, 0.6), colors[i % 6]);
        box.frequency = 2.5;
        box.phase     = Vec3(0.7 * i, 1.1 * i, 0.3 * i);
        spec.objects.push_back(box);
    }
    const int total = 10;
    for (int k = 0; k < total; ++k) {
        const Vec3 eye(0.35 * std::sin(0.9 * k), 0.0, 0.4 * k);
        const Vec3 target(0.0, 0.25, 12.0);
        const RigidPose pose = look_at(eye, target);
        if (k == 3 || k == 7) {
            spec.heldout_poses.push_back(pose);
        } else {
            spec.train_poses.push_back(pose);
        }
    }
    spec.foreground_box.min = Vec3(-3.2, -1.6, -1.0);
    spec.foreground_box.max = Vec3(3.2, 1.6, 12.8);
    spec.voxel_size         = 0.2;
    return spec;
}

} // namespace volsplat
