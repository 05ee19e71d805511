// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "volsplat/volsplat.hpp"

#include <atomic>
#include <filesystem>
#include <random>

#include <unistd.h>

namespace fixture {

using namespace volsplat;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("volsplat_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &)            = delete;
    TempDir &operator=(const TempDir &) = delete;

    const std::filesystem::path &
    path() const {
        return path_;
    }
    std::filesystem::path
    operator/(const std::string &name) const {
        return path_ / name;
    }

  private:
    std::filesystem::path path_;
};

inline Pinhole
camera(int w, int h, double f) {
    Pinhole cam;
    cam.fx = cam.fy = f;
    cam.cx          = 0.5 * (w - 1);
    cam.cy          = 0.5 * (h - 1);
    cam.width       = w;
    cam.height      = h;
    return cam;
}

/// One unit box `distance` meters ahead of an identity camera.
inline SyntheticSpec
single_box_spec(double distance = 5.0, int w = 33, int h = 33) {
    SyntheticSpec spec;
    spec.camera = camera(w, h, 30.0);
    spec.objects.push_back(SyntheticObject::box(Vec3(0, 0, distance), Vec3::Constant(0.5),
                                                Vec3(0.6, 0.4, 0.3)));
    spec.train_poses.push_back(RigidPose{});
    spec.foreground_box = {Vec3(-2, -2, 0), Vec3(2, 2, 8)};
    spec.voxel_size     = 0.1;
    return spec;
}

/// Near box partially hiding a far box that fills the view, seen from a row
/// of cameras.
inline SyntheticSpec
two_box_spec(int w = 96, int h = 72, int cameras = 3) {
    SyntheticSpec spec;
    spec.camera = camera(w, h, 0.75 * w);
    spec.objects.push_back(SyntheticObject::box(Vec3(-0.3, 0.0, 3.0), Vec3(0.5, 0.5, 0.4),
                                                Vec3(0.8, 0.3, 0.2)));
    spec.objects.push_back(SyntheticObject::box(Vec3(0.0, 0.0, 8.0), Vec3(7.0, 6.0, 0.5),
                                                Vec3(0.2, 0.5, 0.8)));
    for (int k = 0; k < cameras; ++k) {
        spec.train_poses.push_back(look_at(Vec3(-0.8 + 0.8 * k, -0.1, 0.0), Vec3(0.0, 0.0, 7.0)));
    }
    spec.foreground_box = {Vec3(-7, -6, 1), Vec3(7, 6, 9)};
    spec.voxel_size     = 0.1;
    return spec;
}

inline std::vector<Vec3>
random_points(std::mt19937_64 &rng, std::size_t n, double extent) {
    std::uniform_real_distribution<double> u(0.0, extent);
    std::vector<Vec3> p(n);
    for (Vec3 &v : p) v = Vec3(u(rng), u(rng), u(rng));
    return p;
}

inline GaussianSet
random_gaussians(std::mt19937_64 &rng, std::size_t n) {
    std::normal_distribution<double> g(0.0, 1.0);
    GaussianSet out;
    for (std::size_t i = 0; i < n; ++i) {
        ShCoeffs sh{};
        for (double &c : sh) c = g(rng);
        out.push_back(Vec3(g(rng), g(rng), g(rng)),
                      Vec4(g(rng), g(rng), g(rng), g(rng)).normalized(),
                      Vec3(g(rng), g(rng), g(rng)), g(rng), sh,
                      i % 3 == 0 ? GaussianFlag::background : GaussianFlag::foreground);
    }
    return out;
}

} // namespace fixture
