// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace volsplat;

namespace {

std::string
error_of(const std::function<void()> &f) {
    try {
        f();
    } catch (const Error &e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(Synthetic, BoxDepthMatchesRayCast) {
    const SyntheticSpec spec = fixture::single_box_spec(5.0);
    const SyntheticScene s   = make_synthetic_scene(spec, 0);
    ASSERT_EQ(s.frames.size(), 1u);
    EXPECT_NEAR(s.frames[0].depth.at(16, 16), 4.5, 1e-6);
    const SyntheticWorld world(spec);
    for (int y = 0; y < 33; ++y) {
        for (int x = 0; x < 33; ++x) {
            const double oracle_d = oracle::ray_cast_depth(world, spec.camera, RigidPose{}, x, y);
            const float d         = s.frames[0].depth.at(x, y);
            if (std::isinf(oracle_d)) {
                EXPECT_TRUE(std::isnan(d));
            } else {
                EXPECT_NEAR(d, oracle_d, 1e-5);
            }
        }
    }
}

TEST(Synthetic, CorridorDepthMatchesRayCast) {
    const SyntheticSpec spec = corridor_spec();
    const SyntheticScene s   = make_synthetic_scene(spec, 0);
    const SyntheticWorld world(spec);
    ASSERT_EQ(s.frames.size(), 8u);
    ASSERT_EQ(s.heldout.size(), 2u);
    const PosedFrame &f = s.frames[2];
    for (int y = 0; y < f.camera.height; y += 3) {
        for (int x = 0; x < f.camera.width; x += 3) {
            const double d = oracle::ray_cast_depth(world, f.camera, f.pose, x, y);
            if (std::isfinite(d)) EXPECT_NEAR(f.depth.at(x, y), d, 1e-5 * std::max(1.0, d));
        }
    }
}

TEST(Synthetic, DeterministicForSeed) {
    SyntheticSpec spec   = corridor_spec();
    spec.depth_noise_std = 0.05;
    const SyntheticScene a = make_synthetic_scene(spec, 9), b = make_synthetic_scene(spec, 9);
    for (std::size_t i = 0; i < a.frames.size(); ++i) {
        EXPECT_EQ(a.frames[i].image.data, b.frames[i].image.data);
        EXPECT_EQ(0, std::memcmp(a.frames[i].depth.data.data(), b.frames[i].depth.data.data(),
                                 a.frames[i].depth.data.size() * sizeof(float)));
    }
}

TEST(Synthetic, NoiseMagnitudeIsHalfNormal) {
    SyntheticSpec spec   = fixture::single_box_spec(3.0, 129, 129);
    spec.objects[0]      = SyntheticObject::box(Vec3(0, 0, 3), Vec3(6, 6, 0.5), Vec3::Constant(0.5));
    spec.depth_noise_std = 0.05;
    const SyntheticScene s = make_synthetic_scene(spec, 4);
    double sum             = 0.0;
    int n                  = 0;
    for (std::size_t p = 0; p < s.frames[0].depth.data.size(); ++p) {
        const double clean = s.clean_depth[0].data[p];
        if (!std::isfinite(clean)) continue;
        sum += std::abs(s.frames[0].depth.data[p] - clean);
        ++n;
    }
    ASSERT_GE(n, 10000);
    EXPECT_GE(sum / n, 0.03);
    EXPECT_LE(sum / n, 0.05);
}

TEST(Synthetic, CameraInsideGeometryIsRejected) {
    SyntheticSpec spec = fixture::single_box_spec(0.2);
    EXPECT_EQ(error_of([&] { make_synthetic_scene(spec, 0); }), "camera path intersects geometry");
}

TEST(SceneIo, WriteLoadRoundTrip) {
    fixture::TempDir dir;
    SyntheticSpec spec = fixture::two_box_spec(40, 30, 3);
    const SyntheticScene s = make_synthetic_scene(spec, 0);
    write_scene(dir / "scene.json", s.frames, spec.foreground_box, spec.voxel_size);
    const LoadedScene loaded = load_scene(dir / "scene.json");
    ASSERT_EQ(loaded.frames.size(), 3u);
    EXPECT_EQ(loaded.manifest.foreground_box.min, spec.foreground_box.min);
    EXPECT_EQ(loaded.manifest.voxel_size, spec.voxel_size);
    for (std::size_t i = 0; i < 3; ++i) {
        const PosedFrame &a = s.frames[i], &b = loaded.frames[i];
        EXPECT_EQ(a.pose.rotation, b.pose.rotation);
        EXPECT_EQ(a.pose.translation, b.pose.translation);
        EXPECT_EQ(a.camera.fx, b.camera.fx);
        for (std::size_t p = 0; p < a.depth.data.size(); ++p) {
            if (std::isnan(a.depth.data[p])) {
                EXPECT_TRUE(std::isnan(b.depth.data[p]));
            } else {
                EXPECT_EQ(a.depth.data[p], b.depth.data[p]);
            }
        }
        for (std::size_t p = 0; p < a.image.data.size(); ++p) {
            EXPECT_NEAR(a.image.data[p], b.image.data[p], 0.5 / 255.0 + 1e-12);
        }
    }
}

TEST(SceneIo, ManifestJsonRoundTrip) {
    SceneManifest m;
    m.voxel_size     = 0.25;
    m.foreground_box = {Vec3(-1, -2, -3), Vec3(4, 5, 6)};
    FrameEntry e;
    e.image_path = "a.ppm";
    e.depth_path = "a.depth";
    e.camera     = fixture::camera(10, 8, 9.0);
    e.camera_to_world.topRightCorner<3, 1>() = Vec3(0.1, 0.2, 0.3);
    m.frames     = {e, e};
    const SceneManifest r = manifest_from_json(manifest_to_json(m));
    EXPECT_EQ(manifest_to_json(r).dump(), manifest_to_json(m).dump());
    EXPECT_EQ(r.frames[1].camera_to_world, e.camera_to_world);
}

TEST(SceneIo, EmptySceneIsRejected) {
    fixture::TempDir dir;
    SceneManifest m;
    m.foreground_box = {Vec3::Zero(), Vec3::Ones()};
    save_manifest(dir / "m.json", m);
    EXPECT_EQ(error_of([&] { load_scene(dir / "m.json"); }), "empty scene");
}

TEST(SceneIo, ResolutionMismatchIsReported) {
    fixture::TempDir dir;
    SyntheticSpec spec = fixture::single_box_spec(5.0, 32, 32);
    const SyntheticScene s = make_synthetic_scene(spec, 0);
    write_scene(dir / "scene.json", s.frames, spec.foreground_box, spec.voxel_size);
    SceneManifest m          = read_manifest(dir / "scene.json");
    m.frames[0].camera       = fixture::camera(64, 64, 30.0);
    save_manifest(dir / "scene.json", m);
    const std::string msg = error_of([&] { load_scene(dir / "scene.json"); });
    EXPECT_EQ(msg.rfind("frame 0: resolution mismatch", 0), 0u) << msg;
}

TEST(SceneIo, MissingRasterIsReported) {
    fixture::TempDir dir;
    const SyntheticSpec spec = fixture::single_box_spec(5.0, 16, 16);
    const SyntheticScene s   = make_synthetic_scene(spec, 0);
    write_scene(dir / "scene.json", s.frames, spec.foreground_box, spec.voxel_size);
    std::filesystem::remove(dir / "frame_000.depth");
    const std::string msg = error_of([&] { load_scene(dir / "scene.json"); });
    EXPECT_EQ(msg.rfind("frame 0: missing file", 0), 0u) << msg;
}

TEST(SceneIo, NonOrthonormalRotationIsReported) {
    fixture::TempDir dir;
    const SyntheticSpec spec = fixture::single_box_spec(5.0, 16, 16);
    const SyntheticScene s   = make_synthetic_scene(spec, 0);
    write_scene(dir / "scene.json", s.frames, spec.foreground_box, spec.voxel_size);
    SceneManifest m = read_manifest(dir / "scene.json");
    m.frames[0].camera_to_world(0, 1) = 0.3;
    save_manifest(dir / "scene.json", m);
    const std::string msg = error_of([&] { load_scene(dir / "scene.json"); });
    EXPECT_EQ(msg, "frame 0: pose: rotation block is not orthonormal");
}

TEST(SceneIo, MalformedJsonIsRejected) {
    fixture::TempDir dir;
    std::ofstream(dir / "bad.json") << "{\"frames\": [], \"voxel_size\": }";
    EXPECT_THROW(read_manifest(dir / "bad.json"), Error);
    std::ofstream(dir / "nokey.json") << "{\"frames\": []}";
    EXPECT_THROW(read_manifest(dir / "nokey.json"), Error);
}

TEST(SceneIo, NonPositiveDepthBecomesInvalid) {
    fixture::TempDir dir;
    const SyntheticSpec spec = fixture::single_box_spec(5.0, 16, 16);
    SyntheticScene s         = make_synthetic_scene(spec, 0);
    s.frames[0].depth.at(8, 8) = -1.0f;
    s.frames[0].depth.at(7, 8) = 0.0f;
    write_scene(dir / "scene.json", s.frames, spec.foreground_box, spec.voxel_size);
    const LoadedScene l = load_scene(dir / "scene.json");
    EXPECT_FALSE(l.frames[0].depth.valid(8, 8));
    EXPECT_FALSE(l.frames[0].depth.valid(7, 8));
    EXPECT_TRUE(std::isnan(l.frames[0].depth.at(8, 8)));
}

TEST(Snapshot, EmptySetRoundTrips) {
    fixture::TempDir dir;
    save_snapshot(dir / "e.snap", GaussianSet{});
    EXPECT_EQ(load_snapshot(dir / "e.snap").size(), 0u);
}

TEST(Snapshot, RandomSetRoundTripsBitExact) {
    fixture::TempDir dir;
    std::mt19937_64 rng(5);
    const GaussianSet g = fixture::random_gaussians(rng, 1000);
    save_snapshot(dir / "g.snap", g);
    EXPECT_TRUE(load_snapshot(dir / "g.snap") == g);
}

TEST(Snapshot, CorruptedHeaderIsRejected) {
    fixture::TempDir dir;
    std::mt19937_64 rng(6);
    save_snapshot(dir / "g.snap", fixture::random_gaussians(rng, 3));
    {
        std::fstream f(dir / "g.snap", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        f.put(char(7)); // version byte
    }
    const std::string msg = error_of([&] { load_snapshot(dir / "g.snap"); });
    EXPECT_NE(msg.find("magic/version mismatch"), std::string::npos) << msg;
}

TEST(Snapshot, TruncatedFileIsRejected) {
    fixture::TempDir dir;
    std::mt19937_64 rng(7);
    save_snapshot(dir / "g.snap", fixture::random_gaussians(rng, 4));
    std::filesystem::resize_file(dir / "g.snap", std::filesystem::file_size(dir / "g.snap") - 5);
    const std::string msg = error_of([&] { load_snapshot(dir / "g.snap"); });
    EXPECT_EQ(msg.rfind("truncated file", 0), 0u) << msg;
}

TEST(Snapshot, NonFiniteFieldsAreRefused) {
    fixture::TempDir dir;
    std::mt19937_64 rng(8);
    GaussianSet g = fixture::random_gaussians(rng, 2);
    g.sh[1][4]    = std::numeric_limits<double>::infinity();
    EXPECT_THROW(save_snapshot(dir / "g.snap", g), Error);
}

TEST(RasterIo, ImageRoundTripQuantizes) {
    fixture::TempDir dir;
    Image img(5, 4, 3);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double &v : img.data) v = u(rng);
    io::write_image(dir / "i.ppm", img);
    const Image back = io::read_image(dir / "i.ppm");
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 255 + 1e-12);
}
