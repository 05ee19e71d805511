// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

using namespace volsplat;

namespace {

RigidPose
random_pose(std::mt19937_64 &rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    RigidPose p;
    p.rotation    = axis_angle(Vec3(g(rng), g(rng), g(rng)), g(rng));
    p.translation = Vec3(g(rng), g(rng), g(rng));
    return p;
}

} // namespace

TEST(Camera, PrincipalRayUnprojectsOntoAxis) {
    const Pinhole cam = fixture::camera(64, 48, 50.0);
    const Vec3 p      = unproject(Vec2(cam.cx, cam.cy), 3.5, cam, RigidPose{});
    EXPECT_NEAR((p - Vec3(0, 0, 3.5)).norm(), 0.0, 1e-15);
}

TEST(Camera, ConventionIsXRightYDownZForward) {
    const Pinhole cam = fixture::camera(64, 48, 50.0);
    const Projection right = project(Vec3(1, 0, 5), cam, RigidPose{});
    const Projection below = project(Vec3(0, 1, 5), cam, RigidPose{});
    EXPECT_GT(right.pixel.x(), cam.cx);
    EXPECT_GT(below.pixel.y(), cam.cy);
    EXPECT_DOUBLE_EQ(right.depth, 5.0);
}

TEST(Camera, ProjectUnprojectRoundTrip) {
    std::mt19937_64 rng(1);
    const Pinhole cam = fixture::camera(80, 60, 55.0);
    std::uniform_real_distribution<double> ux(-0.5, 79.5), uy(-0.5, 59.5), ud(0.1, 50.0);
    for (int i = 0; i < 1000; ++i) {
        const RigidPose pose = random_pose(rng);
        const Vec2 px(ux(rng), uy(rng));
        const double d = ud(rng);
        const Projection p = project(unproject(px, d, cam, pose), cam, pose);
        ASSERT_TRUE(p.in_front);
        EXPECT_NEAR((p.pixel - px).norm(), 0.0, 1e-5);
        EXPECT_NEAR(p.depth, d, 1e-5);
    }
}

TEST(Camera, TranslationShiftsUnprojection) {
    const Pinhole cam = fixture::camera(64, 48, 50.0);
    RigidPose moved;
    moved.translation = Vec3(1, 0, 0);
    const Vec3 a = unproject(Vec2(10.3, 20.7), 4.0, cam, RigidPose{});
    const Vec3 b = unproject(Vec2(10.3, 20.7), 4.0, cam, moved);
    EXPECT_EQ(b - a, Vec3(1, 0, 0));
}

TEST(Camera, ProjectionMatchesHomogeneousMatrix) {
    std::mt19937_64 rng(2);
    const Pinhole cam = fixture::camera(80, 60, 55.0);
    std::normal_distribution<double> g(0.0, 3.0);
    int checked = 0;
    for (int i = 0; i < 500; ++i) {
        const RigidPose pose = random_pose(rng);
        const Vec3 w(g(rng), g(rng), g(rng));
        Eigen::Matrix<double, 3, 4> p = cam.matrix() * pose.inverse().matrix().topRows<3>();
        const Vec3 h = p * w.homogeneous();
        if (h.z() <= 1e-3) continue;
        const Projection pr = project(w, cam, pose);
        EXPECT_NEAR((pr.pixel - h.hnormalized()).norm(), 0.0, 1e-6);
        EXPECT_NEAR(pr.depth, h.z(), 1e-9);
        ++checked;
    }
    EXPECT_GT(checked, 100);
}

TEST(Camera, BehindCameraIsFlagged) {
    const Pinhole cam = fixture::camera(64, 48, 50.0);
    EXPECT_FALSE(project(Vec3(0, 0, -1), cam, RigidPose{}).in_front);
    EXPECT_FALSE(project(Vec3(0, 0, 1e-7), cam, RigidPose{}).in_front);
}

TEST(Camera, UnprojectRejectsNonPositiveDepth) {
    const Pinhole cam = fixture::camera(64, 48, 50.0);
    EXPECT_THROW(unproject(Vec2(3, 3), 0.0, cam, RigidPose{}), Error);
    EXPECT_THROW(unproject(Vec2(3, 3), -2.0, cam, RigidPose{}), Error);
}

TEST(Camera, PinholeValidation) {
    Pinhole cam = fixture::camera(64, 48, 50.0);
    EXPECT_NO_THROW(cam.validate());
    cam.cx = 70;
    EXPECT_THROW(cam.validate(), Error);
    cam    = fixture::camera(64, 48, 50.0);
    cam.fx = 0;
    EXPECT_THROW(cam.validate(), Error);
}

TEST(Pose, InverseAndAssociativity) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        const RigidPose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
        const RigidPose id = a.inverse() * a;
        EXPECT_NEAR((id.rotation - Mat3::Identity()).norm(), 0.0, 1e-6);
        EXPECT_NEAR(id.translation.norm(), 0.0, 1e-6);
        const RigidPose l = (a * b) * c, r = a * (b * c);
        EXPECT_NEAR((l.rotation - r.rotation).norm(), 0.0, 1e-12);
        EXPECT_NEAR((l.translation - r.translation).norm(), 0.0, 1e-12);
        EXPECT_NEAR(a.rotation.determinant(), 1.0, 1e-5);
    }
}

TEST(Pose, RejectsNonOrthonormalRotation) {
    Mat4 m = Mat4::Identity();
    m(0, 0) = 1.1;
    EXPECT_THROW(RigidPose::from_matrix(m), Error);
    m       = Mat4::Identity();
    m(0, 0) = -1.0; // reflection
    EXPECT_THROW(RigidPose::from_matrix(m), Error);
}

TEST(Reproject, IdentityViewReturnsSourceDepth) {
    const Pinhole cam = fixture::camera(24, 20, 20.0);
    DepthMap d(24, 20);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(1.0, 9.0);
    for (float &v : d.data) v = float(u(rng));
    const auto r = reproject_depth(d, cam, RigidPose{}, cam, RigidPose{});
    for (int y = 0; y < 20; ++y) {
        for (int x = 0; x < 24; ++x) {
            const ReprojectedPixel &p = r[y * 24 + x];
            ASSERT_EQ(p.status, ReprojectStatus::ok);
            EXPECT_NEAR(p.depth, d.at(x, y), 1e-6);
            EXPECT_NEAR((p.target - Vec2(x, y)).norm(), 0.0, 1e-6);
        }
    }
}

TEST(Reproject, PlaneSeenFromShiftedCamera) {
    // fronto-parallel plane z = 10; camera j is 0.5 m to the right
    const Pinhole cam = fixture::camera(40, 30, 35.0);
    DepthMap d(40, 30, 10.0f);
    RigidPose j;
    j.translation = Vec3(0.5, 0, 0);
    const auto r  = reproject_depth(d, cam, RigidPose{}, cam, j);
    int ok        = 0;
    for (const ReprojectedPixel &p : r) {
        if (p.status != ReprojectStatus::ok) continue;
        EXPECT_NEAR(p.depth, 10.0, 1e-4);
        ++ok;
    }
    EXPECT_GT(ok, 1000);
}

TEST(Reproject, PointBehindTargetIsDropped) {
    const Pinhole cam = fixture::camera(8, 8, 10.0);
    DepthMap d(8, 8, 2.0f);
    RigidPose j;
    j.translation = Vec3(0, 0, 5); // in front of the surface, looking away from it
    const auto r  = reproject_depth(d, cam, RigidPose{}, cam, j);
    for (const ReprojectedPixel &p : r) EXPECT_EQ(p.status, ReprojectStatus::behind);
}

TEST(Reproject, InvalidDepthPropagates) {
    const Pinhole cam = fixture::camera(8, 8, 10.0);
    DepthMap d(8, 8, 2.0f);
    d.at(3, 3) = std::numeric_limits<float>::quiet_NaN();
    d.at(4, 3) = -1.0f;
    const auto r = reproject_depth(d, cam, RigidPose{}, cam, RigidPose{});
    EXPECT_EQ(r[3 * 8 + 3].status, ReprojectStatus::invalid_source);
    EXPECT_EQ(r[3 * 8 + 4].status, ReprojectStatus::invalid_source);
}

TEST(Sampling, BilinearInterpolatesAndClamps) {
    Image img(2, 2, 3);
    for (int c = 0; c < 3; ++c) {
        img.at(0, 0, c) = 0.0;
        img.at(1, 0, c) = 1.0;
        img.at(0, 1, c) = 2.0;
        img.at(1, 1, c) = 3.0;
    }
    EXPECT_NEAR(sample_rgb(img, 0.5, 0.5)[0], 1.5, 1e-15);
    EXPECT_NEAR(sample_rgb(img, 0.25, 0.0)[1], 0.25, 1e-15);
    EXPECT_NEAR(sample_rgb(img, -3.0, 5.0)[2], 2.0, 1e-15);
}
