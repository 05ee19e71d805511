// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <numbers>

using namespace volsplat;

namespace {

/// Fully occupied 8^3 volume over [0, 0.8]^3 with random features.
FeatureVolume
random_volume(std::mt19937_64 &rng, int channels, double scale = 1.0) {
    FeatureVolume v;
    v.grid.origin = Vec3::Zero();
    v.grid.voxel  = 0.1;
    v.grid.dims   = {8, 8, 8};
    std::vector<Key3> keys;
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y)
            for (int z = 0; z < 8; ++z) keys.push_back({x, y, z});
    v.sites    = SiteSet(keys, v.grid.dims);
    v.features = Mat(v.sites.size(), channels);
    std::normal_distribution<double> n(0.0, scale);
    for (Eigen::Index i = 0; i < v.features.size(); ++i) v.features.data()[i] = n(rng);
    return v;
}

std::vector<Vec3>
interior_points(std::mt19937_64 &rng, int n) {
    std::uniform_real_distribution<double> u(0.15, 0.65);
    std::vector<Vec3> p(n);
    for (auto &x : p) x = Vec3(u(rng), u(rng), u(rng));
    return p;
}

void
scale_params(Mlp &m, double factor) {
    ParamList ps;
    m.collect(ps);
    for (Param *p : ps) p->value *= factor;
}

} // namespace

TEST(KnnScaleInit, CollinearPoints) {
    const std::vector<Vec3> p = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)};
    const auto s = knn_scale_init(p, 2);
    EXPECT_DOUBLE_EQ(s[1], 1.0);
    EXPECT_DOUBLE_EQ(s[0], 1.5);
}

TEST(KnnScaleInit, LatticeInteriorPoint) {
    const double h = 0.37;
    std::vector<Vec3> p;
    for (int x = 0; x < 5; ++x)
        for (int y = 0; y < 5; ++y)
            for (int z = 0; z < 5; ++z) p.emplace_back(h * x, h * y, h * z);
    const auto s = knn_scale_init(p, 6);
    const int center = (2 * 5 + 2) * 5 + 2;
    EXPECT_NEAR(s[center], h, 1e-12);
}

TEST(KnnScaleInit, MatchesAllPairsOracle) {
    std::mt19937_64 rng(7);
    const auto pts = fixture::random_points(rng, 5000, 10.0);
    const auto s   = knn_scale_init(pts, 3);
    for (int i = 0; i < int(pts.size()); ++i) {
        const auto nn = oracle::knn_all_pairs(pts, i, 3);
        const double ref = (nn[0].first + nn[1].first + nn[2].first) / 3.0;
        ASSERT_NEAR(s[i], std::max(ref, kMinScale), 1e-12) << i;
    }
}

TEST(KnnScaleInit, DuplicatesFloorAndSmallCloudThrows) {
    std::vector<Vec3> p(5, Vec3(1, 2, 3));
    for (double v : knn_scale_init(p, 3)) EXPECT_EQ(v, kMinScale);
    EXPECT_THROW(knn_scale_init(std::vector<Vec3>(3, Vec3::Zero()), 3), Error);
}

TEST(Covariance, IdentityRotationIsDiagonal) {
    const Mat3 s = build_covariance(Vec4(1, 0, 0, 0), Vec3(0.5, 2.0, 3.0));
    EXPECT_LT((s - Vec3(0.25, 4.0, 9.0).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Covariance, QuarterTurnAboutZSwapsAxes) {
    const double h = std::sqrt(0.5);
    const Mat3 s   = build_covariance(Vec4(h, 0, 0, h), Vec3(0.5, 2.0, 3.0));
    EXPECT_LT((s - Vec3(4.0, 0.25, 9.0).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Covariance, EigenvaluesAreSquaredScales) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> u(0.01, 3.0);
    for (int t = 0; t < 200; ++t) {
        const Vec4 q(n(rng), n(rng), n(rng), n(rng));
        Vec3 s(u(rng), u(rng), u(rng));
        const Mat3 cov = build_covariance(q, s);
        EXPECT_LT((cov - cov.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        Vec3 sq = s.cwiseAbs2();
        std::sort(sq.data(), sq.data() + 3);
        EXPECT_LT((eig.eigenvalues() - sq).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_EQ(Eigen::LLT<Mat3>(cov).info(), Eigen::Success);
        // rotation is orthonormal with det +1 regardless of the raw norm
        const Mat3 r = quat_to_rotation(q);
        EXPECT_LT((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
    }
}

TEST(QuatBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0, 1);
    for (int t = 0; t < 20; ++t) {
        Vec4 q(n(rng), n(rng), n(rng), n(rng));
        Mat3 g;
        for (int i = 0; i < 9; ++i) g.data()[i] = n(rng);
        const Vec4 analytic = quat_to_rotation_backward(q, g);
        for (int k = 0; k < 4; ++k) {
            const double num = oracle::central_difference(
                [&] { return quat_to_rotation(q).cwiseProduct(g).sum(); }, q.data() + k, 1e-6);
            EXPECT_TRUE(oracle::gradient_close(analytic[k], num, 1e-5, 1e-8)) << analytic[k] << " " << num;
        }
    }
}

TEST(DecodeOffsets, ZeroPositionHeadLeavesPointsInPlace) {
    std::mt19937_64 rng(1);
    const FeatureVolume v = random_volume(rng, 4);
    GeometryHeads heads(4, HeadConfig{});
    heads.init(rng); // the position head starts with a zero output layer
    const auto mu0 = interior_points(rng, 50);
    std::vector<Vec3> state(mu0.size(), Vec3::Zero());
    const auto mu = decode_offsets(v, heads, mu0, state, 2, 0.1);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        EXPECT_EQ(mu[i], mu0[i]);
        EXPECT_EQ(state[i], Vec3::Zero());
    }
}

TEST(DecodeOffsets, StrictlyWithinVoxelForAnyParameters) {
    std::mt19937_64 rng(2);
    const FeatureVolume v = random_volume(rng, 4, 5.0);
    const auto mu0        = interior_points(rng, 300);
    for (double gain : {1.0, 30.0, 1e4}) {
        GeometryHeads heads(4, HeadConfig{});
        heads.init(rng);
        std::normal_distribution<double> n(0, 1);
        heads.position.output_layer().weight.value = Mat::NullaryExpr(
            heads.position.output_layer().weight.value.rows(), 3, [&] { return n(rng); });
        scale_params(heads.position, gain);
        std::vector<Vec3> state(mu0.size(), Vec3::Zero());
        const auto mu = decode_offsets(v, heads, mu0, state, 3, 0.1);
        double worst  = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) worst = std::max(worst, (mu[i] - mu0[i]).cwiseAbs().maxCoeff());
        EXPECT_LT(worst, 0.1) << "gain " << gain;
        if (gain > 1e3) {
            EXPECT_GT(worst, 0.0999);
        }
    }
}

TEST(DecodeOffsets, EachPassQueriesAtPreviousOffset) {
    std::mt19937_64 rng(3);
    const FeatureVolume v = random_volume(rng, 4);
    GeometryHeads heads(4, HeadConfig{});
    heads.init(rng);
    scale_params(heads.position, 3.0);
    heads.position.output_layer().weight.value.setRandom();
    const auto mu0 = interior_points(rng, 20);
    std::vector<Vec3> state(mu0.size(), Vec3::Zero());
    decode_offsets(v, heads, mu0, state, 3, 0.1);
    // replay the recursion by hand
    std::vector<Vec3> off(mu0.size(), Vec3::Zero());
    for (int r = 0; r < 3; ++r) {
        for (std::size_t i = 0; i < mu0.size(); ++i) {
            Mat f(1, 4);
            f.row(0)    = v.query(mu0[i] + off[i]);
            const Mat y = heads.position.forward(f);
            for (int a = 0; a < 3; ++a) off[i][a] = 0.1 * std::tanh(y(0, a));
        }
    }
    for (std::size_t i = 0; i < mu0.size(); ++i) EXPECT_LT((state[i] - off[i]).norm(), 1e-10);
}

TEST(DecodeGeometry, ZeroWeightHeads) {
    std::mt19937_64 rng(4);
    const FeatureVolume v = random_volume(rng, 4);
    GeometryHeads heads(4, HeadConfig{});
    heads.init(rng);
    heads.opacity.output_layer().weight.value.setZero();
    heads.covariance.output_layer().weight.value.setZero();
    const auto mu0 = interior_points(rng, 30);
    std::vector<double> s_init(mu0.size());
    for (std::size_t i = 0; i < s_init.size(); ++i) s_init[i] = 0.01 + 0.001 * i;
    std::vector<Vec3> state(mu0.size(), Vec3::Zero());
    const DecodedGeometry g = decode_geometry(v, heads, mu0, s_init, state, 2, 0.1);
    for (std::size_t i = 0; i < mu0.size(); ++i) {
        EXPECT_EQ(sigmoid(g.opacity_logits[i]), 0.5);
        EXPECT_EQ(g.quats_raw[i], Vec4(1, 0, 0, 0));
        EXPECT_EQ(g.scales[i], Vec3::Constant(s_init[i]));
        EXPECT_FALSE(g.scale_floored[i]);
    }
}

TEST(DecodeGeometry, RangesAndPurity) {
    std::mt19937_64 rng(5);
    const FeatureVolume v = random_volume(rng, 4);
    GeometryHeads heads(4, HeadConfig{});
    heads.init(rng);
    heads.position.output_layer().weight.value.setRandom();
    const auto mu0 = interior_points(rng, 100);
    const std::vector<double> s_init(mu0.size(), 0.02);
    std::vector<Vec3> st0(mu0.size(), Vec3::Zero()), st1 = st0;
    const DecodedGeometry a = decode_geometry(v, heads, mu0, s_init, st0, 2, 0.1);
    const DecodedGeometry b = decode_geometry(v, heads, mu0, s_init, st1, 2, 0.1);
    for (std::size_t i = 0; i < mu0.size(); ++i) {
        const double alpha = sigmoid(a.opacity_logits[i]);
        EXPECT_GT(alpha, 0.0);
        EXPECT_LT(alpha, 1.0);
        EXPECT_NEAR(a.quats_raw[i].normalized().norm(), 1.0, 1e-6);
        EXPECT_GT(a.scales[i].minCoeff(), 0.0);
        EXPECT_LE(a.scales[i].maxCoeff(), 2.0 * s_init[i]);
        EXPECT_EQ(Eigen::LLT<Mat3>(build_covariance(a.quats_raw[i], a.scales[i])).info(), Eigen::Success);
        EXPECT_EQ(a.means[i], b.means[i]);
        EXPECT_EQ(a.opacity_logits[i], b.opacity_logits[i]);
        EXPECT_EQ(st0[i], a.offsets[i]);
    }
}

TEST(DecodeGeometry, ScaleFloor) {
    std::mt19937_64 rng(6);
    const FeatureVolume v = random_volume(rng, 4);
    GeometryHeads heads(4, HeadConfig{});
    heads.init(rng);
    heads.covariance.output_layer().weight.value.setZero();
    heads.covariance.output_layer().bias.value(0, 0) = -40.0; // tanh -> -1
    const auto mu0 = interior_points(rng, 10);
    const std::vector<double> s_init(mu0.size(), 0.02);
    std::vector<Vec3> st(mu0.size(), Vec3::Zero());
    const DecodedGeometry g = decode_geometry(v, heads, mu0, s_init, st, 1, 0.1);
    for (std::size_t i = 0; i < mu0.size(); ++i) {
        EXPECT_EQ(g.scales[i].x(), kMinScale);
        EXPECT_TRUE(g.scale_floored[i]);
    }
}

TEST(DecodeGeometry, HeadGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(10);
    FeatureVolume v = random_volume(rng, 4);
    GeometryHeads heads(4, HeadConfig{16, 2});
    heads.init(rng);
    std::normal_distribution<double> n(0, 1);
    heads.position.output_layer().weight.value = Mat::NullaryExpr(
        heads.position.output_layer().weight.value.rows(), 3, [&] { return 0.3 * n(rng); });
    const auto mu0 = interior_points(rng, 12);
    std::vector<double> s_init(mu0.size());
    for (auto &s : s_init) s = 0.02 + 0.01 * std::abs(n(rng));
    std::vector<Vec3> prev(mu0.size());
    for (auto &p : prev) p = 0.03 * Vec3(n(rng), n(rng), n(rng));

    Mat wm(mu0.size(), 3), wo(mu0.size(), 1), wq(mu0.size(), 4), ws(mu0.size(), 3);
    for (Mat *m : {&wm, &wo, &wq, &ws})
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);

    auto loss = [&] {
        std::vector<Vec3> st = prev;
        const DecodedGeometry g = decode_geometry(v, heads, mu0, s_init, st, 1, 0.1);
        double l = 0.0;
        for (std::size_t i = 0; i < mu0.size(); ++i) {
            l += wm.row(i).dot(g.means[i].transpose()) + wo(i, 0) * g.opacity_logits[i];
            l += wq.row(i).dot(g.quats_raw[i].transpose());
            for (int a = 0; a < 3; ++a) l += ws(i, a) * std::log(g.scales[i][a]);
        }
        return l;
    };

    std::vector<Vec3> st = prev;
    GeometryCache cache;
    const DecodedGeometry g = decode_geometry(v, heads, mu0, s_init, st, 1, 0.1, &cache);
    ParamList params;
    heads.collect(params);
    zero_grads(params);
    const GeometryGrads gg{wm, wo, wq, ws};
    const Mat g_f = decode_geometry_backward(heads, cache, s_init, g, gg, 0.1);
    Mat g_vol     = Mat::Zero(v.features.rows(), v.features.cols());
    scatter_feature_grads(cache.stencils, g_f, g_vol);

    int failed = 0;
    for (Param *p : params) {
        for (Eigen::Index k = 0; k < p->value.size(); k += std::max<Eigen::Index>(1, p->value.size() / 7)) {
            const double num = oracle::central_difference(loss, p->value.data() + k, 1e-6);
            if (!oracle::gradient_close(p->grad.data()[k], num, 1e-4, 1e-7)) {
                ++failed;
                ADD_FAILURE() << p->name << "[" << k << "] " << p->grad.data()[k] << " vs " << num;
            }
        }
    }
    for (int t = 0; t < 40; ++t) {
        const int s = cache.stencils[t % mu0.size()].site[t % 8];
        const int c = t % 4;
        const double num = oracle::central_difference(loss, &v.features(s, c), 1e-6);
        if (!oracle::gradient_close(g_vol(s, c), num, 1e-4, 1e-7)) {
            ++failed;
            ADD_FAILURE() << "feature " << s << "," << c << " " << g_vol(s, c) << " vs " << num;
        }
    }
    EXPECT_EQ(failed, 0);
}
