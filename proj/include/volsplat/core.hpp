// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Shared numeric types, the library error type, and dense rasters.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace volsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Row-major dynamic matrix; rows are sites/points, columns are channels.
using Mat  = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecX = Eigen::VectorXd;

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline void
require(bool condition, const std::string &message) {
    if (!condition) {
        throw Error(message);
    }
}

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Interleaved H x W x C raster of doubles, row-major.
struct Image {
    int width    = 0;
    int height   = 0;
    int channels = 3;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c = 3, double fill = 0.0)
        : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

    double &
    at(int x, int y, int c = 0) {
        return data[(std::size_t(y) * width + x) * channels + c];
    }
    double
    at(int x, int y, int c = 0) const {
        return data[(std::size_t(y) * width + x) * channels + c];
    }
    std::size_t
    pixel_count() const {
        return std::size_t(width) * height;
    }
    bool
    same_shape(const Image &o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// Metric depth raster. Invalid samples are NaN or <= 0.
struct DepthMap {
    int width  = 0;
    int height = 0;
    std::vector<float> data;

    DepthMap() = default;
    DepthMap(int w, int h, float fill = std::numeric_limits<float>::quiet_NaN())
        : width(w), height(h), data(std::size_t(w) * h, fill) {}

    float &
    at(int x, int y) {
        return data[std::size_t(y) * width + x];
    }
    float
    at(int x, int y) const {
        return data[std::size_t(y) * width + x];
    }
    bool
    valid(int x, int y) const {
        const float d = at(x, y);
        return std::isfinite(d) && d > 0.0f;
    }
};

inline bool
valid_depth(double d) {
    return std::isfinite(d) && d > 0.0;
}

/// Axis-aligned box in world meters.
struct Box3 {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    Vec3
    extent() const {
        return max - min;
    }
    Vec3
    center() const {
        return 0.5 * (min + max);
    }
    bool
    contains(const Vec3 &p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    double
    diagonal() const {
        return extent().norm();
    }
};

inline double
sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

inline double
logit(double p) {
    return std::log(p / (1.0 - p));
}

} // namespace volsplat
