// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// GaussianSet and its binary snapshot.
//
// Layout (little-endian): 8-byte magic "VSPLSNAP", u32 version, u64 count,
// then per primitive: mean f64[3], quaternion f64[4] (w, x, y, z),
// log_scale f64[3], opacity_logit f64, sh f64[12] (basis-major, RGB inner),
// flag u8 (0 foreground, 1 background).
#pragma once

#include "volsplat/raster_io.hpp"

#include <array>
#include <filesystem>

namespace volsplat {

inline constexpr int kShBasis  = 4;
inline constexpr int kShCoeffs = kShBasis * 3;
using ShCoeffs                 = std::array<double, kShCoeffs>;

/// Zero-order SH constant; DC coefficient c maps to color C0 * c + 0.5.
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

/// Logit used for primitives whose opacity is pinned to exactly 1.
inline constexpr double kOpaqueLogit = 40.0;

enum class GaussianFlag : std::uint8_t { foreground = 0, background = 1 };

struct GaussianSet {
    std::vector<Vec3> means;
    std::vector<Vec4> quats; // (w, x, y, z)
    std::vector<Vec3> log_scales;
    std::vector<double> opacity_logits;
    std::vector<ShCoeffs> sh;
    std::vector<GaussianFlag> flags;

    std::size_t
    size() const {
        return means.size();
    }

    void
    push_back(const Vec3 &mean, const Vec4 &quat, const Vec3 &log_scale, double opacity_logit,
              const ShCoeffs &coeffs, GaussianFlag flag) {
        means.push_back(mean);
        quats.push_back(quat);
        log_scales.push_back(log_scale);
        opacity_logits.push_back(opacity_logit);
        sh.push_back(coeffs);
        flags.push_back(flag);
    }

    void
    append(const GaussianSet &o) {
        means.insert(means.end(), o.means.begin(), o.means.end());
        quats.insert(quats.end(), o.quats.begin(), o.quats.end());
        log_scales.insert(log_scales.end(), o.log_scales.begin(), o.log_scales.end());
        opacity_logits.insert(opacity_logits.end(), o.opacity_logits.begin(),
                              o.opacity_logits.end());
        sh.insert(sh.end(), o.sh.begin(), o.sh.end());
        flags.insert(flags.end(), o.flags.begin(), o.flags.end());
    }

    /// Keeps the entries whose `keep` flag is set, preserving order.
    GaussianSet
    select(const std::vector<bool> &keep) const {
        GaussianSet out;
        for (std::size_t i = 0; i < size(); ++i) {
            if (keep[i]) {
                out.push_back(means[i], quats[i], log_scales[i], opacity_logits[i], sh[i],
                              flags[i]);
            }
        }
        return out;
    }

    std::size_t
    count(GaussianFlag flag) const {
        return std::size_t(std::count(flags.begin(), flags.end(), flag));
    }

    bool
    operator==(const GaussianSet &o) const = default;
};

inline constexpr char kSnapshotMagic[8] = {'V', 'S', 'P', 'L', 'S', 'N', 'A', 'P'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

inline void
save_snapshot(const std::filesystem::path &path, const GaussianSet &g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
        bool finite = g.means[i].allFinite() && g.quats[i].allFinite() &&
                      g.log_scales[i].allFinite() && std::isfinite(g.opacity_logits[i]);
        for (double c : g.sh[i]) {
            finite = finite && std::isfinite(c);
        }
        require(finite, "save_snapshot: primitive " + std::to_string(i) + " is not finite");
    }
    std::ofstream out = io::open_out(path);
    out.write(kSnapshotMagic, sizeof(kSnapshotMagic));
    io::write_le<std::uint32_t>(out, kSnapshotVersion);
    io::write_le<std::uint64_t>(out, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (int k = 0; k < 3; ++k) io::write_le(out, g.means[i][k]);
        for (int k = 0; k < 4; ++k) io::write_le(out, g.quats[i][k]);
        for (int k = 0; k < 3; ++k) io::write_le(out, g.log_scales[i][k]);
        io::write_le(out, g.opacity_logits[i]);
        for (double c : g.sh[i]) io::write_le(out, c);
        io::write_le<std::uint8_t>(out, std::uint8_t(g.flags[i]));
    }
    require(bool(out), "save_snapshot: write failed for " + path.string());
}

inline GaussianSet
load_snapshot(const std::filesystem::path &path) {
    std::ifstream in = io::open_in(path);
    char magic[8]    = {};
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic)) {
        throw Error("truncated file: snapshot header");
    }
    const auto version = io::read_le<std::uint32_t>(in, "snapshot version");
    if (!std::equal(std::begin(magic), std::end(magic), kSnapshotMagic) ||
        version != kSnapshotVersion) {
        throw Error("snapshot magic/version mismatch in " + path.string());
    }
    const auto count = io::read_le<std::uint64_t>(in, "snapshot count");
    constexpr std::uintmax_t kRecordBytes = (3 + 4 + 3 + 1 + kShCoeffs) * 8 + 1;
    const std::uintmax_t expected         = 8 + 4 + 8 + count * kRecordBytes;
    if (std::filesystem::file_size(path) != expected) {
        throw Error("truncated file: snapshot declares " + std::to_string(count) + " records");
    }
    GaussianSet g;
    for (std::uint64_t i = 0; i < count; ++i) {
        Vec3 mean, log_scale;
        Vec4 quat;
        ShCoeffs coeffs{};
        for (int k = 0; k < 3; ++k) mean[k] = io::read_le<double>(in, "mean");
        for (int k = 0; k < 4; ++k) quat[k] = io::read_le<double>(in, "quaternion");
        for (int k = 0; k < 3; ++k) log_scale[k] = io::read_le<double>(in, "scale");
        const double opacity = io::read_le<double>(in, "opacity");
        for (double &c : coeffs) c = io::read_le<double>(in, "sh");
        const auto flag = io::read_le<std::uint8_t>(in, "flag");
        require(flag <= 1, "snapshot: bad flag in record " + std::to_string(i));
        require(std::abs(quat.norm() - 1.0) <= 1e-4,
                "snapshot: quaternion of record " + std::to_string(i) + " is not unit length");
        g.push_back(mean, quat, log_scale, opacity, coeffs, GaussianFlag(flag));
    }
    return g;
}

} // namespace volsplat
