// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Global point cloud construction from posed RGB-D frames: cross-view depth
// consistency masks, statistical outlier removal, union of unprojected
// pixels, and centroid voxel downsampling.
#pragma once

#include "volsplat/camera.hpp"
#include "volsplat/knn.hpp"
#include "volsplat/scene_io.hpp"

#include <map>
#include <numeric>

namespace volsplat {

struct FusedCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;
    std::vector<int> source_frame;

    std::size_t
    size() const {
        return positions.size();
    }
    void
    push_back(const Vec3 &p, const Vec3 &c, int frame) {
        positions.push_back(p);
        colors.push_back(c);
        source_frame.push_back(frame);
    }
    void
    append(const FusedCloud &o) {
        positions.insert(positions.end(), o.positions.begin(), o.positions.end());
        colors.insert(colors.end(), o.colors.begin(), o.colors.end());
        source_frame.insert(source_frame.end(), o.source_frame.begin(), o.source_frame.end());
    }
    FusedCloud
    select(const std::vector<bool> &keep) const {
        FusedCloud out;
        for (std::size_t i = 0; i < size(); ++i) {
            if (keep[i]) {
                out.push_back(positions[i], colors[i], source_frame[i]);
            }
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Depth consistency

enum class ConsistencyVerdict : std::uint8_t { invalid, keep, reject, unchecked };

/// Compares frame i's depth, reprojected into neighbour j, with j's stored
/// depth: keep iff |D_{i->j} - D_j| < sigma. Pixels that leave j's frustum are
/// `unchecked`.
inline std::vector<ConsistencyVerdict>
consistency_verdicts(const PosedFrame &frame_i, const PosedFrame &frame_j, double sigma) {
    require(sigma > 0.0, "consistency: sigma must be positive");
    const auto reproj = reproject_depth(frame_i.depth, frame_i.camera, frame_i.pose,
                                        frame_j.camera, frame_j.pose);
    std::vector<ConsistencyVerdict> out(reproj.size(), ConsistencyVerdict::invalid);
    for (std::size_t p = 0; p < reproj.size(); ++p) {
        const ReprojectedPixel &r = reproj[p];
        switch (r.status) {
        case ReprojectStatus::invalid_source: break;
        case ReprojectStatus::behind:
        case ReprojectStatus::outside: out[p] = ConsistencyVerdict::unchecked; break;
        case ReprojectStatus::ok: {
            const double stored = sample_depth(frame_j.depth, r.target.x(), r.target.y());
            out[p] = std::abs(r.depth - stored) < sigma ? ConsistencyVerdict::keep
                                                        : ConsistencyVerdict::reject;
            break;
        }
        }
    }
    return out;
}

/// Single-neighbour boolean mask: valid pixels that are consistent or leave
/// the neighbour's frustum.
inline std::vector<bool>
consistency_mask(const PosedFrame &frame_i, const PosedFrame &frame_j, double sigma = 0.2) {
    const auto verdicts = consistency_verdicts(frame_i, frame_j, sigma);
    std::vector<bool> mask(verdicts.size());
    for (std::size_t p = 0; p < verdicts.size(); ++p) {
        mask[p] = verdicts[p] == ConsistencyVerdict::keep ||
                  verdicts[p] == ConsistencyVerdict::unchecked;
    }
    return mask;
}

/// Other frames ordered by camera-centre distance to frame i (ties by index),
/// skipping frames with an identical pose.
inline std::vector<int>
neighbor_order(const std::vector<PosedFrame> &frames, int i) {
    std::vector<int> order;
    for (int j = 0; j < int(frames.size()); ++j) {
        if (j == i) {
            continue;
        }
        const bool same = (frames[j].pose.translation - frames[i].pose.translation).norm() < 1e-9 &&
                          (frames[j].pose.rotation - frames[i].pose.rotation).norm() < 1e-9;
        if (!same) {
            order.push_back(j);
        }
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return (frames[a].pose.translation - frames[i].pose.translation).norm() <
               (frames[b].pose.translation - frames[i].pose.translation).norm();
    });
    return order;
}

/// Mask for frame i checked against its nearest neighbour; pixels falling
/// outside that neighbour are re-checked against the next ones and kept if no
/// neighbour sees them.
inline std::vector<bool>
consistency_mask(const std::vector<PosedFrame> &frames, int i, double sigma = 0.2) {
    const PosedFrame &f = frames[i];
    std::vector<ConsistencyVerdict> verdict(f.depth.data.size(), ConsistencyVerdict::unchecked);
    for (std::size_t p = 0; p < verdict.size(); ++p) {
        if (!valid_depth(f.depth.data[p])) {
            verdict[p] = ConsistencyVerdict::invalid;
        }
    }
    for (int j : neighbor_order(frames, i)) {
        const auto vj = consistency_verdicts(f, frames[j], sigma);
        bool pending  = false;
        for (std::size_t p = 0; p < verdict.size(); ++p) {
            if (verdict[p] == ConsistencyVerdict::unchecked) {
                verdict[p] = vj[p];
                pending    = pending || vj[p] == ConsistencyVerdict::unchecked;
            }
        }
        if (!pending) {
            break;
        }
    }
    std::vector<bool> mask(verdict.size());
    for (std::size_t p = 0; p < verdict.size(); ++p) {
        mask[p] = verdict[p] == ConsistencyVerdict::keep ||
                  verdict[p] == ConsistencyVerdict::unchecked;
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Statistical outlier removal

/// Keeps points whose mean distance to their k nearest neighbours is at most
/// mean + std_ratio * std of that statistic over the cloud (sample std).
inline std::vector<bool>
statistical_inliers(std::span<const Vec3> points, int k_neighbors = 20, double std_ratio = 2.0) {
    require(int(points.size()) > k_neighbors,
            "statistical filter: cloud must have more than k_neighbors points");
    const std::vector<double> mean_dist = mean_knn_distance(points, k_neighbors);
    const double n    = double(points.size());
    const double mean = std::accumulate(mean_dist.begin(), mean_dist.end(), 0.0) / n;
    double sq         = 0.0;
    for (double d : mean_dist) {
        sq += (d - mean) * (d - mean);
    }
    const double stddev    = std::sqrt(sq / (n - 1.0));
    const double threshold = mean + std_ratio * stddev;
    std::vector<bool> keep(points.size(), true);
    if (stddev == 0.0) {
        return keep;
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        keep[i] = mean_dist[i] <= threshold;
    }
    return keep;
}

inline FusedCloud
statistical_outlier_filter(const FusedCloud &cloud, int k_neighbors = 20, double std_ratio = 2.0) {
    return cloud.select(statistical_inliers(cloud.positions, k_neighbors, std_ratio));
}

// ---------------------------------------------------------------------------
// Fusion

struct FusionResult {
    FusedCloud cloud;                      // inside the foreground box
    std::vector<Vec3> background_candidates; // valid points outside it
};

/// Appends the unprojected masked pixels of one frame.
inline void
fuse_frame(const PosedFrame &f, const std::vector<bool> &mask, const Box3 &foreground_box,
           int frame_index, FusionResult &out) {
    for (int y = 0; y < f.depth.height; ++y) {
        for (int x = 0; x < f.depth.width; ++x) {
            const std::size_t p = std::size_t(y) * f.depth.width + x;
            if (!mask[p] || !f.depth.valid(x, y)) {
                continue;
            }
            const Vec3 w = unproject(Vec2(x, y), f.depth.at(x, y), f.camera, f.pose);
            if (foreground_box.contains(w)) {
                out.cloud.push_back(
                    w, Vec3(f.image.at(x, y, 0), f.image.at(x, y, 1), f.image.at(x, y, 2)),
                    frame_index);
            } else {
                out.background_candidates.push_back(w);
            }
        }
    }
}

/// Union of the unprojected masked pixels of every frame, in frame order.
inline FusionResult
fuse(const std::vector<PosedFrame> &frames, const std::vector<std::vector<bool>> &masks,
     const Box3 &foreground_box) {
    require(!frames.empty(), "fuse: no frames");
    require(masks.size() == frames.size(), "fuse: one mask per frame required");
    FusionResult out;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        fuse_frame(frames[i], masks[i], foreground_box, int(i), out);
    }
    if (out.cloud.size() == 0) {
        throw Error("no valid geometry after masking");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Voxel downsampling

struct VoxelKey {
    std::int64_t x = 0, y = 0, z = 0;
    auto operator<=>(const VoxelKey &) const = default;
};

inline VoxelKey
voxel_key(const Vec3 &p, double voxel, const Vec3 &origin = Vec3::Zero()) {
    const Vec3 g = (p - origin) / voxel;
    return {std::int64_t(std::floor(g.x())), std::int64_t(std::floor(g.y())),
            std::int64_t(std::floor(g.z()))};
}

/// One centroid per occupied voxel (colors averaged), ordered by voxel key.
/// The representative's source frame is the smallest member frame index.
inline FusedCloud
uniform_voxel_downsample(const FusedCloud &cloud, double voxel = 0.1,
                         const Vec3 &origin = Vec3::Zero()) {
    require(voxel > 0.0, "downsample: voxel must be positive");
    struct Acc {
        Vec3 pos   = Vec3::Zero();
        Vec3 color = Vec3::Zero();
        int count  = 0;
        int frame  = std::numeric_limits<int>::max();
    };
    std::map<VoxelKey, Acc> cells;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        Acc &a = cells[voxel_key(cloud.positions[i], voxel, origin)];
        a.pos += cloud.positions[i];
        a.color += cloud.colors[i];
        a.count += 1;
        a.frame = std::min(a.frame, cloud.source_frame[i]);
    }
    FusedCloud out;
    for (const auto &[key, a] : cells) {
        out.push_back(a.pos / double(a.count), a.color / double(a.count), a.frame);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full initialization pipeline

struct FusionOptions {
    double consistency_sigma = 0.2;
    int outlier_neighbors    = 20;
    double outlier_std_ratio = 2.0;
    double voxel_size        = 0.1;
};

/// Masks -> per-frame statistical filter -> union -> voxel downsample ->
/// statistical filter on the union.
inline FusionResult
build_point_cloud(const std::vector<PosedFrame> &frames, const Box3 &box,
                  const FusionOptions &opt) {
    std::vector<std::vector<bool>> masks(frames.size());
    for (int i = 0; i < int(frames.size()); ++i) {
        masks[i] = frames.size() > 1 ? consistency_mask(frames, i, opt.consistency_sigma)
                                     : std::vector<bool>(frames[i].depth.data.size(), true);
    }
    FusionResult result;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        FusionResult part;
        fuse_frame(frames[i], masks[i], box, int(i), part);
        if (int(part.cloud.size()) > opt.outlier_neighbors) {
            part.cloud = statistical_outlier_filter(part.cloud, opt.outlier_neighbors,
                                                    opt.outlier_std_ratio);
        }
        result.cloud.append(part.cloud);
        result.background_candidates.insert(result.background_candidates.end(),
                                            part.background_candidates.begin(),
                                            part.background_candidates.end());
    }
    if (result.cloud.size() == 0) {
        throw Error("no valid geometry after masking");
    }
    result.cloud = uniform_voxel_downsample(result.cloud, opt.voxel_size, box.min);
    if (int(result.cloud.size()) > opt.outlier_neighbors) {
        result.cloud = statistical_outlier_filter(result.cloud, opt.outlier_neighbors,
                                                  opt.outlier_std_ratio);
    }
    return result;
}

} // namespace volsplat
