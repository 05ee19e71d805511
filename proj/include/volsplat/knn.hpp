// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Exact k-nearest-neighbour queries accelerated by a uniform hash grid.
#pragma once

#include "volsplat/core.hpp"

#include <algorithm>
#include <span>
#include <unordered_map>

namespace volsplat {

struct CellKey {
    int x = 0, y = 0, z = 0;
    bool operator==(const CellKey &) const = default;
};

struct CellKeyHash {
    std::size_t
    operator()(const CellKey &k) const noexcept {
        std::uint64_t h = std::uint64_t(std::uint32_t(k.x)) * 73856093ULL;
        h ^= std::uint64_t(std::uint32_t(k.y)) * 19349663ULL;
        h ^= std::uint64_t(std::uint32_t(k.z)) * 83492791ULL;
        return std::size_t(h);
    }
};

class PointGrid {
  public:
    /// `points_per_cell` sets the cell edge from the bounding-box density.
    explicit PointGrid(std::span<const Vec3> points, double points_per_cell = 4.0)
        : points_(points) {
        require(!points.empty(), "PointGrid: empty point set");
        Vec3 lo = points[0], hi = points[0];
        for (const Vec3 &p : points) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        const Vec3 ext = (hi - lo).cwiseMax(1e-9);
        // occupied volume estimate that ignores flat axes
        double volume = 1.0;
        int dims      = 0;
        for (int a = 0; a < 3; ++a) {
            if (hi[a] - lo[a] > 1e-9) {
                volume *= ext[a];
                ++dims;
            }
        }
        if (dims == 0) {
            cell_ = 1.0;
        } else {
            cell_ = std::pow(volume * points_per_cell / double(points.size()), 1.0 / dims);
            cell_ = std::max(cell_, 1e-9);
        }
        origin_ = lo;
        for (std::size_t i = 0; i < points.size(); ++i) {
            cells_[key_of(points[i])].push_back(int(i));
        }
    }

    double
    cell_size() const {
        return cell_;
    }

    /// Sorted distances and indices of the k nearest points to `q`, skipping
    /// index `exclude` (pass -1 to keep all).
    void
    knn(const Vec3 &q, int k, int exclude, std::vector<double> &dist,
        std::vector<int> &index) const {
        dist.clear();
        index.clear();
        const int available = int(points_.size()) - (exclude >= 0 ? 1 : 0);
        k                   = std::min(k, available);
        if (k <= 0) {
            return;
        }
        std::vector<std::pair<double, int>> best; // max-heap by distance
        auto consider = [&](int j) {
            if (j == exclude) {
                return;
            }
            const double d = (points_[j] - q).norm();
            const std::pair<double, int> cand{d, j};
            if (int(best.size()) < k) {
                best.push_back(cand);
                std::push_heap(best.begin(), best.end());
            } else if (cand < best.front()) {
                std::pop_heap(best.begin(), best.end());
                best.back() = cand;
                std::push_heap(best.begin(), best.end());
            }
        };
        const CellKey c  = key_of(q);
        const long total = long(cells_.size());
        for (int r = 0;; ++r) {
            const long ring_cells = (2L * r + 1) * (2L * r + 1) * (2L * r + 1);
            if (ring_cells > 8 * total + 27) {
                // the ring cube would touch more cells than exist: finish by scan
                best.clear();
                for (int j = 0; j < int(points_.size()); ++j) {
                    consider(j);
                }
                break;
            }
            for (int dx = -r; dx <= r; ++dx) {
                for (int dy = -r; dy <= r; ++dy) {
                    for (int dz = -r; dz <= r; ++dz) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) {
                            continue;
                        }
                        auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
                        if (it == cells_.end()) {
                            continue;
                        }
                        for (int j : it->second) {
                            consider(j);
                        }
                    }
                }
            }
            // everything outside the visited cube is at least r cells away
            if (int(best.size()) == k && best.front().first <= double(r) * cell_) {
                break;
            }
        }
        std::sort(best.begin(), best.end());
        for (const auto &[d, j] : best) {
            dist.push_back(d);
            index.push_back(j);
        }
    }

  private:
    CellKey
    key_of(const Vec3 &p) const {
        const Vec3 g = (p - origin_) / cell_;
        return {int(std::floor(g.x())), int(std::floor(g.y())), int(std::floor(g.z()))};
    }

    std::span<const Vec3> points_;
    double cell_ = 1.0;
    Vec3 origin_ = Vec3::Zero();
    std::unordered_map<CellKey, std::vector<int>, CellKeyHash> cells_;
};

/// Mean distance from each point to its k nearest other points. Distances are
/// summed in ascending order so the result does not depend on tie order.
inline std::vector<double>
mean_knn_distance(std::span<const Vec3> points, int k) {
    std::vector<double> out(points.size(), 0.0);
    if (points.empty()) {
        return out;
    }
    PointGrid grid(points, std::max(4.0, double(k) * 0.5));
    std::vector<double> dist;
    std::vector<int> index;
    for (std::size_t i = 0; i < points.size(); ++i) {
        grid.knn(points[i], k, int(i), dist, index);
        double sum = 0.0;
        for (double d : dist) {
            sum += d;
        }
        out[i] = dist.empty() ? 0.0 : sum / double(dist.size());
    }
    return out;
}

} // namespace volsplat
