// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Sparse voxel tensors, a U-Net of sparse 3x3x3 convolutions with hash-map
// kernel maps, and trilinear queries into the resulting feature volume.
//
// Site semantics per layer kind (o, x are integer voxel keys, d in {-1,0,1}^3):
//   conv_s1    out[x] = sum_d W_d^T in[x + d]; output sites = input sites
//              dilated by one voxel, clipped to the grid.
//   conv_s2    out[o] = sum_d W_d^T in[2o + d]; output sites = every coarse
//              o reached by an input site.
//   deconv_s2  out[x] = sum_{2o + d = x} W_d^T in[o]; output sites are the
//              encoder sites of the finer level (a subset of the reachable
//              ones), which keeps the decoder from growing the support.
// Each conv is followed by batch normalization and ReLU. Decoder levels join
// the matching encoder level by concatenation and a 1x1x1 linear mix.
#pragma once

#include "volsplat/depth_fusion.hpp"
#include "volsplat/nn.hpp"

#include <array>
#include <memory>

namespace volsplat {

using Key3 = std::array<int, 3>;

struct Key3Hash {
    std::size_t
    operator()(const Key3 &k) const noexcept {
        return CellKeyHash{}(CellKey{k[0], k[1], k[2]});
    }
};

struct GridSpec {
    Vec3 origin = Vec3::Zero(); // min corner of voxel (0, 0, 0)
    double voxel = 0.1;
    Key3 dims    = {0, 0, 0};

    Vec3
    center_of(const Key3 &k) const {
        return origin + voxel * Vec3(k[0] + 0.5, k[1] + 0.5, k[2] + 0.5);
    }
};

/// Grid resolution for a box: extent / voxel rounded to the nearest integer,
/// then up to a multiple of 8 so three stride-2 levels divide evenly.
inline Key3
grid_dims(const Box3 &box, double voxel) {
    require(voxel > 0.0, "grid_dims: voxel must be positive");
    Key3 dims{};
    for (int a = 0; a < 3; ++a) {
        const long n = std::lround(box.extent()[a] / voxel);
        require(n > 0, "grid_dims: box thinner than one voxel");
        dims[a] = int((n + 7) / 8 * 8);
    }
    return dims;
}

inline GridSpec
make_grid(const Box3 &box, double voxel) {
    return {box.min, voxel, grid_dims(box, voxel)};
}

/// Unique voxel keys in lexicographic order with an index lookup.
class SiteSet {
  public:
    SiteSet() = default;
    SiteSet(std::vector<Key3> keys, Key3 dims) : dims_(dims) {
        std::erase_if(keys, [&](const Key3 &k) { return !in_bounds(k); });
        std::sort(keys.begin(), keys.end());
        keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
        keys_ = std::move(keys);
        index_.reserve(keys_.size() * 2);
        for (int i = 0; i < int(keys_.size()); ++i) {
            index_.emplace(keys_[i], i);
        }
    }

    int
    find(const Key3 &k) const {
        auto it = index_.find(k);
        return it == index_.end() ? -1 : it->second;
    }
    bool
    in_bounds(const Key3 &k) const {
        return k[0] >= 0 && k[1] >= 0 && k[2] >= 0 && k[0] < dims_[0] && k[1] < dims_[1] &&
               k[2] < dims_[2];
    }
    const std::vector<Key3> &
    keys() const {
        return keys_;
    }
    const Key3 &
    dims() const {
        return dims_;
    }
    int
    size() const {
        return int(keys_.size());
    }

  private:
    Key3 dims_ = {0, 0, 0};
    std::vector<Key3> keys_;
    std::unordered_map<Key3, int, Key3Hash> index_;
};

struct SparseVoxelTensor {
    GridSpec grid;
    SiteSet sites;
    Mat features; // sites x 3, mean RGB of member points
};

inline Key3
grid_key(const GridSpec &grid, const Vec3 &p) {
    const Vec3 g = (p - grid.origin) / grid.voxel;
    return {int(std::floor(g.x())), int(std::floor(g.y())), int(std::floor(g.z()))};
}

inline SparseVoxelTensor
quantize(const FusedCloud &cloud, const Box3 &box, double voxel) {
    SparseVoxelTensor t;
    t.grid = make_grid(box, voxel);
    std::vector<Key3> keys;
    std::vector<int> member_key_of(cloud.size(), -1);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (box.contains(cloud.positions[i])) {
            keys.push_back(grid_key(t.grid, cloud.positions[i]));
        }
    }
    t.sites = SiteSet(keys, t.grid.dims);
    require(t.sites.size() > 0, "quantize: cloud does not intersect the box");
    t.features = Mat::Zero(t.sites.size(), 3);
    std::vector<int> counts(t.sites.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (!box.contains(cloud.positions[i])) {
            continue;
        }
        const int s = t.sites.find(grid_key(t.grid, cloud.positions[i]));
        if (s < 0) {
            continue; // on the far box face beyond the last voxel
        }
        t.features.row(s) += cloud.colors[i].transpose();
        counts[s] += 1;
    }
    for (int s = 0; s < t.sites.size(); ++s) {
        if (counts[s] > 0) {
            t.features.row(s) /= double(counts[s]);
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Kernel maps

inline constexpr int kKernelVolume = 27;

inline Key3
kernel_offset(int o) {
    return {o / 9 - 1, (o / 3) % 3 - 1, o % 3 - 1};
}

enum class ConvKind { conv_s1, conv_s2, deconv_s2 };

/// Input/output row pairs grouped by kernel offset.
struct KernelMap {
    std::array<std::vector<int>, kKernelVolume> in;
    std::array<std::vector<int>, kKernelVolume> out;
};

inline Key3
coarse_dims(const Key3 &d) {
    return {d[0] / 2, d[1] / 2, d[2] / 2};
}

/// Output sites implied by a conv layer applied to `input`.
inline SiteSet
conv_output_sites(ConvKind kind, const SiteSet &input) {
    std::vector<Key3> keys;
    if (kind == ConvKind::conv_s1) {
        for (const Key3 &s : input.keys()) {
            for (int o = 0; o < kKernelVolume; ++o) {
                const Key3 d = kernel_offset(o);
                keys.push_back({s[0] - d[0], s[1] - d[1], s[2] - d[2]});
            }
        }
        return SiteSet(std::move(keys), input.dims());
    }
    require(kind == ConvKind::conv_s2, "conv_output_sites: deconv sites come from the encoder");
    for (const Key3 &s : input.keys()) {
        for (int o = 0; o < kKernelVolume; ++o) {
            const Key3 d = kernel_offset(o);
            const Key3 e = {s[0] - d[0], s[1] - d[1], s[2] - d[2]};
            if ((e[0] & 1) == 0 && (e[1] & 1) == 0 && (e[2] & 1) == 0) {
                keys.push_back({e[0] / 2, e[1] / 2, e[2] / 2});
            }
        }
    }
    return SiteSet(std::move(keys), coarse_dims(input.dims()));
}

inline KernelMap
build_kernel_map(ConvKind kind, const SiteSet &input, const SiteSet &output) {
    KernelMap map;
    for (int i = 0; i < input.size(); ++i) {
        const Key3 &s = input.keys()[i];
        for (int o = 0; o < kKernelVolume; ++o) {
            const Key3 d = kernel_offset(o);
            Key3 target;
            if (kind == ConvKind::conv_s1) {
                target = {s[0] - d[0], s[1] - d[1], s[2] - d[2]};
            } else if (kind == ConvKind::conv_s2) {
                const Key3 e = {s[0] - d[0], s[1] - d[1], s[2] - d[2]};
                if ((e[0] & 1) || (e[1] & 1) || (e[2] & 1)) {
                    continue;
                }
                target = {e[0] / 2, e[1] / 2, e[2] / 2};
            } else {
                target = {2 * s[0] + d[0], 2 * s[1] + d[1], 2 * s[2] + d[2]};
            }
            const int t = output.find(target);
            if (t >= 0) {
                map.in[o].push_back(i);
                map.out[o].push_back(t);
            }
        }
    }
    return map;
}

// ---------------------------------------------------------------------------
// Layers

enum class NormMode { batch, running };

/// Sparse conv + batch norm + ReLU.
class ConvBlock {
  public:
    struct Cache {
        std::shared_ptr<const KernelMap> map;
        Mat input;
        Mat xhat;
        Eigen::RowVectorXd inv_std;
        Mat output; // post-ReLU
        NormMode mode = NormMode::batch;
    };

    ConvBlock() = default;
    ConvBlock(const std::string &name, ConvKind kind, int cin, int cout)
        : kind_(kind), cin_(cin), cout_(cout), kernel(name + ".kernel", kKernelVolume * cin, cout),
          bias(name + ".bias", 1, cout), gamma(name + ".bn_gamma", 1, cout),
          beta(name + ".bn_beta", 1, cout), running_mean(name + ".bn_mean", 1, cout),
          running_var(name + ".bn_var", 1, cout) {
        gamma.value.setOnes();
        running_var.value.setOnes();
    }

    ConvKind
    kind() const {
        return kind_;
    }
    int
    in_channels() const {
        return cin_;
    }
    int
    out_channels() const {
        return cout_;
    }

    void
    init(std::mt19937_64 &rng) {
        init_uniform(kernel, rng, double(kKernelVolume * cin_), std::sqrt(2.0));
    }

    /// Raw convolution (no normalization), used by the block and by tests.
    Mat
    convolve(const KernelMap &map, const Mat &x, int n_out) const {
        Mat y = Mat::Zero(n_out, cout_);
        y.rowwise() += bias.value.row(0);
        for (int o = 0; o < kKernelVolume; ++o) {
            const auto &in  = map.in[o];
            const auto &out = map.out[o];
            if (in.empty()) {
                continue;
            }
            Mat gathered(in.size(), cin_);
            for (std::size_t r = 0; r < in.size(); ++r) {
                gathered.row(r) = x.row(in[r]);
            }
            const Mat contrib = gathered * kernel.value.middleRows(o * cin_, cin_);
            for (std::size_t r = 0; r < out.size(); ++r) {
                y.row(out[r]) += contrib.row(r);
            }
        }
        return y;
    }

    Mat
    convolve_backward(const KernelMap &map, const Mat &x, const Mat &grad_y) {
        Mat grad_x = Mat::Zero(x.rows(), cin_);
        bias.grad.row(0) += grad_y.colwise().sum();
        for (int o = 0; o < kKernelVolume; ++o) {
            const auto &in  = map.in[o];
            const auto &out = map.out[o];
            if (in.empty()) {
                continue;
            }
            Mat gx(in.size(), cin_), gy(out.size(), cout_);
            for (std::size_t r = 0; r < in.size(); ++r) {
                gx.row(r) = x.row(in[r]);
                gy.row(r) = grad_y.row(out[r]);
            }
            kernel.grad.middleRows(o * cin_, cin_).noalias() += gx.transpose() * gy;
            const Mat back = gy * kernel.value.middleRows(o * cin_, cin_).transpose();
            for (std::size_t r = 0; r < in.size(); ++r) {
                grad_x.row(in[r]) += back.row(r);
            }
        }
        return grad_x;
    }

    Mat
    forward(std::shared_ptr<const KernelMap> map, const Mat &x, int n_out, NormMode mode,
            Cache &cache, double momentum = 0.1) {
        cache.map   = std::move(map);
        cache.input = x;
        cache.mode  = mode;
        Mat z       = convolve(*cache.map, x, n_out);
        Eigen::RowVectorXd mean, var;
        if (mode == NormMode::batch && n_out > 0) {
            mean = z.colwise().mean();
            var  = (z.rowwise() - mean).cwiseAbs2().colwise().mean();
            running_mean.value.row(0) = (1.0 - momentum) * running_mean.value.row(0) + momentum * mean;
            running_var.value.row(0)  = (1.0 - momentum) * running_var.value.row(0) + momentum * var;
        } else {
            mean = running_mean.value.row(0);
            var  = running_var.value.row(0);
        }
        cache.inv_std = (var.array() + kEps).rsqrt().matrix();
        cache.xhat    = (z.rowwise() - mean).array().rowwise() * cache.inv_std.array();
        Mat y         = cache.xhat.array().rowwise() * gamma.value.row(0).array();
        y.rowwise() += beta.value.row(0);
        cache.output = y.cwiseMax(0.0);
        return cache.output;
    }

    Mat
    backward(const Cache &cache, const Mat &grad_out) {
        const Mat g_y = grad_out.cwiseProduct((cache.output.array() > 0.0).cast<double>().matrix());
        gamma.grad.row(0) += (g_y.cwiseProduct(cache.xhat)).colwise().sum();
        beta.grad.row(0) += g_y.colwise().sum();
        const Mat g_xhat = g_y.array().rowwise() * gamma.value.row(0).array();
        Mat g_z;
        const double n = double(g_y.rows());
        if (cache.mode == NormMode::batch && n > 0) {
            const Eigen::RowVectorXd sum_g  = g_xhat.colwise().sum();
            const Eigen::RowVectorXd sum_gx = g_xhat.cwiseProduct(cache.xhat).colwise().sum();
            Mat t = (g_xhat * n).rowwise() - sum_g;
            t -= Mat(cache.xhat.array().rowwise() * sum_gx.array());
            g_z = (t.array().rowwise() * (cache.inv_std.array() / n)).matrix();
        } else {
            g_z = g_xhat.array().rowwise() * cache.inv_std.array();
        }
        return convolve_backward(*cache.map, cache.input, g_z);
    }

    void
    collect_trainable(ParamList &out) {
        out.insert(out.end(), {&kernel, &bias, &gamma, &beta});
    }
    void
    collect_buffers(ParamList &out) {
        out.insert(out.end(), {&running_mean, &running_var});
    }

    static constexpr double kEps = 1e-5;

  private:
    ConvKind kind_ = ConvKind::conv_s1;
    int cin_ = 0, cout_ = 0;

  public:
    Param kernel, bias, gamma, beta;
    Param running_mean, running_var;
};

// ---------------------------------------------------------------------------
// Feature volume

struct TrilinearStencil {
    std::array<int, 8> site{};      // -1 for unoccupied corners
    std::array<double, 8> weight{}; // all eight corners, no renormalization
};

class FeatureVolume {
  public:
    GridSpec grid;
    SiteSet sites;
    Mat features; // sites x C

    int
    channels() const {
        return int(features.cols());
    }

    TrilinearStencil
    stencil(const Vec3 &p) const {
        TrilinearStencil s;
        s.site.fill(-1);
        if (!p.allFinite()) {
            return s;
        }
        const Vec3 g = (p - grid.origin) / grid.voxel - Vec3::Constant(0.5);
        const Vec3 f(std::floor(g.x()), std::floor(g.y()), std::floor(g.z()));
        const Vec3 t = g - f;
        for (int c = 0; c < 8; ++c) {
            const int bx = c >> 2, by = (c >> 1) & 1, bz = c & 1;
            const Key3 k = {int(f.x()) + bx, int(f.y()) + by, int(f.z()) + bz};
            s.weight[c]  = (bx ? t.x() : 1.0 - t.x()) * (by ? t.y() : 1.0 - t.y()) *
                          (bz ? t.z() : 1.0 - t.z());
            s.site[c] = sites.find(k);
        }
        return s;
    }

    Eigen::RowVectorXd
    query(const TrilinearStencil &s) const {
        Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(channels());
        for (int c = 0; c < 8; ++c) {
            if (s.site[c] >= 0 && s.weight[c] != 0.0) {
                f += s.weight[c] * features.row(s.site[c]);
            }
        }
        return f;
    }

    Eigen::RowVectorXd
    query(const Vec3 &p) const {
        return query(stencil(p));
    }

    /// Scatters d(loss)/d(query result) back onto voxel features.
    static void
    query_backward(const TrilinearStencil &s, const Eigen::RowVectorXd &grad, Mat &grad_features) {
        for (int c = 0; c < 8; ++c) {
            if (s.site[c] >= 0 && s.weight[c] != 0.0) {
                grad_features.row(s.site[c]) += s.weight[c] * grad;
            }
        }
    }
};

// ---------------------------------------------------------------------------
// U-Net

struct UNetConfig {
    int channels = 8; // base width c; 16 reproduces the full-width network
};

class SparseUNet {
  public:
    struct Cache {
        std::array<std::shared_ptr<SiteSet>, 7> enc_sites;
        std::array<ConvBlock::Cache, 7> enc;
        std::array<ConvBlock::Cache, 3> dec;
        std::array<Mat, 3> mix_input;
    };

    SparseUNet() = default;
    explicit SparseUNet(UNetConfig cfg) : cfg_(cfg) {
        const int c = cfg.channels;
        require(c > 0, "SparseUNet: channels must be positive");
        const std::array<std::tuple<ConvKind, int, int>, 7> enc = {{
            {ConvKind::conv_s1, 3, c},
            {ConvKind::conv_s2, c, c},
            {ConvKind::conv_s1, c, c},
            {ConvKind::conv_s2, c, 2 * c},
            {ConvKind::conv_s1, 2 * c, 2 * c},
            {ConvKind::conv_s2, 2 * c, 4 * c},
            {ConvKind::conv_s1, 4 * c, 4 * c},
        }};
        for (int l = 0; l < 7; ++l) {
            const auto [kind, in, out] = enc[l];
            enc_[l] = ConvBlock("unet.conv" + std::to_string(l), kind, in, out);
        }
        const std::array<std::pair<int, int>, 3> dec = {{{4 * c, 2 * c}, {2 * c, c}, {c, c}}};
        for (int l = 0; l < 3; ++l) {
            dec_[l] = ConvBlock("unet.deconv" + std::to_string(7 + l), ConvKind::deconv_s2,
                                dec[l].first, dec[l].second);
            const int skip = skip_channels(l);
            mix_[l]        = Linear("unet.mix" + std::to_string(l), dec[l].second + skip,
                                    l == 0 ? 2 * c : c);
        }
    }

    const UNetConfig &
    config() const {
        return cfg_;
    }
    int
    out_channels() const {
        return cfg_.channels;
    }

    void
    init(std::mt19937_64 &rng) {
        for (auto &b : enc_) b.init(rng);
        for (auto &b : dec_) b.init(rng);
        for (auto &m : mix_) {
            init_uniform(m.weight, rng, double(m.in_features()));
            m.bias.value.setZero();
        }
    }

    ConvBlock &
    encoder(int l) {
        return enc_[l];
    }
    ConvBlock &
    decoder(int l) {
        return dec_[l];
    }
    Linear &
    mix(int l) {
        return mix_[l];
    }

    FeatureVolume
    forward(const SparseVoxelTensor &input, NormMode mode, Cache &cache) {
        for (int a = 0; a < 3; ++a) {
            require(input.grid.dims[a] % 8 == 0,
                    "SparseUNet: grid dimensions must be divisible by 8");
        }
        require(input.features.cols() == 3, "SparseUNet: expects RGB voxel features");
        const SiteSet *prev_sites = &input.sites;
        Mat h                     = input.features;
        std::array<Mat, 7> enc_out;
        for (int l = 0; l < 7; ++l) {
            auto out_sites      = std::make_shared<SiteSet>(conv_output_sites(enc_[l].kind(), *prev_sites));
            auto map            = std::make_shared<const KernelMap>(
                build_kernel_map(enc_[l].kind(), *prev_sites, *out_sites));
            h                   = enc_[l].forward(map, h, out_sites->size(), mode, cache.enc[l]);
            enc_out[l]          = h;
            cache.enc_sites[l]  = out_sites;
            prev_sites          = out_sites.get();
        }
        // decoder level l writes onto encoder level (2 - l)
        const int skip_layer[3] = {4, 2, 0};
        for (int l = 0; l < 3; ++l) {
            const SiteSet &target = *cache.enc_sites[skip_layer[l]];
            auto map = std::make_shared<const KernelMap>(
                build_kernel_map(ConvKind::deconv_s2, *prev_sites, target));
            const Mat d = dec_[l].forward(map, h, target.size(), mode, cache.dec[l]);
            Mat joined(d.rows(), d.cols() + enc_out[skip_layer[l]].cols());
            joined << d, enc_out[skip_layer[l]];
            cache.mix_input[l] = joined;
            h                  = mix_[l].forward(joined);
            prev_sites         = &target;
        }
        FeatureVolume vol;
        vol.grid     = input.grid;
        vol.sites    = *cache.enc_sites[0];
        vol.features = std::move(h);
        return vol;
    }

    /// Accumulates parameter gradients from d(loss)/d(volume features).
    void
    backward(const Cache &cache, const Mat &grad_features) {
        const int skip_layer[3] = {4, 2, 0};
        std::array<Mat, 7> enc_grad;
        for (int l = 0; l < 7; ++l) {
            enc_grad[l] = Mat::Zero(cache.enc[l].output.rows(), cache.enc[l].output.cols());
        }
        Mat g = grad_features;
        for (int l = 2; l >= 0; --l) {
            const Mat g_joined = mix_[l].backward(cache.mix_input[l], g);
            const int dw       = dec_[l].out_channels();
            enc_grad[skip_layer[l]] += g_joined.rightCols(g_joined.cols() - dw);
            g = dec_[l].backward(cache.dec[l], g_joined.leftCols(dw));
        }
        // g is now the gradient wrt the bottleneck output (encoder layer 6)
        enc_grad[6] += g;
        for (int l = 6; l >= 0; --l) {
            const Mat g_in = enc_[l].backward(cache.enc[l], enc_grad[l]);
            if (l > 0) {
                enc_grad[l - 1] += g_in;
            }
        }
    }

    void
    collect_trainable(ParamList &out) {
        for (auto &b : enc_) b.collect_trainable(out);
        for (int l = 0; l < 3; ++l) {
            dec_[l].collect_trainable(out);
            out.push_back(&mix_[l].weight);
            out.push_back(&mix_[l].bias);
        }
    }
    void
    collect_buffers(ParamList &out) {
        for (auto &b : enc_) b.collect_buffers(out);
        for (auto &b : dec_) b.collect_buffers(out);
    }

  private:
    int
    skip_channels(int l) const {
        const int c = cfg_.channels;
        return l == 0 ? 2 * c : c; // widths of encoder layers 4, 2, 0
    }

    UNetConfig cfg_;
    std::array<ConvBlock, 7> enc_;
    std::array<ConvBlock, 3> dec_;
    std::array<Linear, 3> mix_;
};

} // namespace volsplat
