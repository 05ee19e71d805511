// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Trainable parameters, dense layers with hand-written adjoints, and Adam.
//
// Every differentiable block here follows the same contract: `forward` keeps
// whatever it needs in a caller-owned cache, `backward` takes the upstream
// gradient, accumulates into the parameters' `grad`, and returns the gradient
// with respect to the block input.
#pragma once

#include "volsplat/core.hpp"

#include <functional>
#include <memory>
#include <random>

namespace volsplat {

struct Param {
    std::string name;
    Mat value;
    Mat grad;

    Param() = default;
    Param(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

    void
    zero_grad() {
        grad.setZero();
    }
    Eigen::Index
    size() const {
        return value.size();
    }
};

/// Ordered list of the parameters a model owns; the order defines the
/// checkpoint layout and the optimizer slots.
using ParamList = std::vector<Param *>;

inline void
zero_grads(const ParamList &params) {
    for (Param *p : params) {
        p->zero_grad();
    }
}

inline std::size_t
count_scalars(const ParamList &params) {
    std::size_t n = 0;
    for (const Param *p : params) {
        n += std::size_t(p->size());
    }
    return n;
}

/// Uniform(-bound, bound) fill, bound = gain * sqrt(3 / fan_in).
inline void
init_uniform(Param &p, std::mt19937_64 &rng, double fan_in, double gain = 1.0) {
    const double bound = gain * std::sqrt(3.0 / std::max(1.0, fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        p.value.data()[i] = dist(rng);
    }
}

// ---------------------------------------------------------------------------

enum class Activation { none, relu };

/// y = x W + b over row batches.
class Linear {
  public:
    Linear() = default;
    Linear(const std::string &name, int in, int out)
        : weight(name + ".weight", in, out), bias(name + ".bias", 1, out) {}

    Param weight;
    Param bias;

    int
    in_features() const {
        return int(weight.value.rows());
    }
    int
    out_features() const {
        return int(weight.value.cols());
    }

    Mat
    forward(const Mat &x) const {
        Mat y = x * weight.value;
        y.rowwise() += bias.value.row(0);
        return y;
    }

    Mat
    backward(const Mat &x, const Mat &grad_y) {
        weight.grad.noalias() += x.transpose() * grad_y;
        bias.grad.row(0) += grad_y.colwise().sum();
        return grad_y * weight.value.transpose();
    }
};

/// Multilayer perceptron with ReLU between layers and a linear output.
class Mlp {
  public:
    struct Cache {
        std::vector<Mat> inputs; // input of each layer (post-activation)
    };

    Mlp() = default;
    Mlp(const std::string &name, int in, int hidden, int hidden_layers, int out) {
        int prev = in;
        for (int l = 0; l < hidden_layers; ++l) {
            layers_.emplace_back(name + ".fc" + std::to_string(l), prev, hidden);
            prev = hidden;
        }
        layers_.emplace_back(name + ".out", prev, out);
    }

    void
    init(std::mt19937_64 &rng) {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const bool hidden = l + 1 < layers_.size();
            init_uniform(layers_[l].weight, rng, layers_[l].in_features(),
                         hidden ? std::sqrt(2.0) : 1.0);
            layers_[l].bias.value.setZero();
        }
    }

    void
    zero_output_layer() {
        layers_.back().weight.value.setZero();
        layers_.back().bias.value.setZero();
    }

    Linear &
    output_layer() {
        return layers_.back();
    }
    const Linear &
    output_layer() const {
        return layers_.back();
    }

    int
    in_features() const {
        return layers_.front().in_features();
    }
    int
    out_features() const {
        return layers_.back().out_features();
    }

    Mat
    forward(const Mat &x, Cache *cache = nullptr) const {
        if (cache) {
            cache->inputs.clear();
        }
        Mat h = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            if (cache) {
                cache->inputs.push_back(h);
            }
            h = layers_[l].forward(h);
            if (l + 1 < layers_.size()) {
                h = h.cwiseMax(0.0);
            }
        }
        return h;
    }

    Mat
    backward(const Cache &cache, const Mat &grad_out) {
        Mat g = grad_out;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            if (l + 1 < layers_.size()) {
                // input of layer l+1 is relu(output of layer l)
                g = g.cwiseProduct((cache.inputs[l + 1].array() > 0.0).cast<double>().matrix());
            }
            g = layers_[l].backward(cache.inputs[l], g);
        }
        return g;
    }

    void
    collect(ParamList &out) {
        for (Linear &l : layers_) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
    }

  private:
    std::vector<Linear> layers_;
};

// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr    = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps   = 1e-8;
};

/// Adam over an ordered parameter list; slots follow the list order.
class Adam {
  public:
    Adam() = default;
    Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const Param *p : params_) {
            m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void
    step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Param &p = *params_[i];
            m_[i]    = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
            v_[i]    = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
            p.value.array() -= cfg_.lr * (m_[i].array() / bc1) /
                               ((v_[i].array() / bc2).sqrt() + cfg_.eps);
        }
    }

    long
    steps() const {
        return t_;
    }

  private:
    ParamList params_;
    AdamConfig cfg_;
    std::vector<Mat> m_, v_;
    long t_ = 0;
};

} // namespace volsplat
