// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Per-scene refinement of an explicit GaussianSet: Adam on every attribute,
// periodic pruning of transparent primitives and splitting of primitives
// with large positional gradients.
#pragma once

#include "volsplat/losses.hpp"
#include "volsplat/rasterizer.hpp"

#include <functional>

namespace volsplat {

struct FinetuneConfig {
    int steps = 1000;
    double lr_means      = 1e-3;
    double lr_quats      = 1e-3;
    double lr_log_scales = 5e-3;
    double lr_opacity    = 5e-2;
    double lr_sh         = 2.5e-3;
    LossWeights weights;
    std::uint64_t seed = 0;

    int densify_every      = 500; // prune + grow interval in steps
    double prune_threshold = 0.005;
    double grow_quantile   = 0.85;
    double split_shrink    = 1.6;

    int eval_every     = 0;   // 0 disables training-view PSNR tracking
    double target_psnr = 28.0;
    bool stop_at_target = false;
};

struct FinetuneProgress {
    int step = 0;
    LossTerms loss;
    double train_psnr = std::numeric_limits<double>::quiet_NaN(); // mean over all views
    std::size_t count = 0;
};

struct FinetuneResult {
    GaussianSet gaussians;
    std::vector<std::size_t> counts_per_interval;
    int steps_to_target = -1; // first evaluated step reaching target_psnr
    double final_psnr   = std::numeric_limits<double>::quiet_NaN();
};

inline double
mean_view_psnr(const GaussianSet &g, const std::vector<PosedFrame> &views) {
    double sum = 0.0;
    for (const PosedFrame &v : views) {
        sum += std::min(psnr(render(g, v.camera, v.pose).color, v.image), 100.0);
    }
    return sum / double(views.size());
}

/// Removes primitives with opacity below `threshold`; throws if none remain.
inline GaussianSet
prune_transparent(const GaussianSet &g, double threshold) {
    std::vector<bool> keep(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        keep[i] = sigmoid(g.opacity_logits[i]) >= threshold;
    }
    GaussianSet out = g.select(keep);
    if (out.size() == 0) {
        throw Error("finetune: pruning removed every primitive");
    }
    return out;
}

/// Splits foreground primitives whose accumulated positional-gradient norm is
/// above the given quantile into two children displaced by +-1 sigma along
/// the principal axis, with scales divided by `shrink`.
inline GaussianSet
split_by_gradient(const GaussianSet &g, const std::vector<double> &grad_norm, double quantile,
                  double shrink) {
    std::vector<double> fg;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g.flags[i] == GaussianFlag::foreground) {
            fg.push_back(grad_norm[i]);
        }
    }
    if (fg.empty()) {
        return g;
    }
    std::sort(fg.begin(), fg.end());
    const double threshold = fg[std::min(fg.size() - 1, std::size_t(quantile * double(fg.size())))];
    GaussianSet out;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const bool split = g.flags[i] == GaussianFlag::foreground && grad_norm[i] > threshold &&
                           grad_norm[i] > 0.0;
        if (!split) {
            out.push_back(g.means[i], g.quats[i], g.log_scales[i], g.opacity_logits[i], g.sh[i],
                          g.flags[i]);
            continue;
        }
        int axis;
        g.log_scales[i].maxCoeff(&axis);
        const Vec3 dir   = quat_to_rotation(g.quats[i]).col(axis);
        const double sig = std::exp(g.log_scales[i][axis]);
        const Vec3 child_scale = (g.log_scales[i].array() - std::log(shrink)).matrix();
        for (double sign : {-1.0, 1.0}) {
            out.push_back(g.means[i] + sign * sig * dir, g.quats[i], child_scale,
                          g.opacity_logits[i], g.sh[i], g.flags[i]);
        }
    }
    return out;
}

namespace detail {

struct GaussianParams {
    Param means, quats, log_scales, opacity, sh;

    explicit GaussianParams(const GaussianSet &g)
        : means("means", g.size(), 3), quats("quats", g.size(), 4),
          log_scales("log_scales", g.size(), 3), opacity("opacity", g.size(), 1),
          sh("sh", g.size(), kShCoeffs) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            means.value.row(i)      = g.means[i].transpose();
            quats.value.row(i)      = g.quats[i].transpose();
            log_scales.value.row(i) = g.log_scales[i].transpose();
            opacity.value(i, 0)     = g.opacity_logits[i];
            for (int k = 0; k < kShCoeffs; ++k) sh.value(i, k) = g.sh[i][k];
        }
    }

    void
    write_back(GaussianSet &g) const {
        for (std::size_t i = 0; i < g.size(); ++i) {
            g.means[i]          = means.value.row(i).transpose();
            g.quats[i]          = quats.value.row(i).transpose();
            g.log_scales[i]     = log_scales.value.row(i).transpose();
            g.opacity_logits[i] = opacity.value(i, 0);
            for (int k = 0; k < kShCoeffs; ++k) g.sh[i][k] = sh.value(i, k);
        }
    }
};

} // namespace detail

/// Direct optimization of every primitive attribute against `views`.
inline FinetuneResult
finetune(GaussianSet init, const std::vector<PosedFrame> &views, const FinetuneConfig &cfg,
         const std::function<void(const FinetuneProgress &)> &on_step = {}) {
    require(!views.empty(), "finetune: no views");
    require(init.size() > 0, "finetune: empty initial set");
    cfg.weights.validate();
    std::mt19937_64 rng(cfg.seed ^ 0xc2b2ae3d27d4eb4fULL);
    FinetuneResult result;
    GaussianSet g = std::move(init);

    auto params = std::make_unique<detail::GaussianParams>(g);
    std::vector<Adam> adams;
    auto rebuild_optimizers = [&] {
        adams.clear();
        adams.emplace_back(ParamList{&params->means}, AdamConfig{cfg.lr_means});
        adams.emplace_back(ParamList{&params->quats}, AdamConfig{cfg.lr_quats});
        adams.emplace_back(ParamList{&params->log_scales}, AdamConfig{cfg.lr_log_scales});
        adams.emplace_back(ParamList{&params->opacity}, AdamConfig{cfg.lr_opacity});
        adams.emplace_back(ParamList{&params->sh}, AdamConfig{cfg.lr_sh});
    };
    rebuild_optimizers();
    std::vector<double> grad_norm(g.size(), 0.0);

    for (int step = 1; step <= cfg.steps; ++step) {
        const auto v = std::uniform_int_distribution<std::size_t>(0, views.size() - 1)(rng);
        const PosedFrame &view = views[v];
        RenderOptions opt;
        opt.record_hits      = true;
        const RenderOutput r = render(g, view.camera, view.pose, opt);
        Image g_color, g_fg;
        FinetuneProgress prog;
        prog.step = step;
        prog.loss = total_loss(r.color, r.fg_alpha, view.image, cfg.weights, &g_color, &g_fg);
        if (!std::isfinite(prog.loss.total)) {
            throw Error("finetune diverged at step " + std::to_string(step));
        }
        const GaussianGrads grads = render_backward(g, view.camera, view.pose, r, g_color, g_fg);
        params->means.grad      = grads.means;
        params->quats.grad      = grads.quats;
        params->log_scales.grad = grads.log_scales;
        params->opacity.grad    = grads.opacity_logits;
        params->sh.grad         = grads.sh;
        for (std::size_t i = 0; i < g.size(); ++i) {
            grad_norm[i] += grads.means.row(i).norm();
        }
        for (Adam &a : adams) a.step();
        params->write_back(g);

        if (cfg.densify_every > 0 && step % cfg.densify_every == 0 && step < cfg.steps) {
            std::vector<double> kept_norm;
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (sigmoid(g.opacity_logits[i]) >= cfg.prune_threshold) {
                    kept_norm.push_back(grad_norm[i]);
                }
            }
            g = prune_transparent(g, cfg.prune_threshold);
            g = split_by_gradient(g, kept_norm, cfg.grow_quantile, cfg.split_shrink);
            params = std::make_unique<detail::GaussianParams>(g);
            rebuild_optimizers();
            grad_norm.assign(g.size(), 0.0);
            result.counts_per_interval.push_back(g.size());
        }

        prog.count = g.size();
        if (cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps)) {
            prog.train_psnr = mean_view_psnr(g, views);
            if (result.steps_to_target < 0 && prog.train_psnr >= cfg.target_psnr) {
                result.steps_to_target = step;
            }
        }
        if (on_step) {
            on_step(prog);
        }
        if (cfg.stop_at_target && result.steps_to_target > 0) {
            break;
        }
    }
    for (Vec4 &q : g.quats) {
        q.normalize();
    }
    result.final_psnr = mean_view_psnr(g, views);
    result.gaussians  = std::move(g);
    return result;
}

/// Uniform means inside the box, random colors, kNN scales and low opacity;
/// `background` primitives are appended with their colors randomized.
inline GaussianSet
random_initialization(const Box3 &box, std::size_t n, const GaussianSet &background,
                      std::uint64_t seed) {
    require(n > 3, "random_initialization: need more than 3 primitives");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Vec3> means(n);
    for (Vec3 &m : means) {
        for (int a = 0; a < 3; ++a) m[a] = box.min[a] + unit(rng) * box.extent()[a];
    }
    const std::vector<double> s = knn_scale_init(means, 3);
    GaussianSet g;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 rgb(unit(rng), unit(rng), unit(rng));
        g.push_back(means[i], Vec4(1, 0, 0, 0), Vec3::Constant(std::log(s[i])), logit(0.1),
                    sh_from_color(rgb), GaussianFlag::foreground);
    }
    for (std::size_t i = 0; i < background.size(); ++i) {
        const Vec3 rgb(unit(rng), unit(rng), unit(rng));
        g.push_back(background.means[i], background.quats[i], background.log_scales[i],
                    background.opacity_logits[i], sh_from_color(rgb), GaussianFlag::background);
    }
    return g;
}

} // namespace volsplat
