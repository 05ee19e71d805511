// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Scene preparation, feed-forward inference and the end-to-end training loop
// (U-Net, geometry heads, color head and background head trained jointly
// through the rasterizer).
#pragma once

#include "volsplat/losses.hpp"
#include "volsplat/model.hpp"
#include "volsplat/rasterizer.hpp"

#include <functional>

namespace volsplat {

/// Everything about one scene that does not depend on the network weights.
struct SceneContext {
    std::vector<PosedFrame> frames;  // training views (also the references)
    std::vector<PosedFrame> heldout; // evaluation views
    Box3 box;
    double voxel = 0.1;
    FusedCloud cloud;
    SparseVoxelTensor tensor;
    std::vector<Vec3> mu_init;
    std::vector<double> s_init;
    std::vector<Vec3> offset_state; // offset from the previous visit
    HemisphereShell shell;
};

inline SceneContext
prepare_scene(std::vector<PosedFrame> frames, std::vector<PosedFrame> heldout, const Box3 &box,
              double voxel, const ModelConfig &cfg, FusionOptions fusion = {}) {
    require(!frames.empty(), "empty scene");
    SceneContext ctx;
    ctx.frames  = std::move(frames);
    ctx.heldout = std::move(heldout);
    ctx.box     = box;
    ctx.voxel   = voxel;
    fusion.voxel_size = voxel;
    ctx.cloud   = build_point_cloud(ctx.frames, box, fusion).cloud;
    ctx.tensor  = quantize(ctx.cloud, box, voxel);
    ctx.mu_init = ctx.cloud.positions;
    ctx.s_init  = knn_scale_init(ctx.mu_init, 3);
    ctx.offset_state.assign(ctx.mu_init.size(), Vec3::Zero());
    ctx.shell = build_shell(cfg.bg_points, cfg.bg_radius, box.center(), ctx.frames.front().pose.center());
    return ctx;
}

inline SceneContext
prepare_scene(const LoadedScene &train, const LoadedScene *heldout, const ModelConfig &cfg,
              FusionOptions fusion = {}) {
    return prepare_scene(train.frames, heldout ? heldout->frames : std::vector<PosedFrame>{},
                         train.manifest.foreground_box, train.manifest.voxel_size, cfg, fusion);
}

/// Foreground primitives from decoded geometry and SH rows.
inline GaussianSet
assemble_foreground(const DecodedGeometry &geo, const Mat &sh, bool normalize_quats) {
    GaussianSet g;
    for (std::size_t i = 0; i < geo.means.size(); ++i) {
        ShCoeffs coeffs{};
        for (int k = 0; k < kShCoeffs; ++k) {
            coeffs[k] = sh(i, k);
        }
        const Vec4 q = normalize_quats ? Vec4(geo.quats_raw[i].normalized()) : geo.quats_raw[i];
        g.push_back(geo.means[i], q, geo.scales[i].array().log(), geo.opacity_logits[i], coeffs,
                    GaussianFlag::foreground);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Inference

/// Foreground primitives with running normalization statistics and a fresh
/// zero offset state recursed `recursions` times.
inline GaussianSet
infer_foreground(Model &model, const SceneContext &ctx, int recursions = 2) {
    SparseUNet::Cache cache;
    const FeatureVolume volume = model.unet.forward(ctx.tensor, NormMode::running, cache);
    std::vector<Vec3> state(ctx.mu_init.size(), Vec3::Zero());
    const DecodedGeometry geo =
        decode_geometry(volume, model.geometry, ctx.mu_init, ctx.s_init, state, recursions, ctx.voxel);
    const ColorInputs in = build_color_inputs(geo.means, ctx.frames, model.color.config());
    return assemble_foreground(geo, model.color.forward(in.features), true);
}

/// Offsets after each of `max_recursions` passes from a zero state; entry k
/// holds the offset after k + 1 passes.
inline std::vector<std::vector<Vec3>>
offset_trajectory(Model &model, const SceneContext &ctx, int max_recursions) {
    SparseUNet::Cache cache;
    const FeatureVolume volume = model.unet.forward(ctx.tensor, NormMode::running, cache);
    std::vector<Vec3> state(ctx.mu_init.size(), Vec3::Zero());
    std::vector<std::vector<Vec3>> out;
    for (int r = 0; r < max_recursions; ++r) {
        decode_offsets(volume, model.geometry, ctx.mu_init, state, 1, ctx.voxel);
        out.push_back(state);
    }
    return out;
}

inline GaussianSet
infer_background(Model &model, const SceneContext &ctx, const Vec3 &camera_center) {
    return decode_background(ctx.shell, camera_center, ctx.frames, model.background);
}

/// Full scene for a camera: foreground plus the shell centered for it.
inline GaussianSet
infer_scene(Model &model, const SceneContext &ctx, const Vec3 &camera_center, int recursions = 2) {
    GaussianSet g = infer_foreground(model, ctx, recursions);
    g.append(infer_background(model, ctx, camera_center));
    return g;
}

/// Renders `fg` plus the background decoded for each view; returns the mean
/// PSNR over `views`.
inline double
evaluate_views(Model &model, const SceneContext &ctx, const GaussianSet &fg,
               const std::vector<PosedFrame> &views, std::vector<Image> *renders = nullptr) {
    require(!views.empty(), "evaluate: no views");
    double sum = 0.0;
    for (const PosedFrame &v : views) {
        GaussianSet g = fg;
        g.append(infer_background(model, ctx, v.pose.center()));
        const RenderOutput r = render(g, v.camera, v.pose);
        sum += std::min(psnr(r.color, v.image), 100.0);
        if (renders) {
            renders->push_back(r.color);
        }
    }
    return sum / double(views.size());
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    int steps          = 2000;
    double lr          = 1e-3;
    LossWeights weights;
    std::uint64_t seed = 0;
    int probe_every    = 100; // 0 disables held-out probing
};

struct StepMetrics {
    int step = 0;
    int scene = 0;
    int view  = 0;
    LossTerms loss;
    double train_psnr = 0.0;
    double probe_psnr = std::numeric_limits<double>::quiet_NaN();
};

/// One supervised step on view `target` of `ctx`: forward, loss, backward.
/// Gradients are accumulated into the model; the caller steps the optimizer.
inline StepMetrics
accumulate_step(Model &model, SceneContext &ctx, int target, const LossWeights &weights) {
    const PosedFrame &view = ctx.frames.at(target);

    SparseUNet::Cache unet_cache;
    const FeatureVolume volume = model.unet.forward(ctx.tensor, NormMode::batch, unet_cache);

    GeometryCache geo_cache;
    const DecodedGeometry geo = decode_geometry(volume, model.geometry, ctx.mu_init, ctx.s_init,
                                                ctx.offset_state, 1, ctx.voxel, &geo_cache);
    // references exclude the supervising view
    const ColorInputs color_in = build_color_inputs(geo.means, ctx.frames, model.color.config(), target);
    Mlp::Cache color_cache;
    const Mat sh = model.color.forward(color_in.features, &color_cache);

    GaussianSet g = assemble_foreground(geo, sh, false);
    const std::size_t n_fg = g.size();
    BackgroundCache bg_cache;
    g.append(decode_background(ctx.shell, view.pose.center(), ctx.frames, model.background, target,
                               &bg_cache));
    const std::size_t n_bg = g.size() - n_fg;

    RenderOptions opt;
    opt.record_hits      = true;
    const RenderOutput r = render(g, view.camera, view.pose, opt);
    Image g_color, g_fg;
    StepMetrics m;
    m.view       = target;
    m.loss       = total_loss(r.color, r.fg_alpha, view.image, weights, &g_color, &g_fg);
    m.train_psnr = psnr(r.color, view.image);
    if (!std::isfinite(m.loss.total)) {
        return m;
    }

    const GaussianGrads grads = render_backward(g, view.camera, view.pose, r, g_color, g_fg);
    const Eigen::Index nf = Eigen::Index(n_fg), nb = Eigen::Index(n_bg);
    const GeometryGrads geo_grads{grads.means.topRows(nf), grads.opacity_logits.topRows(nf),
                                  grads.quats.topRows(nf), grads.log_scales.topRows(nf)};
    const Mat g_feat =
        decode_geometry_backward(model.geometry, geo_cache, ctx.s_init, geo, geo_grads, ctx.voxel);
    model.color.net.backward(color_cache, grads.sh.topRows(nf));
    decode_background_backward(ctx.shell, model.background, bg_cache,
                               grads.sh.bottomRows(nb).leftCols(3), grads.log_scales.bottomRows(nb));
    Mat g_volume = Mat::Zero(volume.features.rows(), volume.features.cols());
    scatter_feature_grads(geo_cache.stencils, g_feat, g_volume);
    model.unet.backward(unet_cache, g_volume);
    return m;
}

using StepCallback = std::function<void(const StepMetrics &)>;

/// Feed-forward training: each step draws one scene and one of its views
/// uniformly. Aborts with the step number if the loss becomes NaN.
inline void
train_feed_forward(Model &model, std::vector<SceneContext> &scenes, const TrainConfig &cfg,
                   const StepCallback &on_step = {}) {
    require(!scenes.empty(), "train: no scenes");
    require(cfg.steps >= 0, "train: steps must be non-negative");
    cfg.weights.validate();
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    ParamList params = model.trainable();
    Adam adam(params, AdamConfig{cfg.lr});
    for (int step = 1; step <= cfg.steps; ++step) {
        const int s = int(std::uniform_int_distribution<std::size_t>(0, scenes.size() - 1)(rng));
        const int v = int(std::uniform_int_distribution<std::size_t>(0, scenes[s].frames.size() - 1)(rng));
        zero_grads(params);
        StepMetrics m = accumulate_step(model, scenes[s], v, cfg.weights);
        m.step        = step;
        m.scene       = s;
        if (!std::isfinite(m.loss.total)) {
            throw Error("training diverged at step " + std::to_string(step) + " (loss is NaN)");
        }
        adam.step();
        if (cfg.probe_every > 0 && step % cfg.probe_every == 0 && !scenes[s].heldout.empty()) {
            const GaussianSet fg = infer_foreground(model, scenes[s]);
            m.probe_psnr = evaluate_views(model, scenes[s], fg, {scenes[s].heldout.front()});
        }
        if (on_step) {
            on_step(m);
        }
    }
}

} // namespace volsplat
