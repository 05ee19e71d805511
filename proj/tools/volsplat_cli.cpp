// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: synthetic scene generation, fusion, inference,
// rendering, training, fine-tuning, evaluation and a deterministic self-test.

#include "volsplat/volsplat.hpp"

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cinttypes>
#include <cstdio>
#include <iostream>

using namespace volsplat;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::uint64_t seed = 0;
    int threads        = 1;
    bool deterministic = false;
};

void
apply_threads(const Common &c) {
    const int n = c.deterministic ? 1 : std::max(1, c.threads);
#ifdef _OPENMP
    omp_set_num_threads(n);
#else
    if (n > 1) std::cerr << "note: built without OpenMP, running on one thread\n";
#endif
}

std::uint64_t
fnv1a(const fs::path &path) {
    std::ifstream in = io::open_in(path);
    std::uint64_t h  = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= std::uint8_t(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

/// count (u64) then xyz rgb per point as little-endian f32.
void
write_point_file(const fs::path &path, const FusedCloud &cloud) {
    std::ofstream out = io::open_out(path);
    io::write_le<std::uint64_t>(out, cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int a = 0; a < 3; ++a) io::write_le<float>(out, float(cloud.positions[i][a]));
        for (int a = 0; a < 3; ++a) io::write_le<float>(out, float(cloud.colors[i][a]));
    }
    require(bool(out), "write failed: " + path.string());
}

void
write_raster(const fs::path &path, const Image &img) {
    io::write_f32_raster(path, std::vector<float>(img.data.begin(), img.data.end()));
}

void
print_metrics(const StepMetrics &m) {
    std::printf("step=%d scene=%d view=%d loss=%.6f l1=%.6f ssim=%.6f entropy=%.6f train_psnr=%.3f", m.step,
                m.scene, m.view, m.loss.total, m.loss.l1, m.loss.ssim, m.loss.entropy, m.train_psnr);
    if (std::isfinite(m.probe_psnr)) std::printf(" probe_psnr=%.3f", m.probe_psnr);
    std::printf("\n");
    std::fflush(stdout);
}

SceneContext
context_for(const fs::path &scene, const fs::path &heldout, const ModelConfig &cfg) {
    const LoadedScene train = load_scene(scene);
    if (heldout.empty()) return prepare_scene(train, nullptr, cfg);
    const LoadedScene held = load_scene(heldout);
    return prepare_scene(train, &held, cfg);
}

SyntheticSpec
selftest_spec() {
    return corridor_spec(3, default_camera(32, 24, 24.0));
}

ModelConfig
selftest_config() {
    ModelConfig c;
    c.channels    = 4;
    c.head_hidden = 16;
    c.bg_points   = 256;
    c.bg_hidden   = 16;
    return c;
}

} // namespace

int
main(int argc, char **argv) {
    CLI::App app{"volsplat: feed-forward Gaussian splatting from posed RGB-D frames"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--seed", common.seed, "random seed");
        sub->add_option("--threads", common.threads, "worker threads (needs an OpenMP build)")
            ->check(CLI::PositiveNumber);
    };

    // synth
    fs::path synth_out;
    int synth_boxes = 3, synth_w = 64, synth_h = 48;
    double synth_noise = 0.0;
    auto *synth = app.add_subcommand("synth", "write a synthetic corridor scene (train.json, heldout.json)");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--boxes", synth_boxes, "number of boxes (1-16)")->check(CLI::Range(1, 16));
    synth->add_option("--width", synth_w)->check(CLI::PositiveNumber);
    synth->add_option("--height", synth_h)->check(CLI::PositiveNumber);
    synth->add_option("--noise", synth_noise, "additive depth noise std in meters");
    add_common(synth);

    // fuse
    fs::path fuse_scene, fuse_out;
    double fuse_sigma = 0.2;
    auto *fuse = app.add_subcommand("fuse", "fuse depth into a filtered point cloud");
    fuse->add_option("--scene", fuse_scene, "scene manifest")->required();
    fuse->add_option("--out", fuse_out, "binary point file")->required();
    fuse->add_option("--sigma", fuse_sigma, "depth consistency threshold in meters");
    add_common(fuse);

    // infer
    fs::path infer_scene_path, infer_ckpt, infer_out;
    int infer_view = 0, infer_recursions = 2;
    auto *infer = app.add_subcommand("infer", "decode a Gaussian snapshot with a trained checkpoint");
    infer->add_option("--scene", infer_scene_path, "scene manifest")->required();
    infer->add_option("--checkpoint", infer_ckpt)->required();
    infer->add_option("--out", infer_out, "snapshot file")->required();
    infer->add_option("--view", infer_view, "frame whose camera center places the background shell");
    infer->add_option("--recursions", infer_recursions)->check(CLI::PositiveNumber);
    add_common(infer);

    // render
    fs::path render_snap, render_scene, render_out, render_alpha;
    int render_view = 0;
    auto *rend = app.add_subcommand("render", "render a snapshot into one view of a scene");
    rend->add_option("--snapshot", render_snap)->required();
    rend->add_option("--scene", render_scene, "manifest supplying the camera")->required();
    rend->add_option("--view", render_view);
    rend->add_option("--out", render_out, "8-bit RGB PPM")->required();
    rend->add_option("--fg-alpha", render_alpha, "optional f32 raster of foreground opacity");
    add_common(rend);

    // train
    std::vector<fs::path> train_scenes;
    fs::path train_heldout, train_out;
    TrainConfig tc;
    int train_channels = 8;
    auto *train = app.add_subcommand("train", "feed-forward training over one or more scenes");
    train->add_option("--scene", train_scenes, "scene manifest (repeatable)")->required();
    train->add_option("--heldout", train_heldout, "held-out manifest for the probe view");
    train->add_option("--out", train_out, "checkpoint file")->required();
    train->add_option("--steps", tc.steps)->check(CLI::PositiveNumber);
    train->add_option("--lr", tc.lr)->check(CLI::PositiveNumber);
    train->add_option("--lambda-r", tc.weights.ssim, "SSIM weight");
    train->add_option("--lambda-e", tc.weights.entropy, "entropy weight");
    train->add_option("--channels", train_channels)->check(CLI::PositiveNumber);
    train->add_option("--probe-every", tc.probe_every);
    train->add_flag("--deterministic", common.deterministic);
    add_common(train);

    // finetune
    fs::path ft_snap, ft_scene, ft_out;
    FinetuneConfig fc;
    double ft_lr = 0.0;
    auto *ft = app.add_subcommand("finetune", "optimize a snapshot directly against a scene's views");
    ft->add_option("--snapshot", ft_snap, "initial snapshot")->required();
    ft->add_option("--scene", ft_scene, "scene manifest")->required();
    ft->add_option("--out", ft_out, "output snapshot")->required();
    ft->add_option("--steps", fc.steps)->check(CLI::PositiveNumber);
    ft->add_option("--lr", ft_lr, "learning rate for means; other attributes keep their ratio to it");
    ft->add_option("--lambda-r", fc.weights.ssim);
    ft->add_option("--lambda-e", fc.weights.entropy);
    ft->add_option("--densify-every", fc.densify_every);
    ft->add_option("--eval-every", fc.eval_every);
    ft->add_flag("--deterministic", common.deterministic);
    add_common(ft);

    // eval
    fs::path eval_scene, eval_heldout, eval_ckpt, eval_snap;
    auto *ev = app.add_subcommand("eval", "PSNR on held-out views");
    ev->add_option("--scene", eval_scene, "training manifest (references and fusion)")->required();
    ev->add_option("--heldout", eval_heldout, "views to score; defaults to --scene");
    auto *ev_ckpt = ev->add_option("--checkpoint", eval_ckpt);
    auto *ev_snap = ev->add_option("--snapshot", eval_snap);
    ev_ckpt->excludes(ev_snap);
    add_common(ev);

    // selftest
    fs::path st_out;
    int st_steps = 8;
    auto *st = app.add_subcommand("selftest", "train a tiny model and write a checkpoint and render");
    st->add_option("--out", st_out, "output directory")->required();
    st->add_option("--steps", st_steps)->check(CLI::PositiveNumber);
    st->add_flag("--deterministic", common.deterministic);
    add_common(st);

    CLI11_PARSE(app, argc, argv);

    try {
        apply_threads(common);

        if (*synth) {
            SyntheticSpec spec       = corridor_spec(synth_boxes, default_camera(synth_w, synth_h, 0.75 * synth_w));
            spec.depth_noise_std     = synth_noise;
            const SyntheticScene s   = make_synthetic_scene(spec, common.seed);
            fs::create_directories(synth_out);
            write_scene(synth_out / "train.json", s.frames, spec.foreground_box, spec.voxel_size, "train");
            write_scene(synth_out / "heldout.json", s.heldout, spec.foreground_box, spec.voxel_size, "heldout");
            std::printf("frames=%zu heldout=%zu\n", s.frames.size(), s.heldout.size());
        } else if (*fuse) {
            const LoadedScene s = load_scene(fuse_scene);
            FusionOptions opt;
            opt.consistency_sigma = fuse_sigma;
            opt.voxel_size        = s.manifest.voxel_size;
            const FusionResult r  = build_point_cloud(s.frames, s.manifest.foreground_box, opt);
            write_point_file(fuse_out, r.cloud);
            std::printf("points=%zu background_candidates=%zu\n", r.cloud.size(), r.background_candidates.size());
        } else if (*infer) {
            Model m                = load_checkpoint(infer_ckpt);
            const SceneContext ctx = context_for(infer_scene_path, {}, m.config());
            require(infer_view >= 0 && infer_view < int(ctx.frames.size()), "infer: --view out of range");
            const GaussianSet g = infer_scene(m, ctx, ctx.frames[infer_view].pose.center(), infer_recursions);
            save_snapshot(infer_out, g);
            std::printf("foreground=%zu background=%zu\n", g.count(GaussianFlag::foreground),
                        g.count(GaussianFlag::background));
        } else if (*rend) {
            const GaussianSet g = load_snapshot(render_snap);
            const LoadedScene s = load_scene(render_scene);
            require(render_view >= 0 && render_view < int(s.frames.size()), "render: --view out of range");
            const PosedFrame &v  = s.frames[render_view];
            const RenderOutput r = render(g, v.camera, v.pose);
            io::write_image(render_out, r.color);
            if (!render_alpha.empty()) write_raster(render_alpha, r.fg_alpha);
            std::printf("psnr=%.3f\n", psnr(r.color, v.image));
        } else if (*train) {
            ModelConfig cfg;
            cfg.channels = train_channels;
            std::vector<SceneContext> scenes;
            for (std::size_t i = 0; i < train_scenes.size(); ++i) {
                scenes.push_back(context_for(train_scenes[i], i == 0 ? train_heldout : fs::path{}, cfg));
            }
            Model m(cfg);
            m.init(common.seed);
            tc.seed = common.seed;
            train_feed_forward(m, scenes, tc, print_metrics);
            save_checkpoint(train_out, m);
        } else if (*ft) {
            const LoadedScene s = load_scene(ft_scene);
            if (ft_lr > 0.0) {
                const double k = ft_lr / fc.lr_means;
                fc.lr_means *= k;
                fc.lr_quats *= k;
                fc.lr_log_scales *= k;
                fc.lr_opacity *= k;
                fc.lr_sh *= k;
            }
            fc.seed                = common.seed;
            const FinetuneResult r = finetune(load_snapshot(ft_snap), s.frames, fc, [](const FinetuneProgress &p) {
                std::printf("step=%d loss=%.6f l1=%.6f ssim=%.6f entropy=%.6f count=%zu", p.step, p.loss.total,
                            p.loss.l1, p.loss.ssim, p.loss.entropy, p.count);
                if (std::isfinite(p.train_psnr)) std::printf(" train_psnr=%.3f", p.train_psnr);
                std::printf("\n");
            });
            save_snapshot(ft_out, r.gaussians);
            std::printf("final_psnr=%.3f primitives=%zu\n", r.final_psnr, r.gaussians.size());
        } else if (*ev) {
            const LoadedScene views = load_scene(eval_heldout.empty() ? eval_scene : eval_heldout);
            double sum              = 0.0;
            if (!eval_snap.empty()) {
                const GaussianSet g = load_snapshot(eval_snap);
                for (std::size_t i = 0; i < views.frames.size(); ++i) {
                    const PosedFrame &v = views.frames[i];
                    const double p      = psnr(render(g, v.camera, v.pose).color, v.image);
                    std::printf("view=%zu psnr=%.3f\n", i, p);
                    sum += std::min(p, 100.0);
                }
            } else {
                require(!eval_ckpt.empty(), "eval: need --checkpoint or --snapshot");
                Model m                = load_checkpoint(eval_ckpt);
                const SceneContext ctx = context_for(eval_scene, {}, m.config());
                const GaussianSet fg   = infer_foreground(m, ctx);
                for (std::size_t i = 0; i < views.frames.size(); ++i) {
                    const double p = evaluate_views(m, ctx, fg, {views.frames[i]});
                    std::printf("view=%zu psnr=%.3f\n", i, p);
                    sum += p;
                }
            }
            std::printf("mean_psnr=%.3f\n", sum / double(views.frames.size()));
        } else if (*st) {
            const SyntheticSpec spec = selftest_spec();
            const SyntheticScene s   = make_synthetic_scene(spec, common.seed);
            const ModelConfig cfg    = selftest_config();
            std::vector<SceneContext> scenes{
                prepare_scene(s.frames, s.heldout, spec.foreground_box, spec.voxel_size, cfg)};
            Model m(cfg);
            m.init(common.seed);
            TrainConfig t;
            t.steps       = st_steps;
            t.seed        = common.seed;
            t.probe_every = 0;
            train_feed_forward(m, scenes, t, print_metrics);

            fs::create_directories(st_out);
            const PosedFrame &view = s.heldout.front();
            const GaussianSet g    = infer_scene(m, scenes[0], view.pose.center());
            const RenderOutput r   = render(g, view.camera, view.pose);
            save_checkpoint(st_out / "selftest.ckpt", m);
            save_snapshot(st_out / "selftest.snap", g);
            io::write_image(st_out / "selftest.ppm", r.color);
            write_raster(st_out / "selftest.f32", r.color);
            for (const char *name : {"selftest.ckpt", "selftest.snap", "selftest.ppm", "selftest.f32"}) {
                std::printf("file=%s fnv1a=%016" PRIx64 "\n", name, fnv1a(st_out / name));
            }
        }
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
