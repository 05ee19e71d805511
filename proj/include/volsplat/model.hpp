// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// The trainable feed-forward model and its versioned checkpoint.
//
// Checkpoint layout (little-endian): magic "VSPLCKPT", u32 version, model
// config, u64 tensor count, shape table (u32 name length, name, u64 rows,
// u64 cols), then every tensor's f64 values in table order.
#pragma once

#include "volsplat/background.hpp"

namespace volsplat {

struct ModelConfig {
    int channels     = 8;  // U-Net base width; feature width equals it
    int head_hidden  = 64;
    int head_layers  = 2;
    int references   = 3;
    int window       = 3;
    int bg_points    = 2048;
    int bg_hidden    = 64;
    double bg_radius = 100.0;

    bool operator==(const ModelConfig &) const = default;

    void
    validate() const {
        require(channels > 0 && head_hidden > 0 && head_layers >= 1 && bg_hidden > 0,
                "model config: widths must be positive");
        require(references >= 1, "model config: need at least one reference view");
        require(window >= 1 && window % 2 == 1, "model config: window must be odd");
        require(bg_points >= 64 && bg_radius > 0.0, "model config: bad background shell");
    }
};

class Model {
  public:
    explicit Model(ModelConfig cfg = {})
        : cfg_((cfg.validate(), cfg)), unet(UNetConfig{cfg.channels}),
          geometry(cfg.channels, HeadConfig{cfg.head_hidden, cfg.head_layers}),
          color(IbrConfig{cfg.references, cfg.window}, cfg.head_hidden),
          background(cfg.references, cfg.bg_hidden) {}

    const ModelConfig &
    config() const {
        return cfg_;
    }

    void
    init(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        unet.init(rng);
        geometry.init(rng);
        color.init(rng);
        background.init(rng);
    }

    /// Parameters updated by the optimizer, in checkpoint order.
    ParamList
    trainable() {
        ParamList out;
        unet.collect_trainable(out);
        geometry.collect(out);
        color.collect(out);
        background.collect(out);
        return out;
    }

    /// Normalization running statistics.
    ParamList
    buffers() {
        ParamList out;
        unet.collect_buffers(out);
        return out;
    }

    ParamList
    all() {
        ParamList out = trainable();
        const ParamList b = buffers();
        out.insert(out.end(), b.begin(), b.end());
        return out;
    }

  private:
    ModelConfig cfg_;

  public:
    SparseUNet unet;
    GeometryHeads geometry;
    ColorHead color;
    BackgroundHead background;
};

inline constexpr char kCheckpointMagic[8]         = {'V', 'S', 'P', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void
save_checkpoint(const std::filesystem::path &path, Model &model) {
    const ModelConfig &c = model.config();
    std::ofstream out    = io::open_out(path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    io::write_le<std::uint32_t>(out, kCheckpointVersion);
    for (int v : {c.channels, c.head_hidden, c.head_layers, c.references, c.window, c.bg_points,
                  c.bg_hidden}) {
        io::write_le<std::int32_t>(out, v);
    }
    io::write_le(out, c.bg_radius);
    const ParamList params = model.all();
    io::write_le<std::uint64_t>(out, params.size());
    for (const Param *p : params) {
        io::write_le<std::uint32_t>(out, std::uint32_t(p->name.size()));
        out.write(p->name.data(), std::streamsize(p->name.size()));
        io::write_le<std::uint64_t>(out, std::uint64_t(p->value.rows()));
        io::write_le<std::uint64_t>(out, std::uint64_t(p->value.cols()));
    }
    for (const Param *p : params) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            io::write_le(out, p->value.data()[i]);
        }
    }
    require(bool(out), "save_checkpoint: write failed for " + path.string());
}

inline Model
load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in = io::open_in(path);
    char magic[8]    = {};
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic)) {
        throw Error("truncated file: checkpoint header");
    }
    const auto version = io::read_le<std::uint32_t>(in, "checkpoint version");
    if (!std::equal(std::begin(magic), std::end(magic), kCheckpointMagic) ||
        version != kCheckpointVersion) {
        throw Error("checkpoint magic/version mismatch in " + path.string());
    }
    ModelConfig c;
    for (int *v : {&c.channels, &c.head_hidden, &c.head_layers, &c.references, &c.window,
                   &c.bg_points, &c.bg_hidden}) {
        *v = io::read_le<std::int32_t>(in, "checkpoint config");
    }
    c.bg_radius = io::read_le<double>(in, "checkpoint config");
    Model model(c);
    ParamList params   = model.all();
    const auto n       = io::read_le<std::uint64_t>(in, "checkpoint tensor count");
    require(n == params.size(), "checkpoint: tensor count does not match the model");
    for (Param *p : params) {
        const auto len = io::read_le<std::uint32_t>(in, "checkpoint name");
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto rows = io::read_le<std::uint64_t>(in, "checkpoint shape");
        const auto cols = io::read_le<std::uint64_t>(in, "checkpoint shape");
        require(name == p->name && Eigen::Index(rows) == p->value.rows() &&
                    Eigen::Index(cols) == p->value.cols(),
                "checkpoint: shape table mismatch at " + name);
    }
    for (Param *p : params) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            p->value.data()[i] = io::read_le<double>(in, "checkpoint tensor");
        }
    }
    return model;
}

} // namespace volsplat
