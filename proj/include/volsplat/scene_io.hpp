// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Scene manifests and posed RGB-D frames.
//
// A manifest is JSON with the keys `frames`, `foreground_box`, `voxel_size`
// and optionally `meters_per_unit`. Each frame carries `image`, `depth`,
// `intrinsics` {fx, fy, cx, cy}, `camera_to_world` (16 reals, row-major),
// `width` and `height`. Paths are relative to the manifest's directory.
#pragma once

#include "volsplat/camera.hpp"
#include "volsplat/raster_io.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace volsplat {

struct FrameEntry {
    std::string image_path;
    std::string depth_path;
    Pinhole camera;
    Mat4 camera_to_world = Mat4::Identity();
};

struct SceneManifest {
    std::vector<FrameEntry> frames;
    double meters_per_unit = 1.0;
    Box3 foreground_box;
    double voxel_size = 0.1;

    void
    validate() const {
        require(!frames.empty(), "empty scene");
        require((foreground_box.extent().array() > 0.0).all(),
                "foreground_box must have positive extent on every axis");
        require(voxel_size > 0.0, "voxel_size must be positive");
        require(meters_per_unit > 0.0, "meters_per_unit must be positive");
    }
};

struct PosedFrame {
    Image image;
    DepthMap depth;
    Pinhole camera;
    RigidPose pose;
};

inline nlohmann::json
manifest_to_json(const SceneManifest &m) {
    nlohmann::json j;
    j["meters_per_unit"] = m.meters_per_unit;
    j["voxel_size"]      = m.voxel_size;
    j["foreground_box"]  = {{"min", {m.foreground_box.min.x(), m.foreground_box.min.y(),
                                    m.foreground_box.min.z()}},
                           {"max", {m.foreground_box.max.x(), m.foreground_box.max.y(),
                                    m.foreground_box.max.z()}}};
    j["frames"]          = nlohmann::json::array();
    for (const FrameEntry &f : m.frames) {
        nlohmann::json e;
        e["image"]      = f.image_path;
        e["depth"]      = f.depth_path;
        e["width"]      = f.camera.width;
        e["height"]     = f.camera.height;
        e["intrinsics"] = {{"fx", f.camera.fx}, {"fy", f.camera.fy}, {"cx", f.camera.cx},
                           {"cy", f.camera.cy}};
        std::vector<double> c2w;
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) {
                c2w.push_back(f.camera_to_world(r, c));
            }
        }
        e["camera_to_world"] = c2w;
        j["frames"].push_back(e);
    }
    return j;
}

inline SceneManifest
manifest_from_json(const nlohmann::json &j) {
    SceneManifest m;
    try {
        m.meters_per_unit = j.value("meters_per_unit", 1.0);
        m.voxel_size      = j.at("voxel_size").get<double>();
        const auto &box   = j.at("foreground_box");
        for (int a = 0; a < 3; ++a) {
            m.foreground_box.min[a] = box.at("min").at(a).get<double>();
            m.foreground_box.max[a] = box.at("max").at(a).get<double>();
        }
        int index = 0;
        for (const auto &e : j.at("frames")) {
            FrameEntry f;
            f.image_path       = e.at("image").get<std::string>();
            f.depth_path       = e.at("depth").get<std::string>();
            f.camera.width     = e.at("width").get<int>();
            f.camera.height    = e.at("height").get<int>();
            const auto &intr   = e.at("intrinsics");
            f.camera.fx        = intr.at("fx").get<double>();
            f.camera.fy        = intr.at("fy").get<double>();
            f.camera.cx        = intr.at("cx").get<double>();
            f.camera.cy        = intr.at("cy").get<double>();
            const auto &matrix = e.at("camera_to_world");
            require(matrix.size() == 16, "frame " + std::to_string(index) +
                                             ": camera_to_world needs 16 values");
            for (int k = 0; k < 16; ++k) {
                f.camera_to_world(k / 4, k % 4) = matrix.at(k).get<double>();
            }
            m.frames.push_back(std::move(f));
            ++index;
        }
    } catch (const nlohmann::json::exception &e) {
        throw Error(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

inline void
save_manifest(const std::filesystem::path &path, const SceneManifest &m) {
    std::ofstream out = io::open_out(path);
    out << manifest_to_json(m).dump(2) << "\n";
}

inline SceneManifest
read_manifest(const std::filesystem::path &path) {
    std::ifstream in = io::open_in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        throw Error("malformed manifest " + path.string() + ": " + e.what());
    }
    return manifest_from_json(j);
}

struct LoadedScene {
    SceneManifest manifest;
    std::vector<PosedFrame> frames;
};

/// Reads a manifest and every raster it references. Frame-level errors carry
/// the frame index.
inline LoadedScene
load_scene(const std::filesystem::path &manifest_path) {
    LoadedScene scene;
    scene.manifest = read_manifest(manifest_path);
    scene.manifest.validate();
    const auto root = manifest_path.parent_path();
    for (std::size_t i = 0; i < scene.manifest.frames.size(); ++i) {
        const FrameEntry &e = scene.manifest.frames[i];
        const std::string where = "frame " + std::to_string(i) + ": ";
        try {
            PosedFrame f;
            f.camera = e.camera;
            f.camera.validate();
            f.pose = RigidPose::from_matrix(e.camera_to_world);
            require(e.camera_to_world.row(3).isApprox(Eigen::RowVector4d(0, 0, 0, 1)),
                    "camera_to_world bottom row must be (0, 0, 0, 1)");
            f.image = io::read_image(root / e.image_path);
            if (f.image.width != e.camera.width || f.image.height != e.camera.height ||
                f.image.channels != 3) {
                std::ostringstream msg;
                msg << "resolution mismatch: image is " << f.image.width << "x"
                    << f.image.height << ", declared " << e.camera.width << "x"
                    << e.camera.height;
                throw Error(msg.str());
            }
            f.depth.width  = e.camera.width;
            f.depth.height = e.camera.height;
            f.depth.data   = io::read_f32_raster(root / e.depth_path, e.camera.width,
                                                 e.camera.height);
            for (float &d : f.depth.data) {
                if (!(std::isfinite(d) && d > 0.0f)) {
                    d = std::numeric_limits<float>::quiet_NaN();
                }
            }
            scene.frames.push_back(std::move(f));
        } catch (const Error &err) {
            throw Error(where + err.what());
        }
    }
    return scene;
}

/// Writes frames as `<stem>_NNN.ppm` / `<stem>_NNN.depth` next to the manifest.
inline SceneManifest
write_scene(const std::filesystem::path &manifest_path, const std::vector<PosedFrame> &frames,
            const Box3 &box, double voxel_size, const std::string &stem = "frame") {
    SceneManifest m;
    m.foreground_box = box;
    m.voxel_size     = voxel_size;
    const auto root  = manifest_path.parent_path();
    for (std::size_t i = 0; i < frames.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%03zu", stem.c_str(), i);
        FrameEntry e;
        e.image_path      = std::string(name) + ".ppm";
        e.depth_path      = std::string(name) + ".depth";
        e.camera          = frames[i].camera;
        e.camera_to_world = frames[i].pose.matrix();
        io::write_image(root / e.image_path, frames[i].image);
        io::write_f32_raster(root / e.depth_path, frames[i].depth.data);
        m.frames.push_back(e);
    }
    save_manifest(manifest_path, m);
    return m;
}

} // namespace volsplat
