// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
//
// Binary raster formats: 8-bit PPM/PGM for images, raw little-endian float32
// for depth and alpha rasters, and little-endian scalar helpers shared by the
// snapshot and checkpoint writers.
#pragma once

#include "volsplat/core.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace volsplat::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void
write_le(std::ostream &out, T value) {
    out.write(reinterpret_cast<const char *>(&value), sizeof(T));
}

template <typename T>
T
read_le(std::istream &in, const char *what) {
    T value{};
    in.read(reinterpret_cast<char *>(&value), sizeof(T));
    if (in.gcount() != std::streamsize(sizeof(T))) {
        throw Error(std::string("truncated file while reading ") + what);
    }
    return value;
}

inline std::ifstream
open_in(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("missing file: " + path.string());
    }
    return in;
}

inline std::ofstream
open_out(const std::filesystem::path &path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write file: " + path.string());
    }
    return out;
}

inline std::uint8_t
to_byte(double v) {
    return std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Writes an RGB image as binary PPM (P6) or a 1-channel image as PGM (P5).
inline void
write_image(const std::filesystem::path &path, const Image &img) {
    require(img.channels == 3 || img.channels == 1, "write_image: need 1 or 3 channels");
    std::ofstream out = open_out(path);
    out << (img.channels == 3 ? "P6" : "P5") << "\n"
        << img.width << " " << img.height << "\n255\n";
    std::vector<char> bytes(img.data.size());
    std::transform(img.data.begin(), img.data.end(), bytes.begin(),
                   [](double v) { return char(to_byte(v)); });
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

namespace detail {
inline void
skip_ws_and_comments(std::istream &in) {
    while (true) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}
} // namespace detail

inline Image
read_image(const std::filesystem::path &path) {
    std::ifstream in = open_in(path);
    std::string magic;
    in >> magic;
    require(magic == "P6" || magic == "P5", "read_image: unsupported format in " + path.string());
    int w = 0, h = 0, maxval = 0;
    detail::skip_ws_and_comments(in);
    in >> w;
    detail::skip_ws_and_comments(in);
    in >> h;
    detail::skip_ws_and_comments(in);
    in >> maxval;
    in.get();
    require(in && w > 0 && h > 0 && maxval == 255, "read_image: bad header in " + path.string());
    Image img(w, h, magic == "P6" ? 3 : 1);
    std::vector<unsigned char> bytes(img.data.size());
    in.read(reinterpret_cast<char *>(bytes.data()), std::streamsize(bytes.size()));
    if (in.gcount() != std::streamsize(bytes.size())) {
        throw Error("truncated image: " + path.string());
    }
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img.data[i] = bytes[i] / 255.0;
    }
    return img;
}

/// Raw row-major little-endian float32 raster; the resolution lives elsewhere.
inline void
write_f32_raster(const std::filesystem::path &path, const std::vector<float> &values) {
    std::ofstream out = open_out(path);
    out.write(reinterpret_cast<const char *>(values.data()),
              std::streamsize(values.size() * sizeof(float)));
}

inline std::vector<float>
read_f32_raster(const std::filesystem::path &path, int width, int height) {
    std::ifstream in    = open_in(path);
    const auto bytes    = std::filesystem::file_size(path);
    const auto expected = std::uintmax_t(width) * height * sizeof(float);
    if (bytes != expected) {
        std::ostringstream msg;
        msg << "resolution mismatch: " << path.string() << " holds " << bytes / sizeof(float)
            << " samples, expected " << width << "x" << height;
        throw Error(msg.str());
    }
    std::vector<float> values(std::size_t(width) * height);
    in.read(reinterpret_cast<char *>(values.data()), std::streamsize(expected));
    return values;
}

} // namespace volsplat::io
