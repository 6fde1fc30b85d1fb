#pragma once
// PNG (libpng simplified API) and binary PPM reading/writing.

#include "fragmenta/errors.hpp"
#include "fragmenta/raster.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fragmenta::io {

struct RgbaImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data; // width * height * 4
};

inline RgbaImage read_png_rgba(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw DataError("cannot read PNG '" + path.string() + "': " + image.message);
    }
    image.format = PNG_FORMAT_RGBA;
    RgbaImage out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.data.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError("cannot decode PNG '" + path.string() + "': " + image.message);
    }
    return out;
}

inline void write_png_rgba(const std::filesystem::path& path, const RgbaImage& img) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGBA;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.data.data(), 0, nullptr)) {
        throw DataError("cannot write PNG '" + path.string() + "': " + image.message);
    }
}

inline void write_png_rgb(const std::filesystem::path& path, const RgbImage& img) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.data.data(), 0, nullptr)) {
        throw DataError("cannot write PNG '" + path.string() + "': " + image.message);
    }
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    auto next_token = [&in]() {
        std::string tok;
        char c;
        while (in.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(c);
        }
        return tok;
    };
    if (next_token() != "P6") throw DataError("'" + path.string() + "' is not a binary PPM");
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0 || maxval != 255) throw DataError("unsupported PPM '" + path.string() + "'");
    RgbImage img(w, h);
    in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (!in) throw DataError("truncated PPM '" + path.string() + "'");
    return img;
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
    std::ofstream out(path, std::ios::binary);
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

inline bool is_supported_image(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".ppm";
}

/// Reads a PNG or PPM as RGB; alpha is dropped.
inline RgbImage read_rgb(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ppm") return read_ppm(path);
    const RgbaImage rgba = read_png_rgba(path);
    RgbImage img(rgba.width, rgba.height);
    for (std::size_t i = 0, n = static_cast<std::size_t>(rgba.width) * rgba.height; i < n; ++i) {
        for (int c = 0; c < 3; ++c) img.data[i * 3 + c] = rgba.data[i * 4 + c];
    }
    return img;
}

} // namespace fragmenta::io
