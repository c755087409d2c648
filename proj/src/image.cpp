// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/image.hpp"

#include <cctype>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tomeforge {

namespace {

// Reads one whitespace-separated PNM token, skipping '#' comments.
std::string next_pnm_token(std::istream& in) {
    std::string token;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!token.empty()) break;
            continue;
        }
        token.push_back(static_cast<char>(ch));
    }
    if (token.empty()) throw std::runtime_error("ppm: truncated header");
    return token;
}

}  // namespace

Pixmap read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ppm: cannot open " + path);
    if (next_pnm_token(in) != "P6") throw std::runtime_error("ppm: " + path + " is not a P6 pixmap");
    Pixmap pix;
    pix.width = std::stoi(next_pnm_token(in));
    pix.height = std::stoi(next_pnm_token(in));
    const int maxval = std::stoi(next_pnm_token(in));
    if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 is supported");
    if (pix.width <= 0 || pix.height <= 0) throw std::runtime_error("ppm: bad dimensions");
    pix.rgb.resize(static_cast<size_t>(pix.width) * pix.height * 3);
    in.read(reinterpret_cast<char*>(pix.rgb.data()), static_cast<std::streamsize>(pix.rgb.size()));
    if (!in) throw std::runtime_error("ppm: truncated pixel data in " + path);
    return pix;
}

void write_ppm(const std::string& path, const Pixmap& pixmap) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("ppm: cannot open " + path + " for writing");
    out << "P6\n" << pixmap.width << " " << pixmap.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixmap.rgb.data()),
              static_cast<std::streamsize>(pixmap.rgb.size()));
    if (!out) throw std::runtime_error("ppm: short write to " + path);
}

Tensor image_from_pixmap(const Pixmap& pixmap) {
    Tensor image({3, pixmap.height, pixmap.width});
    for (int y = 0; y < pixmap.height; ++y) {
        for (int x = 0; x < pixmap.width; ++x) {
            const uint8_t* px = pixmap.pixel(y, x);
            for (int ch = 0; ch < 3; ++ch) {
                image(ch, y, x) = static_cast<float>(px[ch]) / 255.0f;
            }
        }
    }
    return image;
}

Tensor read_raw_image(const std::string& path, int size) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("raw image: cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<int64_t>(in.tellg());
    const int64_t expected = static_cast<int64_t>(3) * size * size * 4;
    if (bytes != expected) {
        throw std::runtime_error("raw image: " + path + " holds " + std::to_string(bytes) +
                                 " bytes, expected " + std::to_string(expected) + " (3x" +
                                 std::to_string(size) + "x" + std::to_string(size) + " f32)");
    }
    in.seekg(0);
    std::vector<float> data(static_cast<size_t>(3) * size * size);
    in.read(reinterpret_cast<char*>(data.data()), expected);
    if (!in) throw std::runtime_error("raw image: short read from " + path);
    return Tensor({3, size, size}, std::move(data));
}

Tensor load_image(const std::string& path, int size) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".ppm") {
        const Pixmap pix = read_ppm(path);
        if (pix.width != size || pix.height != size) {
            throw std::runtime_error("image: " + path + " is " + std::to_string(pix.width) + "x" +
                                     std::to_string(pix.height) + ", model expects " +
                                     std::to_string(size) + "x" + std::to_string(size));
        }
        return image_from_pixmap(pix);
    }
    return read_raw_image(path, size);
}

Tensor synth_image(int size, RngStream rng) {
    Tensor image({3, size, size});
    for (int64_t i = 0; i < image.numel(); ++i) image(i) = rng.next_unit();
    return image;
}

}  // namespace tomeforge
