// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tomeforge/tensor.hpp"

namespace tomeforge {

struct Pixmap {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel

    uint8_t* pixel(int y, int x) { return rgb.data() + 3 * (static_cast<size_t>(y) * width + x); }
    const uint8_t* pixel(int y, int x) const {
        return rgb.data() + 3 * (static_cast<size_t>(y) * width + x);
    }
};

Pixmap read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Pixmap& pixmap);

/// P6 bytes map to [0,1] floats, shape [3,H,W]. No dataset normalization is
/// applied; supply a raw f32 file for custom preprocessing.
Tensor image_from_pixmap(const Pixmap& pixmap);

/// Raw image file: exactly 3*size*size little-endian f32 values, [3,H,W]
/// row-major, no header.
Tensor read_raw_image(const std::string& path, int size);

/// Loads .ppm or raw .f32 by extension and validates against `size`.
Tensor load_image(const std::string& path, int size);

/// Deterministic synthetic input with values in [0,1).
Tensor synth_image(int size, RngStream rng);

}  // namespace tomeforge
