// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/visualize.hpp"

#include <stdexcept>
#include <vector>

namespace tomeforge {

TintColor tint_for_key(int32_t key) {
    const uint32_t mixed = (static_cast<uint32_t>(key) * 0x9E3779B1u) & 0x1FFFFFu;
    const uint8_t r = static_cast<uint8_t>(128 + (mixed & 0x7F));
    const uint8_t g = static_cast<uint8_t>(128 + ((mixed >> 7) & 0x7F));
    const uint8_t b = static_cast<uint8_t>(128 + ((mixed >> 14) & 0x7F));
    return {r, g, b};
}

Pixmap render_merge_map(const TokenState& final_state, int grid_side, int scale) {
    if (scale < 1) throw std::invalid_argument("render_merge_map: scale must be >= 1");
    const int patches = grid_side * grid_side;

    // patch -> smallest member index of its owning token
    std::vector<int32_t> key_of_patch(static_cast<size_t>(patches), -1);
    for (int i = 0; i < final_state.count(); ++i) {
        const auto& members = final_state.members[static_cast<size_t>(i)];
        if (members.empty()) continue;
        const int32_t key = members.front();  // members are kept sorted
        for (int32_t patch : members) {
            if (patch < 0 || patch >= patches) {
                throw std::invalid_argument("render_merge_map: patch id " + std::to_string(patch) +
                                            " outside " + std::to_string(grid_side) + "x" +
                                            std::to_string(grid_side) + " grid");
            }
            if (key_of_patch[static_cast<size_t>(patch)] != -1) {
                throw std::invalid_argument("render_merge_map: patch " + std::to_string(patch) +
                                            " owned by two tokens");
            }
            key_of_patch[static_cast<size_t>(patch)] = key;
        }
    }
    for (int patch = 0; patch < patches; ++patch) {
        if (key_of_patch[static_cast<size_t>(patch)] == -1) {
            throw std::invalid_argument("render_merge_map: patch " + std::to_string(patch) +
                                        " is not covered by any token");
        }
    }

    Pixmap pix;
    pix.width = grid_side * scale;
    pix.height = grid_side * scale;
    pix.rgb.assign(static_cast<size_t>(pix.width) * pix.height * 3, 0);

    for (int py = 0; py < grid_side; ++py) {
        for (int px = 0; px < grid_side; ++px) {
            const TintColor tint = tint_for_key(key_of_patch[static_cast<size_t>(py * grid_side + px)]);
            const TintColor border{static_cast<uint8_t>(tint.r / 2), static_cast<uint8_t>(tint.g / 2),
                                   static_cast<uint8_t>(tint.b / 2)};
            for (int dy = 0; dy < scale; ++dy) {
                for (int dx = 0; dx < scale; ++dx) {
                    const bool on_border =
                        scale > 2 && (dy == 0 || dx == 0 || dy == scale - 1 || dx == scale - 1);
                    const TintColor& c = on_border ? border : tint;
                    uint8_t* out = pix.pixel(py * scale + dy, px * scale + dx);
                    out[0] = c.r;
                    out[1] = c.g;
                    out[2] = c.b;
                }
            }
        }
    }
    return pix;
}

}  // namespace tomeforge
