// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "tomeforge/image.hpp"
#include "tomeforge/types.hpp"

namespace tomeforge {

struct TintColor {
    uint8_t r, g, b;
};

/// Deterministic tint for a merge-group key. Injective for keys below 2^21
/// (odd-multiplier mixing of 21 bits, 7 per channel, offset into 128..255),
/// so distinct keys always render distinct colors.
TintColor tint_for_key(int32_t key);

/// Renders the final merge map: every source patch is tinted by the color of
/// its final token, keyed by that token's smallest member index. Patch cells
/// are scale x scale pixels with a 1-px border in a darkened shade of the
/// same tint.
Pixmap render_merge_map(const TokenState& final_state, int grid_side, int scale);

}  // namespace tomeforge
