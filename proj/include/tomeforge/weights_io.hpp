// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "tomeforge/types.hpp"

namespace tomeforge {

/// VTW1 weight file:
///   magic "VTW1" (4 bytes)
///   u64 little-endian header byte length
///   UTF-8 JSON header: { name: {"dtype":"f32", "shape":[...],
///                               "offset":bytes, "length":bytes}, ... }
///     (offsets are relative to the start of the payload)
///   raw little-endian f32 row-major payload
struct WeightsError : std::runtime_error {
    enum class Kind { BadMagic, MissingTensor, ShapeMismatch, Io, BadHeader };
    Kind kind;
    std::string tensor;

    WeightsError(Kind k, std::string tensor_name, const std::string& message)
        : std::runtime_error(message), kind(k), tensor(std::move(tensor_name)) {}
};

/// Shapes every ModelConfig demands, by canonical tensor name. `dist_token`
/// is optional in files and not part of this map.
std::map<std::string, std::vector<int64_t>> expected_shapes(const ModelConfig& config,
                                                            bool with_dist_token = false);

void save_weights(const std::string& path, const Weights& weights);

/// Reads a VTW1 file and validates every required tensor against the config.
/// Unknown extra tensors are kept; a `dist_token` of shape [C] enables the
/// distillation token (and grows the expected pos_embed accordingly).
Weights load_weights(const std::string& path, const ModelConfig& config);

/// Deterministic Gaussian initialization (std 0.02, biases zero, LN weight 1).
/// Each tensor draws from rng.split(fnv1a64(name)), so values do not depend
/// on generation order.
Weights synth_weights(const ModelConfig& config, const RngStream& rng);

}  // namespace tomeforge
