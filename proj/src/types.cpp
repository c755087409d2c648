// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/types.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace tomeforge {

void ModelConfig::validate() const {
    if (depth < 1) throw std::invalid_argument("ModelConfig: depth must be >= 1");
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
        throw std::invalid_argument("ModelConfig: embed_dim " + std::to_string(embed_dim) +
                                    " not divisible by heads " + std::to_string(heads));
    }
    if (patch_size < 1 || image_size % patch_size != 0) {
        throw std::invalid_argument("ModelConfig: image_size " + std::to_string(image_size) +
                                    " not divisible by patch_size " + std::to_string(patch_size));
    }
    if (!has_class_token) throw std::invalid_argument("ModelConfig: class token is required");
}

ModelConfig ModelConfig::preset(std::string_view name) {
    ModelConfig c;
    if (name == "vit-s" || name == "deit-s") {
        c.depth = 12; c.embed_dim = 384; c.heads = 6;
    } else if (name == "vit-b") {
        c.depth = 12; c.embed_dim = 768; c.heads = 12;
    } else if (name == "vit-l") {
        c.depth = 24; c.embed_dim = 1024; c.heads = 16;
    } else {
        throw std::invalid_argument("unknown model preset: " + std::string(name));
    }
    return c;
}

const Tensor& Weights::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("weights: missing tensor " + name);
    return it->second;
}

void TokenState::check_invariants(int expected_patches) const {
    const int n = count();
    if (static_cast<int>(sizes.size()) != n || static_cast<int>(members.size()) != n ||
        static_cast<int>(loc_ids.size()) != n) {
        throw std::logic_error("TokenState: parallel arrays out of sync");
    }
    double size_sum = 0.0;
    std::set<int32_t> seen;
    size_t member_total = 0;
    for (int i = 0; i < n; ++i) {
        if (is_special(i)) continue;
        size_sum += sizes[i];
        if (sizes[i] != static_cast<float>(members[i].size())) {
            throw std::logic_error("TokenState: sizes[" + std::to_string(i) + "] != |members|");
        }
        member_total += members[i].size();
        for (int32_t m : members[i]) {
            if (!seen.insert(m).second) {
                throw std::logic_error("TokenState: patch " + std::to_string(m) + " owned twice");
            }
            if (m < 0 || m >= expected_patches) {
                throw std::logic_error("TokenState: patch id " + std::to_string(m) + " out of range");
            }
        }
    }
    if (size_sum != static_cast<double>(expected_patches)) {
        throw std::logic_error("TokenState: size sum " + std::to_string(size_sum) + " != patch count " +
                               std::to_string(expected_patches));
    }
    if (member_total != static_cast<size_t>(expected_patches)) {
        throw std::logic_error("TokenState: members cover " + std::to_string(member_total) + " of " +
                               std::to_string(expected_patches) + " patches");
    }
}

}  // namespace tomeforge
