// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/weights_io.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace tomeforge {

namespace {

using nlohmann::json;

bool host_is_little_endian() {
    const uint16_t probe = 1;
    uint8_t byte;
    std::memcpy(&byte, &probe, 1);
    return byte == 1;
}

void byteswap_f32(std::vector<float>& data) {
    for (float& v : data) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        u = ((u & 0xFF000000u) >> 24) | ((u & 0x00FF0000u) >> 8) | ((u & 0x0000FF00u) << 8) |
            ((u & 0x000000FFu) << 24);
        std::memcpy(&v, &u, 4);
    }
}

}  // namespace

std::map<std::string, std::vector<int64_t>> expected_shapes(const ModelConfig& config,
                                                            bool with_dist_token) {
    config.validate();
    const int64_t c = config.embed_dim;
    const int64_t p = config.patch_size;
    const int64_t hidden = config.mlp_hidden();
    const int64_t tokens = config.num_patches() + 1 + (with_dist_token ? 1 : 0);

    std::map<std::string, std::vector<int64_t>> shapes;
    shapes["patch_embed.weight"] = {c, 3, p, p};
    shapes["patch_embed.bias"] = {c};
    shapes["pos_embed"] = {tokens, c};
    shapes["cls_token"] = {c};
    if (with_dist_token) shapes["dist_token"] = {c};
    for (int i = 0; i < config.depth; ++i) {
        const std::string b = "blocks." + std::to_string(i) + ".";
        shapes[b + "ln1.weight"] = {c};
        shapes[b + "ln1.bias"] = {c};
        shapes[b + "attn.qkv.weight"] = {3 * c, c};
        shapes[b + "attn.qkv.bias"] = {3 * c};
        shapes[b + "attn.proj.weight"] = {c, c};
        shapes[b + "attn.proj.bias"] = {c};
        shapes[b + "ln2.weight"] = {c};
        shapes[b + "ln2.bias"] = {c};
        shapes[b + "mlp.fc1.weight"] = {hidden, c};
        shapes[b + "mlp.fc1.bias"] = {hidden};
        shapes[b + "mlp.fc2.weight"] = {c, hidden};
        shapes[b + "mlp.fc2.bias"] = {c};
    }
    shapes["norm.weight"] = {c};
    shapes["norm.bias"] = {c};
    shapes["head.weight"] = {config.num_classes, c};
    shapes["head.bias"] = {config.num_classes};
    return shapes;
}

void save_weights(const std::string& path, const Weights& weights) {
    json header = json::object();
    uint64_t offset = 0;
    for (const auto& [name, tensor] : weights.tensors) {
        const uint64_t length = static_cast<uint64_t>(tensor.numel()) * 4;
        header[name] = {{"dtype", "f32"},
                        {"shape", tensor.shape()},
                        {"offset", offset},
                        {"length", length}};
        offset += length;
    }
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw WeightsError(WeightsError::Kind::Io, "", "cannot open " + path + " for writing");
    out.write("VTW1", 4);
    const uint64_t header_len = header_text.size();
    uint8_t len_bytes[8];
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<uint8_t>((header_len >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(len_bytes), 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, tensor] : weights.tensors) {
        if (host_is_little_endian()) {
            out.write(reinterpret_cast<const char*>(tensor.data()),
                      static_cast<std::streamsize>(tensor.numel() * 4));
        } else {
            std::vector<float> swapped(tensor.data(), tensor.data() + tensor.numel());
            byteswap_f32(swapped);
            out.write(reinterpret_cast<const char*>(swapped.data()),
                      static_cast<std::streamsize>(tensor.numel() * 4));
        }
    }
    if (!out) throw WeightsError(WeightsError::Kind::Io, "", "short write to " + path);
}

Weights load_weights(const std::string& path, const ModelConfig& config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WeightsError(WeightsError::Kind::Io, "", "cannot open weights file " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "VTW1", 4) != 0) {
        throw WeightsError(WeightsError::Kind::BadMagic, "", path + ": not a VTW1 file");
    }
    uint8_t len_bytes[8];
    in.read(reinterpret_cast<char*>(len_bytes), 8);
    if (!in) throw WeightsError(WeightsError::Kind::BadHeader, "", path + ": truncated header length");
    uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i) header_len |= static_cast<uint64_t>(len_bytes[i]) << (8 * i);

    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw WeightsError(WeightsError::Kind::BadHeader, "", path + ": truncated header");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw WeightsError(WeightsError::Kind::BadHeader, "", path + ": bad header JSON: " + e.what());
    }

    const std::streampos payload_start = in.tellg();
    Weights weights;
    for (const auto& [name, entry] : header.items()) {
        if (!entry.contains("dtype") || entry["dtype"] != "f32") {
            throw WeightsError(WeightsError::Kind::BadHeader, name, name + ": unsupported dtype");
        }
        std::vector<int64_t> shape = entry["shape"].get<std::vector<int64_t>>();
        const uint64_t offset = entry["offset"].get<uint64_t>();
        const uint64_t length = entry["length"].get<uint64_t>();
        int64_t numel = 1;
        for (int64_t d : shape) numel *= d;
        if (static_cast<uint64_t>(numel) * 4 != length) {
            throw WeightsError(WeightsError::Kind::BadHeader, name,
                               name + ": length " + std::to_string(length) + " does not match shape " +
                                   shape_str(shape));
        }
        std::vector<float> data(static_cast<size_t>(numel));
        in.seekg(payload_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(length));
        if (!in) throw WeightsError(WeightsError::Kind::Io, name, name + ": truncated payload");
        if (!host_is_little_endian()) byteswap_f32(data);
        weights.tensors.emplace(name, Tensor(std::move(shape), std::move(data)));
    }

    const bool with_dist = weights.has("dist_token");
    for (const auto& [name, shape] : expected_shapes(config, with_dist)) {
        auto it = weights.tensors.find(name);
        if (it == weights.tensors.end()) {
            throw WeightsError(WeightsError::Kind::MissingTensor, name, path + ": missing tensor " + name);
        }
        if (it->second.shape() != shape) {
            throw WeightsError(WeightsError::Kind::ShapeMismatch, name,
                               path + ": tensor " + name + " has shape " + shape_str(it->second.shape()) +
                                   ", expected " + shape_str(shape));
        }
    }
    return weights;
}

Weights synth_weights(const ModelConfig& config, const RngStream& rng) {
    Weights weights;
    for (const auto& [name, shape] : expected_shapes(config, false)) {
        Tensor t(shape);
        const bool is_bias = name.ends_with(".bias") || name.ends_with("bias");
        const bool is_ln_weight = (name.find("ln1.weight") != std::string::npos) ||
                                  (name.find("ln2.weight") != std::string::npos) ||
                                  (name == "norm.weight");
        if (is_ln_weight) {
            for (int64_t i = 0; i < t.numel(); ++i) t(i) = 1.0f;
        } else if (!is_bias) {
            RngStream stream = rng.split(fnv1a64(name));
            for (int64_t i = 0; i < t.numel(); ++i) t(i) = 0.02f * stream.next_gaussian();
        }
        weights.tensors.emplace(name, std::move(t));
    }
    return weights;
}

}  // namespace tomeforge
