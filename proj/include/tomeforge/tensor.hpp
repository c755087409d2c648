// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tomeforge {

/// Dense row-major f32 tensor. All kernels in this project store f32 and may
/// accumulate in a wider type internally; results are deterministic for a
/// given binary (pure functions, fixed accumulation order).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<float> data);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, float value);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    // 1/2/3-d element access; no bounds checks beyond debug builds.
    float& operator()(int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator()(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    float& operator()(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    float operator()(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    float& operator()(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    float operator()(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    // Pointer to the start of row i of a rank-2 tensor.
    float* row(int64_t i) { return data_.data() + i * shape_[1]; }
    const float* row(int64_t i) const { return data_.data() + i * shape_[1]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    const std::vector<float>& storage() const { return data_; }
    std::vector<float>& storage() { return data_; }

private:
    std::vector<int64_t> shape_;
    std::vector<float> data_;
};

std::string shape_str(const std::vector<int64_t>& shape);

/// Deterministic splittable pseudo-random stream.
///
/// Algorithm (fixed; tests reimplement it as an oracle):
///   - core generator: SplitMix64
///       state += 0x9E3779B97F4A7C15
///       z = state
///       z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///       z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///       return z ^ (z >> 31)
///   - unit float:  (next_u64() >> 40) * 2^-24            -> [0, 1)
///   - gaussian:    Box-Muller, two draws per sample:
///       u1 = (next_u64() >> 11) * 2^-53
///       u2 = (next_u64() >> 11) * 2^-53
///       g  = sqrt(-2 * log(1 - u1)) * cos(2*pi*u2)       (computed in f64)
///   - split(tag):  child seed = mix64(seed + 0x9E3779B97F4A7C15 * (tag + 1))
///     where mix64 is the SplitMix64 finalizer above (no increment).
///     Splitting is keyed off the construction seed, so per-tensor streams do
///     not depend on generation order.
///
/// Identical seed gives byte-identical output across runs.
struct RngStream {
    explicit RngStream(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t next_u64();
    float next_unit();
    float next_gaussian();
    RngStream split(uint64_t tag) const;

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t state_;
};

uint64_t splitmix64_mix(uint64_t z);
uint64_t fnv1a64(std::string_view s);

/// c[i,j] = sum_k a[i,k] * b[k,j]; f32 accumulation in ascending-k order.
/// Throws std::invalid_argument naming both shapes when inner extents differ.
Tensor matmul(const Tensor& a, const Tensor& b);

/// y = x * w^T + b with w stored [out, in] (torch linear convention).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Row-wise softmax over the last dimension, computed with max subtraction.
/// Internals run in f64 so rows sum to 1 within 1e-6.
Tensor softmax_lastdim(const Tensor& x);

/// Per-row normalization over the last dimension: zero mean / unit variance
/// (f64 accumulation), then y = gamma * x_hat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-6f);

/// GELU, tanh approximation with coefficients 0.7978845608 and 0.044715.
/// The fixed coefficients keep golden outputs portable across builds.
void gelu_tanh_inplace(Tensor& x);

void add_inplace(Tensor& x, const Tensor& y);

}  // namespace tomeforge
