// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tomeforge {

namespace {

int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw std::invalid_argument("Tensor: negative extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(checked_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != static_cast<int64_t>(data_.size())) {
        throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::full(std::vector<int64_t> shape, float value) {
    Tensor t(std::move(shape));
    for (float& v : t.data_) v = value;
    return t;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

uint64_t splitmix64_mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

uint64_t RngStream::next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return splitmix64_mix(state_);
}

float RngStream::next_unit() {
    return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
}

float RngStream::next_gaussian() {
    const double u1 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(1.0 - u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    return static_cast<float>(radius * std::cos(theta));
}

RngStream RngStream::split(uint64_t tag) const {
    return RngStream(splitmix64_mix(seed_ + 0x9E3779B97F4A7C15ULL * (tag + 1)));
}

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = b.dim(0), n = b.dim(1);
    Tensor c({m, n});
    // i,k,j loop order: each c[i,j] still accumulates in ascending k, matching
    // the naive triple loop elementwise, while streaming b rows.
    for (int64_t i = 0; i < m; ++i) {
        float* crow = c.row(i);
        const float* arow = a.row(i);
        for (int64_t kk = 0; kk < k; ++kk) {
            const float aik = arow[kk];
            const float* brow = b.row(kk);
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
        throw std::invalid_argument("linear: incompatible shapes " + shape_str(x.shape()) + " x " +
                                    shape_str(w.shape()) + "^T");
    }
    const int64_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
    if (b.numel() != out) {
        throw std::invalid_argument("linear: bias shape " + shape_str(b.shape()) + " does not match out=" +
                                    std::to_string(out));
    }
    Tensor y({n, out});
    for (int64_t i = 0; i < n; ++i) {
        const float* xrow = x.row(i);
        float* yrow = y.row(i);
        for (int64_t o = 0; o < out; ++o) {
            const float* wrow = w.row(o);
            float acc = 0.0f;
            for (int64_t kk = 0; kk < in; ++kk) acc += xrow[kk] * wrow[kk];
            yrow[o] = acc + b(o);
        }
    }
    return y;
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) < 1) {
        throw std::invalid_argument("softmax_lastdim: needs a non-empty last dimension, got " +
                                    shape_str(x.shape()));
    }
    const int64_t width = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / width;
    Tensor y(x.shape());
    std::vector<double> e(static_cast<size_t>(width));
    for (int64_t r = 0; r < rows; ++r) {
        const float* in = x.data() + r * width;
        float* out = y.data() + r * width;
        float mx = in[0];
        for (int64_t j = 1; j < width; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < width; ++j) {
            e[static_cast<size_t>(j)] = std::exp(static_cast<double>(in[j]) - static_cast<double>(mx));
            sum += e[static_cast<size_t>(j)];
        }
        for (int64_t j = 0; j < width; ++j) out[j] = static_cast<float>(e[static_cast<size_t>(j)] / sum);
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    const int64_t width = x.dim(x.rank() - 1);
    if (gamma.numel() != width || beta.numel() != width) {
        throw std::invalid_argument("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                                    shape_str(beta.shape()) + " do not match channels " + std::to_string(width));
    }
    if (eps <= 0.0f) throw std::invalid_argument("layer_norm: eps must be positive");
    const int64_t rows = x.numel() / width;
    Tensor y(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const float* in = x.data() + r * width;
        float* out = y.data() + r * width;
        double mean = 0.0;
        for (int64_t j = 0; j < width; ++j) mean += in[j];
        mean /= static_cast<double>(width);
        double var = 0.0;
        for (int64_t j = 0; j < width; ++j) {
            const double d = static_cast<double>(in[j]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(width);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        for (int64_t j = 0; j < width; ++j) {
            const float xhat = static_cast<float>((static_cast<double>(in[j]) - mean) * inv);
            out[j] = gamma(j) * xhat + beta(j);
        }
    }
    return y;
}

void gelu_tanh_inplace(Tensor& x) {
    constexpr float kSqrt2OverPi = 0.7978845608f;
    constexpr float kCubic = 0.044715f;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float v = x(i);
        const float inner = kSqrt2OverPi * (v + kCubic * v * v * v);
        x(i) = 0.5f * v * (1.0f + std::tanh(inner));
    }
}

void add_inplace(Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) {
        throw std::invalid_argument("add_inplace: shape mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(y.shape()));
    }
    for (int64_t i = 0; i < x.numel(); ++i) x(i) += y(i);
}

}  // namespace tomeforge
