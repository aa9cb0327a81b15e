#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "vstream/ops.hpp"
#include "vstream/optim.hpp"

namespace vstream {

using Rng = std::mt19937_64;

Tensor randn_tensor(Shape shape, double stddev, Rng &rng, bool requires_grad = true);

struct Linear {
    Tensor weight; // [in, out]
    Tensor bias;   // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng &rng, double gain = 1.0);

    Tensor operator()(const Tensor &x) const { return add_bias(matmul(x, weight), bias); }
    void collect(ParamList &out, const std::string &prefix) const;
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim);

    Tensor operator()(const Tensor &x) const { return layer_norm(x, gamma, beta, 1e-5); }
    void collect(ParamList &out, const std::string &prefix) const;
};

// Two affine layers with a GELU between them.
struct Projector {
    Linear fc1;
    Linear fc2;

    Projector() = default;
    Projector(std::size_t in, std::size_t hidden, std::size_t out, Rng &rng);

    Tensor operator()(const Tensor &x) const { return fc2(gelu(fc1(x))); }
    std::size_t in_dim() const { return fc1.weight.dim(0); }
    std::size_t out_dim() const { return fc2.weight.dim(1); }
    void collect(ParamList &out, const std::string &prefix) const;
};

// Deep-copies values from src into dst; names and shapes must match.
void copy_values(const ParamList &dst, const ParamList &src);

} // namespace vstream
