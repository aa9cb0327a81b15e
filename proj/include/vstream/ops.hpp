#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vstream/tensor.hpp"

namespace vstream {

// Differentiable primitives. Row-wise ops treat the last extent as columns and
// fold everything before it into rows.

Tensor matmul(const Tensor &a, const Tensor &b);    // [m,k] x [k,n]
Tensor matmul_nt(const Tensor &a, const Tensor &b); // [m,k] x [n,k]^T
Tensor transpose(const Tensor &a);
Tensor reshape(const Tensor &a, Shape shape);

Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double factor);
Tensor add_bias(const Tensor &x, const Tensor &bias); // bias broadcast over rows
Tensor mul_scalar(const Tensor &x, const Tensor &s);  // s has one element

Tensor gelu(const Tensor &x);
Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta, double eps = 1e-9);

// Row softmax. With `allow` (rows*cols flags) blocked entries are exactly zero
// and normalization runs over allowed entries only; every row needs one.
Tensor softmax(const Tensor &x, std::span<const std::uint8_t> allow = {});

// Mean token cross-entropy; target -1 is ignored.
Tensor cross_entropy(const Tensor &logits, std::span<const int> targets);

// sum_i target_i * (log target_i - log pred_i), 0 log 0 := 0, pred clamped at 1e-12.
Tensor kl_divergence(std::span<const double> target, const Tensor &pred);

Tensor embedding(const Tensor &table, std::span<const int> ids);

// Row j averages input rows [floor(j*L/P), ceil((j+1)*L/P)).
Tensor adaptive_avg_pool_1d(const Tensor &x, std::size_t bins);

Tensor concat_rows(const std::vector<Tensor> &parts);
Tensor slice_rows(const Tensor &x, std::size_t begin, std::size_t end);
Tensor concat_cols(const std::vector<Tensor> &parts);
Tensor slice_cols(const Tensor &x, std::size_t begin, std::size_t end);
Tensor element(const Tensor &x, std::size_t index);

Tensor sum(const Tensor &x);
Tensor mean(const Tensor &x);

Tensor l2_normalize_rows(const Tensor &x);

// Forward value is `hard`; the gradient passes to `soft` unchanged.
Tensor straight_through(std::span<const double> hard, const Tensor &soft);

} // namespace vstream
