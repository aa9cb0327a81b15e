#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "vstream/ops.hpp"

namespace vstream::testing {

inline Tensor uniform(Shape shape, std::mt19937_64 &rng, bool requires_grad = true, double lo = -1.0,
                      double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto &x : v) x = d(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Reduces any output to a scalar with fixed random weights so every output
// element carries a distinct upstream gradient.
inline Tensor weighted_sum(const Tensor &y, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    auto w = uniform(y.shape(), rng, false);
    return sum(mul(y, w));
}

struct GradCheck {
    double worst = 0.0;   // largest |a - n| / max(|a|, |n|) over checked entries
    std::size_t checked = 0;
    bool ok = true;
};

// Central differences (step h) against the analytic gradient of `loss` for
// every entry of every input, or for `max_entries` sampled entries per input.
// An entry passes when |a - n| <= rtol * max(|a|, |n|) + atol.
inline GradCheck check_gradients(const std::function<Tensor()> &loss, const std::vector<Tensor> &inputs,
                                 double h = 1e-5, double rtol = 1e-4, double atol = 1e-9,
                                 std::size_t max_entries = 0, std::uint64_t seed = 5) {
    for (auto t : inputs) t.zero_grad();
    backward(loss());
    std::vector<std::vector<double>> analytic;
    for (const auto &t : inputs) {
        if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
        else analytic.emplace_back(t.numel(), 0.0);
    }
    GradCheck out;
    std::mt19937_64 rng(seed);
    NoGradGuard ng;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Tensor t = inputs[i];
        std::vector<std::size_t> idx(t.numel());
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
        if (max_entries > 0 && idx.size() > max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(max_entries);
        }
        for (auto k : idx) {
            auto v = t.mutable_values();
            const double orig = v[k];
            v[k] = orig + h;
            const double fp = loss().item();
            v[k] = orig - h;
            const double fm = loss().item();
            v[k] = orig;
            const double n = (fp - fm) / (2.0 * h);
            const double a = analytic[i][k];
            const double scale = std::max(std::abs(a), std::abs(n));
            const double err = std::abs(a - n);
            if (scale > 1e-6) out.worst = std::max(out.worst, err / scale);
            if (err > rtol * scale + atol) out.ok = false;
            ++out.checked;
        }
    }
    return out;
}

} // namespace vstream::testing
