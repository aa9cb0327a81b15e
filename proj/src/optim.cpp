#include "vstream/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vstream {

void zero_grads(const ParamList &params) {
    for (const auto &p : params) {
        auto t = p.tensor;
        t.zero_grad();
    }
}

double grad_norm(const ParamList &params) {
    double ss = 0.0;
    for (const auto &p : params) {
        for (double g : p.tensor.grad()) {
            ss += g * g;
        }
    }
    return std::sqrt(ss);
}

Adam::Adam(ParamList params, AdamOptions options) : params_(std::move(params)), options_(options) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].tensor.numel(), 0.0);
        v_[i].assign(params_[i].tensor.numel(), 0.0);
    }
}

void Adam::step(double lr) {
    ++t_;
    double clip = 1.0;
    if (options_.clip_norm > 0.0) {
        const double norm = grad_norm(params_);
        if (norm > options_.clip_norm) {
            clip = options_.clip_norm / norm;
        }
    }
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto &t = params_[i].tensor;
        if (!t.has_grad()) {
            continue;
        }
        auto g = t.grad();
        auto w = t.mutable_values();
        auto &m = m_[i];
        auto &v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j] * clip;
            m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * gj;
            v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * gj * gj;
            const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
            w[j] -= lr * (update + options_.weight_decay * w[j]);
        }
    }
}

double cosine_lr(double base, long step, long total, double floor) {
    if (total <= 0) {
        return base;
    }
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

} // namespace vstream
