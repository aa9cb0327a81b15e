#pragma once

#include <string>
#include <vector>

#include "vstream/tensor.hpp"

namespace vstream {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

void zero_grads(const ParamList &params);
double grad_norm(const ParamList &params);

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 1.0; // <= 0 disables global-norm clipping
};

// Adam over a fixed parameter list. Parameters without a gradient this step
// are left untouched (their moments are not advanced either).
class Adam {
public:
    Adam(ParamList params, AdamOptions options);

    void step(double lr);
    void step() { step(options_.lr); }
    void zero_grad() { zero_grads(params_); }
    const ParamList &params() const { return params_; }
    long steps_taken() const { return t_; }

private:
    ParamList params_;
    AdamOptions options_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

// Cosine decay from base to floor over total steps.
double cosine_lr(double base, long step, long total, double floor = 0.0);

} // namespace vstream
