#include "vstream/nn.hpp"

#include <algorithm>
#include <cmath>

#include "vstream/errors.hpp"

namespace vstream {

Tensor randn_tensor(Shape shape, double stddev, Rng &rng, bool requires_grad) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (auto &x : v) {
        x = dist(rng);
    }
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

Linear::Linear(std::size_t in, std::size_t out, Rng &rng, double gain)
    : weight(randn_tensor({in, out}, gain / std::sqrt(static_cast<double>(in)), rng)),
      bias(Tensor::zeros({out}, true)) {}

void Linear::collect(ParamList &out, const std::string &prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim) : gamma(Tensor::full({dim}, 1.0, true)), beta(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(ParamList &out, const std::string &prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

Projector::Projector(std::size_t in, std::size_t hidden, std::size_t out, Rng &rng)
    : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

void Projector::collect(ParamList &out, const std::string &prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
}

void copy_values(const ParamList &dst, const ParamList &src) {
    if (dst.size() != src.size()) {
        throw ShapeError("copy_values: parameter count mismatch");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].name != src[i].name || dst[i].tensor.shape() != src[i].tensor.shape()) {
            throw ShapeError("copy_values: mismatch at " + dst[i].name);
        }
        auto out = Tensor(dst[i].tensor).mutable_values();
        auto in = src[i].tensor.values();
        std::copy(in.begin(), in.end(), out.begin());
    }
}

} // namespace vstream
