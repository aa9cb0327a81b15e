#include "vstream/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "vstream/errors.hpp"

namespace vstream {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const std::vector<double> &v, std::size_t r, std::size_t c) {
    return ConstMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

MutMap as_mat(std::vector<double> &v, std::size_t r, std::size_t c) {
    return MutMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_rank2(const Tensor &t, const char *op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " + shape_str(t.shape()));
    }
}

void require_same(const Tensor &a, const Tensor &b, const char *op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

Node &parent(Node &self, std::size_t i) { return *self.parents[i]; }

bool wants(Node &self, std::size_t i) { return self.parents[i]->requires_grad; }

} // namespace

Tensor matmul(const Tensor &a, const Tensor &b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    as_mat(out, m, n).noalias() = as_mat(a.node().value, m, k) * as_mat(b.node().value, k, n);
    return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node &self) {
        auto g = as_mat(self.grad, m, n);
        if (wants(self, 0)) {
            as_mat(parent(self, 0).grad_buffer(), m, k).noalias() += g * as_mat(parent(self, 1).value, k, n).transpose();
        }
        if (wants(self, 1)) {
            as_mat(parent(self, 1).grad_buffer(), k, n).noalias() += as_mat(parent(self, 0).value, m, k).transpose() * g;
        }
    });
}

Tensor matmul_nt(const Tensor &a, const Tensor &b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw ShapeError("matmul_nt: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
    }
    std::vector<double> out(m * n);
    as_mat(out, m, n).noalias() = as_mat(a.node().value, m, k) * as_mat(b.node().value, n, k).transpose();
    return make_result("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](Node &self) {
        auto g = as_mat(self.grad, m, n);
        if (wants(self, 0)) {
            as_mat(parent(self, 0).grad_buffer(), m, k).noalias() += g * as_mat(parent(self, 1).value, n, k);
        }
        if (wants(self, 1)) {
            as_mat(parent(self, 1).grad_buffer(), n, k).noalias() += g.transpose() * as_mat(parent(self, 0).value, m, k);
        }
    });
}

Tensor transpose(const Tensor &a) {
    require_rank2(a, "transpose");
    const auto m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    as_mat(out, n, m) = as_mat(a.node().value, m, n).transpose();
    return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](Node &self) {
        as_mat(parent(self, 0).grad_buffer(), m, n) += as_mat(self.grad, n, m).transpose();
    });
}

Tensor reshape(const Tensor &a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    return make_result("reshape", std::move(shape), a.to_vector(), {a}, [](Node &self) {
        auto &g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

Tensor add(const Tensor &a, const Tensor &b) {
    require_same(a, b, "add");
    std::vector<double> out(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    return make_result("add", a.shape(), std::move(out), {a, b}, [](Node &self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (wants(self, p)) {
                auto &g = parent(self, p).grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

Tensor sub(const Tensor &a, const Tensor &b) {
    require_same(a, b, "sub");
    std::vector<double> out(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= bv[i];
    }
    return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node &self) {
        if (wants(self, 0)) {
            auto &g = parent(self, 0).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (wants(self, 1)) {
            auto &g = parent(self, 1).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor &a, const Tensor &b) {
    require_same(a, b, "mul");
    std::vector<double> out(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= bv[i];
    }
    return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node &self) {
        auto &av = parent(self, 0).value;
        auto &bv = parent(self, 1).value;
        if (wants(self, 0)) {
            auto &g = parent(self, 0).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * bv[i];
            }
        }
        if (wants(self, 1)) {
            auto &g = parent(self, 1).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * av[i];
            }
        }
    });
}

Tensor scale(const Tensor &a, double factor) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto &x : out) {
        x *= factor;
    }
    return make_result("scale", a.shape(), std::move(out), {a}, [factor](Node &self) {
        auto &g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * factor;
        }
    });
}

Tensor add_bias(const Tensor &x, const Tensor &bias) {
    const auto n = x.cols();
    if (bias.numel() != n) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
    }
    const auto r = x.rows();
    std::vector<double> out(x.values().begin(), x.values().end());
    auto bv = bias.values();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] += bv[j];
        }
    }
    return make_result("add_bias", x.shape(), std::move(out), {x, bias}, [r, n](Node &self) {
        if (wants(self, 0)) {
            auto &g = parent(self, 0).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (wants(self, 1)) {
            auto &g = parent(self, 1).grad_buffer();
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    g[j] += self.grad[i * n + j];
                }
            }
        }
    });
}

Tensor mul_scalar(const Tensor &x, const Tensor &s) {
    if (s.numel() != 1) {
        throw ShapeError("mul_scalar: factor must have one element, got " + shape_str(s.shape()));
    }
    const double f = s.item();
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto &v : out) {
        v *= f;
    }
    return make_result("mul_scalar", x.shape(), std::move(out), {x, s}, [](Node &self) {
        const double f = parent(self, 1).value[0];
        auto &xv = parent(self, 0).value;
        if (wants(self, 0)) {
            auto &g = parent(self, 0).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * f;
            }
        }
        if (wants(self, 1)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < xv.size(); ++i) {
                acc += self.grad[i] * xv[i];
            }
            parent(self, 1).grad_buffer()[0] += acc;
        }
    });
}

Tensor gelu(const Tensor &x) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto &v : out) {
        v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    }
    return make_result("gelu", x.shape(), std::move(out), {x}, [](Node &self) {
        auto &xv = parent(self, 0).value;
        auto &g = parent(self, 0).grad_buffer();
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta, double eps) {
    const auto n = x.cols(), r = x.rows();
    if (gamma.numel() != n || beta.numel() != n) {
        throw ShapeError("layer_norm: affine parameters must have " + std::to_string(n) + " elements");
    }
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<double> out(r * n), xhat(r * n), inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            mu += xv[i * n + j];
        }
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = xv[i * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (xv[i * n + j] - mu) * inv_std[i];
            xhat[i * n + j] = h;
            out[i * n + j] = h * gv[j] + bv[j];
        }
    }
    return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                       [r, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node &self) {
                           auto &gv = parent(self, 1).value;
                           if (wants(self, 0)) {
                               auto &gx = parent(self, 0).grad_buffer();
                               for (std::size_t i = 0; i < r; ++i) {
                                   double m1 = 0.0, m2 = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const double dh = self.grad[i * n + j] * gv[j];
                                       m1 += dh;
                                       m2 += dh * xhat[i * n + j];
                                   }
                                   m1 /= static_cast<double>(n);
                                   m2 /= static_cast<double>(n);
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const double dh = self.grad[i * n + j] * gv[j];
                                       gx[i * n + j] += inv_std[i] * (dh - m1 - xhat[i * n + j] * m2);
                                   }
                               }
                           }
                           if (wants(self, 1)) {
                               auto &gg = parent(self, 1).grad_buffer();
                               for (std::size_t i = 0; i < r; ++i) {
                                   for (std::size_t j = 0; j < n; ++j) {
                                       gg[j] += self.grad[i * n + j] * xhat[i * n + j];
                                   }
                               }
                           }
                           if (wants(self, 2)) {
                               auto &gb = parent(self, 2).grad_buffer();
                               for (std::size_t i = 0; i < r; ++i) {
                                   for (std::size_t j = 0; j < n; ++j) {
                                       gb[j] += self.grad[i * n + j];
                                   }
                               }
                           }
                       });
}

Tensor softmax(const Tensor &x, std::span<const std::uint8_t> allow) {
    const auto n = x.cols(), r = x.rows();
    const bool masked = !allow.empty();
    if (masked && allow.size() != r * n) {
        throw ShapeError("softmax: mask has " + std::to_string(allow.size()) + " entries for " +
                         shape_str(x.shape()));
    }
    auto xv = x.values();
    std::vector<double> out(r * n, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            if (!masked || allow[i * n + j]) {
                mx = std::max(mx, xv[i * n + j]);
            }
        }
        if (mx == -INFINITY) {
            throw ShapeError("softmax: row " + std::to_string(i) + " has no allowed entries");
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (!masked || allow[i * n + j]) {
                out[i * n + j] = std::exp(xv[i * n + j] - mx);
                total += out[i * n + j];
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] /= total;
        }
    }
    return make_result("softmax", x.shape(), std::move(out), {x}, [r, n](Node &self) {
        auto &p = self.value;
        auto &g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += p[i * n + j] * self.grad[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += p[i * n + j] * (self.grad[i * n + j] - dot);
            }
        }
    });
}

Tensor cross_entropy(const Tensor &logits, std::span<const int> targets) {
    const auto n = logits.cols(), r = logits.rows();
    if (targets.size() != r) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(r) +
                         " rows");
    }
    auto lv = logits.values();
    std::vector<double> probs(r * n, 0.0);
    std::vector<int> tgt(targets.begin(), targets.end());
    double loss = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < r; ++i) {
        if (tgt[i] < 0) {
            continue;
        }
        if (static_cast<std::size_t>(tgt[i]) >= n) {
            throw ShapeError("cross_entropy: target " + std::to_string(tgt[i]) + " outside vocabulary of " +
                             std::to_string(n));
        }
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            mx = std::max(mx, lv[i * n + j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            probs[i * n + j] = std::exp(lv[i * n + j] - mx);
            total += probs[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            probs[i * n + j] /= total;
        }
        loss += -(lv[i * n + tgt[i]] - mx - std::log(total));
        ++counted;
    }
    if (counted == 0) {
        throw ShapeError("cross_entropy: no target positions");
    }
    loss /= static_cast<double>(counted);
    return make_result("cross_entropy", {1}, {loss}, {logits},
                       [r, n, counted, probs = std::move(probs), tgt = std::move(tgt)](Node &self) {
                           auto &g = parent(self, 0).grad_buffer();
                           const double w = self.grad[0] / static_cast<double>(counted);
                           for (std::size_t i = 0; i < r; ++i) {
                               if (tgt[i] < 0) {
                                   continue;
                               }
                               for (std::size_t j = 0; j < n; ++j) {
                                   g[i * n + j] += w * probs[i * n + j];
                               }
                               g[i * n + tgt[i]] -= w;
                           }
                       });
}

Tensor kl_divergence(std::span<const double> target, const Tensor &pred) {
    constexpr double floor_p = 1e-12;
    if (target.size() != pred.numel()) {
        throw ShapeError("kl_divergence: target has " + std::to_string(target.size()) + " entries, prediction " +
                         shape_str(pred.shape()));
    }
    auto pv = pred.values();
    double loss = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i] > 0.0) {
            loss += target[i] * (std::log(target[i]) - std::log(std::max(pv[i], floor_p)));
        }
    }
    std::vector<double> t(target.begin(), target.end());
    return make_result("kl_divergence", {1}, {loss}, {pred}, [t = std::move(t)](Node &self) {
        auto &pv = parent(self, 0).value;
        auto &g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i] > 0.0 && pv[i] > floor_p) {
                g[i] -= self.grad[0] * t[i] / pv[i];
            }
        }
    });
}

Tensor embedding(const Tensor &table, std::span<const int> ids) {
    require_rank2(table, "embedding");
    const auto vocab = table.dim(0), d = table.dim(1);
    if (ids.empty()) {
        throw ShapeError("embedding: empty id list");
    }
    std::vector<int> idx(ids.begin(), ids.end());
    std::vector<double> out(idx.size() * d);
    auto tv = table.values();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
            throw ShapeError("embedding: id " + std::to_string(idx[i]) + " outside table of " +
                             std::to_string(vocab));
        }
        std::copy_n(tv.begin() + idx[i] * d, d, out.begin() + i * d);
    }
    const std::size_t n = idx.size();
    return make_result("embedding", {n, d}, std::move(out), {table}, [d, idx = std::move(idx)](Node &self) {
        auto &g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                g[idx[i] * d + j] += self.grad[i * d + j];
            }
        }
    });
}

Tensor adaptive_avg_pool_1d(const Tensor &x, std::size_t bins) {
    require_rank2(x, "adaptive_avg_pool_1d");
    const auto len = x.dim(0), c = x.dim(1);
    if (bins < 1 || bins > len) {
        throw ShapeError("adaptive_avg_pool_1d: bin count " + std::to_string(bins) + " outside [1, " +
                         std::to_string(len) + "]");
    }
    std::vector<std::pair<std::size_t, std::size_t>> ranges(bins);
    for (std::size_t j = 0; j < bins; ++j) {
        ranges[j] = {(j * len) / bins, ((j + 1) * len + bins - 1) / bins};
    }
    auto xv = x.values();
    std::vector<double> out(bins * c, 0.0);
    for (std::size_t j = 0; j < bins; ++j) {
        const auto [b, e] = ranges[j];
        for (std::size_t i = b; i < e; ++i) {
            for (std::size_t k = 0; k < c; ++k) {
                out[j * c + k] += xv[i * c + k];
            }
        }
        for (std::size_t k = 0; k < c; ++k) {
            out[j * c + k] /= static_cast<double>(e - b);
        }
    }
    return make_result("adaptive_avg_pool_1d", {bins, c}, std::move(out), {x},
                       [c, ranges = std::move(ranges)](Node &self) {
                           auto &g = parent(self, 0).grad_buffer();
                           for (std::size_t j = 0; j < ranges.size(); ++j) {
                               const auto [b, e] = ranges[j];
                               const double w = 1.0 / static_cast<double>(e - b);
                               for (std::size_t i = b; i < e; ++i) {
                                   for (std::size_t k = 0; k < c; ++k) {
                                       g[i * c + k] += w * self.grad[j * c + k];
                                   }
                               }
                           }
                       });
}

Tensor concat_rows(const std::vector<Tensor> &parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: nothing to concatenate");
    }
    const auto c = parts.front().cols();
    std::size_t total = 0;
    std::vector<std::size_t> offsets;
    for (const auto &p : parts) {
        require_rank2(p, "concat_rows");
        if (p.cols() != c) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()) + " vs " + std::to_string(c));
        }
        offsets.push_back(total);
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * c);
    for (const auto &p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return make_result("concat_rows", {total, c}, std::move(out), parts, [c, offsets](Node &self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            if (!wants(self, p)) {
                continue;
            }
            auto &g = parent(self, p).grad_buffer();
            const auto base = offsets[p] * c;
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[base + i];
            }
        }
    });
}

Tensor slice_rows(const Tensor &x, std::size_t begin, std::size_t end) {
    require_rank2(x, "slice_rows");
    if (begin >= end || end > x.dim(0)) {
        throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_str(x.shape()));
    }
    const auto c = x.cols();
    std::vector<double> out(x.values().begin() + begin * c, x.values().begin() + end * c);
    return make_result("slice_rows", {end - begin, c}, std::move(out), {x}, [begin, c](Node &self) {
        auto &g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[begin * c + i] += self.grad[i];
        }
    });
}

Tensor concat_cols(const std::vector<Tensor> &parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: nothing to concatenate");
    }
    const auto r = parts.front().rows();
    std::size_t total = 0;
    std::vector<std::size_t> offsets, widths;
    for (const auto &p : parts) {
        require_rank2(p, "concat_cols");
        if (p.rows() != r) {
            throw ShapeError("concat_cols: row mismatch");
        }
        offsets.push_back(total);
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<double> out(r * total);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto pv = parts[p].values();
        for (std::size_t i = 0; i < r; ++i) {
            std::copy_n(pv.begin() + i * widths[p], widths[p], out.begin() + i * total + offsets[p]);
        }
    }
    return make_result("concat_cols", {r, total}, std::move(out), parts, [r, total, offsets, widths](Node &self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            if (!wants(self, p)) {
                continue;
            }
            auto &g = parent(self, p).grad_buffer();
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < widths[p]; ++j) {
                    g[i * widths[p] + j] += self.grad[i * total + offsets[p] + j];
                }
            }
        }
    });
}

Tensor slice_cols(const Tensor &x, std::size_t begin, std::size_t end) {
    require_rank2(x, "slice_cols");
    const auto r = x.dim(0), c = x.dim(1);
    if (begin >= end || end > c) {
        throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_str(x.shape()));
    }
    const auto w = end - begin;
    std::vector<double> out(r * w);
    auto xv = x.values();
    for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(xv.begin() + i * c + begin, w, out.begin() + i * w);
    }
    return make_result("slice_cols", {r, w}, std::move(out), {x}, [r, c, w, begin](Node &self) {
        auto &g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                g[i * c + begin + j] += self.grad[i * w + j];
            }
        }
    });
}

Tensor element(const Tensor &x, std::size_t index) {
    if (index >= x.numel()) {
        throw ShapeError("element: index " + std::to_string(index) + " of " + shape_str(x.shape()));
    }
    return make_result("element", {1}, {x.values()[index]}, {x}, [index](Node &self) {
        parent(self, 0).grad_buffer()[index] += self.grad[0];
    });
}

Tensor sum(const Tensor &x) {
    double total = 0.0;
    for (double v : x.values()) {
        total += v;
    }
    return make_result("sum", {1}, {total}, {x}, [](Node &self) {
        auto &g = parent(self, 0).grad_buffer();
        for (auto &v : g) {
            v += self.grad[0];
        }
    });
}

Tensor mean(const Tensor &x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor l2_normalize_rows(const Tensor &x) {
    const auto n = x.cols(), r = x.rows();
    auto xv = x.values();
    std::vector<double> out(r * n), norms(r);
    for (std::size_t i = 0; i < r; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            ss += xv[i * n + j] * xv[i * n + j];
        }
        if (ss == 0.0) {
            throw NumericError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
        }
        norms[i] = std::sqrt(ss);
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = xv[i * n + j] / norms[i];
        }
    }
    return make_result("l2_normalize_rows", x.shape(), std::move(out), {x}, [r, n, norms](Node &self) {
        auto &y = self.value;
        auto &g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += y[i * n + j] * self.grad[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += (self.grad[i * n + j] - y[i * n + j] * dot) / norms[i];
            }
        }
    });
}

Tensor straight_through(std::span<const double> hard, const Tensor &soft) {
    if (hard.size() != soft.numel()) {
        throw ShapeError("straight_through: hard/soft size mismatch");
    }
    return make_result("straight_through", soft.shape(), std::vector<double>(hard.begin(), hard.end()), {soft},
                       [](Node &self) {
                           auto &g = parent(self, 0).grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               g[i] += self.grad[i];
                           }
                       });
}

} // namespace vstream
