#include <doctest.h>

#include <cmath>
#include <numeric>

#include "test_support.hpp"
#include "vstream/errors.hpp"
#include "vstream/optim.hpp"

using namespace vstream;
using vstream::testing::check_gradients;
using vstream::testing::uniform;
using vstream::testing::weighted_sum;

namespace {

void require_grad_ok(const std::function<Tensor()> &f, const std::vector<Tensor> &inputs) {
    auto r = check_gradients(f, inputs);
    INFO("worst relative error " << r.worst << " over " << r.checked << " entries");
    CHECK(r.ok);
    CHECK(r.checked > 0);
}

} // namespace

TEST_CASE("softmax of equal logits is uniform") {
    auto y = softmax(Tensor::from({1, 2}, {0.0, 0.0}));
    CHECK(y.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.values()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("identity matmul returns the other operand") {
    std::mt19937_64 rng(1);
    auto a = uniform({3, 3}, rng, false);
    auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto y = matmul(eye, a);
    CHECK(y.to_vector() == a.to_vector());
}

TEST_CASE("self KL divergence is zero") {
    std::mt19937_64 rng(2);
    auto p = softmax(uniform({1, 6}, rng, false));
    auto kl = kl_divergence(p.to_vector(), p);
    CHECK(std::abs(kl.item()) < 1e-15);
}

TEST_CASE("gradient of sum is all ones") {
    std::mt19937_64 rng(3);
    auto x = uniform({2, 3, 4}, rng);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradient of sum(softmax(x)) is zero") {
    std::mt19937_64 rng(4);
    auto x = uniform({3, 5}, rng);
    backward(sum(softmax(x)));
    for (double g : x.grad()) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("backward errors") {
    std::mt19937_64 rng(5);
    auto x = uniform({2, 2}, rng);
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
    auto loss = sum(mul(x, x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), StateError);
}

TEST_CASE("shape mismatch and non-finite values are rejected") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    CHECK_THROWS_AS(add(a, b), ShapeError);
    auto big = Tensor::from({1, 1}, {1e308});
    CHECK_THROWS_AS(scale(big, 10.0), NumericError);
}

TEST_CASE("adaptive pooling bins") {
    SUBCASE("even split") {
        auto x = Tensor::from({4, 2}, {1, 10, 3, 30, 5, 50, 7, 70});
        auto y = adaptive_avg_pool_1d(x, 2);
        CHECK(y.to_vector() == std::vector<double>{2, 20, 6, 60});
    }
    SUBCASE("single bin is the column mean") {
        std::mt19937_64 rng(6);
        auto x = uniform({7, 3}, rng, false);
        auto y = adaptive_avg_pool_1d(x, 1);
        for (std::size_t c = 0; c < 3; ++c) {
            double m = 0.0;
            for (std::size_t r = 0; r < 7; ++r) m += x.at(r, c);
            CHECK(y.at(0, c) == doctest::Approx(m / 7).epsilon(1e-14));
        }
    }
    SUBCASE("L=5, P=2 matches brute-force bin enumeration") {
        std::mt19937_64 rng(7);
        auto x = uniform({5, 3}, rng, false);
        auto y = adaptive_avg_pool_1d(x, 2);
        const std::size_t L = 5, P = 2;
        for (std::size_t j = 0; j < P; ++j) {
            const std::size_t lo = (j * L) / P;
            const std::size_t hi = ((j + 1) * L + P - 1) / P;
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0.0;
                for (std::size_t r = lo; r < hi; ++r) s += x.at(r, c);
                CHECK(y.at(j, c) == doctest::Approx(s / static_cast<double>(hi - lo)).epsilon(1e-14));
            }
        }
        // bins are [0,3) and [2,5): the middle row is shared
        CHECK(y.at(0, 0) == doctest::Approx((x.at(0, 0) + x.at(1, 0) + x.at(2, 0)) / 3));
    }
    SUBCASE("bin count out of range") {
        auto x = Tensor::zeros({3, 2});
        CHECK_THROWS_AS(adaptive_avg_pool_1d(x, 0), ShapeError);
        CHECK_THROWS_AS(adaptive_avg_pool_1d(x, 4), ShapeError);
    }
}

TEST_CASE("softmax rows are distributions") {
    std::mt19937_64 rng(8);
    auto x = uniform({6, 9}, rng, false, -20, 20);
    auto y = softmax(x);
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 9; ++c) {
            CHECK(y.at(r, c) >= 0.0);
            s += y.at(r, c);
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("masked softmax puts exact zeros on blocked entries") {
    auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    std::vector<std::uint8_t> allow{1, 0, 1, 0, 1, 0};
    auto y = softmax(x, allow);
    CHECK(y.at(0, 1) == 0.0);
    CHECK(y.at(1, 0) == 0.0);
    CHECK(y.at(1, 2) == 0.0);
    CHECK(y.at(1, 1) == 1.0);
}

TEST_CASE("layer norm standardizes rows before the affine map") {
    std::mt19937_64 rng(9);
    auto x = uniform({5, 16}, rng, false, -3, 7);
    auto y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
    for (std::size_t r = 0; r < 5; ++r) {
        double m = 0.0, v = 0.0;
        for (std::size_t c = 0; c < 16; ++c) m += y.at(r, c);
        m /= 16;
        for (std::size_t c = 0; c < 16; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m);
        v /= 16;
        CHECK(std::abs(m) <= 1e-10);
        CHECK(std::abs(v - 1.0) <= 1e-6);
    }
}

TEST_CASE("concatenation routes gradient slices exactly") {
    std::mt19937_64 rng(10);
    auto a = uniform({2, 3}, rng);
    auto b = uniform({4, 3}, rng);
    auto w = uniform({6, 3}, rng, false);
    backward(sum(mul(concat_rows({a, b}), w)));
    auto wv = w.values();
    for (std::size_t i = 0; i < 6; ++i) CHECK(a.grad()[i] == wv[i]);
    for (std::size_t i = 0; i < 12; ++i) CHECK(b.grad()[i] == wv[6 + i]);

    auto c = uniform({3, 2}, rng);
    auto d = uniform({3, 1}, rng);
    auto w2 = uniform({3, 3}, rng, false);
    backward(sum(mul(concat_cols({c, d}), w2)));
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(c.grad()[r * 2] == w2.at(r, 0));
        CHECK(c.grad()[r * 2 + 1] == w2.at(r, 1));
        CHECK(d.grad()[r] == w2.at(r, 2));
    }
}

TEST_CASE("finite-difference gradient check for every differentiable op") {
    std::mt19937_64 rng(11);
    SUBCASE("matmul") {
        auto a = uniform({3, 4}, rng), b = uniform({4, 2}, rng);
        require_grad_ok([&] { return weighted_sum(matmul(a, b)); }, {a, b});
    }
    SUBCASE("matmul_nt") {
        auto a = uniform({3, 4}, rng), b = uniform({5, 4}, rng);
        require_grad_ok([&] { return weighted_sum(matmul_nt(a, b)); }, {a, b});
    }
    SUBCASE("transpose and reshape") {
        auto a = uniform({3, 4}, rng);
        require_grad_ok([&] { return weighted_sum(reshape(transpose(a), {2, 6})); }, {a});
    }
    SUBCASE("add, sub, mul, scale") {
        auto a = uniform({2, 5}, rng), b = uniform({2, 5}, rng);
        require_grad_ok([&] { return weighted_sum(scale(mul(add(a, b), sub(a, b)), 1.7)); }, {a, b});
    }
    SUBCASE("add_bias") {
        auto x = uniform({4, 3}, rng), b = uniform({3}, rng);
        require_grad_ok([&] { return weighted_sum(add_bias(x, b)); }, {x, b});
    }
    SUBCASE("mul_scalar") {
        auto x = uniform({4, 3}, rng), s = uniform({1}, rng);
        require_grad_ok([&] { return weighted_sum(mul_scalar(x, s)); }, {x, s});
    }
    SUBCASE("gelu") {
        auto x = uniform({3, 7}, rng, true, -3, 3);
        require_grad_ok([&] { return weighted_sum(gelu(x)); }, {x});
    }
    SUBCASE("layer_norm") {
        auto x = uniform({3, 6}, rng), g = uniform({6}, rng), b = uniform({6}, rng);
        require_grad_ok([&] { return weighted_sum(layer_norm(x, g, b, 1e-5)); }, {x, g, b});
    }
    SUBCASE("softmax") {
        auto x = uniform({3, 5}, rng, true, -2, 2);
        require_grad_ok([&] { return weighted_sum(softmax(x)); }, {x});
    }
    SUBCASE("masked softmax") {
        auto x = uniform({3, 3}, rng, true, -2, 2);
        std::vector<std::uint8_t> allow{1, 0, 0, 1, 1, 0, 1, 1, 1};
        require_grad_ok([&] { return weighted_sum(softmax(x, allow)); }, {x});
    }
    SUBCASE("cross_entropy") {
        auto x = uniform({4, 6}, rng, true, -2, 2);
        std::vector<int> t{1, -1, 5, 0};
        require_grad_ok([&] { return cross_entropy(x, t); }, {x});
    }
    SUBCASE("kl_divergence") {
        auto x = uniform({1, 6}, rng, true, -2, 2);
        std::vector<double> target{0.5, 0.0, 0.25, 0.25, 0.0, 0.0};
        require_grad_ok([&] { return kl_divergence(target, softmax(x)); }, {x});
    }
    SUBCASE("embedding") {
        auto table = uniform({7, 3}, rng);
        std::vector<int> ids{2, 5, 2, 0};
        require_grad_ok([&] { return weighted_sum(embedding(table, ids)); }, {table});
    }
    SUBCASE("adaptive_avg_pool_1d") {
        auto x = uniform({7, 3}, rng);
        require_grad_ok([&] { return weighted_sum(adaptive_avg_pool_1d(x, 3)); }, {x});
    }
    SUBCASE("slices and element") {
        auto x = uniform({5, 4}, rng);
        require_grad_ok(
            [&] {
                return add(weighted_sum(slice_rows(x, 1, 4)),
                           add(weighted_sum(slice_cols(x, 2, 4), 3), element(reshape(x, {20}), 7)));
            },
            {x});
    }
    SUBCASE("mean") {
        auto x = uniform({3, 4}, rng);
        require_grad_ok([&] { return mean(mul(x, x)); }, {x});
    }
    SUBCASE("l2_normalize_rows") {
        auto x = uniform({3, 4}, rng);
        require_grad_ok([&] { return weighted_sum(l2_normalize_rows(x)); }, {x});
    }
    SUBCASE("random four-layer composite") {
        auto x = uniform({5, 6}, rng);
        std::vector<Tensor> ws, bs;
        for (int l = 0; l < 4; ++l) {
            ws.push_back(uniform({6, 6}, rng));
            bs.push_back(uniform({6}, rng));
        }
        auto g = uniform({6}, rng), be = uniform({6}, rng);
        auto f = [&] {
            auto h = x;
            for (int l = 0; l < 4; ++l) {
                h = gelu(add_bias(matmul(layer_norm(h, g, be, 1e-5), ws[l]), bs[l]));
            }
            auto attn = softmax(matmul_nt(h, h));
            return weighted_sum(matmul(attn, h));
        };
        std::vector<Tensor> all{x, g, be};
        all.insert(all.end(), ws.begin(), ws.end());
        all.insert(all.end(), bs.begin(), bs.end());
        require_grad_ok(f, all);
    }
}

TEST_CASE("straight-through forwards hard and backwards through soft") {
    std::mt19937_64 rng(12);
    auto soft = uniform({4}, rng);
    std::vector<double> hard{0, 1, 1, 0};
    auto w = uniform({4}, rng, false);
    auto y = straight_through(hard, soft);
    CHECK(y.to_vector() == hard);
    backward(sum(mul(y, w)));
    CHECK(std::vector<double>(soft.grad().begin(), soft.grad().end()) == w.to_vector());
}

TEST_CASE("no-grad guard records nothing") {
    std::mt19937_64 rng(13);
    auto x = uniform({2, 2}, rng);
    Tensor y;
    {
        NoGradGuard g;
        y = mul(x, x);
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(grad_enabled());
}

TEST_CASE("Adam moves parameters downhill and clips the global norm") {
    auto p = Tensor::from({2}, {3.0, -4.0}, true);
    Adam opt({{"p", p}}, AdamOptions{.lr = 0.1, .clip_norm = 1.0});
    for (int i = 0; i < 200; ++i) {
        opt.zero_grad();
        backward(sum(mul(p, p)));
        opt.step();
    }
    CHECK(std::abs(p.values()[0]) < 0.05);
    CHECK(std::abs(p.values()[1]) < 0.05);
    CHECK(cosine_lr(1.0, 0, 10) == doctest::Approx(1.0));
    CHECK(cosine_lr(1.0, 10, 10, 0.1) == doctest::Approx(0.1));
}
