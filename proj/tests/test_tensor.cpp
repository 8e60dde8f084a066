#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "rainnet/rng.hpp"
#include "rainnet/tensor.hpp"

using namespace rainnet;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, bool requires_grad = false,
                        double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(static_cast<size_t>(s.numel()));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>::from_vector(s, std::move(v), requires_grad);
}

double max_rel_err(std::span<const double> analytic,
                   std::span<const double> numeric) {
    REQUIRE(analytic.size() == numeric.size());
    double worst = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double denom =
            std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), 1e-8});
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    auto x = Tensor<float>::from_vector({1, 1, 3, 3},
                                        {1, 2, 3, 4, 5, 6, 7, 8, 9});
    std::vector<float> k(9, 0.0f);
    k[4] = 1.0f;  // center tap
    auto kernel = Tensor<float>::from_vector({1, 1, 3, 3}, k);
    auto bias = Tensor<float>::zeros({1, 1, 1, 1});
    auto y = conv2d(x, kernel, bias, 1);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d 1x1 kernel scales") {
    auto x = Tensor<float>::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
    auto kernel = Tensor<float>::from_vector({1, 1, 1, 1}, {2});
    auto bias = Tensor<float>::zeros({1, 1, 1, 1});
    auto y = conv2d(x, kernel, bias, 0);
    CHECK(y.values()[0] == 2.0f);
    CHECK(y.values()[1] == 4.0f);
    CHECK(y.values()[2] == 6.0f);
    CHECK(y.values()[3] == 8.0f);
}

TEST_CASE("conv2d all-ones valid window sums to 9") {
    // hand sum: nine ones times nine one-taps = 9
    auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    auto kernel = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    auto bias = Tensor<float>::zeros({1, 1, 1, 1});
    auto y = conv2d(x, kernel, bias, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(9.0f));
}

TEST_CASE("conv2d contract violations") {
    auto x = Tensor<float>::zeros({1, 2, 4, 4});
    auto bias = Tensor<float>::zeros({1, 1, 1, 1});
    CHECK_THROWS_AS(conv2d(x, Tensor<float>::zeros({1, 3, 3, 3}), bias, 1),
                    ContractError);
    CHECK_THROWS_AS(conv2d(x, Tensor<float>::zeros({1, 2, 2, 2}), bias, 0),
                    ContractError);  // even kernel
    CHECK_THROWS_AS(
        conv2d(Tensor<float>::zeros({1, 1, 2, 2}),
               Tensor<float>::zeros({1, 1, 5, 5}), bias, 0),
        ContractError);  // output extent would be non-positive
}

TEST_CASE("relu forward") {
    auto x = Tensor<float>::from_vector({1, 1, 1, 3}, {-1, 0, 2});
    auto y = relu(x);
    CHECK(y.values()[0] == 0.0f);
    CHECK(y.values()[1] == 0.0f);
    CHECK(y.values()[2] == 2.0f);

    auto nonneg = Tensor<float>::from_vector({1, 1, 2, 2}, {0, 1, 2, 3});
    auto same = relu(nonneg);
    for (int i = 0; i < 4; ++i) CHECK(same.values()[i] == nonneg.values()[i]);
}

TEST_CASE("relu gradient masks non-positive inputs") {
    auto x = Tensor<double>::from_vector({1, 1, 1, 2}, {-1, 3}, true);
    auto target = Tensor<double>::zeros({1, 1, 1, 2});
    auto loss = mean_squared(relu(x), target);
    backward(loss);
    // dL/dy = 2*relu(x)/2 = [0, 3]; relu' = [0, 1]
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == doctest::Approx(3.0));

    auto fd = finite_diff_grad(
        [&] { return mean_squared(relu(x), target).item(); }, x, 1e-6);
    CHECK(max_rel_err(x.grad(), fd) < 1e-6);

    // gradient at exactly 0 is defined as 0
    auto z = Tensor<double>::from_vector({1, 1, 1, 1}, {0.0}, true);
    auto t = Tensor<double>::from_vector({1, 1, 1, 1}, {-1.0});
    backward(mean_squared(relu(z), t));
    CHECK(z.grad()[0] == 0.0);
}

TEST_CASE("add and sub behave like elementwise +/-") {
    Rng rng(7);
    auto a = random_tensor<float>({2, 3, 4, 5}, rng);
    auto zero = Tensor<float>::zeros({2, 3, 4, 5});
    auto a_plus_zero = add(a, zero);
    auto a_minus_a = sub(a, a);
    for (size_t i = 0; i < a.values().size(); ++i) {
        CHECK(a_plus_zero.values()[i] == a.values()[i]);
        CHECK(a_minus_a.values()[i] == 0.0f);
    }

    auto u = Tensor<float>::from_vector({1, 1, 1, 2}, {1, 2});
    auto v = Tensor<float>::from_vector({1, 1, 1, 2}, {3, 4});
    auto back = sub(add(u, v), v);
    CHECK(back.values()[0] == 1.0f);
    CHECK(back.values()[1] == 2.0f);

    CHECK_THROWS_AS(add(u, Tensor<float>::zeros({1, 1, 2, 1})), ContractError);
    CHECK_THROWS_AS(sub(u, Tensor<float>::zeros({1, 1, 2, 1})), ContractError);
}

TEST_CASE("add/sub commutation property a + b - b == a within 1e-6") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_tensor<float>({1, 2, 5, 7}, rng);
        auto b = random_tensor<float>({1, 2, 5, 7}, rng);
        auto r = sub(add(a, b), b);
        for (size_t i = 0; i < a.values().size(); ++i) {
            CHECK(std::fabs(r.values()[i] - a.values()[i]) < 1e-6f);
        }
    }
}

TEST_CASE("concat_channels keeps operand order and splits gradients") {
    auto a = Tensor<float>::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
    auto b = Tensor<float>::from_vector({1, 1, 2, 2}, {5, 6, 7, 8});
    auto c = concat_channels(a, b);
    REQUIRE(c.shape() == Shape{1, 2, 2, 2});
    for (int i = 0; i < 4; ++i) {
        CHECK(c.values()[i] == a.values()[i]);        // channels [0..Ca)
        CHECK(c.values()[4 + i] == b.values()[i]);    // then b's
    }

    auto empty = Tensor<float>::zeros({1, 0, 2, 2});
    auto same = concat_channels(a, empty);
    REQUIRE(same.shape() == a.shape());
    for (int i = 0; i < 4; ++i) CHECK(same.values()[i] == a.values()[i]);

    CHECK_THROWS_AS(concat_channels(a, Tensor<float>::zeros({1, 1, 3, 2})),
                    ContractError);
}

TEST_CASE("pixel_unshuffle index convention") {
    auto x = Tensor<float>::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
    auto packed = pixel_unshuffle(x, 2);
    REQUIRE(packed.shape() == Shape{1, 4, 1, 1});
    CHECK(packed.values()[0] == 1.0f);
    CHECK(packed.values()[1] == 2.0f);
    CHECK(packed.values()[2] == 3.0f);
    CHECK(packed.values()[3] == 4.0f);

    auto ident = pixel_unshuffle(x, 1);
    for (int i = 0; i < 4; ++i) CHECK(ident.values()[i] == x.values()[i]);

    CHECK_THROWS_AS(pixel_unshuffle(Tensor<float>::zeros({1, 1, 3, 2}), 2),
                    ContractError);
}

TEST_CASE("pixel_shuffle index convention") {
    auto x = Tensor<float>::from_vector({1, 4, 1, 1}, {1, 2, 3, 4});
    auto full = pixel_shuffle(x, 2);
    REQUIRE(full.shape() == Shape{1, 1, 2, 2});
    CHECK(full.values()[0] == 1.0f);
    CHECK(full.values()[1] == 2.0f);
    CHECK(full.values()[2] == 3.0f);
    CHECK(full.values()[3] == 4.0f);

    CHECK_THROWS_AS(pixel_shuffle(Tensor<float>::zeros({1, 3, 2, 2}), 2),
                    ContractError);
}

TEST_CASE("shuffle pair is a bit-exact inverse") {
    Rng rng(11);
    for (int r = 1; r <= 3; ++r) {
        for (int trial = 0; trial < 10; ++trial) {
            const int n = 1 + static_cast<int>(rng.bounded(2));
            const int c = 1 + static_cast<int>(rng.bounded(4));
            const int h = r * (1 + static_cast<int>(rng.bounded(5)));
            const int w = r * (1 + static_cast<int>(rng.bounded(5)));
            auto x = random_tensor<float>({n, c, h, w}, rng);
            auto roundtrip = pixel_shuffle(pixel_unshuffle(x, r), r);
            REQUIRE(roundtrip.shape() == x.shape());
            for (size_t i = 0; i < x.values().size(); ++i) {
                CHECK(roundtrip.values()[i] == x.values()[i]);
            }
        }
    }

    // the documented inverse-pair example
    Rng rng2(5);
    auto x = random_tensor<float>({2, 3, 4, 6}, rng2);
    auto rt = pixel_shuffle(pixel_unshuffle(x, 2), 2);
    for (size_t i = 0; i < x.values().size(); ++i) {
        CHECK(rt.values()[i] == x.values()[i]);
    }
}

TEST_CASE("mean_squared values") {
    auto a = Tensor<float>::from_vector({1, 1, 1, 2}, {0, 0});
    auto b = Tensor<float>::from_vector({1, 1, 1, 2}, {2, 0});
    CHECK(mean_squared(a, a).item() == 0.0f);
    CHECK(mean_squared(a, b).item() == doctest::Approx(2.0f));  // (4+0)/2

    auto ones = Tensor<float>::full({2, 3, 2, 2}, 1.0f);
    auto twos = Tensor<float>::full({2, 3, 2, 2}, 2.0f);
    CHECK(mean_squared(ones, twos).item() == doctest::Approx(1.0f));

    CHECK_THROWS_AS(mean_squared(a, Tensor<float>::zeros({1, 1, 2, 2})),
                    ContractError);
    CHECK_THROWS_AS(mean_squared(Tensor<float>::zeros({1, 0, 2, 2}),
                                 Tensor<float>::zeros({1, 0, 2, 2})),
                    ContractError);
}

TEST_CASE("backward populates and accumulates gradients") {
    auto x = Tensor<double>::from_vector({1, 1, 1, 1}, {3.0}, true);
    auto zero = Tensor<double>::zeros({1, 1, 1, 1});
    auto loss = mean_squared(x, zero);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0));  // d(x^2)/dx = 2x

    backward(loss);  // accumulation contract
    CHECK(x.grad()[0] == doctest::Approx(12.0));

    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);

    // parameter not involved in the loss keeps a zero gradient
    auto p = Tensor<double>::zeros({1, 1, 1, 1}, true);
    CHECK(p.grad()[0] == 0.0);

    auto vec = Tensor<double>::zeros({1, 1, 1, 2}, true);
    CHECK_THROWS_AS(backward(add(vec, vec)), ContractError);  // non-scalar
}

TEST_CASE("finite_diff_grad on hand-checkable functions") {
    auto x = Tensor<double>::from_vector({1, 1, 1, 3}, {0.3, -0.7, 1.1});
    auto fd = finite_diff_grad(
        [&] {
            double s = 0;
            for (double v : x.values()) s += v;
            return s;
        },
        x, 1e-5);
    for (double g : fd) CHECK(g == doctest::Approx(1.0).epsilon(1e-9));

    auto y = Tensor<double>::from_vector({1, 1, 1, 1}, {3.0});
    auto zero = Tensor<double>::zeros({1, 1, 1, 1});
    auto fd2 = finite_diff_grad(
        [&] { return mean_squared(y, zero).item(); }, y, 1e-5);
    CHECK(std::fabs(fd2[0] - 6.0) < 1e-6);

    CHECK_THROWS_AS(finite_diff_grad([&] { return 0.0; }, y, 0.0),
                    ContractError);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(2024);
    for (int seed = 0; seed < 3; ++seed) {
        auto x = random_tensor<double>({1, 2, 5, 5}, rng, true);
        auto k = random_tensor<double>({3, 2, 3, 3}, rng, true);
        auto b = random_tensor<double>({1, 3, 1, 1}, rng, true);
        auto target = random_tensor<double>({1, 3, 5, 5}, rng);

        auto forward = [&] {
            return mean_squared(conv2d(x, k, b, 1), target).item();
        };
        x.zero_grad();
        k.zero_grad();
        b.zero_grad();
        backward(mean_squared(conv2d(x, k, b, 1), target));

        CHECK(max_rel_err(x.grad(), finite_diff_grad(forward, x, 1e-6)) < 1e-4);
        CHECK(max_rel_err(k.grad(), finite_diff_grad(forward, k, 1e-6)) < 1e-4);
        CHECK(max_rel_err(b.grad(), finite_diff_grad(forward, b, 1e-6)) < 1e-4);
    }
}

TEST_CASE("conv2d is linear in its kernel") {
    Rng rng(31);
    auto x = random_tensor<float>({1, 3, 6, 6}, rng);
    auto k1 = random_tensor<float>({4, 3, 3, 3}, rng);
    auto k2 = random_tensor<float>({4, 3, 3, 3}, rng);
    auto bias = Tensor<float>::zeros({1, 4, 1, 1});

    auto lhs = conv2d(x, add(k1, k2), bias, 1);
    auto rhs = add(conv2d(x, k1, bias, 1), conv2d(x, k2, bias, 1));
    for (size_t i = 0; i < lhs.values().size(); ++i) {
        CHECK(std::fabs(lhs.values()[i] - rhs.values()[i]) < 1e-5f);
    }
}

TEST_CASE("operations are bit-deterministic") {
    Rng rng_a(123), rng_b(123);
    auto xa = random_tensor<float>({1, 3, 8, 8}, rng_a);
    auto ka = random_tensor<float>({2, 3, 3, 3}, rng_a);
    auto xb = random_tensor<float>({1, 3, 8, 8}, rng_b);
    auto kb = random_tensor<float>({2, 3, 3, 3}, rng_b);
    auto bias = Tensor<float>::zeros({1, 2, 1, 1});

    auto ya = pixel_unshuffle(relu(conv2d(xa, ka, bias, 1)), 2);
    auto yb = pixel_unshuffle(relu(conv2d(xb, kb, bias, 1)), 2);
    REQUIRE(ya.values().size() == yb.values().size());
    for (size_t i = 0; i < ya.values().size(); ++i) {
        CHECK(ya.values()[i] == yb.values()[i]);
    }
}

TEST_CASE("gradients flow through a shared subgraph once per path") {
    // u is consumed twice; d/du of mse(u+u, 0) at u=1 is 2*2*(2)/1 = 8
    auto u = Tensor<double>::from_vector({1, 1, 1, 1}, {1.0}, true);
    auto zero = Tensor<double>::zeros({1, 1, 1, 1});
    backward(mean_squared(add(u, u), zero));
    CHECK(u.grad()[0] == doctest::Approx(8.0));
}
