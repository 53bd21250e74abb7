// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "funlora/tensor.hpp"

using namespace funlora;

namespace {
const double kPi = std::acos(-1.0);

std::vector<double> vec(const Tensor& t) { return t.data(); }
}  // namespace

TEST_CASE("matmul") {
    SUBCASE("identity") {
        Tensor I = Tensor::from({1, 0, 0, 1}, {2, 2});
        Tensor B = Tensor::from({5, 6, 7, 8}, {2, 2});
        CHECK(vec(matmul(I, B)) == std::vector<double>{5, 6, 7, 8});
    }
    SUBCASE("outer product, hand oracle") {
        Tensor a = Tensor::from({1, 2}, {2, 1});
        Tensor b = Tensor::from({3, 4}, {1, 2});
        CHECK(vec(matmul(a, b)) == std::vector<double>{3, 4, 6, 8});
    }
    SUBCASE("1x1 scalar product") {
        Tensor a = Tensor::from({2}, {1, 1});
        Tensor b = Tensor::from({3}, {1, 1});
        CHECK(matmul(a, b).item() == 6);
    }
    SUBCASE("shape mismatch throws") {
        Tensor a = Tensor::from({1, 2, 3}, {1, 3});
        Tensor b = Tensor::from({1, 2}, {2, 1});
        CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
    }
}

TEST_CASE("elementwise") {
    SUBCASE("cos at 0 and pi") {
        Tensor x = Tensor::from({0, kPi}, {2});
        auto r = vec(cos(x));
        CHECK(r[0] == doctest::Approx(1.0));
        CHECK(r[1] == doctest::Approx(-1.0));
    }
    SUBCASE("sign-preserving surrogate root") {
        // sign(-4) * |-4|^0.5 = -2
        Tensor x = Tensor::from({-4}, {1});
        Tensor r = mul(sign(x), pow_by(abs(x), 0.5));
        CHECK(r.item() == doctest::Approx(-2.0));
    }
    SUBCASE("mul") {
        Tensor a = Tensor::from({1, 2}, {2});
        Tensor b = Tensor::from({3, 4}, {2});
        CHECK(vec(mul(a, b)) == std::vector<double>{3, 8});
    }
    SUBCASE("binary shape mismatch throws") {
        Tensor a = Tensor::from({1, 2}, {2});
        Tensor b = Tensor::from({1, 2, 3}, {3});
        CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    }
}

TEST_CASE("reductions") {
    CHECK(mean(Tensor::from({1, 2, 3}, {3})).item() == 2);
    CHECK(sum(Tensor::zeros({4})).item() == 0);
    SUBCASE("axis mean, hand oracle") {
        Tensor m = Tensor::from({1, 3, 5, 7}, {2, 2});
        CHECK(vec(mean_axis(m, 0)) == std::vector<double>{3, 5});
    }
    SUBCASE("invalid axis throws") {
        CHECK_THROWS_AS(sum_axis(Tensor::ones({2, 2}), 2), std::invalid_argument);
    }
}

TEST_CASE("backward") {
    SUBCASE("hand derivative 2*W*x^2") {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor w = Tensor::scalar(2.0, true);
        Tensor x = Tensor::scalar(1.0);
        Tensor loss = mean(mul(mul(w, x), mul(w, x)));
        tape.backward(loss);
        CHECK(w.grad()[0] == doctest::Approx(4.0));
    }
    SUBCASE("constant leaf gets no gradient") {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor c = Tensor::scalar(5.0);
        Tensor loss = mul(c, c);
        CHECK_THROWS(tape.backward(loss));  // detached: no tracked inputs
    }
    SUBCASE("cos gradient at 0 is 0") {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor theta = Tensor::from({0.0}, {1}, true);
        Tensor loss = sum(cos(theta));
        tape.backward(loss);
        CHECK(theta.grad()[0] == doctest::Approx(0.0));
    }
    SUBCASE("non-scalar loss throws") {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor x = Tensor::from({1, 2}, {2}, true);
        Tensor y = add(x, x);
        CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    }
    SUBCASE("cleared record detaches tensors") {
        Tape tape;
        Tensor x = Tensor::from({1.0}, {1}, true);
        Tensor y;
        {
            Tape::Scope scope(tape);
            y = sum(mul(x, x));
        }
        tape.clear();
        CHECK_THROWS(tape.backward(y));
    }
}

TEST_CASE("grad_check oracles") {
    SUBCASE("w^2 at w=3") {
        Tensor w = Tensor::scalar(3.0, true);
        double err = grad_check([&] { return mul(w, w); }, {w}, 1e-5);
        CHECK(err < 1e-7);
    }
    SUBCASE("constant function") {
        Tensor w = Tensor::scalar(3.0, true);
        Tensor c = Tensor::scalar(1.0);
        double err = grad_check([&] { return add(mul(w, Tensor::scalar(0.0)), c); },
                                {w}, 1e-5);
        CHECK(err == doctest::Approx(0.0));
    }
    SUBCASE("cos(omega) at omega=1") {
        Tensor w = Tensor::scalar(1.0, true);
        double err = grad_check([&] { return sum(cos(w)); }, {w}, 1e-5);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("randomized gradient property over the op set") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> av(6), bv(6);
        for (auto& v : av) v = uni(rng);
        for (auto& v : bv) v = uni(rng);
        Tensor a = Tensor::from(av, {2, 3}, true);
        Tensor b = Tensor::from(bv, {2, 3}, true);
        auto f = [&] {
            Tensor h = add(mul(a, b), sin(a));
            h = tanh(add(h, cos(b)));
            Tensor m = matmul(h, transpose(b));
            return mean(mul(m, m));
        };
        CHECK(grad_check(f, {a, b}, 1e-5) < 1e-4);
    }
}

TEST_CASE("backward linearity") {
    auto grads_of = [](bool joint) {
        Tensor x = Tensor::from({0.3, -1.2, 0.8}, {3}, true);
        if (joint) {
            Tape tape;
            Tape::Scope scope(tape);
            Tensor loss = add(sum(mul(x, x)), sum(sin(x)));
            tape.backward(loss);
            return x.grad();
        }
        {
            Tape tape;
            Tape::Scope scope(tape);
            tape.backward(sum(mul(x, x)));
        }
        {
            Tape tape;
            Tape::Scope scope(tape);
            tape.backward(sum(sin(x)));
        }
        return x.grad();
    };
    CHECK(grads_of(true) == grads_of(false));
}

TEST_CASE("seeded forward+backward is bit-reproducible") {
    auto run = [] {
        std::mt19937_64 rng(99);
        std::normal_distribution<double> normal;
        std::vector<double> v(12);
        for (auto& x : v) x = normal(rng);
        Tensor a = Tensor::from(v, {3, 4}, true);
        Tape tape;
        Tape::Scope scope(tape);
        Tensor loss = mean(mul(tanh(a), tanh(a)));
        tape.backward(loss);
        return std::pair(loss.item(), a.grad());
    };
    auto r1 = run();
    auto r2 = run();
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
}

TEST_CASE("gather, circshift, index helpers route gradients") {
    SUBCASE("gather scatter-adds") {
        Tensor x = Tensor::from({1, 2, 3}, {3}, true);
        Tape tape;
        Tape::Scope scope(tape);
        Tensor g = gather(x, {0, 0, 2}, {3});
        tape.backward(sum(g));
        CHECK(x.grad() == std::vector<double>{2, 0, 1});
    }
    SUBCASE("circshift forward") {
        Tensor x = Tensor::from({1, 2, 3, 4}, {4});
        CHECK(vec(circshift(x, 2)) == std::vector<double>{3, 4, 1, 2});
    }
    SUBCASE("pow_tensor exponent gradient is x^e ln x") {
        Tensor x = Tensor::from({2.0}, {1});
        Tensor e = Tensor::scalar(3.0, true);
        Tape tape;
        Tape::Scope scope(tape);
        tape.backward(sum(pow_tensor(x, e)));
        CHECK(e.grad()[0] == doctest::Approx(8.0 * std::log(2.0)));
    }
    SUBCASE("reshape preserves element order") {
        Tensor x = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3});
        Tensor r = reshape(x, {3, 2});
        CHECK(vec(r) == vec(x));
        CHECK_THROWS_AS(reshape(x, {4, 2}), std::invalid_argument);
    }
}

TEST_CASE("softmax cross entropy gradient") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    std::vector<double> lv(8);
    for (auto& v : lv) v = uni(rng);
    Tensor logits = Tensor::from(lv, {2, 4}, true);
    std::vector<int> labels{1, 3};
    auto f = [&] { return softmax_cross_entropy(logits, labels); };
    CHECK(grad_check(f, {logits}, 1e-6) < 1e-4);
}
