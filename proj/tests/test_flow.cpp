// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "funlora/flow.hpp"

using namespace funlora;

TEST_CASE("ot_path") {
    SUBCASE("hand arithmetic at t=0.5") {
        PathSample s = ot_path({1, 0}, {0, 1}, 0.5);
        CHECK(s.x_t == std::vector<double>{0.5, 0.5});
        CHECK(s.u_target == std::vector<double>{-1, 1});
    }
    SUBCASE("endpoints") {
        CHECK(ot_path({1, 2}, {3, 4}, 0.0).x_t == std::vector<double>{1, 2});
        CHECK(ot_path({1, 2}, {3, 4}, 1.0).x_t == std::vector<double>{3, 4});
    }
    SUBCASE("midpoint is exact") {
        PathSample s = ot_path({0.1, -0.7}, {2.3, 0.9}, 0.5);
        CHECK(s.x_t[0] == 0.5 * (0.1 + 2.3));
        CHECK(s.x_t[1] == 0.5 * (-0.7 + 0.9));
    }
    CHECK_THROWS_AS(ot_path({1}, {2}, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(ot_path({1}, {2, 3}, 0.5), std::invalid_argument);
}

TEST_CASE("cfm_loss") {
    SUBCASE("oracle field gives zero loss") {
        Tensor x0 = Tensor::from({1.0, -2.0, 0.5, 3.0}, {2, 2});
        std::vector<int> labels{0, 0};
        PathDraws draws;
        draws.t = {0.3, 0.8};
        draws.z_flat = {0.2, -0.1, 1.5, 0.4};
        // Exact target: v(t, x_t) = z - x0 recovered from x_t = (1-t)x0 + tz.
        // With z and x0 pinned inside the closure via the draws the oracle can
        // simply return z - x0 row by row.
        BatchField oracle = [&](const std::vector<double>&, const Tensor& xt,
                                int) -> Tensor {
            std::vector<double> out(xt.size());
            const std::size_t rows = xt.rows();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < 2; ++c)
                    out[r * 2 + c] = draws.z_flat[r * 2 + c] - x0.at(r, c);
            return Tensor::from(std::move(out), {rows, 2});
        };
        CHECK(cfm_loss(oracle, x0, labels, draws).item() == doctest::Approx(0.0));
    }
    SUBCASE("zero model, pinned draws, hand value") {
        // x0 = [1], z = [0], t = 0.5: target u = -1, loss = 1
        Tensor x0 = Tensor::from({1.0}, {1, 1});
        PathDraws draws;
        draws.t = {0.5};
        draws.z_flat = {0.0};
        BatchField zero = [](const std::vector<double>&, const Tensor& xt, int) {
            return Tensor::zeros(xt.shape());
        };
        CHECK(cfm_loss(zero, x0, {0}, draws).item() == doctest::Approx(1.0));
    }
    SUBCASE("loss is nonnegative") {
        std::mt19937_64 rng(4);
        std::normal_distribution<double> normal;
        std::vector<double> xs(10);
        for (auto& v : xs) v = normal(rng);
        Tensor x0 = Tensor::from(xs, {5, 2});
        BatchField noisy = [&](const std::vector<double>&, const Tensor& xt, int) {
            std::vector<double> out(xt.size());
            for (auto& v : out) v = normal(rng);
            return Tensor::from(std::move(out), xt.shape());
        };
        CHECK(cfm_loss(noisy, x0, {0, 1, 0, 1, 2}, rng).item() >= 0.0);
    }
    SUBCASE("empty batch throws") {
        BatchField zero = [](const std::vector<double>&, const Tensor& xt, int) {
            return Tensor::zeros(xt.shape());
        };
        std::mt19937_64 rng(1);
        CHECK_THROWS(cfm_loss(zero, Tensor::from({}, {0, 2}), {}, rng));
    }
}

TEST_CASE("integrate") {
    SUBCASE("constant field, exact for every solver") {
        OdeField field = [](double, const std::vector<double>&) {
            return std::vector<double>{-1.0, 1.0};
        };
        for (SolverMethod m : {SolverMethod::Euler, SolverMethod::RK4,
                               SolverMethod::Dopri5}) {
            SolverConfig cfg;
            cfg.method = m;
            cfg.steps = 10;
            auto r = integrate(field, {0.0, 1.0}, cfg);
            CHECK(r.x_end[0] == doctest::Approx(1.0));
            CHECK(r.x_end[1] == doctest::Approx(0.0));
            CHECK(r.nfe > 0);
        }
    }
    SUBCASE("zero field returns the start point") {
        OdeField field = [](double, const std::vector<double>& x) {
            return std::vector<double>(x.size(), 0.0);
        };
        SolverConfig cfg;
        cfg.method = SolverMethod::RK4;
        auto r = integrate(field, {3.7, -1.2}, cfg);
        CHECK(r.x_end == std::vector<double>{3.7, -1.2});
    }
    SUBCASE("exponential oracle: v = -x integrated 1 -> 0 gives e*x1") {
        OdeField field = [](double, const std::vector<double>& x) {
            return std::vector<double>{-x[0]};
        };
        SolverConfig cfg;
        cfg.method = SolverMethod::Dopri5;
        cfg.abs_tol = 1e-8;
        cfg.rel_tol = 1e-8;
        auto r = integrate(field, {1.0}, cfg);
        CHECK(r.x_end[0] == doctest::Approx(std::exp(1.0)).epsilon(1e-6));
        cfg.method = SolverMethod::RK4;
        cfg.steps = 50;
        CHECK(integrate(field, {1.0}, cfg).x_end[0] ==
              doctest::Approx(std::exp(1.0)).epsilon(1e-6));
    }
    SUBCASE("RK4 global error scales as h^4") {
        OdeField field = [](double, const std::vector<double>& x) {
            return std::vector<double>{-x[0]};
        };
        std::vector<double> logh, loge;
        for (int steps : {5, 10, 20, 40}) {
            SolverConfig cfg;
            cfg.method = SolverMethod::RK4;
            cfg.steps = steps;
            double err = std::fabs(integrate(field, {1.0}, cfg).x_end[0] - std::exp(1.0));
            logh.push_back(std::log(1.0 / steps));
            loge.push_back(std::log(err));
        }
        // least-squares slope
        double mh = 0, me = 0;
        for (std::size_t i = 0; i < logh.size(); ++i) mh += logh[i], me += loge[i];
        mh /= logh.size();
        me /= loge.size();
        double num = 0, den = 0;
        for (std::size_t i = 0; i < logh.size(); ++i) {
            num += (logh[i] - mh) * (loge[i] - me);
            den += (logh[i] - mh) * (logh[i] - mh);
        }
        const double slope = num / den;
        CHECK(slope > 3.7);
        CHECK(slope < 4.3);
    }
    SUBCASE("nfe accounting: fixed-step budgets are step counts") {
        CHECK(nfe_budget_to_steps(SolverMethod::RK4, 5) == 5);
        CHECK(nfe_budget_to_steps(SolverMethod::Euler, 1) == 1);
        CHECK(nfe_budget_to_steps(SolverMethod::RK4, 20) == 20);
        OdeField field = [](double, const std::vector<double>& x) {
            return std::vector<double>(x.size(), 0.5);
        };
        SolverConfig cfg;
        cfg.method = SolverMethod::Euler;
        cfg.steps = 7;
        CHECK(integrate(field, {0.0}, cfg).nfe == 7);
        cfg.method = SolverMethod::RK4;
        CHECK(integrate(field, {0.0}, cfg).nfe == 7 * 4);
    }
}

TEST_CASE("ema") {
    auto param = [](double v) { return Tensor::from({v}, {1}, true); };
    SUBCASE("single update from zero shadow") {
        std::vector<Tensor> zero{param(0.0)};
        EmaState ema(zero, 0.9, 0);
        std::vector<Tensor> p{param(1.0)};
        ema.update(p, 0);
        std::vector<Tensor> live{param(123.0)};
        ema.swap(live);
        CHECK(live[0].data()[0] == doctest::Approx(0.1));
    }
    SUBCASE("decay 1 leaves the shadow unchanged") {
        std::vector<Tensor> zero{param(0.0)};
        EmaState ema(zero, 1.0 - 1e-12, 0);
        std::vector<Tensor> p{param(1.0)};
        ema.update(p, 5);
        std::vector<Tensor> live{param(9.0)};
        ema.swap(live);
        CHECK(std::fabs(live[0].data()[0]) < 1e-11);
    }
    SUBCASE("two updates, hand recurrence 0.75") {
        std::vector<Tensor> zero{param(0.0)};
        EmaState ema(zero, 0.5, 0);
        std::vector<Tensor> p{param(1.0)};
        ema.update(p, 0);
        ema.update(p, 1);
        std::vector<Tensor> live{param(0.0)};
        ema.swap(live);
        CHECK(live[0].data()[0] == doctest::Approx(0.75));
    }
    SUBCASE("updates before the activation epoch are ignored") {
        std::vector<Tensor> zero{param(0.0)};
        EmaState ema(zero, 0.5, 3);
        std::vector<Tensor> p{param(1.0)};
        ema.update(p, 0);
        ema.update(p, 2);
        CHECK_FALSE(ema.active());
        ema.update(p, 3);
        CHECK(ema.active());
    }
}

TEST_CASE("path draws are seed deterministic") {
    std::mt19937_64 a(42), b(42), c(43);
    PathDraws da = draw_paths(8, 2, a);
    PathDraws db = draw_paths(8, 2, b);
    PathDraws dc = draw_paths(8, 2, c);
    CHECK(da.t == db.t);
    CHECK(da.z_flat == db.z_flat);
    CHECK(da.t != dc.t);
    for (double t : da.t) {
        CHECK(t >= 0.0);
        CHECK(t <= 1.0);
    }
}
