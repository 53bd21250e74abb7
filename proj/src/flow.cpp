// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#include "funlora/flow.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace funlora {

PathSample ot_path(const std::vector<double>& x0, const std::vector<double>& z, double t) {
    if (x0.size() != z.size()) throw std::invalid_argument("ot_path: shape mismatch");
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("ot_path: t outside [0,1]");
    PathSample s;
    s.x0 = x0;
    s.z = z;
    s.t = t;
    s.x_t.resize(x0.size());
    s.u_target.resize(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        s.x_t[i] = (1.0 - t) * x0[i] + t * z[i];
        s.u_target[i] = z[i] - x0[i];
    }
    return s;
}

SolverMethod solver_from_name(const std::string& name) {
    if (name == "euler") return SolverMethod::Euler;
    if (name == "rk4") return SolverMethod::RK4;
    if (name == "dopri5") return SolverMethod::Dopri5;
    throw std::invalid_argument("unknown solver: " + name);
}

std::string solver_name(SolverMethod m) {
    switch (m) {
        case SolverMethod::Euler: return "euler";
        case SolverMethod::RK4: return "rk4";
        case SolverMethod::Dopri5: return "dopri5";
    }
    return "?";
}

int nfe_budget_to_steps(SolverMethod, int nfe) {
    if (nfe < 1) throw std::invalid_argument("nfe_budget_to_steps: nfe must be >= 1");
    return nfe;
}

namespace {

using Vec = std::vector<double>;

Vec axpy(const Vec& x, double a, const Vec& y) {
    Vec r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + a * y[i];
    return r;
}

IntegrationResult integrate_fixed(const OdeField& field, Vec x, int steps, bool rk4) {
    IntegrationResult res;
    const double h = -1.0 / steps;  // t: 1 -> 0
    double t = 1.0;
    for (int s = 0; s < steps; ++s) {
        if (rk4) {
            const Vec k1 = field(t, x);
            const Vec k2 = field(t + 0.5 * h, axpy(x, 0.5 * h, k1));
            const Vec k3 = field(t + 0.5 * h, axpy(x, 0.5 * h, k2));
            const Vec k4 = field(t + h, axpy(x, h, k3));
            for (std::size_t i = 0; i < x.size(); ++i)
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            res.nfe += 4;
        } else {
            const Vec k1 = field(t, x);
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += h * k1[i];
            res.nfe += 1;
        }
        t = 1.0 + (s + 1) * h;
    }
    res.x_end = std::move(x);
    return res;
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

IntegrationResult integrate_dopri5(const OdeField& field, Vec x, double abs_tol,
                                   double rel_tol) {
    IntegrationResult res;
    const double t_end = 0.0;
    const double h_min = 1e-10;
    double t = 1.0;
    double h = -1.0 / 50.0;  // initial step, integrating backward
    double err_prev = 1.0;   // PI controller memory

    Vec k1 = field(t, x);
    res.nfe += 1;
    while (t > t_end) {
        if (t + h < t_end) h = t_end - t;
        const std::size_t n = x.size();
        Vec y2(n), y3(n), y4(n), y5(n), y6(n), y7(n);
        for (std::size_t i = 0; i < n; ++i) y2[i] = x[i] + h * a21 * k1[i];
        const Vec k2 = field(t + c2 * h, y2);
        for (std::size_t i = 0; i < n; ++i) y3[i] = x[i] + h * (a31 * k1[i] + a32 * k2[i]);
        const Vec k3 = field(t + c3 * h, y3);
        for (std::size_t i = 0; i < n; ++i)
            y4[i] = x[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        const Vec k4 = field(t + c4 * h, y4);
        for (std::size_t i = 0; i < n; ++i)
            y5[i] = x[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        const Vec k5 = field(t + c5 * h, y5);
        for (std::size_t i = 0; i < n; ++i)
            y6[i] = x[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] +
                                a65 * k5[i]);
        const Vec k6 = field(t + h, y6);
        for (std::size_t i = 0; i < n; ++i)
            y7[i] = x[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        const Vec k7 = field(t + h, y7);
        res.nfe += 6;

        double err = 0.0, xnorm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ei = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] +
                                   e6 * k6[i] + e7 * k7[i]);
            err = std::max(err, std::abs(ei));
            xnorm = std::max(xnorm, std::abs(x[i]));
        }
        const double tol = abs_tol + rel_tol * xnorm;
        const double ratio = err / tol;

        if (ratio <= 1.0) {
            t += h;
            x = std::move(y7);
            k1 = k7;  // FSAL
            err_prev = std::max(ratio, 1e-10);
        }
        // PI step-size control
        const double safety = 0.9;
        double fac = safety * std::pow(std::max(ratio, 1e-10), -0.7 / 5.0) *
                     std::pow(err_prev, 0.4 / 5.0);
        fac = std::clamp(fac, 0.2, 10.0);
        h *= fac;
        if (std::abs(h) < h_min && t > t_end)
            throw std::runtime_error("dopri5: step size underflow at t=" + std::to_string(t));
    }
    res.x_end = std::move(x);
    return res;
}

}  // namespace

IntegrationResult integrate(const OdeField& field, const std::vector<double>& x_start,
                            const SolverConfig& cfg) {
    switch (cfg.method) {
        case SolverMethod::Euler:
            if (cfg.steps < 1) throw std::invalid_argument("integrate: steps must be >= 1");
            return integrate_fixed(field, x_start, cfg.steps, false);
        case SolverMethod::RK4:
            if (cfg.steps < 1) throw std::invalid_argument("integrate: steps must be >= 1");
            return integrate_fixed(field, x_start, cfg.steps, true);
        case SolverMethod::Dopri5:
            if (cfg.abs_tol <= 0 || cfg.rel_tol <= 0)
                throw std::invalid_argument("integrate: tolerances must be positive");
            return integrate_dopri5(field, x_start, cfg.abs_tol, cfg.rel_tol);
    }
    throw std::invalid_argument("integrate: unknown method");
}

PathDraws draw_paths(std::size_t batch, std::size_t dim, std::mt19937_64& rng) {
    PathDraws d;
    d.t.resize(batch);
    d.z_flat.resize(batch * dim);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < batch; ++i) d.t[i] = uni(rng);
    for (auto& v : d.z_flat) v = normal(rng);
    return d;
}

Tensor cfm_loss(const BatchField& model, const Tensor& x0, const std::vector<int>& labels,
                const PathDraws& draws) {
    if (x0.rank() != 2) throw std::invalid_argument("cfm_loss: x0 must be B x d");
    const std::size_t batch = x0.rows(), dim = x0.cols();
    if (batch == 0) throw std::invalid_argument("cfm_loss: empty batch");
    if (labels.size() != batch) throw std::invalid_argument("cfm_loss: label count mismatch");
    if (draws.t.size() != batch || draws.z_flat.size() != batch * dim)
        throw std::invalid_argument("cfm_loss: draw sizes do not match batch");

    // group rows by label, ascending, preserving within-batch order
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < batch; ++i) groups[labels[i]].push_back(i);

    Tensor total;  // sum of squared errors over all rows and dims
    bool first = true;
    for (const auto& [y, rows] : groups) {
        const std::size_t m = rows.size();
        std::vector<double> xt(m * dim), ut(m * dim), tv(m);
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t i = rows[r];
            const double t = draws.t[i];
            tv[r] = t;
            for (std::size_t j = 0; j < dim; ++j) {
                const double x0v = x0.at(i, j);
                const double zv = draws.z_flat[i * dim + j];
                xt[r * dim + j] = (1.0 - t) * x0v + t * zv;
                ut[r * dim + j] = zv - x0v;
            }
        }
        Tensor x_t = Tensor::from(std::move(xt), {m, dim});
        Tensor u = Tensor::from(std::move(ut), {m, dim});
        Tensor v = model(tv, x_t, y);
        Tensor diff = sub(v, u);
        Tensor sq = sum(mul(diff, diff));
        total = first ? sq : add(total, sq);
        first = false;
    }
    return scale(total, 1.0 / static_cast<double>(batch * dim));
}

Tensor cfm_loss(const BatchField& model, const Tensor& x0, const std::vector<int>& labels,
                std::mt19937_64& rng) {
    if (x0.rank() != 2) throw std::invalid_argument("cfm_loss: x0 must be B x d");
    return cfm_loss(model, x0, labels, draw_paths(x0.rows(), x0.cols(), rng));
}

EmaState::EmaState(const std::vector<Tensor>& params, double decay, int activation_epoch)
    : decay_(decay), activation_epoch_(activation_epoch) {
    if (decay <= 0.0 || decay >= 1.0)
        throw std::invalid_argument("EmaState: decay must lie in (0,1)");
    for (const auto& p : params) shadow_.push_back(p.data());
}

void EmaState::update(const std::vector<Tensor>& params, int epoch) {
    if (params.size() != shadow_.size())
        throw std::invalid_argument("EmaState: parameter count mismatch");
    if (epoch < activation_epoch_) return;
    started_ = true;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& d = params[i].data();
        if (d.size() != shadow_[i].size())
            throw std::invalid_argument("EmaState: shape mismatch");
        for (std::size_t j = 0; j < d.size(); ++j)
            shadow_[i][j] = decay_ * shadow_[i][j] + (1.0 - decay_) * d[j];
    }
}

void EmaState::swap(std::vector<Tensor>& params) {
    if (!started_) return;
    if (params.size() != shadow_.size())
        throw std::invalid_argument("EmaState: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i].data().swap(shadow_[i]);
}

}  // namespace funlora
