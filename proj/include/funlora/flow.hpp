// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "funlora/tensor.hpp"

namespace funlora {

/// Straight-line interpolation sample between data and noise.
/// x_t = (1-t) x0 + t z, target field u = z - x0.
struct PathSample {
    std::vector<double> x0;
    std::vector<double> z;
    double t = 0.0;
    std::vector<double> x_t;
    std::vector<double> u_target;
};

PathSample ot_path(const std::vector<double>& x0, const std::vector<double>& z, double t);

enum class SolverMethod { Euler, RK4, Dopri5 };

struct SolverConfig {
    SolverMethod method = SolverMethod::Dopri5;
    int steps = 50;                 // Euler / RK4
    double abs_tol = 1e-4;          // Dopri5
    double rel_tol = 1e-4;
};

SolverMethod solver_from_name(const std::string& name);
std::string solver_name(SolverMethod m);

/// Fixed-step budgets are interpreted as integration steps.
int nfe_budget_to_steps(SolverMethod method, int nfe);

struct IntegrationResult {
    std::vector<double> x_end;
    long nfe = 0;  // realized field evaluations
};

/// dx/dt callback on a flat state vector.
using OdeField = std::function<std::vector<double>(double t, const std::vector<double>& x)>;

/// Integrates the field from t=1 down to t=0.
IntegrationResult integrate(const OdeField& field, const std::vector<double>& x_start,
                            const SolverConfig& cfg);

/// Velocity model over a batch: per-row time values, batch matrix B x d,
/// single class label. Returns the B x d velocity prediction.
using BatchField =
    std::function<Tensor(const std::vector<double>& t, const Tensor& x, int y)>;

/// Per-sample draws for the CFM objective; fixed (t, z) mode for gradient tests.
struct PathDraws {
    std::vector<double> t;       // length B
    std::vector<double> z_flat;  // B x d row-major
};

PathDraws draw_paths(std::size_t batch, std::size_t dim, std::mt19937_64& rng);

/// Mean over batch and dimensions of |v(t, x_t, y) - (z - x0)|^2. Rows are
/// grouped by label so each group shares one model evaluation; group order
/// is ascending label, rows keep their within-batch order.
Tensor cfm_loss(const BatchField& model, const Tensor& x0, const std::vector<int>& labels,
                const PathDraws& draws);

Tensor cfm_loss(const BatchField& model, const Tensor& x0, const std::vector<int>& labels,
                std::mt19937_64& rng);

/// Exponential moving average of a parameter set; shadow updated only
/// after the activation epoch.
class EmaState {
public:
    EmaState() = default;
    EmaState(const std::vector<Tensor>& params, double decay, int activation_epoch);

    void update(const std::vector<Tensor>& params, int epoch);
    /// Exchanges live parameter data with the shadow copies.
    void swap(std::vector<Tensor>& params);
    bool active() const { return started_; }
    double decay() const { return decay_; }

private:
    std::vector<std::vector<double>> shadow_;
    double decay_ = 0.9995;
    int activation_epoch_ = 0;
    bool started_ = false;
};

}  // namespace funlora
