// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "funlora/tensor.hpp"

namespace funlora {

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    const std::vector<Tensor>& params() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& data = params_[i].data();
            const auto& grad = params_[i].grad();
            for (std::size_t j = 0; j < data.size(); ++j) {
                const double g = grad[j];
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Tensor> params, double lr, double momentum = 0.0)
        : params_(std::move(params)), lr_(lr), momentum_(momentum) {
        for (const auto& p : params_) vel_.emplace_back(p.size(), 0.0);
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& data = params_[i].data();
            const auto& grad = params_[i].grad();
            for (std::size_t j = 0; j < data.size(); ++j) {
                vel_[i][j] = momentum_ * vel_[i][j] + grad[j];
                data[j] -= lr_ * vel_[i][j];
            }
        }
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> vel_;
    double lr_, momentum_;
};

}  // namespace funlora
