// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace funlora {

class Tape;

namespace detail {

struct TensorData {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // materialized lazily, same length as data
    bool requires_grad = false;
    Tape* tape = nullptr;
    long node = -1;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats with optional participation in
/// reverse-mode autodiff. Value-semantic handle over shared storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(std::vector<double> data, std::vector<std::size_t> shape,
                       bool requires_grad = false);
    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor ones(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value,
                       bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return d_->shape; }
    std::size_t size() const { return d_->data.size(); }
    std::size_t rank() const { return d_->shape.size(); }
    bool requires_grad() const { return d_->requires_grad; }

    std::vector<double>& data() { return d_->data; }
    const std::vector<double>& data() const { return d_->data; }
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const;
    double at(std::size_t i) const { return d_->data.at(i); }
    // 2-D accessor, row-major
    double at(std::size_t r, std::size_t c) const;

    std::size_t rows() const;
    std::size_t cols() const;
    bool is_scalar() const { return size() == 1; }

    std::shared_ptr<detail::TensorData> impl() const { return d_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<detail::TensorData> d_;
    friend class Tape;
};

/// Append-only record of differentiable operations. Backward traverses nodes
/// in strict reverse append order, which fixes the accumulation order and
/// makes runs reproducible. Single-threaded per record.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape();

    /// RAII activation; ops record onto the innermost active tape.
    class Scope {
    public:
        explicit Scope(Tape& t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active();

    long record(std::function<void()> backward_fn);
    std::size_t node_count() const { return nodes_.size(); }

    /// Seeds the scalar loss with gradient 1 and propagates in reverse
    /// append order. Throws on non-scalar or detached loss.
    void backward(const Tensor& loss);

    /// Frees all nodes; tensors created under the record become
    /// non-differentiable leaves.
    void clear();

private:
    struct Node {
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
    long cleared_ = 0;  // node ids below this were freed by clear()
};

// ---- primitive operations -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // 2-D only
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor cos(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor abs(const Tensor& a);
/// sign(x) with zero gradient everywhere (treated as constant in backward).
Tensor sign(const Tensor& a);
/// x^e with fixed exponent; gradient e*x^(e-1).
Tensor pow_by(const Tensor& a, double exponent);
/// x^e with a trainable scalar exponent. Base must be >= 0; the exponent
/// gradient x^e * ln(x) is taken as 0 at x == 0.
Tensor pow_tensor(const Tensor& a, const Tensor& exponent);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

/// Adds a 1×n (or length-n) row vector to every row of an m×n matrix.
Tensor add_rowvec(const Tensor& a, const Tensor& row);

/// Scales row i of an m×n matrix by col[i].
Tensor mul_colvec(const Tensor& a, const Tensor& col);

/// Scalar view of entry i; gradient routes back to that entry.
Tensor index_scalar(const Tensor& a, std::size_t i);

/// out[j] = a[indices[j]] with the given output shape; backward scatter-adds.
Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices,
              std::vector<std::size_t> shape);

/// Right circular shift of a 1-D tensor: the last i elements move to the
/// front, preserving their order.
Tensor circshift(const Tensor& a, long i);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis);   // 2-D
Tensor mean_axis(const Tensor& a, std::size_t axis);  // 2-D

/// Mean softmax cross-entropy over rows of logits (m×C) against integer
/// labels; gradient is (softmax - onehot)/m.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Max over parameters of |analytic - central_difference| / max(1, |analytic|).
/// f must build a scalar loss from the current parameter values; it is run
/// once under a fresh tape for analytic gradients and twice per entry for
/// the central differences.
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  double eps);

}  // namespace funlora
