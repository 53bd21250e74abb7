// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#include "funlora/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace funlora {

namespace {

Tape*& active_tape_slot() {
    thread_local Tape* active = nullptr;
    return active;
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) {
        if (s == 0) throw std::invalid_argument("tensor: zero dimension in shape");
        n *= s;
    }
    return n;
}

std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

using Impl = std::shared_ptr<detail::TensorData>;

bool tracked(const Tensor& t) { return Tape::active() != nullptr && t.requires_grad(); }

// Marks `out` differentiable and appends the backward closure when a tape is
// active and at least one input participates.
void record_op(Tensor& out, bool any_input_tracked, std::function<void()> backward_fn) {
    Tape* tape = Tape::active();
    if (!tape || !any_input_tracked) return;
    auto d = out.impl();
    d->requires_grad = true;
    d->ensure_grad();
    d->tape = tape;
    d->node = tape->record(std::move(backward_fn));
}

void accumulate(const Impl& t, std::size_t i, double g) {
    if (!t->requires_grad) return;
    t->ensure_grad();
    t->grad[i] += g;
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::from(std::vector<double> data, std::vector<std::size_t> shape,
                    bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    auto d = std::make_shared<detail::TensorData>();
    d->shape = std::move(shape);
    d->data = std::move(data);
    d->requires_grad = requires_grad;
    if (requires_grad) d->ensure_grad();
    return Tensor(std::move(d));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::ones(std::vector<std::size_t> shape, bool requires_grad) {
    return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    std::vector<double> data(shape_numel(shape), value);
    return from(std::move(data), std::move(shape), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({value}, {1}, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
    d_->ensure_grad();
    return d_->grad;
}

void Tensor::zero_grad() {
    d_->grad.assign(d_->data.size(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return d_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    if (rank() != 2) throw std::invalid_argument("at(r,c): tensor is not 2-D");
    return d_->data.at(r * d_->shape[1] + c);
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw std::invalid_argument("rows: tensor is not 2-D");
    return d_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw std::invalid_argument("cols: tensor is not 2-D");
    return d_->shape[1];
}

// ---- Tape ------------------------------------------------------------------

Tape::~Tape() {
    if (active_tape_slot() == this) active_tape_slot() = nullptr;
}

Tape::Scope::Scope(Tape& t) : prev_(active_tape_slot()) {
    active_tape_slot() = &t;
}

Tape::Scope::~Scope() { active_tape_slot() = prev_; }

Tape* Tape::active() { return active_tape_slot(); }

long Tape::record(std::function<void()> backward_fn) {
    nodes_.push_back(Node{std::move(backward_fn)});
    return cleared_ + static_cast<long>(nodes_.size()) - 1;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar())
        throw std::invalid_argument("backward: loss must be a defined scalar");
    auto d = loss.impl();
    if (d->tape != this || d->node < cleared_)
        throw std::invalid_argument("backward: loss is detached from this record");
    d->ensure_grad();
    d->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
}

void Tape::clear() {
    cleared_ += static_cast<long>(nodes_.size());
    nodes_.clear();
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: inputs must be 2-D");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw std::invalid_argument("matmul: inner dimensions " + std::to_string(k) +
                                    " vs " + std::to_string(b.rows()));
    std::vector<double> out(m * n, 0.0);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[p * n + j];
        }
    Tensor r = Tensor::from(std::move(out), {m, n});
    bool tr = tracked(a) || tracked(b);
    auto ai = a.impl(), bi = b.impl(), ri = r.impl();
    record_op(r, tr, [ai, bi, ri, m, k, n]() {
        const auto& g = ri->grad;
        if (ai->requires_grad) {
            ai->ensure_grad();
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        acc += g[i * n + j] * bi->data[p * n + j];
                    ai->grad[i * k + p] += acc;
                }
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            // dB = A^T * G
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < m; ++i)
                        acc += ai->data[i * k + p] * g[i * n + j];
                    bi->grad[p * n + j] += acc;
                }
        }
    });
    return r;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose: input must be 2-D");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    Tensor r = Tensor::from(std::move(out), {n, m});
    auto ai = a.impl(), ri = r.impl();
    record_op(r, tracked(a), [ai, ri, m, n]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ai->grad[i * n + j] += ri->grad[j * m + i];
    });
    return r;
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    if (shape_numel(shape) != a.size())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor r = Tensor::from(a.data(), std::move(shape));
    auto ai = a.impl(), ri = r.impl();
    record_op(r, tracked(a), [ai, ri]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (std::size_t i = 0; i < ri->grad.size(); ++i) ai->grad[i] += ri->grad[i];
    });
    return r;
}

namespace {

// Binary elementwise op with scalar broadcast on either side.
template <typename Fwd, typename Bwd>
Tensor binary_ew(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    const bool a_scalar = a.is_scalar(), b_scalar = b.is_scalar();
    if (!a_scalar && !b_scalar) require_same_shape(a, b, name);
    const Tensor& shape_src = a_scalar ? b : a;
    const std::size_t n = shape_src.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double av = a.data()[a_scalar ? 0 : i];
        const double bv = b.data()[b_scalar ? 0 : i];
        out[i] = fwd(av, bv);
    }
    Tensor r = Tensor::from(std::move(out), shape_src.shape());
    bool tr = tracked(a) || tracked(b);
    auto ai = a.impl(), bi = b.impl(), ri = r.impl();
    record_op(r, tr, [ai, bi, ri, n, a_scalar, b_scalar, bwd]() {
        for (std::size_t i = 0; i < n; ++i) {
            const double av = ai->data[a_scalar ? 0 : i];
            const double bv = bi->data[b_scalar ? 0 : i];
            const double g = ri->grad[i];
            auto [ga, gb] = bwd(av, bv, g);
            accumulate(ai, a_scalar ? 0 : i, ga);
            accumulate(bi, b_scalar ? 0 : i, gb);
        }
    });
    return r;
}

template <typename Fwd, typename Bwd>
Tensor unary_ew(const Tensor& a, Fwd fwd, Bwd bwd) {
    const std::size_t n = a.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a.data()[i]);
    Tensor r = Tensor::from(std::move(out), a.shape());
    auto ai = a.impl(), ri = r.impl();
    record_op(r, tracked(a), [ai, ri, n, bwd]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            ai->grad[i] += bwd(ai->data[i], ri->data[i]) * ri->grad[i];
    });
    return r;
}

struct GradPair {
    double ga, gb;
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "add", [](double x, double y) { return x + y; },
                     [](double, double, double g) { return GradPair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double, double, double g) { return GradPair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double x, double y, double g) { return GradPair{g * y, g * x}; });
}

Tensor cos(const Tensor& a) {
    return unary_ew(a, [](double x) { return std::cos(x); },
                    [](double x, double) { return -std::sin(x); });
}

Tensor sin(const Tensor& a) {
    return unary_ew(a, [](double x) { return std::sin(x); },
                    [](double x, double) { return std::cos(x); });
}

Tensor tanh(const Tensor& a) {
    return unary_ew(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& a) {
    // subgradient 0 at x == 0
    return unary_ew(a, [](double x) { return std::abs(x); },
                    [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor sign(const Tensor& a) {
    return unary_ew(a, [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); },
                    [](double, double) { return 0.0; });
}

Tensor pow_by(const Tensor& a, double exponent) {
    if (!std::isfinite(exponent))
        throw std::invalid_argument("pow_by: non-finite exponent");
    return unary_ew(a, [exponent](double x) { return std::pow(x, exponent); },
                    [exponent](double x, double) {
                        return exponent * std::pow(x, exponent - 1.0);
                    });
}

Tensor pow_tensor(const Tensor& a, const Tensor& exponent) {
    if (!exponent.is_scalar())
        throw std::invalid_argument("pow_tensor: exponent must be scalar");
    return binary_ew(a, exponent, "pow_tensor",
                     [](double x, double e) { return std::pow(x, e); },
                     [](double x, double e, double g) {
                         const double y = std::pow(x, e);
                         const double gx = g * e * std::pow(x, e - 1.0);
                         const double ge = x > 0 ? g * y * std::log(x) : 0.0;
                         return GradPair{gx, ge};
                     });
}

Tensor scale(const Tensor& a, double c) {
    return unary_ew(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_ew(a, [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (a.rank() != 2) throw std::invalid_argument("add_rowvec: matrix must be 2-D");
    const std::size_t m = a.rows(), n = a.cols();
    if (row.size() != n)
        throw std::invalid_argument("add_rowvec: row length " + std::to_string(row.size()) +
                                    " vs matrix columns " + std::to_string(n));
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] + row.data()[j];
    Tensor r = Tensor::from(std::move(out), a.shape());
    bool tr = tracked(a) || tracked(row);
    auto ai = a.impl(), wi = row.impl(), ri = r.impl();
    record_op(r, tr, [ai, wi, ri, m, n]() {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < m * n; ++i) ai->grad[i] += ri->grad[i];
        }
        if (wi->requires_grad) {
            wi->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) wi->grad[j] += ri->grad[i * n + j];
        }
    });
    return r;
}

Tensor mul_colvec(const Tensor& a, const Tensor& col) {
    if (a.rank() != 2) throw std::invalid_argument("mul_colvec: matrix must be 2-D");
    const std::size_t m = a.rows(), n = a.cols();
    if (col.size() != m)
        throw std::invalid_argument("mul_colvec: column length " + std::to_string(col.size()) +
                                    " vs matrix rows " + std::to_string(m));
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] * col.data()[i];
    Tensor r = Tensor::from(std::move(out), a.shape());
    bool tr = tracked(a) || tracked(col);
    auto ai = a.impl(), ci = col.impl(), ri = r.impl();
    record_op(r, tr, [ai, ci, ri, m, n]() {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    ai->grad[i * n + j] += ri->grad[i * n + j] * ci->data[i];
        }
        if (ci->requires_grad) {
            ci->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    ci->grad[i] += ri->grad[i * n + j] * ai->data[i * n + j];
        }
    });
    return r;
}

Tensor index_scalar(const Tensor& a, std::size_t i) {
    if (i >= a.size()) throw std::invalid_argument("index_scalar: index out of range");
    Tensor r = Tensor::scalar(a.data()[i]);
    auto ai = a.impl(), ri = r.impl();
    record_op(r, tracked(a), [ai, ri, i]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        ai->grad[i] += ri->grad[0];
    });
    return r;
}

Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices,
              std::vector<std::size_t> shape) {
    std::vector<double> out(indices.size());
    for (std::size_t j = 0; j < indices.size(); ++j) out[j] = a.data().at(indices[j]);
    Tensor r = Tensor::from(std::move(out), std::move(shape));
    auto ai = a.impl(), ri = r.impl();
    auto idx = std::make_shared<std::vector<std::size_t>>(indices);
    record_op(r, tracked(a), [ai, ri, idx]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (std::size_t j = 0; j < idx->size(); ++j) ai->grad[(*idx)[j]] += ri->grad[j];
    });
    return r;
}

Tensor circshift(const Tensor& a, long i) {
    if (a.rank() != 1) throw std::invalid_argument("circshift: input must be 1-D");
    const long m = static_cast<long>(a.size());
    if (m == 0) throw std::invalid_argument("circshift: empty vector");
    const long s = ((i % m) + m) % m;
    std::vector<double> out(static_cast<std::size_t>(m));
    for (long j = 0; j < m; ++j) out[static_cast<std::size_t>(j)] = a.data()[static_cast<std::size_t>(((j - s) % m + m) % m)];
    Tensor r = Tensor::from(std::move(out), a.shape());
    auto ai = a.impl(), ri = r.impl();
    record_op(r, tracked(a), [ai, ri, m, s]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (long j = 0; j < m; ++j)
            ai->grad[static_cast<std::size_t>(((j - s) % m + m) % m)] +=
                ri->grad[static_cast<std::size_t>(j)];
    });
    return r;
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    Tensor r = Tensor::scalar(acc);
    auto ai = a.impl(), ri = r.impl();
    record_op(r, tracked(a), [ai, ri]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (double& g : ai->grad) g += ri->grad[0];
    });
    return r;
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    return scale(sum(a), inv);
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
    if (a.rank() != 2) throw std::invalid_argument("sum_axis: input must be 2-D");
    if (axis > 1) throw std::invalid_argument("sum_axis: invalid axis");
    const std::size_t m = a.rows(), n = a.cols();
    const std::size_t out_len = axis == 0 ? n : m;
    std::vector<double> out(out_len, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[axis == 0 ? j : i] += a.data()[i * n + j];
    Tensor r = Tensor::from(std::move(out), {out_len});
    auto ai = a.impl(), ri = r.impl();
    record_op(r, tracked(a), [ai, ri, m, n, axis]() {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                ai->grad[i * n + j] += ri->grad[axis == 0 ? j : i];
    });
    return r;
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
    if (a.rank() != 2) throw std::invalid_argument("mean_axis: input must be 2-D");
    const double inv = 1.0 / static_cast<double>(axis == 0 ? a.rows() : a.cols());
    return scale(sum_axis(a, axis), inv);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw std::invalid_argument("softmax_cross_entropy: logits must be 2-D");
    const std::size_t m = logits.rows(), c = logits.cols();
    if (labels.size() != m)
        throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    std::vector<double> probs(m * c);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw std::invalid_argument("softmax_cross_entropy: label out of range");
        double mx = logits.data()[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.data()[i * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(logits.data()[i * c + j] - mx);
            z += probs[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
        loss -= std::log(probs[i * c + static_cast<std::size_t>(y)]);
    }
    Tensor r = Tensor::scalar(loss / static_cast<double>(m));
    auto li = logits.impl(), ri = r.impl();
    auto probs_saved = std::make_shared<std::vector<double>>(std::move(probs));
    auto labels_saved = std::make_shared<std::vector<int>>(labels);
    record_op(r, tracked(logits), [li, ri, probs_saved, labels_saved, m, c]() {
        if (!li->requires_grad) return;
        li->ensure_grad();
        const double g = ri->grad[0] / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                double p = (*probs_saved)[i * c + j];
                if (j == static_cast<std::size_t>((*labels_saved)[i])) p -= 1.0;
                li->grad[i * c + j] += g * p;
            }
    });
    return r;
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  double eps) {
    if (eps <= 0) throw std::invalid_argument("grad_check: eps must be positive");
    std::vector<std::vector<double>> analytic;
    {
        // stale gradients from earlier backward passes would accumulate
        for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
        Tape tape;
        Tape::Scope scope(tape);
        Tensor loss = f();
        tape.backward(loss);
        for (const auto& p : params) analytic.push_back(p.grad());
    }
    auto eval = [&]() {
        Tensor v = f();  // no tape active here
        double x = v.item();
        if (!std::isfinite(x))
            throw std::runtime_error("grad_check: non-finite value during evaluation");
        return x;
    };
    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = const_cast<Tensor&>(params[pi]).data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + eps;
            const double fp = eval();
            data[i] = saved - eps;
            const double fm = eval();
            data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace funlora
