// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#include "funlora/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace funlora {

namespace {

Tensor outer(const Tensor& a, const Tensor& b) {
    return matmul(reshape(a, {a.size(), 1}), reshape(b, {1, b.size()}));
}

// Value of f_i at an all-ones base entry; used for the alpha calibration.
double term_at_one(const FunctionalKind& kind, double hyper_i) {
    switch (kind.kind) {
        case Kind::RShift: return 1.0;
        case Kind::Pow: return 1.0;  // 1^delta
        case Kind::Cos: return std::cos(hyper_i);
        default: return 1.0;
    }
}

}  // namespace

std::string kind_name(Kind k) {
    switch (k) {
        case Kind::VanillaAdd: return "vanilla_add";
        case Kind::VanillaMul: return "vanilla_mul";
        case Kind::RShift: return "rshift";
        case Kind::Pow: return "pow";
        case Kind::Cos: return "cos";
    }
    return "?";
}

Kind kind_from_name(const std::string& name) {
    if (name == "vanilla_add") return Kind::VanillaAdd;
    if (name == "vanilla_mul") return Kind::VanillaMul;
    if (name == "rshift") return Kind::RShift;
    if (name == "pow") return Kind::Pow;
    if (name == "cos") return Kind::Cos;
    throw std::invalid_argument("unknown functional kind: " + name);
}

std::string combine_name(Combine c) {
    switch (c) {
        case Combine::Add: return "add";
        case Combine::Mul: return "mul";
        case Combine::MulAdd: return "mul_add";
    }
    return "?";
}

Combine combine_from_name(const std::string& name) {
    if (name == "add") return Combine::Add;
    if (name == "mul") return Combine::Mul;
    if (name == "mul_add") return Combine::MulAdd;
    throw std::invalid_argument("unknown combine operation: " + name);
}

std::vector<Tensor> Adapter::trainable_params() const {
    std::vector<Tensor> out{A, B};
    if (kind.is_functional()) out.push_back(alphas);
    if (kind.has_hyper() && kind.trainable) out.push_back(hyper);
    return out;
}

// ---- AdapterStore ------------------------------------------------------------

void AdapterStore::insert(int layer, int class_label, Adapter adapter) {
    auto key = std::make_pair(layer, class_label);
    if (adapters_.count(key))
        throw std::invalid_argument("adapter already present for layer " +
                                    std::to_string(layer) + ", class " +
                                    std::to_string(class_label));
    adapters_.emplace(key, std::move(adapter));
}

bool AdapterStore::contains(int layer, int class_label) const {
    return adapters_.count({layer, class_label}) > 0;
}

const Adapter& AdapterStore::get(int layer, int class_label) const {
    auto it = adapters_.find({layer, class_label});
    if (it == adapters_.end())
        throw std::invalid_argument("no adapter for layer " + std::to_string(layer) +
                                    ", class " + std::to_string(class_label));
    return it->second;
}

Adapter& AdapterStore::get_mutable(int layer, int class_label) {
    if (is_frozen(class_label))
        throw std::invalid_argument("adapters for class " + std::to_string(class_label) +
                                    " belong to a completed task and are immutable");
    auto it = adapters_.find({layer, class_label});
    if (it == adapters_.end())
        throw std::invalid_argument("no adapter for layer " + std::to_string(layer) +
                                    ", class " + std::to_string(class_label));
    return it->second;
}

void AdapterStore::freeze_class(int class_label) { frozen_[class_label] = true; }

bool AdapterStore::is_frozen(int class_label) const {
    auto it = frozen_.find(class_label);
    return it != frozen_.end() && it->second;
}

std::vector<int> AdapterStore::layers() const {
    std::vector<int> out;
    for (const auto& [key, _] : adapters_)
        if (out.empty() || out.back() != key.first) out.push_back(key.first);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<int> AdapterStore::classes() const {
    std::vector<int> out;
    for (const auto& [key, _] : adapters_) out.push_back(key.second);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---- functional matrices ------------------------------------------------------

Tensor rshift(const Tensor& v, long i) {
    if (v.rank() != 1) throw std::invalid_argument("rshift: input must be 1-D");
    if (i < 0) throw std::invalid_argument("rshift: shift must be non-negative");
    return circshift(v, i);
}

Tensor f_rshift(const Tensor& A, const Tensor& B, long i) {
    return outer(rshift(A, i), rshift(B, i));
}

Tensor funlora_matrix(const Adapter& adapter, bool* rank_claim_void) {
    const FunctionalKind& kind = adapter.kind;
    const long p = kind.p;
    if (rank_claim_void)
        *rank_claim_void = kind.is_functional() &&
                           static_cast<std::size_t>(p) >= std::min(adapter.c_out(), adapter.c_in());

    if (!kind.is_functional()) return outer(adapter.A, adapter.B);

    const double inv_p = 1.0 / static_cast<double>(p);
    Tensor acc;
    if (kind.kind == Kind::RShift) {
        for (long i = 1; i <= p; ++i) {
            Tensor term = mul(f_rshift(adapter.A, adapter.B, i),
                              index_scalar(adapter.alphas, static_cast<std::size_t>(i - 1)));
            acc = (i == 1) ? term : add(acc, term);
        }
        return scale(acc, inv_p);
    }

    Tensor base = outer(adapter.A, adapter.B);
    for (long i = 0; i < p; ++i) {
        Tensor term;
        if (kind.kind == Kind::Pow) {
            if (kind.trainable) {
                // sign(x) * |x|^delta_i: defined for decimal powers on
                // negative bases, differentiable in delta and in x away
                // from zero.
                Tensor delta_i = index_scalar(adapter.hyper, static_cast<std::size_t>(i));
                term = mul(sign(base), pow_tensor(abs(base), delta_i));
            } else {
                term = pow_by(base, adapter.hyper.at(static_cast<std::size_t>(i)));
            }
        } else {  // Cos
            Tensor omega_i = kind.trainable
                                 ? index_scalar(adapter.hyper, static_cast<std::size_t>(i))
                                 : Tensor::scalar(adapter.hyper.at(static_cast<std::size_t>(i)));
            term = cos(mul(base, omega_i));
        }
        term = mul(term, index_scalar(adapter.alphas, static_cast<std::size_t>(i)));
        acc = (i == 0) ? term : add(acc, term);
    }
    return scale(acc, inv_p);
}

Adapter init_adapter(FunctionalKind kind, std::size_t c_out, std::size_t c_in,
                     Combine comb, bool calibrate, std::uint64_t seed) {
    if (kind.p < 1) throw std::invalid_argument("init_adapter: p must be >= 1");
    if (c_out == 0 || c_in == 0) throw std::invalid_argument("init_adapter: empty dims");

    Adapter a;
    a.kind = kind;
    a.combine = comb;

    std::vector<double> hyper;
    for (int i = 1; i <= kind.p; ++i) hyper.push_back(static_cast<double>(i));

    if (comb == Combine::Mul) {
        a.A = Tensor::ones({c_out}, true);
        a.B = Tensor::ones({c_in}, true);
        std::vector<double> alphas(static_cast<std::size_t>(kind.p), 1.0);
        if (calibrate && kind.is_functional()) {
            double d = 0.0;
            for (int i = 0; i < kind.p; ++i)
                d += term_at_one(kind, hyper[static_cast<std::size_t>(i)]);
            d /= static_cast<double>(kind.p);
            if (std::abs(d) < 1e-6) {
                a.calibrated_identity = false;  // fall back to alpha = ones
            } else {
                std::fill(alphas.begin(), alphas.end(), 1.0 / d);
            }
        }
        if (kind.is_functional()) a.alphas = Tensor::from(alphas, {alphas.size()}, true);
    } else {
        // Add / MulAdd: standard LoRA-style init, zero update at start.
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> av(c_out);
        const double s = 1.0 / std::sqrt(static_cast<double>(c_out));
        for (auto& v : av) v = s * normal(rng);
        a.A = Tensor::from(std::move(av), {c_out}, true);
        a.B = Tensor::zeros({c_in}, true);
        if (kind.is_functional()) {
            // cos(0) = 1, so alpha must start at zero there to keep the
            // initial update matrix exactly zero.
            const double alpha0 = kind.kind == Kind::Cos ? 0.0 : 1.0;
            a.alphas = Tensor::full({static_cast<std::size_t>(kind.p)}, alpha0, true);
        }
    }
    if (kind.has_hyper())
        a.hyper = Tensor::from(hyper, {hyper.size()}, kind.trainable);
    return a;
}

Tensor combine(const Tensor& w0, const Tensor& f, Combine op) {
    switch (op) {
        case Combine::Add: return add(w0, f);
        case Combine::Mul: return mul(w0, f);
        case Combine::MulAdd: return mul(w0, add_scalar(f, 1.0));
    }
    throw std::invalid_argument("combine: unknown operation");
}

Tensor conv_modulate(const Tensor& w0, const Tensor& f) {
    if (w0.rank() != 4 || f.rank() != 2)
        throw std::invalid_argument("conv_modulate: expected 4-D weights and 2-D F");
    const auto& s = w0.shape();
    if (s[0] != f.rows() || s[1] != f.cols())
        throw std::invalid_argument("conv_modulate: leading dims of W0 do not match F");
    const std::size_t kernels = s[0] * s[1], ksize = s[2] * s[3];
    Tensor flat = reshape(w0, {kernels, ksize});
    Tensor scaled = mul_colvec(flat, reshape(f, {kernels}));
    return reshape(scaled, {s[0], s[1], s[2], s[3]});
}

// ---- rank -------------------------------------------------------------------

std::vector<double> singular_values(const Tensor& m) {
    if (m.rank() != 2) throw std::invalid_argument("singular_values: input must be 2-D");
    for (double v : m.data())
        if (!std::isfinite(v))
            throw std::invalid_argument("singular_values: non-finite entries");

    // One-sided Jacobi on the columns of the tall orientation; only the
    // singular values (column norms after orthogonalization) are needed.
    std::size_t rows = m.rows(), cols = m.cols();
    std::vector<double> a;  // column-major rows x cols, rows >= cols
    if (rows >= cols) {
        a.resize(rows * cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) a[j * rows + i] = m.at(i, j);
    } else {
        std::swap(rows, cols);
        a.resize(rows * cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) a[j * rows + i] = m.at(j, i);
    }

    const double tol = 1e-14;
    const int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < cols; ++p)
            for (std::size_t q = p + 1; q < cols; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                const double* cp = &a[p * rows];
                const double* cq = &a[q * rows];
                for (std::size_t i = 0; i < rows; ++i) {
                    app += cp[i] * cp[i];
                    aqq += cq[i] * cq[i];
                    apq += cp[i] * cq[i];
                }
                if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                double* wp = &a[p * rows];
                double* wq = &a[q * rows];
                for (std::size_t i = 0; i < rows; ++i) {
                    const double vp = wp[i], vq = wq[i];
                    wp[i] = c * vp - s * vq;
                    wq[i] = s * vp + c * vq;
                }
            }
        if (!rotated) break;
    }

    std::vector<double> sv(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        double norm2 = 0.0;
        for (std::size_t i = 0; i < rows; ++i) norm2 += a[j * rows + i] * a[j * rows + i];
        sv[j] = std::sqrt(norm2);
    }
    std::sort(sv.begin(), sv.end(), std::greater<double>());
    return sv;
}

int numerical_rank(const Tensor& f, double rel_tol) {
    if (rel_tol <= 0.0 || rel_tol >= 1.0)
        throw std::invalid_argument("numerical_rank: rel_tol must lie in (0,1)");
    const std::vector<double> sv = singular_values(f);
    if (sv.empty() || sv[0] == 0.0) return 0;
    const double cutoff = rel_tol * sv[0];
    int rank = 0;
    for (double s : sv)
        if (s > cutoff) ++rank;
    return rank;
}

RankReport rank_report(const AdapterStore& store, double rel_tol) {
    if (store.empty()) throw std::invalid_argument("rank_report: empty adapter store");
    RankReport rep;
    for (const auto& [key, adapter] : store.all()) {
        const int r = numerical_rank(funlora_matrix(adapter), rel_tol);
        rep.per_class[key] = r;
    }
    for (int layer : store.layers()) {
        int mx = 0;
        double sum = 0.0;
        int count = 0;
        for (const auto& [key, r] : rep.per_class) {
            if (key.first != layer) continue;
            mx = std::max(mx, r);
            sum += r;
            ++count;
        }
        rep.per_layer_max[layer] = mx;
        rep.per_layer_mean[layer] = sum / count;
        rep.max_rank = std::max(rep.max_rank, mx);
    }
    double mean_sum = 0.0;
    for (const auto& [_, v] : rep.per_layer_mean) mean_sum += v;
    rep.mean_rank = mean_sum / static_cast<double>(rep.per_layer_mean.size());
    return rep;
}

// ---- importance ---------------------------------------------------------------

double importance(const Adapter& adapter) {
    auto l1_dist_from_one = [](const Tensor& t) {
        double acc = 0.0;
        for (double v : t.data()) acc += std::abs(v - 1.0);
        return acc / static_cast<double>(t.size());
    };
    return 0.5 * (l1_dist_from_one(adapter.A) + l1_dist_from_one(adapter.B));
}

double importance_avg(const AdapterStore& store, int layer) {
    double acc = 0.0;
    int count = 0;
    for (const auto& [key, adapter] : store.all()) {
        if (key.first != layer) continue;
        acc += importance(adapter);
        ++count;
    }
    if (count == 0)
        throw std::invalid_argument("importance_avg: no adapters at layer " +
                                    std::to_string(layer));
    return acc / count;
}

ImportanceReport importance_report(const AdapterStore& store) {
    ImportanceReport rep;
    for (const auto& [key, adapter] : store.all()) rep.per_class[key] = importance(adapter);
    for (int layer : store.layers()) {
        double sum = 0.0, sum2 = 0.0;
        int count = 0;
        for (const auto& [key, v] : rep.per_class) {
            if (key.first != layer) continue;
            sum += v;
            sum2 += v * v;
            ++count;
        }
        const double meanv = sum / count;
        rep.per_layer[layer] = meanv;
        rep.per_layer_stddev[layer] =
            count > 1 ? std::sqrt(std::max(0.0, sum2 / count - meanv * meanv)) : 0.0;
    }
    return rep;
}

std::vector<int> select_layers(const std::vector<double>& importances,
                               const LayerSelection& sel) {
    if (importances.empty()) throw std::invalid_argument("select_layers: empty importances");
    std::vector<int> out;
    const int n = static_cast<int>(importances.size());
    switch (sel.strategy) {
        case LayerSelection::Strategy::TopK: {
            if (sel.k < 1) throw std::invalid_argument("select_layers: k must be >= 1");
            std::vector<int> idx(importances.size());
            std::iota(idx.begin(), idx.end(), 0);
            // stable sort keeps lower index first on ties
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
                return importances[static_cast<std::size_t>(a)] >
                       importances[static_cast<std::size_t>(b)];
            });
            out.assign(idx.begin(), idx.begin() + std::min(sel.k, n));
            break;
        }
        case LayerSelection::Strategy::IndexRange:
            for (int i = sel.range_lo; i <= sel.range_hi && i < n; ++i)
                if (i >= 0) out.push_back(i);
            break;
        case LayerSelection::Strategy::Threshold:
            for (int i = 0; i < n; ++i)
                if (importances[static_cast<std::size_t>(i)] > sel.threshold) out.push_back(i);
            break;
    }
    if (out.empty()) throw std::invalid_argument("select_layers: empty selection");
    std::sort(out.begin(), out.end());
    return out;
}

long param_count(const FunctionalKind& kind,
                 const std::vector<std::pair<std::size_t, std::size_t>>& layer_dims) {
    long total = 0;
    for (const auto& [c_out, c_in] : layer_dims) {
        total += static_cast<long>(c_out + c_in);
        if (kind.is_functional()) total += kind.p;          // alphas, per layer
        if (kind.has_hyper() && kind.trainable) total += kind.p;  // omega / delta
    }
    return total;
}

Adapter reduce_ratio_k(FunctionalKind kind, std::size_t c_out, std::size_t c_in,
                       Combine comb, bool calibrate, std::size_t k, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("reduce_ratio_k: k must be >= 1");
    const std::size_t ro = std::max<std::size_t>(1, (c_out + k - 1) / k);
    const std::size_t ri = std::max<std::size_t>(1, (c_in + k - 1) / k);
    return init_adapter(kind, ro, ri, comb, calibrate, seed);
}

Tensor expand_duplicate(const Tensor& f_reduced, std::size_t target_rows,
                        std::size_t target_cols, std::size_t k) {
    if (f_reduced.rank() != 2) throw std::invalid_argument("expand_duplicate: F must be 2-D");
    if (k < 1) throw std::invalid_argument("expand_duplicate: k must be >= 1");
    const std::size_t rr = f_reduced.rows(), rc = f_reduced.cols();
    std::vector<std::size_t> idx(target_rows * target_cols);
    for (std::size_t i = 0; i < target_rows; ++i) {
        const std::size_t si = std::min(i / k, rr - 1);
        for (std::size_t j = 0; j < target_cols; ++j) {
            const std::size_t sj = std::min(j / k, rc - 1);
            idx[i * target_cols + j] = si * rc + sj;
        }
    }
    return gather(f_reduced, idx, {target_rows, target_cols});
}

SqrtFactorization sqrt_factorize(std::size_t total_adapted_params) {
    if (total_adapted_params < 1)
        throw std::invalid_argument("sqrt_factorize: need at least one parameter");
    std::size_t dim = static_cast<std::size_t>(
        std::ceil(std::sqrt(static_cast<double>(total_adapted_params))));
    while (dim * dim < total_adapted_params) ++dim;  // guard fp rounding
    return SqrtFactorization{dim, dim * dim};
}

Tensor slice_for_layer(const Tensor& f_flat,
                       const std::vector<std::pair<std::size_t, std::size_t>>& layer_dims,
                       std::size_t layer_pos) {
    if (layer_pos >= layer_dims.size())
        throw std::invalid_argument("slice_for_layer: layer position out of range");
    std::size_t offset = 0;
    for (std::size_t l = 0; l < layer_pos; ++l)
        offset += layer_dims[l].first * layer_dims[l].second;
    const auto [c_out, c_in] = layer_dims[layer_pos];
    const std::size_t len = c_out * c_in;
    if (offset + len > f_flat.size())
        throw std::invalid_argument("slice_for_layer: flattened F too short");
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), offset);
    return gather(f_flat, idx, {c_out, c_in});
}

}  // namespace funlora
