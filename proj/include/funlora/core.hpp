// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "funlora/tensor.hpp"

namespace funlora {

/// Functional family used to raise the effective rank of the rank-1 update.
enum class Kind : std::uint8_t {
    VanillaAdd,
    VanillaMul,
    RShift,
    Pow,
    Cos,
};

enum class Combine : std::uint8_t { Add, Mul, MulAdd };

struct FunctionalKind {
    Kind kind = Kind::VanillaMul;
    int p = 1;                // number of functional terms; >= 1
    bool trainable = false;   // hyperparameters (omega / delta) learnable

    bool is_functional() const {
        return kind == Kind::RShift || kind == Kind::Pow || kind == Kind::Cos;
    }
    bool has_hyper() const { return kind == Kind::Pow || kind == Kind::Cos; }
};

std::string kind_name(Kind k);
Kind kind_from_name(const std::string& name);
std::string combine_name(Combine c);
Combine combine_from_name(const std::string& name);

/// Per-class, per-layer record: rank-1 factors A (C_out) and B (C_in),
/// ponderations alpha, and optional frequency/exponent hyperparameters.
struct Adapter {
    Tensor A;       // length C_out
    Tensor B;       // length C_in
    Tensor alphas;  // length p for functional kinds, undefined otherwise
    Tensor hyper;   // omega (Cos) or delta (Pow), length p; undefined otherwise
    FunctionalKind kind;
    Combine combine = Combine::Mul;
    int class_label = -1;
    bool calibrated_identity = true;  // false when calibration fell back to alpha=1

    std::size_t c_out() const { return A.size(); }
    std::size_t c_in() const { return B.size(); }
    std::vector<Tensor> trainable_params() const;
};

struct ImportanceReport {
    // (layer, class) -> I_{l,y}
    std::map<std::pair<int, int>, double> per_class;
    std::map<int, double> per_layer;  // I_l, mean over classes
    std::map<int, double> per_layer_stddev;
};

struct RankReport {
    std::map<std::pair<int, int>, int> per_class;  // (layer, class) -> rank
    std::map<int, double> per_layer_mean;          // mean over classes
    std::map<int, int> per_layer_max;
    int max_rank = 0;
    double mean_rank = 0.0;
};

class AdapterStore {
public:
    void insert(int layer, int class_label, Adapter adapter);
    bool contains(int layer, int class_label) const;
    const Adapter& get(int layer, int class_label) const;
    Adapter& get_mutable(int layer, int class_label);

    /// Marks every adapter of `class_label` immutable; get_mutable refuses them.
    void freeze_class(int class_label);
    bool is_frozen(int class_label) const;

    std::vector<int> layers() const;
    std::vector<int> classes() const;
    bool empty() const { return adapters_.empty(); }
    const std::map<std::pair<int, int>, Adapter>& all() const { return adapters_; }

private:
    std::map<std::pair<int, int>, Adapter> adapters_;  // key (layer, class)
    std::map<int, bool> frozen_;
};

// ---- operations -------------------------------------------------------------

/// Right circular shift: the last i elements move to the front. Differentiable.
Tensor rshift(const Tensor& v, long i);

/// Outer product of the two shifted vectors; rank <= 1.
Tensor f_rshift(const Tensor& A, const Tensor& B, long i);

/// Builds the functional matrix F_y (C_out x C_in) from the adapter's
/// factors. Differentiable in A, B, alpha and in the hyperparameters when
/// trainable. Emits a rank warning through the optional out-parameter when
/// p >= min(C_out, C_in).
Tensor funlora_matrix(const Adapter& adapter, bool* rank_claim_void = nullptr);

/// Mul combine: all-ones factors, hyper = [1..p], alpha rescaled so the
/// initial functional matrix is exactly all-ones when calibrate is set.
/// Add combine: B zero, A ~ N(0, 1/C_out), alpha all-ones.
Adapter init_adapter(FunctionalKind kind, std::size_t c_out, std::size_t c_in,
                     Combine combine, bool calibrate, std::uint64_t seed = 0);

Tensor combine(const Tensor& w0, const Tensor& f, Combine op);

/// Scales each s x s kernel (o, i) of a C_out x C_in x s x s weight by F[o, i].
Tensor conv_modulate(const Tensor& w0, const Tensor& f);

/// Singular values of a 2-D matrix, descending, via one-sided Jacobi.
std::vector<double> singular_values(const Tensor& m);

/// Count of singular values > rel_tol * sigma_max.
int numerical_rank(const Tensor& f, double rel_tol = 1e-8);

RankReport rank_report(const AdapterStore& store, double rel_tol = 1e-8);

/// Mean L1 distance of the factors from their all-ones initialization.
double importance(const Adapter& adapter);

/// Mean of I_{l,y} over all classes present at layer l.
double importance_avg(const AdapterStore& store, int layer);

ImportanceReport importance_report(const AdapterStore& store);

struct LayerSelection {
    enum class Strategy { TopK, IndexRange, Threshold } strategy;
    int k = 0;
    int range_lo = 0, range_hi = 0;
    double threshold = 0.0;
};

/// Selected layer indices, ascending. TopK ties break toward lower index.
std::vector<int> select_layers(const std::vector<double>& importances,
                               const LayerSelection& sel);

/// Parameters per class over the given adapted layer dims.
long param_count(const FunctionalKind& kind,
                 const std::vector<std::pair<std::size_t, std::size_t>>& layer_dims);

/// Ratio-k parameter reuse: factors shrink to ceil(dim/k) entries.
Adapter reduce_ratio_k(FunctionalKind kind, std::size_t c_out, std::size_t c_in,
                       Combine combine, bool calibrate, std::size_t k,
                       std::uint64_t seed = 0);

/// Repeats each entry k times along both axes (nearest-neighbor), truncated
/// to the target dims.
Tensor expand_duplicate(const Tensor& f_reduced, std::size_t target_rows,
                        std::size_t target_cols, std::size_t k);

struct SqrtFactorization {
    std::size_t dim;        // ceil(sqrt(n))
    std::size_t flat_len;   // dim * dim
};

SqrtFactorization sqrt_factorize(std::size_t total_adapted_params);

/// Consecutive row-major segment of the flattened shared F for the layer at
/// position `layer_pos` of the adapted layer list (ascending index order).
Tensor slice_for_layer(const Tensor& f_flat,
                       const std::vector<std::pair<std::size_t, std::size_t>>& layer_dims,
                       std::size_t layer_pos);

}  // namespace funlora
