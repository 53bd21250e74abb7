// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "funlora/core.hpp"
#include "funlora/flow.hpp"
#include "funlora/tensor.hpp"

namespace funlora {

struct DenseLayer {
    Tensor W;  // out x in
    Tensor b;  // out
};

struct NetConfig {
    std::size_t data_dim = 2;
    std::size_t time_features = 8;
    std::size_t hidden_width = 64;
    std::size_t hidden_layers = 4;
    // Adapted layer indices (into the full dense layer list). Empty means the
    // default: the last two hidden layers.
    std::vector<int> adapted_layers;
    FunctionalKind kind;
    Combine combine = Combine::Mul;
    bool calibrate = true;
    std::size_t ratio_k = 1;
    bool sqrt_factorization = false;
    // Conditioning for incremental classes: adapters (default) or embeddings
    // only (the vanilla lower bound).
    bool vanilla_conditioning = false;
};

enum class Phase { Task1, Incremental };

/// Small conditional vector field v(t, x, y): dense layers with a smooth
/// nonlinearity, sinusoidal time features concatenated to the input, learned
/// class embeddings for task-1 classes, and per-class FunLoRA adapters over
/// frozen base weights on the designated layers for later classes.
class VectorFieldNet {
public:
    VectorFieldNet() = default;
    VectorFieldNet(NetConfig cfg, std::uint64_t seed);

    const NetConfig& config() const { return cfg_; }
    std::size_t layer_count() const { return layers_.size(); }
    const std::vector<int>& adapted_layers() const { return adapted_layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers_mutable() { return layers_; }
    const std::map<int, Tensor>& embeddings() const { return embed_; }
    std::map<int, Tensor>& embeddings_mutable() { return embed_; }
    AdapterStore& store() { return store_; }
    const AdapterStore& store() const { return store_; }

    /// Registers class y for task-1 style conditioning (learned embedding).
    void add_embedding_class(int y, std::uint64_t seed);
    /// Creates adapters for class y on every adapted layer (or one shared
    /// factorized adapter when sqrt_factorization is on).
    void add_adapter_class(int y, std::uint64_t seed);

    bool knows_class(int y) const;

    /// Velocity prediction for a batch sharing label y. t has one entry per row.
    Tensor forward(const std::vector<double>& t, const Tensor& x, int y) const;

    BatchField as_batch_field() const;
    /// Field over a flat state for the ODE solvers, label fixed.
    OdeField sampling_field(int y) const;

    std::vector<Tensor> trainable_params(Phase phase, int y = -1);
    std::vector<Tensor> base_params();

    /// Effective weight of `layer` for class y (adapters applied), or the
    /// frozen base weight when the class has no adapter.
    Tensor effective_weight(int layer, int y) const;

    long adapter_param_count() const;

private:
    Tensor assemble_input(const std::vector<double>& t, const Tensor& x, int y) const;
    Tensor adapter_matrix(int layer, int y) const;

    NetConfig cfg_;
    std::vector<DenseLayer> layers_;
    std::vector<int> adapted_layers_;
    std::map<int, Tensor> embed_;  // task-1 (and vanilla-mode) class embeddings
    AdapterStore store_;
    // sqrt factorization: one shared adapter per class, stored under layer -1
    std::vector<std::pair<std::size_t, std::size_t>> adapted_dims_;
};

/// Optional tiny convolutional layer sharing the adapter semantics of the
/// dense layers: each kernel is rescaled by the functional matrix entry.
struct TinyConvLayer {
    Tensor W0;  // C_out x C_in x s x s

    /// Valid (no padding) 2-D convolution of a single C_in x H x W input with
    /// the class-modulated kernels.
    Tensor forward(const Tensor& x, const Tensor& f_y) const;
};

/// Small dense classifier over raw coordinates; reinitialized per task.
class ClassifierNet {
public:
    ClassifierNet() = default;
    ClassifierNet(std::size_t input_dim, std::size_t num_classes, std::uint64_t seed,
                  std::size_t width = 32);

    std::size_t num_classes() const { return num_classes_; }
    Tensor forward(const Tensor& x) const;
    std::vector<Tensor> params();

private:
    std::vector<DenseLayer> layers_;
    std::size_t num_classes_ = 0;
};

struct LabeledData {
    Tensor x;  // N x d
    std::vector<int> labels;
};

ClassifierNet classifier_train(const LabeledData& data, std::size_t num_classes, int epochs,
                               std::uint64_t seed, double lr = 0.05,
                               std::size_t batch_size = 100);

/// Accuracy in [0, 100]; throws on an empty test set.
double classifier_eval(const ClassifierNet& net, const LabeledData& test);

}  // namespace funlora
