// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//

#include "funlora/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "funlora/optim.hpp"

namespace funlora {

namespace {

Tensor random_normal(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng,
                     bool requires_grad) {
    std::normal_distribution<double> normal(0.0, stddev);
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> data(n);
    for (auto& v : data) v = normal(rng);
    return Tensor::from(std::move(data), std::move(shape), requires_grad);
}

DenseLayer make_layer(std::size_t out, std::size_t in, std::mt19937_64& rng) {
    DenseLayer l;
    l.W = random_normal({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng, true);
    l.b = Tensor::zeros({out}, true);
    return l;
}

}  // namespace

VectorFieldNet::VectorFieldNet(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    if (cfg_.hidden_layers < 2)
        throw std::invalid_argument("VectorFieldNet: need at least two hidden layers");
    std::mt19937_64 rng(seed);
    const std::size_t in0 = cfg_.data_dim + cfg_.time_features;
    layers_.push_back(make_layer(cfg_.hidden_width, in0, rng));
    for (std::size_t i = 1; i < cfg_.hidden_layers; ++i)
        layers_.push_back(make_layer(cfg_.hidden_width, cfg_.hidden_width, rng));
    layers_.push_back(make_layer(cfg_.data_dim, cfg_.hidden_width, rng));

    if (cfg_.adapted_layers.empty()) {
        adapted_layers_ = {static_cast<int>(cfg_.hidden_layers) - 2,
                           static_cast<int>(cfg_.hidden_layers) - 1};
    } else {
        adapted_layers_ = cfg_.adapted_layers;
        std::sort(adapted_layers_.begin(), adapted_layers_.end());
        for (int l : adapted_layers_)
            if (l < 0 || static_cast<std::size_t>(l) >= layers_.size())
                throw std::invalid_argument("VectorFieldNet: adapted layer out of range");
    }
    for (int l : adapted_layers_) {
        const auto& w = layers_[static_cast<std::size_t>(l)].W;
        adapted_dims_.emplace_back(w.rows(), w.cols());
    }
}

void VectorFieldNet::add_embedding_class(int y, std::uint64_t seed) {
    if (embed_.count(y))
        throw std::invalid_argument("embedding already present for class " + std::to_string(y));
    std::mt19937_64 rng(seed);
    embed_[y] = random_normal({cfg_.data_dim + cfg_.time_features}, 0.1, rng, true);
}

void VectorFieldNet::add_adapter_class(int y, std::uint64_t seed) {
    if (cfg_.vanilla_conditioning) {
        add_embedding_class(y, seed);
        return;
    }
    if (cfg_.sqrt_factorization) {
        std::size_t n = 0;
        for (const auto& [o, i] : adapted_dims_) n += o * i;
        const auto fact = sqrt_factorize(n);
        Adapter shared = init_adapter(cfg_.kind, fact.dim, fact.dim, cfg_.combine,
                                      cfg_.calibrate, seed);
        shared.class_label = y;
        store_.insert(-1, y, std::move(shared));
        return;
    }
    std::uint64_t s = seed;
    for (std::size_t pos = 0; pos < adapted_dims_.size(); ++pos) {
        const auto [o, i] = adapted_dims_[pos];
        Adapter a = cfg_.ratio_k > 1
                        ? reduce_ratio_k(cfg_.kind, o, i, cfg_.combine, cfg_.calibrate,
                                         cfg_.ratio_k, s)
                        : init_adapter(cfg_.kind, o, i, cfg_.combine, cfg_.calibrate, s);
        a.class_label = y;
        store_.insert(adapted_layers_[pos], y, std::move(a));
        ++s;
    }
}

bool VectorFieldNet::knows_class(int y) const {
    if (embed_.count(y)) return true;
    const auto classes = store_.classes();
    return std::find(classes.begin(), classes.end(), y) != classes.end();
}

Tensor VectorFieldNet::adapter_matrix(int layer, int y) const {
    if (cfg_.sqrt_factorization) {
        const Adapter& shared = store_.get(-1, y);
        Tensor f_full = funlora_matrix(shared);
        Tensor flat = reshape(f_full, {f_full.size()});
        const auto it = std::find(adapted_layers_.begin(), adapted_layers_.end(), layer);
        const std::size_t pos =
            static_cast<std::size_t>(std::distance(adapted_layers_.begin(), it));
        return slice_for_layer(flat, adapted_dims_, pos);
    }
    const Adapter& a = store_.get(layer, y);
    Tensor f = funlora_matrix(a);
    if (cfg_.ratio_k > 1) {
        const auto& w = layers_[static_cast<std::size_t>(layer)].W;
        f = expand_duplicate(f, w.rows(), w.cols(), cfg_.ratio_k);
    }
    return f;
}

Tensor VectorFieldNet::effective_weight(int layer, int y) const {
    const Tensor& w0 = layers_[static_cast<std::size_t>(layer)].W;
    const bool adapted =
        std::find(adapted_layers_.begin(), adapted_layers_.end(), layer) !=
        adapted_layers_.end();
    if (!adapted || cfg_.vanilla_conditioning) return w0;
    const int shared_key = cfg_.sqrt_factorization ? -1 : layer;
    if (!store_.contains(shared_key, y)) return w0;  // task-1 classes stay adapter-free
    return combine(w0, adapter_matrix(layer, y), cfg_.combine);
}

Tensor VectorFieldNet::assemble_input(const std::vector<double>& t, const Tensor& x,
                                      int y) const {
    const std::size_t batch = x.rows(), d = x.cols();
    if (d != cfg_.data_dim) throw std::invalid_argument("forward: wrong data dimension");
    if (t.size() != batch) throw std::invalid_argument("forward: t length != batch");
    const std::size_t tf = cfg_.time_features;
    const std::size_t width = d + tf;
    std::vector<double> inp(batch * width);
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < d; ++j) inp[i * width + j] = x.at(i, j);
        // sinusoidal time features at doubling frequencies
        for (std::size_t k = 0; k < tf; ++k) {
            const double freq = std::pow(2.0, static_cast<double>(k / 2));
            inp[i * width + d + k] =
                (k % 2 == 0) ? std::sin(freq * t[i]) : std::cos(freq * t[i]);
        }
    }
    Tensor h = Tensor::from(std::move(inp), {batch, width});
    auto it = embed_.find(y);
    if (it != embed_.end()) h = add_rowvec(h, it->second);
    return h;
}

Tensor VectorFieldNet::forward(const std::vector<double>& t, const Tensor& x, int y) const {
    if (!knows_class(y))
        throw std::invalid_argument("forward: unknown class label " + std::to_string(y));
    Tensor h = assemble_input(t, x, y);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Tensor w = effective_weight(static_cast<int>(l), y);
        h = add_rowvec(matmul(h, transpose(w)), layers_[l].b);
        if (l + 1 < layers_.size()) h = tanh(h);
    }
    return h;
}

BatchField VectorFieldNet::as_batch_field() const {
    return [this](const std::vector<double>& t, const Tensor& x, int y) {
        return forward(t, x, y);
    };
}

OdeField VectorFieldNet::sampling_field(int y) const {
    const std::size_t d = cfg_.data_dim;
    return [this, y, d](double t, const std::vector<double>& flat) {
        const std::size_t batch = flat.size() / d;
        Tensor x = Tensor::from(flat, {batch, d});
        std::vector<double> tv(batch, t);
        return forward(tv, x, y).data();
    };
}

std::vector<Tensor> VectorFieldNet::trainable_params(Phase phase, int y) {
    if (phase == Phase::Task1) return base_params();
    if (store_.is_frozen(y))
        throw std::invalid_argument("class " + std::to_string(y) +
                                    " belongs to a completed task; its parameters are frozen");
    if (cfg_.vanilla_conditioning) {
        auto it = embed_.find(y);
        if (it == embed_.end())
            throw std::invalid_argument("no embedding for class " + std::to_string(y));
        return {it->second};
    }
    std::vector<Tensor> out;
    if (cfg_.sqrt_factorization) {
        for (auto& p : store_.get(-1, y).trainable_params()) out.push_back(p);
        return out;
    }
    for (int l : adapted_layers_)
        for (auto& p : store_.get(l, y).trainable_params()) out.push_back(p);
    return out;
}

std::vector<Tensor> VectorFieldNet::base_params() {
    std::vector<Tensor> out;
    for (auto& l : layers_) {
        out.push_back(l.W);
        out.push_back(l.b);
    }
    for (auto& [_, e] : embed_) out.push_back(e);
    return out;
}

long VectorFieldNet::adapter_param_count() const {
    if (cfg_.vanilla_conditioning) return 0;
    if (cfg_.sqrt_factorization) {
        std::size_t n = 0;
        for (const auto& [o, i] : adapted_dims_) n += o * i;
        const auto fact = sqrt_factorize(n);
        return param_count(cfg_.kind, {{fact.dim, fact.dim}});
    }
    std::vector<std::pair<std::size_t, std::size_t>> dims;
    for (const auto& [o, i] : adapted_dims_) {
        const std::size_t k = cfg_.ratio_k;
        dims.emplace_back(std::max<std::size_t>(1, (o + k - 1) / k),
                          std::max<std::size_t>(1, (i + k - 1) / k));
    }
    return param_count(cfg_.kind, dims);
}

// ---- TinyConvLayer -------------------------------------------------------------

Tensor TinyConvLayer::forward(const Tensor& x, const Tensor& f_y) const {
    if (x.rank() != 3) throw std::invalid_argument("conv forward: input must be C x H x W");
    Tensor w = conv_modulate(W0, f_y);
    const auto& ws = w.shape();
    const std::size_t co = ws[0], ci = ws[1], s = ws[2];
    const auto& xs = x.shape();
    if (xs[0] != ci) throw std::invalid_argument("conv forward: channel mismatch");
    const std::size_t h = xs[1], wd = xs[2];
    if (h < s || wd < s) throw std::invalid_argument("conv forward: input smaller than kernel");
    const std::size_t oh = h - s + 1, ow = wd - s + 1;
    std::vector<double> out(co * oh * ow, 0.0);
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t r = 0; r < oh; ++r)
                for (std::size_t c = 0; c < ow; ++c) {
                    double acc = 0.0;
                    for (std::size_t kr = 0; kr < s; ++kr)
                        for (std::size_t kc = 0; kc < s; ++kc)
                            acc += w.data()[((o * ci + i) * s + kr) * s + kc] *
                                   x.data()[(i * h + r + kr) * wd + c + kc];
                    out[(o * oh + r) * ow + c] += acc;
                }
    return Tensor::from(std::move(out), {co, oh, ow});
}

// ---- classifier ------------------------------------------------------------------

ClassifierNet::ClassifierNet(std::size_t input_dim, std::size_t num_classes,
                             std::uint64_t seed, std::size_t width)
    : num_classes_(num_classes) {
    std::mt19937_64 rng(seed);
    layers_.push_back(make_layer(width, input_dim, rng));
    layers_.push_back(make_layer(width, width, rng));
    layers_.push_back(make_layer(num_classes, width, rng));
}

Tensor ClassifierNet::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        h = add_rowvec(matmul(h, transpose(layers_[l].W)), layers_[l].b);
        if (l + 1 < layers_.size()) h = tanh(h);
    }
    return h;
}

std::vector<Tensor> ClassifierNet::params() {
    std::vector<Tensor> out;
    for (auto& l : layers_) {
        out.push_back(l.W);
        out.push_back(l.b);
    }
    return out;
}

ClassifierNet classifier_train(const LabeledData& data, std::size_t num_classes, int epochs,
                               std::uint64_t seed, double lr, std::size_t batch_size) {
    if (data.labels.empty()) throw std::invalid_argument("classifier_train: empty data");
    for (int y : data.labels)
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw std::invalid_argument("classifier_train: label outside head size");
    const std::size_t n = data.labels.size(), d = data.x.cols();
    ClassifierNet net(d, num_classes, seed);
    SgdOptimizer opt(net.params(), lr);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t m = std::min(batch_size, n - start);
            std::vector<double> xb(m * d);
            std::vector<int> yb(m);
            for (std::size_t r = 0; r < m; ++r) {
                const std::size_t i = order[start + r];
                for (std::size_t j = 0; j < d; ++j) xb[r * d + j] = data.x.at(i, j);
                yb[r] = data.labels[i];
            }
            Tape tape;
            Tape::Scope scope(tape);
            Tensor logits = net.forward(Tensor::from(std::move(xb), {m, d}));
            Tensor loss = softmax_cross_entropy(logits, yb);
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }
    }
    return net;
}

double classifier_eval(const ClassifierNet& net, const LabeledData& test) {
    if (test.labels.empty())
        throw std::invalid_argument("classifier_eval: empty test set");
    Tensor logits = net.forward(test.x);
    const std::size_t n = test.labels.size(), c = logits.cols();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        if (static_cast<int>(best) == test.labels[i]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace funlora
