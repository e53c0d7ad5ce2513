#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "statelens/datagen.hpp"
#include "statelens/engine.hpp"
#include "statelens/error.hpp"
#include "statelens/graph.hpp"
#include "statelens/kernels.hpp"

namespace statelens {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    double label_smoothing = 0.0;
    unsigned threads = 1;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
        if (batch_size < 1) throw ValidationError("batch size must be >= 1");
        if (epochs < 1) throw ValidationError("epochs must be >= 1");
        if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ValidationError("label smoothing must be in [0,1)");
    }
};

/// Images already converted to network input, with training labels (poisoned records carry the target class).
struct TrainingData {
    std::size_t classes = 0;
    Tensor train_x;
    std::vector<int> train_y;
    Tensor test_x;
    std::vector<int> test_y;
    Tensor attack_x;  // held-out source-class images with the trigger applied; empty for clean data
    int attack_target = -1;
    std::string dataset_hash;
};

struct TrainedModel {
    Model model;
    double clean_accuracy = 0.0;
    std::optional<double> attack_success_rate;
    double train_mode_accuracy = 0.0;      // last epoch, batch statistics
    double inference_train_accuracy = 0.0;  // training set, running statistics
    std::string dataset_hash;
    TrainConfig config;
    std::vector<double> epoch_loss;
};

/// Splits a manifest into train/test tensors. Training images come from `dir` when given,
/// otherwise they are re-rendered from their seeds; held-out images are always rendered clean, and the
/// attack set re-renders held-out source-class images with the trigger.
inline TrainingData make_training_data(const DatasetManifest& m, const std::string& dir = {}) {
    const auto& cfg = m.config;
    const bool poisoned = cfg.trigger.kind != TriggerKind::none;
    std::vector<Image> train, test, attack;
    TrainingData d;
    d.classes = cfg.classes;
    d.dataset_hash = m.hash;
    for (auto& r : m.records) {
        if (m.is_test(r)) {
            test.push_back(render_record(cfg, r, false));
            d.test_y.push_back(r.label);
            if (poisoned && r.label == cfg.trigger.source) attack.push_back(render_record(cfg, r, true));
        } else {
            train.push_back(dir.empty() ? render_record(cfg, r, r.poisoned) : load_record_image(dir, r));
            d.train_y.push_back(r.poisoned ? cfg.trigger.target : r.label);
        }
    }
    if (train.empty()) throw ValidationError("dataset has no training records");
    d.train_x = images_to_tensor(train);
    if (!test.empty()) d.test_x = images_to_tensor(test);
    if (!attack.empty()) {
        d.attack_x = images_to_tensor(attack);
        d.attack_target = cfg.trigger.target;
    }
    return d;
}

/// He-normal conv weights, uniform linear weights, identity batchnorm.
inline WeightMap init_weights(const ComputationGraph& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    WeightMap w(g.size());
    for (auto& n : g.nodes()) {
        w[n.id].assign(parameter_count(n), 0.0f);
        switch (n.kind) {
            case NodeKind::conv2d: {
                auto& p = n.as<Conv2dParams>();
                std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(p.in_ch * p.kh * p.kw)));
                for (std::size_t i = 0; i < p.out_ch * p.in_ch * p.kh * p.kw; ++i) w[n.id][i] = dist(rng);
                break;
            }
            case NodeKind::linear: {
                auto& p = n.as<LinearParams>();
                float bound = 1.0f / std::sqrt(static_cast<float>(p.in_features));
                std::uniform_real_distribution<float> dist(-bound, bound);
                for (std::size_t i = 0; i < p.out_features * p.in_features; ++i) w[n.id][i] = dist(rng);
                break;
            }
            case NodeKind::batchnorm2d: {
                std::size_t C = n.as<BatchNormParams>().channels;
                std::fill_n(w[n.id].begin(), C, 1.0f);
                std::fill_n(w[n.id].begin() + static_cast<std::ptrdiff_t>(3 * C), C, 1.0f);
                break;
            }
            default: break;
        }
    }
    return w;
}

namespace detail {

inline void accumulate_grad(Tensor& dst, Tensor&& src) {
    if (dst.empty()) {
        dst = std::move(src);
        return;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

/// Reverse-mode pass over a training-mode activation record. Gradients for batchnorm running
/// statistics stay zero.
inline WeightMap backward(const ComputationGraph& g, const WeightMap& weights, const GraphActivations& act, Tensor dlogits,
                          unsigned threads = 1) {
    if (!act.training || act.outputs.size() != g.size()) throw ValidationError("backward needs a cached training-mode forward pass");
    WeightMap grads(g.size());
    for (auto& n : g.nodes()) grads[n.id].assign(parameter_count(n), 0.0f);
    std::vector<Tensor> dout(g.size());
    dout[g.output_id()] = std::move(dlogits);

    const auto& order = g.order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const std::size_t id = *it;
        if (dout[id].empty()) continue;
        const Tensor dy = std::move(dout[id]);
        dout[id] = Tensor{};
        const auto& node = g.node(id);
        if (node.kind == NodeKind::input) continue;
        const std::size_t src = g.inputs(id)[0];
        const Tensor& x = act.outputs[src];
        const bool need_dx = src != g.input_id();
        const auto& w = weights[id];
        auto& gw = grads[id];
        switch (node.kind) {
            case NodeKind::conv2d: {
                auto& p = node.as<Conv2dParams>();
                std::size_t wn = p.out_ch * p.in_ch * p.kh * p.kw;
                auto r = kernels::conv2d_backward<float>(x, std::span<const float>(w).first(wn), dy, p, p.bias, threads);
                std::copy(r.dweight.begin(), r.dweight.end(), gw.begin());
                std::copy(r.dbias.begin(), r.dbias.end(), gw.begin() + static_cast<std::ptrdiff_t>(wn));
                if (need_dx) detail::accumulate_grad(dout[src], std::move(r.dx));
                break;
            }
            case NodeKind::batchnorm2d: {
                std::size_t C = node.as<BatchNormParams>().channels;
                auto r = kernels::batchnorm_backward<float>(dy, w, act.bn_cache[id], threads);
                std::copy(r.dgamma.begin(), r.dgamma.end(), gw.begin());
                std::copy(r.dbeta.begin(), r.dbeta.end(), gw.begin() + static_cast<std::ptrdiff_t>(C));
                detail::accumulate_grad(dout[src], std::move(r.dx));
                break;
            }
            case NodeKind::relu: detail::accumulate_grad(dout[src], kernels::relu_backward(x, dy)); break;
            case NodeKind::maxpool2d:
                detail::accumulate_grad(dout[src], kernels::maxpool_backward(x.shape(), act.pool_argmax[id], dy));
                break;
            case NodeKind::avgpool_global: detail::accumulate_grad(dout[src], kernels::global_avgpool_backward(x.shape(), dy)); break;
            case NodeKind::flatten: detail::accumulate_grad(dout[src], dy.reshaped(x.shape())); break;
            case NodeKind::linear: {
                auto& p = node.as<LinearParams>();
                std::size_t wn = p.out_features * p.in_features;
                auto r = kernels::linear_backward<float>(x, std::span<const float>(w).first(wn), dy, p);
                std::copy(r.dweight.begin(), r.dweight.end(), gw.begin());
                std::copy(r.dbias.begin(), r.dbias.end(), gw.begin() + static_cast<std::ptrdiff_t>(wn));
                if (need_dx) detail::accumulate_grad(dout[src], std::move(r.dx));
                break;
            }
            case NodeKind::add: {
                Tensor copy = dy;
                detail::accumulate_grad(dout[g.inputs(id)[0]], std::move(copy));
                Tensor second = dy;
                detail::accumulate_grad(dout[g.inputs(id)[1]], std::move(second));
                break;
            }
            case NodeKind::input: break;
        }
    }
    return grads;
}

/// v <- momentum * v + grad; w <- w - lr * v.
inline void sgd_momentum_step(WeightMap& weights, WeightMap& velocity, const WeightMap& grads, double lr, double momentum) {
    for (std::size_t id = 0; id < weights.size(); ++id)
        for (std::size_t i = 0; i < weights[id].size(); ++i) {
            velocity[id][i] = static_cast<float>(momentum) * velocity[id][i] + grads[id][i];
            weights[id][i] -= static_cast<float>(lr) * velocity[id][i];
        }
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& expected) {
    if (predicted.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == expected[i];
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

inline TrainedModel train(const ComputationGraph& graph, const TrainingData& data, const TrainConfig& cfg) {
    cfg.validate();
    if (graph.num_classes() != data.classes)
        throw ValidationError("class-count mismatch: classifier has " + std::to_string(graph.num_classes()) + " outputs, dataset has " +
                              std::to_string(data.classes) + " classes");
    TrainedModel result;
    result.config = cfg;
    result.dataset_hash = data.dataset_hash;
    result.model.graph = graph;
    WeightMap& weights = result.model.weights;
    weights = init_weights(graph, cfg.seed);
    WeightMap velocity = weights;
    for (auto& v : velocity) std::fill(v.begin(), v.end(), 0.0f);

    const std::size_t n = data.train_x.dim(0);
    std::vector<std::size_t> perm(n);
    std::mt19937_64 shuffle_rng(splitmix64(cfg.seed ^ 0x5f3759dfull));
    const ForwardOptions opt{cfg.threads, true};

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t correct = 0, batches = 0;
        for (std::size_t b = 0; b < n; b += cfg.batch_size) {
            std::span<const std::size_t> rows(perm.data() + b, std::min(cfg.batch_size, n - b));
            Tensor x = gather_batch(data.train_x, rows);
            std::vector<int> y;
            for (auto r : rows) y.push_back(data.train_y[r]);

            GraphActivations act;
            try {
                act = run_graph(graph, weights, x, true, opt, &weights);
            } catch (const NumericError& e) {
                throw NumericError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
            }
            const Tensor& logits = act.outputs[graph.output_id()];
            auto loss = kernels::softmax_cross_entropy<float>(logits, y, static_cast<float>(cfg.label_smoothing));
            if (!std::isfinite(loss.loss))
                throw NumericError("training diverged in epoch " + std::to_string(epoch) + ": loss is not finite");
            auto pred = argmax_rows(logits);
            for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
            loss_sum += loss.loss;
            ++batches;
            WeightMap grads = backward(graph, weights, act, std::move(loss.dlogits), cfg.threads);
            sgd_momentum_step(weights, velocity, grads, cfg.learning_rate, cfg.momentum);
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        result.train_mode_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    }
    for (auto& w : weights)
        for (float v : w)
            if (!std::isfinite(v)) throw NumericError("training diverged: non-finite weights");

    result.inference_train_accuracy = accuracy(predict(result.model, data.train_x, 64, cfg.threads), data.train_y);
    if (!data.test_x.empty()) result.clean_accuracy = accuracy(predict(result.model, data.test_x, 64, cfg.threads), data.test_y);
    if (!data.attack_x.empty()) {
        auto pred = predict(result.model, data.attack_x, 64, cfg.threads);
        result.attack_success_rate = accuracy(pred, std::vector<int>(pred.size(), data.attack_target));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Persistence: <prefix>.json graph, <prefix>.bin weights, <prefix>.meta sidecar
// ---------------------------------------------------------------------------

inline std::string train_config_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "epochs=" << c.epochs << "\nbatch_size=" << c.batch_size << "\nlearning_rate=" << format_double(c.learning_rate)
       << "\nmomentum=" << format_double(c.momentum) << "\nseed=" << c.seed << "\nlabel_smoothing=" << format_double(c.label_smoothing)
       << '\n';
    return os.str();
}

inline TrainConfig train_config_from(const std::map<std::string, std::string>& kv, TrainConfig c = {}) {
    try {
        if (auto it = kv.find("epochs"); it != kv.end()) c.epochs = std::stoull(it->second);
        if (auto it = kv.find("batch_size"); it != kv.end()) c.batch_size = std::stoull(it->second);
        if (auto it = kv.find("learning_rate"); it != kv.end()) c.learning_rate = std::stod(it->second);
        if (auto it = kv.find("momentum"); it != kv.end()) c.momentum = std::stod(it->second);
        if (auto it = kv.find("seed"); it != kv.end()) c.seed = std::stoull(it->second);
        if (auto it = kv.find("label_smoothing"); it != kv.end()) c.label_smoothing = std::stod(it->second);
    } catch (const std::logic_error& e) {
        throw ValidationError(std::string("malformed training config value: ") + e.what());
    }
    return c;
}

inline void save_trained_model(const TrainedModel& m, const std::string& prefix) {
    save_model(m.model, prefix + ".json", prefix + ".bin");
    std::ostringstream os;
    os << train_config_text(m.config) << "dataset_hash=" << m.dataset_hash << "\nclean_accuracy=" << format_double(m.clean_accuracy)
       << "\n";
    if (m.attack_success_rate) os << "attack_success_rate=" << format_double(*m.attack_success_rate) << "\n";
    os << "train_mode_accuracy=" << format_double(m.train_mode_accuracy)
       << "\ninference_train_accuracy=" << format_double(m.inference_train_accuracy) << "\n";
    write_file_bytes(prefix + ".meta", os.str());
}

inline TrainedModel load_trained_model(const std::string& prefix) {
    TrainedModel m;
    m.model = load_model(prefix + ".json", prefix + ".bin");
    if (std::filesystem::exists(prefix + ".meta")) {
        auto kv = parse_key_values(read_file_bytes(prefix + ".meta"));
        m.config = train_config_from(kv);
        m.dataset_hash = kv["dataset_hash"];
        if (kv.count("clean_accuracy")) m.clean_accuracy = std::stod(kv["clean_accuracy"]);
        if (kv.count("attack_success_rate")) m.attack_success_rate = std::stod(kv["attack_success_rate"]);
        if (kv.count("train_mode_accuracy")) m.train_mode_accuracy = std::stod(kv["train_mode_accuracy"]);
        if (kv.count("inference_train_accuracy")) m.inference_train_accuracy = std::stod(kv["inference_train_accuracy"]);
    }
    return m;
}

}  // namespace statelens
