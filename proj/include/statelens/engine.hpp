#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "statelens/error.hpp"
#include "statelens/graph.hpp"
#include "statelens/kernels.hpp"
#include "statelens/tensor.hpp"

namespace statelens {

/// Output tensor of one probed node: (batch, channels, rows, cols) or (batch, features).
struct ActivationRecord {
    std::size_t node = 0;
    Tensor tensor;
};

struct ForwardResult {
    Tensor logits;
    std::vector<ActivationRecord> probes;
};

struct ForwardOptions {
    unsigned threads = 1;
    bool check_finite = true;
};

/// Full evaluation state of one pass. Training mode additionally keeps what backward needs.
struct GraphActivations {
    std::vector<Tensor> outputs;
    std::vector<kernels::BatchNormCache<float>> bn_cache;
    std::vector<std::vector<std::size_t>> pool_argmax;
    bool training = false;
};

namespace detail {

inline Shape batch_shape(std::size_t n, const NodeShape& node_shape) {
    Shape s{n};
    s.insert(s.end(), node_shape.begin(), node_shape.end());
    return s;
}

inline std::span<const float> weight_part(const std::vector<float>& w, std::size_t offset, std::size_t count) {
    return std::span<const float>(w).subspan(offset, count);
}

inline void check_finite(const Tensor& t, const NodeSpec& node) {
    for (float v : t.data())
        if (!std::isfinite(v)) throw NumericError("non-finite value produced at node '" + node.name + "'");
}

}  // namespace detail

/// Evaluates every node in topological order. In training mode batchnorm uses batch statistics
/// and, when `running` is given, blends them into its running-statistic slots with `bn_momentum`.
inline GraphActivations run_graph(const ComputationGraph& g, const WeightMap& weights, const Tensor& batch, bool training,
                                  const ForwardOptions& opt = {}, WeightMap* running = nullptr, float bn_momentum = 0.1f) {
    check_weights(g, weights);
    const auto& in_node = g.node(g.input_id());
    if (batch.rank() != 4) throw ValidationError("input batch must be (N,C,H,W), got " + shape_string(batch.shape()));
    const std::size_t N = batch.dim(0);
    if (detail::batch_shape(N, g.output_shape(in_node.id)) != batch.shape())
        throw ValidationError("input batch shape " + shape_string(batch.shape()) + " does not match input node " +
                              shape_string(detail::batch_shape(N, g.output_shape(in_node.id))));

    GraphActivations act;
    act.training = training;
    act.outputs.resize(g.size());
    if (training) {
        act.bn_cache.resize(g.size());
        act.pool_argmax.resize(g.size());
    }

    for (auto id : g.order()) {
        const auto& node = g.node(id);
        const auto& w = weights[id];
        auto input = [&](std::size_t k = 0) -> const Tensor& { return act.outputs[g.inputs(id)[k]]; };
        Tensor out;
        switch (node.kind) {
            case NodeKind::input: out = batch; break;
            case NodeKind::conv2d: {
                auto& p = node.as<Conv2dParams>();
                std::size_t wn = p.out_ch * p.in_ch * p.kh * p.kw;
                out = kernels::conv2d_forward<float>(input(), detail::weight_part(w, 0, wn),
                                                     p.bias ? detail::weight_part(w, wn, p.out_ch) : std::span<const float>{},
                                                     p, opt.threads);
                break;
            }
            case NodeKind::batchnorm2d: {
                auto& p = node.as<BatchNormParams>();
                if (!training) {
                    out = kernels::batchnorm_inference<float>(input(), w, p.eps, opt.threads);
                } else {
                    out = kernels::batchnorm_train_forward<float>(input(), w, p.eps, act.bn_cache[id], opt.threads);
                    if (running) {
                        const std::size_t C = p.channels;
                        const float m = static_cast<float>(input().size() / C);
                        auto& stats = (*running)[id];
                        for (std::size_t c = 0; c < C; ++c) {
                            const auto& cache = act.bn_cache[id];
                            float unbiased = m > 1 ? cache.var[c] * m / (m - 1) : cache.var[c];
                            stats[2 * C + c] = (1 - bn_momentum) * stats[2 * C + c] + bn_momentum * cache.mean[c];
                            stats[3 * C + c] = (1 - bn_momentum) * stats[3 * C + c] + bn_momentum * unbiased;
                        }
                    }
                }
                break;
            }
            case NodeKind::relu: out = kernels::relu_forward(input()); break;
            case NodeKind::maxpool2d:
                out = kernels::maxpool_forward(input(), training ? &act.pool_argmax[id] : nullptr);
                break;
            case NodeKind::avgpool_global: out = kernels::global_avgpool_forward(input()); break;
            case NodeKind::flatten: out = input().reshaped({N, shape_size(g.output_shape(id))}); break;
            case NodeKind::linear: {
                auto& p = node.as<LinearParams>();
                std::size_t wn = p.out_features * p.in_features;
                out = kernels::linear_forward<float>(input(), detail::weight_part(w, 0, wn),
                                                     p.bias ? detail::weight_part(w, wn, p.out_features) : std::span<const float>{}, p);
                break;
            }
            case NodeKind::add: out = elementwise(ElementwiseOp::add, input(0), input(1)); break;
        }
#ifndef NDEBUG
        if (out.shape() != detail::batch_shape(N, g.output_shape(id)))
            throw ValidationError("node '" + node.name + "' produced " + shape_string(out.shape()) + ", declared " +
                                  shape_string(detail::batch_shape(N, g.output_shape(id))));
#endif
        if (opt.check_finite) detail::check_finite(out, node);
        act.outputs[id] = std::move(out);
    }
    return act;
}

/// Inference-mode forward pass returning logits and one record per probed node.
inline ForwardResult forward(const Model& model, const Tensor& batch, const ForwardOptions& opt = {}) {
    GraphActivations act = run_graph(model.graph, model.weights, batch, false, opt);
    ForwardResult r;
    for (auto id : model.graph.probes()) r.probes.push_back({id, act.outputs[id]});
    r.logits = std::move(act.outputs[model.graph.output_id()]);
    return r;
}

inline std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    std::vector<int> out(N);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (logits[n * K + k] > logits[n * K + best]) best = k;
        out[n] = static_cast<int>(best);
    }
    return out;
}

/// Copies images [begin, end) of a (N,C,H,W) tensor.
inline Tensor slice_batch(const Tensor& images, std::size_t begin, std::size_t end) {
    Shape s = images.shape();
    if (begin >= end || end > s[0])
        throw ValidationError("batch slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                              std::to_string(s[0]) + " images");
    const std::size_t per = images.size() / s[0];
    s[0] = end - begin;
    std::vector<float> data(images.raw() + begin * per, images.raw() + end * per);
    return Tensor(std::move(s), std::move(data));
}

inline Tensor gather_batch(const Tensor& images, std::span<const std::size_t> rows) {
    Shape s = images.shape();
    const std::size_t per = images.size() / s[0];
    s[0] = rows.size();
    std::vector<float> data;
    data.reserve(rows.size() * per);
    for (auto r : rows) data.insert(data.end(), images.raw() + r * per, images.raw() + (r + 1) * per);
    return Tensor(std::move(s), std::move(data));
}

inline std::vector<int> predict(const Model& model, const Tensor& images, std::size_t batch_size = 64, unsigned threads = 1) {
    std::vector<int> out;
    for (std::size_t b = 0; b < images.dim(0); b += batch_size) {
        auto e = std::min(images.dim(0), b + batch_size);
        auto pred = argmax_rows(forward(model, slice_batch(images, b, e), {threads, true}).logits);
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

}  // namespace statelens
