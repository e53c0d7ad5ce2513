#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "statelens/error.hpp"
#include "statelens/tensor.hpp"

namespace statelens {

enum class NodeKind { input, conv2d, batchnorm2d, relu, maxpool2d, avgpool_global, linear, add, flatten };

inline constexpr std::pair<NodeKind, const char*> kNodeKindNames[] = {
    {NodeKind::input, "input"},
    {NodeKind::conv2d, "conv2d"},
    {NodeKind::batchnorm2d, "batchnorm2d"},
    {NodeKind::relu, "relu"},
    {NodeKind::maxpool2d, "maxpool2d"},
    {NodeKind::avgpool_global, "avgpool-global"},
    {NodeKind::linear, "linear"},
    {NodeKind::add, "add"},
    {NodeKind::flatten, "flatten"},
};

inline std::string to_string(NodeKind kind) {
    for (auto& [k, name] : kNodeKindNames)
        if (k == kind) return name;
    return "?";
}

inline NodeKind node_kind_from_string(const std::string& s) {
    for (auto& [k, name] : kNodeKindNames)
        if (s == name) return k;
    throw ValidationError("unknown node kind '" + s + "'");
}

struct InputParams {
    std::size_t channels = 0, height = 0, width = 0;
    bool operator==(const InputParams&) const = default;
};

struct Conv2dParams {
    std::size_t in_ch = 0, out_ch = 0, kh = 0, kw = 0, stride = 1, pad = 0;
    bool bias = false;
    bool operator==(const Conv2dParams&) const = default;
};

struct BatchNormParams {
    std::size_t channels = 0;
    double eps = 1e-5;
    bool operator==(const BatchNormParams&) const = default;
};

struct MaxPoolParams {
    std::size_t kernel = 2, stride = 2;
    bool operator==(const MaxPoolParams&) const = default;
};

struct LinearParams {
    std::size_t in_features = 0, out_features = 0;
    bool bias = true;
    bool operator==(const LinearParams&) const = default;
};

using NodeParams = std::variant<std::monostate, InputParams, Conv2dParams, BatchNormParams, MaxPoolParams, LinearParams>;

struct NodeSpec {
    std::size_t id = 0;
    std::string name;
    NodeKind kind = NodeKind::input;
    NodeParams params;
    bool probe = true;

    bool operator==(const NodeSpec&) const = default;

    template <class P>
    const P& as() const {
        if (auto* p = std::get_if<P>(&params)) return *p;
        throw ValidationError("node '" + name + "' is missing " + to_string(kind) + " parameters");
    }
};

using Edge = std::pair<std::size_t, std::size_t>;

/// Per-image output shape: (channels, rows, cols) for spatial nodes, (features) otherwise.
using NodeShape = std::vector<std::size_t>;

inline std::size_t parameter_count(const NodeSpec& node) {
    switch (node.kind) {
        case NodeKind::conv2d: {
            auto& p = node.as<Conv2dParams>();
            return p.out_ch * p.in_ch * p.kh * p.kw + (p.bias ? p.out_ch : 0);
        }
        case NodeKind::batchnorm2d: return 4 * node.as<BatchNormParams>().channels;
        case NodeKind::linear: {
            auto& p = node.as<LinearParams>();
            return p.out_features * p.in_features + (p.bias ? p.out_features : 0);
        }
        default: return 0;
    }
}

/// Validated directed acyclic graph of computation units. Node ids are 0..n-1.
class ComputationGraph {
public:
    ComputationGraph() = default;

    ComputationGraph(std::vector<NodeSpec> nodes, std::vector<Edge> edges)
        : nodes_(std::move(nodes)), edges_(std::move(edges)) {
        std::sort(nodes_.begin(), nodes_.end(), [](auto& a, auto& b) { return a.id < b.id; });
        validate();
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<NodeSpec>& nodes() const noexcept { return nodes_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const NodeSpec& node(std::size_t id) const { return nodes_.at(id); }
    NodeSpec& mutable_node(std::size_t id) { return nodes_.at(id); }

    /// Predecessors in edge declaration order (operand order for add nodes).
    const std::vector<std::size_t>& inputs(std::size_t id) const { return preds_.at(id); }
    const std::vector<std::size_t>& consumers(std::size_t id) const { return succs_.at(id); }
    const std::vector<std::size_t>& order() const noexcept { return order_; }
    const NodeShape& output_shape(std::size_t id) const { return shapes_.at(id); }
    std::size_t input_id() const noexcept { return input_; }
    std::size_t output_id() const noexcept { return terminal_; }

    std::optional<std::size_t> find(const std::string& name) const {
        for (auto& n : nodes_)
            if (n.name == name) return n.id;
        return std::nullopt;
    }

    std::vector<std::vector<std::uint8_t>> adjacency() const {
        std::vector<std::vector<std::uint8_t>> a(size(), std::vector<std::uint8_t>(size(), 0));
        for (auto [s, d] : edges_) a[s][d] = 1;
        return a;
    }

    /// Probed node ids in topological order.
    std::vector<std::size_t> probes() const {
        std::vector<std::size_t> out;
        for (auto id : order_)
            if (nodes_[id].probe) out.push_back(id);
        return out;
    }

    /// D_out of a node: channel count for spatial outputs, feature count otherwise.
    std::size_t output_width(std::size_t id) const { return shapes_.at(id).front(); }

    std::size_t num_classes() const { return output_width(terminal_); }

    /// Restricts probes to the given names (empty list keeps all non-input nodes).
    void set_probe_filter(const std::vector<std::string>& names) {
        for (auto& n : nodes_) n.probe = n.kind != NodeKind::input && names.empty();
        for (auto& name : names) {
            auto id = find(name);
            if (!id) throw ValidationError("probe filter names unknown node '" + name + "'");
            nodes_[*id].probe = true;
        }
    }

    friend bool operator==(const ComputationGraph& a, const ComputationGraph& b) {
        return a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
    }

private:
    void validate();
    void infer_shapes();

    std::vector<NodeSpec> nodes_;
    std::vector<Edge> edges_;
    std::vector<std::vector<std::size_t>> preds_, succs_;
    std::vector<std::size_t> order_;
    std::vector<NodeShape> shapes_;
    std::size_t input_ = 0, terminal_ = 0;
};

/// Kahn's algorithm with ascending-id tie-break.
inline std::vector<std::size_t> topo_order(std::size_t n, const std::vector<Edge>& edges) {
    std::vector<std::size_t> indegree(n, 0);
    std::vector<std::vector<std::size_t>> succ(n);
    for (auto [s, d] : edges) {
        if (s >= n || d >= n) throw ValidationError("dangling edge (" + std::to_string(s) + "," + std::to_string(d) + ")");
        succ[s].push_back(d);
        ++indegree[d];
    }
    std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
    for (std::size_t i = 0; i < n; ++i)
        if (indegree[i] == 0) ready.push(i);
    std::vector<std::size_t> order;
    order.reserve(n);
    while (!ready.empty()) {
        auto id = ready.top();
        ready.pop();
        order.push_back(id);
        for (auto d : succ[id])
            if (--indegree[d] == 0) ready.push(d);
    }
    if (order.size() != n) throw ValidationError("computation graph contains a cycle");
    return order;
}

inline std::vector<std::size_t> topo_order(const ComputationGraph& g) { return topo_order(g.size(), g.edges()); }

inline void ComputationGraph::validate() {
    const std::size_t n = nodes_.size();
    if (n == 0) throw ValidationError("graph has no nodes");
    for (std::size_t i = 0; i < n; ++i)
        if (nodes_[i].id != i)
            throw ValidationError("node ids must be unique and cover 0.." + std::to_string(n - 1));
    preds_.assign(n, {});
    succs_.assign(n, {});
    std::set<Edge> seen;
    for (auto [s, d] : edges_) {
        if (s >= n || d >= n) throw ValidationError("dangling edge (" + std::to_string(s) + "," + std::to_string(d) + ")");
        if (!seen.insert({s, d}).second)
            throw ValidationError("duplicate edge (" + std::to_string(s) + "," + std::to_string(d) + ")");
        preds_[d].push_back(s);
        succs_[s].push_back(d);
    }
    order_ = topo_order(n, edges_);

    std::size_t inputs = 0, terminals = 0;
    for (auto& node : nodes_) {
        if (node.kind == NodeKind::input) {
            ++inputs;
            input_ = node.id;
            if (!preds_[node.id].empty()) throw ValidationError("input node '" + node.name + "' has predecessors");
        } else {
            std::size_t want = node.kind == NodeKind::add ? 2 : 1;
            if (preds_[node.id].size() != want)
                throw ValidationError("node '" + node.name + "' expects " + std::to_string(want) + " predecessor(s), has " +
                                      std::to_string(preds_[node.id].size()));
        }
        if (succs_[node.id].empty()) {
            ++terminals;
            terminal_ = node.id;
        }
    }
    if (inputs != 1) throw ValidationError("graph must have exactly one input node, found " + std::to_string(inputs));
    if (terminals != 1) throw ValidationError("graph must have exactly one terminal node, found " + std::to_string(terminals));
    infer_shapes();
}

inline void ComputationGraph::infer_shapes() {
    shapes_.assign(nodes_.size(), {});
    for (auto id : order_) {
        const auto& node = nodes_[id];
        auto fail = [&](const std::string& why) { throw ValidationError("node '" + node.name + "': " + why); };
        const NodeShape* in = node.kind == NodeKind::input ? nullptr : &shapes_[preds_[id][0]];
        auto need_spatial = [&] {
            if (in->size() != 3) fail("expects a (channels, rows, cols) input, got rank " + std::to_string(in->size()));
        };
        NodeShape out;
        switch (node.kind) {
            case NodeKind::input: {
                auto& p = node.as<InputParams>();
                if (!p.channels || !p.height || !p.width) fail("input params require channels, height, width >= 1");
                out = {p.channels, p.height, p.width};
                break;
            }
            case NodeKind::conv2d: {
                need_spatial();
                auto& p = node.as<Conv2dParams>();
                if (!p.in_ch || !p.out_ch || !p.kh || !p.kw || !p.stride) fail("conv2d params incomplete");
                if ((*in)[0] != p.in_ch)
                    fail("channel mismatch: input has " + std::to_string((*in)[0]) + ", conv expects " + std::to_string(p.in_ch));
                std::size_t hp = (*in)[1] + 2 * p.pad, wp = (*in)[2] + 2 * p.pad;
                if (hp < p.kh || wp < p.kw) fail("kernel larger than padded input");
                out = {p.out_ch, (hp - p.kh) / p.stride + 1, (wp - p.kw) / p.stride + 1};
                break;
            }
            case NodeKind::batchnorm2d: {
                need_spatial();
                auto& p = node.as<BatchNormParams>();
                if ((*in)[0] != p.channels) fail("channel mismatch for batchnorm2d");
                out = *in;
                break;
            }
            case NodeKind::relu: out = *in; break;
            case NodeKind::maxpool2d: {
                need_spatial();
                auto& p = node.as<MaxPoolParams>();
                if (p.kernel != 2 || p.stride != 2) fail("only 2x2 stride-2 max pooling is supported");
                if ((*in)[1] % 2 || (*in)[2] % 2) fail("pooling window overruns input (odd spatial size)");
                out = {(*in)[0], (*in)[1] / 2, (*in)[2] / 2};
                break;
            }
            case NodeKind::avgpool_global:
                need_spatial();
                out = {(*in)[0], 1, 1};
                break;
            case NodeKind::flatten: out = {shape_size(*in)}; break;
            case NodeKind::linear: {
                auto& p = node.as<LinearParams>();
                if (in->size() != 1) fail("linear expects a flat input; insert a flatten node");
                if ((*in)[0] != p.in_features) fail("feature mismatch for linear");
                if (!p.out_features) fail("linear params incomplete");
                out = {p.out_features};
                break;
            }
            case NodeKind::add: {
                auto& other = shapes_[preds_[id][1]];
                if (*in != other) fail("add operands have different shapes");
                out = *in;
                break;
            }
        }
        if (out.front() > 4096) fail("output width " + std::to_string(out.front()) + " exceeds the 4096-bit state cap");
        shapes_[id] = std::move(out);
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json params_to_json(const NodeSpec& node) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    std::visit(
        [&](auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, InputParams>) {
                j["channels"] = p.channels;
                j["height"] = p.height;
                j["width"] = p.width;
            } else if constexpr (std::is_same_v<P, Conv2dParams>) {
                j["in_ch"] = p.in_ch;
                j["out_ch"] = p.out_ch;
                j["kh"] = p.kh;
                j["kw"] = p.kw;
                j["stride"] = p.stride;
                j["pad"] = p.pad;
                j["bias"] = p.bias;
            } else if constexpr (std::is_same_v<P, BatchNormParams>) {
                j["channels"] = p.channels;
                j["eps"] = p.eps;
            } else if constexpr (std::is_same_v<P, MaxPoolParams>) {
                j["kernel"] = p.kernel;
                j["stride"] = p.stride;
            } else if constexpr (std::is_same_v<P, LinearParams>) {
                j["in_features"] = p.in_features;
                j["out_features"] = p.out_features;
                j["bias"] = p.bias;
            }
        },
        node.params);
    return j;
}

inline NodeParams params_from_json(NodeKind kind, const nlohmann::json& j, const std::string& name) {
    auto req = [&](const char* key) -> std::size_t {
        if (!j.contains(key)) throw ValidationError("node '" + name + "' params missing '" + key + "'");
        return j.at(key).get<std::size_t>();
    };
    switch (kind) {
        case NodeKind::input: return InputParams{req("channels"), req("height"), req("width")};
        case NodeKind::conv2d:
            return Conv2dParams{req("in_ch"), req("out_ch"), req("kh"), req("kw"), req("stride"), req("pad"),
                                j.value("bias", false)};
        case NodeKind::batchnorm2d: return BatchNormParams{req("channels"), j.value("eps", 1e-5)};
        case NodeKind::maxpool2d: return MaxPoolParams{j.value<std::size_t>("kernel", 2), j.value<std::size_t>("stride", 2)};
        case NodeKind::linear: return LinearParams{req("in_features"), req("out_features"), j.value("bias", true)};
        default: return std::monostate{};
    }
}

inline std::string save_graph_text(const ComputationGraph& g) {
    nlohmann::ordered_json doc;
    doc["nodes"] = nlohmann::ordered_json::array();
    for (auto& n : g.nodes()) {
        nlohmann::ordered_json jn;
        jn["id"] = n.id;
        jn["name"] = n.name;
        jn["kind"] = to_string(n.kind);
        jn["params"] = params_to_json(n);
        jn["probe"] = n.probe;
        doc["nodes"].push_back(std::move(jn));
    }
    doc["edges"] = nlohmann::ordered_json::array();
    for (auto [s, d] : g.edges()) doc["edges"].push_back({s, d});
    // One node per line keeps the file diffable.
    std::string out = "{\n  \"nodes\": [\n";
    for (std::size_t i = 0; i < doc["nodes"].size(); ++i)
        out += "    " + doc["nodes"][i].dump() + (i + 1 < doc["nodes"].size() ? ",\n" : "\n");
    out += "  ],\n  \"edges\": " + doc["edges"].dump() + "\n}\n";
    return out;
}

inline ComputationGraph parse_graph_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("graph file is not valid JSON: ") + e.what());
    }
    try {
        std::vector<NodeSpec> nodes;
        for (auto& jn : doc.at("nodes")) {
            NodeSpec n;
            n.id = jn.at("id").get<std::size_t>();
            n.name = jn.at("name").get<std::string>();
            n.kind = node_kind_from_string(jn.at("kind").get<std::string>());
            n.params = params_from_json(n.kind, jn.value("params", nlohmann::json::object()), n.name);
            n.probe = jn.value("probe", n.kind != NodeKind::input);
            nodes.push_back(std::move(n));
        }
        std::vector<Edge> edges;
        for (auto& je : doc.at("edges")) edges.emplace_back(je.at(0).get<std::size_t>(), je.at(1).get<std::size_t>());
        return ComputationGraph(std::move(nodes), std::move(edges));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed graph file: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Parameters per node id; empty for parameterless nodes.
/// conv2d: weight (out-ch major) then optional bias; batchnorm2d: gamma, beta, running mean, running var;
/// linear: weight (out-feature major) then optional bias.
using WeightMap = std::vector<std::vector<float>>;

struct Model {
    ComputationGraph graph;
    WeightMap weights;
};

inline WeightMap bind_weights(const ComputationGraph& g, std::span<const float> blob) {
    std::size_t expected = 0;
    for (auto& n : g.nodes()) expected += parameter_count(n);
    if (blob.size() != expected)
        throw ValidationError("weight-length mismatch: blob holds " + std::to_string(blob.size()) + " floats, graph declares " +
                              std::to_string(expected));
    WeightMap w(g.size());
    std::size_t offset = 0;
    for (auto& n : g.nodes()) {
        std::size_t count = parameter_count(n);
        w[n.id].assign(blob.begin() + static_cast<std::ptrdiff_t>(offset), blob.begin() + static_cast<std::ptrdiff_t>(offset + count));
        offset += count;
    }
    return w;
}

inline void check_weights(const ComputationGraph& g, const WeightMap& w) {
    if (w.size() != g.size()) throw ValidationError("weight map covers " + std::to_string(w.size()) + " nodes, graph has " + std::to_string(g.size()));
    for (auto& n : g.nodes())
        if (w[n.id].size() != parameter_count(n))
            throw ValidationError("weights for node '" + n.name + "' hold " + std::to_string(w[n.id].size()) + " floats, expected " +
                                  std::to_string(parameter_count(n)));
}

inline std::string weights_blob(const ComputationGraph& g, const WeightMap& w) {
    check_weights(g, w);
    std::string out;
    for (auto& n : g.nodes()) append_le_floats(out, w[n.id]);
    return out;
}

inline Model load_model(const std::string& graph_path, const std::string& weights_path) {
    Model m{parse_graph_text(read_file_bytes(graph_path)), {}};
    m.weights = bind_weights(m.graph, parse_le_floats(read_file_bytes(weights_path)));
    return m;
}

inline void save_model(const Model& m, const std::string& graph_path, const std::string& weights_path) {
    write_file_bytes(graph_path, save_graph_text(m.graph));
    write_file_bytes(weights_path, weights_blob(m.graph, m.weights));
}

// ---------------------------------------------------------------------------
// Reports over the graph
// ---------------------------------------------------------------------------

inline std::map<std::string, std::size_t> node_type_histogram(const ComputationGraph& g) {
    std::map<std::string, std::size_t> h;
    for (auto& n : g.nodes()) ++h[to_string(n.kind)];
    return h;
}

/// Blue-to-red ramp; step k covers [1 + 3k, 4 + 3k) percent.
inline constexpr const char* kUtilizationRamp[10] = {"#08306b", "#2166ac", "#4393c3", "#92c5de", "#d1e5f0",
                                                     "#fddbc7", "#f4a582", "#d6604d", "#b2182b", "#67001f"};
inline constexpr double kRampLowPercent = 1.0;
inline constexpr double kRampHighPercent = 31.0;

inline std::size_t ramp_step(double percent) {
    double t = (percent - kRampLowPercent) / (kRampHighPercent - kRampLowPercent);
    t = std::clamp(t, 0.0, 1.0);
    return std::min<std::size_t>(9, static_cast<std::size_t>(std::floor(t * 10.0)));
}

inline std::string dot_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

inline std::string export_dot(const ComputationGraph& g, const std::map<std::size_t, double>& coloring) {
    for (auto& [id, v] : coloring) {
        if (id >= g.size()) throw ValidationError("coloring references unknown node id " + std::to_string(id));
        if (!(v >= 0.0 && v <= 100.0)) throw ValidationError("coloring value for node " + std::to_string(id) + " outside [0,100]");
    }
    std::ostringstream os;
    os << "digraph G {\n";
    os << "  node [shape=box, style=filled, fontname=\"Helvetica\"];\n";
    for (auto& n : g.nodes()) {
        auto it = coloring.find(n.id);
        os << "  n" << n.id << " [label=\"" << dot_escape(n.name);
        if (it == coloring.end()) {
            os << "\", fillcolor=\"#d9d9d9\"";
        } else {
            auto step = ramp_step(it->second);
            os << "\\n" << static_cast<long>(std::lround(it->second)) << "%\", fillcolor=\"" << kUtilizationRamp[step] << "\"";
            if (step <= 1 || step >= 8) os << ", fontcolor=\"white\"";
        }
        os << "];\n";
    }
    for (auto [s, d] : g.edges()) os << "  n" << s << " -> n" << d << ";\n";
    os << "}\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Reference architecture
// ---------------------------------------------------------------------------

/// Small residual network: stem conv/bn/relu/maxpool, two identity residual blocks at `width`
/// channels, one stride-2 projection block at 2*width, a 1x1 head conv, global pooling and a classifier.
inline ComputationGraph make_miniresnet(std::size_t classes, std::size_t width = 16, std::size_t image_size = 32,
                                        std::size_t image_channels = 3) {
    std::vector<NodeSpec> nodes;
    std::vector<Edge> edges;
    auto add = [&](std::string name, NodeKind kind, NodeParams p, std::vector<std::size_t> preds) {
        std::size_t id = nodes.size();
        nodes.push_back(NodeSpec{id, std::move(name), kind, std::move(p), kind != NodeKind::input});
        for (auto s : preds) edges.emplace_back(s, id);
        return id;
    };
    auto conv = [](std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad) {
        return Conv2dParams{in, out, k, k, stride, pad, false};
    };

    auto x = add("input", NodeKind::input, InputParams{image_channels, image_size, image_size}, {});
    x = add("conv1", NodeKind::conv2d, conv(image_channels, width, 3, 1, 1), {x});
    x = add("bn1", NodeKind::batchnorm2d, BatchNormParams{width}, {x});
    x = add("relu", NodeKind::relu, {}, {x});
    x = add("maxpool", NodeKind::maxpool2d, MaxPoolParams{}, {x});

    for (int b = 0; b < 2; ++b) {
        std::string p = "layer1." + std::to_string(b) + ".";
        auto skip = x;
        auto y = add(p + "conv1", NodeKind::conv2d, conv(width, width, 3, 1, 1), {x});
        y = add(p + "bn1", NodeKind::batchnorm2d, BatchNormParams{width}, {y});
        y = add(p + "relu1", NodeKind::relu, {}, {y});
        y = add(p + "conv2", NodeKind::conv2d, conv(width, width, 3, 1, 1), {y});
        y = add(p + "bn2", NodeKind::batchnorm2d, BatchNormParams{width}, {y});
        y = add(p + "add", NodeKind::add, {}, {y, skip});
        x = add(p + "relu2", NodeKind::relu, {}, {y});
    }

    {
        const std::string p = "layer2.0.";
        const std::size_t wide = 2 * width;
        auto skip = x;
        auto y = add(p + "conv1", NodeKind::conv2d, conv(width, wide, 3, 2, 1), {x});
        y = add(p + "bn1", NodeKind::batchnorm2d, BatchNormParams{wide}, {y});
        y = add(p + "relu1", NodeKind::relu, {}, {y});
        y = add(p + "conv2", NodeKind::conv2d, conv(wide, wide, 3, 1, 1), {y});
        y = add(p + "bn2", NodeKind::batchnorm2d, BatchNormParams{wide}, {y});
        auto s = add(p + "downsample.0", NodeKind::conv2d, conv(width, wide, 1, 2, 0), {skip});
        s = add(p + "downsample.1", NodeKind::batchnorm2d, BatchNormParams{wide}, {s});
        y = add(p + "add", NodeKind::add, {}, {y, s});
        x = add(p + "relu2", NodeKind::relu, {}, {y});

        x = add("head.conv", NodeKind::conv2d, conv(wide, wide, 1, 1, 0), {x});
        x = add("head.bn", NodeKind::batchnorm2d, BatchNormParams{wide}, {x});
        x = add("head.relu", NodeKind::relu, {}, {x});
        x = add("avgpool", NodeKind::avgpool_global, {}, {x});
        x = add("flatten", NodeKind::flatten, {}, {x});
        add("fc", NodeKind::linear, LinearParams{wide, classes, true}, {x});
    }
    return ComputationGraph(std::move(nodes), std::move(edges));
}

}  // namespace statelens
