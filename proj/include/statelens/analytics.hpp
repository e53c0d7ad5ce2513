#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "statelens/datagen.hpp"
#include "statelens/engine.hpp"
#include "statelens/error.hpp"
#include "statelens/graph.hpp"
#include "statelens/state_probe.hpp"

namespace statelens {

enum class Metric { state, entropy, kldiv };
enum class EvalSet { set1 = 1, set2 = 2, set3 = 3 };
enum class Attribution { ground_truth, predicted };

inline std::string to_string(Metric m) {
    switch (m) {
        case Metric::state: return "state";
        case Metric::entropy: return "entropy";
        case Metric::kldiv: return "kldiv";
    }
    return "?";
}

inline Metric metric_from_string(const std::string& s) {
    if (s == "state") return Metric::state;
    if (s == "entropy") return Metric::entropy;
    if (s == "kldiv") return Metric::kldiv;
    throw ValidationError("unknown metric '" + s + "' (expected state, entropy or kldiv)");
}

inline std::string to_string(EvalSet s) { return "set" + std::to_string(static_cast<int>(s)); }

inline EvalSet eval_set_from_string(const std::string& s) {
    if (s == "set1" || s == "1") return EvalSet::set1;
    if (s == "set2" || s == "2") return EvalSet::set2;
    if (s == "set3" || s == "3") return EvalSet::set3;
    throw ValidationError("unknown evaluation set '" + s + "' (expected set1, set2 or set3)");
}

inline double metric_value(const UtilizationTriple& u, Metric m) {
    switch (m) {
        case Metric::state: return u.eta_state;
        case Metric::entropy: return u.eta_entropy;
        case Metric::kldiv: return u.eta_kldiv;
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Encodings and fingerprints
// ---------------------------------------------------------------------------

/// Utilization of every probe for one class, in topological probe order.
struct ClassEncoding {
    int label = 0;
    std::vector<std::size_t> probes;
    std::vector<UtilizationTriple> values;

    std::vector<double> metric(Metric m) const {
        std::vector<double> out;
        out.reserve(values.size());
        for (auto& u : values) out.push_back(metric_value(u, m));
        return out;
    }
};

inline ClassEncoding encode_class(const ComputationGraph& g, const ClassProfile& profile, int label, std::size_t classes) {
    ClassEncoding e;
    e.label = label;
    for (auto id : g.probes()) {
        auto it = profile.find(id);
        if (it == profile.end()) throw ValidationError("profile is missing probe '" + g.node(id).name + "'");
        e.probes.push_back(id);
        e.values.push_back(utilization(it->second, classes));
    }
    return e;
}

/// Class-by-probe matrix of one metric; rows ascending by class label.
struct Fingerprint {
    std::string model_id;
    std::size_t classes = 0;
    std::vector<std::string> probe_names;
    Metric metric = Metric::entropy;
    std::vector<std::vector<double>> values;
    std::string dataset_hash;
    std::uint64_t seed = 0;
    EvalSet eval_set = EvalSet::set1;
    std::size_t images_per_class = 0;

    std::size_t probes() const { return probe_names.size(); }
    const std::vector<double>& row(std::size_t c) const { return values.at(c); }
    std::vector<double> column(std::size_t j) const {
        std::vector<double> out;
        for (auto& r : values) out.push_back(r.at(j));
        return out;
    }
};

inline Fingerprint make_fingerprint(const ComputationGraph& g, const std::vector<ClassEncoding>& encodings, Metric metric) {
    Fingerprint f;
    f.classes = encodings.size();
    f.metric = metric;
    for (auto id : g.probes()) f.probe_names.push_back(g.node(id).name);
    std::vector<const ClassEncoding*> sorted;
    for (auto& e : encodings) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->label < b->label; });
    for (auto* e : sorted) {
        if (e->values.size() != f.probe_names.size()) throw ValidationError("class encoding length does not match probe count");
        f.values.push_back(e->metric(metric));
    }
    return f;
}

struct FingerprintOptions {
    EvalSet eval_set = EvalSet::set1;
    Attribution attribution = Attribution::ground_truth;
    std::size_t max_per_class = 0;  // 0 = every training record of the class
    unsigned threads = 1;
    MemoryBudget* budget = nullptr;
};

/// Network-ready images of one class from the training split, rendered from their seeds. Poisoned
/// records are rendered clean; under set3 the source class carries the manifest's trigger.
inline Tensor class_images(const DatasetManifest& m, int label, EvalSet set, std::size_t max_images = 0) {
    const auto& cfg = m.config;
    const bool triggered = set == EvalSet::set3 && label == cfg.trigger.source;
    if (set == EvalSet::set3 && cfg.trigger.kind == TriggerKind::none)
        throw ValidationError("evaluation set3 needs a trigger but the manifest is clean");
    std::vector<Image> imgs;
    for (auto& r : m.records) {
        if (r.label != label || m.is_test(r)) continue;
        if (max_images && imgs.size() >= max_images) break;
        imgs.push_back(render_record(cfg, r, triggered));
    }
    if (imgs.empty()) throw ValidationError("class " + std::to_string(label) + " has no training images");
    return images_to_tensor(imgs);
}

/// Profiles every class and returns one encoding per class, ascending by label.
inline std::vector<ClassEncoding> encode_dataset(const Model& model, const DatasetManifest& m, const FingerprintOptions& opt) {
    const std::size_t C = m.config.classes;
    if (model.graph.num_classes() != C)
        throw ValidationError("model has " + std::to_string(model.graph.num_classes()) + " outputs but dataset has " + std::to_string(C) +
                              " classes");
    const auto& in = model.graph.output_shape(model.graph.input_id());
    if (in[1] != m.config.height || in[2] != m.config.width)
        throw ValidationError("model input size does not match dataset image size");

    std::vector<Tensor> per_class(C);
    for (std::size_t c = 0; c < C; ++c) per_class[c] = class_images(m, static_cast<int>(c), opt.eval_set, opt.max_per_class);

    if (opt.attribution == Attribution::predicted) {
        std::vector<Tensor> pooled(C);
        std::vector<std::vector<std::pair<std::size_t, std::size_t>>> picks(C);
        for (std::size_t c = 0; c < C; ++c) {
            auto pred = predict(model, per_class[c], 64, opt.threads);
            for (std::size_t i = 0; i < pred.size(); ++i) picks[static_cast<std::size_t>(pred[i])].push_back({c, i});
        }
        for (std::size_t c = 0; c < C; ++c) {
            if (picks[c].empty()) throw ValidationError("no image is predicted as class " + std::to_string(c));
            Shape s = per_class[0].shape();
            s[0] = picks[c].size();
            const std::size_t per = per_class[0].size() / per_class[0].dim(0);
            std::vector<float> data;
            data.reserve(s[0] * per);
            for (auto [src, i] : picks[c]) {
                const float* p = per_class[src].raw() + i * per;
                data.insert(data.end(), p, p + per);
            }
            pooled[c] = Tensor(std::move(s), std::move(data));
        }
        per_class = std::move(pooled);
    }

    std::vector<ClassEncoding> out;
    for (std::size_t c = 0; c < C; ++c) {
        auto profile = profile_class(model, per_class[c], static_cast<int>(c), {opt.threads, 16, opt.budget});
        out.push_back(encode_class(model.graph, profile, static_cast<int>(c), C));
    }
    return out;
}

inline Fingerprint fingerprint(const Model& model, const DatasetManifest& m, Metric metric, const FingerprintOptions& opt = {}) {
    auto f = make_fingerprint(model.graph, encode_dataset(model, m, opt), metric);
    f.dataset_hash = m.hash;
    f.seed = m.config.seed;
    f.eval_set = opt.eval_set;
    std::size_t n = 0;
    for (auto& r : m.records)
        if (r.label == 0 && !m.is_test(r)) ++n;
    f.images_per_class = opt.max_per_class ? std::min(n, opt.max_per_class) : n;
    return f;
}

// ---------------------------------------------------------------------------
// Fingerprint CSV
// ---------------------------------------------------------------------------

inline std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string fingerprint_csv(const Fingerprint& f) {
    std::string out = "class";
    for (auto& p : f.probe_names) out += "," + p;
    out += "\n";
    for (std::size_t c = 0; c < f.values.size(); ++c) {
        out += std::to_string(c);
        for (double v : f.values[c]) out += "," + format_value(v);
        out += "\n";
    }
    return out;
}

inline std::string fingerprint_meta(const Fingerprint& f) {
    return "model_id=" + f.model_id + "\nclasses=" + std::to_string(f.classes) + "\nmetric=" + to_string(f.metric) +
           "\neval_set=" + to_string(f.eval_set) + "\ndataset_hash=" + f.dataset_hash + "\nseed=" + std::to_string(f.seed) +
           "\nimages_per_class=" + std::to_string(f.images_per_class) + "\n";
}

inline void save_fingerprint(const Fingerprint& f, const std::string& csv_path) {
    write_file_bytes(csv_path, fingerprint_csv(f));
    write_file_bytes(csv_path + ".meta", fingerprint_meta(f));
}

inline Fingerprint parse_fingerprint_csv(const std::string& text) {
    Fingerprint f;
    std::istringstream is(text);
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> parts;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= s.size(); ++i)
            if (i == s.size() || s[i] == ',') {
                parts.push_back(s.substr(start, i - start));
                start = i + 1;
            }
        return parts;
    };
    if (!std::getline(is, line) || line.rfind("class", 0) != 0) throw ValidationError("fingerprint CSV lacks a 'class,...' header");
    auto header = split(line);
    f.probe_names.assign(header.begin() + 1, header.end());
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != header.size()) throw ValidationError("fingerprint CSV row has " + std::to_string(cells.size()) + " cells");
        if (cells[0] != std::to_string(f.values.size())) throw ValidationError("fingerprint CSV rows must be ordered by class label");
        std::vector<double> row;
        try {
            for (std::size_t k = 1; k < cells.size(); ++k) row.push_back(std::stod(cells[k]));
        } catch (const std::logic_error&) {
            throw ValidationError("malformed number in fingerprint CSV");
        }
        f.values.push_back(std::move(row));
    }
    f.classes = f.values.size();
    return f;
}

inline Fingerprint load_fingerprint(const std::string& csv_path) {
    auto f = parse_fingerprint_csv(read_file_bytes(csv_path));
    if (std::filesystem::exists(csv_path + ".meta")) {
        auto kv = parse_key_values(read_file_bytes(csv_path + ".meta"));
        f.model_id = kv["model_id"];
        if (kv.count("metric")) f.metric = metric_from_string(kv["metric"]);
        if (kv.count("eval_set")) f.eval_set = eval_set_from_string(kv["eval_set"]);
        f.dataset_hash = kv["dataset_hash"];
        if (kv.count("seed")) f.seed = std::stoull(kv["seed"]);
        if (kv.count("images_per_class")) f.images_per_class = std::stoull(kv["images_per_class"]);
    }
    return f;
}

// ---------------------------------------------------------------------------
// Fingerprint comparison
// ---------------------------------------------------------------------------

struct DisjointRange {
    double lo = 0.0, hi = 0.0;
    int model = 0;  // 1 or 2: the only fingerprint with entries in this range
    std::size_t entries = 0;
    std::vector<std::string> probes;
};

struct HistogramDelta {
    std::vector<double> edges;
    std::vector<std::size_t> counts1, counts2;
    std::vector<DisjointRange> ranges;
};

/// Histograms every matrix entry of both fingerprints over shared edges and reports the value
/// ranges only one of them occupies, with the probes that put entries there.
inline HistogramDelta fingerprint_histogram_delta(const Fingerprint& f1, const Fingerprint& f2, std::size_t bins) {
    if (bins < 2) throw ValidationError("histogram delta needs at least 2 bins");
    if (f1.metric != f2.metric) throw ValidationError("fingerprints use different metrics");
    double lo = INFINITY, hi = -INFINITY;
    for (auto* f : {&f1, &f2})
        for (auto& r : f->values)
            for (double v : r) {
                if (!std::isfinite(v)) throw NumericError("non-finite fingerprint entry");
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    if (!(lo <= hi)) throw ValidationError("fingerprints are empty");
    if (lo == hi) hi = lo + 1.0;

    HistogramDelta d;
    for (std::size_t k = 0; k <= bins; ++k) d.edges.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins));
    d.counts1.assign(bins, 0);
    d.counts2.assign(bins, 0);
    auto bin_of = [&](double v) {
        auto b = static_cast<std::size_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
        return std::min(b, bins - 1);
    };
    std::vector<std::set<std::string>> names1(bins), names2(bins);
    for (int which = 1; which <= 2; ++which) {
        const auto& f = which == 1 ? f1 : f2;
        auto& counts = which == 1 ? d.counts1 : d.counts2;
        auto& names = which == 1 ? names1 : names2;
        for (auto& r : f.values)
            for (std::size_t j = 0; j < r.size(); ++j) {
                auto b = bin_of(r[j]);
                ++counts[b];
                if (j < f.probe_names.size()) names[b].insert(f.probe_names[j]);
            }
    }
    for (std::size_t b = 0; b < bins; ++b) {
        int owner = (d.counts1[b] > 0) == (d.counts2[b] > 0) ? 0 : (d.counts1[b] ? 1 : 2);
        if (!owner) continue;
        auto& names = owner == 1 ? names1[b] : names2[b];
        std::size_t n = owner == 1 ? d.counts1[b] : d.counts2[b];
        if (!d.ranges.empty() && d.ranges.back().model == owner && d.ranges.back().hi == d.edges[b]) {
            auto& r = d.ranges.back();
            r.hi = d.edges[b + 1];
            r.entries += n;
            std::set<std::string> merged(r.probes.begin(), r.probes.end());
            merged.insert(names.begin(), names.end());
            r.probes.assign(merged.begin(), merged.end());
        } else {
            d.ranges.push_back({d.edges[b], d.edges[b + 1], owner, n, std::vector<std::string>(names.begin(), names.end())});
        }
    }
    return d;
}

/// Pearson correlation; zero variance is an error rather than NaN.
inline double encoding_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ValidationError("encodings have different lengths");
    if (a.size() < 2) throw ValidationError("correlation needs at least 2 entries");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) throw NumericError("correlation undefined: an encoding has zero variance");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double encoding_correlation(const ClassEncoding& e1, const ClassEncoding& e2, Metric m) {
    return encoding_correlation(e1.metric(m), e2.metric(m));
}

// ---------------------------------------------------------------------------
// Two-class state overlap
// ---------------------------------------------------------------------------

struct ClassOverlap {
    std::size_t only1 = 0, only2 = 0, both = 0;
    StateBatch shared;  // ascending by bit pattern
};

/// Partition of the states with count > tau in their own class.
inline ClassOverlap class_overlap(const StateHistogram& h1, const StateHistogram& h2, std::uint64_t tau = 0) {
    if (h1.width() != h2.width()) throw ValidationError("class overlap needs histograms of equal width");
    ClassOverlap r;
    r.shared = StateBatch(h1.width(), 0);
    for (auto& e : h1.sorted_entries(tau)) {
        if (h2.count(e.bits) > tau) {
            ++r.both;
            r.shared.bits.insert(r.shared.bits.end(), e.bits.begin(), e.bits.end());
        } else {
            ++r.only1;
        }
    }
    h2.for_each([&](auto key, std::uint64_t c) {
        if (c > tau && h1.count(key) <= tau) ++r.only2;
    });
    return r;
}

/// Union of class histograms for joint analyses, refused beyond `max_images` pooled images.
inline StateHistogram pool_histograms(const std::vector<const StateHistogram*>& parts, std::size_t max_images) {
    if (parts.empty()) throw ValidationError("nothing to pool");
    std::uint64_t images = 0;
    for (auto* p : parts) images += p->images();
    if (images > max_images)
        throw BudgetError("joint analysis over " + std::to_string(images) + " images exceeds the budget of " + std::to_string(max_images));
    StateHistogram out(parts[0]->node(), -1, parts[0]->width());
    for (auto* p : parts) out.merge(*p);
    return out;
}

// ---------------------------------------------------------------------------
// Spatial overlap masks
// ---------------------------------------------------------------------------

struct OverlapMask {
    std::size_t rows = 0, cols = 0;
    std::vector<std::uint8_t> mask;  // row-major, 1 where the state is in the set
    Image overlay;

    std::size_t marked() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }
};

/// Marks probe positions whose state occurs more than `min_count` times in `set`, and paints them red
/// (nearest-neighbour upsampled) over the image.
inline OverlapMask overlap_mask(const Model& model, const Image& image, std::size_t node, const StateHistogram& set,
                                std::uint64_t min_count = 0) {
    const auto& g = model.graph;
    if (node >= g.size() || !g.node(node).probe) throw ValidationError("node " + std::to_string(node) + " is not probed");
    const auto& shape = g.output_shape(node);
    if (shape.size() != 3) throw ValidationError("overlap masks need a spatial node, '" + g.node(node).name + "' is not");
    if (set.width() != shape[0]) throw ValidationError("state set width does not match node width");

    auto fr = forward(model, images_to_tensor(std::vector<Image>{image}));
    const ActivationRecord* rec = nullptr;
    for (auto& p : fr.probes)
        if (p.node == node) rec = &p;
    auto states = extract_states(rec->tensor);

    OverlapMask m;
    m.rows = shape[1];
    m.cols = shape[2];
    m.mask.resize(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) m.mask[i] = set.count(states.state(i)) > min_count;

    m.overlay = image;
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x) {
            std::size_t r = y * m.rows / image.height, c = x * m.cols / image.width;
            if (!m.mask[r * m.cols + c]) continue;
            Rgb px = image.get(x, y);
            m.overlay.set(x, y, {static_cast<std::uint8_t>((px[0] + 3 * 255) / 4), static_cast<std::uint8_t>(px[1] / 4),
                                 static_cast<std::uint8_t>(px[2] / 4)});
        }
    return m;
}

/// Histogram of the states a single image produces at one node.
inline StateHistogram image_states(const Model& model, const Image& image, std::size_t node) {
    auto fr = forward(model, images_to_tensor(std::vector<Image>{image}));
    for (auto& p : fr.probes)
        if (p.node == node) {
            StateHistogram h(node, -1, model.graph.output_width(node));
            h.accumulate(extract_states(p.tensor));
            h.add_images(1);
            return h;
        }
    throw ValidationError("node " + std::to_string(node) + " is not probed");
}

// ---------------------------------------------------------------------------
// Subgraph signatures
// ---------------------------------------------------------------------------

struct SignatureGroup {
    long color = 0;                  // floor(value / q)
    std::vector<std::string> kinds;  // node kinds of one run in topological order
    std::vector<std::vector<std::string>> runs;

    std::size_t occurrences() const { return runs.size(); }
};

/// Colors probes by floor(value / q), finds maximal connected same-color runs (probes are adjacent when a
/// path of unprobed nodes joins them) and groups runs by color and kind sequence, most frequent first.
inline std::vector<SignatureGroup> subgraph_signatures(const std::vector<double>& encoding, const ComputationGraph& g, double q = 0.02) {
    if (!(q > 0.0)) throw ValidationError("quantization step must be > 0");
    const auto probes = g.probes();
    if (encoding.size() != probes.size()) throw ValidationError("encoding length does not match probe count");
    std::map<std::size_t, std::size_t> slot;
    for (std::size_t k = 0; k < probes.size(); ++k) slot[probes[k]] = k;
    std::vector<long> color(probes.size());
    for (std::size_t k = 0; k < probes.size(); ++k) color[k] = static_cast<long>(std::floor(encoding[k] / q));

    // union-find over probe slots
    std::vector<std::size_t> parent(probes.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto root = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t k = 0; k < probes.size(); ++k) {
        std::vector<std::size_t> stack(g.consumers(probes[k]).begin(), g.consumers(probes[k]).end());
        std::set<std::size_t> seen;
        while (!stack.empty()) {
            auto v = stack.back();
            stack.pop_back();
            if (!seen.insert(v).second) continue;
            if (auto it = slot.find(v); it != slot.end()) {
                if (color[it->second] == color[k]) parent[root(it->second)] = root(k);
            } else {
                stack.insert(stack.end(), g.consumers(v).begin(), g.consumers(v).end());
            }
        }
    }

    std::map<std::size_t, std::vector<std::size_t>> runs;  // root -> slots in topo order
    for (std::size_t k = 0; k < probes.size(); ++k) runs[root(k)].push_back(k);
    std::map<std::pair<long, std::vector<std::string>>, SignatureGroup> groups;
    std::vector<std::vector<std::size_t>> ordered;
    for (auto& [r, members] : runs) ordered.push_back(members);
    std::sort(ordered.begin(), ordered.end(), [](auto& a, auto& b) { return a.front() < b.front(); });
    for (auto& members : ordered) {
        std::vector<std::string> kinds, names;
        for (auto k : members) {
            kinds.push_back(to_string(g.node(probes[k]).kind));
            names.push_back(g.node(probes[k]).name);
        }
        auto& grp = groups[{color[members.front()], kinds}];
        grp.color = color[members.front()];
        grp.kinds = kinds;
        grp.runs.push_back(std::move(names));
    }
    std::vector<SignatureGroup> out;
    for (auto& [key, grp] : groups) out.push_back(std::move(grp));
    std::stable_sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.occurrences() > b.occurrences(); });
    return out;
}

// ---------------------------------------------------------------------------
// Replicates, extrapolation, comparison budget
// ---------------------------------------------------------------------------

struct Variability {
    std::vector<std::vector<double>> mean, sd;  // class x probe, sample standard deviation
    double max_sd = 0.0;
    std::string max_probe;
    std::size_t max_class = 0;
};

inline Variability replicate_variability(const std::vector<Fingerprint>& reps) {
    if (reps.size() < 2) throw ValidationError("variability needs at least 2 replicates");
    const auto C = reps[0].values.size(), P = reps[0].probe_names.size();
    for (auto& f : reps) {
        if (f.values.size() != C || f.probe_names != reps[0].probe_names) throw ValidationError("replicate fingerprints differ in shape");
        for (auto& r : f.values)
            if (r.size() != P) throw ValidationError("replicate fingerprints differ in shape");
    }
    Variability v;
    v.mean.assign(C, std::vector<double>(P, 0.0));
    v.sd.assign(C, std::vector<double>(P, 0.0));
    const double n = static_cast<double>(reps.size());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < P; ++j) {
            double m = 0;
            for (auto& f : reps) m += f.values[c][j];
            m /= n;
            double ss = 0;
            for (auto& f : reps) ss += (f.values[c][j] - m) * (f.values[c][j] - m);
            v.mean[c][j] = m;
            v.sd[c][j] = std::sqrt(ss / (n - 1));
            if (v.sd[c][j] > v.max_sd) {
                v.max_sd = v.sd[c][j];
                v.max_probe = reps[0].probe_names[j];
                v.max_class = c;
            }
        }
    if (v.max_probe.empty() && P) v.max_probe = reps[0].probe_names[0];
    return v;
}

struct ExtrapolationFit {
    double a = 0.0, b = 0.0, r2 = 0.0;

    double operator()(double images) const { return a * std::log(images) + b; }
};

/// Least squares u = a ln(M) + b. A constant series fits exactly and gets R^2 = 1.
inline ExtrapolationFit fit_extrapolation(const std::vector<std::pair<double, double>>& samples) {
    if (samples.size() < 3) throw ValidationError("extrapolation fit needs at least 3 samples");
    std::set<double> seen;
    for (auto& [m, u] : samples) {
        if (!(m > 0)) throw ValidationError("image counts must be > 0");
        if (!std::isfinite(u)) throw NumericError("non-finite utilization sample");
        if (!seen.insert(m).second) throw ValidationError("duplicate image count in extrapolation samples");
    }
    const double n = static_cast<double>(samples.size());
    double mx = 0, my = 0;
    for (auto& [m, u] : samples) {
        mx += std::log(m);
        my += u;
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (auto& [m, u] : samples) {
        double dx = std::log(m) - mx, dy = u - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    ExtrapolationFit f;
    f.a = sxy / sxx;
    f.b = my - f.a * mx;
    double ss_res = 0;
    for (auto& [m, u] : samples) ss_res += (u - f(m)) * (u - f(m));
    f.r2 = syy == 0.0 ? 1.0 : std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
    return f;
}

using BigInt = boost::multiprecision::cpp_int;

/// Number of class subsets to compare exhaustively: 2^C - 1.
inline BigInt comparison_budget(std::size_t classes) {
    if (classes < 1) throw ValidationError("class count must be >= 1");
    return (BigInt(1) << classes) - 1;
}

/// Three significant figures in "d.dde<exp>" form, e.g. 1.10e12; values below 1000 print as integers.
inline std::string format_scientific(const BigInt& v) {
    std::string digits = v.str();
    if (digits.size() <= 3) return digits;
    std::string lead = digits.substr(0, 3);
    std::size_t exponent = digits.size() - 1;
    unsigned value = static_cast<unsigned>(std::stoul(lead));
    if (digits[3] >= '5') ++value;
    if (value == 1000) {
        value = 100;
        ++exponent;
    }
    std::string s = std::to_string(value);
    return s.substr(0, 1) + "." + s.substr(1) + "e" + std::to_string(exponent);
}

}  // namespace statelens
