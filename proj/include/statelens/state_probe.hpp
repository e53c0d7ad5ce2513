#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "statelens/datagen.hpp"
#include "statelens/engine.hpp"
#include "statelens/error.hpp"
#include "statelens/graph.hpp"
#include "statelens/parallel.hpp"
#include "statelens/tensor.hpp"

namespace statelens {

inline constexpr std::size_t kMaxStateWidth = 4096;

inline std::size_t words_for(std::size_t width) { return (width + 63) / 64; }

// ---------------------------------------------------------------------------
// Tensor-state values
// ---------------------------------------------------------------------------

/// Zero-thresholded channel vector at one position: bit k set iff channel k was > 0.
/// Stored in ceil(width/64) words with the unused high bits cleared.
class TensorStateValue {
public:
    TensorStateValue() = default;
    explicit TensorStateValue(std::size_t width) : width_(width), words_(words_for(width), 0) { check_width(width); }
    TensorStateValue(std::size_t width, std::span<const std::uint64_t> words) : width_(width), words_(words.begin(), words.end()) {
        check_width(width);
        if (words_.size() != words_for(width)) throw ValidationError("state word count does not match width");
        if (width % 64 && (words_.back() >> (width % 64)))
            throw ValidationError("state has bits set beyond its width (non-canonical)");
    }

    /// Parses "0101": character k is channel k.
    static TensorStateValue from_string(const std::string& bits) {
        TensorStateValue v(bits.size());
        for (std::size_t k = 0; k < bits.size(); ++k) {
            if (bits[k] != '0' && bits[k] != '1') throw ValidationError("state string may only contain '0' and '1': " + bits);
            if (bits[k] == '1') v.set(k);
        }
        return v;
    }

    std::size_t width() const noexcept { return width_; }
    std::span<const std::uint64_t> words() const noexcept { return words_; }
    bool test(std::size_t k) const { return (words_[k / 64] >> (k % 64)) & 1u; }
    void set(std::size_t k) { words_[k / 64] |= std::uint64_t{1} << (k % 64); }

    std::string to_string() const {
        std::string s(width_, '0');
        for (std::size_t k = 0; k < width_; ++k)
            if (test(k)) s[k] = '1';
        return s;
    }

    friend bool operator==(const TensorStateValue&, const TensorStateValue&) = default;

    static void check_width(std::size_t width) {
        if (width < 1 || width > kMaxStateWidth)
            throw ValidationError("state width " + std::to_string(width) + " outside [1, " + std::to_string(kMaxStateWidth) + "]");
    }

private:
    std::size_t width_ = 0;
    std::vector<std::uint64_t> words_;
};

/// Ascending order of the bit pattern read as an unsigned integer (high word first).
inline bool state_less(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
    for (std::size_t i = a.size(); i-- > 0;)
        if (a[i] != b[i]) return a[i] < b[i];
    return false;
}

/// Packed list of same-width states.
struct StateBatch {
    std::size_t width = 0;
    std::size_t words = 0;
    std::vector<std::uint64_t> bits;

    StateBatch() = default;
    StateBatch(std::size_t w, std::size_t count) : width(w), words(words_for(w)), bits(count * words_for(w), 0) {
        TensorStateValue::check_width(w);
    }

    std::size_t size() const noexcept { return words ? bits.size() / words : 0; }
    std::span<const std::uint64_t> state(std::size_t i) const { return {bits.data() + i * words, words}; }
    std::span<std::uint64_t> state(std::size_t i) { return {bits.data() + i * words, words}; }

    void push_back(const TensorStateValue& v) {
        if (words == 0) {
            width = v.width();
            words = words_for(width);
        }
        if (v.width() != width) throw ValidationError("state width mismatch in batch");
        bits.insert(bits.end(), v.words().begin(), v.words().end());
    }
    TensorStateValue value(std::size_t i) const { return TensorStateValue(width, state(i)); }
};

/// Elementwise threshold: 1 iff value > 0. NaN is rejected.
inline std::vector<std::uint8_t> binarize(const Tensor& t) {
    std::vector<std::uint8_t> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        float v = t[i];
        if (std::isnan(v)) throw NumericError("NaN encountered while binarizing activations");
        out[i] = v > 0.0f;
    }
    return out;
}

/// One state per (batch, row, col) for rank-4 tensors in that order; one per batch row for rank 2.
inline StateBatch extract_states(const Tensor& t) {
    if (t.rank() == 4) {
        const std::size_t N = t.dim(0), C = t.dim(1), HW = t.dim(2) * t.dim(3);
        StateBatch batch(C, N * HW);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const float* plane = t.raw() + (n * C + c) * HW;
                const std::uint64_t bit = std::uint64_t{1} << (c % 64);
                const std::size_t word = c / 64;
                for (std::size_t i = 0; i < HW; ++i) {
                    if (std::isnan(plane[i])) throw NumericError("NaN encountered while binarizing activations");
                    if (plane[i] > 0.0f) batch.bits[(n * HW + i) * batch.words + word] |= bit;
                }
            }
        return batch;
    }
    if (t.rank() == 2) {
        const std::size_t N = t.dim(0), F = t.dim(1);
        StateBatch batch(F, N);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t f = 0; f < F; ++f) {
                float v = t[n * F + f];
                if (std::isnan(v)) throw NumericError("NaN encountered while binarizing activations");
                if (v > 0.0f) batch.bits[n * batch.words + f / 64] |= std::uint64_t{1} << (f % 64);
            }
        return batch;
    }
    throw ValidationError("tensor-state extraction supports rank 2 or 4, got rank " + std::to_string(t.rank()));
}

inline StateBatch extract_states(const ActivationRecord& rec) { return extract_states(rec.tensor); }

// ---------------------------------------------------------------------------
// Memory budget
// ---------------------------------------------------------------------------

/// Global byte budget shared by all histograms of a run; breaching it fails the run.
class MemoryBudget {
public:
    explicit MemoryBudget(std::size_t limit_bytes = SIZE_MAX) : limit_(limit_bytes) {}

    void reserve(std::size_t bytes) {
        std::size_t now = used_.fetch_add(bytes) + bytes;
        std::size_t seen = peak_.load();
        while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
        }
        if (now > limit_) {
            used_.fetch_sub(bytes);
            throw BudgetError("state histogram memory budget of " + std::to_string(limit_) + " bytes exceeded; reduce the number of "
                              "images per class (extrapolate from subsamples) or restrict probes to fewer nodes");
        }
    }
    void release(std::size_t bytes) { used_.fetch_sub(bytes); }
    std::size_t used() const { return used_.load(); }
    std::size_t peak() const { return peak_.load(); }
    std::size_t limit() const { return limit_; }

private:
    std::size_t limit_;
    std::atomic<std::size_t> used_{0};
    std::atomic<std::size_t> peak_{0};
};

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ull;
    x ^= x >> 33;
    return x;
}

inline std::uint64_t hash_state(std::span<const std::uint64_t> words) {
    std::uint64_t h = 0x9E3779B97F4A7C15ull;
    for (auto w : words) h = mix64(h ^ w) + 0x632BE59BD9B4E019ull;
    return h;
}

/// Open-addressing table of unique states with 64-bit counts.
class StateShard {
public:
    explicit StateShard(std::size_t words = 1) : words_(words) {}

    std::size_t size() const noexcept { return counts_.size(); }
    std::span<const std::uint64_t> key(std::size_t i) const { return {keys_.data() + i * words_, words_}; }
    std::uint64_t count(std::size_t i) const { return counts_[i]; }

    std::size_t bytes() const {
        return keys_.capacity() * sizeof(std::uint64_t) + counts_.capacity() * sizeof(std::uint64_t) +
               slots_.capacity() * sizeof(std::uint32_t);
    }

    void add(std::span<const std::uint64_t> state, std::uint64_t hash, std::uint64_t n) {
        if ((counts_.size() + 1) * 10 > slots_.size() * 7) grow();
        std::size_t mask = slots_.size() - 1;
        for (std::size_t pos = (hash >> 8) & mask;; pos = (pos + 1) & mask) {
            std::uint32_t slot = slots_[pos];
            if (slot == 0) {
                keys_.insert(keys_.end(), state.begin(), state.end());
                counts_.push_back(n);
                slots_[pos] = static_cast<std::uint32_t>(counts_.size());
                return;
            }
            if (std::equal(state.begin(), state.end(), keys_.begin() + static_cast<std::ptrdiff_t>((slot - 1) * words_))) {
                counts_[slot - 1] += n;
                return;
            }
        }
    }

    std::uint64_t find(std::span<const std::uint64_t> state, std::uint64_t hash) const {
        if (slots_.empty()) return 0;
        std::size_t mask = slots_.size() - 1;
        for (std::size_t pos = (hash >> 8) & mask;; pos = (pos + 1) & mask) {
            std::uint32_t slot = slots_[pos];
            if (slot == 0) return 0;
            if (std::equal(state.begin(), state.end(), keys_.begin() + static_cast<std::ptrdiff_t>((slot - 1) * words_)))
                return counts_[slot - 1];
        }
    }

private:
    void grow() {
        std::size_t n = std::max<std::size_t>(16, slots_.size() * 2);
        if (counts_.size() >= 0xFFFFFFF0u) throw BudgetError("state shard exceeds 2^32 unique entries");
        slots_.assign(n, 0);
        std::size_t mask = n - 1;
        for (std::size_t i = 0; i < counts_.size(); ++i) {
            std::uint64_t h = hash_state(key(i));
            std::size_t pos = (h >> 8) & mask;
            while (slots_[pos]) pos = (pos + 1) & mask;
            slots_[pos] = static_cast<std::uint32_t>(i + 1);
        }
    }

    std::size_t words_;
    std::vector<std::uint64_t> keys_;
    std::vector<std::uint64_t> counts_;
    std::vector<std::uint32_t> slots_;
};

}  // namespace detail

/// Per-probe, per-class map from state value to occurrence count. Sharded by the low bits of
/// the state hash so shards can be merged independently.
class StateHistogram {
public:
    static constexpr std::size_t kShards = 16;

    StateHistogram() = default;
    StateHistogram(std::size_t node, int label, std::size_t width, MemoryBudget* budget = nullptr)
        : node_(node), label_(label), width_(width), words_(words_for(width)), budget_(budget) {
        TensorStateValue::check_width(width);
        shards_.assign(kShards, detail::StateShard(words_));
    }

    StateHistogram(const StateHistogram& o)
        : node_(o.node_), label_(o.label_), width_(o.width_), words_(o.words_), observations_(o.observations_), images_(o.images_),
          budget_(nullptr), shards_(o.shards_) {}
    StateHistogram& operator=(const StateHistogram& o) {
        if (this != &o) {
            release_all();
            node_ = o.node_;
            label_ = o.label_;
            width_ = o.width_;
            words_ = o.words_;
            observations_ = o.observations_;
            images_ = o.images_;
            budget_ = nullptr;
            shards_ = o.shards_;
        }
        return *this;
    }
    StateHistogram(StateHistogram&& o) noexcept { *this = std::move(o); }
    StateHistogram& operator=(StateHistogram&& o) noexcept {
        if (this != &o) {
            release_all();
            node_ = o.node_;
            label_ = o.label_;
            width_ = o.width_;
            words_ = o.words_;
            observations_ = o.observations_;
            images_ = o.images_;
            budget_ = o.budget_;
            charged_ = o.charged_;
            shards_ = std::move(o.shards_);
            o.budget_ = nullptr;
            o.charged_ = 0;
        }
        return *this;
    }
    ~StateHistogram() { release_all(); }

    std::size_t node() const noexcept { return node_; }
    int label() const noexcept { return label_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t words() const noexcept { return words_; }
    std::uint64_t observations() const noexcept { return observations_; }
    std::uint64_t images() const noexcept { return images_; }
    void set_observations(std::uint64_t n) { observations_ = n; }
    void add_images(std::uint64_t n) { images_ += n; }

    std::size_t unique() const {
        std::size_t n = 0;
        for (auto& s : shards_) n += s.size();
        return n;
    }

    std::size_t memory_bytes() const {
        std::size_t b = 0;
        for (auto& s : shards_) b += s.bytes();
        return b;
    }

    void add(std::span<const std::uint64_t> state, std::uint64_t count = 1) {
        if (state.size() != words_) throw ValidationError("state width mismatch");
        insert(state, count);
        charge();
    }
    void add(const TensorStateValue& v, std::uint64_t count = 1) {
        if (v.width() != width_) throw ValidationError("state width mismatch: " + std::to_string(v.width()) + " vs " + std::to_string(width_));
        add(v.words(), count);
    }

    /// Adds every state of the batch, then charges any growth to the budget.
    void accumulate(const StateBatch& batch) {
        if (batch.size() == 0) return;
        if (batch.width != width_)
            throw ValidationError("state width mismatch: " + std::to_string(batch.width) + " vs " + std::to_string(width_));
        for (std::size_t i = 0; i < batch.size(); ++i) insert(batch.state(i), 1);
        charge();
    }

    void merge(const StateHistogram& other) {
        if (other.width_ != width_) throw ValidationError("cannot merge histograms of different widths");
        for (std::size_t s = 0; s < kShards; ++s) merge_shard(other, s);
        observations_ += other.observations_;
        images_ += other.images_;
        charge();
    }

    void merge_shard(const StateHistogram& other, std::size_t s) {
        auto& src = other.shards_[s];
        for (std::size_t i = 0; i < src.size(); ++i) {
            auto key = src.key(i);
            shards_[s].add(key, detail::hash_state(key), src.count(i));
        }
    }

    std::uint64_t count(std::span<const std::uint64_t> state) const {
        if (state.size() != words_) return 0;
        std::uint64_t h = detail::hash_state(state);
        return shards_[h & (kShards - 1)].find(state, h);
    }
    std::uint64_t count(const TensorStateValue& v) const { return v.width() == width_ ? count(v.words()) : 0; }
    bool contains(std::span<const std::uint64_t> state) const { return count(state) > 0; }

    template <class Fn>
    void for_each(Fn&& fn) const {
        for (auto& s : shards_)
            for (std::size_t i = 0; i < s.size(); ++i) fn(s.key(i), s.count(i));
    }

    struct Entry {
        std::vector<std::uint64_t> bits;
        std::uint64_t count;
    };

    /// Entries ascending by bit pattern; canonical regardless of insertion or shard order.
    std::vector<Entry> sorted_entries(std::uint64_t min_count_exclusive = 0) const {
        std::vector<Entry> out;
        out.reserve(unique());
        for_each([&](auto key, std::uint64_t c) {
            if (c > min_count_exclusive) out.push_back({std::vector<std::uint64_t>(key.begin(), key.end()), c});
        });
        std::sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) { return state_less(a.bits, b.bits); });
        return out;
    }

    /// Counts in ascending order.
    std::vector<std::uint64_t> sorted_counts() const {
        std::vector<std::uint64_t> c;
        c.reserve(unique());
        for_each([&](auto, std::uint64_t n) { c.push_back(n); });
        std::sort(c.begin(), c.end());
        return c;
    }

    void attach_budget(MemoryBudget* budget) {
        release_all();
        budget_ = budget;
        charge();
    }

private:
    void insert(std::span<const std::uint64_t> state, std::uint64_t count) {
        if (count == 0) return;
        std::uint64_t h = detail::hash_state(state);
        shards_[h & (kShards - 1)].add(state, h, count);
        observations_ += count;
    }
    void charge() {
        if (!budget_) return;
        std::size_t now = memory_bytes();
        if (now > charged_) {
            budget_->reserve(now - charged_);
            charged_ = now;
        }
    }
    void release_all() {
        if (budget_ && charged_) budget_->release(charged_);
        charged_ = 0;
    }

    std::size_t node_ = 0;
    int label_ = 0;
    std::size_t width_ = 0, words_ = 0;
    std::uint64_t observations_ = 0, images_ = 0;
    MemoryBudget* budget_ = nullptr;
    std::size_t charged_ = 0;
    std::vector<detail::StateShard> shards_;
};

/// Merges histograms shard by shard on up to `threads` workers; inputs are merged in order.
inline StateHistogram merge_histograms(const std::vector<StateHistogram>& parts, unsigned threads = 1, MemoryBudget* budget = nullptr) {
    if (parts.empty()) throw ValidationError("nothing to merge");
    StateHistogram out(parts[0].node(), parts[0].label(), parts[0].width());
    for (auto& p : parts)
        if (p.width() != out.width()) throw ValidationError("cannot merge histograms of different widths");
    parallel_for(StateHistogram::kShards, threads, [&](std::size_t s) {
        for (auto& p : parts) out.merge_shard(p, s);
    });
    std::uint64_t obs = 0, images = 0;
    for (auto& p : parts) {
        obs += p.observations();
        images += p.images();
    }
    out.set_observations(obs);
    out.add_images(images);
    if (budget) out.attach_budget(budget);
    return out;
}

/// Counts a state stream on `threads` workers, each owning a contiguous slice, then merges.
inline StateHistogram count_states(std::size_t node, int label, const StateBatch& batch, unsigned threads = 1,
                                   MemoryBudget* budget = nullptr) {
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, batch.size()));
    std::vector<StateHistogram> parts;
    for (std::size_t w = 0; w < workers; ++w) parts.emplace_back(node, label, batch.width, budget);
    parallel_for(workers, static_cast<unsigned>(workers), [&](std::size_t w) {
        const std::size_t begin = batch.size() * w / workers, end = batch.size() * (w + 1) / workers;
        StateBatch slice(batch.width, 0);
        slice.bits.assign(batch.bits.begin() + static_cast<std::ptrdiff_t>(begin * batch.words),
                          batch.bits.begin() + static_cast<std::ptrdiff_t>(end * batch.words));
        parts[w].accumulate(slice);
    });
    return merge_histograms(parts, threads, budget);
}

// ---------------------------------------------------------------------------
// Utilization metrics
// ---------------------------------------------------------------------------

struct UtilizationTriple {
    double eta_state = 0.0;    // unique states / 2^D
    double eta_entropy = 0.0;  // H / D
    double entropy_bits = 0.0; // H(Q_j)
    double eta_kldiv = 0.0;    // (D - log2 C) - H; negative when the class exceeds its uniform share
    double log2_states = 0.0;  // D
    std::uint64_t unique = 0;
    bool over_reference = false;
};

/// Shannon entropy in bits of the empirical distribution count/N.
inline double entropy_bits(const std::vector<std::uint64_t>& ascending_counts) {
    long double total = 0;
    for (auto c : ascending_counts) total += static_cast<long double>(c);
    if (total <= 0) return 0.0;
    long double h = 0;
    for (auto c : ascending_counts) {
        long double p = static_cast<long double>(c) / total;
        h -= p * std::log2(p);
    }
    return static_cast<double>(std::max<long double>(0, h));
}

inline UtilizationTriple utilization_from_counts(const std::vector<std::uint64_t>& ascending_counts, std::size_t width,
                                                 std::size_t classes) {
    if (classes < 1) throw ValidationError("class count must be >= 1");
    if (ascending_counts.empty()) throw ValidationError("utilization needs at least one observation");
    UtilizationTriple u;
    const double D = static_cast<double>(width);
    u.unique = ascending_counts.size();
    u.log2_states = D;
    u.eta_state = std::exp2(std::log2(static_cast<double>(u.unique)) - D);
    u.entropy_bits = entropy_bits(ascending_counts);
    u.eta_entropy = u.entropy_bits / D;
    u.eta_kldiv = (D - std::log2(static_cast<double>(classes))) - u.entropy_bits;
    u.over_reference = u.eta_kldiv < 0.0;
    return u;
}

inline UtilizationTriple utilization(const StateHistogram& h, std::size_t classes) {
    if (h.observations() < 1) throw ValidationError("utilization needs at least one observation");
    return utilization_from_counts(h.sorted_counts(), h.width(), classes);
}

// ---------------------------------------------------------------------------
// Cost models
// ---------------------------------------------------------------------------

/// Classes a node of width D can separate: 2^D / (rows * cols * images), in log space.
inline double capacity_classes_log2(std::size_t width, std::size_t rows, std::size_t cols, std::size_t per_class) {
    if (!width || !rows || !cols || !per_class) throw ValidationError("capacity inputs must be >= 1");
    return static_cast<double>(width) -
           (std::log2(static_cast<double>(rows)) + std::log2(static_cast<double>(cols)) + std::log2(static_cast<double>(per_class)));
}

inline double capacity_classes(std::size_t width, std::size_t rows, std::size_t cols, std::size_t per_class) {
    return std::exp2(capacity_classes_log2(width, rows, cols, per_class));
}

struct CostEstimate {
    double seconds = 0.0;
    double bytes = 0.0;
};

/// Time = M * per-image inference time; memory bound = max output bytes * M * probes.
inline CostEstimate estimate_cost(double images, double avg_inference_s, double max_output_bytes, double probes) {
    if (images < 0 || avg_inference_s < 0 || max_output_bytes < 0 || probes < 0) throw ValidationError("cost inputs must be >= 0");
    return {images * avg_inference_s, max_output_bytes * images * probes};
}

/// Grayscale images needed to show every state: probes * (D/8) * M.
inline double visualization_budget(double probes, std::size_t avg_width, double images) {
    if (avg_width % 8) throw ValidationError("average width must be divisible by 8");
    return probes * static_cast<double>(avg_width / 8) * images;
}

/// Bytes one histogram entry of the given width costs (key words + count + index slot at full load).
inline double histogram_entry_bytes(std::size_t width) {
    return static_cast<double>(words_for(width) * 8 + 8) + 2.0 * 4.0 / 0.7;
}

/// Worst case (all states distinct) histogram memory for profiling `images` images on the probed nodes.
inline double plan_histogram_memory(const ComputationGraph& g, std::size_t images) {
    double total = 0;
    for (auto id : g.probes()) {
        const auto& s = g.output_shape(id);
        double obs = static_cast<double>(images) * (s.size() == 3 ? static_cast<double>(s[1] * s[2]) : 1.0);
        double bound = std::min(obs, std::exp2(static_cast<double>(s[0])));
        // growth doubles capacity, so vectors can hold up to 2x the live entries
        total += 2.0 * bound * histogram_entry_bytes(s[0]);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Profiling
// ---------------------------------------------------------------------------

struct ProfileOptions {
    unsigned threads = 1;
    std::size_t batch_size = 16;
    MemoryBudget* budget = nullptr;
};

using ClassProfile = std::map<std::size_t, StateHistogram>;

/// Histograms of every probed node over one class's images. Workers own contiguous image ranges
/// and private histograms; merging is shard-wise, so the result does not depend on the worker count.
inline ClassProfile profile_class(const Model& model, const Tensor& images, int label, const ProfileOptions& opt = {}) {
    if (images.rank() != 4 || images.dim(0) == 0) throw ValidationError("profile_class needs a non-empty (N,C,H,W) image batch");
    const auto probes = model.graph.probes();
    if (probes.empty()) throw ValidationError("graph has no probed nodes");
    const std::size_t N = images.dim(0);
    const std::size_t workers = std::min<std::size_t>(std::max(1u, opt.threads), N);
    std::vector<std::vector<StateHistogram>> partial(workers);

    parallel_for(workers, static_cast<unsigned>(workers), [&](std::size_t w) {
        auto& mine = partial[w];
        for (auto id : probes) mine.emplace_back(id, label, model.graph.output_width(id), opt.budget);
        const std::size_t begin = N * w / workers, end = N * (w + 1) / workers;
        for (std::size_t b = begin; b < end; b += opt.batch_size) {
            std::size_t e = std::min(end, b + opt.batch_size);
            auto fr = forward(model, slice_batch(images, b, e), {1, true});
            for (std::size_t p = 0; p < probes.size(); ++p) {
                mine[p].accumulate(extract_states(fr.probes[p].tensor));
                mine[p].add_images(e - b);
            }
        }
    });

    ClassProfile out;
    for (std::size_t p = 0; p < probes.size(); ++p) {
        std::vector<StateHistogram> parts;
        parts.reserve(workers);
        for (auto& w : partial) parts.push_back(std::move(w[p]));
        out.emplace(probes[p], merge_histograms(parts, opt.threads, opt.budget));
    }
    return out;
}

// ---------------------------------------------------------------------------
// TSH1 histogram files
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

inline std::uint64_t get_u64(std::string_view bytes, std::size_t& pos) {
    if (pos + 8 > bytes.size()) throw ValidationError("truncated histogram file");
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + k])) << (8 * k);
    pos += 8;
    return v;
}

}  // namespace detail

/// Header: "TSH1", node id, width, class, N_obs, entry count (u64 LE each); then entries ascending by
/// bit pattern as packed words plus count. Only entries with count > min_count are written.
inline std::string encode_histogram(const StateHistogram& h, std::uint64_t min_count = 0) {
    auto entries = h.sorted_entries(min_count);
    std::string out = "TSH1";
    detail::put_u64(out, h.node());
    detail::put_u64(out, h.width());
    detail::put_u64(out, static_cast<std::uint64_t>(h.label()));
    detail::put_u64(out, h.observations());
    detail::put_u64(out, entries.size());
    for (auto& e : entries) {
        for (auto w : e.bits) detail::put_u64(out, w);
        detail::put_u64(out, e.count);
    }
    return out;
}

inline StateHistogram decode_histogram(std::string_view bytes) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "TSH1") throw ValidationError("not a TSH1 histogram file");
    std::size_t pos = 4;
    auto node = detail::get_u64(bytes, pos);
    auto width = detail::get_u64(bytes, pos);
    auto label = detail::get_u64(bytes, pos);
    auto obs = detail::get_u64(bytes, pos);
    auto n = detail::get_u64(bytes, pos);
    StateHistogram h(node, static_cast<int>(label), width);
    std::vector<std::uint64_t> key(words_for(width));
    for (std::uint64_t i = 0; i < n; ++i) {
        for (auto& w : key) w = detail::get_u64(bytes, pos);
        TensorStateValue check(width, key);
        h.add(key, detail::get_u64(bytes, pos));
    }
    h.set_observations(obs);
    return h;
}

}  // namespace statelens
