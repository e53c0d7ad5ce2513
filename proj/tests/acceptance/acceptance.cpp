// Acceptance run: one PASS/FAIL line per criterion, details indented below it.
// Usage: statelens_acceptance [output-dir]   (fingerprints and models of the run land there)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "statelens/analytics.hpp"
#include "statelens/report.hpp"
#include "statelens/trainer.hpp"
#include "test_support.hpp"

using namespace statelens;
using namespace statelens::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    void check(bool ok, const std::string& what) {
        if (!ok) pass = false;
        notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    }
    void note(const std::string& what) { notes.push_back("     " + what); }
};

int failures = 0;

void report(int id, const std::string& title, const std::function<void(Outcome&)>& body) {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.check(false, std::string("exception: ") + e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("%s criterion %d: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), secs);
    for (auto& n : o.notes) std::printf("    %s\n", n.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// Three significant figures, the precision the published figures carry.
bool same3(double got, double want) { return format_sci(got, 3) == format_sci(want, 3); }

std::string config_path(const std::string& name) { return std::string(STATELENS_CONFIG_DIR) + "/" + name; }

GenConfig load_gen_config(const std::string& name) { return config_from_text(read_file_bytes(config_path(name))); }

TrainConfig load_train_config() { return train_config_from(parse_key_values(read_file_bytes(config_path("train.cfg")))); }

struct Pipeline {
    DatasetManifest clean_data, poisoned_data;
    TrainedModel clean, poisoned;
};

Pipeline& pipeline(const fs::path& out) {
    static Pipeline p = [&] {
        Pipeline r;
        r.clean_data = generate(load_gen_config("c5_clean.cfg"));
        r.poisoned_data = generate(load_gen_config("c5_polygon.cfg"));
        auto tc = load_train_config();
        auto graph = make_miniresnet(r.clean_data.config.classes);
        r.clean = train(graph, make_training_data(r.clean_data), tc);
        r.poisoned = train(graph, make_training_data(r.poisoned_data), tc);
        save_trained_model(r.clean, (out / "clean").string());
        save_trained_model(r.poisoned, (out / "poisoned").string());
        return r;
    }();
    return p;
}

Fingerprint run_fingerprint(const TrainedModel& m, const DatasetManifest& d, EvalSet set, unsigned threads, const std::string& id) {
    FingerprintOptions opt;
    opt.eval_set = set;
    opt.threads = threads;
    auto f = fingerprint(m.model, d, Metric::entropy, opt);
    f.model_id = id;
    return f;
}

// ---------------------------------------------------------------------------

void cost_models(Outcome& o) {
    auto t = estimate_cost(2500, 0.587, 0, 0);
    o.check(same3(t.seconds / 60.0, 24.46) && std::abs(t.seconds - 1467.5) < 1e-9,
            "2500 x 0.587 s = " + fmt("%.1f", t.seconds) + " s = " + fmt("%.2f", t.seconds / 60) + " min (24.46)");
    auto m = estimate_cost(10000, 0, 196608, 286);
    o.check(same3(m.bytes / 1e9, 562.3), "196608 B x 10000 x 286 = " + fmt("%.1f", m.bytes / 1e9) + " GB (562.3)");
    double v = visualization_budget(286, 64, 100000);
    o.check(same3(v, 2.288e8), "286 x 8 x 100000 = " + format_sci(v, 4) + " images (2.288e8)");
    double c = capacity_classes(64, 56, 56, 2500);
    o.check(same3(c, 2.35e12), "2^64 / (56*56*2500) = " + format_sci(c, 3) + " classes (2.35e12)");
    auto b = comparison_budget(40);
    o.check(format_scientific(b) == "1.10e12" && b == (BigInt(1) << 40) - 1, "2^40 - 1 = " + b.str() + " = " + format_scientific(b));
}

// Entropy from an independent formula: H = log2 N - (1/N) sum c log2 c.
double oracle_entropy(const std::vector<std::uint64_t>& counts) {
    long double n = 0, s = 0;
    for (auto c : counts) {
        n += c;
        s += static_cast<long double>(c) * std::log2(static_cast<long double>(c));
    }
    return static_cast<double>(std::log2(n) - s / n);
}

void metric_identities(Outcome& o) {
    std::mt19937_64 rng(77);
    std::size_t trials = 2000, bad_range = 0, bad_bound = 0, bad_identity = 0, bad_oracle = 0;
    double worst_identity = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t unique = 1 + rng() % 600;
        std::vector<std::uint64_t> counts(unique);
        const bool skewed = rng() % 2;
        for (auto& c : counts) c = skewed ? 1 + (rng() % 7 == 0 ? rng() % 100000 : rng() % 3) : 1 + rng() % 50;
        std::sort(counts.begin(), counts.end());
        const auto min_width = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(unique))));
        std::size_t D = std::max<std::size_t>(1, min_width) + rng() % 80;
        std::size_t C = 1 + rng() % 64;
        auto u = utilization_from_counts(counts, D, C);
        if (!(u.eta_state > 0.0 && u.eta_state <= 1.0)) ++bad_range;
        const double cap = std::min(std::log2(static_cast<double>(unique)), static_cast<double>(D));
        if (!(u.entropy_bits >= 0.0 && u.entropy_bits <= cap + 1e-12)) ++bad_bound;
        const double rhs = static_cast<double>(D) - std::log2(static_cast<double>(C));
        const double gap = std::abs((u.eta_kldiv + u.entropy_bits) - rhs);
        worst_identity = std::max(worst_identity, gap);
        // the closed form is evaluated once; its sum with H may only differ by rounding of that final add
        if (u.eta_kldiv != rhs - u.entropy_bits || gap > 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(rhs)))
            ++bad_identity;
        if (std::abs(u.entropy_bits - oracle_entropy(counts)) > 1e-9) ++bad_oracle;
    }
    o.check(bad_range == 0, std::to_string(trials) + " random histograms: eta_state in (0,1] (" + std::to_string(bad_range) + " violations)");
    o.check(bad_bound == 0, "0 <= H <= min(log2 unique, D) (" + std::to_string(bad_bound) + " violations)");
    o.check(bad_identity == 0, "eta_kldiv + H = D - log2 C (" + std::to_string(bad_identity) +
                                   " violations, worst gap " + format_sci(worst_identity, 2) + ")");
    o.check(bad_oracle == 0, "H matches independent entropy oracle within 1e-9 (" + std::to_string(bad_oracle) + " violations)");

    auto single = utilization_from_counts({1000}, 8, 4);
    o.check(single.eta_state == std::exp2(-8.0) && single.entropy_bits == 0.0 && single.eta_kldiv == 6.0 && !single.over_reference,
            "single state, D=8, C=4: eta_state=2^-8, H=0, eta_kldiv=6");
    auto uniform = utilization_from_counts(std::vector<std::uint64_t>(64, 5), 8, 4);
    o.check(std::abs(uniform.entropy_bits - 6.0) < 1e-12 && std::abs(uniform.eta_entropy - 0.75) < 1e-12 &&
                std::abs(uniform.eta_kldiv) < 1e-12,
            "64 equiprobable, D=8, C=4: H=6, eta_entropy=0.75, eta_kldiv=0");
    auto over = utilization_from_counts(std::vector<std::uint64_t>(128, 2), 8, 4);
    o.check(std::abs(over.eta_kldiv + 1.0) < 1e-12 && over.over_reference, "128 equiprobable, D=8, C=4: eta_kldiv=-1, flagged over-reference");
}

void gradients(Outcome& o) {
    auto checks = check_all_kernels(20240611, 20);
    std::map<std::string, std::pair<std::size_t, double>> worst;
    for (auto& c : checks) {
        auto& w = worst[c.kernel];
        ++w.first;
        w.second = std::max(w.second, c.error);
    }
    for (auto& [kernel, w] : worst)
        o.check(w.first >= 20 && w.second < 1e-2,
                kernel + ": " + std::to_string(w.first) + " instances, worst relative error " + format_sci(w.second, 2));
}

void extrapolation(Outcome& o) {
    std::vector<std::pair<double, double>> samples;
    for (double pct : {15.0, 25.0, 35.0, 50.0, 95.0, 100.0}) {
        double M = 2500 * pct / 100;
        samples.push_back({M, -1.314 * std::log(M) + 488.61});
    }
    auto f = fit_extrapolation(samples);
    o.check(std::abs(f.a + 1.314) < 0.01, "a = " + fmt("%.6f", f.a) + " (-1.314)");
    o.check(std::abs(f.b - 488.61) < 0.5, "b = " + fmt("%.4f", f.b) + " (488.61)");
    o.check(f.r2 >= 0.999, "R^2 = " + fmt("%.6f", f.r2));
}

void oracle_equivalence(Outcome& o, const fs::path& out) {
    std::mt19937_64 rng(3141);
    std::size_t mismatches = 0;
    for (int s = 0; s < 50; ++s) {
        std::size_t width = 1 + rng() % 300;
        std::size_t n = 1000 + rng() % 20000;
        std::size_t active = 1 + rng() % 16;
        StateBatch stream(width, 0);
        for (std::size_t i = 0; i < n; ++i) {
            TensorStateValue v(width);
            for (std::size_t k = 0; k < active; ++k)
                if (rng() % 2) v.set(rng() % width);
            stream.push_back(v);
        }
        NaiveCounts oracle;
        naive_accumulate(oracle, stream);
        for (unsigned threads : {1u, 2u, 8u})
            if (!same_counts(count_states(0, 0, stream, threads), oracle)) ++mismatches;
    }
    o.check(mismatches == 0, "50 random streams x threads {1,2,8}: " + std::to_string(mismatches) + " mismatches against the ordered-map oracle");

    auto& p = pipeline(out);
    const int label = 2;
    auto images = class_images(p.clean_data, label, EvalSet::set1);
    std::map<std::size_t, NaiveCounts> naive;
    for (std::size_t b = 0; b < images.dim(0); b += 32) {
        auto fr = forward(p.clean.model, slice_batch(images, b, std::min(images.dim(0), b + 32)));
        for (auto& rec : fr.probes)
            for (auto& [k, c] : naive_states(rec.tensor)) naive[rec.node][k] += c;
    }
    std::size_t real_bad = 0, total_unique = 0;
    for (unsigned threads : {1u, 2u, 8u}) {
        auto prof = profile_class(p.clean.model, images, label, {threads});
        for (auto& [id, h] : prof) {
            if (!same_counts(h, naive[id])) ++real_bad;
            if (threads == 1) total_unique += h.unique();
        }
    }
    o.check(real_bad == 0, "class " + std::to_string(label) + " (" + std::to_string(images.dim(0)) + " images), all " +
                               std::to_string(p.clean.model.graph.probes().size()) + " probes x threads {1,2,8}: " +
                               std::to_string(real_bad) + " mismatches (" + std::to_string(total_unique) + " unique states)");
}

void monotonicity(Outcome& o, const fs::path& out) {
    auto& p = pipeline(out);
    const auto& model = p.clean.model;
    const int label = 0;
    auto images = class_images(p.clean_data, label, EvalSet::set1);
    const std::size_t total = images.dim(0);
    const std::size_t C = p.clean_data.config.classes;
    std::map<std::size_t, std::size_t> prev_unique;
    std::map<std::size_t, double> prev_state;
    std::size_t unique_drops = 0, state_drops = 0;
    std::vector<std::pair<double, double>> samples;
    for (double pct : {15.0, 25.0, 35.0, 50.0, 95.0, 100.0}) {
        auto M = static_cast<std::size_t>(std::llround(static_cast<double>(total) * pct / 100.0));
        auto prof = profile_class(model, slice_batch(images, 0, M), label);
        double kl = 0;
        for (auto& [id, h] : prof) {
            auto u = utilization(h, C);
            if (h.unique() < prev_unique[id]) ++unique_drops;
            if (u.eta_state < prev_state[id]) ++state_drops;
            prev_unique[id] = h.unique();
            prev_state[id] = u.eta_state;
            kl += u.eta_kldiv;
        }
        kl /= static_cast<double>(prof.size());
        samples.push_back({static_cast<double>(M), kl});
        o.note("M=" + std::to_string(M) + " (" + fmt("%.0f", pct) + "%): mean eta_kldiv " + fmt("%.6f", kl));
    }
    o.check(unique_drops == 0, "per-probe unique counts nondecreasing over nested subsets (" + std::to_string(unique_drops) + " drops)");
    o.check(state_drops == 0, "per-probe eta_state nondecreasing (" + std::to_string(state_drops) + " drops)");
    auto f = fit_extrapolation(samples);
    o.check(f.a < 0, "fit a = " + fmt("%.6f", f.a) + " < 0");
    o.check(f.r2 >= 0.9, "fit R^2 = " + fmt("%.4f", f.r2) + " >= 0.9");
    std::ostringstream csv;
    csv << "images,mean_eta_kldiv\n";
    for (auto& [m, u] : samples) csv << format_value(m) << "," << format_value(u) << "\n";
    write_file_bytes((out / "extrapolation.csv").string(), csv.str());
}

void end_to_end(Outcome& o, const fs::path& out) {
    auto& p = pipeline(out);
    o.check(p.clean.clean_accuracy >= 0.9, "clean model: clean accuracy " + fmt("%.4f", p.clean.clean_accuracy));
    o.check(p.poisoned.clean_accuracy >= 0.9, "poisoned model: clean accuracy " + fmt("%.4f", p.poisoned.clean_accuracy));
    double asr = p.poisoned.attack_success_rate.value_or(0.0);
    o.check(asr >= 0.9, "poisoned model: attack success " + fmt("%.4f", asr));

    auto set1 = run_fingerprint(p.clean, p.clean_data, EvalSet::set1, 1, "clean");
    auto set2 = run_fingerprint(p.poisoned, p.poisoned_data, EvalSet::set2, 1, "poisoned");
    auto set3 = run_fingerprint(p.poisoned, p.poisoned_data, EvalSet::set3, 1, "poisoned");
    bool shapes = true;
    for (auto* f : {&set1, &set2, &set3}) {
        shapes = shapes && f->values.size() == 5 && f->probes() == p.clean.model.graph.probes().size();
        for (auto& r : f->values)
            for (double v : r) shapes = shapes && std::isfinite(v);
    }
    o.check(shapes, "Set 1/2/3 fingerprints: 5 x " + std::to_string(set1.probes()) + ", all entries finite");
    save_fingerprint(set1, (out / "set1_clean.csv").string());
    save_fingerprint(set2, (out / "set2_poisoned.csv").string());
    save_fingerprint(set3, (out / "set3_poisoned.csv").string());

    auto d12 = fingerprint_histogram_delta(set1, set2, 20);
    bool attributed = !d12.ranges.empty();
    for (auto& r : d12.ranges) {
        attributed = attributed && !r.probes.empty();
        std::string probes;
        for (auto& n : r.probes) probes += (probes.empty() ? "" : " ") + n;
        o.note("Set1 vs Set2: [" + format_value(r.lo) + ", " + format_value(r.hi) + "] only in " + (r.model == 1 ? "clean" : "poisoned") +
               " (" + std::to_string(r.entries) + "): " + probes);
    }
    o.check(attributed, "clean vs poisoned delta: " + std::to_string(d12.ranges.size()) + " disjoint ranges with probe attribution");
    auto d13 = fingerprint_histogram_delta(set1, set3, 20);
    o.note("Set1 vs Set3: " + std::to_string(d13.ranges.size()) + " disjoint ranges");
}

void determinism(Outcome& o, const fs::path& out) {
    auto& p = pipeline(out);
    auto a = fingerprint_csv(run_fingerprint(p.clean, p.clean_data, EvalSet::set1, 1, "clean"));
    auto b = fingerprint_csv(run_fingerprint(p.clean, p.clean_data, EvalSet::set1, 1, "clean"));
    auto c = fingerprint_csv(run_fingerprint(p.clean, p.clean_data, EvalSet::set1, 8, "clean"));
    o.check(a == b, "Set 1 CSV identical across two runs (" + std::to_string(a.size()) + " bytes)");
    o.check(a == c, "Set 1 CSV identical at threads 1 and 8");
    auto d = fingerprint_csv(run_fingerprint(p.poisoned, p.poisoned_data, EvalSet::set3, 1, "poisoned"));
    auto e = fingerprint_csv(run_fingerprint(p.poisoned, p.poisoned_data, EvalSet::set3, 8, "poisoned"));
    o.check(d == e, "Set 3 CSV identical at threads 1 and 8");
    o.check(a == read_file_bytes((out / "set1_clean.csv").string()), "Set 1 CSV identical to the earlier saved run");
}

}  // namespace

int main(int argc, char** argv) {
    fs::path out = argc > 1 ? argv[1] : "acceptance_out";
    fs::create_directories(out);
    report(1, "cost-model reproduction", cost_models);
    report(2, "metric identities and bounds", metric_identities);
    report(6, "gradient correctness", gradients);
    report(8, "extrapolation fit recovery", extrapolation);
    report(5, "end-to-end clean/poisoned pipeline", [&](Outcome& o) { end_to_end(o, out); });
    report(3, "oracle equivalence", [&](Outcome& o) { oracle_equivalence(o, out); });
    report(4, "monotonicity over nested subsets", [&](Outcome& o) { monotonicity(o, out); });
    report(7, "determinism", [&](Outcome& o) { determinism(o, out); });
    std::printf("%d of 8 criteria failed\n", failures);
    return failures ? 1 : 0;
}
