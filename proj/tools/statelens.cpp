// statelens command-line driver: dataset generation, training, state profiling, fingerprints and reports.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "statelens/analytics.hpp"
#include "statelens/datagen.hpp"
#include "statelens/graph.hpp"
#include "statelens/report.hpp"
#include "statelens/state_probe.hpp"
#include "statelens/trainer.hpp"

namespace fs = std::filesystem;
using namespace statelens;

namespace {

struct Globals {
    unsigned threads = default_threads();
    std::string config;
    std::string mem_budget;
};

const char* const kDatasetKeys[] = {"classes",        "per_class",      "height",           "width",          "test_fraction",
                                    "seed",           "paired",         "max_rotation_deg", "min_scale",      "max_scale",
                                    "max_blur_sigma", "max_noise_sigma", "trigger",         "trigger_sides",  "trigger_color",
                                    "trigger_size",   "trigger_placement", "trigger_source", "trigger_target", "trigger_fraction",
                                    "trigger_filter", "trigger_matrix", "trigger_offset"};

const char* const kTriggerKeys[] = {"trigger_sides",   "trigger_color",  "trigger_size",   "trigger_placement", "trigger_source",
                                    "trigger_target",  "trigger_fraction", "trigger_filter", "trigger_matrix",   "trigger_offset"};

std::string flag_name(std::string key) {
    for (auto& c : key)
        if (c == '_') c = '-';
    return "--" + key;
}

std::size_t parse_bytes(const std::string& s) {
    std::size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::logic_error&) {
        throw ValidationError("malformed byte count '" + s + "'");
    }
    std::string unit = s.substr(pos);
    double scale = unit.empty() || unit == "B" ? 1 : unit == "K" || unit == "KB" ? 1e3 : unit == "M" || unit == "MB" ? 1e6
                   : unit == "G" || unit == "GB"                                ? 1e9
                   : unit == "T" || unit == "TB"                                ? 1e12
                                                                                : -1;
    if (scale < 0 || !(v > 0)) throw ValidationError("malformed byte count '" + s + "'");
    return static_cast<std::size_t>(v * scale);
}

/// Fills options of the chosen subcommand that were not given on the command line from a key=value file.
void apply_config(CLI::App& sub, const std::string& path) {
    for (auto& [key, value] : parse_key_values(read_file_bytes(path))) {
        auto* opt = sub.get_option_no_throw(flag_name(key));
        if (!opt) throw ValidationError("config key '" + key + "' is not an option of '" + sub.get_name() + "'");
        if (opt->count() == 0) {
            opt->add_result(value);
            opt->run_callback();
        }
    }
}

std::string text_from(const std::map<std::string, std::string>& kv) {
    std::string out;
    for (auto& [k, v] : kv)
        if (!v.empty()) out += k + "=" + v + "\n";
    return out;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i)
        if (i == s.size() || s[i] == ',') {
            if (i > start) out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    return out;
}

std::pair<std::string, std::string> split_label(const std::string& s) {
    auto eq = s.find('=');
    if (eq == std::string::npos) return {fs::path(s).stem().string(), s};
    return {s.substr(0, eq), s.substr(eq + 1)};
}

ComputationGraph graph_for(const std::string& graph_path, const GenConfig& cfg, std::size_t width) {
    if (!graph_path.empty()) return parse_graph_text(read_file_bytes(graph_path));
    if (cfg.height != cfg.width) throw ValidationError("the built-in network needs square images; pass --graph");
    return make_miniresnet(cfg.classes, width, cfg.height);
}

Model load_probed_model(const std::string& prefix, const std::string& probes) {
    Model m = load_trained_model(prefix).model;
    if (!probes.empty()) m.graph.set_probe_filter(split_list(probes));
    return m;
}

std::string sanitize(std::string s) {
    for (auto& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != '_') c = '_';
    return s;
}

// ---------------------------------------------------------------------------

int run_estimate(double images, double avg_s, double max_bytes, double probes, std::size_t width, std::size_t rows, std::size_t cols,
                 std::size_t per_class, bool capacity, bool visualization, std::size_t comparisons, std::size_t miniresnet) {
    bool printed = false;
    if (images >= 0 && avg_s >= 0) {
        auto c = estimate_cost(images, avg_s, 0, 0);
        std::cout << "time: " << format_sig(c.seconds, 6) << " s = " << format_sig(c.seconds / 60.0, 4) << " min\n";
        printed = true;
    }
    if (images >= 0 && max_bytes >= 0 && probes >= 0) {
        auto c = estimate_cost(images, 0, max_bytes, probes);
        std::cout << "memory: " << format_sci(c.bytes, 4) << " B = " << format_sig(c.bytes / 1e9, 4) << " GB\n";
        printed = true;
    }
    if (visualization) {
        if (images < 0 || probes < 0 || width == 0) throw ValidationError("--visualization needs --images, --probes and --width");
        auto count = visualization_budget(probes, width, images);
        std::cout << "visualization images: " << format_sci(count, 4) << "\n";
        printed = true;
    }
    if (capacity) {
        if (!width || !rows || !cols || !per_class) throw ValidationError("--capacity needs --width, --rows, --cols and --per-class");
        std::cout << "capacity classes: " << format_sci(capacity_classes(width, rows, cols, per_class), 3) << "\n";
        printed = true;
    }
    if (comparisons) {
        auto b = comparison_budget(comparisons);
        std::cout << "comparisons: " << format_scientific(b) << " (2^" << comparisons << " - 1 = " << b.str() << ")\n";
        printed = true;
    }
    if (miniresnet) {
        auto g = make_miniresnet(miniresnet);
        double sum = 0, max_bytes_node = 0;
        auto ids = g.probes();
        for (auto id : ids) {
            auto& s = g.output_shape(id);
            sum += static_cast<double>(s[0]);
            max_bytes_node = std::max(max_bytes_node, static_cast<double>(shape_size(s) * sizeof(float)));
        }
        auto avg = static_cast<std::size_t>(std::ceil(sum / static_cast<double>(ids.size()) / 8.0)) * 8;
        double m = images >= 0 ? images : 200;
        std::cout << "built-in network: " << ids.size() << " probes, mean width rounded up to " << avg << " bits, largest output "
                  << max_bytes_node << " B\n";
        std::cout << "visualization images: " << format_sci(visualization_budget(static_cast<double>(ids.size()), avg, m), 4)
                  << " for M=" << m << "\n";
        std::cout << "memory bound: " << format_sci(estimate_cost(m, 0, max_bytes_node, static_cast<double>(ids.size())).bytes, 4)
                  << " B for M=" << m << "\n";
        printed = true;
    }
    if (!printed) throw ValidationError("estimate: nothing to compute; pass --images with --avg-infer-s, --capacity, --comparisons, ...");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"statelens: tensor-state utilization profiling for small CNNs"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--threads", g.threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
    app.add_option("--config", g.config, "key=value file supplying options of the subcommand");
    app.add_option("--mem-budget", g.mem_budget, "histogram memory budget, e.g. 2G (STATELENS_MEM_BUDGET overrides)");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "render a synthetic sign dataset");
    std::string gen_out;
    std::map<std::string, std::string> gen_kv;
    gen->add_option("--out", gen_out, "output directory")->required();
    for (auto* key : kDatasetKeys) {
        if (std::string(key) == "paired")
            gen->add_flag("--paired{1}", gen_kv[key], "poisoned images reuse the seed of a clean image");
        else
            gen->add_option(flag_name(key), gen_kv[key]);
    }

    // train
    auto* tr = app.add_subcommand("train", "train the network on a generated dataset");
    std::string tr_data, tr_out, tr_graph;
    std::size_t tr_width = 16, tr_replicates = 1;
    bool tr_poison = false;
    std::map<std::string, std::string> tr_kv, tr_trigger;
    std::string tr_trigger_kind = "polygon";
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "output prefix (<prefix>.json/.bin/.meta)")->required();
    tr->add_option("--graph", tr_graph, "graph JSON; default is the built-in residual network");
    tr->add_option("--net-width", tr_width, "base channel width of the built-in network");
    tr->add_option("--replicates", tr_replicates, "train k models with seeds seed..seed+k-1")->check(CLI::PositiveNumber);
    for (auto* key : {"epochs", "batch_size", "learning_rate", "momentum", "seed", "label_smoothing"}) tr->add_option(flag_name(key), tr_kv[key]);
    tr->add_flag("--poison", tr_poison, "re-plan the dataset with the trigger given by --trigger-* before training");
    tr->add_option("--trigger", tr_trigger_kind, "trigger kind for --poison: polygon or color-filter");
    for (auto* key : kTriggerKeys) tr->add_option(flag_name(key), tr_trigger[key]);

    // probe
    auto* pr = app.add_subcommand("probe", "write per-class state histograms (TSH1)");
    std::string pr_model, pr_data, pr_out, pr_probes, pr_set = "set1", pr_attr = "label", pr_classes;
    std::size_t pr_max = 0;
    std::uint64_t pr_min_count = 0;
    pr->add_option("--model", pr_model, "model prefix")->required();
    pr->add_option("--data", pr_data, "dataset directory")->required();
    pr->add_option("--out", pr_out, "output directory")->required();
    pr->add_option("--probes", pr_probes, "comma-separated node names (default: all)");
    pr->add_option("--classes", pr_classes, "comma-separated class labels (default: all)");
    pr->add_option("--set", pr_set, "evaluation set: set1, set2 or set3");
    pr->add_option("--max-per-class", pr_max, "cap on images per class (0 = all)");
    pr->add_option("--min-count", pr_min_count, "write only states with count > this");
    pr->add_option("--attribution", pr_attr, "class attribution; only ground-truth labels are supported here");

    // fingerprint
    auto* fp = app.add_subcommand("fingerprint", "compute a class-by-probe utilization fingerprint");
    std::string fp_model, fp_data, fp_out, fp_metric = "entropy", fp_set = "set1", fp_attr = "label", fp_probes, fp_id;
    std::size_t fp_max = 0;
    fp->add_option("--model", fp_model, "model prefix")->required();
    fp->add_option("--data", fp_data, "dataset directory")->required();
    fp->add_option("--out", fp_out, "output CSV (a .meta sidecar is written next to it)")->required();
    fp->add_option("--metric", fp_metric, "state, entropy or kldiv");
    fp->add_option("--set", fp_set, "evaluation set: set1, set2 or set3");
    fp->add_option("--attribution", fp_attr, "label (ground truth) or predicted");
    fp->add_option("--probes", fp_probes, "comma-separated node names (default: all)");
    fp->add_option("--max-per-class", fp_max, "cap on images per class (0 = all)");
    fp->add_option("--model-id", fp_id, "identifier stored in the sidecar (default: model prefix name)");

    // compare
    auto* cmp = app.add_subcommand("compare", "histogram delta and correlations between two fingerprints");
    std::string cmp_a, cmp_b;
    std::size_t cmp_bins = 20;
    cmp->add_option("--a", cmp_a, "first fingerprint CSV")->required();
    cmp->add_option("--b", cmp_b, "second fingerprint CSV")->required();
    cmp->add_option("--bins", cmp_bins, "histogram bins");

    // mask
    auto* mk = app.add_subcommand("mask", "render where an image's states fall in a class's frequent states");
    std::string mk_model, mk_data, mk_node, mk_out, mk_hist;
    int mk_class = 0;
    std::size_t mk_index = 0, mk_max = 0;
    std::uint64_t mk_threshold = 100;
    mk->add_option("--model", mk_model, "model prefix")->required();
    mk->add_option("--data", mk_data, "dataset directory")->required();
    mk->add_option("--node", mk_node, "probed spatial node name")->required();
    mk->add_option("--out", mk_out, "output prefix (<prefix>.ppm overlay, <prefix>.pbm mask)")->required();
    mk->add_option("--class", mk_class, "class whose state set is used");
    mk->add_option("--image-index", mk_index, "training image of the class to render");
    mk->add_option("--threshold", mk_threshold, "keep states with count > threshold");
    mk->add_option("--hist", mk_hist, "use this TSH1 histogram instead of profiling the class");
    mk->add_option("--max-per-class", mk_max, "cap on images profiled (0 = all)");

    // estimate
    auto* est = app.add_subcommand("estimate", "cost, capacity and budget arithmetic (no model needed)");
    double est_images = -1, est_avg = -1, est_bytes = -1, est_probes = -1;
    std::size_t est_width = 0, est_rows = 0, est_cols = 0, est_per_class = 0, est_cmp = 0, est_net = 0;
    bool est_capacity = false, est_vis = false;
    est->add_option("--images", est_images, "images M");
    est->add_option("--avg-infer-s", est_avg, "average inference seconds per image");
    est->add_option("--max-output-bytes", est_bytes, "largest node output in bytes");
    est->add_option("--probes", est_probes, "number of probes");
    est->add_option("--width", est_width, "state width D");
    est->add_option("--rows", est_rows);
    est->add_option("--cols", est_cols);
    est->add_option("--per-class", est_per_class, "images per class");
    est->add_flag("--capacity", est_capacity, "classes a node of width D can separate");
    est->add_flag("--visualization", est_vis, "grayscale images needed to show every state");
    est->add_option("--comparisons", est_cmp, "class count C for the 2^C - 1 subset comparison budget");
    est->add_option("--miniresnet", est_net, "print budgets for the built-in network with this many classes");

    // report
    auto* rep = app.add_subcommand("report", "write a self-contained HTML report");
    std::string rep_out, rep_model, rep_fit, rep_title = "statelens report";
    std::vector<std::string> rep_fps, rep_reps, rep_facts;
    std::size_t rep_bins = 20;
    double rep_q = 0.02;
    rep->add_option("--out", rep_out, "output HTML file")->required();
    rep->add_option("--fingerprint", rep_fps, "LABEL=CSV, repeatable; the first two are compared")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    rep->add_option("--replicates", rep_reps, "LABEL=CSV,CSV,... replicate fingerprints, repeatable")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    rep->add_option("--fact", rep_facts, "KEY=VALUE summary row, repeatable")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    rep->add_option("--model", rep_model, "model prefix; colors its graph by the first fingerprint");
    rep->add_option("--fit", rep_fit, "CSV of M,utilization samples for the extrapolation fit");
    rep->add_option("--bins", rep_bins, "histogram bins");
    rep->add_option("--quantization", rep_q, "signature quantization step");
    rep->add_option("--title", rep_title);

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            return app.exit(e) == 0 ? 0 : static_cast<int>(ErrorKind::validation);
        }
        CLI::App* sub = app.get_subcommands().front();
        if (!g.config.empty()) apply_config(*sub, g.config);

        std::size_t budget_bytes = SIZE_MAX;
        if (!g.mem_budget.empty()) budget_bytes = parse_bytes(g.mem_budget);
        if (const char* env = std::getenv("STATELENS_MEM_BUDGET"); env && *env) budget_bytes = parse_bytes(env);
        MemoryBudget budget(budget_bytes);

        if (sub == gen) {
            auto cfg = config_from_text(text_from(gen_kv));
            auto m = generate(cfg, gen_out);
            std::cout << "wrote " << m.records.size() << " images to " << gen_out << " (hash " << m.hash << ")\n";
            return 0;
        }

        if (sub == tr) {
            auto m = load_manifest(tr_data);
            std::string dir = tr_data;
            if (tr_poison) {
                auto text = config_to_text(m.config) + "trigger=" + tr_trigger_kind + "\n" + text_from(tr_trigger);
                m = generate(config_from_text(text));
                dir.clear();
            }
            auto graph = graph_for(tr_graph, m.config, tr_width);
            auto data = make_training_data(m, dir);
            auto cfg = train_config_from(parse_key_values(text_from(tr_kv)));
            cfg.threads = g.threads;
            const auto base_seed = cfg.seed;
            for (std::size_t r = 0; r < tr_replicates; ++r) {
                cfg.seed = base_seed + r;
                auto result = train(graph, data, cfg);
                std::string prefix = tr_replicates == 1 ? tr_out : tr_out + "_r" + std::to_string(r);
                if (auto parent = fs::path(prefix).parent_path(); !parent.empty()) fs::create_directories(parent);
                save_trained_model(result, prefix);
                std::cout << prefix << ": clean accuracy " << format_sig(result.clean_accuracy, 4);
                if (result.attack_success_rate) std::cout << ", attack success " << format_sig(*result.attack_success_rate, 4);
                std::cout << ", final loss " << format_sig(result.epoch_loss.back(), 4) << "\n";
            }
            return 0;
        }

        if (sub == pr) {
            auto model = load_probed_model(pr_model, pr_probes);
            auto m = load_manifest(pr_data);
            auto set = eval_set_from_string(pr_set);
            if (pr_attr != "label") throw ValidationError("probe supports --attribution label only; use fingerprint for predicted");
            std::vector<int> classes;
            if (pr_classes.empty())
                for (std::size_t c = 0; c < m.config.classes; ++c) classes.push_back(static_cast<int>(c));
            else
                for (auto& s : split_list(pr_classes)) classes.push_back(std::stoi(s));
            fs::create_directories(pr_out);
            std::cout << "class,node,width,observations,unique,eta_state,eta_entropy,entropy_bits,eta_kldiv,flag\n";
            for (int c : classes) {
                if (c < 0 || static_cast<std::size_t>(c) >= m.config.classes) throw ValidationError("class out of range");
                auto profile = profile_class(model, class_images(m, c, set, pr_max), c, {g.threads, 16, &budget});
                for (auto& [id, h] : profile) {
                    const auto& name = model.graph.node(id).name;
                    char file[256];
                    std::snprintf(file, sizeof file, "c%03d_%s.tsh", c, sanitize(name).c_str());
                    write_file_bytes((fs::path(pr_out) / file).string(), encode_histogram(h, pr_min_count));
                    auto u = utilization(h, m.config.classes);
                    std::cout << c << "," << name << "," << h.width() << "," << h.observations() << "," << u.unique << ","
                              << format_value(u.eta_state) << "," << format_value(u.eta_entropy) << "," << format_value(u.entropy_bits)
                              << "," << format_value(u.eta_kldiv) << "," << (u.over_reference ? "over-reference" : "") << "\n";
                }
            }
            return 0;
        }

        if (sub == fp) {
            auto model = load_probed_model(fp_model, fp_probes);
            auto m = load_manifest(fp_data);
            FingerprintOptions opt;
            opt.eval_set = eval_set_from_string(fp_set);
            if (fp_attr != "label" && fp_attr != "predicted") throw ValidationError("--attribution must be label or predicted");
            opt.attribution = fp_attr == "predicted" ? Attribution::predicted : Attribution::ground_truth;
            opt.max_per_class = fp_max;
            opt.threads = g.threads;
            opt.budget = &budget;
            auto f = fingerprint(model, m, metric_from_string(fp_metric), opt);
            f.model_id = fp_id.empty() ? fs::path(fp_model).filename().string() : fp_id;
            if (auto parent = fs::path(fp_out).parent_path(); !parent.empty()) fs::create_directories(parent);
            save_fingerprint(f, fp_out);
            std::cout << "wrote " << f.classes << " x " << f.probes() << " " << fp_metric << " fingerprint to " << fp_out << "\n";
            return 0;
        }

        if (sub == cmp) {
            auto a = load_fingerprint(cmp_a), b = load_fingerprint(cmp_b);
            auto d = fingerprint_histogram_delta(a, b, cmp_bins);
            std::cout << "disjoint ranges: " << d.ranges.size() << "\n";
            for (auto& r : d.ranges) {
                std::cout << "  [" << format_value(r.lo) << ", " << format_value(r.hi) << "] only in " << (r.model == 1 ? cmp_a : cmp_b)
                          << " (" << r.entries << " entries):";
                for (auto& p : r.probes) std::cout << " " << p;
                std::cout << "\n";
            }
            if (a.probe_names == b.probe_names && a.values.size() == b.values.size()) {
                for (std::size_t c = 0; c < a.values.size(); ++c) {
                    std::cout << "class " << c << " correlation: ";
                    try {
                        std::cout << format_sig(encoding_correlation(a.values[c], b.values[c]), 6) << "\n";
                    } catch (const NumericError& e) {
                        std::cout << "undefined (" << e.what() << ")\n";
                    }
                }
            } else {
                std::cout << "fingerprints differ in shape; element-wise correlations skipped\n";
            }
            return 0;
        }

        if (sub == mk) {
            auto model = load_trained_model(mk_model).model;
            auto m = load_manifest(mk_data);
            auto node = model.graph.find(mk_node);
            if (!node) throw ValidationError("unknown node '" + mk_node + "'");
            if (mk_class < 0 || static_cast<std::size_t>(mk_class) >= m.config.classes) throw ValidationError("class out of range");
            StateHistogram set;
            if (!mk_hist.empty()) {
                set = decode_histogram(read_file_bytes(mk_hist));
            } else {
                model.graph.set_probe_filter({mk_node});
                auto profile = profile_class(model, class_images(m, mk_class, EvalSet::set1, mk_max), mk_class, {g.threads, 16, &budget});
                set = std::move(profile.at(*node));
            }
            std::vector<const ImageRecord*> recs;
            for (auto& r : m.records)
                if (r.label == mk_class && !m.is_test(r)) recs.push_back(&r);
            if (mk_index >= recs.size()) throw ValidationError("--image-index beyond the class's training images");
            auto image = render_record(m.config, *recs[mk_index], false);
            model.graph.set_probe_filter({mk_node});
            auto mask = overlap_mask(model, image, *node, set, mk_threshold);
            if (auto parent = fs::path(mk_out).parent_path(); !parent.empty()) fs::create_directories(parent);
            write_file_bytes(mk_out + ".ppm", encode_ppm(mask.overlay));
            write_file_bytes(mk_out + ".pbm", encode_pbm(mask.mask, mask.cols, mask.rows));
            std::cout << mask.marked() << " of " << mask.mask.size() << " positions hold states with count > " << mk_threshold << "\n";
            return 0;
        }

        if (sub == est)
            return run_estimate(est_images, est_avg, est_bytes, est_probes, est_width, est_rows, est_cols, est_per_class, est_capacity,
                                est_vis, est_cmp, est_net);

        if (sub == rep) {
            ReportInput in;
            in.title = rep_title;
            for (auto& f : rep_facts) in.facts.push_back(split_label(f));
            for (auto& s : rep_fps) {
                auto [label, path] = split_label(s);
                in.fingerprints.push_back({label, load_fingerprint(path)});
            }
            if (in.fingerprints.size() >= 2) {
                const auto& [la, a] = in.fingerprints[0];
                const auto& [lb, b] = in.fingerprints[1];
                if (a.metric == b.metric) {
                    in.delta = fingerprint_histogram_delta(a, b, rep_bins);
                    in.delta_first = la;
                    in.delta_second = lb;
                }
                if (a.probe_names == b.probe_names && a.values.size() == b.values.size())
                    for (std::size_t c = 0; c < a.values.size(); ++c) try {
                            in.correlations.push_back({"class " + std::to_string(c) + ": " + la + " vs " + lb,
                                                       encoding_correlation(a.values[c], b.values[c])});
                        } catch (const NumericError&) {
                        }
            }
            if (!rep_model.empty() && !in.fingerprints.empty()) {
                auto model = load_trained_model(rep_model).model;
                const auto& f = in.fingerprints[0].second;
                auto ids = model.graph.probes();
                if (ids.size() == f.probes()) {
                    std::vector<double> mean(ids.size(), 0.0);
                    for (auto& row : f.values)
                        for (std::size_t j = 0; j < row.size(); ++j) mean[j] += row[j] / static_cast<double>(f.values.size());
                    std::map<std::size_t, double> coloring;
                    if (f.metric != Metric::kldiv)
                        for (std::size_t j = 0; j < ids.size(); ++j) coloring[ids[j]] = std::clamp(mean[j] * 100.0, 0.0, 100.0);
                    in.dot = export_dot(model.graph, coloring);
                    in.signatures = subgraph_signatures(mean, model.graph, rep_q);
                }
            }
            for (auto& s : rep_reps) {
                auto [label, list] = split_label(s);
                std::vector<Fingerprint> reps;
                for (auto& p : split_list(list)) reps.push_back(load_fingerprint(p));
                in.variability.push_back({label, replicate_variability(reps)});
                in.variability_probes = reps[0].probe_names;
            }
            if (!rep_fit.empty()) {
                std::istringstream is(read_file_bytes(rep_fit));
                std::string line;
                while (std::getline(is, line)) {
                    auto v = split_list(line);
                    if (v.size() != 2) continue;
                    try {
                        in.fit_samples.push_back({std::stod(v[0]), std::stod(v[1])});
                    } catch (const std::logic_error&) {
                    }
                }
                in.fit = fit_extrapolation(in.fit_samples);
            }
            if (auto parent = fs::path(rep_out).parent_path(); !parent.empty()) fs::create_directories(parent);
            write_file_bytes(rep_out, render_report(in));
            std::cout << "wrote " << rep_out << "\n";
            return 0;
        }
        return static_cast<int>(ErrorKind::validation);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return static_cast<int>(ErrorKind::budget);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::validation);
    }
}
