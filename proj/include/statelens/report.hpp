#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "statelens/analytics.hpp"
#include "statelens/graph.hpp"

namespace statelens {

/// Everything the static report can show; empty sections are omitted.
struct ReportInput {
    std::string title = "statelens report";
    std::vector<std::pair<std::string, std::string>> facts;  // key/value summary rows
    std::vector<std::pair<std::string, Fingerprint>> fingerprints;
    std::optional<HistogramDelta> delta;
    std::string delta_first = "model 1", delta_second = "model 2";
    std::vector<std::pair<std::string, double>> correlations;
    std::string dot;
    std::vector<SignatureGroup> signatures;
    std::vector<std::pair<std::string, Variability>> variability;
    std::vector<std::string> variability_probes;
    std::vector<std::pair<double, double>> fit_samples;
    std::optional<ExtrapolationFit> fit;
};

inline std::string html_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

/// `sig` significant figures in compact scientific form without '+' or leading exponent zeros, e.g. 2.35e12.
inline std::string format_sci(double v, int sig) {
    if (v == 0.0) return "0";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*e", sig - 1, v);
    std::string s = buf;
    auto e = s.find('e');
    std::string mant = s.substr(0, e);
    int exponent = std::stoi(s.substr(e + 1));
    return mant + "e" + std::to_string(exponent);
}

/// `sig` significant figures in plain notation, e.g. 24.46.
inline std::string format_sig(double v, int sig) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", sig, v);
    return buf;
}

namespace detail {

inline std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline void heatmap(std::ostringstream& os, const std::string& label, const Fingerprint& f) {
    double lo = INFINITY, hi = -INFINITY;
    for (auto& r : f.values)
        for (double v : r) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    os << "<h3>" << html_escape(label) << " <small>(" << to_string(f.metric) << ", " << to_string(f.eval_set) << ")</small></h3>\n";
    os << "<div class=\"scroll\"><table class=\"heat\"><tr><th>class</th>";
    for (auto& p : f.probe_names) os << "<th class=\"rot\"><div>" << html_escape(p) << "</div></th>";
    os << "</tr>\n";
    for (std::size_t c = 0; c < f.values.size(); ++c) {
        os << "<tr><th>" << c << "</th>";
        for (double v : f.values[c]) {
            double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
            auto step = std::min<std::size_t>(9, static_cast<std::size_t>(t * 10.0));
            os << "<td style=\"background:" << kUtilizationRamp[step] << ";color:" << (step < 3 || step > 7 ? "#fff" : "#000")
               << "\" title=\"" << format_value(v) << "\">" << fixed(v, 3) << "</td>";
        }
        os << "</tr>\n";
    }
    os << "</table></div>\n";
}

inline void delta_chart(std::ostringstream& os, const HistogramDelta& d, const std::string& first, const std::string& second) {
    const std::size_t bins = d.counts1.size();
    std::size_t peak = 1;
    for (std::size_t b = 0; b < bins; ++b) peak = std::max({peak, d.counts1[b], d.counts2[b]});
    const double W = 720, H = 200, bw = W / static_cast<double>(bins);
    os << "<svg width=\"" << W << "\" height=\"" << H + 30 << "\" viewBox=\"0 0 " << W << " " << H + 30
       << "\">\n";
    for (std::size_t b = 0; b < bins; ++b) {
        bool disjoint = (d.counts1[b] > 0) != (d.counts2[b] > 0);
        double x = static_cast<double>(b) * bw;
        if (disjoint) os << "<rect x=\"" << x << "\" y=\"0\" width=\"" << bw << "\" height=\"" << H << "\" fill=\"#fde0dd\"/>";
        double h1 = H * static_cast<double>(d.counts1[b]) / static_cast<double>(peak);
        double h2 = H * static_cast<double>(d.counts2[b]) / static_cast<double>(peak);
        os << "<rect x=\"" << x << "\" y=\"" << H - h1 << "\" width=\"" << bw / 2 << "\" height=\"" << h1 << "\" fill=\"#2166ac\"/>";
        os << "<rect x=\"" << x + bw / 2 << "\" y=\"" << H - h2 << "\" width=\"" << bw / 2 << "\" height=\"" << h2
           << "\" fill=\"#b2182b\"/>\n";
    }
    os << "<text x=\"0\" y=\"" << H + 20 << "\" font-size=\"12\">" << format_value(d.edges.front()) << "</text>";
    os << "<text x=\"" << W << "\" y=\"" << H + 20 << "\" font-size=\"12\" text-anchor=\"end\">" << format_value(d.edges.back())
       << "</text>\n</svg>\n";
    os << "<p><span style=\"color:#2166ac\">&#9632;</span> " << html_escape(first) << " &nbsp; <span style=\"color:#b2182b\">&#9632;</span> "
       << html_escape(second) << " &nbsp; shaded bins are occupied by one model only</p>\n";
    if (d.ranges.empty()) {
        os << "<p>No disjoint ranges.</p>\n";
        return;
    }
    os << "<table><tr><th>range</th><th>present only in</th><th>entries</th><th>probes</th></tr>\n";
    for (auto& r : d.ranges) {
        os << "<tr><td>[" << format_value(r.lo) << ", " << format_value(r.hi) << "]</td><td>"
           << html_escape(r.model == 1 ? first : second) << "</td><td>" << r.entries << "</td><td>";
        for (std::size_t k = 0; k < r.probes.size(); ++k) os << (k ? ", " : "") << html_escape(r.probes[k]);
        os << "</td></tr>\n";
    }
    os << "</table>\n";
}

}  // namespace detail

/// Single self-contained HTML page; no scripts or external resources.
inline std::string render_report(const ReportInput& in) {
    std::ostringstream os;
    os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << html_escape(in.title) << "</title>\n<style>\n"
       << "body{font-family:sans-serif;margin:2em;max-width:1200px}table{border-collapse:collapse;margin:.5em 0}"
       << "td,th{border:1px solid #ccc;padding:2px 6px;font-size:12px;text-align:right}"
       << ".heat td{min-width:3em}.rot{height:9em;vertical-align:bottom}.rot div{writing-mode:vertical-rl;transform:rotate(180deg)}"
       << ".scroll{overflow-x:auto}pre{background:#f6f6f6;padding:1em;overflow:auto;max-height:30em}\n</style></head><body>\n";
    os << "<h1>" << html_escape(in.title) << "</h1>\n";

    if (!in.facts.empty()) {
        os << "<h2>Summary</h2>\n<table>";
        for (auto& [k, v] : in.facts) os << "<tr><th>" << html_escape(k) << "</th><td>" << html_escape(v) << "</td></tr>";
        os << "</table>\n";
    }
    if (!in.fingerprints.empty()) {
        os << "<h2>Fingerprints</h2>\n";
        for (auto& [label, f] : in.fingerprints) detail::heatmap(os, label, f);
    }
    if (in.delta) {
        os << "<h2>Utilization histograms</h2>\n";
        detail::delta_chart(os, *in.delta, in.delta_first, in.delta_second);
    }
    if (!in.correlations.empty()) {
        os << "<h2>Class encoding correlations</h2>\n<table><tr><th>pair</th><th>r</th></tr>";
        for (auto& [k, r] : in.correlations) os << "<tr><td>" << html_escape(k) << "</td><td>" << detail::fixed(r) << "</td></tr>";
        os << "</table>\n";
    }
    if (!in.signatures.empty()) {
        os << "<h2>Subgraph signatures</h2>\n<table><tr><th>count</th><th>color</th><th>kinds</th><th>runs</th></tr>\n";
        for (auto& s : in.signatures) {
            os << "<tr><td>" << s.occurrences() << "</td><td>" << s.color << "</td><td>";
            for (std::size_t k = 0; k < s.kinds.size(); ++k) os << (k ? " &rarr; " : "") << html_escape(s.kinds[k]);
            os << "</td><td>";
            for (std::size_t r = 0; r < s.runs.size(); ++r) {
                os << (r ? "; " : "");
                for (std::size_t k = 0; k < s.runs[r].size(); ++k) os << (k ? " " : "") << html_escape(s.runs[r][k]);
            }
            os << "</td></tr>\n";
        }
        os << "</table>\n";
    }
    if (!in.dot.empty()) os << "<h2>Colored graph (DOT)</h2>\n<pre>" << html_escape(in.dot) << "</pre>\n";
    if (!in.variability.empty()) {
        os << "<h2>Replicate variability</h2>\n<table><tr><th>set</th><th>max &sigma;</th><th>at probe</th><th>class</th></tr>";
        for (auto& [label, v] : in.variability)
            os << "<tr><td>" << html_escape(label) << "</td><td>" << format_value(v.max_sd) << "</td><td>" << html_escape(v.max_probe)
               << "</td><td>" << v.max_class << "</td></tr>";
        os << "</table>\n";
        if (!in.variability_probes.empty()) {
            os << "<div class=\"scroll\"><table><tr><th>probe</th>";
            for (auto& [label, v] : in.variability) os << "<th>" << html_escape(label) << " mean &sigma;</th>";
            os << "</tr>";
            for (std::size_t j = 0; j < in.variability_probes.size(); ++j) {
                os << "<tr><td>" << html_escape(in.variability_probes[j]) << "</td>";
                for (auto& [label, v] : in.variability) {
                    double s = 0;
                    for (auto& row : v.sd) s += j < row.size() ? row[j] : 0.0;
                    os << "<td>" << format_value(v.sd.empty() ? 0.0 : s / static_cast<double>(v.sd.size())) << "</td>";
                }
                os << "</tr>";
            }
            os << "</table></div>\n";
        }
    }
    if (in.fit) {
        os << "<h2>Extrapolation</h2>\n<p>u(M) = " << format_value(in.fit->a) << " &middot; ln(M) + " << format_value(in.fit->b)
           << ", R&sup2; = " << detail::fixed(in.fit->r2) << "</p>\n<table><tr><th>M</th><th>measured</th><th>fitted</th></tr>";
        for (auto& [m, u] : in.fit_samples)
            os << "<tr><td>" << format_value(m) << "</td><td>" << format_value(u) << "</td><td>" << format_value((*in.fit)(m)) << "</td></tr>";
        os << "</table>\n";
    }
    os << "</body></html>\n";
    return os.str();
}

}  // namespace statelens
