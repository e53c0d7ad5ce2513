#include <gtest/gtest.h>

#include "statelens/report.hpp"

using namespace statelens;

namespace {

Fingerprint small_fp(double shift) {
    Fingerprint f;
    f.probe_names = {"conv1", "bn<1>", "fc"};
    f.values = {{0.1 + shift, 0.2, 0.3}, {0.4, 0.5 + shift, 0.6}};
    f.classes = 2;
    return f;
}

}  // namespace

TEST(Report, FormatsNumbers) {
    EXPECT_EQ(format_sci(2.3514e12, 3), "2.35e12");
    EXPECT_EQ(format_sci(5.623e11, 4), "5.623e11");
    EXPECT_EQ(format_sci(1.5e-3, 2), "1.5e-3");
    EXPECT_EQ(format_sci(0.0, 3), "0");
    EXPECT_EQ(format_sig(24.4583, 4), "24.46");
    EXPECT_EQ(format_sig(1467.5, 5), "1467.5");
}

TEST(Report, EscapesHtml) { EXPECT_EQ(html_escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;"); }

TEST(Report, SelfContainedDocument) {
    ReportInput in;
    in.title = "clean <vs> poisoned";
    in.facts = {{"classes", "5"}};
    in.fingerprints = {{"clean", small_fp(0)}, {"poisoned", small_fp(0.3)}};
    in.delta = fingerprint_histogram_delta(small_fp(0), small_fp(0.3), 8);
    in.correlations = {{"0-1", 0.5}};
    in.dot = "digraph g { a -> b; }";
    in.fit_samples = {{10, 1.0}, {20, 0.9}, {40, 0.8}};
    in.fit = fit_extrapolation(in.fit_samples);
    auto html = render_report(in);
    EXPECT_EQ(html.rfind("<!DOCTYPE html>", 0), 0u);
    EXPECT_NE(html.find("</html>"), std::string::npos);
    for (auto banned : {"<script", "src=", "<link", "http://", "https://"}) EXPECT_EQ(html.find(banned), std::string::npos) << banned;
    EXPECT_NE(html.find("clean &lt;vs&gt; poisoned"), std::string::npos);
    EXPECT_NE(html.find("bn&lt;1&gt;"), std::string::npos);
    EXPECT_NE(html.find("<svg"), std::string::npos);
    EXPECT_NE(html.find("a -&gt; b"), std::string::npos);
    EXPECT_NE(html.find("Extrapolation"), std::string::npos);
}

TEST(Report, EmptySectionsAreOmitted) {
    auto html = render_report(ReportInput{});
    EXPECT_EQ(html.find("<h2>"), std::string::npos);
    EXPECT_EQ(render_report(ReportInput{}), html);
}
