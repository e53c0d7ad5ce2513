#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "statelens/engine.hpp"
#include "test_support.hpp"

using namespace statelens;
using namespace statelens::testing;

namespace {

Model fixture_model() { return load_model(fixture_path("tiny_resnet.json"), fixture_path("tiny_resnet.bin")); }

}  // namespace

// Reference logits come from an independent float64 numpy evaluation of the same graph and weights.
TEST(Engine, MatchesReferenceLogits) {
    auto model = fixture_model();
    auto x = read_tensor_file(fixture_path("tiny_input.tensor"));
    auto want = read_tensor_file(fixture_path("tiny_logits.tensor"));
    auto got = forward(model, x).logits;
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-4) << i;
}

TEST(Engine, ThreadCountDoesNotChangeOutputs) {
    auto model = fixture_model();
    auto x = read_tensor_file(fixture_path("tiny_input.tensor"));
    auto one = forward(model, x, {1});
    for (unsigned t : {2u, 4u}) {
        auto many = forward(model, x, {t});
        EXPECT_EQ(many.logits, one.logits);
        ASSERT_EQ(many.probes.size(), one.probes.size());
        for (std::size_t i = 0; i < one.probes.size(); ++i) EXPECT_EQ(many.probes[i].tensor, one.probes[i].tensor);
    }
}

TEST(Engine, OneRecordPerProbe) {
    auto model = fixture_model();
    auto x = read_tensor_file(fixture_path("tiny_input.tensor"));
    auto r = forward(model, x);
    ASSERT_EQ(r.probes.size(), model.graph.probes().size());
    for (std::size_t i = 0; i < r.probes.size(); ++i) {
        EXPECT_EQ(r.probes[i].node, model.graph.probes()[i]);
        EXPECT_EQ(r.probes[i].tensor.dim(0), 2u);
    }
    model.graph.set_probe_filter({"conv1"});
    EXPECT_EQ(forward(model, x).probes.size(), 1u);
}

TEST(Engine, NonFiniteActivationNamesNode) {
    auto model = fixture_model();
    auto conv1 = *model.graph.find("conv1");
    model.weights[conv1][0] = std::numeric_limits<float>::quiet_NaN();
    auto x = read_tensor_file(fixture_path("tiny_input.tensor"));
    try {
        forward(model, x);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("'conv1'"), std::string::npos);
    }
}

TEST(Engine, InputShapeMismatchRejected) {
    auto model = fixture_model();
    EXPECT_THROW(forward(model, Tensor({1, 3, 8, 8})), ValidationError);
    EXPECT_THROW(forward(model, Tensor({3, 16, 16})), ValidationError);
}

TEST(Engine, PredictMatchesArgmaxOfLogits) {
    auto model = fixture_model();
    auto x = read_tensor_file(fixture_path("tiny_input.tensor"));
    EXPECT_EQ(predict(model, x, 1), argmax_rows(forward(model, x).logits));
}

TEST(Engine, SliceBatch) {
    Tensor t({3, 1, 1, 2}, {0, 1, 2, 3, 4, 5});
    auto s = slice_batch(t, 1, 3);
    EXPECT_EQ(s, Tensor({2, 1, 1, 2}, {2, 3, 4, 5}));
    EXPECT_THROW(slice_batch(t, 2, 4), ValidationError);
}
