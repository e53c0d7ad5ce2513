#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "statelens/state_probe.hpp"
#include "test_support.hpp"

using namespace statelens;
using namespace statelens::testing;

namespace {

StateBatch random_stream(std::mt19937_64& rng, std::size_t width, std::size_t n, std::size_t distinct_bits) {
    StateBatch b(width, 0);
    for (std::size_t i = 0; i < n; ++i) {
        TensorStateValue v(width);
        // few active bits keeps repeats frequent so counts above one are exercised
        for (std::size_t k = 0; k < distinct_bits; ++k)
            if (rng() % 2) v.set(rng() % width);
        b.push_back(v);
    }
    return b;
}

const Model& toy_trained() {
    static const Model m = toy_model().model;
    return m;
}

Tensor toy_class_images(int label, std::size_t count) {
    auto cfg = toy_config();
    std::vector<Image> imgs;
    for (auto& r : plan_records(cfg))
        if (r.label == label && imgs.size() < count) imgs.push_back(render_record(cfg, r, false));
    return images_to_tensor(imgs);
}

}  // namespace

TEST(StateValue, StringFormIsChannelOrdered) {
    auto v = TensorStateValue::from_string("0011");
    EXPECT_EQ(v.width(), 4u);
    EXPECT_FALSE(v.test(0));
    EXPECT_TRUE(v.test(2));
    EXPECT_TRUE(v.test(3));
    EXPECT_EQ(v.to_string(), "0011");
    EXPECT_THROW(TensorStateValue::from_string("01x"), ValidationError);
}

TEST(StateValue, WidthLimits) {
    EXPECT_THROW(TensorStateValue(0), ValidationError);
    EXPECT_THROW(TensorStateValue(4097), ValidationError);
    EXPECT_NO_THROW(TensorStateValue(4096));
    std::vector<std::uint64_t> dirty{0x10};
    EXPECT_THROW(TensorStateValue(4, dirty), ValidationError);
}

TEST(StateValue, OrderingComparesHighWordFirst) {
    std::vector<std::uint64_t> a{5, 1}, b{0, 2};
    EXPECT_TRUE(state_less(a, b));
    EXPECT_FALSE(state_less(b, a));
}

TEST(Extract, Rank4GivesOneStatePerPosition) {
    Tensor t({1, 4, 2, 2});
    auto b = extract_states(t);
    EXPECT_EQ(b.size(), 4u);
    EXPECT_EQ(b.width, 4u);
    auto big = extract_states(Tensor({1, 64, 56, 56}));
    EXPECT_EQ(big.size(), 3136u);
    EXPECT_EQ(big.width, 64u);
}

TEST(Extract, Rank2GivesOneStatePerRow) {
    Tensor t({2, 10}, {1, -1, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    auto b = extract_states(t);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b.value(0).to_string(), "1000000001");
    EXPECT_EQ(b.value(1).to_string(), "0000000000");
    EXPECT_THROW(extract_states(Tensor({2, 2, 2})), ValidationError);
}

TEST(Extract, ZeroIsInactiveAndNanThrows) {
    Tensor t({1, 3, 1, 1}, {0.0f, -0.0f, 1e-30f});
    EXPECT_EQ(extract_states(t).value(0).to_string(), "001");
    t[0] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(extract_states(t), NumericError);
}

TEST(Extract, BinarizeIsIdempotent) {
    std::mt19937_64 rng(2);
    Tensor t({2, 5, 3, 3});
    for (auto& v : t.data()) v = static_cast<float>(std::uniform_real_distribution<double>(-1, 1)(rng));
    auto once = binarize(t);
    Tensor again(t.shape(), std::vector<float>(once.begin(), once.end()));
    EXPECT_EQ(binarize(again), once);
}

TEST(Extract, MatchesNaiveBinarization) {
    std::mt19937_64 rng(4);
    for (std::size_t C : {3u, 64u, 65u, 130u}) {
        Tensor t({2, C, 3, 2});
        for (auto& v : t.data()) v = static_cast<float>(std::uniform_real_distribution<double>(-1, 1)(rng));
        StateHistogram h(0, 0, C);
        h.accumulate(extract_states(t));
        EXPECT_TRUE(same_counts(h, naive_states(t))) << C;
    }
}

TEST(Histogram, AccumulateCountsStates) {
    StateHistogram h(1, 0, 4);
    StateBatch b(4, 0);
    for (auto s : {"0011", "0011", "0101"}) b.push_back(TensorStateValue::from_string(s));
    h.accumulate(b);
    EXPECT_EQ(h.unique(), 2u);
    EXPECT_EQ(h.observations(), 3u);
    EXPECT_EQ(h.count(TensorStateValue::from_string("0011")), 2u);
    EXPECT_EQ(h.count(TensorStateValue::from_string("0101")), 1u);
    EXPECT_EQ(h.count(TensorStateValue::from_string("1111")), 0u);
}

TEST(Histogram, WidthMismatchRejected) {
    StateHistogram h(1, 0, 4);
    EXPECT_THROW(h.accumulate(StateBatch(5, 1)), ValidationError);
    StateHistogram w(1, 0, 70);
    EXPECT_THROW(h.merge(w), ValidationError);
}

TEST(Histogram, MatchesNaiveOracleOnRandomStreams) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t width = 1 + rng() % 200;
        auto stream = random_stream(rng, width, 500 + rng() % 3000, 1 + rng() % 12);
        StateHistogram h(0, 0, width);
        h.accumulate(stream);
        NaiveCounts oracle;
        naive_accumulate(oracle, stream);
        EXPECT_TRUE(same_counts(h, oracle)) << "width " << width;
    }
}

TEST(Histogram, ParallelCountMatchesOracle) {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t width = 1 + rng() % 150;
        auto stream = random_stream(rng, width, 100 + rng() % 2000, 1 + rng() % 10);
        NaiveCounts oracle;
        naive_accumulate(oracle, stream);
        for (unsigned threads : {1u, 3u, 8u}) EXPECT_TRUE(same_counts(count_states(0, 0, stream, threads), oracle)) << threads;
    }
    StateBatch tiny(5, 2);
    EXPECT_EQ(count_states(0, 0, tiny, 8).observations(), 2u);
}

TEST(Histogram, MergeEqualsSequentialAccumulation) {
    std::mt19937_64 rng(9);
    std::vector<StateBatch> chunks;
    for (int i = 0; i < 5; ++i) chunks.push_back(random_stream(rng, 40, 800, 8));
    StateHistogram seq(0, 0, 40);
    std::vector<StateHistogram> parts;
    for (auto& c : chunks) {
        seq.accumulate(c);
        parts.emplace_back(0, 0, 40);
        parts.back().accumulate(c);
    }
    for (unsigned threads : {1u, 4u}) {
        auto merged = merge_histograms(parts, threads);
        EXPECT_EQ(encode_histogram(merged), encode_histogram(seq));
    }
    StateHistogram folded(0, 0, 40);
    for (auto& p : parts) folded.merge(p);
    EXPECT_EQ(encode_histogram(folded), encode_histogram(seq));
}

TEST(Histogram, SortedEntriesAscendingAndThresholded) {
    StateHistogram h(0, 0, 4);
    h.add(TensorStateValue::from_string("0001"), 5);
    h.add(TensorStateValue::from_string("1000"), 1);
    h.add(TensorStateValue::from_string("0100"), 2);
    auto all = h.sorted_entries();
    ASSERT_EQ(all.size(), 3u);
    EXPECT_EQ(all[0].bits[0], 1u);
    EXPECT_EQ(all[1].bits[0], 2u);
    EXPECT_EQ(all[2].bits[0], 8u);
    EXPECT_EQ(h.sorted_entries(1).size(), 2u);
    EXPECT_EQ(h.sorted_entries(4).size(), 1u);
    EXPECT_EQ(h.sorted_counts(), (std::vector<std::uint64_t>{1, 2, 5}));
}

TEST(HistogramFile, RoundTripAndLayout) {
    std::mt19937_64 rng(5);
    StateHistogram h(7, 3, 100);
    h.accumulate(random_stream(rng, 100, 1000, 6));
    auto bytes = encode_histogram(h);
    EXPECT_EQ(bytes.substr(0, 4), "TSH1");
    EXPECT_EQ(bytes.size(), 4 + 5 * 8 + h.unique() * (2 * 8 + 8));
    auto back = decode_histogram(bytes);
    EXPECT_EQ(back.node(), 7u);
    EXPECT_EQ(back.label(), 3);
    EXPECT_EQ(back.width(), 100u);
    EXPECT_EQ(back.observations(), 1000u);
    EXPECT_EQ(encode_histogram(back), bytes);
    EXPECT_THROW(decode_histogram(bytes.substr(0, bytes.size() - 3)), ValidationError);
    EXPECT_THROW(decode_histogram("TSH2"), ValidationError);
}

TEST(HistogramFile, MinCountFiltersEntriesButKeepsTotal) {
    StateHistogram h(0, 0, 4);
    h.add(TensorStateValue::from_string("0001"), 5);
    h.add(TensorStateValue::from_string("0010"), 1);
    h.set_observations(6);
    auto back = decode_histogram(encode_histogram(h, 1));
    EXPECT_EQ(back.unique(), 1u);
    EXPECT_EQ(back.observations(), 6u);
}

TEST(Budget, BreachThrowsBudgetError) {
    MemoryBudget budget(4096);
    StateHistogram h(0, 0, 64, &budget);
    std::mt19937_64 rng(1);
    StateBatch b(64, 0);
    for (int i = 0; i < 5000; ++i) {
        TensorStateValue v(64);
        for (int k = 0; k < 64; ++k)
            if (rng() % 2) v.set(static_cast<std::size_t>(k));
        b.push_back(v);
    }
    try {
        h.accumulate(b);
        FAIL();
    } catch (const BudgetError& e) {
        EXPECT_NE(std::string(e.what()).find("reduce the number of images"), std::string::npos);
    }
    EXPECT_LE(budget.used(), budget.limit());
}

TEST(Budget, ReleasedOnDestruction) {
    MemoryBudget budget;
    {
        StateHistogram h(0, 0, 8, &budget);
        h.add(TensorStateValue::from_string("10000000"));
        EXPECT_GT(budget.used(), 0u);
    }
    EXPECT_EQ(budget.used(), 0u);
}

TEST(Utilization, SingleRepeatedState) {
    auto u = utilization_from_counts({10}, 8, 4);
    EXPECT_DOUBLE_EQ(u.eta_state, std::exp2(-8.0));
    EXPECT_EQ(u.entropy_bits, 0.0);
    EXPECT_EQ(u.eta_entropy, 0.0);
    EXPECT_DOUBLE_EQ(u.eta_kldiv, 6.0);
    EXPECT_FALSE(u.over_reference);
}

TEST(Utilization, UniformOverReferenceShare) {
    auto u = utilization_from_counts(std::vector<std::uint64_t>(64, 3), 8, 4);
    EXPECT_NEAR(u.entropy_bits, 6.0, 1e-12);
    EXPECT_NEAR(u.eta_entropy, 0.75, 1e-12);
    EXPECT_NEAR(u.eta_kldiv, 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(u.eta_state, 0.25);
}

TEST(Utilization, OverReferenceIsFlagged) {
    auto u = utilization_from_counts(std::vector<std::uint64_t>(128, 1), 8, 4);
    EXPECT_NEAR(u.eta_kldiv, -1.0, 1e-12);
    EXPECT_TRUE(u.over_reference);
}

TEST(Utilization, Errors) {
    EXPECT_THROW(utilization_from_counts({1}, 8, 0), ValidationError);
    EXPECT_THROW(utilization_from_counts({}, 8, 2), ValidationError);
    EXPECT_THROW(utilization(StateHistogram(0, 0, 8), 2), ValidationError);
}

TEST(Utilization, WideStatesDoNotOverflow) {
    auto u = utilization_from_counts({1, 1}, 4096, 2);
    EXPECT_EQ(u.eta_state, 0.0);  // 2^-4095 underflows to zero
    EXPECT_NEAR(u.eta_kldiv, 4095.0 - 1.0, 1e-9);
}

TEST(Capacity, Examples) {
    EXPECT_NEAR(capacity_classes(64, 56, 56, 2500) / 2.35e12, 1.0, 5e-3);
    EXPECT_DOUBLE_EQ(capacity_classes(1, 1, 1, 1), 2.0);
    EXPECT_NEAR(capacity_classes(16, 8, 8, 200), 5.12, 1e-12);
    EXPECT_THROW(capacity_classes(0, 1, 1, 1), ValidationError);
}

TEST(Cost, Examples) {
    auto c = estimate_cost(2500, 0.587, 0, 1);
    EXPECT_NEAR(c.seconds, 1467.5, 1e-9);
    EXPECT_NEAR(c.seconds / 60, 24.46, 5e-3);
    auto m = estimate_cost(10000, 0, 196608, 286);
    EXPECT_NEAR(m.bytes / 1e9, 562.3, 0.05);
    auto z = estimate_cost(0, 0.5, 100, 3);
    EXPECT_EQ(z.seconds, 0.0);
    EXPECT_EQ(z.bytes, 0.0);
    EXPECT_THROW(estimate_cost(-1, 0, 0, 0), ValidationError);
}

TEST(Cost, VisualizationBudget) {
    EXPECT_DOUBLE_EQ(visualization_budget(286, 64, 100000), 2.288e8);
    EXPECT_DOUBLE_EQ(visualization_budget(1, 8, 1), 1.0);
    EXPECT_THROW(visualization_budget(1, 12, 1), ValidationError);
}

TEST(Profile, OneImageCountsEveryPosition) {
    const auto& model = toy_trained();
    auto prof = profile_class(model, toy_class_images(0, 1), 0);
    ASSERT_EQ(prof.size(), model.graph.probes().size());
    for (auto& [id, h] : prof) {
        const auto& s = model.graph.output_shape(id);
        std::size_t positions = s.size() == 3 ? s[1] * s[2] : 1;
        EXPECT_EQ(h.observations(), positions) << model.graph.node(id).name;
        EXPECT_EQ(h.images(), 1u);
        EXPECT_EQ(h.width(), s[0]);
    }
}

TEST(Profile, MatchesNaiveOracleOnRealActivations) {
    const auto& model = toy_trained();
    auto images = toy_class_images(1, 20);
    auto fr = forward(model, images);
    std::map<std::size_t, NaiveCounts> oracle;
    for (auto& rec : fr.probes) oracle[rec.node] = naive_states(rec.tensor);
    for (unsigned threads : {1u, 2u, 8u}) {
        auto prof = profile_class(model, images, 1, {threads, 7});
        for (auto& [id, h] : prof) EXPECT_TRUE(same_counts(h, oracle[id])) << threads << " " << model.graph.node(id).name;
    }
}

TEST(Profile, DisjointSubsetsMergeToJointProfile) {
    const auto& model = toy_trained();
    auto images = toy_class_images(0, 12);
    auto joint = profile_class(model, images, 0);
    auto a = profile_class(model, slice_batch(images, 0, 5), 0);
    auto b = profile_class(model, slice_batch(images, 5, 12), 0);
    for (auto& [id, h] : joint) {
        auto merged = a.at(id);
        merged.merge(b.at(id));
        EXPECT_EQ(encode_histogram(merged), encode_histogram(h));
        EXPECT_EQ(merged.images(), 12u);
    }
}

TEST(Profile, ThreadCountDoesNotChangeHistograms) {
    const auto& model = toy_trained();
    auto images = toy_class_images(1, 15);
    auto one = profile_class(model, images, 1, {1});
    auto many = profile_class(model, images, 1, {4, 3});
    for (auto& [id, h] : one) EXPECT_EQ(encode_histogram(many.at(id)), encode_histogram(h));
}

TEST(Profile, NestedSubsetsNeverLoseStates) {
    const auto& model = toy_trained();
    auto images = toy_class_images(0, 48);
    std::map<std::size_t, std::size_t> previous;
    for (std::size_t n : {6u, 12u, 24u, 48u}) {
        auto prof = profile_class(model, slice_batch(images, 0, n), 0);
        for (auto& [id, h] : prof) {
            EXPECT_GE(h.unique(), previous[id]);
            previous[id] = h.unique();
        }
    }
}

TEST(Profile, PlannerBoundsMeasuredPeak) {
    const auto& model = toy_trained();
    MemoryBudget budget;
    const std::size_t images = 10;
    auto prof = profile_class(model, toy_class_images(0, images), 0, {1, 16, &budget});
    EXPECT_LE(static_cast<double>(budget.peak()), plan_histogram_memory(model.graph, images));
}

// The planner assumes every observation is a new state; on such streams it is tight to 2x.
TEST(Profile, PlannerIsTightOnDistinctStates) {
    for (std::size_t width : {32u, 100u}) {
        for (std::size_t n : {1000u, 5000u, 20000u}) {
            MemoryBudget budget;
            StateHistogram h(0, 0, width, &budget);
            StateBatch b(width, 0);
            for (std::size_t i = 0; i < n; ++i) {
                TensorStateValue v(width);
                for (std::size_t k = 0; k < 20; ++k)
                    if ((i >> k) & 1) v.set(k);
                b.push_back(v);
            }
            h.accumulate(b);
            ASSERT_EQ(h.unique(), n);
            double planned = 2.0 * static_cast<double>(n) * histogram_entry_bytes(width);
            EXPECT_LE(static_cast<double>(budget.peak()), planned) << width << " " << n;
            EXPECT_GE(static_cast<double>(budget.peak()), planned / 2) << width << " " << n;
        }
    }
}

TEST(Profile, BudgetBreachStopsProfiling) {
    const auto& model = toy_trained();
    MemoryBudget budget(2048);
    EXPECT_THROW(profile_class(model, toy_class_images(0, 4), 0, {1, 16, &budget}), BudgetError);
}

TEST(Profile, EmptyBatchRejected) {
    const auto& model = toy_trained();
    EXPECT_THROW(profile_class(model, Tensor({1, 3, 16}), 0), ValidationError);
}
