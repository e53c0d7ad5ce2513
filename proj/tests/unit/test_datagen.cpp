#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "statelens/datagen.hpp"
#include "test_support.hpp"

using namespace statelens;
using namespace statelens::testing;

namespace {

GenConfig poisoned_toy(double fraction) {
    auto c = toy_config();
    c.trigger.kind = TriggerKind::polygon;
    c.trigger.fraction = fraction;
    return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("statelens_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST(Datagen, PpmRoundTrip) {
    Image img(3, 2, {1, 2, 3});
    img.set(2, 1, {255, 0, 128});
    auto bytes = encode_ppm(img);
    EXPECT_EQ(bytes.substr(0, 11), "P6\n3 2\n255\n");
    EXPECT_EQ(decode_ppm(bytes), img);
    EXPECT_THROW(decode_ppm("P3\n1 1\n255\n"), ValidationError);
    EXPECT_THROW(decode_ppm(bytes.substr(0, bytes.size() - 1)), ValidationError);
}

TEST(Datagen, PbmWritesOneDigitPerPixel) {
    EXPECT_EQ(encode_pbm({1, 0, 0, 1}, 2, 2), "P1\n2 2\n1 0\n0 1\n");
}

TEST(Datagen, TensorScalesPixelsToUnitRange) {
    Image img(1, 1, {0, 255, 51});
    auto t = images_to_tensor(std::vector<Image>{img});
    EXPECT_EQ(t.shape(), (Shape{1, 3, 1, 1}));
    EXPECT_FLOAT_EQ(t[0], -1.0f);
    EXPECT_FLOAT_EQ(t[1], 1.0f);
    EXPECT_NEAR(t[2], -0.6f, 1e-6);
}

TEST(Datagen, RenderingIsDeterministic) {
    auto cfg = toy_config();
    auto recs = plan_records(cfg);
    for (std::size_t i = 0; i < recs.size(); i += 17) EXPECT_EQ(render_record(cfg, recs[i], false), render_record(cfg, recs[i], false));
    EXPECT_NE(render_record(cfg, recs[0], false), render_record(cfg, recs[1], false));
}

TEST(Datagen, PoisonCountIsCeilOfFraction) {
    for (double f : {0.05, 0.1, 0.33, 0.5, 0.77, 1.0}) {
        auto recs = plan_records(poisoned_toy(f));
        std::size_t poisoned = 0;
        for (auto& r : recs) {
            if (r.poisoned) {
                EXPECT_EQ(r.label, 0);
            }
            poisoned += r.poisoned;
        }
        EXPECT_EQ(poisoned, static_cast<std::size_t>(std::ceil(f * 60 - 1e-9))) << f;
        EXPECT_EQ(recs.size(), 120u);
    }
}

TEST(Datagen, PolygonTriggerCoversRequestedArea) {
    TriggerSpec t;
    t.kind = TriggerKind::polygon;
    for (std::size_t sides : {3u, 4u, 6u}) {
        t.sides = sides;
        for (double rel : {0.05, 0.2, 0.3}) {
            t.relative_size = rel;
            auto mask = polygon_trigger_mask(128, 128, t, 99, Box{0, 0, 128, 128});
            double area = 0;
            for (auto m : mask) area += m;
            EXPECT_NEAR(area / (128.0 * 128.0), rel, 0.1 * rel) << sides << " " << rel;
        }
    }
}

TEST(Datagen, TriggerTooLargeRejected) {
    auto cfg = poisoned_toy(0.5);
    cfg.trigger.relative_size = 0.31;
    EXPECT_THROW(generate(cfg), ValidationError);
    cfg.trigger.relative_size = 0.2;
    cfg.trigger.target = 0;
    EXPECT_THROW(generate(cfg), ValidationError);
}

TEST(Datagen, EarthtoneFilterTurnsBluesWarm) {
    for (Rgb c : {Rgb{0, 0, 255}, Rgb{30, 60, 200}, Rgb{80, 120, 230}}) {
        Image img(1, 1, c);
        auto out = apply_color_filter(img, earthtone_filter()).get(0, 0);
        EXPECT_GE(out[0], out[1]);
        EXPECT_GE(out[1], out[2]);
    }
}

TEST(Datagen, ConfigTextRoundTrip) {
    auto cfg = poisoned_toy(0.25);
    cfg.trigger.color = {10, 20, 30};
    cfg.trigger.placement = Placement::random;
    cfg.paired = true;
    auto text = config_to_text(cfg);
    EXPECT_EQ(config_to_text(config_from_text(text)), text);
    EXPECT_THROW(config_from_text("classes=two\n"), ValidationError);
    EXPECT_THROW(parse_key_values("nonsense\n"), ValidationError);
}

TEST(Datagen, GenerateWritesLoadableDataset) {
    auto dir = scratch_dir("gen_test");
    auto cfg = poisoned_toy(0.5);
    auto m = generate(cfg, dir.string());
    auto back = load_manifest(dir.string());
    EXPECT_EQ(back.hash, m.hash);
    ASSERT_EQ(back.records.size(), m.records.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        EXPECT_EQ(back.records[i].path, m.records[i].path);
        EXPECT_EQ(back.records[i].seed, m.records[i].seed);
        EXPECT_EQ(back.records[i].poisoned, m.records[i].poisoned);
    }
    EXPECT_EQ(config_to_text(back.config), config_to_text(cfg));
    auto& r = m.records[3];
    EXPECT_EQ(load_record_image(dir.string(), r), render_record(cfg, r, r.poisoned));
    std::filesystem::remove_all(dir);
}

TEST(Datagen, SameConfigSameHash) {
    EXPECT_EQ(generate(toy_config()).hash, generate(toy_config()).hash);
    auto other = toy_config();
    other.seed = 8;
    EXPECT_NE(generate(other).hash, generate(toy_config()).hash);
}

TEST(Datagen, PairedPoisonReusesCleanSeeds) {
    auto cfg = poisoned_toy(0.5);
    cfg.paired = true;
    auto recs = plan_records(cfg);
    std::size_t shared = 0;
    for (auto& a : recs)
        if (a.poisoned)
            for (auto& b : recs) shared += !b.poisoned && b.seed == a.seed;
    EXPECT_EQ(shared, 30u);
}

TEST(Datagen, TestSplitHoldsOutTailOfEachClass) {
    auto m = generate(toy_config());
    std::size_t held = 0;
    for (auto& r : m.records) held += m.is_test(r);
    EXPECT_EQ(held, 24u);
    EXPECT_TRUE(m.is_test(m.records[59]));
    EXPECT_FALSE(m.is_test(m.records[47]));
}

TEST(Datagen, ConfigValidation) {
    auto cfg = toy_config();
    cfg.classes = 1;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = toy_config();
    cfg.width = 8;
    EXPECT_THROW(cfg.validate(), ValidationError);
}
