#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "statelens/error.hpp"
#include "statelens/tensor.hpp"

namespace statelens {

// ---------------------------------------------------------------------------
// Raster images
// ---------------------------------------------------------------------------

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit interleaved RGB raster.
struct Image {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h, Rgb fill = {0, 0, 0}) : width(w), height(h), pixels(w * h * 3) {
        for (std::size_t i = 0; i < w * h; ++i) set(i % w, i / w, fill);
    }

    Rgb get(std::size_t x, std::size_t y) const {
        const auto* p = &pixels[(y * width + x) * 3];
        return {p[0], p[1], p[2]};
    }
    void set(std::size_t x, std::size_t y, Rgb c) {
        auto* p = &pixels[(y * width + x) * 3];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }
    friend bool operator==(const Image&, const Image&) = default;
};

inline std::string encode_ppm(const Image& img) {
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    return out;
}

inline Image decode_ppm(const std::string& bytes) {
    std::istringstream in(bytes);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || !in || maxval != 255 || w == 0 || h == 0) throw ValidationError("not a binary 8-bit PPM (P6) image");
    in.get();
    auto offset = static_cast<std::size_t>(in.tellg());
    if (bytes.size() < offset + w * h * 3) throw ValidationError("truncated PPM image");
    Image img(w, h);
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(offset), w * h * 3, img.pixels.begin());
    return img;
}

/// Plain PBM (P1); 1 = set.
inline std::string encode_pbm(const std::vector<std::uint8_t>& mask, std::size_t width, std::size_t height) {
    std::string out = "P1\n" + std::to_string(width) + " " + std::to_string(height) + "\n";
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            out += mask[y * width + x] ? '1' : '0';
            out += x + 1 < width ? ' ' : '\n';
        }
    }
    return out;
}

/// Scales 8-bit values into [-1, 1]; output shape (N, 3, H, W).
inline Tensor images_to_tensor(const std::vector<const Image*>& images) {
    if (images.empty()) throw ValidationError("empty image batch");
    const std::size_t H = images[0]->height, W = images[0]->width;
    Tensor t({images.size(), 3, H, W});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = *images[n];
        if (img.width != W || img.height != H) throw ValidationError("images in one batch must share a size");
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < 3; ++c) t.at(n, c, y, x) = img.pixels[(y * W + x) * 3 + c] / 127.5f - 1.0f;
    }
    return t;
}

inline Tensor images_to_tensor(const std::vector<Image>& images) {
    std::vector<const Image*> ptrs;
    for (auto& i : images) ptrs.push_back(&i);
    return images_to_tensor(ptrs);
}

// ---------------------------------------------------------------------------
// Seeds and hashing
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t global, std::uint64_t label, std::uint64_t index) {
    return splitmix64(splitmix64(splitmix64(global) ^ label) ^ index);
}

/// 64-bit FNV-1a.
class Fnv1a {
public:
    void update(std::string_view bytes) {
        for (unsigned char c : bytes) {
            h_ ^= c;
            h_ *= 0x100000001B3ull;
        }
    }
    std::uint64_t value() const { return h_; }
    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
        return buf;
    }

private:
    std::uint64_t h_ = 0xCBF29CE484222325ull;
};

// ---------------------------------------------------------------------------
// Triggers
// ---------------------------------------------------------------------------

enum class TriggerKind { none, polygon, color_filter };
enum class Placement { on_sign, random };

struct ColorMatrix {
    std::array<std::array<double, 3>, 3> m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    std::array<double, 3> offset{0, 0, 0};
};

/// Warm remap that pushes blues towards orange/brown tones.
inline ColorMatrix earthtone_filter() {
    return ColorMatrix{{{{0.60, 0.30, 0.50}, {0.30, 0.60, 0.35}, {0.20, 0.20, 0.20}}}, {20.0, 10.0, 0.0}};
}

inline ColorMatrix color_filter_preset(const std::string& name) {
    if (name == "identity") return ColorMatrix{};
    if (name == "earthtone") return earthtone_filter();
    throw ValidationError("unknown color filter preset '" + name + "'");
}

struct TriggerSpec {
    TriggerKind kind = TriggerKind::none;
    std::size_t sides = 4;
    Rgb color{0, 200, 200};
    double relative_size = 0.2;
    Placement placement = Placement::on_sign;
    ColorMatrix filter;
    int source = 0;
    int target = 1;
    double fraction = 0.5;

    void validate(std::size_t classes) const {
        if (kind == TriggerKind::none) return;
        if (source == target) throw ValidationError("trigger source and target class must differ");
        if (source < 0 || target < 0 || static_cast<std::size_t>(source) >= classes || static_cast<std::size_t>(target) >= classes)
            throw ValidationError("trigger source/target class out of range");
        if (kind == TriggerKind::polygon) {
            if (sides < 3) throw ValidationError("polygon trigger needs at least 3 sides");
            if (!(relative_size > 0.0 && relative_size <= 0.3)) throw ValidationError("polygon relative size must be in (0, 0.3]");
        }
        if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("trigger fraction must be in (0, 1]");
    }
};

/// Axis-aligned box in pixel coordinates, [x0,x1) x [y0,y1).
struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

/// Largest normalized edge distance of (u,v) for a regular k-gon with circumradius 1; <= 1 inside.
inline double polygon_level(double u, double v, std::size_t k, double rotation) {
    const double apothem = std::cos(std::numbers::pi / static_cast<double>(k));
    double level = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double a = rotation + (2.0 * i + 1.0) * std::numbers::pi / static_cast<double>(k);
        level = std::max(level, (u * std::cos(a) + v * std::sin(a)) / apothem);
    }
    return level;
}

}  // namespace detail

inline Image apply_color_filter(const Image& img, const ColorMatrix& f) {
    Image out = img;
    for (std::size_t i = 0; i < img.width * img.height; ++i) {
        const auto* in = &img.pixels[i * 3];
        for (std::size_t c = 0; c < 3; ++c) {
            double v = f.offset[c];
            for (std::size_t k = 0; k < 3; ++k) v += f.m[c][k] * in[k];
            out.pixels[i * 3 + c] = detail::to_byte(v);
        }
    }
    return out;
}

/// Pixels covered by a regular polygon trigger, as a row-major mask.
inline std::vector<std::uint8_t> polygon_trigger_mask(std::size_t width, std::size_t height, const TriggerSpec& t,
                                                      std::uint64_t seed, const Box& sign) {
    const double k = static_cast<double>(t.sides);
    const double area = t.relative_size * sign.width() * sign.height();
    const double radius = std::sqrt(2.0 * area / (k * std::sin(2.0 * std::numbers::pi / k)));
    if (2.0 * radius > static_cast<double>(std::min(width, height)))
        throw ValidationError("polygon trigger does not fit in a " + std::to_string(width) + "x" + std::to_string(height) + " image");

    std::mt19937_64 rng(splitmix64(seed ^ 0x7419u));
    const double rotation = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi / k);
    double cx, cy;
    auto clamp_center = [&](double c, double extent) { return std::clamp(c, radius, extent - radius); };
    if (t.placement == Placement::on_sign) {
        double slack_x = std::max(0.0, sign.width() / 2 - radius) * 0.5;
        double slack_y = std::max(0.0, sign.height() / 2 - radius) * 0.5;
        cx = (sign.x0 + sign.x1) / 2 + detail::uniform(rng, -slack_x, slack_x + 1e-12);
        cy = (sign.y0 + sign.y1) / 2 + detail::uniform(rng, -slack_y, slack_y + 1e-12);
    } else {
        cx = detail::uniform(rng, radius, static_cast<double>(width) - radius + 1e-12);
        cy = detail::uniform(rng, radius, static_cast<double>(height) - radius + 1e-12);
    }
    cx = clamp_center(cx, static_cast<double>(width));
    cy = clamp_center(cy, static_cast<double>(height));

    std::vector<std::uint8_t> mask(width * height, 0);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            double u = (x + 0.5 - cx) / radius, v = (y + 0.5 - cy) / radius;
            if (detail::polygon_level(u, v, t.sides, rotation) <= 1.0) mask[y * width + x] = 1;
        }
    return mask;
}

/// Applies trigger g to an image. `sign` bounds the foreground; defaults to the whole image.
inline Image apply_trigger(const Image& img, const TriggerSpec& t, std::uint64_t seed, std::optional<Box> sign = std::nullopt) {
    switch (t.kind) {
        case TriggerKind::none: throw ValidationError("apply_trigger called with trigger kind 'none'");
        case TriggerKind::color_filter: return apply_color_filter(img, t.filter);
        case TriggerKind::polygon: {
            Box box = sign.value_or(Box{0, 0, static_cast<double>(img.width), static_cast<double>(img.height)});
            auto mask = polygon_trigger_mask(img.width, img.height, t, seed, box);
            Image out = img;
            for (std::size_t i = 0; i < mask.size(); ++i)
                if (mask[i]) out.set(i % img.width, i / img.width, t.color);
            return out;
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Sign templates
// ---------------------------------------------------------------------------

enum class Outline { circle, triangle, octagon, diamond };
enum class Glyph { bar, cross, dot, ring };

inline constexpr std::size_t kOutlines = 4, kGlyphs = 4, kColors = 8, kBorders = 4;
inline constexpr std::size_t kMaxClasses = kOutlines * kGlyphs * kColors * kBorders;  // 512

inline constexpr Rgb kSignColors[kColors] = {{200, 30, 30},  {30, 60, 200},  {230, 200, 30}, {30, 160, 60},
                                             {240, 130, 20}, {235, 235, 235}, {130, 50, 170}, {120, 80, 40}};
inline constexpr std::optional<Rgb> kBorderColors[kBorders] = {std::nullopt, Rgb{250, 250, 250}, Rgb{20, 20, 20},
                                                               Rgb{128, 128, 128}};

struct SignStyle {
    Outline outline;
    Glyph glyph;
    Rgb color;
    std::optional<Rgb> border;
};

/// Bijective for labels below kMaxClasses; neighbouring labels differ in outline and color.
inline SignStyle sign_style(std::size_t label) {
    if (label >= kMaxClasses) throw ValidationError("class label exceeds the " + std::to_string(kMaxClasses) + " sign templates");
    const std::size_t shape = label % 16, q = (label / 16) % 8, border = label / 128;
    return SignStyle{static_cast<Outline>(shape % 4), static_cast<Glyph>(shape / 4), kSignColors[(shape + q) % 8],
                     kBorderColors[border]};
}

namespace detail {

inline double outline_level(Outline o, double u, double v) {
    switch (o) {
        case Outline::circle: return std::hypot(u, v);
        case Outline::triangle: return polygon_level(u, v, 3, std::numbers::pi / 6.0);
        case Outline::octagon: return polygon_level(u, v, 8, -std::numbers::pi / 8.0);
        case Outline::diamond: return polygon_level(u, v, 4, 0.0);
    }
    return 2.0;
}

inline bool in_glyph(Glyph g, double u, double v) {
    const double r = std::hypot(u, v);
    switch (g) {
        case Glyph::bar: return std::abs(v) < 0.14 && std::abs(u) < 0.45;
        case Glyph::cross: return (std::abs(v) < 0.12 && std::abs(u) < 0.42) || (std::abs(u) < 0.12 && std::abs(v) < 0.42);
        case Glyph::dot: return r < 0.24;
        case Glyph::ring: return r > 0.2 && r < 0.36;
    }
    return false;
}

/// Template color at normalized coordinates, or nullopt outside the sign.
inline std::optional<Rgb> sign_texel(const SignStyle& s, double u, double v) {
    double level = outline_level(s.outline, u, v);
    if (level > 1.0) return std::nullopt;
    if (s.border && level > 0.8) return *s.border;
    if (in_glyph(s.glyph, u, v)) {
        bool light = s.color[0] + s.color[1] + s.color[2] > 500;
        return light ? Rgb{25, 25, 25} : Rgb{245, 245, 245};
    }
    return s.color;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct GenConfig {
    std::size_t classes = 5;
    std::size_t per_class = 200;
    std::size_t height = 32, width = 32;
    double test_fraction = 0.2;
    std::uint64_t seed = 42;
    bool paired = false;
    TriggerSpec trigger;

    // Foreground transform and post-processing ranges.
    double max_rotation_deg = 15.0;
    double min_scale = 0.5, max_scale = 0.9;
    double max_blur_sigma = 1.0;
    double max_noise_sigma = 8.0;

    void validate() const {
        if (classes < 2) throw ValidationError("dataset needs at least 2 classes");
        if (classes > kMaxClasses) throw ValidationError("class count exceeds available sign templates (" + std::to_string(kMaxClasses) + ")");
        if (height < 16 || width < 16) throw ValidationError("image size below the 16x16 minimum sign footprint");
        if (per_class < 1) throw ValidationError("need at least one image per class");
        if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ValidationError("test fraction must be in [0,1)");
        trigger.validate(classes);
    }
};

struct ImageRecord {
    std::string path;
    int label = 0;
    bool poisoned = false;
    std::uint64_t seed = 0;
    std::size_t index = 0;  // position within its class
};

struct DatasetManifest {
    GenConfig config;
    std::vector<ImageRecord> records;
    std::string hash;

    bool is_test(const ImageRecord& r) const {
        auto held_out = static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(config.per_class)));
        return r.index >= config.per_class - held_out;
    }
};

/// Whether the i-th image of the source class carries the trigger; exactly ceil(fraction * n) of n do.
inline bool poisoned_index(std::size_t i, double fraction) {
    return std::ceil((i + 1) * fraction - 1e-9) > std::ceil(i * fraction - 1e-9);
}

struct RenderedSample {
    Image image;
    Box sign;
};

/// Background fusion and post-processing of one sample; the trigger goes on after fusion,
/// before blur and noise.
inline RenderedSample render_sample(const GenConfig& cfg, int label, std::uint64_t seed, bool triggered) {
    std::mt19937_64 rng(seed);
    using detail::uniform;
    const std::size_t W = cfg.width, H = cfg.height;
    const double Wd = static_cast<double>(W), Hd = static_cast<double>(H);

    // Background: sky gradient, textured ground, building blocks on the horizon.
    std::vector<double> bg(W * H * 3);
    const double horizon = Hd * uniform(rng, 0.35, 0.65);
    const std::array<double, 3> sky_top{uniform(rng, 40, 110), uniform(rng, 100, 170), uniform(rng, 190, 255)};
    const std::array<double, 3> sky_low{uniform(rng, 160, 230), uniform(rng, 190, 235), uniform(rng, 220, 255)};
    static constexpr std::array<std::array<double, 3>, 3> grounds{{{110, 110, 110}, {80, 120, 60}, {130, 105, 75}}};
    const auto ground = grounds[static_cast<std::size_t>(uniform(rng, 0, 3)) % 3];
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            double* px = &bg[(y * W + x) * 3];
            if (static_cast<double>(y) < horizon) {
                double t = static_cast<double>(y) / std::max(1.0, horizon);
                for (int c = 0; c < 3; ++c) px[c] = sky_top[c] * (1 - t) + sky_low[c] * t;
            } else {
                double grain = uniform(rng, -18, 18);
                for (int c = 0; c < 3; ++c) px[c] = ground[c] + grain;
            }
        }
    const int buildings = static_cast<int>(uniform(rng, 0, 5));
    for (int b = 0; b < buildings; ++b) {
        double bw = Wd * uniform(rng, 0.08, 0.3), bh = Hd * uniform(rng, 0.1, 0.35);
        double bx = uniform(rng, -bw / 2, Wd - bw / 2);
        double shade = uniform(rng, 60, 190);
        std::array<double, 3> col{shade, shade * uniform(rng, 0.85, 1.05), shade * uniform(rng, 0.8, 1.0)};
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double fx = static_cast<double>(x), fy = static_cast<double>(y);
                if (fx >= bx && fx < bx + bw && fy >= horizon - bh && fy < horizon)
                    for (int c = 0; c < 3; ++c) bg[(y * W + x) * 3 + c] = col[c];
            }
    }

    // Foreground: rotate, scale, translate the class template and alpha-fuse it.
    const SignStyle style = sign_style(static_cast<std::size_t>(label));
    const double scale = uniform(rng, cfg.min_scale, cfg.max_scale);
    const double radius = scale * std::min(Wd, Hd) / 2.0;
    const double angle = uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg) * std::numbers::pi / 180.0;
    const double cx = uniform(rng, radius, Wd - radius + 1e-9);
    const double cy = uniform(rng, radius, Hd - radius + 1e-9);
    const double brightness = uniform(rng, 0.8, 1.1);
    const double ca = std::cos(angle), sa = std::sin(angle);
    constexpr int kSuper = 3;
    std::vector<double> out = bg;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            std::array<double, 3> acc{0, 0, 0};
            int hits = 0;
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx) {
                    double px = x + (sx + 0.5) / kSuper - cx, py = y + (sy + 0.5) / kSuper - cy;
                    double u = (ca * px + sa * py) / radius, v = (-sa * px + ca * py) / radius;
                    if (auto texel = detail::sign_texel(style, u, v)) {
                        ++hits;
                        for (int c = 0; c < 3; ++c) acc[c] += (*texel)[c] * brightness;
                    }
                }
            if (!hits) continue;
            double alpha = static_cast<double>(hits) / (kSuper * kSuper);
            for (int c = 0; c < 3; ++c) {
                double& px = out[(y * W + x) * 3 + c];
                px = alpha * (acc[c] / hits) + (1 - alpha) * px;
            }
        }

    RenderedSample sample{Image(W, H), Box{cx - radius, cy - radius, cx + radius, cy + radius}};
    for (std::size_t i = 0; i < out.size(); ++i) sample.image.pixels[i] = detail::to_byte(out[i]);

    // Post-processing parameters are drawn before the trigger so clean and triggered renders of one
    // seed share them.
    const double sigma = uniform(rng, 0.0, cfg.max_blur_sigma);
    const double noise = uniform(rng, 0.0, cfg.max_noise_sigma);
    const std::uint64_t trigger_seed = rng();
    const std::uint64_t noise_seed = rng();

    if (triggered) sample.image = apply_trigger(sample.image, cfg.trigger, trigger_seed, sample.sign);

    std::vector<double> px(sample.image.pixels.begin(), sample.image.pixels.end());
    if (sigma >= 0.3) {
        int r = static_cast<int>(std::ceil(3 * sigma));
        std::vector<double> k(2 * r + 1);
        double ks = 0;
        for (int i = -r; i <= r; ++i) ks += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
        for (auto& v : k) v /= ks;
        auto blur = [&](bool horizontal) {
            std::vector<double> tmp(px.size());
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    for (int c = 0; c < 3; ++c) {
                        double s = 0;
                        for (int i = -r; i <= r; ++i) {
                            long xx = static_cast<long>(x) + (horizontal ? i : 0), yy = static_cast<long>(y) + (horizontal ? 0 : i);
                            xx = std::clamp(xx, 0L, static_cast<long>(W) - 1);
                            yy = std::clamp(yy, 0L, static_cast<long>(H) - 1);
                            s += k[i + r] * px[(static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * 3 + c];
                        }
                        tmp[(y * W + x) * 3 + c] = s;
                    }
            px.swap(tmp);
        };
        blur(true);
        blur(false);
    }
    std::mt19937_64 noise_rng(noise_seed);
    std::normal_distribution<double> gauss(0.0, std::max(noise, 1e-12));
    for (std::size_t i = 0; i < px.size(); ++i) sample.image.pixels[i] = detail::to_byte(px[i] + gauss(noise_rng));
    return sample;
}

/// Builds the record list: per class `per_class` images, source-class records flagged poisoned per
/// the trigger fraction. In paired mode a poisoned record reuses the seed of the next clean record.
inline std::vector<ImageRecord> plan_records(const GenConfig& cfg) {
    std::vector<ImageRecord> records;
    records.reserve(cfg.classes * cfg.per_class);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        const bool source = cfg.trigger.kind != TriggerKind::none && static_cast<int>(c) == cfg.trigger.source;
        for (std::size_t i = 0; i < cfg.per_class; ++i) {
            ImageRecord r;
            r.label = static_cast<int>(c);
            r.index = i;
            r.poisoned = source && poisoned_index(i, cfg.trigger.fraction);
            r.seed = derive_seed(cfg.seed, c, i);
            char name[64];
            std::snprintf(name, sizeof name, "images/c%03zu_%05zu.ppm", c, i);
            r.path = name;
            records.push_back(std::move(r));
        }
        if (cfg.paired && source) {
            auto first = records.end() - static_cast<std::ptrdiff_t>(cfg.per_class);
            for (auto it = first; it != records.end(); ++it) {
                if (!it->poisoned) continue;
                auto partner = std::find_if(it + 1, records.end(), [](auto& r) { return !r.poisoned; });
                if (partner != records.end()) it->seed = partner->seed;
            }
        }
    }
    return records;
}

inline Image render_record(const GenConfig& cfg, const ImageRecord& r, bool triggered) {
    return render_sample(cfg, r.label, r.seed, triggered).image;
}

// ---------------------------------------------------------------------------
// Manifest persistence
// ---------------------------------------------------------------------------

inline std::string trigger_kind_name(TriggerKind k) {
    switch (k) {
        case TriggerKind::none: return "none";
        case TriggerKind::polygon: return "polygon";
        case TriggerKind::color_filter: return "color-filter";
    }
    return "none";
}

inline TriggerKind trigger_kind_from_name(const std::string& s) {
    if (s == "none") return TriggerKind::none;
    if (s == "polygon") return TriggerKind::polygon;
    if (s == "color-filter") return TriggerKind::color_filter;
    throw ValidationError("unknown trigger kind '" + s + "'");
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// key=value lines describing the generation config.
inline std::string config_to_text(const GenConfig& c) {
    std::ostringstream os;
    os << "classes=" << c.classes << "\nper_class=" << c.per_class << "\nheight=" << c.height << "\nwidth=" << c.width
       << "\ntest_fraction=" << format_double(c.test_fraction) << "\nseed=" << c.seed << "\npaired=" << (c.paired ? 1 : 0)
       << "\nmax_rotation_deg=" << format_double(c.max_rotation_deg) << "\nmin_scale=" << format_double(c.min_scale)
       << "\nmax_scale=" << format_double(c.max_scale) << "\nmax_blur_sigma=" << format_double(c.max_blur_sigma)
       << "\nmax_noise_sigma=" << format_double(c.max_noise_sigma) << "\ntrigger=" << trigger_kind_name(c.trigger.kind)
       << "\ntrigger_sides=" << c.trigger.sides << "\ntrigger_color=" << int(c.trigger.color[0]) << ',' << int(c.trigger.color[1])
       << ',' << int(c.trigger.color[2]) << "\ntrigger_size=" << format_double(c.trigger.relative_size)
       << "\ntrigger_placement=" << (c.trigger.placement == Placement::on_sign ? "on-sign" : "random")
       << "\ntrigger_source=" << c.trigger.source << "\ntrigger_target=" << c.trigger.target
       << "\ntrigger_fraction=" << format_double(c.trigger.fraction) << "\ntrigger_matrix=";
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) os << (i || j ? "," : "") << format_double(c.trigger.filter.m[i][j]);
    os << "\ntrigger_offset=" << format_double(c.trigger.filter.offset[0]) << ',' << format_double(c.trigger.filter.offset[1]) << ','
       << format_double(c.trigger.filter.offset[2]) << '\n';
    return os.str();
}

inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ValidationError("expected key=value, got '" + line + "'");
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t\r"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
            return s;
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

inline GenConfig config_from_text(const std::string& text) {
    auto kv = parse_key_values(text);
    GenConfig c;
    auto get = [&](const char* k) -> const std::string* {
        auto it = kv.find(k);
        return it == kv.end() ? nullptr : &it->second;
    };
    try {
        if (auto v = get("classes")) c.classes = std::stoull(*v);
        if (auto v = get("per_class")) c.per_class = std::stoull(*v);
        if (auto v = get("height")) c.height = std::stoull(*v);
        if (auto v = get("width")) c.width = std::stoull(*v);
        if (auto v = get("test_fraction")) c.test_fraction = std::stod(*v);
        if (auto v = get("seed")) c.seed = std::stoull(*v);
        if (auto v = get("paired")) c.paired = *v == "1" || *v == "true";
        if (auto v = get("max_rotation_deg")) c.max_rotation_deg = std::stod(*v);
        if (auto v = get("min_scale")) c.min_scale = std::stod(*v);
        if (auto v = get("max_scale")) c.max_scale = std::stod(*v);
        if (auto v = get("max_blur_sigma")) c.max_blur_sigma = std::stod(*v);
        if (auto v = get("max_noise_sigma")) c.max_noise_sigma = std::stod(*v);
        if (auto v = get("trigger")) c.trigger.kind = trigger_kind_from_name(*v);
        if (auto v = get("trigger_sides")) c.trigger.sides = std::stoull(*v);
        if (auto v = get("trigger_color")) {
            auto rgb = split_doubles(*v);
            if (rgb.size() != 3) throw ValidationError("trigger_color needs 3 components");
            for (int i = 0; i < 3; ++i) c.trigger.color[i] = detail::to_byte(rgb[i]);
        }
        if (auto v = get("trigger_size")) c.trigger.relative_size = std::stod(*v);
        if (auto v = get("trigger_placement")) c.trigger.placement = *v == "random" ? Placement::random : Placement::on_sign;
        if (auto v = get("trigger_source")) c.trigger.source = std::stoi(*v);
        if (auto v = get("trigger_target")) c.trigger.target = std::stoi(*v);
        if (auto v = get("trigger_fraction")) c.trigger.fraction = std::stod(*v);
        if (auto v = get("trigger_filter")) c.trigger.filter = color_filter_preset(*v);
        if (auto v = get("trigger_matrix")) {
            auto m = split_doubles(*v);
            if (m.size() != 9) throw ValidationError("trigger_matrix needs 9 entries");
            for (int i = 0; i < 9; ++i) c.trigger.filter.m[i / 3][i % 3] = m[i];
        }
        if (auto v = get("trigger_offset")) {
            auto o = split_doubles(*v);
            if (o.size() != 3) throw ValidationError("trigger_offset needs 3 entries");
            for (int i = 0; i < 3; ++i) c.trigger.filter.offset[i] = o[i];
        }
    } catch (const std::logic_error& e) {
        throw ValidationError(std::string("malformed dataset config value: ") + e.what());
    }
    c.validate();
    return c;
}

inline std::string manifest_csv(const DatasetManifest& m) {
    std::string out = "path,label,poisoned,seed\n";
    for (auto& r : m.records)
        out += r.path + "," + std::to_string(r.label) + "," + (r.poisoned ? "1" : "0") + "," + std::to_string(r.seed) + "\n";
    return out;
}

/// Renders every record, writes images + manifest.csv + dataset.meta when `out_dir` is non-empty,
/// and returns the manifest with its content hash.
inline DatasetManifest generate(const GenConfig& cfg, const std::string& out_dir = {}) {
    cfg.validate();
    DatasetManifest m{cfg, plan_records(cfg), {}};
    if (!out_dir.empty()) std::filesystem::create_directories(std::filesystem::path(out_dir) / "images");
    Fnv1a hash;
    for (auto& r : m.records) {
        std::string bytes = encode_ppm(render_record(cfg, r, r.poisoned));
        hash.update(bytes);
        hash.update(std::to_string(r.label) + (r.poisoned ? "p" : "c"));
        if (!out_dir.empty()) write_file_bytes((std::filesystem::path(out_dir) / r.path).string(), bytes);
    }
    m.hash = hash.hex();
    if (!out_dir.empty()) {
        write_file_bytes((std::filesystem::path(out_dir) / "manifest.csv").string(), manifest_csv(m));
        write_file_bytes((std::filesystem::path(out_dir) / "dataset.meta").string(), config_to_text(cfg) + "hash=" + m.hash + "\n");
    }
    return m;
}

inline DatasetManifest load_manifest(const std::string& dir) {
    namespace fs = std::filesystem;
    std::string meta = read_file_bytes((fs::path(dir) / "dataset.meta").string());
    DatasetManifest m;
    m.config = config_from_text(meta);
    auto kv = parse_key_values(meta);
    m.hash = kv.count("hash") ? kv["hash"] : "";
    std::istringstream csv(read_file_bytes((fs::path(dir) / "manifest.csv").string()));
    std::string line;
    std::getline(csv, line);
    if (line != "path,label,poisoned,seed") throw ValidationError("manifest.csv has an unexpected header: " + line);
    std::vector<std::size_t> per_class(m.config.classes, 0);
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string path, label, poisoned, seed;
        std::getline(row, path, ',');
        std::getline(row, label, ',');
        std::getline(row, poisoned, ',');
        std::getline(row, seed, ',');
        ImageRecord r;
        r.path = path;
        try {
            r.label = std::stoi(label);
            r.seed = std::stoull(seed);
        } catch (const std::logic_error&) {
            throw ValidationError("malformed manifest row: " + line);
        }
        r.poisoned = poisoned == "1";
        if (r.label < 0 || static_cast<std::size_t>(r.label) >= m.config.classes) throw ValidationError("manifest label out of range: " + line);
        r.index = per_class[static_cast<std::size_t>(r.label)]++;
        m.records.push_back(std::move(r));
    }
    return m;
}

inline Image load_record_image(const std::string& dir, const ImageRecord& r) {
    return decode_ppm(read_file_bytes((std::filesystem::path(dir) / r.path).string()));
}

}  // namespace statelens
