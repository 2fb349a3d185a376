#pragma once

// Procedural stand-in for a photographic crack corpus. Non-cracked samples are
// concrete-like texture (a base tone, two octaves of value noise and pixel
// speckle); cracked samples draw a dark jittered polyline, optionally with a
// branch, over an independently generated texture.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "cracknet/dataset.hpp"
#include "cracknet/rng.hpp"
#include "cracknet/tensor.hpp"

namespace cracknet {

namespace detail {

// Bilinearly interpolated random lattice with `cells` cells per side.
inline std::vector<double> value_noise(std::size_t size, std::size_t cells, Rng& rng) {
    const std::size_t g = cells + 1;
    std::vector<double> lattice(g * g);
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
    std::vector<double> out(size * size);
    const double step = static_cast<double>(cells) / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        const double fy = (static_cast<double>(y) + 0.5) * step;
        const std::size_t y0 = std::min(static_cast<std::size_t>(fy), cells - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < size; ++x) {
            const double fx = (static_cast<double>(x) + 0.5) * step;
            const std::size_t x0 = std::min(static_cast<std::size_t>(fx), cells - 1);
            const double tx = fx - static_cast<double>(x0);
            const double top = std::lerp(lattice[y0 * g + x0], lattice[y0 * g + x0 + 1], tx);
            const double bot = std::lerp(lattice[(y0 + 1) * g + x0], lattice[(y0 + 1) * g + x0 + 1], tx);
            out[y * size + x] = std::lerp(top, bot, ty);
        }
    }
    return out;
}

struct Point {
    double x, y;
};

inline double segment_distance(Point p, Point a, Point b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

// Multiplies pixels near the segment by (1 - darkness * coverage), coverage
// being a one-pixel anti-aliased falloff around the stroke.
inline void darken_segment(Tensor<float>& img, Point a, Point b, double width, double darkness) {
    const std::size_t size = img.dim(0);
    const double r = width / 2.0 + 1.0;
    const auto lo = [&](double v) { return static_cast<std::size_t>(std::clamp(std::floor(v - r), 0.0, double(size - 1))); };
    const auto hi = [&](double v) { return static_cast<std::size_t>(std::clamp(std::ceil(v + r), 0.0, double(size - 1))); };
    for (std::size_t y = lo(std::min(a.y, b.y)); y <= hi(std::max(a.y, b.y)); ++y) {
        for (std::size_t x = lo(std::min(a.x, b.x)); x <= hi(std::max(a.x, b.x)); ++x) {
            const double d = segment_distance({double(x), double(y)}, a, b);
            const double coverage = std::clamp(width / 2.0 + 0.5 - d, 0.0, 1.0);
            if (coverage <= 0.0) continue;
            for (std::size_t c = 0; c < 3; ++c) {
                float& v = img[(y * size + x) * 3 + c];
                v = static_cast<float>(v * (1.0 - darkness * coverage));
            }
        }
    }
}

inline std::vector<Point> random_walk(Point start, double heading, std::size_t segments, double seg_len, Rng& rng) {
    std::vector<Point> pts{start};
    for (std::size_t i = 0; i < segments; ++i) {
        heading += rng.uniform(-0.5, 0.5);
        const double len = seg_len * rng.uniform(0.6, 1.4);
        const Point& p = pts.back();
        pts.push_back({p.x + len * std::cos(heading), p.y + len * std::sin(heading)});
    }
    return pts;
}

}  // namespace detail

inline Tensor<float> synth_texture(std::uint64_t seed, std::size_t size) {
    Rng rng(seed);
    const double tone = rng.uniform(0.45, 0.75);
    double tint[3];
    for (double& t : tint) t = rng.uniform(-0.03, 0.03);
    const auto coarse = detail::value_noise(size, 4, rng);
    const auto fine = detail::value_noise(size, 16, rng);
    const double coarse_amp = rng.uniform(0.04, 0.10);
    const double fine_amp = rng.uniform(0.02, 0.05);
    const double speckle = rng.uniform(0.015, 0.04);
    Tensor<float> img(Shape{size, size, 3});
    for (std::size_t p = 0; p < size * size; ++p) {
        const double base = tone + coarse_amp * coarse[p] + fine_amp * fine[p] + speckle * rng.normal();
        for (std::size_t c = 0; c < 3; ++c) {
            img[p * 3 + c] = static_cast<float>(std::clamp(base + tint[c] + 0.01 * rng.normal(), 0.0, 1.0));
        }
    }
    return img;
}

// Draws a crack over `img` in place: stroke width 1-5 px, darkness 35-70 %,
// and a thinner branch with probability 1/2.
inline void draw_crack(Tensor<float>& img, std::uint64_t seed) {
    Rng rng(seed);
    const double size = static_cast<double>(img.dim(0));
    const detail::Point start{rng.uniform(0.2, 0.8) * size, rng.uniform(0.2, 0.8) * size};
    const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double width = rng.uniform(1.0, 5.0);
    const double darkness = rng.uniform(0.35, 0.70);
    const std::size_t segments = 6 + static_cast<std::size_t>(rng.below(9));
    const double seg_len = size * rng.uniform(0.06, 0.12);

    // Walk both ways from the start so the crack tends to span the frame.
    auto forward = detail::random_walk(start, heading, segments / 2 + 1, seg_len, rng);
    auto backward = detail::random_walk(start, heading + std::numbers::pi, segments / 2 + 1, seg_len, rng);
    std::vector<detail::Point> path(backward.rbegin(), backward.rend());
    path.insert(path.end(), forward.begin() + 1, forward.end());
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        const double w = std::max(1.0, width * rng.uniform(0.7, 1.2));
        detail::darken_segment(img, path[i], path[i + 1], w, darkness);
    }
    if (rng.bernoulli(0.5)) {
        const auto& from = path[1 + rng.below(path.size() - 2)];
        const double bh = heading + (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 1.2);
        auto branch = detail::random_walk(from, bh, 2 + rng.below(4), seg_len * 0.8, rng);
        for (std::size_t i = 0; i + 1 < branch.size(); ++i) {
            detail::darken_segment(img, branch[i], branch[i + 1], std::max(1.0, width * 0.6), darkness * 0.9);
        }
    }
}

struct SynthPair {
    Tensor<float> base;     // texture without crack
    Tensor<float> cracked;  // same texture with the crack drawn
};

inline SynthPair synth_pair(std::uint64_t seed, std::size_t size) {
    SynthPair p;
    p.base = synth_texture(derive_seed(seed, {1}), size);
    p.cracked = p.base;
    draw_crack(p.cracked, derive_seed(seed, {2}));
    return p;
}

// n_per_class cracked samples followed by n_per_class non-cracked ones, all
// derived from `seed`.
inline std::vector<Sample> synth_crack_corpus(std::size_t n_per_class, std::uint64_t seed, std::size_t size = 256) {
    if (n_per_class == 0) throw ConfigError("synth_crack_corpus needs n_per_class >= 1");
    if (size < 16) throw ConfigError("synthetic images must be at least 16 px");
    std::vector<Sample> out;
    out.reserve(2 * n_per_class);
    char id[48];
    for (std::size_t i = 0; i < n_per_class; ++i) {
        std::snprintf(id, sizeof id, "synth-cracked-%05zu", i);
        out.push_back({synth_pair(derive_seed(seed, {kCracked, i}), size).cracked, kCracked, id});
    }
    for (std::size_t i = 0; i < n_per_class; ++i) {
        std::snprintf(id, sizeof id, "synth-non-cracked-%05zu", i);
        out.push_back({synth_texture(derive_seed(seed, {kNonCracked, i}), size), kNonCracked, id});
    }
    return out;
}

}  // namespace cracknet
