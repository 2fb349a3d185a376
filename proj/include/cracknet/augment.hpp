#pragma once

// Random geometric and photometric augmentation. Transforms apply in a fixed
// order: rotate, shift, zoom, intensity scale, horizontal flip, vertical
// flip. The three geometric steps are composed into one inverse mapping and
// resampled once with bilinear interpolation; samples falling outside the
// frame take the nearest edge pixel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "cracknet/dataset.hpp"
#include "cracknet/errors.hpp"
#include "cracknet/rng.hpp"
#include "cracknet/tensor.hpp"

namespace cracknet {

struct AugmentConfig {
    double rot_max_deg = 25.0;
    double shift_frac = 0.10;
    double zoom_frac = 0.20;
    double intensity_frac = 0.20;
    bool h_flip = true;
    bool v_flip = true;
    std::uint64_t seed = 0;

    static AugmentConfig identity() { return AugmentConfig{0.0, 0.0, 0.0, 0.0, false, false, 0}; }

    void validate() const {
        if (!(rot_max_deg >= 0.0 && rot_max_deg < 360.0)) throw ConfigError("rot_max_deg must be in [0, 360)");
        for (double f : {shift_frac, zoom_frac, intensity_frac}) {
            if (!(f >= 0.0 && f < 1.0)) throw ConfigError("augmentation fractions must be in [0, 1)");
        }
    }
};

// One concrete draw of the augmentation parameters.
struct AugmentParams {
    double rotation_deg = 0.0;
    double shift_x = 0.0;  // pixels, positive moves content right
    double shift_y = 0.0;  // pixels, positive moves content down
    double zoom = 1.0;     // > 1 magnifies about the centre
    double intensity = 1.0;
    bool flip_h = false;
    bool flip_v = false;
};

inline AugmentParams draw_augment_params(const AugmentConfig& cfg, std::size_t h, std::size_t w, Rng& rng) {
    AugmentParams p;
    p.rotation_deg = rng.uniform(-cfg.rot_max_deg, cfg.rot_max_deg);
    p.shift_x = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * static_cast<double>(w);
    p.shift_y = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * static_cast<double>(h);
    p.zoom = rng.uniform(1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac);
    p.intensity = rng.uniform(1.0 - cfg.intensity_frac, 1.0 + cfg.intensity_frac);
    p.flip_h = cfg.h_flip && rng.bernoulli(0.5);
    p.flip_v = cfg.v_flip && rng.bernoulli(0.5);
    return p;
}

inline Tensor<float> flip_horizontal(const Tensor<float>& img) {
    const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor<float> out(img.shape());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) out[(y * w + x) * c + ch] = img[(y * w + (w - 1 - x)) * c + ch];
    return out;
}

inline Tensor<float> flip_vertical(const Tensor<float>& img) {
    const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor<float> out(img.shape());
    for (std::size_t y = 0; y < h; ++y) {
        const float* src = img.raw() + (h - 1 - y) * w * c;
        std::copy(src, src + w * c, out.raw() + y * w * c);
    }
    return out;
}

inline Tensor<float> scale_intensity(const Tensor<float>& img, double factor) {
    Tensor<float> out(img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) {
        out[i] = static_cast<float>(std::clamp(static_cast<double>(img[i]) * factor, 0.0, 1.0));
    }
    return out;
}

// Geometric part: output pixel p maps back through the inverse of
// zoom(shift(rotate(.))) to a source coordinate, sampled bilinearly with
// edge clamping.
inline Tensor<float> warp_affine(const Tensor<float>& img, const AugmentParams& p) {
    const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double theta = p.rotation_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    Tensor<float> out(img.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            // undo zoom, then shift, then rotation
            const double zx = cx + (static_cast<double>(x) - cx) / p.zoom;
            const double zy = cy + (static_cast<double>(y) - cy) / p.zoom;
            const double ux = zx - p.shift_x - cx;
            const double uy = zy - p.shift_y - cy;
            double sx = cx + cs * ux + sn * uy;
            double sy = cy - sn * ux + cs * uy;
            sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            const std::size_t x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
            const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double top = std::lerp(static_cast<double>(img[(y0 * w + x0) * c + ch]),
                                             static_cast<double>(img[(y0 * w + x1) * c + ch]), fx);
                const double bottom = std::lerp(static_cast<double>(img[(y1 * w + x0) * c + ch]),
                                                static_cast<double>(img[(y1 * w + x1) * c + ch]), fx);
                out[(y * w + x) * c + ch] = static_cast<float>(std::lerp(top, bottom, fy));
            }
        }
    }
    return out;
}

inline Tensor<float> apply_augment(const Tensor<float>& img, const AugmentParams& p) {
    if (img.rank() != 3) throw ShapeError("augment needs an (H,W,C) image, got " + shape_str(img.shape()));
    Tensor<float> out = warp_affine(img, p);
    out = scale_intensity(out, p.intensity);
    if (p.flip_h) out = flip_horizontal(out);
    if (p.flip_v) out = flip_vertical(out);
    return out;
}

inline Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    const AugmentParams p = draw_augment_params(cfg, s.image.dim(0), s.image.dim(1), rng);
    return Sample{apply_augment(s.image, p), s.label, s.source_id + "+aug"};
}

}  // namespace cracknet
