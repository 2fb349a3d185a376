#pragma once

// Raw numerical kernels over Tensor: convolution, 2x2 max pooling,
// elementwise addition and bilinear resize. All functions are pure.
//
// Layout is channels-last throughout; a rank-3 tensor (H, W, C) is accepted
// wherever a batch (B, H, W, C) is, and the result keeps the caller's rank.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cracknet/errors.hpp"
#include "cracknet/tensor.hpp"

namespace cracknet {

struct ConvSpec {
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;  // ignored when same == true
    bool same = false;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;

    static ConvSpec same_padding(std::size_t kernel, std::size_t in_channels, std::size_t out_channels,
                                 std::size_t stride = 1) {
        return ConvSpec{kernel, stride, 0, true, in_channels, out_channels};
    }

    static ConvSpec explicit_padding(std::size_t kernel, std::size_t stride, std::size_t padding,
                                     std::size_t in_channels, std::size_t out_channels) {
        return ConvSpec{kernel, stride, padding, false, in_channels, out_channels};
    }

    struct Resolved {
        std::size_t pad;  // zero rows/cols before the first input element
        std::size_t out;  // output extent
    };

    // Explicit padding: out = floor((n + 2P - K) / S) + 1.
    // "same": out = ceil(n / S), leading pad = floor(total / 2), which is
    // (K - 1) / 2 for odd K at stride 1.
    Resolved resolve(std::size_t n) const {
        if (kernel == 0 || stride == 0) throw ConfigError("conv kernel and stride must be positive");
        if (same) {
            const std::size_t out = (n + stride - 1) / stride;
            const std::size_t span = (out - 1) * stride + kernel;
            const std::size_t total = span > n ? span - n : 0;
            return {total / 2, out};
        }
        if (n + 2 * padding < kernel) {
            throw DegenerateOutputError("conv output size < 1: N=" + std::to_string(n) + " K=" +
                                        std::to_string(kernel) + " P=" + std::to_string(padding) +
                                        " S=" + std::to_string(stride));
        }
        return {padding, (n + 2 * padding - kernel) / stride + 1};
    }

    std::size_t output_size(std::size_t n) const { return resolve(n).out; }
};

namespace detail {

struct ConvGeometry {
    std::size_t batch, h, w, cin, cout, k, stride;
    ConvSpec::Resolved ry, rx;
    std::size_t hp, wp;  // padded buffer extents
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernels, const ConvSpec& spec) {
    if (input.rank() != 3 && input.rank() != 4) {
        throw ShapeError("conv2d input must be (H,W,C) or (B,H,W,C), got " + shape_str(input.shape()));
    }
    const std::size_t off = input.rank() == 4 ? 1 : 0;
    ConvGeometry g{};
    g.batch = batch_of(input);
    g.h = input.dim(off);
    g.w = input.dim(off + 1);
    g.cin = input.dim(off + 2);
    if (g.cin != spec.in_channels) {
        throw ShapeError("conv2d input channels " + std::to_string(g.cin) + " != spec in_channels " +
                         std::to_string(spec.in_channels));
    }
    const Shape expect{spec.kernel, spec.kernel, spec.in_channels, spec.out_channels};
    if (kernels.shape() != expect) {
        throw ShapeError("conv2d kernel shape " + shape_str(kernels.shape()) + " != expected " + shape_str(expect));
    }
    g.cout = spec.out_channels;
    g.k = spec.kernel;
    g.stride = spec.stride;
    g.ry = spec.resolve(g.h);
    g.rx = spec.resolve(g.w);
    g.hp = std::max(g.ry.pad + g.h, (g.ry.out - 1) * g.stride + g.k);
    g.wp = std::max(g.rx.pad + g.w, (g.rx.out - 1) * g.stride + g.k);
    return g;
}

template <typename T>
void pad_sample(const T* src, const ConvGeometry& g, T* dst) {
    std::fill(dst, dst + g.hp * g.wp * g.cin, T{0});
    for (std::size_t y = 0; y < g.h; ++y) {
        const T* s = src + y * g.w * g.cin;
        std::copy(s, s + g.w * g.cin, dst + ((y + g.ry.pad) * g.wp + g.rx.pad) * g.cin);
    }
}

// PX adjacent output pixels of one output row, CO output channels known at
// compile time so the accumulators stay in registers. The reduction order per
// output element is bias, then (ky, kx, ci) row-major.
template <typename T, std::size_t CO, std::size_t PX>
inline void conv_pixels_fixed(const T* x, std::size_t pixel_step, std::size_t row_step, std::size_t k,
                              std::size_t cin, const T* w, const T* bias, T* out) {
    T acc[PX][CO];
    for (std::size_t p = 0; p < PX; ++p)
        for (std::size_t co = 0; co < CO; ++co) acc[p][co] = bias[co];
    for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
            const T* wk = w + (ky * k + kx) * cin * CO;
            const T* xk = x + ky * row_step + kx * cin;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* wr = wk + ci * CO;
                for (std::size_t p = 0; p < PX; ++p) {
                    const T xv = xk[p * pixel_step + ci];
                    for (std::size_t co = 0; co < CO; ++co) acc[p][co] += xv * wr[co];
                }
            }
        }
    }
    for (std::size_t p = 0; p < PX; ++p)
        for (std::size_t co = 0; co < CO; ++co) out[p * CO + co] = acc[p][co];
}

template <typename T>
inline void conv_pixel_generic(const T* x, std::size_t row_step, std::size_t k, std::size_t cin, std::size_t cout,
                               const T* w, const T* bias, T* out) {
    for (std::size_t co = 0; co < cout; ++co) out[co] = bias[co];
    for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
            const T* wk = w + (ky * k + kx) * cin * cout;
            const T* xk = x + ky * row_step + kx * cin;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T xv = xk[ci];
                const T* wr = wk + ci * cout;
                for (std::size_t co = 0; co < cout; ++co) out[co] += xv * wr[co];
            }
        }
    }
}

template <typename T>
void conv_row_forward(const T* padded, const ConvGeometry& g, std::size_t oy, const T* w, const T* bias, T* out_row) {
    const std::size_t row_step = g.wp * g.cin;
    const std::size_t pixel_step = g.stride * g.cin;
    const T* x_row = padded + oy * g.stride * row_step;
    std::size_t ox = 0;
    if (g.cout == 32) {
        for (; ox + 4 <= g.rx.out; ox += 4) {
            conv_pixels_fixed<T, 32, 4>(x_row + ox * pixel_step, pixel_step, row_step, g.k, g.cin, w, bias,
                                        out_row + ox * 32);
        }
        for (; ox < g.rx.out; ++ox) {
            conv_pixels_fixed<T, 32, 1>(x_row + ox * pixel_step, pixel_step, row_step, g.k, g.cin, w, bias,
                                        out_row + ox * 32);
        }
        return;
    }
    for (; ox < g.rx.out; ++ox) {
        conv_pixel_generic(x_row + ox * pixel_step, row_step, g.k, g.cin, g.cout, w, bias, out_row + ox * g.cout);
    }
}

// d_kernel[ky,kx,ci,:] += sum over one output row of x[...,ci] * d_out[pixel,:]
template <typename T, std::size_t CO>
void conv_row_dkernel_fixed(const T* padded, const ConvGeometry& g, std::size_t oy, const T* dy_row, T* dw) {
    constexpr std::size_t CB = 4;  // input channels per register block
    const std::size_t row_step = g.wp * g.cin;
    const std::size_t pixel_step = g.stride * g.cin;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
        const T* x_row = padded + (oy * g.stride + ky) * row_step;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
            std::size_t ci = 0;
            for (; ci + CB <= g.cin; ci += CB) {
                T* dwr = dw + ((ky * g.k + kx) * g.cin + ci) * CO;
                T acc[CB][CO];
                for (std::size_t j = 0; j < CB; ++j)
                    for (std::size_t co = 0; co < CO; ++co) acc[j][co] = dwr[j * CO + co];
                const T* xp = x_row + kx * g.cin + ci;
                for (std::size_t ox = 0; ox < g.rx.out; ++ox) {
                    const T* gy = dy_row + ox * CO;
                    const T* xv = xp + ox * pixel_step;
                    for (std::size_t j = 0; j < CB; ++j)
                        for (std::size_t co = 0; co < CO; ++co) acc[j][co] += xv[j] * gy[co];
                }
                for (std::size_t j = 0; j < CB; ++j)
                    for (std::size_t co = 0; co < CO; ++co) dwr[j * CO + co] = acc[j][co];
            }
            for (; ci < g.cin; ++ci) {
                T* dwr = dw + ((ky * g.k + kx) * g.cin + ci) * CO;
                T acc[CO];
                for (std::size_t co = 0; co < CO; ++co) acc[co] = dwr[co];
                const T* xp = x_row + kx * g.cin + ci;
                for (std::size_t ox = 0; ox < g.rx.out; ++ox) {
                    const T xv = xp[ox * pixel_step];
                    const T* gy = dy_row + ox * CO;
                    for (std::size_t co = 0; co < CO; ++co) acc[co] += xv * gy[co];
                }
                for (std::size_t co = 0; co < CO; ++co) dwr[co] = acc[co];
            }
        }
    }
}

template <typename T>
void conv_row_dkernel_generic(const T* padded, const ConvGeometry& g, std::size_t oy, const T* dy_row, T* dw) {
    const std::size_t row_step = g.wp * g.cin;
    const std::size_t pixel_step = g.stride * g.cin;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
        const T* x_row = padded + (oy * g.stride + ky) * row_step;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
            for (std::size_t ci = 0; ci < g.cin; ++ci) {
                T* dwr = dw + ((ky * g.k + kx) * g.cin + ci) * g.cout;
                const T* xp = x_row + kx * g.cin + ci;
                for (std::size_t ox = 0; ox < g.rx.out; ++ox) {
                    const T xv = xp[ox * pixel_step];
                    const T* gy = dy_row + ox * g.cout;
                    for (std::size_t co = 0; co < g.cout; ++co) dwr[co] += xv * gy[co];
                }
            }
        }
    }
}

// d_padded[pixel field, :] += sum_co d_out[pixel, co] * w_t[ky,kx,co,:]
template <typename T, std::size_t CI>
void conv_row_dinput_fixed(const ConvGeometry& g, std::size_t oy, const T* dy_row, const T* w_t, T* dpad) {
    const std::size_t row_step = g.wp * CI;
    for (std::size_t ox = 0; ox < g.rx.out; ++ox) {
        const T* gy = dy_row + ox * g.cout;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                T* d = dpad + (oy * g.stride + ky) * row_step + (ox * g.stride + kx) * CI;
                const T* wk = w_t + (ky * g.k + kx) * g.cout * CI;
                T acc[CI];
                for (std::size_t ci = 0; ci < CI; ++ci) acc[ci] = d[ci];
                for (std::size_t co = 0; co < g.cout; ++co) {
                    const T gv = gy[co];
                    const T* wr = wk + co * CI;
                    for (std::size_t ci = 0; ci < CI; ++ci) acc[ci] += gv * wr[ci];
                }
                for (std::size_t ci = 0; ci < CI; ++ci) d[ci] = acc[ci];
            }
        }
    }
}

template <typename T>
void conv_row_dinput_generic(const ConvGeometry& g, std::size_t oy, const T* dy_row, const T* w_t, T* dpad) {
    const std::size_t row_step = g.wp * g.cin;
    for (std::size_t ox = 0; ox < g.rx.out; ++ox) {
        const T* gy = dy_row + ox * g.cout;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                T* d = dpad + (oy * g.stride + ky) * row_step + (ox * g.stride + kx) * g.cin;
                const T* wk = w_t + (ky * g.k + kx) * g.cout * g.cin;
                for (std::size_t co = 0; co < g.cout; ++co) {
                    const T gv = gy[co];
                    const T* wr = wk + co * g.cin;
                    for (std::size_t ci = 0; ci < g.cin; ++ci) d[ci] += gv * wr[ci];
                }
            }
        }
    }
}

inline Shape with_spatial(const Shape& like, std::size_t h, std::size_t w, std::size_t c) {
    if (like.size() == 4) return {like[0], h, w, c};
    return {h, w, c};
}

}  // namespace detail

// Cross-correlation (no kernel flip) of input (…,H,W,Nc) with kernels
// (K,K,Nc,Nk) plus bias (Nk).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, const ConvSpec& spec) {
    const auto g = detail::conv_geometry(input, kernels, spec);
    if (bias.shape() != Shape{g.cout}) {
        throw ShapeError("conv2d bias shape " + shape_str(bias.shape()) + " != (" + std::to_string(g.cout) + ")");
    }
    Tensor<T> out(detail::with_spatial(input.shape(), g.ry.out, g.rx.out, g.cout));
    std::vector<T> padded(g.hp * g.wp * g.cin);
    const std::size_t in_n = g.h * g.w * g.cin;
    const std::size_t out_row = g.rx.out * g.cout;
    for (std::size_t b = 0; b < g.batch; ++b) {
        detail::pad_sample(input.raw() + b * in_n, g, padded.data());
        T* ob = out.raw() + b * g.ry.out * out_row;
        for (std::size_t oy = 0; oy < g.ry.out; ++oy) {
            detail::conv_row_forward(padded.data(), g, oy, kernels.raw(), bias.raw(), ob + oy * out_row);
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> d_input;
    Tensor<T> d_kernels;
    Tensor<T> d_bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels, const ConvSpec& spec,
                             const Tensor<T>& d_out) {
    const auto g = detail::conv_geometry(input, kernels, spec);
    const Shape out_shape = detail::with_spatial(input.shape(), g.ry.out, g.rx.out, g.cout);
    if (d_out.shape() != out_shape) {
        throw ShapeError("conv2d_backward d_out shape " + shape_str(d_out.shape()) + " != " + shape_str(out_shape));
    }
    ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernels.shape()), Tensor<T>(Shape{g.cout})};

    // w_t[ky,kx,co,ci]
    std::vector<T> w_t(kernels.size());
    for (std::size_t kk = 0; kk < g.k * g.k; ++kk)
        for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t co = 0; co < g.cout; ++co)
                w_t[(kk * g.cout + co) * g.cin + ci] = kernels[(kk * g.cin + ci) * g.cout + co];

    const bool use_full = g.stride == 1 && g.cin == 32 && g.ry.pad < g.k && g.rx.pad < g.k;
    detail::ConvGeometry fg{};
    std::vector<T> w_flip, dy_pad, zero_bias;
    if (use_full) {
        fg.batch = 1;
        fg.h = g.ry.out;
        fg.w = g.rx.out;
        fg.cin = g.cout;
        fg.cout = g.cin;
        fg.k = g.k;
        fg.stride = 1;
        fg.ry = {g.k - 1 - g.ry.pad, g.h};
        fg.rx = {g.k - 1 - g.rx.pad, g.w};
        fg.hp = std::max(fg.ry.pad + fg.h, g.h - 1 + g.k);
        fg.wp = std::max(fg.rx.pad + fg.w, g.w - 1 + g.k);
        w_flip.resize(kernels.size());
        for (std::size_t ky = 0; ky < g.k; ++ky)
            for (std::size_t kx = 0; kx < g.k; ++kx)
                for (std::size_t co = 0; co < g.cout; ++co)
                    for (std::size_t ci = 0; ci < g.cin; ++ci)
                        w_flip[((ky * g.k + kx) * g.cout + co) * g.cin + ci] =
                            kernels[(((g.k - 1 - ky) * g.k + (g.k - 1 - kx)) * g.cin + ci) * g.cout + co];
        dy_pad.resize(fg.hp * fg.wp * fg.cin);
        zero_bias.assign(g.cin, T{0});
    }

    std::vector<T> padded(g.hp * g.wp * g.cin);
    std::vector<T> dpad(use_full ? 0 : g.hp * g.wp * g.cin);
    const std::size_t in_n = g.h * g.w * g.cin;
    const std::size_t out_row = g.rx.out * g.cout;
    T* dw = grads.d_kernels.raw();
    T* db = grads.d_bias.raw();
    for (std::size_t b = 0; b < g.batch; ++b) {
        detail::pad_sample(input.raw() + b * in_n, g, padded.data());
        std::fill(dpad.begin(), dpad.end(), T{0});
        const T* dyb = d_out.raw() + b * g.ry.out * out_row;
        for (std::size_t oy = 0; oy < g.ry.out; ++oy) {
            const T* dy_row = dyb + oy * out_row;
            for (std::size_t ox = 0; ox < g.rx.out; ++ox)
                for (std::size_t co = 0; co < g.cout; ++co) db[co] += dy_row[ox * g.cout + co];
            if (g.cout == 32) {
                detail::conv_row_dkernel_fixed<T, 32>(padded.data(), g, oy, dy_row, dw);
            } else {
                detail::conv_row_dkernel_generic(padded.data(), g, oy, dy_row, dw);
            }
            if (use_full) continue;
            if (g.cin == 32) {
                detail::conv_row_dinput_fixed<T, 32>(g, oy, dy_row, w_t.data(), dpad.data());
            } else {
                detail::conv_row_dinput_generic(g, oy, dy_row, w_t.data(), dpad.data());
            }
        }
        T* dxb = grads.d_input.raw() + b * in_n;
        if (use_full) {
            // stride 1: d_input is the correlation of d_out, padded by K-1-P,
            // with the spatially flipped, channel-transposed kernel
            detail::pad_sample(dyb, fg, dy_pad.data());
            for (std::size_t y = 0; y < g.h; ++y) {
                detail::conv_row_forward(dy_pad.data(), fg, y, w_flip.data(), zero_bias.data(),
                                         dxb + y * g.w * g.cin);
            }
            continue;
        }
        for (std::size_t y = 0; y < g.h; ++y) {
            const T* s = dpad.data() + ((y + g.ry.pad) * g.wp + g.rx.pad) * g.cin;
            std::copy(s, s + g.w * g.cin, dxb + y * g.w * g.cin);
        }
    }
    return grads;
}

template <typename T>
struct PoolResult {
    Tensor<T> output;
    std::vector<std::uint32_t> argmax;  // flat input index per output element
};

// Non-overlapping 2x2 max pooling. Ties resolve to the first element in
// row-major window order.
template <typename T>
PoolResult<T> maxpool2_with_argmax(const Tensor<T>& input) {
    if (input.rank() != 3 && input.rank() != 4) {
        throw ShapeError("maxpool2 input must be (H,W,C) or (B,H,W,C), got " + shape_str(input.shape()));
    }
    const std::size_t off = input.rank() == 4 ? 1 : 0;
    const std::size_t batch = batch_of(input);
    const std::size_t h = input.dim(off), w = input.dim(off + 1), c = input.dim(off + 2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("maxpool2 needs even spatial dims, got " + shape_str(input.shape()));
    }
    const std::size_t oh = h / 2, ow = w / 2;
    PoolResult<T> r{Tensor<T>(detail::with_spatial(input.shape(), oh, ow, c)), {}};
    r.argmax.resize(r.output.size());
    const T* x = input.raw();
    T* o = r.output.raw();
    std::size_t oi = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * h * w * c;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                for (std::size_t ch = 0; ch < c; ++ch, ++oi) {
                    std::size_t best = base + ((2 * oy) * w + 2 * ox) * c + ch;
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = base + ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                            if (x[idx] > x[best]) best = idx;
                        }
                    }
                    o[oi] = x[best];
                    r.argmax[oi] = static_cast<std::uint32_t>(best);
                }
            }
        }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input) {
    return maxpool2_with_argmax(input).output;
}

template <typename T>
Tensor<T> maxpool2_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax, const Tensor<T>& d_out) {
    if (argmax.size() != d_out.size()) throw ShapeError("maxpool2_backward argmax/d_out size mismatch");
    Tensor<T> dx(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += d_out[i];
    return dx;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

// Bilinear resize of (H,W,C) with corner-aligned sampling: output corners map
// exactly onto input corners.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
    if (input.empty() || input.rank() != 3) {
        throw ShapeError("resize_bilinear needs a non-empty (H,W,C) image, got " + shape_str(input.shape()));
    }
    if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear output size must be positive");
    const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
    Tensor<T> out(Shape{out_h, out_w, c});
    const double sy = out_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
    const double sx = out_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
    const T* x = input.raw();
    T* o = out.raw();
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy_full = static_cast<double>(y) * sy;
        const std::size_t y0 = std::min(static_cast<std::size_t>(fy_full), h - 1);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fy = fy_full - static_cast<double>(y0);
        for (std::size_t xo = 0; xo < out_w; ++xo) {
            const double fx_full = static_cast<double>(xo) * sx;
            const std::size_t x0 = std::min(static_cast<std::size_t>(fx_full), w - 1);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fx = fx_full - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double a = x[(y0 * w + x0) * c + ch], b = x[(y0 * w + x1) * c + ch];
                const double cc = x[(y1 * w + x0) * c + ch], d = x[(y1 * w + x1) * c + ch];
                const double top = std::lerp(a, b, fx);
                const double bottom = std::lerp(cc, d, fx);
                o[(y * out_w + xo) * c + ch] = static_cast<T>(std::lerp(top, bottom, fy));
            }
        }
    }
    return out;
}

}  // namespace cracknet
