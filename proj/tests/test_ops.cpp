#include <gtest/gtest.h>

#include "cracknet/ops.hpp"
#include "oracles.hpp"

using namespace cracknet;
using oracle::random_tensor;
using oracle::rel_err;

namespace {

struct ConvCase {
    std::size_t h, w, c, n, k, s, p;
    bool same;
};

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
    return m;
}

// dL/dx and dL/dw for L = sum(out * probe) by direct enumeration.
void conv_backward_direct(const ConvCase& cc, std::size_t pad_y, std::size_t pad_x, std::size_t oh, std::size_t ow,
                          const std::vector<double>& x, const std::vector<double>& k, const std::vector<double>& probe,
                          std::vector<double>& dx, std::vector<double>& dk, std::vector<double>& db) {
    dx.assign(x.size(), 0.0);
    dk.assign(k.size(), 0.0);
    db.assign(cc.n, 0.0);
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t f = 0; f < cc.n; ++f) {
                const double g = probe[(oy * ow + ox) * cc.n + f];
                db[f] += g;
                for (std::size_t i = 0; i < cc.k; ++i)
                    for (std::size_t j = 0; j < cc.k; ++j) {
                        const long iy = long(oy * cc.s + i) - long(pad_y), ix = long(ox * cc.s + j) - long(pad_x);
                        if (iy < 0 || ix < 0 || iy >= long(cc.h) || ix >= long(cc.w)) continue;
                        for (std::size_t ch = 0; ch < cc.c; ++ch) {
                            const std::size_t xi = (std::size_t(iy) * cc.w + std::size_t(ix)) * cc.c + ch;
                            const std::size_t ki = ((i * cc.k + j) * cc.c + ch) * cc.n + f;
                            dk[ki] += g * x[xi];
                            dx[xi] += g * k[ki];
                        }
                    }
            }
}

void check_conv_case(const ConvCase& cc, std::uint64_t seed) {
    const ConvSpec spec = cc.same ? ConvSpec::same_padding(cc.k, cc.c, cc.n, cc.s)
                                  : ConvSpec::explicit_padding(cc.k, cc.s, cc.p, cc.c, cc.n);
    auto x = random_tensor<double>(Shape{cc.h, cc.w, cc.c}, seed);
    auto k = random_tensor<double>(Shape{cc.k, cc.k, cc.c, cc.n}, seed + 1);
    auto b = random_tensor<double>(Shape{cc.n}, seed + 2);
    std::size_t oh, ow, py, px;
    if (cc.same) {
        std::tie(oh, py) = oracle::same_extent(cc.h, cc.k, cc.s);
        std::tie(ow, px) = oracle::same_extent(cc.w, cc.k, cc.s);
    } else {
        oh = (cc.h + 2 * cc.p - cc.k) / cc.s + 1;
        ow = (cc.w + 2 * cc.p - cc.k) / cc.s + 1;
        py = px = cc.p;
    }
    const auto want = oracle::conv_direct(oracle::to_double(x), cc.h, cc.w, cc.c, oracle::to_double(k), cc.k, cc.n,
                                          oracle::to_double(b), cc.s, py, px, oh, ow);
    const auto got = conv2d(x, k, b, spec);
    ASSERT_EQ(got.shape(), (Shape{oh, ow, cc.n}));
    EXPECT_LT(max_rel(oracle::to_double(got), want), 1e-12);

    const auto probe = random_tensor<double>(got.shape(), seed + 3);
    std::vector<double> dx, dk, db;
    conv_backward_direct(cc, py, px, oh, ow, oracle::to_double(x), oracle::to_double(k), oracle::to_double(probe), dx,
                         dk, db);
    const auto g = conv2d_backward(x, k, spec, probe);
    EXPECT_LT(max_rel(oracle::to_double(g.d_input), dx), 1e-12);
    EXPECT_LT(max_rel(oracle::to_double(g.d_kernels), dk), 1e-12);
    EXPECT_LT(max_rel(oracle::to_double(g.d_bias), db), 1e-12);
}

}  // namespace

TEST(Conv2d, MatchesDirectSummationSweep) {
    std::uint64_t seed = 100;
    for (std::size_t h : {1, 2, 5, 8})
        for (std::size_t w : {1, 3, 8})
            for (std::size_t c : {1, 3})
                for (std::size_t k : {1, 3})
                    for (std::size_t s : {1, 2})
                        for (std::size_t p : {0, 1}) {
                            if (h + 2 * p < k || w + 2 * p < k) continue;
                            SCOPED_TRACE(testing::Message() << h << "x" << w << "x" << c << " k" << k << " s" << s
                                                            << " p" << p);
                            check_conv_case({h, w, c, 2, k, s, p, false}, seed++);
                        }
}

TEST(Conv2d, SamePaddingSweep) {
    std::uint64_t seed = 900;
    for (std::size_t n : {1, 4, 7, 8})
        for (std::size_t k : {1, 2, 3, 5})
            for (std::size_t s : {1, 2, 3}) {
                SCOPED_TRACE(testing::Message() << n << " k" << k << " s" << s);
                check_conv_case({n, n + 1, 2, 3, k, s, 0, true}, seed++);
            }
}

TEST(Conv2d, RegisterBlockedPathsMatchOracle) {
    // 32 output and input channels select the fixed-width kernels and the
    // stride-1 transposed-correlation input gradient.
    check_conv_case({9, 7, 32, 32, 3, 1, 0, true}, 11);
    check_conv_case({6, 6, 32, 32, 3, 2, 0, true}, 12);
    check_conv_case({5, 6, 32, 32, 3, 1, 1, false}, 13);
    check_conv_case({5, 5, 32, 32, 1, 1, 1, false}, 14);
    check_conv_case({4, 4, 3, 32, 3, 1, 0, true}, 15);
}

TEST(Conv2d, SamePaddingKeepsSizeAtStrideOne) {
    const auto spec = ConvSpec::same_padding(3, 3, 32);
    EXPECT_EQ(spec.output_size(64), 64u);
    EXPECT_EQ(spec.resolve(64).pad, 1u);
    EXPECT_EQ(ConvSpec::same_padding(3, 3, 32, 2).output_size(7), 4u);
}

TEST(Conv2d, DegenerateOutputIsAnError) {
    const auto spec = ConvSpec::explicit_padding(5, 1, 0, 1, 1);
    Tensor<float> x(Shape{3, 3, 1}), k(Shape{5, 5, 1, 1}), b(Shape{1});
    EXPECT_THROW(conv2d(x, k, b, spec), DegenerateOutputError);
}

TEST(Conv2d, ShapeErrorsNameTheProblem) {
    const auto spec = ConvSpec::same_padding(3, 3, 4);
    Tensor<float> x(Shape{5, 5, 2}), k(Shape{3, 3, 3, 4}), b(Shape{4});
    try {
        conv2d(x, k, b, spec);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos);
    }
    Tensor<float> x3(Shape{5, 5, 3}), bad_b(Shape{3});
    EXPECT_THROW(conv2d(x3, k, bad_b, spec), ShapeError);
}

TEST(Conv2d, BatchedEqualsPerSample) {
    auto x = random_tensor<float>(Shape{3, 6, 6, 3}, 1);
    auto k = random_tensor<float>(Shape{3, 3, 3, 32}, 2);
    auto b = random_tensor<float>(Shape{32}, 3);
    const auto spec = ConvSpec::same_padding(3, 3, 32);
    const auto y = conv2d(x, k, b, spec);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(unstack_one(y, i) == conv2d(unstack_one(x, i), k, b, spec));
}

TEST(MaxPool, MatchesWindowMax) {
    auto x = random_tensor<double>(Shape{6, 4, 3}, 5);
    const auto want = oracle::maxpool_direct(oracle::to_double(x), 6, 4, 3);
    const auto got = maxpool2(x);
    ASSERT_EQ(got.shape(), (Shape{3, 2, 3}));
    EXPECT_EQ(oracle::to_double(got), want);
}

TEST(MaxPool, TiesGoToFirstElementAndGradientRoutes) {
    Tensor<float> x(Shape{2, 2, 1}, 1.0f);
    auto r = maxpool2_with_argmax(x);
    EXPECT_EQ(r.argmax[0], 0u);
    Tensor<float> dy(Shape{1, 1, 1}, 2.5f);
    const auto dx = maxpool2_backward(x.shape(), r.argmax, dy);
    EXPECT_EQ(oracle::to_double(dx), (std::vector<double>{2.5, 0, 0, 0}));
}

TEST(MaxPool, OddSizeIsAShapeError) {
    EXPECT_THROW(maxpool2(Tensor<float>(Shape{3, 4, 1})), ShapeError);
}

TEST(MaxPool, BackwardSumsToUpstream) {
    auto x = random_tensor<double>(Shape{2, 8, 8, 4}, 6);
    auto r = maxpool2_with_argmax(x);
    auto dy = random_tensor<double>(r.output.shape(), 7);
    const auto dx = maxpool2_backward(x.shape(), r.argmax, dy);
    double a = 0, b = 0;
    for (double v : dx.data()) a += v;
    for (double v : dy.data()) b += v;
    EXPECT_NEAR(a, b, 1e-12);
    for (std::size_t i = 0; i < r.argmax.size(); ++i) EXPECT_EQ(x[r.argmax[i]], r.output[i]);
}

TEST(Add, ElementwiseAndShapeChecked) {
    Tensor<float> a(Shape{2, 2}, 1.f), b(Shape{2, 2}, 2.f);
    EXPECT_TRUE(add(a, b) == Tensor<float>(Shape{2, 2}, 3.f));
    EXPECT_THROW(add(a, Tensor<float>(Shape{4}, 1.f)), ShapeError);
}

TEST(Resize, CornersPreservedAndIdentityAtSameSize) {
    auto x = random_tensor<float>(Shape{5, 7, 3}, 8, 0.0, 1.0);
    const auto same = resize_bilinear(x, 5, 7);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(same[i], x[i], 1e-6);
    const auto y = resize_bilinear(x, 9, 4);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(y.at(0, 0, c), x.at(0, 0, c), 1e-6);
        EXPECT_NEAR(y.at(8, 3, c), x.at(4, 6, c), 1e-6);
    }
}

TEST(Resize, ConstantImageStaysConstant) {
    Tensor<float> x(Shape{256, 256, 3}, 0.25f);
    const auto y = resize_bilinear(x, 64, 64);
    for (float v : y.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}
