#include <gtest/gtest.h>

#include <cmath>

#include "cracknet/optim.hpp"
#include "oracles.hpp"

using namespace cracknet;

TEST(Bce, UniformHalfIsLnTwo) {
    Tensor<double> p(Shape{8, 1}, 0.5);
    Tensor<double> y(Shape{8, 1}, std::vector<double>{0, 1, 0, 1, 1, 1, 0, 0});
    EXPECT_NEAR(bce_loss(p, y).loss, std::log(2.0), 1e-12);
}

TEST(Bce, MatchesLoopOracleAndGradientMatchesFiniteDifferences) {
    auto p = oracle::random_tensor<double>(Shape{10, 1}, 3, 0.01, 0.99);
    Tensor<double> y(Shape{10, 1});
    for (std::size_t i = 0; i < 10; ++i) y[i] = double(i % 3 == 0);
    const auto r = bce_loss(p, y);
    EXPECT_NEAR(r.loss, oracle::bce_direct(oracle::to_double(p), oracle::to_double(y)), 1e-14);
    const auto f = [&]() { return bce_loss(p, y).loss; };
    for (std::size_t i = 0; i < 10; ++i)
        EXPECT_LT(oracle::rel_err(r.grad[i], oracle::central_difference(f, p[i], 1e-7)), 1e-6);
}

TEST(Bce, ClampedPredictionsAreFiniteWithZeroGradient) {
    Tensor<double> p(Shape{2, 1}, std::vector<double>{0.0, 1.0});
    Tensor<double> y(Shape{2, 1}, std::vector<double>{1.0, 0.0});
    const auto r = bce_loss(p, y);
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_NEAR(r.loss, -std::log(1e-7), 1e-6);
    EXPECT_EQ(r.grad[0], 0.0);
    EXPECT_EQ(r.grad[1], 0.0);
}

TEST(Bce, RejectsBadLabelsAndShapes) {
    Tensor<float> p(Shape{2, 1}, 0.5f);
    EXPECT_THROW(bce_loss(p, Tensor<float>(Shape{2, 1}, 0.5f)), DataError);
    EXPECT_THROW(bce_loss(p, Tensor<float>(Shape{3, 1}, 1.0f)), ShapeError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    for (double g : {1.0, -3.0, 250.0, 1e-3}) {
        AdamState<double> s(AdamConfig{0.0005});
        Tensor<double> w(Shape{1}, 2.0);
        std::vector<Tensor<double>*> params{&w};
        std::vector<Tensor<double>> grads{Tensor<double>(Shape{1}, g)};
        adam_step<double>(s, params, grads);
        EXPECT_NEAR(std::fabs(w[0] - 2.0), 0.0005, 0.0005 * 1e-3);
        EXPECT_EQ(w[0] < 2.0, g > 0);
    }
}

TEST(Adam, TwoStepsMatchHandComputedUpdate) {
    const AdamConfig cfg{0.01, 0.9, 0.999, 1e-7};
    AdamState<double> s(cfg);
    Tensor<double> w(Shape{1}, 1.0);
    std::vector<Tensor<double>*> params{&w};
    double m = 0, v = 0, ref = 1.0;
    for (int t = 1; t <= 2; ++t) {
        const double g = t == 1 ? 0.3 : -0.8;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        ref -= 0.01 * mh / (std::sqrt(vh) + 1e-7);
        std::vector<Tensor<double>> grads{Tensor<double>(Shape{1}, g)};
        adam_step<double>(s, params, grads);
        EXPECT_NEAR(w[0], ref, 1e-15);
    }
}

TEST(Adam, ScalarQuadraticConverges) {
    AdamState<double> s(AdamConfig{0.1});
    Tensor<double> w(Shape{1}, 0.0);
    std::vector<Tensor<double>*> params{&w};
    for (int i = 0; i < 100; ++i) {
        std::vector<Tensor<double>> grads{Tensor<double>(Shape{1}, 2.0 * (w[0] - 3.0))};
        adam_step<double>(s, params, grads);
    }
    EXPECT_LT(std::fabs(w[0] - 3.0), 0.1);
}

TEST(Adam, RejectsMismatchedGradients) {
    AdamState<float> s;
    Tensor<float> w(Shape{2});
    std::vector<Tensor<float>*> params{&w};
    std::vector<Tensor<float>> grads{Tensor<float>(Shape{3})};
    EXPECT_THROW(adam_step<float>(s, params, grads), ShapeError);
    std::vector<Tensor<float>> none;
    EXPECT_THROW(adam_step<float>(s, params, none), ShapeError);
}

TEST(Metrics, HandBuiltConfusionMatrix) {
    // (p, label): TP, FN, TN, FP
    Metrics m;
    record_prediction(m, 0.9, 1);
    record_prediction(m, 0.2, 1);
    record_prediction(m, 0.1, 0);
    record_prediction(m, 0.7, 0);
    EXPECT_EQ(m.true_positive(), 1u);
    EXPECT_EQ(m.false_negative(), 1u);
    EXPECT_EQ(m.true_negative(), 1u);
    EXPECT_EQ(m.false_positive(), 1u);
    EXPECT_DOUBLE_EQ(validation_accuracy(m), 50.0);
}

TEST(Metrics, ThresholdIsStrict) {
    EXPECT_FALSE(detects_crack(0.5));
    EXPECT_TRUE(detects_crack(0.5000001));
}

TEST(Metrics, FlippedLabelsComplementAccuracy) {
    cracknet::Rng rng(4);
    Metrics a, b;
    for (int i = 0; i < 101; ++i) {
        const double p = rng.uniform();
        const int label = rng.bernoulli(0.4) ? 1 : 0;
        record_prediction(a, p, label);
        record_prediction(b, p, 1 - label);
    }
    EXPECT_NEAR(validation_accuracy(a) + validation_accuracy(b), 100.0, 1e-12);
}

TEST(Metrics, MergeBySummationAndEmptySetError) {
    Metrics a, b;
    record_prediction(a, 0.9, 1);
    record_prediction(b, 0.1, 0);
    Metrics c = a;
    c += b;
    EXPECT_EQ(c.total(), 2u);
    EXPECT_DOUBLE_EQ(validation_accuracy(c), 100.0);
    EXPECT_THROW(validation_accuracy(Metrics{}), DataError);
}
