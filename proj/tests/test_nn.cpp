#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dtn/nn.hpp"
#include "oracles.hpp"

using namespace dtn;

namespace {

Architecture two_layer(Index in, Index hidden, Index classes, Activation act = Activation::Tanh) {
    const Index h[] = {hidden};
    return make_mlp(in, h, classes, act);
}

NetworkParams zero_params(const Architecture& specs) {
    NetworkParams p;
    for (const auto& s : specs) {
        p.weights.push_back(MatrixXd::Zero(s.output_dim, s.input_dim));
        p.biases.push_back(VectorXd::Zero(s.output_dim));
    }
    return p;
}

/// Random weights and biases; biases are nonzero so their gradients are exercised too.
NetworkParams random_params(const Architecture& specs, std::uint64_t seed) {
    Rng rng(seed);
    NetworkParams p = init_params(specs, rng);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& b : p.biases)
        for (Index i = 0; i < b.size(); ++i) b(i) = u(rng);
    return p;
}

}  // namespace

TEST(Softmax, ZeroLogitsAreUniform) {
    VectorXd p = softmax(VectorXd::Zero(2));
    EXPECT_DOUBLE_EQ(p(0), 0.5);
    EXPECT_DOUBLE_EQ(p(1), 0.5);
}

TEST(Softmax, LogTwoGivesTwoThirds) {
    VectorXd z(2);
    z << std::numbers::ln2, 0.0;
    VectorXd p = softmax(z);
    EXPECT_NEAR(p(0), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(p(1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        VectorXd z = oracle::random_matrix(6, 1, rng, -3, 3);
        VectorXd a = softmax(z);
        VectorXd b = softmax((z.array() + 100.0).matrix());
        for (Index i = 0; i < z.size(); ++i) EXPECT_NEAR(a(i), b(i), 1e-12);
    }
}

TEST(Softmax, HugeLogitsStayNormalized) {
    VectorXd z(4);
    z << 1e4, -1e4, 9999.0, 0.0;
    VectorXd p = softmax(z);
    EXPECT_TRUE(p.allFinite());
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GE(p.minCoeff(), 0.0);

    std::mt19937_64 rng(3);
    MatrixXd zs = oracle::random_matrix(5, 50, rng, -1e4, 1e4);
    MatrixXd ps = softmax_columns(zs);
    for (Index j = 0; j < ps.cols(); ++j) {
        EXPECT_NEAR(ps.col(j).sum(), 1.0, 1e-12);
        EXPECT_GE(ps.col(j).minCoeff(), 0.0);
    }
}

TEST(Softmax, EmptyInputRejected) {
    EXPECT_THROW(softmax(VectorXd(0)), ArgumentError);
}

TEST(Forward, ZeroNetworkGivesUniformPosterior) {
    auto specs = two_layer(3, 5, 4);
    VectorXd x(3);
    x << 0.3, -2.0, 7.0;
    ForwardTrace t = forward(zero_params(specs), specs, x);
    for (Index c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(t.probs(c), 0.25);
}

TEST(Forward, ZeroTanhLayerGivesZeroFeatures) {
    auto specs = two_layer(3, 5, 2);
    ForwardTrace t = forward(zero_params(specs), specs, VectorXd::Constant(3, 4.0));
    ASSERT_EQ(t.hidden.size(), 1u);
    EXPECT_EQ(t.features(), VectorXd::Zero(5));
}

TEST(Forward, MatchesHandRolledOracle) {
    for (Activation act : {Activation::Tanh, Activation::Sigmoid}) {
        auto specs = two_layer(3, 2, 2, act);
        NetworkParams p = random_params(specs, 11);
        std::mt19937_64 rng(12);
        MatrixXd x = oracle::random_matrix(3, 1, rng);
        ForwardTrace t = forward(p, specs, x.col(0));
        auto ref = oracle::naive_forward(p, specs, oracle::column(x, 0));
        for (Index i = 0; i < 2; ++i) {
            EXPECT_NEAR(t.probs(i), ref.probs[std::size_t(i)], 1e-12);
            EXPECT_NEAR(t.features()(i), ref.features[std::size_t(i)], 1e-12);
        }
    }
}

TEST(Forward, BatchAgreesWithPerSample) {
    const Index hidden[] = {6, 4};
    auto specs = make_mlp(5, hidden, 3, Activation::Tanh);
    NetworkParams p = random_params(specs, 5);
    std::mt19937_64 rng(6);
    MatrixXd x = oracle::random_matrix(5, 9, rng);
    BatchTrace bt = forward_batch(p, specs, x);
    for (Index j = 0; j < x.cols(); ++j) {
        auto ref = oracle::naive_forward(p, specs, oracle::column(x, j));
        for (Index c = 0; c < 3; ++c) EXPECT_NEAR(bt.probs(c, j), ref.probs[std::size_t(c)], 1e-12);
        for (Index i = 0; i < 4; ++i) EXPECT_NEAR(bt.features()(i, j), ref.features[std::size_t(i)], 1e-12);
    }
}

TEST(Forward, IsPure) {
    auto specs = two_layer(4, 7, 3);
    NetworkParams p = random_params(specs, 1);
    std::mt19937_64 rng(2);
    MatrixXd x = oracle::random_matrix(4, 16, rng);
    BatchTrace a = forward_batch(p, specs, x);
    BatchTrace b = forward_batch(p, specs, x);
    EXPECT_EQ(a.probs, b.probs);
    EXPECT_EQ(a.features(), b.features());
}

TEST(Forward, DimensionMismatchNamesLayer) {
    auto specs = two_layer(3, 2, 2);
    NetworkParams p = zero_params(specs);
    try {
        forward(p, specs, VectorXd::Zero(4));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos) << e.what();
    }
    p.weights[1] = MatrixXd::Zero(2, 3);
    try {
        forward(p, specs, VectorXd::Zero(3));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
    }
}

TEST(Architecture, RejectsBrokenChains) {
    Architecture broken{{3, 4, Activation::Tanh}, {5, 2, Activation::SoftmaxOutput}};
    EXPECT_THROW(validate(broken), ShapeError);
    Architecture no_softmax{{3, 4, Activation::Tanh}, {4, 2, Activation::Tanh}};
    EXPECT_THROW(validate(no_softmax), ArgumentError);
    Architecture softmax_inside{{3, 4, Activation::SoftmaxOutput}, {4, 2, Activation::SoftmaxOutput}};
    EXPECT_THROW(validate(softmax_inside), ArgumentError);
}

TEST(Init, GlorotRangeAndZeroBias) {
    auto specs = two_layer(30, 20, 10);
    Rng rng(0);
    NetworkParams p = init_params(specs, rng);
    double lim0 = std::sqrt(6.0 / 50.0), lim1 = std::sqrt(6.0 / 30.0);
    EXPECT_LE(p.weights[0].cwiseAbs().maxCoeff(), lim0);
    EXPECT_LE(p.weights[1].cwiseAbs().maxCoeff(), lim1);
    EXPECT_GT(p.weights[0].cwiseAbs().maxCoeff(), 0.8 * lim0);
    EXPECT_EQ(p.biases[0], VectorXd::Zero(20));
    EXPECT_EQ(p.biases[1], VectorXd::Zero(10));
    Rng again(0);
    EXPECT_EQ(init_params(specs, again), p);
}

TEST(Nll, UniformOverTenClasses) {
    MatrixXd p = MatrixXd::Constant(10, 1, 0.1);
    std::vector<MaybeLabel> y{7};
    EXPECT_NEAR(nll(p, y), std::log(10.0), 1e-15);
    EXPECT_NEAR(nll(p, y), 2.302585, 1e-6);
}

TEST(Nll, CertainCorrectIsZero) {
    MatrixXd p = MatrixXd::Zero(3, 1);
    p(1, 0) = 1.0;
    std::vector<MaybeLabel> y{1};
    EXPECT_EQ(nll(p, y), 0.0);
}

TEST(Nll, MatchesTermByTermSum) {
    auto specs = two_layer(4, 5, 3);
    NetworkParams p = random_params(specs, 21);
    std::mt19937_64 rng(22);
    std::vector<ForwardTrace> traces;
    std::vector<int> labels;
    double expected = 0.0;
    for (int i = 0; i < 8; ++i) {
        MatrixXd x = oracle::random_matrix(4, 1, rng, -2, 2);
        traces.push_back(forward(p, specs, x.col(0)));
        labels.push_back(static_cast<int>(rng() % 3));
        expected += -std::log(oracle::naive_forward(p, specs, oracle::column(x, 0)).probs[std::size_t(labels.back())]);
    }
    EXPECT_NEAR(nll(traces, labels), expected, 1e-12);
}

TEST(Nll, ZeroProbabilityIsClamped) {
    MatrixXd p(2, 1);
    p << 1.0, 0.0;
    std::vector<MaybeLabel> y{1};
    double v = nll(p, y);
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, -std::log(kLogFloor), 1e-9);
}

TEST(Nll, LabelOutOfRange) {
    MatrixXd p = MatrixXd::Constant(3, 1, 1.0 / 3);
    std::vector<MaybeLabel> y{3};
    EXPECT_THROW(nll(p, y), ArgumentError);
    std::vector<MaybeLabel> neg{-1};
    EXPECT_THROW(nll(p, neg), ArgumentError);
}

TEST(Nll, UnlabeledSamplesSkipped) {
    MatrixXd p = MatrixXd::Constant(4, 2, 0.25);
    std::vector<MaybeLabel> y{std::nullopt, 2};
    EXPECT_NEAR(nll(p, y), std::log(4.0), 1e-15);
}

TEST(Nll, NonnegativeOnRandomPosteriors) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        MatrixXd p = oracle::random_posteriors(5, 7, rng);
        std::vector<MaybeLabel> y;
        for (int i = 0; i < 7; ++i) y.emplace_back(static_cast<int>(rng() % 5));
        EXPECT_GT(nll(p, y), 0.0);
    }
}

TEST(Backprop, ZeroWeightsReduceToPlainNll) {
    auto specs = two_layer(5, 4, 3);
    NetworkParams p = random_params(specs, 31);
    std::mt19937_64 rng(32);
    MatrixXd x = oracle::random_matrix(5, 6, rng);
    std::vector<MaybeLabel> y{0, 1, 2, 2, 1, 0};
    GradientSet plain = backprop(p, specs, x, y, MatrixXd(), MatrixXd(), 0.0, 0.0);
    GradientSet with_zero = backprop(p, specs, x, y, MatrixXd::Zero(4, 6), MatrixXd::Zero(3, 6), 0.0, 0.0);
    GradientSet ignored = backprop(p, specs, x, y, MatrixXd::Random(4, 6), MatrixXd::Random(3, 6), 0.0, 0.0);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_EQ(plain.weights[k], with_zero.weights[k]);
        EXPECT_EQ(plain.weights[k], ignored.weights[k]);
        EXPECT_EQ(plain.biases[k], with_zero.biases[k]);
    }
    auto f = [&](const NetworkParams& q) {
        return oracle::naive_objective(q, specs, x, y, MatrixXd(5, 0), {}, 0.0, 0.0);
    };
    EXPECT_LE(oracle::max_relative_error(plain, oracle::finite_difference(p, f)), 1e-5);
}

// Full objective on 3 source + 3 target samples, MMD gradients supplied by
// direct substitution into the mean-difference derivative.
TEST(Backprop, FullObjectiveMatchesFiniteDifferences) {
    auto specs = two_layer(5, 4, 3);
    NetworkParams p = random_params(specs, 41);
    std::mt19937_64 rng(42);
    MatrixXd xs = oracle::random_matrix(5, 3, rng);
    MatrixXd xt = oracle::random_matrix(5, 3, rng, 0.0, 2.0);
    std::vector<MaybeLabel> ys{0, 1, 2}, yt{2, std::nullopt, 1};
    const double lambda = 1.0, mu = 1.0;

    MatrixXd x(5, 6);
    x << xs, xt;
    BatchTrace t = forward_batch(p, specs, x);
    auto inject = [](const MatrixXd& m) {
        VectorXd diff = m.leftCols(3).rowwise().mean() - m.rightCols(3).rowwise().mean();
        MatrixXd g(m.rows(), 6);
        for (Index j = 0; j < 3; ++j) g.col(j) = (2.0 / 3.0) * diff;
        for (Index j = 3; j < 6; ++j) g.col(j) = (-2.0 / 3.0) * diff;
        return g;
    };
    std::vector<MaybeLabel> labels{ys[0], ys[1], ys[2], yt[0], yt[1], yt[2]};
    GradientSet g = backprop(p, specs, t, labels, inject(t.features()), inject(t.probs), lambda, mu);
    auto f = [&](const NetworkParams& q) { return oracle::naive_objective(q, specs, xs, ys, xt, yt, lambda, mu); };
    EXPECT_LE(oracle::max_relative_error(g, oracle::finite_difference(p, f, 1e-5)), 1e-5);
}

TEST(Backprop, InjectedGradientOnlyWhenUnlabeled) {
    auto specs = two_layer(3, 4, 3);
    NetworkParams p = random_params(specs, 51);
    std::mt19937_64 rng(52);
    MatrixXd x = oracle::random_matrix(3, 5, rng);
    MatrixXd gh = oracle::random_matrix(4, 5, rng);
    MatrixXd gp = oracle::random_matrix(3, 5, rng);
    std::vector<MaybeLabel> none(5);
    GradientSet g = backprop(p, specs, x, none, gh, gp, 1.0, 1.0);
    // d/dW of sum_j <gh_j, h_j> + <gp_j, p_j> with gh, gp held fixed
    auto f = [&](const NetworkParams& q) {
        double total = 0.0;
        for (Index j = 0; j < 5; ++j) {
            auto t = oracle::naive_forward(q, specs, oracle::column(x, j));
            for (Index i = 0; i < 4; ++i) total += gh(i, j) * t.features[std::size_t(i)];
            for (Index c = 0; c < 3; ++c) total += gp(c, j) * t.probs[std::size_t(c)];
        }
        return total;
    };
    EXPECT_LE(oracle::max_relative_error(g, oracle::finite_difference(p, f)), 1e-5);
}

TEST(Backprop, RandomSmallNetsMatchFiniteDifferences) {
    std::mt19937_64 rng(61);
    for (int trial = 0; trial < 10; ++trial) {
        Index in = 2 + Index(rng() % 4), hid = 2 + Index(rng() % 4), classes = 2 + Index(rng() % 3);
        Activation act = trial % 2 ? Activation::Sigmoid : Activation::Tanh;
        auto specs = two_layer(in, hid, classes, act);
        ASSERT_LE(random_params(specs, 0).num_parameters(), 100);
        NetworkParams p = random_params(specs, 100 + std::uint64_t(trial));
        Index ns = 1 + Index(rng() % 4), nt = 1 + Index(rng() % 4);
        MatrixXd xs = oracle::random_matrix(in, ns, rng), xt = oracle::random_matrix(in, nt, rng, -0.5, 1.5);
        std::vector<MaybeLabel> ys, yt;
        for (Index i = 0; i < ns; ++i) ys.emplace_back(int(rng() % std::uint64_t(classes)));
        for (Index i = 0; i < nt; ++i) yt.emplace_back(int(rng() % std::uint64_t(classes)));
        const double lambda = 0.5 + trial, mu = 2.0;

        MatrixXd x(in, ns + nt);
        x << xs, xt;
        BatchTrace t = forward_batch(p, specs, x);
        auto inject = [&](const MatrixXd& m) {
            VectorXd diff = m.leftCols(ns).rowwise().mean() - m.rightCols(nt).rowwise().mean();
            MatrixXd g(m.rows(), ns + nt);
            for (Index j = 0; j < ns; ++j) g.col(j) = (2.0 / double(ns)) * diff;
            for (Index j = 0; j < nt; ++j) g.col(ns + j) = (-2.0 / double(nt)) * diff;
            return g;
        };
        std::vector<MaybeLabel> labels = ys;
        labels.insert(labels.end(), yt.begin(), yt.end());
        GradientSet g = backprop(p, specs, t, labels, inject(t.features()), inject(t.probs), lambda, mu);
        auto f = [&](const NetworkParams& q) { return oracle::naive_objective(q, specs, xs, ys, xt, yt, lambda, mu); };
        EXPECT_LE(oracle::max_relative_error(g, oracle::finite_difference(p, f)), 1e-5) << "trial " << trial;
    }
}

TEST(Backprop, NonFiniteNamesLayer) {
    auto specs = two_layer(2, 3, 2);
    NetworkParams p = random_params(specs, 71);
    p.weights[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
    std::vector<MaybeLabel> y{0};
    try {
        backprop(p, specs, MatrixXd::Ones(2, 1), y, MatrixXd(), MatrixXd(), 0.0, 0.0);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
    }
}

TEST(Backprop, ShapesMirrorParams) {
    const Index hidden[] = {4, 3};
    auto specs = make_mlp(5, hidden, 2, Activation::Tanh);
    NetworkParams p = random_params(specs, 81);
    std::vector<MaybeLabel> y{1, 0};
    GradientSet g = backprop(p, specs, MatrixXd::Ones(5, 2), y, MatrixXd(), MatrixXd(), 0.0, 0.0);
    ASSERT_EQ(g.weights.size(), p.weights.size());
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
        EXPECT_EQ(g.weights[k].rows(), p.weights[k].rows());
        EXPECT_EQ(g.weights[k].cols(), p.weights[k].cols());
        EXPECT_EQ(g.biases[k].size(), p.biases[k].size());
    }
    EXPECT_THROW(backprop(p, specs, MatrixXd::Ones(5, 2), y, MatrixXd::Zero(2, 2), MatrixXd(), 1.0, 0.0),
                 ShapeError);
}

TEST(Argmax, TiesGoLow) {
    VectorXd v(4);
    v << 0.2, 0.4, 0.4, 0.0;
    EXPECT_EQ(argmax(v), 1);
    EXPECT_EQ(argmax(VectorXd::Constant(3, 1.0 / 3)), 0);
}
