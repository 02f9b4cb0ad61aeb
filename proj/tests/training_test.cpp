#include <gtest/gtest.h>

#include "test_support.hpp"
#include "w2sg/datagen.hpp"

namespace w2sg {
namespace {

struct Realizable {
    FeatureSet features;
    StochasticHead truth;
    Matrix supervisor;
    Vector weights;
};

Realizable realizable(std::uint64_t seed, long k = 3, long d_s = 5, long n = 60) {
    const auto rep = make_strong_representation(8, d_s, seed, {}, 2.0);
    Rng rng(seed + 100);
    Realizable r;
    r.features = FeatureSet::points(rep.features(detail::gaussian_matrix(8, n, 1.0, rng)));
    r.truth = make_realizable_truth(rep, k, seed + 1, 0.5);
    r.supervisor = r.truth.forward(r.features.primary);
    r.weights = uniform_weights(n);
    return r;
}

double population(LossKind kind, const AnyHead& head, const Realizable& r) {
    return output_loss(kind, r.supervisor, head_outputs(head, r.features), r.weights).value;
}

TEST(FitHead, InitializedAtTruthNeedsNoSteps) {
    const Realizable r = realizable(1);
    for (LossKind kind : {LossKind::ReverseKL, LossKind::ForwardKL, LossKind::Squared}) {
        TrainConfig cfg;
        cfg.grad_tolerance = 1e-6;
        const FitResult fit =
            fit_head(kind, r.supervisor, r.features, r.weights, HeadClass::Stochastic, cfg, {}, AnyHead(r.truth));
        EXPECT_EQ(fit.steps_taken, 0) << to_string(kind);
        EXPECT_LE(std::abs(fit.final_loss), 1e-12) << to_string(kind);
    }
}

TEST(FitHead, RealizableReverseKlFromRandomInit) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Realizable r = realizable(seed + 10);
        TrainConfig cfg;
        cfg.seed = seed;
        const FitResult fit =
            fit_head(LossKind::ReverseKL, r.supervisor, r.features, r.weights, HeadClass::Stochastic, cfg);
        EXPECT_LE(fit.final_loss, 1e-6) << "seed " << seed;
        EXPECT_NEAR(population(LossKind::ReverseKL, fit.head, r), fit.final_loss, 1e-15);
    }
}

TEST(FitHead, MonotoneDescentAndFeasibility) {
    const Realizable r = realizable(20);
    // A supervisor outside the class, so the fit has real work to do.
    Rng rng(21);
    Matrix sup(3, r.features.size());
    for (long j = 0; j < sup.cols(); ++j) sup.col(j) = testing::random_probvec(3, rng, 1e-3).values();
    for (LossKind kind : {LossKind::ReverseKL, LossKind::Squared, LossKind::ForwardKL}) {
        std::vector<double> trace;
        TrainConfig cfg;
        cfg.max_steps = 300;
        cfg.observer = [&](int, double v) { trace.push_back(v); };
        const FitResult fit = fit_head(kind, sup, r.features, r.weights, HeadClass::Stochastic, cfg);
        ASSERT_FALSE(trace.empty());
        for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-12) << to_string(kind);
        EXPECT_NO_THROW(StochasticHead::validate(std::get<StochasticHead>(fit.head).matrix(), 1e-3));
    }
}

TEST(FitHead, EveryIterateIsFeasible) {
    const Realizable r = realizable(22);
    TrainConfig cfg;
    cfg.max_steps = 50;
    for (int steps = 1; steps <= 50; steps += 7) {
        cfg.max_steps = steps;
        const FitResult fit =
            fit_head(LossKind::ReverseKL, r.supervisor, r.features, r.weights, HeadClass::Stochastic, cfg);
        EXPECT_NO_THROW(StochasticHead::validate(std::get<StochasticHead>(fit.head).matrix(), 1e-3));
    }
}

TEST(FitHead, Deterministic) {
    const Realizable r = realizable(23);
    for (HeadClass cls : {HeadClass::Stochastic, HeadClass::Logit}) {
        TrainConfig cfg = TrainConfig::defaults_for(cls);
        cfg.max_steps = 200;
        cfg.seed = 5;
        const FitResult a = fit_head(LossKind::ReverseCE, r.supervisor, r.features, r.weights, cls, cfg);
        const FitResult b = fit_head(LossKind::ReverseCE, r.supervisor, r.features, r.weights, cls, cfg);
        EXPECT_EQ(a.final_loss, b.final_loss);
        EXPECT_EQ(a.steps_taken, b.steps_taken);
        EXPECT_EQ(std::visit([](const auto& h) { return Vector(h.params()); }, a.head),
                  std::visit([](const auto& h) { return Vector(h.params()); }, b.head));
    }
}

TEST(FitHead, OptimalityCertificate) {
    Rng rng(24);
    const Realizable r = realizable(24);
    Matrix sup(3, r.features.size());
    for (long j = 0; j < sup.cols(); ++j) sup.col(j) = testing::random_probvec(3, rng, 1e-3).values();
    for (LossKind kind : {LossKind::ReverseKL, LossKind::Squared}) {
        TrainConfig cfg;
        cfg.grad_tolerance = 1e-9;
        const FitResult fit = fit_head(kind, sup, r.features, r.weights, HeadClass::Stochastic, cfg);
        ASSERT_TRUE(fit.converged) << to_string(kind);
        EXPECT_LE(fit.final_grad_norm, cfg.grad_tolerance);
        TrainConfig longer = cfg;
        longer.max_steps *= 10;
        longer.grad_tolerance *= 1e-2;
        const FitResult ref = fit_head(kind, sup, r.features, r.weights, HeadClass::Stochastic, longer, {}, fit.head);
        EXPECT_LT(fit.final_loss - ref.final_loss, 1e-8) << to_string(kind);
        // No random feasible head does better.
        for (int t = 0; t < 50; ++t) {
            const AnyHead other = StochasticHead::random(3, 5, 1e-3, rng);
            EXPECT_GE(population(kind, other, Realizable{r.features, r.truth, sup, r.weights}), fit.final_loss);
        }
    }
}

TEST(FitHead, LogitFitsReduceLoss) {
    const Realizable r = realizable(25);
    for (LossKind kind : kAllLossKinds) {
        TrainConfig cfg = TrainConfig::defaults_for(HeadClass::Logit);
        cfg.learning_rate = 1.0;
        cfg.max_steps = 500;
        const FitResult fit = fit_head(kind, r.supervisor, r.features, r.weights, HeadClass::Logit, cfg);
        const double start = population(kind, LogitHead::zeros(3, 5, 1e-3), r);
        EXPECT_LT(fit.final_loss, start) << to_string(kind);
        EXPECT_NEAR(population(kind, fit.head, r), fit.final_loss, 1e-13);
    }
}

TEST(FitHead, HugeStepReturnsTheBestIterate) {
    const Realizable r = realizable(26);
    TrainConfig cfg = TrainConfig::defaults_for(HeadClass::Logit);
    cfg.learning_rate = 1e4;
    cfg.max_steps = 3000;
    const FitResult fit = fit_head(LossKind::ForwardCE, r.supervisor, r.features, r.weights, HeadClass::Logit, cfg);
    EXPECT_TRUE(std::isfinite(fit.final_loss));
    EXPECT_LE(fit.final_loss, population(LossKind::ForwardCE, LogitHead::zeros(3, 5, 1e-3), r));
}

TEST(GradientDescent, PersistentIncreaseExhaustsHalvings) {
    // The loss rises with every evaluation regardless of the step size.
    int calls = 0;
    const detail::Objective<LogitHead> rising = [&](const LogitHead& h) {
        return LossAndGrad{static_cast<double>(++calls), Vector::Ones(h.params().size())};
    };
    TrainConfig cfg;
    cfg.max_steps = 100000;
    EXPECT_THROW(detail::gradient_descent(LogitHead::zeros(2, 3, 1e-3), rising, cfg), StepSizeError);
    EXPECT_GT(calls, kDivergenceWindow * kMaxHalvings);
}

TEST(FitHead, Errors) {
    const Realizable r = realizable(27);
    TrainConfig cfg;
    EXPECT_THROW(fit_head(LossKind::ReverseKL, r.supervisor, r.features, Vector::Constant(r.features.size(), 0.5),
                          HeadClass::Stochastic, cfg),
                 InvalidWeightsError);
    EXPECT_THROW(
        fit_head(LossKind::ReverseKL, r.supervisor.leftCols(3), r.features, r.weights, HeadClass::Stochastic, cfg),
        DimensionError);
    Matrix zero = r.supervisor;
    zero(0, 0) = 0.0;
    EXPECT_THROW(fit_head(LossKind::ReverseKL, zero, r.features, r.weights, HeadClass::Stochastic, cfg), NumericError);
    cfg.learning_rate = 0.0;
    EXPECT_THROW(fit_head(LossKind::ReverseKL, r.supervisor, r.features, r.weights, HeadClass::Stochastic, cfg),
                 ConfigError);
}

TEST(FitHead, TimeLimitAborts) {
    const Realizable r = realizable(28, 3, 5, 2000);
    TrainConfig cfg = TrainConfig::defaults_for(HeadClass::Logit);
    cfg.max_steps = 100000000;
    cfg.grad_tolerance = 1e-300;
    cfg.time_limit_seconds = 0.05;
    EXPECT_THROW(fit_head(LossKind::ForwardCE, r.supervisor, r.features, r.weights, HeadClass::Logit, cfg),
                 TimeLimitError);
}

double mean_entropy_of(const Matrix& q) {
    double s = 0.0;
    for (long j = 0; j < q.cols(); ++j) s += detail::entropy(q.col(j));
    return s / static_cast<double>(q.cols());
}

TEST(ModeSeeking, ReverseKlConcentratesOnTheDominantMode) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const BimodalFixture f = make_bimodal_fixture(seed);
        TrainConfig cfg;
        cfg.seed = seed;
        const FitResult fwd =
            fit_head(LossKind::ForwardKL, f.supervisor, f.features, f.weights, HeadClass::Stochastic, cfg);
        const FitResult rev =
            fit_head(LossKind::ReverseKL, f.supervisor, f.features, f.weights, HeadClass::Stochastic, cfg);
        const Matrix qf = head_outputs(fwd.head, f.features);
        const Matrix qr = head_outputs(rev.head, f.features);
        EXPECT_LT(mean_entropy_of(qr), mean_entropy_of(qf)) << "seed " << seed;
        for (long j = 0; j < qr.cols(); ++j) {
            long arg = 0;
            qr.col(j).maxCoeff(&arg);
            EXPECT_EQ(arg, f.dominant[static_cast<std::size_t>(j)]) << "seed " << seed;
            // Forward KL covers both modes: the minor class keeps close to its 0.3 share.
            EXPECT_GT(qf(f.minor[static_cast<std::size_t>(j)], j), 0.25);
            EXPECT_LT(qr(f.minor[static_cast<std::size_t>(j)], j), 0.1);
        }
    }
}

TEST(Harden, ThresholdAndFloor) {
    Matrix q(2, 3);
    q << 0.6, 0.5, 0.1, 0.4, 0.5, 0.9;
    const Matrix h = harden(q, 0.5, 1e-3);
    EXPECT_DOUBLE_EQ(h(1, 0), 1e-3);
    EXPECT_DOUBLE_EQ(h(1, 1), 1e-3);  // strict threshold
    EXPECT_DOUBLE_EQ(h(1, 2), 1.0 - 1e-3);
    EXPECT_DOUBLE_EQ(h(0, 2), 1e-3);
}

struct PairFixture {
    FeatureSet features;
    Matrix supervisor;
    Vector weights;
};

PairFixture pair_fixture(std::uint64_t seed) {
    TaskSpec spec;
    spec.n_truth = spec.n_weaklabel = spec.n_test = 60;
    spec.seed = seed;
    const Task task = generate_task(spec);
    const Model probe{task.strong, LogitHead::zeros(2, spec.d_s, task.gamma)};
    return {probe.features(task.weak_set.inputs), task.weak_set.truth_labels, uniform_weights(60)};
}

TEST(FitConfidence, AlphaZeroMatchesFitHead) {
    const PairFixture p = pair_fixture(30);
    for (HeadClass cls : {HeadClass::Logit, HeadClass::Stochastic}) {
        for (LossKind base : {LossKind::ForwardCE, LossKind::ReverseCE}) {
            TrainConfig cfg = TrainConfig::defaults_for(cls);
            cfg.max_steps = 100;
            cfg.seed = 3;
            const FitResult a = fit_head(base, p.supervisor, p.features, p.weights, cls, cfg);
            const FitResult b = fit_confidence(base, p.supervisor, p.features, p.weights, cls, cfg, {0.0, 0.5});
            EXPECT_EQ(a.final_loss, b.final_loss);
            EXPECT_EQ(a.steps_taken, b.steps_taken);
        }
    }
}

TEST(FitConfidence, AlphaOneIgnoresTheSupervisor) {
    const PairFixture p = pair_fixture(31);
    TrainConfig cfg = TrainConfig::defaults_for(HeadClass::Logit);
    cfg.learning_rate = 1.0;
    cfg.max_steps = 200;
    const Matrix flipped = p.supervisor.colwise().reverse();
    const FitResult a =
        fit_confidence(LossKind::ForwardCE, p.supervisor, p.features, p.weights, HeadClass::Logit, cfg, {1.0, 0.5});
    const FitResult b =
        fit_confidence(LossKind::ForwardCE, flipped, p.features, p.weights, HeadClass::Logit, cfg, {1.0, 0.5});
    EXPECT_EQ(a.final_loss, b.final_loss);
    // The head grows more confident in its own hardened predictions.
    const Matrix q = head_outputs(a.head, p.features);
    const Matrix q0 = head_outputs(AnyHead(LogitHead::random(2, 16, 1e-3, *std::make_unique<Rng>(0))), p.features);
    EXPECT_LT(mean_entropy_of(q), mean_entropy_of(q0));
}

TEST(FitConfidence, Errors) {
    const PairFixture p = pair_fixture(32);
    TrainConfig cfg;
    EXPECT_THROW(fit_confidence(LossKind::ReverseKL, p.supervisor, p.features, p.weights, HeadClass::Logit, cfg, {}),
                 UnsupportedModeError);
    const Realizable r = realizable(33);
    EXPECT_THROW(fit_confidence(LossKind::ForwardCE, r.supervisor, r.features, r.weights, HeadClass::Logit, cfg, {}),
                 UnsupportedModeError);
    EXPECT_THROW(
        fit_confidence(LossKind::ForwardCE, p.supervisor, p.features, p.weights, HeadClass::Logit, cfg, {1.5, 0.5}),
        ConfigError);
    EXPECT_THROW(
        fit_confidence(LossKind::ForwardCE, p.supervisor, p.features, p.weights, HeadClass::Logit, cfg, {0.2, 1.0}),
        ConfigError);
}

TEST(FitEmpirical, FullSupportMatchesPopulationFit) {
    const Realizable r = realizable(40, 3, 5, 8);
    TrainConfig cfg;
    cfg.grad_tolerance = 1e-10;
    const FitResult pop =
        fit_head(LossKind::ReverseKL, r.supervisor, r.features, r.weights, HeadClass::Stochastic, cfg);
    // A sampler that walks the support once gives exact weights.
    auto counter = std::make_shared<long>(0);
    const Sampler walk = [counter](Rng&) { return (*counter)++ % 8; };
    const FitResult emp =
        fit_empirical(LossKind::ReverseKL, 8, walk, r.features, r.supervisor, HeadClass::Stochastic, cfg);
    EXPECT_NEAR(emp.final_loss, pop.final_loss, 1e-9);
}

TEST(FitEmpirical, SinglePointIsMatched) {
    const Realizable r = realizable(41);
    TrainConfig cfg;
    const FitResult fit = fit_empirical(LossKind::ReverseKL, 1, uniform_sampler(r.features.size()), r.features,
                                        r.supervisor, HeadClass::Stochastic, cfg);
    EXPECT_LE(fit.final_loss, 1e-8);
    EXPECT_THROW(
        fit_empirical(LossKind::ReverseKL, 0, uniform_sampler(5), r.features, r.supervisor, HeadClass::Stochastic, cfg),
        ConfigError);
}

TEST(FitEmpirical, SampleIsSeeded) {
    const Realizable r = realizable(42);
    const auto a = draw_sample(30, uniform_sampler(r.features.size()), r.features, r.supervisor, 9);
    const auto b = draw_sample(30, uniform_sampler(r.features.size()), r.features, r.supervisor, 9);
    const auto c = draw_sample(30, uniform_sampler(r.features.size()), r.features, r.supervisor, 10);
    EXPECT_EQ(a.indices, b.indices);
    EXPECT_NE(a.indices, c.indices);
}

}  // namespace
}  // namespace w2sg
