#include <gtest/gtest.h>

#include "test_support.hpp"
#include "w2sg/gradient.hpp"

namespace w2sg {
namespace {

using testing::random_probvec;

ProbVec pv(double a, double b) { return make_probvec({a, b}, FloorConfig{0.0}); }

TEST(Kl, Examples) {
    EXPECT_EQ(kl(pv(0.5, 0.5), pv(0.5, 0.5)), 0.0);
    EXPECT_NEAR(kl(pv(0.5, 0.5), pv(0.25, 0.75)), 0.143841036225890464, 1e-12);
    EXPECT_NEAR(kl(pv(0.25, 0.75), pv(0.5, 0.5)), 0.130812035941136959, 1e-12);
    EXPECT_THROW(kl(pv(0.5, 0.5), ProbVec::uniform(3)), DimensionError);
}

TEST(Ce, Examples) {
    EXPECT_NEAR(ce(pv(0.5, 0.5), pv(0.5, 0.5)), std::log(2.0), 1e-12);
    EXPECT_NEAR(ce(pv(0.5, 0.5), pv(0.25, 0.75)), 0.836988216785835773, 1e-12);
}

TEST(Ce, EntropyIdentity) {
    Rng rng(11);
    for (int t = 0; t < 1000; ++t) {
        const long k = 2 + t % 5;
        const ProbVec g = random_probvec(k, rng), h = random_probvec(k, rng);
        EXPECT_LE(std::abs(ce(g, h) - kl(g, h) - entropy(g)), 1e-12);
    }
}

TEST(PointLoss, NonnegativityAndIndiscernibles) {
    Rng rng(12);
    for (int t = 0; t < 1000; ++t) {
        const long k = 2 + t % 5;
        const ProbVec g = random_probvec(k, rng), h = random_probvec(k, rng);
        for (LossKind kind : kAllLossKinds) EXPECT_GE(point_loss(kind, g, h), -1e-12);
        EXPECT_LE(kl(g, g), 1e-12);
        EXPECT_LE(squared_loss(g, g), 1e-12);
        EXPECT_NEAR(ce(g, g), entropy(g), 1e-12);
    }
}

TEST(PointLoss, ReverseSwapsArguments) {
    const ProbVec g = pv(0.5, 0.5), h = pv(0.25, 0.75);
    EXPECT_EQ(point_loss(LossKind::ReverseKL, g, h), kl(h, g));
    EXPECT_EQ(point_loss(LossKind::ReverseCE, g, h), ce(h, g));
    EXPECT_GT(std::abs(kl(g, h) - kl(h, g)), 0.01);
}

TEST(Bregman, Examples) {
    const ProbVec a = pv(0.5, 0.5), b = pv(0.25, 0.75);
    EXPECT_NEAR(bregman({Generator::NegativeEntropy}, a, b), 0.143841036225890464, 1e-12);
    EXPECT_NEAR(bregman({Generator::SquaredNorm}, a, b), 0.125, 1e-15);
    EXPECT_NEAR(bregman({Generator::NegativeEntropy}, a, a), 0.0, 1e-15);
    EXPECT_NEAR(bregman({Generator::SquaredNorm}, a, a), 0.0, 1e-15);
    EXPECT_THROW(bregman({static_cast<Generator>(7)}, a, b), ConfigError);
}

TEST(Bregman, RecoversKlAndSquaredDistance) {
    Rng rng(13);
    for (int t = 0; t < 1000; ++t) {
        const long k = 2 + t % 5;
        const ProbVec a = random_probvec(k, rng), b = random_probvec(k, rng);
        EXPECT_LE(std::abs(bregman({Generator::NegativeEntropy}, a, b) - kl(a, b)), 1e-10);
        EXPECT_LE(std::abs(bregman({Generator::SquaredNorm}, a, b) - (a.values() - b.values()).squaredNorm()), 1e-12);
    }
}

TEST(DatasetEval, Validation) {
    EXPECT_THROW(DatasetEval({0.5, 0.6}), InvalidWeightsError);
    EXPECT_THROW(DatasetEval({1.5, -0.5}), InvalidWeightsError);
    DatasetEval d({0.5, 0.5});
    EXPECT_THROW(d.set(Role::Truth, {pv(0.5, 0.5)}), DimensionError);
    EXPECT_THROW(population_loss(LossKind::ForwardKL, Role::Truth, Role::Weak, d), MissingRoleError);
}

TEST(PopulationLoss, Examples) {
    const ProbVec g = pv(0.5, 0.5), h = pv(0.25, 0.75), u = pv(0.9, 0.1);
    DatasetEval one({1.0});
    one.set(Role::Truth, {g}).set(Role::Weak, {h});
    EXPECT_EQ(population_loss(LossKind::ForwardKL, Role::Truth, Role::Weak, one), kl(g, h));
    EXPECT_EQ(population_loss(LossKind::ReverseKL, Role::Truth, Role::Weak, one), kl(h, g));

    DatasetEval two({0.5, 0.5});
    two.set(Role::Truth, {g, u}).set(Role::Weak, {h, h});
    EXPECT_NEAR(population_loss(LossKind::ForwardKL, Role::Truth, Role::Weak, two), 0.5 * (kl(g, h) + kl(u, h)), 1e-15);
}

TEST(PopulationLoss, ForwardKlAndCeShareArgmin) {
    Rng rng(14);
    for (int t = 0; t < 100; ++t) {
        DatasetEval d({0.2, 0.3, 0.5});
        std::vector<ProbVec> sup;
        for (int i = 0; i < 3; ++i) sup.push_back(random_probvec(3, rng));
        d.set(Role::Weak, sup);
        std::vector<std::vector<ProbVec>> grid(3);
        for (auto& cand : grid)
            for (int i = 0; i < 3; ++i) cand.push_back(random_probvec(3, rng));
        int best_kl = -1, best_ce = -1;
        double v_kl = 1e300, v_ce = 1e300;
        for (int c = 0; c < 3; ++c) {
            d.set(Role::Student, grid[static_cast<std::size_t>(c)]);
            const double a = population_loss(LossKind::ForwardKL, Role::Weak, Role::Student, d);
            const double b = population_loss(LossKind::ForwardCE, Role::Weak, Role::Student, d);
            if (a < v_kl) {
                v_kl = a;
                best_kl = c;
            }
            if (b < v_ce) {
                v_ce = b;
                best_ce = c;
            }
        }
        EXPECT_EQ(best_kl, best_ce);
    }
}

TEST(ExpectationInnerProduct, ZeroWhenNumeratorEqualsDenominator) {
    Rng rng(15);
    DatasetEval d({0.25, 0.75});
    d.set(Role::Truth, {random_probvec(3, rng), random_probvec(3, rng)});
    d.set(Role::Weak, {random_probvec(3, rng), random_probvec(3, rng)});
    EXPECT_EQ(expectation_inner_product(Role::Truth, Role::Weak, Role::Weak, d), 0.0);
    EXPECT_THROW(expectation_inner_product(Role::Truth, Role::Student, Role::Weak, d), MissingRoleError);
}

TEST(ExpectationInnerProduct, MatchesDoubleSummation) {
    Rng rng(16);
    const long n = 7, k = 4;
    std::vector<double> w(n);
    double total = 0.0;
    for (auto& x : w) total += (x = std::uniform_real_distribution<double>(0.1, 1.0)(rng));
    for (auto& x : w) x /= total;
    w.back() += 1.0 - pairwise_sum(w);
    std::vector<ProbVec> f, a, b;
    for (long i = 0; i < n; ++i) {
        f.push_back(random_probvec(k, rng));
        a.push_back(random_probvec(k, rng));
        b.push_back(random_probvec(k, rng));
    }
    DatasetEval d(w);
    d.set(Role::Truth, f).set(Role::Student, a).set(Role::Weak, b);

    long double oracle = 0.0L;
    for (long i = 0; i < n; ++i)
        for (long c = 0; c < k; ++c)
            oracle += static_cast<long double>(w[static_cast<std::size_t>(i)]) * f[static_cast<std::size_t>(i)][c] *
                      std::log(static_cast<long double>(a[static_cast<std::size_t>(i)][c]) /
                               static_cast<long double>(b[static_cast<std::size_t>(i)][c]));
    EXPECT_NEAR(expectation_inner_product(Role::Truth, Role::Student, Role::Weak, d), static_cast<double>(oracle),
                1e-14);
}

TEST(ExpectationInnerProduct, DecompositionIdentity) {
    Rng rng(17);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const long k = 2 + t % 4, n = 1 + t % 9;
        DatasetEval d = DatasetEval::uniform(static_cast<std::size_t>(n));
        std::vector<ProbVec> s, w, sw;
        for (long i = 0; i < n; ++i) {
            s.push_back(random_probvec(k, rng));
            w.push_back(random_probvec(k, rng));
            sw.push_back(random_probvec(k, rng));
        }
        d.set(Role::Truth, s).set(Role::Weak, w).set(Role::Student, sw);
        const double lhs = population_kl(Role::Truth, Role::Student, d);
        const double rhs = population_kl(Role::Truth, Role::Weak, d) -
                           expectation_inner_product(Role::Truth, Role::Student, Role::Weak, d);
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    EXPECT_LE(worst, 1e-12);
}

// ---------------------------------------------------------------------------
// Analytic gradients against central finite differences.

template <Head H>
double max_relative_fd_error(LossKind kind, const H& head, const FeatureSet& f, const Vector& w, const Matrix& sup) {
    const LossAndGrad lg = loss_gradient(kind, head, f, w, sup);
    const Vector p = head.params();
    constexpr double h = 1e-5;
    Vector fd(p.size());
    for (long i = 0; i < p.size(); ++i) {
        Vector up = p, dn = p;
        up[i] += h;
        dn[i] -= h;
        fd[i] =
            (loss_value(kind, head.with_params(up), f, w, sup) - loss_value(kind, head.with_params(dn), f, w, sup)) /
            (2.0 * h);
    }
    return (lg.grad - fd).norm() / std::max(fd.norm(), 1e-8);
}

Matrix random_supervisor(long k, long n, Rng& rng) {
    Matrix s(k, n);
    for (long j = 0; j < n; ++j) s.col(j) = random_probvec(k, rng).values();
    return s;
}

Matrix random_features(long d_s, long n, Rng& rng) {
    Matrix z(d_s, n);
    for (long j = 0; j < n; ++j) z.col(j) = random_probvec(d_s, rng).values();
    return z;
}

TEST(LossGradient, FiniteDifferencesStochasticHead) {
    Rng rng(18);
    for (LossKind kind : kAllLossKinds) {
        for (int t = 0; t < 20; ++t) {
            const long k = 2 + t % 4, d_s = 5, n = 6;
            const FeatureSet f = FeatureSet::points(random_features(d_s, n, rng));
            const Vector w = Vector::Constant(n, 1.0 / n);
            const StochasticHead head = StochasticHead::random(k, d_s, 1e-3, rng, 2.0);
            EXPECT_LE(max_relative_fd_error(kind, head, f, w, random_supervisor(k, n, rng)), 1e-5) << to_string(kind);
        }
    }
}

TEST(LossGradient, FiniteDifferencesLogitHead) {
    Rng rng(19);
    for (LossKind kind : kAllLossKinds) {
        for (int t = 0; t < 20; ++t) {
            const long k = 2 + t % 4, d_s = 5, n = 6;
            const FeatureSet f = FeatureSet::points(random_features(d_s, n, rng));
            const Vector w = Vector::Constant(n, 1.0 / n);
            const LogitHead head = LogitHead::random(k, d_s, 1e-3, rng, 1.0);
            EXPECT_LE(max_relative_fd_error(kind, head, f, w, random_supervisor(k, n, rng)), 1e-5) << to_string(kind);
        }
    }
}

TEST(LossGradient, FiniteDifferencesPairwise) {
    Rng rng(20);
    for (LossKind kind : kAllLossKinds) {
        for (int t = 0; t < 10; ++t) {
            const long d_s = 5, n = 6;
            const FeatureSet f = FeatureSet::pairs(random_features(d_s, n, rng), random_features(d_s, n, rng));
            const Vector w = Vector::Constant(n, 1.0 / n);
            const Matrix sup = random_supervisor(2, n, rng);
            EXPECT_LE(max_relative_fd_error(kind, LogitHead::random(2, d_s, 1e-3, rng, 1.0), f, w, sup), 1e-5);
            EXPECT_LE(max_relative_fd_error(kind, StochasticHead::random(2, d_s, 1e-3, rng, 2.0), f, w, sup), 1e-5);
        }
    }
}

TEST(LossGradient, SquaredStochasticClosedForm) {
    Rng rng(21);
    const long k = 3, d_s = 4, n = 5;
    const Matrix z = random_features(d_s, n, rng);
    const Vector w = Vector::Constant(n, 0.2);
    const Matrix sup = random_supervisor(k, n, rng);
    const StochasticHead head = StochasticHead::random(k, d_s, 1e-3, rng);
    const LossAndGrad lg = loss_gradient(LossKind::Squared, head, FeatureSet::points(z), w, sup);
    // 2 E[(M z - g) z^T]
    const Matrix expected = 2.0 * (head.matrix() * z - sup) * w.asDiagonal() * z.transpose();
    EXPECT_LE((lg.grad - Eigen::Map<const Vector>(expected.data(), expected.size())).norm(), 1e-14);
}

TEST(LossGradient, VanishesAtInteriorReverseKlMinimum) {
    Rng rng(22);
    const long k = 3, d_s = 4, n = 8;
    const Matrix z = random_features(d_s, n, rng);
    const StochasticHead truth = StochasticHead::random(k, d_s, 1e-3, rng, 3.0);
    const Matrix sup = truth.forward(z);
    const LossAndGrad lg =
        loss_gradient(LossKind::ReverseKL, truth, FeatureSet::points(z), Vector::Constant(n, 1.0 / n), sup);
    // d/dM KL(Mz || g) at Mz = g is E[1 z^T]; its projection onto the tangent space is zero.
    const Matrix g = Eigen::Map<const Matrix>(lg.grad.data(), k, d_s);
    const Matrix centered = g.rowwise() - g.colwise().mean();
    EXPECT_LE(centered.norm(), 1e-8);
    EXPECT_NEAR(lg.value, 0.0, 1e-15);
}

TEST(LossGradient, NonFiniteInputIsReported) {
    Matrix sup(2, 1);
    sup << 0.0, 1.0;  // violates the floor: reverse KL gradient is -inf
    const FeatureSet f = FeatureSet::points(Matrix::Constant(2, 1, 0.5));
    EXPECT_THROW(loss_gradient(LossKind::ReverseKL, StochasticHead::uniform(2, 2, 1e-3), f, Vector::Ones(1), sup),
                 NumericError);
}

}  // namespace
}  // namespace w2sg
