#include <gtest/gtest.h>

#include "test_support.hpp"
#include "w2sg/divergences.hpp"

namespace w2sg {
namespace {

using testing::random_probvec;
using testing::random_vector;

TEST(MakeProbVec, Examples) {
    const ProbVec a = make_probvec({1.0, 1.0});
    EXPECT_DOUBLE_EQ(a[0], 0.5);
    EXPECT_DOUBLE_EQ(a[1], 0.5);

    const ProbVec b = make_probvec({1.0, 0.0});
    EXPECT_NEAR(b[0], 0.999, 1e-15);
    EXPECT_NEAR(b[1], 0.001, 1e-15);

    const ProbVec c = make_probvec({2.0, 1.0, 1.0}, FloorConfig{0.0});
    EXPECT_DOUBLE_EQ(c[0], 0.5);
    EXPECT_DOUBLE_EQ(c[1], 0.25);
    EXPECT_DOUBLE_EQ(c[2], 0.25);
}

TEST(MakeProbVec, Errors) {
    EXPECT_THROW(make_probvec({0.0, 0.0}), InvalidWeightsError);
    EXPECT_THROW(make_probvec({1.0, -0.5}), InvalidWeightsError);
    EXPECT_THROW(make_probvec({1.0, 1.0}, FloorConfig{0.5}), ConfigError);
    EXPECT_THROW(make_probvec({1.0}), ConfigError);
}

TEST(ProbVec, InvariantsOnRandomInputs) {
    Rng rng(1);
    for (int t = 0; t < 1000; ++t) {
        const long k = 2 + t % 6;
        const ProbVec p = random_probvec(k, rng);
        EXPECT_LE(std::abs(p.values().sum() - 1.0), 1e-12);
        EXPECT_GE(p.values().minCoeff(), 1e-3);
    }
}

TEST(Entropy, Examples) {
    EXPECT_NEAR(entropy(ProbVec::uniform(4)), std::log(4.0), 1e-12);
    EXPECT_NEAR(entropy(make_probvec({1.0, 0.0})), 0.00790725511223208702, 1e-12);
    EXPECT_NEAR(entropy(make_probvec({0.25, 0.75}, FloorConfig{0.0})), 0.562335144618808350, 1e-12);
}

TEST(Entropy, Range) {
    Rng rng(2);
    for (int t = 0; t < 500; ++t) {
        const long k = 2 + t % 5;
        const double h = entropy(random_probvec(k, rng));
        EXPECT_GE(h, 0.0);
        EXPECT_LE(h, std::log(static_cast<double>(k)) + 1e-12);
    }
}

TEST(TvDistance, Examples) {
    const ProbVec p = make_probvec({1.0, 0.0});
    const ProbVec q = make_probvec({0.0, 1.0});
    EXPECT_DOUBLE_EQ(tv_distance(p, p), 0.0);
    EXPECT_NEAR(tv_distance(p, q), 0.998, 1e-15);
    EXPECT_THROW(tv_distance(p, ProbVec::uniform(3)), DimensionError);
}

TEST(TvDistance, MetricOnSampledTriples) {
    Rng rng(3);
    for (int t = 0; t < 1000; ++t) {
        const long k = 2 + t % 4;
        const ProbVec a = random_probvec(k, rng), b = random_probvec(k, rng), c = random_probvec(k, rng);
        EXPECT_EQ(tv_distance(a, b), tv_distance(b, a));
        EXPECT_LE(tv_distance(a, c), tv_distance(a, b) + tv_distance(b, c) + 1e-12);
    }
}

TEST(TvDistance, Pinsker) {
    Rng rng(4);
    for (int t = 0; t < 1000; ++t) {
        const long k = 2 + t % 4;
        const ProbVec p = random_probvec(k, rng), q = random_probvec(k, rng);
        const double tv = tv_distance(p, q);
        EXPECT_LE(tv * tv, 0.5 * kl(p, q) + 1e-12);
    }
}

TEST(ProjectToSimplex, Examples) {
    Vector v(2);
    v << 0.4, 0.8;
    const ProbVec p = project_to_simplex(v, FloorConfig{0.0});
    EXPECT_NEAR(p[0], 0.3, 1e-15);
    EXPECT_NEAR(p[1], 0.7, 1e-15);

    v << 2.0, -1.0;
    const ProbVec q = project_to_simplex(v);
    EXPECT_NEAR(q[0], 0.999, 1e-15);
    EXPECT_NEAR(q[1], 0.001, 1e-15);

    v << 1.0, std::nan("");
    EXPECT_THROW(project_to_simplex(v), NumericError);
}

TEST(ProjectToSimplex, FixedPointOnTheSet) {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        const ProbVec p = random_probvec(2 + t % 5, rng);
        const ProbVec q = project_to_simplex(p.values());
        EXPECT_LE((p.values() - q.values()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(ProjectToSimplex, Idempotent) {
    Rng rng(6);
    for (int t = 0; t < 1000; ++t) {
        const Vector v = random_vector(2 + t % 6, rng, 2.0);
        const ProbVec once = project_to_simplex(v);
        const ProbVec twice = project_to_simplex(once.values());
        EXPECT_LE((once.values() - twice.values()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(ProjectToSimplex, HugeInputsStayOnTheSimplex) {
    Rng rng(8);
    for (int t = 0; t < 1000; ++t) {
        const Vector v = random_vector(2 + t % 6, rng, 1e12);
        EXPECT_NO_THROW(project_to_simplex(v));
    }
}

TEST(ProjectToSimplex, TiesAreDeterministic) {
    Vector v(4);
    v << 0.5, 0.5, 0.5, 0.5;
    const ProbVec p = project_to_simplex(v);
    for (long i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p[i], 0.25);
}

// Exhaustive active-set solve of min ||v - p||^2 s.t. sum p = 1, p >= gamma.
Vector brute_force_projection(const Vector& v, double gamma) {
    const long k = v.size();
    Vector best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (long mask = 0; mask < (1L << k) - 1; ++mask) {
        long free = 0;
        double free_sum = 0.0;
        for (long i = 0; i < k; ++i)
            if (!(mask >> i & 1)) {
                ++free;
                free_sum += v[i];
            }
        const long active = k - free;
        const double mu = (free_sum + static_cast<double>(active) * gamma - 1.0) / static_cast<double>(free);
        Vector p(k);
        bool feasible = true;
        for (long i = 0; i < k; ++i) {
            p[i] = (mask >> i & 1) ? gamma : v[i] - mu;
            if (p[i] < gamma - 1e-15) feasible = false;
        }
        if (!feasible) continue;
        const double dist = (v - p).squaredNorm();
        if (dist < best_dist) {
            best_dist = dist;
            best = p;
        }
    }
    return best;
}

TEST(ProjectColumnStochastic, MatchesBruteForceQp) {
    Rng rng(7);
    for (int t = 0; t < 300; ++t) {
        Matrix m(3, 3);
        for (long j = 0; j < 3; ++j) m.col(j) = random_vector(3, rng, 1.5);
        const Matrix p = project_column_stochastic(m);
        for (long j = 0; j < 3; ++j) {
            const Vector oracle = brute_force_projection(m.col(j), 1e-3);
            EXPECT_LE((p.col(j) - oracle).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(ProjectColumnStochastic, Reductions) {
    Rng rng(8);
    Matrix m(4, 1);
    m.col(0) = random_vector(4, rng);
    EXPECT_EQ(project_column_stochastic(m).col(0), project_to_simplex(m.col(0)).values());

    Matrix s(3, 2);
    s.col(0) = random_probvec(3, rng).values();
    s.col(1) = random_probvec(3, rng).values();
    EXPECT_LE((project_column_stochastic(s) - s).cwiseAbs().maxCoeff(), 1e-12);
}

}  // namespace
}  // namespace w2sg
