#pragma once

// Probability-simplex primitives: floored probability vectors, entropy,
// total variation and Euclidean projections.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace w2sg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Tolerance used when validating that a vector lies on the floored simplex.
inline constexpr double kSimplexTol = 1e-12;

struct FloorConfig {
    /// Minimal probability of every class. Zero means "no floor".
    double gamma = 1e-3;

    void validate(long k) const {
        if (k < 2) throw ConfigError("floor: need at least two classes, got k=" + std::to_string(k));
        if (!(gamma >= 0.0) || !(static_cast<double>(k) * gamma < 1.0))
            throw ConfigError("floor: gamma=" + std::to_string(gamma) +
                              " violates k*gamma < 1 for k=" + std::to_string(k));
    }
};

/// A point on the k-simplex with every coordinate at least gamma.
class ProbVec {
public:
    ProbVec() = default;

    /// Validates and wraps `values`; throws if they are not on the floored simplex.
    static ProbVec checked(Vector values, double gamma) {
        validate(values, gamma);
        ProbVec p;
        p.values_ = std::move(values);
        p.gamma_ = gamma;
        return p;
    }

    static ProbVec uniform(long k, double gamma = 0.0) {
        return checked(Vector::Constant(k, 1.0 / static_cast<double>(k)), gamma);
    }

    static void validate(const Vector& v, double gamma) {
        const long k = v.size();
        if (k < 2) throw DimensionError("ProbVec needs k >= 2, got " + std::to_string(k));
        for (long i = 0; i < k; ++i) {
            if (!std::isfinite(v[i])) throw NumericError("ProbVec: non-finite entry", i);
            if (v[i] < gamma - kSimplexTol || v[i] > 1.0 + kSimplexTol)
                throw InvalidWeightsError("ProbVec: entry " + std::to_string(i) + " = " + std::to_string(v[i]) +
                                          " outside [gamma, 1]");
        }
        const double s = v.sum();
        if (std::abs(s - 1.0) > kSimplexTol) throw InvalidWeightsError("ProbVec: entries sum to " + std::to_string(s));
    }

    long size() const noexcept { return values_.size(); }
    double gamma() const noexcept { return gamma_; }
    double operator[](long i) const { return values_[i]; }
    const Vector& values() const noexcept { return values_; }

    friend bool operator==(const ProbVec& a, const ProbVec& b) {
        return a.gamma_ == b.gamma_ && a.values_ == b.values_;
    }

private:
    Vector values_;
    double gamma_ = 0.0;
};

namespace detail {

inline void require_finite(const Eigen::Ref<const Vector>& v, const char* what) {
    for (long i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i])) throw NumericError(std::string(what) + ": non-finite input", i);
}

/// Affine floor map q -> (1 - k*gamma) q + gamma. Maps the simplex onto the floored simplex.
inline Vector apply_floor(const Eigen::Ref<const Vector>& q, double gamma) {
    const double k = static_cast<double>(q.size());
    return ((1.0 - k * gamma) * q.array() + gamma).matrix();
}

/// Euclidean projection onto the unit simplex (sort-based; ties broken by index).
inline Vector project_unit_simplex(const Eigen::Ref<const Vector>& v) {
    const long k = v.size();
    std::vector<long> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0L);
    std::sort(order.begin(), order.end(), [&](long a, long b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });

    double cumulative = 0.0;
    double theta = 0.0;
    for (long j = 0; j < k; ++j) {
        const double u = v[order[static_cast<std::size_t>(j)]];
        cumulative += u;
        const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
        if (u - candidate > 0.0) theta = candidate;
    }
    Vector out(k);
    for (long i = 0; i < k; ++i) out[i] = std::max(v[i] - theta, 0.0);
    // For very large inputs v - theta cancels badly; put the sum residual back on the support.
    for (int pass = 0; pass < 2; ++pass) {
        const double excess = out.sum() - 1.0;
        if (std::abs(excess) <= 1e-15) break;
        const long support = (out.array() > 0.0).count();
        for (long i = 0; i < k; ++i)
            if (out[i] > 0.0) out[i] = std::max(out[i] - excess / static_cast<double>(support), 0.0);
    }
    return out;
}

/// Exact Euclidean projection onto {p : sum p = 1, p_i >= gamma}.
/// Substituting p = gamma + (1 - k gamma) q turns it into a unit-simplex projection of
/// (v - gamma) / (1 - k gamma), followed by the floor map.
inline Vector project_floored_simplex(const Eigen::Ref<const Vector>& v, double gamma) {
    const double scale = 1.0 - static_cast<double>(v.size()) * gamma;
    const Vector shifted = ((v.array() - gamma) / scale).matrix();
    return apply_floor(project_unit_simplex(shifted), gamma);
}

inline double entropy(const Eigen::Ref<const Vector>& p) {
    double h = 0.0;
    for (long i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    return h;
}

}  // namespace detail

/// Normalizes nonnegative weights onto the simplex and applies the gamma floor by
/// convex mixing with the uniform vector.
inline ProbVec make_probvec(std::span<const double> raw, FloorConfig floor = {}) {
    const long k = static_cast<long>(raw.size());
    floor.validate(k);
    double total = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!std::isfinite(raw[i])) throw NumericError("make_probvec: non-finite weight", static_cast<long>(i));
        if (raw[i] < 0.0) throw InvalidWeightsError("make_probvec: negative weight at index " + std::to_string(i));
        total += raw[i];
    }
    if (!(total > 0.0)) throw InvalidWeightsError("make_probvec: all weights are zero");
    Vector q(k);
    for (long i = 0; i < k; ++i) q[i] = raw[static_cast<std::size_t>(i)] / total;
    return ProbVec::checked(detail::apply_floor(q, floor.gamma), floor.gamma);
}

inline ProbVec make_probvec(const Vector& raw, FloorConfig floor = {}) {
    return make_probvec(std::span<const double>(raw.data(), static_cast<std::size_t>(raw.size())), floor);
}

inline ProbVec make_probvec(std::initializer_list<double> raw, FloorConfig floor = {}) {
    return make_probvec(std::span<const double>(raw.begin(), raw.size()), floor);
}

/// Shannon entropy in nats.
inline double entropy(const ProbVec& p) { return detail::entropy(p.values()); }

inline double tv_distance(const ProbVec& p, const ProbVec& q) {
    if (p.size() != q.size()) throw DimensionError("tv_distance: dimension mismatch");
    return 0.5 * (p.values() - q.values()).cwiseAbs().sum();
}

/// Euclidean projection onto the gamma-floored simplex. With gamma = 0 this is the
/// plain simplex projection; for gamma > 0 it is the exact projection onto the floored
/// set, so the map is idempotent.
inline ProbVec project_to_simplex(const Vector& v, FloorConfig floor = {}) {
    floor.validate(v.size());
    detail::require_finite(v, "project_to_simplex");
    return ProbVec::checked(detail::project_floored_simplex(v, floor.gamma), floor.gamma);
}

/// Projects each column of `m` onto the floored simplex.
inline Matrix project_column_stochastic(const Matrix& m, FloorConfig floor = {}) {
    floor.validate(m.rows());
    Matrix out(m.rows(), m.cols());
    for (long j = 0; j < m.cols(); ++j) {
        detail::require_finite(m.col(j), "project_column_stochastic");
        out.col(j) = detail::project_floored_simplex(m.col(j), floor.gamma);
    }
    return out;
}

}  // namespace w2sg
