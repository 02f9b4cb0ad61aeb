#pragma once

// Full-batch fitting of heads against a supervisor.
//
// Stochastic heads use projected gradient descent with a Barzilai-Borwein step and a
// monotone Armijo backtracking search along the projection arc; every iterate stays
// inside the (convex) class. Logit heads use plain gradient descent that keeps the
// best iterate and halves the step after a run of consecutive loss increases.

#include <chrono>
#include <functional>
#include <optional>

#include "gradient.hpp"

namespace w2sg {

enum class HeadClass { Stochastic, Logit };

inline std::string_view to_string(HeadClass c) { return c == HeadClass::Stochastic ? "stochastic" : "logit"; }

struct TrainConfig {
    double learning_rate = 0.1;
    int max_steps = 5000;
    double grad_tolerance = 1e-8;
    std::uint64_t seed = 0;
    /// Wall-clock budget per fit in seconds; 0 disables the guard.
    double time_limit_seconds = 0.0;
    /// Called after every accepted step with (step, loss).
    std::function<void(int, double)> observer;

    static TrainConfig defaults_for(HeadClass c) {
        TrainConfig cfg;
        cfg.learning_rate = c == HeadClass::Stochastic ? 0.1 : 1e-2;
        return cfg;
    }

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
        if (max_steps < 1) throw ConfigError("train.max_steps must be >= 1");
        if (!(grad_tolerance > 0.0)) throw ConfigError("train.grad_tolerance must be positive");
        if (time_limit_seconds < 0.0) throw ConfigError("train.time_limit_seconds must be >= 0");
    }
};

/// Auxiliary confidence objective: (1 - alpha) base + alpha CE(hardened(f), f).
struct ConfidenceConfig {
    double alpha = 0.2;
    double threshold = 0.5;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("confidence.alpha must be in [0, 1]");
        if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("confidence.threshold must be in (0, 1)");
    }
};

struct FitResult {
    AnyHead head;
    double final_loss = 0.0;
    int steps_taken = 0;
    double final_grad_norm = 0.0;
    bool converged = false;
    int halvings = 0;
};

/// Consecutive loss increases tolerated before the logit step size is halved.
inline constexpr int kDivergenceWindow = 50;
inline constexpr int kMaxHalvings = 10;
/// Projected descent stops after this many accepted steps without a representable decrease.
inline constexpr int kStallWindow = 200;

namespace detail {

class Deadline {
public:
    explicit Deadline(double seconds)
        : enabled_(seconds > 0.0),
          end_(std::chrono::steady_clock::now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                      std::chrono::duration<double>(seconds))) {}

    void check() const {
        if (enabled_ && std::chrono::steady_clock::now() > end_) throw TimeLimitError("fit exceeded its time limit");
    }

private:
    bool enabled_;
    std::chrono::steady_clock::time_point end_;
};

template <class H>
using Objective = std::function<LossAndGrad(const H&)>;

inline FitResult projected_descent(StochasticHead x, const Objective<StochasticHead>& objective,
                                   const TrainConfig& cfg) {
    constexpr double armijo = 1e-4;
    const Deadline deadline(cfg.time_limit_seconds);
    x = x.with_params(x.project(x.params()));
    LossAndGrad cur = objective(x);
    double step = cfg.learning_rate;
    int stalled = 0;
    FitResult r;
    for (int it = 0;; ++it) {
        const Vector p = x.params();
        const double pg_norm = (p - x.project(p - cur.grad)).norm();
        r.final_grad_norm = pg_norm;
        if (pg_norm <= cfg.grad_tolerance) {
            r.converged = true;
            break;
        }
        if (it >= cfg.max_steps) break;
        deadline.check();

        const Vector dir = x.project(p - step * cur.grad) - p;
        const double slope = cur.grad.dot(dir);
        double lambda = 1.0;
        std::optional<LossAndGrad> next;
        StochasticHead trial;
        for (int bt = 0; bt < 60; ++bt, lambda *= 0.5) {
            trial = x.with_params(p + lambda * dir);
            LossAndGrad cand = objective(trial);
            if (cand.value <= cur.value + armijo * lambda * slope) {
                next = std::move(cand);
                break;
            }
        }
        if (!next) break;  // no representable decrease left
        stalled = cur.value - next->value <= 1e-15 * std::max(1.0, std::abs(cur.value)) ? stalled + 1 : 0;

        const Vector s = trial.params() - p;
        const Vector y = next->grad - cur.grad;
        const double sy = s.dot(y);
        // No curvature along s (a linear objective): take the longest step and let Armijo cut it.
        step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-12, 1e12) : 1e12;
        x = std::move(trial);
        cur = std::move(*next);
        r.steps_taken = it + 1;
        if (cfg.observer) cfg.observer(r.steps_taken, cur.value);
        if (stalled >= kStallWindow) break;
    }
    r.head = x;
    r.final_loss = cur.value;
    return r;
}

inline FitResult gradient_descent(LogitHead x, const Objective<LogitHead>& objective, const TrainConfig& cfg) {
    const Deadline deadline(cfg.time_limit_seconds);
    double lr = cfg.learning_rate;
    LossAndGrad cur = objective(x);
    LogitHead best = x;
    double best_loss = cur.value;
    double best_grad = cur.grad.norm();
    double prev = cur.value;
    int increases = 0;
    FitResult r;
    for (int it = 0;; ++it) {
        const double gnorm = cur.grad.norm();
        if (gnorm <= cfg.grad_tolerance) {
            r.converged = true;
            break;
        }
        if (it >= cfg.max_steps) break;
        deadline.check();

        x = x.with_params(x.params() - lr * cur.grad);
        cur = objective(x);
        r.steps_taken = it + 1;
        if (cfg.observer) cfg.observer(r.steps_taken, cur.value);
        increases = cur.value > prev ? increases + 1 : 0;
        prev = cur.value;
        if (cur.value < best_loss) {
            best = x;
            best_loss = cur.value;
            best_grad = cur.grad.norm();
        }
        if (increases >= kDivergenceWindow) {
            if (++r.halvings > kMaxHalvings)
                throw StepSizeError("logit fit diverged: loss rose for " + std::to_string(kDivergenceWindow) +
                                    " consecutive steps after " + std::to_string(kMaxHalvings) + " step halvings");
            lr *= 0.5;
            x = best;
            cur = objective(x);
            prev = cur.value;
            increases = 0;
        }
    }
    r.head = best;
    r.final_loss = best_loss;
    r.final_grad_norm = best_grad;
    r.converged = best_grad <= cfg.grad_tolerance;
    return r;
}

template <class Make>
FitResult dispatch_fit(HeadClass cls, long k, long d_s, double gamma, const TrainConfig& cfg,
                       const std::optional<AnyHead>& init, Make&& make_objective) {
    cfg.validate();
    Rng rng(splitmix64(cfg.seed ^ 0x6669740000000000ULL));
    if (cls == HeadClass::Stochastic) {
        StochasticHead h0 = init ? std::get<StochasticHead>(*init) : StochasticHead::random(k, d_s, gamma, rng);
        return projected_descent(std::move(h0), make_objective.template operator()<StochasticHead>(), cfg);
    }
    LogitHead h0 = init ? std::get<LogitHead>(*init) : LogitHead::random(k, d_s, gamma, rng);
    return gradient_descent(std::move(h0), make_objective.template operator()<LogitHead>(), cfg);
}

inline void check_supervisor(const Matrix& supervisor, const FeatureSet& features, const Vector& weights) {
    if (supervisor.cols() != features.size() || weights.size() != features.size())
        throw DimensionError("fit: supervisor, features and weights disagree on the number of points");
    if (std::abs(weights.sum() - 1.0) > 1e-9) throw InvalidWeightsError("fit: weights must sum to 1");
}

}  // namespace detail

/// Fits a head of class `cls` minimizing sum_j w_j loss(kind, supervisor_j, head(features_j)).
/// `init` overrides the seeded random initialization.
inline FitResult fit_head(LossKind kind, const Matrix& supervisor, const FeatureSet& features, const Vector& weights,
                          HeadClass cls, const TrainConfig& cfg, FloorConfig floor = {},
                          const std::optional<AnyHead>& init = std::nullopt) {
    detail::check_supervisor(supervisor, features, weights);
    return detail::dispatch_fit(cls, supervisor.rows(), features.primary.rows(), floor.gamma, cfg, init,
                                [&]<class H>() -> detail::Objective<H> {
                                    return [&](const H& h) {
                                        return loss_gradient(kind, h, features, weights, supervisor);
                                    };
                                });
}

/// Hardened two-class labels I(q_1 > t), floored.
inline Matrix harden(const Matrix& outputs, double threshold, double gamma) {
    Matrix h(2, outputs.cols());
    for (long j = 0; j < outputs.cols(); ++j) {
        const double one = outputs(1, j) > threshold ? 1.0 : 0.0;
        h(0, j) = (1.0 - 2.0 * gamma) * (1.0 - one) + gamma;
        h(1, j) = (1.0 - 2.0 * gamma) * one + gamma;
    }
    return h;
}

/// Value and gradient of the confidence objective at `head`. The hardened labels are
/// recomputed from the head's own outputs and carry no gradient.
template <Head H>
LossAndGrad confidence_loss_gradient(LossKind base, const H& head, const FeatureSet& features, const Vector& weights,
                                     const Matrix& supervisor, const ConfidenceConfig& conf) {
    const Matrix q = head_outputs(head, features);
    const Matrix hard = harden(q, conf.threshold, head.gamma());
    auto b = output_loss(base, supervisor, q, weights);
    auto r = output_loss(LossKind::ForwardCE, hard, q, weights);
    const Matrix d_out = (1.0 - conf.alpha) * b.d_out + conf.alpha * r.d_out;
    return {(1.0 - conf.alpha) * b.value + conf.alpha * r.value, head_backward(head, features, d_out)};
}

inline FitResult fit_confidence(LossKind base, const Matrix& supervisor, const FeatureSet& features,
                                const Vector& weights, HeadClass cls, const TrainConfig& cfg,
                                const ConfidenceConfig& conf, FloorConfig floor = {},
                                const std::optional<AnyHead>& init = std::nullopt) {
    if (base != LossKind::ForwardCE && base != LossKind::ReverseCE)
        throw UnsupportedModeError("confidence loss is defined for forward_ce and reverse_ce only");
    if (supervisor.rows() != 2)
        throw UnsupportedModeError("confidence loss needs k = 2, got k=" + std::to_string(supervisor.rows()));
    conf.validate();
    detail::check_supervisor(supervisor, features, weights);
    return detail::dispatch_fit(
        cls, 2, features.primary.rows(), floor.gamma, cfg, init, [&]<class H>() -> detail::Objective<H> {
            return [&](const H& h) { return confidence_loss_gradient(base, h, features, weights, supervisor, conf); };
        });
}

/// Draws a population index per call.
using Sampler = std::function<long(Rng&)>;

/// Uniform sampler over a finite support of `size` points.
inline Sampler uniform_sampler(long size) {
    return [size](Rng& rng) { return std::uniform_int_distribution<long>(0, size - 1)(rng); };
}

struct EmpiricalSample {
    std::vector<long> indices;
    FeatureSet features;
    Matrix supervisor;
    Vector weights;
};

/// n i.i.d. draws (seeded by cfg.seed) from the population, uniform weights.
inline EmpiricalSample draw_sample(long n, const Sampler& sampler, const FeatureSet& population,
                                   const Matrix& supervisor, std::uint64_t seed) {
    if (n < 1) throw ConfigError("fit_empirical: n must be >= 1");
    Rng rng(detail::splitmix64(seed ^ 0x73616d706c650000ULL));
    EmpiricalSample s;
    s.indices.resize(static_cast<std::size_t>(n));
    for (auto& i : s.indices) {
        i = sampler(rng);
        if (i < 0 || i >= population.size()) throw DimensionError("sampler returned an index outside the population");
    }
    s.features = population.select(s.indices);
    s.supervisor.resize(supervisor.rows(), n);
    for (long j = 0; j < n; ++j) s.supervisor.col(j) = supervisor.col(s.indices[static_cast<std::size_t>(j)]);
    s.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
    return s;
}

/// Fits on n sampled points: the empirical student.
inline FitResult fit_empirical(LossKind kind, long n, const Sampler& sampler, const FeatureSet& population,
                               const Matrix& supervisor, HeadClass cls, const TrainConfig& cfg,
                               FloorConfig floor = {}) {
    const EmpiricalSample s = draw_sample(n, sampler, population, supervisor, cfg.seed);
    return fit_head(kind, s.supervisor, s.features, s.weights, cls, cfg, floor);
}

}  // namespace w2sg
