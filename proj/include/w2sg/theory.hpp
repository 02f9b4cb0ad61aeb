#pragma once

// Executable checks of the weak-to-strong identities and bounds on finite-support
// model triples (F*, F_w, F_sw), plus the realizable convex-class guarantee and the
// finite-sample gap curve.

#include <optional>

#include "datagen.hpp"
#include "parallel.hpp"

namespace w2sg {

/// Numeric slack every bound check tolerates.
inline constexpr double kBoundSlack = 1e-9;
/// Residual tolerance of the exact decompositions.
inline constexpr double kIdentityTol = 1e-10;

struct BoundConstants {
    double gamma = 1e-3;

    /// Subgaussian parameter (1/gamma) log(1/gamma).
    double sigma() const { return std::log(1.0 / gamma) / gamma; }
    /// Two-sided bound constant sqrt(2)/gamma log(1/gamma).
    double c1() const { return std::sqrt(2.0) / gamma * std::log(1.0 / gamma); }
    /// Lower-bound constant sqrt(2)/gamma.
    double c2() const { return std::sqrt(2.0) / gamma; }
};

/// Which KL direction was used for the disagreement term d(F_w, F_sw).
enum class Direction { WeakStudent, StudentWeak, NotApplicable };

inline std::string_view to_string(Direction d) {
    switch (d) {
        case Direction::WeakStudent: return "kl(weak,student)";
        case Direction::StudentWeak: return "kl(student,weak)";
        case Direction::NotApplicable: return "n/a";
    }
    return "n/a";
}

enum class CheckStatus { Holds, Violated, NotApplicable, Inconclusive };

inline std::string_view to_string(CheckStatus s) {
    switch (s) {
        case CheckStatus::Holds: return "holds";
        case CheckStatus::Violated: return "violated";
        case CheckStatus::NotApplicable: return "not_applicable";
        case CheckStatus::Inconclusive: return "inconclusive";
    }
    return "unknown";
}

struct BoundReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;  // rhs - lhs (after any optimization allowance)
    bool holds = true;
    Direction direction = Direction::NotApplicable;
    CheckStatus status = CheckStatus::Holds;

    static BoundReport compare(double lhs, double rhs, Direction dir) {
        BoundReport r;
        r.lhs = lhs;
        r.rhs = rhs;
        r.slack = rhs - lhs;
        r.holds = r.slack >= -kBoundSlack;
        r.direction = dir;
        r.status = r.holds ? CheckStatus::Holds : CheckStatus::Violated;
        return r;
    }

    static BoundReport skipped(CheckStatus status) {
        BoundReport r;
        r.status = status;
        r.holds = true;
        r.lhs = r.rhs = r.slack = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
};

struct DecompositionReport {
    double left_term = 0.0;
    double right_terms = 0.0;
    double residual = 0.0;  // left - right
    double r_value = 0.0;   // R, R1 or the squared cross term
    bool exact() const { return std::abs(residual) <= kIdentityTol; }
};

/// KL or CE, the two loss families the bounds are stated for.
enum class LossFamily { KL, CE };

inline LossKind forward_kind(LossFamily f) { return f == LossFamily::KL ? LossKind::ForwardKL : LossKind::ForwardCE; }

// ---------------------------------------------------------------------------
// Universal bounds

/// |L(F*,F_w) - L(F*,F_sw)| <= C1 sqrt(d) for d = KL(F_w,F_sw) and d = KL(F_sw,F_w).
inline std::array<BoundReport, 2> check_gain_bound(const DatasetEval& triple, LossFamily family,
                                                   const BoundConstants& consts) {
    const LossKind kind = forward_kind(family);
    const double gap = std::abs(population_loss(kind, Role::Truth, Role::Weak, triple) -
                                population_loss(kind, Role::Truth, Role::Student, triple));
    const double d_ws = population_kl(Role::Weak, Role::Student, triple);
    const double d_sw = population_kl(Role::Student, Role::Weak, triple);
    return {BoundReport::compare(gap, consts.c1() * std::sqrt(d_ws), Direction::WeakStudent),
            BoundReport::compare(gap, consts.c1() * std::sqrt(d_sw), Direction::StudentWeak)};
}

/// L(F*,F_sw) >= L(F*,F_w) - C2 sqrt(d), both directions of d. Written as lhs <= rhs with
/// lhs = L(F*,F_w) - C2 sqrt(d) and rhs = L(F*,F_sw).
inline std::array<BoundReport, 2> check_lower_bound(const DatasetEval& triple, LossFamily family,
                                                    const BoundConstants& consts) {
    const LossKind kind = forward_kind(family);
    const double strong = population_loss(kind, Role::Truth, Role::Student, triple);
    const double weak = population_loss(kind, Role::Truth, Role::Weak, triple);
    const double d_ws = population_kl(Role::Weak, Role::Student, triple);
    const double d_sw = population_kl(Role::Student, Role::Weak, triple);
    return {BoundReport::compare(weak - consts.c2() * std::sqrt(d_ws), strong, Direction::WeakStudent),
            BoundReport::compare(weak - consts.c2() * std::sqrt(d_sw), strong, Direction::StudentWeak)};
}

/// Constant ordering: C2 <= C1 whenever gamma < 1/e.
inline bool constants_ordered(const BoundConstants& c) { return !(c.gamma < std::exp(-1.0)) || c.c2() <= c.c1(); }

// ---------------------------------------------------------------------------
// Decompositions

/// L(F*,F_sw) = L(F*,F_w) - R with R = <F*, log(F_sw/F_w)>_E.
inline DecompositionReport decompose_forward(const DatasetEval& triple, LossFamily family) {
    const LossKind kind = forward_kind(family);
    DecompositionReport r;
    r.r_value = expectation_inner_product(Role::Truth, Role::Student, Role::Weak, triple);
    r.left_term = population_loss(kind, Role::Truth, Role::Student, triple);
    r.right_terms = population_loss(kind, Role::Truth, Role::Weak, triple) - r.r_value;
    r.residual = r.left_term - r.right_terms;
    return r;
}

/// KL(F_w,F*) = KL(F_sw,F*) + R1 with R1 = <F_w - F_sw, log(F_w/F*)>_E - KL(F_sw,F_w).
inline DecompositionReport decompose_reverse(const DatasetEval& triple) {
    const auto& w = triple.outputs(Role::Weak);
    const auto& sw = triple.outputs(Role::Student);
    const auto& s = triple.outputs(Role::Truth);
    const double cross = triple.expectation([&](std::size_t i) {
        const Vector logratio = (w[i].values().array().log() - s[i].values().array().log()).matrix();
        return (w[i].values() - sw[i].values()).dot(logratio);
    });
    DecompositionReport r;
    r.r_value = cross - population_kl(Role::Student, Role::Weak, triple);
    r.left_term = population_kl(Role::Weak, Role::Truth, triple);
    r.right_terms = population_kl(Role::Student, Role::Truth, triple) + r.r_value;
    r.residual = r.left_term - r.right_terms;
    return r;
}

/// Squared loss: L(F_w,F*) = L(F_sw,F*) + L(F_sw,F_w) + <F* - F_sw, F_sw - F_w>_S.
/// r_value holds the cross term.
inline DecompositionReport decompose_squared(const DatasetEval& triple) {
    DecompositionReport r;
    r.r_value = squared_inner_product(Role::Truth, Role::Student, Role::Student, Role::Weak, triple);
    r.left_term = population_loss(LossKind::Squared, Role::Weak, Role::Truth, triple);
    r.right_terms = population_loss(LossKind::Squared, Role::Student, Role::Truth, triple) +
                    population_loss(LossKind::Squared, Role::Student, Role::Weak, triple) + r.r_value;
    r.residual = r.left_term - r.right_terms;
    return r;
}

/// If R >= 0 and KL(F_w,F_sw) >= sqrt(2) C, asserts L(F*,F_sw) >= L(F*,F_w) - KL(F_w,F_sw).
/// `threshold_constant` defaults to C2; a different C can be injected to exercise the
/// conditional branch.
inline BoundReport check_large_disagreement(const DatasetEval& triple, const BoundConstants& consts,
                                            LossFamily family = LossFamily::KL,
                                            std::optional<double> threshold_constant = std::nullopt) {
    const double c = threshold_constant.value_or(consts.c2());
    const double r = expectation_inner_product(Role::Truth, Role::Student, Role::Weak, triple);
    const LossKind kind = forward_kind(family);
    const double disagreement = population_loss(kind, Role::Weak, Role::Student, triple);
    if (r < 0.0 || disagreement < std::sqrt(2.0) * c) return BoundReport::skipped(CheckStatus::NotApplicable);
    const double d_ws = population_kl(Role::Weak, Role::Student, triple);
    return BoundReport::compare(population_loss(kind, Role::Truth, Role::Weak, triple) - d_ws,
                                population_loss(kind, Role::Truth, Role::Student, triple), Direction::WeakStudent);
}

struct OrderingStats {
    double fraction = 0.0;
    std::vector<double> per_class;
};

/// Fraction of (point, class) pairs with F* >= F_sw >= F_w or F* <= F_sw <= F_w.
/// Unweighted over points.
inline OrderingStats ordering_condition_stats(const DatasetEval& triple) {
    const auto& s = triple.outputs(Role::Truth);
    const auto& sw = triple.outputs(Role::Student);
    const auto& w = triple.outputs(Role::Weak);
    const long k = s.front().size();
    OrderingStats out;
    out.per_class.assign(static_cast<std::size_t>(k), 0.0);
    long total = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (long c = 0; c < k; ++c) {
            const double a = s[i][c], b = sw[i][c], d = w[i][c];
            const bool ok = (a >= b && b >= d) || (a <= b && b <= d);
            out.per_class[static_cast<std::size_t>(c)] += ok ? 1.0 : 0.0;
            total += ok ? 1 : 0;
        }
    }
    const double n = static_cast<double>(s.size());
    for (auto& x : out.per_class) x /= n;
    out.fraction = static_cast<double>(total) / (n * static_cast<double>(k));
    return out;
}

// ---------------------------------------------------------------------------
// Realizable convex-class guarantee

/// A finite-support setting where F* is exactly a column-stochastic head on strong features.
struct RealizableSetting {
    long k = 2;
    double gamma = 1e-3;
    FeatureSet strong_features;
    Vector weights;
    StochasticHead truth_head;
    Matrix truth;  // k x n
    Matrix weak;   // k x n
};

struct RealizableOptions {
    long k = 2;
    long n_points = 200;
    long d = 32;
    long d_s = 16;
    long d_w = 6;
    double feature_scale = 2.0;
    double weak_noise = 1.0;
    double truth_concentration = 0.5;
    double gamma = 1e-3;
    /// Mixes F* with a non-realizable perturbation of this weight (0 = realizable).
    double ceiling_error = 0.0;
};

/// Builds F* in the strong class and a weak teacher fit with forward CE on noisy,
/// truncated features. Weights are uniform over the support.
inline RealizableSetting make_realizable_setting(const RealizableOptions& opt, std::uint64_t seed) {
    const FloorConfig floor{opt.gamma};
    const std::uint64_t base = detail::splitmix64(seed ^ 0x7265616c00000000ULL);
    const auto strong =
        make_strong_representation(opt.d, opt.d_s, detail::splitmix64(base ^ 1), floor, opt.feature_scale);
    const auto weak = make_weak_representation(strong, opt.d_w, opt.weak_noise, detail::splitmix64(base ^ 2));
    Rng rng(detail::splitmix64(base ^ 3));
    const Matrix inputs = detail::gaussian_matrix(opt.d, opt.n_points, 1.0, rng);

    RealizableSetting s;
    s.k = opt.k;
    s.gamma = opt.gamma;
    s.strong_features = FeatureSet::points(strong.features(inputs));
    s.weights = uniform_weights(opt.n_points);
    s.truth_head = make_realizable_truth(strong, opt.k, base ^ 4, opt.truth_concentration);
    s.truth = s.truth_head.forward(s.strong_features.primary);
    if (opt.ceiling_error > 0.0) {
        Rng prng(detail::splitmix64(base ^ 5));
        for (long j = 0; j < s.truth.cols(); ++j) {
            const Vector noise = detail::apply_floor(detail::dirichlet(opt.k, 0.5, prng), opt.gamma);
            s.truth.col(j) = (1.0 - opt.ceiling_error) * s.truth.col(j) + opt.ceiling_error * noise;
        }
    }

    TrainConfig cfg = TrainConfig::defaults_for(HeadClass::Logit);
    cfg.learning_rate = 5.0;
    cfg.max_steps = 300;
    cfg.seed = base ^ 6;
    const FeatureSet weak_features = FeatureSet::points(weak.features(inputs));
    const FitResult wf = fit_head(LossKind::ForwardCE, s.truth, weak_features, s.weights, HeadClass::Logit, cfg, floor);
    s.weak = head_outputs(wf.head, weak_features);
    return s;
}

/// Assembles a DatasetEval triple from the setting and a fitted student.
inline DatasetEval realizable_triple(const RealizableSetting& s, const Matrix& student) {
    std::vector<double> w(s.weights.data(), s.weights.data() + s.weights.size());
    w.back() += 1.0 - pairwise_sum(w);
    DatasetEval d(std::move(w));
    d.set(Role::Truth, to_probvecs(s.truth, s.gamma));
    d.set(Role::Weak, to_probvecs(s.weak, s.gamma));
    d.set(Role::Student, to_probvecs(student, s.gamma));
    return d;
}

/// Loss improvement a 10x longer run achieves from `fit`: the optimization certificate.
inline double certificate_improvement(LossKind kind, const RealizableSetting& s, const FitResult& fit,
                                      const TrainConfig& cfg) {
    TrainConfig longer = cfg;
    longer.max_steps = cfg.max_steps * 10;
    longer.grad_tolerance = cfg.grad_tolerance * 1e-2;
    const FitResult ref = fit_head(kind, s.weak, s.strong_features, s.weights, HeadClass::Stochastic, longer,
                                   FloorConfig{s.gamma}, fit.head);
    return std::max(0.0, fit.final_loss - ref.final_loss);
}

/// Optimization allowance for the realizable checks: 10 x (grad tolerance + certificate).
inline double optimization_slack(const TrainConfig& cfg, double certificate) {
    return 10.0 * (cfg.grad_tolerance + certificate);
}

/// KL(F*,F_sw) <= KL(F*,F_w) - KL(F_sw,F_w) for the reverse-KL student of a convex class.
/// `slack` of the report is the raw rhs - lhs; `holds` includes the optimization allowance.
inline BoundReport check_projection_bound(const FitResult& fit, const DatasetEval& triple, double eps_opt) {
    if (!fit.converged || !std::holds_alternative<StochasticHead>(fit.head))
        return BoundReport::skipped(CheckStatus::Inconclusive);
    const double lhs = population_kl(Role::Truth, Role::Student, triple);
    const double rhs =
        population_kl(Role::Truth, Role::Weak, triple) - population_kl(Role::Student, Role::Weak, triple);
    BoundReport r = BoundReport::compare(lhs, rhs, Direction::StudentWeak);
    r.holds = r.slack + eps_opt >= -kBoundSlack;
    r.status = r.holds ? CheckStatus::Holds : CheckStatus::Violated;
    return r;
}

/// CE(F*,F_sw) <= (CE(F*,F_w) - KL(F_sw,F_w)) / 2 + log k for the reverse-CE student.
inline BoundReport check_reverse_ce_bound(const FitResult& fit, const DatasetEval& triple, double eps_opt) {
    if (!fit.converged || !std::holds_alternative<StochasticHead>(fit.head))
        return BoundReport::skipped(CheckStatus::Inconclusive);
    const double k = static_cast<double>(triple.outputs(Role::Truth).front().size());
    const double lhs = population_loss(LossKind::ForwardCE, Role::Truth, Role::Student, triple);
    const double rhs = 0.5 * (population_loss(LossKind::ForwardCE, Role::Truth, Role::Weak, triple) -
                              population_kl(Role::Student, Role::Weak, triple)) +
                       std::log(k);
    BoundReport r = BoundReport::compare(lhs, rhs, Direction::StudentWeak);
    r.holds = r.slack + eps_opt >= -kBoundSlack;
    r.status = r.holds ? CheckStatus::Holds : CheckStatus::Violated;
    return r;
}

/// Result of fitting and checking one realizable setting.
struct RealizableCheck {
    FitResult fit;
    DatasetEval triple;
    BoundReport report;
    double certificate = 0.0;
    double eps_opt = 0.0;
};

/// Fits the student of `kind` (ReverseKL or ReverseCE) in the stochastic class and runs
/// the matching guarantee check.
inline RealizableCheck run_realizable_check(LossKind kind, const RealizableSetting& s, const TrainConfig& cfg) {
    if (kind != LossKind::ReverseKL && kind != LossKind::ReverseCE)
        throw UnsupportedModeError("realizable checks are defined for reverse_kl and reverse_ce");
    RealizableCheck out;
    out.fit = fit_head(kind, s.weak, s.strong_features, s.weights, HeadClass::Stochastic, cfg, FloorConfig{s.gamma});
    out.certificate = certificate_improvement(kind, s, out.fit, cfg);
    out.eps_opt = optimization_slack(cfg, out.certificate);
    out.triple = realizable_triple(s, head_outputs(out.fit.head, s.strong_features));
    out.report = kind == LossKind::ReverseKL ? check_projection_bound(out.fit, out.triple, out.eps_opt)
                                             : check_reverse_ce_bound(out.fit, out.triple, out.eps_opt);
    return out;
}

// ---------------------------------------------------------------------------
// Finite-sample gap curve

struct GapCurve {
    std::vector<long> n_grid;
    std::vector<double> median_gap;
    std::vector<std::vector<double>> per_seed_gap;  // [n index][seed index]
    long inversions = 0;
    double worst_inversion = 0.0;  // largest relative increase between consecutive medians
    bool non_increasing = true;
};

/// G = KL(F*,F_hat) - [KL(F*,F_w) - KL(F_hat,F_w)] on the population for an empirical
/// reverse-KL student.
inline double finite_sample_gap(const RealizableSetting& s, const Matrix& student) {
    const DatasetEval t = realizable_triple(s, student);
    return population_kl(Role::Truth, Role::Student, t) -
           (population_kl(Role::Truth, Role::Weak, t) - population_kl(Role::Student, Role::Weak, t));
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw InvalidWeightsError("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Median gap per n over seeds. The trend passes when medians never increase, allowing a
/// single inversion of at most 5% relative.
inline GapCurve finite_sample_gap_curve(const std::vector<long>& n_grid, const std::vector<std::uint64_t>& seeds,
                                        const RealizableOptions& setting, const TrainConfig& cfg,
                                        unsigned workers = 1) {
    if (n_grid.size() < 3) throw ConfigError("gap curve needs at least three sample sizes");
    if (!std::is_sorted(n_grid.begin(), n_grid.end()) ||
        std::adjacent_find(n_grid.begin(), n_grid.end()) != n_grid.end())
        throw ConfigError("gap curve sample sizes must be strictly increasing");
    if (seeds.size() < 10) throw ConfigError("gap curve needs at least ten seeds");

    GapCurve curve;
    curve.n_grid = n_grid;
    curve.per_seed_gap.assign(n_grid.size(), {});
    std::vector<std::vector<double>> by_seed(seeds.size());
    parallel_for(seeds.size(), workers, [&](std::size_t j) {
        const std::uint64_t seed = seeds[j];
        const RealizableSetting s = make_realizable_setting(setting, seed);
        for (std::size_t i = 0; i < n_grid.size(); ++i) {
            TrainConfig c = cfg;
            c.seed = detail::splitmix64(seed * 1315423911ULL + static_cast<std::uint64_t>(n_grid[i]));
            const FitResult f =
                fit_empirical(LossKind::ReverseKL, n_grid[i], uniform_sampler(s.strong_features.size()),
                              s.strong_features, s.weak, HeadClass::Stochastic, c, FloorConfig{s.gamma});
            by_seed[j].push_back(finite_sample_gap(s, head_outputs(f.head, s.strong_features)));
        }
    });
    for (const auto& row : by_seed)
        for (std::size_t i = 0; i < n_grid.size(); ++i) curve.per_seed_gap[i].push_back(row[i]);
    for (const auto& g : curve.per_seed_gap) curve.median_gap.push_back(median(g));
    for (std::size_t i = 1; i < curve.median_gap.size(); ++i) {
        const double prev = curve.median_gap[i - 1], cur = curve.median_gap[i];
        if (cur > prev) {
            ++curve.inversions;
            const double rel = (cur - prev) / std::max(std::abs(prev), 1e-300);
            curve.worst_inversion = std::max(curve.worst_inversion, rel);
        }
    }
    curve.non_increasing = curve.inversions == 0 || (curve.inversions == 1 && curve.worst_inversion <= 0.05);
    return curve;
}

// ---------------------------------------------------------------------------
// Random triples for the identity and bound suites

/// A random triple of floored distributions on `n_points` points with Dirichlet weights.
inline DatasetEval sample_triple(long k, long n_points, double gamma, Rng& rng) {
    std::vector<double> w(static_cast<std::size_t>(n_points));
    const Vector dw = detail::dirichlet(n_points, 1.0, rng);
    for (long i = 0; i < n_points; ++i) w[static_cast<std::size_t>(i)] = dw[i];
    w.back() += 1.0 - pairwise_sum(w);
    if (w.back() < 0.0) w.back() = 0.0;
    DatasetEval d(std::move(w));
    std::uniform_real_distribution<double> spread(0.1, 4.0);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Role role : {Role::Truth, Role::Weak, Role::Student}) {
        std::vector<ProbVec> out;
        for (long i = 0; i < n_points; ++i) {
            const double s = spread(rng);
            Vector raw(k);
            for (long c = 0; c < k; ++c) raw[c] = std::exp(s * n(rng));
            out.push_back(make_probvec(raw, FloorConfig{gamma}));
        }
        d.set(role, std::move(out));
    }
    return d;
}

}  // namespace w2sg
