#pragma once

// Loss functionals between probability vectors: forward/reverse KL and CE,
// squared loss, Bregman divergences and dataset-level expectations.

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "simplex.hpp"
#include "summation.hpp"

namespace w2sg {

enum class LossKind { ForwardKL, ReverseKL, ForwardCE, ReverseCE, Squared };

inline constexpr std::array<LossKind, 5> kAllLossKinds = {LossKind::ForwardKL, LossKind::ReverseKL, LossKind::ForwardCE,
                                                          LossKind::ReverseCE, LossKind::Squared};

inline std::string_view to_string(LossKind kind) {
    switch (kind) {
        case LossKind::ForwardKL: return "forward_kl";
        case LossKind::ReverseKL: return "reverse_kl";
        case LossKind::ForwardCE: return "forward_ce";
        case LossKind::ReverseCE: return "reverse_ce";
        case LossKind::Squared: return "squared";
    }
    return "unknown";
}

inline LossKind parse_loss_kind(std::string_view name) {
    for (LossKind k : kAllLossKinds)
        if (to_string(k) == name) return k;
    throw ConfigError("unknown loss kind '" + std::string(name) + "'");
}

/// Reverse variants put the student in the first slot.
inline bool is_reverse(LossKind kind) { return kind == LossKind::ReverseKL || kind == LossKind::ReverseCE; }

namespace detail {

inline void require_same_size(long a, long b, const char* what) {
    if (a != b)
        throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                             std::to_string(b) + ")");
}

using ConstRef = Eigen::Ref<const Vector>;

inline double kl(const ConstRef& g, const ConstRef& h) {
    double s = 0.0;
    for (long i = 0; i < g.size(); ++i)
        if (g[i] > 0.0) s += g[i] * (std::log(g[i]) - std::log(h[i]));
#ifdef W2SG_MUTATION_FLIP_KL
    s = -s;  // mutation build: the theory suite must fail loudly
#endif
    return s;
}

inline double ce(const ConstRef& g, const ConstRef& h) {
    double s = 0.0;
    for (long i = 0; i < g.size(); ++i)
        if (g[i] > 0.0) s -= g[i] * std::log(h[i]);
    return s;
}

inline double squared(const ConstRef& g, const ConstRef& h) { return (g - h).squaredNorm(); }

/// Per-point loss where `g` is the supervisor slot and `h` the student slot.
/// Reverse variants evaluate with the arguments swapped.
inline double point_loss(LossKind kind, const ConstRef& g, const ConstRef& h) {
    switch (kind) {
        case LossKind::ForwardKL: return kl(g, h);
        case LossKind::ReverseKL: return kl(h, g);
        case LossKind::ForwardCE: return ce(g, h);
        case LossKind::ReverseCE: return ce(h, g);
        case LossKind::Squared: return squared(g, h);
    }
    return 0.0;
}

}  // namespace detail

/// KL(g || h) in nats.
inline double kl(const ProbVec& g, const ProbVec& h) {
    detail::require_same_size(g.size(), h.size(), "kl");
    return detail::kl(g.values(), h.values());
}

/// Cross-entropy -sum g_i log h_i; equals kl(g, h) + entropy(g).
inline double ce(const ProbVec& g, const ProbVec& h) {
    detail::require_same_size(g.size(), h.size(), "ce");
    return detail::ce(g.values(), h.values());
}

inline double squared_loss(const ProbVec& g, const ProbVec& h) {
    detail::require_same_size(g.size(), h.size(), "squared_loss");
    return detail::squared(g.values(), h.values());
}

inline double point_loss(LossKind kind, const ProbVec& g, const ProbVec& h) {
    detail::require_same_size(g.size(), h.size(), "point_loss");
    return detail::point_loss(kind, g.values(), h.values());
}

// ---------------------------------------------------------------------------
// Bregman divergences

enum class Generator { NegativeEntropy, SquaredNorm };

struct BregmanGenerator {
    Generator id = Generator::NegativeEntropy;

    double phi(const Vector& x) const {
        switch (id) {
            case Generator::NegativeEntropy: return -detail::entropy(x);
            case Generator::SquaredNorm: return x.squaredNorm();
        }
        throw ConfigError("unsupported Bregman generator");
    }

    Vector grad_phi(const Vector& x) const {
        switch (id) {
            case Generator::NegativeEntropy: return (x.array().log() + 1.0).matrix();
            case Generator::SquaredNorm: return 2.0 * x;
        }
        throw ConfigError("unsupported Bregman generator");
    }
};

/// phi(a) - phi(b) - <grad phi(b), a - b>.
inline double bregman(const BregmanGenerator& gen, const ProbVec& a, const ProbVec& b) {
    detail::require_same_size(a.size(), b.size(), "bregman");
    return gen.phi(a.values()) - gen.phi(b.values()) - gen.grad_phi(b.values()).dot(a.values() - b.values());
}

// ---------------------------------------------------------------------------
// Dataset-level quantities

/// Model slots a DatasetEval can hold.
enum class Role { Truth, Weak, Student, Ceiling, Empirical };

inline std::string_view to_string(Role r) {
    switch (r) {
        case Role::Truth: return "truth";
        case Role::Weak: return "weak";
        case Role::Student: return "student";
        case Role::Ceiling: return "ceiling";
        case Role::Empirical: return "empirical";
    }
    return "unknown";
}

/// A finite-support distribution over points with the outputs of several models
/// at every point. Expectations over it are exact weighted sums.
class DatasetEval {
public:
    DatasetEval() = default;

    explicit DatasetEval(std::vector<double> weights) : weights_(std::move(weights)) {
        if (weights_.empty()) throw InvalidWeightsError("DatasetEval: no points");
        for (std::size_t i = 0; i < weights_.size(); ++i)
            if (!(weights_[i] >= 0.0))
                throw InvalidWeightsError("DatasetEval: negative weight at " + std::to_string(i));
        const double s = pairwise_sum(weights_);
        if (std::abs(s - 1.0) > kSimplexTol)
            throw InvalidWeightsError("DatasetEval: weights sum to " + std::to_string(s));
    }

    static DatasetEval uniform(std::size_t n) {
        std::vector<double> w(n, 1.0 / static_cast<double>(n));
        // Push any rounding residue into the last weight.
        w.back() += 1.0 - pairwise_sum(w);
        return DatasetEval(std::move(w));
    }

    std::size_t size() const noexcept { return weights_.size(); }
    const std::vector<double>& weights() const noexcept { return weights_; }

    DatasetEval& set(Role role, std::vector<ProbVec> outputs) {
        if (outputs.size() != weights_.size())
            throw DimensionError("DatasetEval: role '" + std::string(to_string(role)) + "' has " +
                                 std::to_string(outputs.size()) + " outputs for " + std::to_string(weights_.size()) +
                                 " points");
        if (!outputs.empty()) {
            const long k = outputs.front().size();
            for (const auto& p : outputs) detail::require_same_size(p.size(), k, "DatasetEval::set");
            if (!roles_.empty() && roles_.begin()->second.front().size() != k)
                throw DimensionError("DatasetEval: class count differs between roles");
        }
        roles_[role] = std::move(outputs);
        return *this;
    }

    bool has(Role role) const { return roles_.count(role) != 0; }

    const std::vector<ProbVec>& outputs(Role role) const {
        auto it = roles_.find(role);
        if (it == roles_.end())
            throw MissingRoleError("DatasetEval: missing role '" + std::string(to_string(role)) + "'");
        return it->second;
    }

    /// Weighted sum of `term(i)` over points, using pairwise summation.
    template <class Fn>
    double expectation(Fn&& term) const {
        std::vector<double> terms(weights_.size());
        for (std::size_t i = 0; i < weights_.size(); ++i) terms[i] = weights_[i] * term(i);
        return pairwise_sum(terms);
    }

private:
    std::vector<double> weights_;
    std::map<Role, std::vector<ProbVec>> roles_;
};

/// E_x loss(g(x), h(x)). For reverse kinds the student-slot argument `h_role`
/// is evaluated first, i.e. ReverseKL gives E_x KL(h(x) || g(x)).
inline double population_loss(LossKind kind, Role g_role, Role h_role, const DatasetEval& data) {
    const auto& g = data.outputs(g_role);
    const auto& h = data.outputs(h_role);
    return data.expectation([&](std::size_t i) { return point_loss(kind, g[i], h[i]); });
}

/// E_x KL(a(x) || b(x)).
inline double population_kl(Role a, Role b, const DatasetEval& data) {
    return population_loss(LossKind::ForwardKL, a, b, data);
}

/// <f, log(num / den)>_E = E_x f(x)^T log(num(x) / den(x)).
inline double expectation_inner_product(Role f_role, Role num_role, Role den_role, const DatasetEval& data) {
    const auto& f = data.outputs(f_role);
    const auto& num = data.outputs(num_role);
    const auto& den = data.outputs(den_role);
    return data.expectation([&](std::size_t i) {
        const Vector logratio = (num[i].values().array().log() - den[i].values().array().log()).matrix();
        return f[i].values().dot(logratio);
    });
}

/// <a - b, c - d>_S = 2 E_x (a(x) - b(x))^T (c(x) - d(x)).
inline double squared_inner_product(Role a, Role b, Role c, Role d, const DatasetEval& data) {
    const auto& va = data.outputs(a);
    const auto& vb = data.outputs(b);
    const auto& vc = data.outputs(c);
    const auto& vd = data.outputs(d);
    return 2.0 * data.expectation([&](std::size_t i) {
        return (va[i].values() - vb[i].values()).dot(vc[i].values() - vd[i].values());
    });
}

/// E_x H(f(x)).
inline double mean_entropy(Role role, const DatasetEval& data) {
    const auto& f = data.outputs(role);
    return data.expectation([&](std::size_t i) { return entropy(f[i]); });
}

}  // namespace w2sg
