#pragma once

// Frozen representation maps, the two head classes and pairwise scoring.

#include <bit>
#include <concepts>
#include <cstdint>
#include <memory>
#include <random>
#include <variant>

#include "divergences.hpp"

namespace w2sg {

using Rng = std::mt19937_64;

/// Scores are clipped to this magnitude before the sigmoid.
inline constexpr double kScoreClip = 30.0;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic hash of a seed and the exact bits of a vector.
inline std::uint64_t hash_vector(std::uint64_t seed, const Eigen::Ref<const Vector>& x) {
    std::uint64_t h = splitmix64(seed);
    for (long i = 0; i < x.size(); ++i) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(x[i]));
    return h;
}

/// Column-wise softmax followed by the floor map.
inline Matrix floored_softmax(const Matrix& logits, double gamma) {
    Matrix out(logits.rows(), logits.cols());
    const double scale = 1.0 - static_cast<double>(logits.rows()) * gamma;
    for (long j = 0; j < logits.cols(); ++j) {
        const double mx = logits.col(j).maxCoeff();
        Vector e = (logits.col(j).array() - mx).exp().matrix();
        e /= e.sum();
        out.col(j) = (scale * e.array() + gamma).matrix();
    }
    return out;
}

inline Vector dirichlet(long k, double concentration, Rng& rng) {
    std::gamma_distribution<double> g(concentration, 1.0);
    Vector v(k);
    do {
        for (long i = 0; i < k; ++i) v[i] = g(rng);
    } while (!(v.sum() > 0.0));
    return v / v.sum();
}

inline Matrix gaussian_matrix(long rows, long cols, double stddev, Rng& rng) {
    std::normal_distribution<double> n(0.0, stddev);
    Matrix m(rows, cols);
    for (long j = 0; j < cols; ++j)
        for (long i = 0; i < rows; ++i) m(i, j) = n(rng);
    return m;
}

}  // namespace detail

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Representations

enum class RepKind { Strong, Weak };

/// Frozen feature map x -> floored softmax(A x + c [+ noise(x)]) onto the d_out-simplex.
/// Weak maps keep the first d_w rows of the strong projection and add Gaussian noise
/// that is a deterministic function of (seed, x).
struct RepresentationMap {
    RepKind kind = RepKind::Strong;
    Matrix projection;  // d_out x d_in
    Vector bias;        // d_out
    double noise_std = 0.0;
    std::uint64_t noise_seed = 0;
    double gamma = 1e-3;

    long input_dim() const { return projection.cols(); }
    long feature_dim() const { return projection.rows(); }

    Matrix features(const Matrix& inputs) const {
        if (inputs.rows() != input_dim())
            throw DimensionError("RepresentationMap: input dimension " + std::to_string(inputs.rows()) + ", expected " +
                                 std::to_string(input_dim()));
        Matrix pre = projection * inputs;
        pre.colwise() += bias;
        if (noise_std > 0.0) {
            for (long j = 0; j < inputs.cols(); ++j) {
                Rng rng(detail::hash_vector(noise_seed, inputs.col(j)));
                std::normal_distribution<double> n(0.0, noise_std);
                for (long i = 0; i < pre.rows(); ++i) pre(i, j) += n(rng);
            }
        }
        return detail::floored_softmax(pre, gamma);
    }

    Vector features(const Vector& x) const { return features(Matrix(x)).col(0); }
};

/// `scale` sets the spread of the pre-softmax features and hence how peaked they are.
inline RepresentationMap make_strong_representation(long d, long d_s, std::uint64_t seed, FloorConfig floor = {},
                                                    double scale = 1.0) {
    if (d < 1) throw ConfigError("representation: d must be >= 1");
    floor.validate(d_s);
    Rng rng(seed);
    RepresentationMap rep;
    rep.kind = RepKind::Strong;
    rep.projection = detail::gaussian_matrix(d_s, d, scale / std::sqrt(static_cast<double>(d)), rng);
    rep.bias = Vector::Zero(d_s);
    rep.gamma = floor.gamma;
    return rep;
}

inline RepresentationMap make_weak_representation(const RepresentationMap& strong, long d_w, double noise_std,
                                                  std::uint64_t seed) {
    if (d_w < 2 || d_w >= strong.feature_dim())
        throw ConfigError("weak representation: need 2 <= d_w < d_s, got d_w=" + std::to_string(d_w));
    if (!(noise_std > 0.0)) throw ConfigError("weak representation: noise_std must be positive");
    RepresentationMap rep;
    rep.kind = RepKind::Weak;
    rep.projection = strong.projection.topRows(d_w);
    rep.bias = strong.bias.head(d_w);
    rep.noise_std = noise_std;
    rep.noise_seed = seed;
    rep.gamma = strong.gamma;
    return rep;
}

// ---------------------------------------------------------------------------
// Heads

/// Column-stochastic head: output M z. Every column of M lies on the floored
/// k-simplex, so M z is a floored distribution for any z on the simplex, and
/// the set of such heads is convex.
class StochasticHead {
public:
    StochasticHead() = default;

    static StochasticHead checked(Matrix m, double gamma) {
        validate(m, gamma);
        StochasticHead h;
        h.m_ = std::move(m);
        h.gamma_ = gamma;
        return h;
    }

    static void validate(const Matrix& m, double gamma) {
        FloorConfig{gamma}.validate(m.rows());
        for (long j = 0; j < m.cols(); ++j) ProbVec::validate(m.col(j), gamma);
    }

    /// Every column uniform.
    static StochasticHead uniform(long k, long d_s, double gamma) {
        return checked(Matrix::Constant(k, d_s, 1.0 / static_cast<double>(k)), gamma);
    }

    /// Columns drawn from a symmetric Dirichlet, then floored.
    static StochasticHead random(long k, long d_s, double gamma, Rng& rng, double concentration = 1.0) {
        Matrix m(k, d_s);
        for (long j = 0; j < d_s; ++j) m.col(j) = detail::apply_floor(detail::dirichlet(k, concentration, rng), gamma);
        return checked(std::move(m), gamma);
    }

    long classes() const { return m_.rows(); }
    long feature_dim() const { return m_.cols(); }
    double gamma() const { return gamma_; }
    const Matrix& matrix() const { return m_; }

    Matrix forward(const Matrix& z) const {
        if (z.rows() != feature_dim()) throw DimensionError("StochasticHead: feature dimension mismatch");
        return m_ * z;
    }

    /// Gradient w.r.t. the flattened parameters given dLoss/dOutput.
    Vector backward(const Matrix& z, const Matrix& /*outputs*/, const Matrix& d_out) const {
        const Matrix g = d_out * z.transpose();
        return Eigen::Map<const Vector>(g.data(), g.size());
    }

    Vector params() const { return Eigen::Map<const Vector>(m_.data(), m_.size()); }

    /// No validation: optimizers probe points outside the class.
    StochasticHead with_params(const Vector& p) const {
        StochasticHead h = *this;
        h.m_ = Eigen::Map<const Matrix>(p.data(), m_.rows(), m_.cols());
        return h;
    }

    /// Projects the flattened parameters onto the class.
    Vector project(const Vector& p) const {
        const Matrix m = Eigen::Map<const Matrix>(p.data(), m_.rows(), m_.cols());
        const Matrix proj = project_column_stochastic(m, FloorConfig{gamma_});
        return Eigen::Map<const Vector>(proj.data(), proj.size());
    }

    StochasticHead operator*(double s) const { return with_params(params() * s); }
    StochasticHead operator+(const StochasticHead& o) const { return with_params(params() + o.params()); }

private:
    Matrix m_;
    double gamma_ = 1e-3;
};

/// Unconstrained head: floored softmax(W z + b).
class LogitHead {
public:
    LogitHead() = default;

    LogitHead(Matrix w, Vector b, double gamma) : w_(std::move(w)), b_(std::move(b)), gamma_(gamma) {
        if (b_.size() != w_.rows()) throw DimensionError("LogitHead: bias size mismatch");
        FloorConfig{gamma_}.validate(w_.rows());
    }

    static LogitHead zeros(long k, long d_s, double gamma) { return {Matrix::Zero(k, d_s), Vector::Zero(k), gamma}; }

    static LogitHead random(long k, long d_s, double gamma, Rng& rng, double stddev = 0.01) {
        return {detail::gaussian_matrix(k, d_s, stddev, rng), Vector::Zero(k), gamma};
    }

    long classes() const { return w_.rows(); }
    long feature_dim() const { return w_.cols(); }
    double gamma() const { return gamma_; }
    const Matrix& weights() const { return w_; }
    const Vector& bias() const { return b_; }

    Matrix forward(const Matrix& z) const {
        if (z.rows() != feature_dim()) throw DimensionError("LogitHead: feature dimension mismatch");
        Matrix u = w_ * z;
        u.colwise() += b_;
        return detail::floored_softmax(u, gamma_);
    }

    Vector backward(const Matrix& z, const Matrix& outputs, const Matrix& d_out) const {
        const double scale = 1.0 - static_cast<double>(classes()) * gamma_;
        const Matrix soft = ((outputs.array() - gamma_) / scale).matrix();
        Matrix d_logits(outputs.rows(), outputs.cols());
        for (long j = 0; j < outputs.cols(); ++j) {
            const double inner = soft.col(j).dot(d_out.col(j));
            d_logits.col(j) = (scale * soft.col(j).array() * (d_out.col(j).array() - inner)).matrix();
        }
        const Matrix gw = d_logits * z.transpose();
        const Vector gb = d_logits.rowwise().sum();
        Vector g(gw.size() + gb.size());
        g << Eigen::Map<const Vector>(gw.data(), gw.size()), gb;
        return g;
    }

    Vector params() const {
        Vector p(w_.size() + b_.size());
        p << Eigen::Map<const Vector>(w_.data(), w_.size()), b_;
        return p;
    }

    LogitHead with_params(const Vector& p) const {
        LogitHead h = *this;
        h.w_ = Eigen::Map<const Matrix>(p.data(), w_.rows(), w_.cols());
        h.b_ = p.tail(b_.size());
        return h;
    }

private:
    Matrix w_;
    Vector b_;
    double gamma_ = 1e-3;
};

template <class H>
concept Head = requires(const H& h, const Matrix& z, const Vector& p) {
    { h.forward(z) } -> std::convertible_to<Matrix>;
    { h.backward(z, z, z) } -> std::convertible_to<Vector>;
    { h.params() } -> std::convertible_to<Vector>;
    { h.with_params(p) } -> std::same_as<H>;
    { h.classes() } -> std::convertible_to<long>;
    { h.gamma() } -> std::convertible_to<double>;
};

using AnyHead = std::variant<StochasticHead, LogitHead>;

// ---------------------------------------------------------------------------
// Inputs in feature space: single points, or (chosen, rejected) pairs.

struct FeatureSet {
    Matrix primary;   // d_s x n; chosen side in pairwise mode
    Matrix rejected;  // d_s x n in pairwise mode, empty otherwise

    bool pairwise() const { return rejected.size() != 0; }
    long size() const { return primary.cols(); }

    static FeatureSet points(Matrix z) { return {std::move(z), Matrix()}; }
    static FeatureSet pairs(Matrix chosen, Matrix rejected) {
        if (chosen.rows() != rejected.rows() || chosen.cols() != rejected.cols())
            throw DimensionError("FeatureSet: chosen/rejected shape mismatch");
        return {std::move(chosen), std::move(rejected)};
    }

    FeatureSet select(const std::vector<long>& idx) const {
        FeatureSet out;
        out.primary.resize(primary.rows(), static_cast<long>(idx.size()));
        if (pairwise()) out.rejected.resize(rejected.rows(), static_cast<long>(idx.size()));
        for (std::size_t j = 0; j < idx.size(); ++j) {
            out.primary.col(static_cast<long>(j)) = primary.col(idx[j]);
            if (pairwise()) out.rejected.col(static_cast<long>(j)) = rejected.col(idx[j]);
        }
        return out;
    }
};

/// Score of a two-class output: log(p1 / p0). Monotone in the class-1 probability.
inline double model_score(const Eigen::Ref<const Vector>& p) {
    if (p.size() != 2) throw UnsupportedModeError("pairwise scoring needs k = 2, got k=" + std::to_string(p.size()));
    return std::log(p[1]) - std::log(p[0]);
}

/// Sigmoid of the (clipped) score difference between chosen and rejected.
inline double pairwise_score(double chosen_score, double rejected_score) {
    return sigmoid(std::clamp(chosen_score - rejected_score, -kScoreClip, kScoreClip));
}

/// Two-class distribution (1 - s, s) of a pair score s, floored.
inline ProbVec pair_probvec(double s, double gamma) {
    Vector q(2);
    q << 1.0 - s, s;
    return ProbVec::checked(detail::apply_floor(q, gamma), gamma);
}

namespace detail {

struct PairCache {
    Matrix chosen_out, rejected_out;
    Vector delta;  // clipped score difference
    Vector s;      // sigmoid(delta)
};

inline Matrix pair_outputs(const Matrix& chosen_out, const Matrix& rejected_out, double gamma, PairCache* cache) {
    if (chosen_out.rows() != 2)
        throw UnsupportedModeError("pairwise mode needs k = 2, got k=" + std::to_string(chosen_out.rows()));
    const long n = chosen_out.cols();
    Matrix q(2, n);
    Vector delta(n), s(n);
    for (long j = 0; j < n; ++j) {
        const double d = model_score(chosen_out.col(j)) - model_score(rejected_out.col(j));
        delta[j] = std::clamp(d, -kScoreClip, kScoreClip);
        s[j] = sigmoid(delta[j]);
        q(0, j) = (1.0 - 2.0 * gamma) * (1.0 - s[j]) + gamma;
        q(1, j) = (1.0 - 2.0 * gamma) * s[j] + gamma;
    }
    if (cache) *cache = {chosen_out, rejected_out, std::move(delta), std::move(s)};
    return q;
}

}  // namespace detail

/// Outputs of a head on a feature set: k x n for points, 2 x n pair distributions for pairs.
template <Head H>
Matrix head_outputs(const H& head, const FeatureSet& f) {
    if (!f.pairwise()) return head.forward(f.primary);
    return detail::pair_outputs(head.forward(f.primary), head.forward(f.rejected), head.gamma(), nullptr);
}

/// Gradient of sum_j <d_out_j, output_j> w.r.t. the head parameters.
template <Head H>
Vector head_backward(const H& head, const FeatureSet& f, const Matrix& d_out) {
    if (!f.pairwise()) return head.backward(f.primary, head.forward(f.primary), d_out);
    detail::PairCache c;
    detail::pair_outputs(head.forward(f.primary), head.forward(f.rejected), head.gamma(), &c);
    const long n = f.size();
    const double gamma = head.gamma();
    Matrix d_chosen(2, n), d_rejected(2, n);
    for (long j = 0; j < n; ++j) {
        double d_delta = (1.0 - 2.0 * gamma) * c.s[j] * (1.0 - c.s[j]) * (d_out(1, j) - d_out(0, j));
        if (std::abs(c.delta[j]) >= kScoreClip) d_delta = 0.0;
        // d score / d p = (-1/p0, 1/p1)
        d_chosen(0, j) = -d_delta / c.chosen_out(0, j);
        d_chosen(1, j) = d_delta / c.chosen_out(1, j);
        d_rejected(0, j) = d_delta / c.rejected_out(0, j);
        d_rejected(1, j) = -d_delta / c.rejected_out(1, j);
    }
    return head.backward(f.primary, c.chosen_out, d_chosen) + head.backward(f.rejected, c.rejected_out, d_rejected);
}

inline Matrix head_outputs(const AnyHead& head, const FeatureSet& f) {
    return std::visit([&](const auto& h) { return head_outputs(h, f); }, head);
}

inline std::vector<ProbVec> to_probvecs(const Matrix& outputs, double gamma) {
    std::vector<ProbVec> out;
    out.reserve(static_cast<std::size_t>(outputs.cols()));
    for (long j = 0; j < outputs.cols(); ++j) out.push_back(ProbVec::checked(outputs.col(j), gamma));
    return out;
}

inline double head_gamma(const AnyHead& head) {
    return std::visit([](const auto& h) { return h.gamma(); }, head);
}

// ---------------------------------------------------------------------------
// Models: a frozen representation followed by a head.

/// Raw inputs, one column per point; `rejected` is non-empty in pairwise mode.
struct InputSet {
    Matrix primary;
    Matrix rejected;

    bool pairwise() const { return rejected.size() != 0; }
    long size() const { return primary.cols(); }
};

struct Model {
    std::shared_ptr<const RepresentationMap> rep;
    AnyHead head;

    FeatureSet features(const InputSet& in) const {
        if (!in.pairwise()) return FeatureSet::points(rep->features(in.primary));
        return FeatureSet::pairs(rep->features(in.primary), rep->features(in.rejected));
    }

    Matrix outputs(const InputSet& in) const { return head_outputs(head, features(in)); }
    double gamma() const { return head_gamma(head); }
};

/// Evaluates rep followed by head on every input; outputs are floored ProbVecs.
template <Head H>
std::vector<ProbVec> eval_model(const RepresentationMap& rep, const H& head, const InputSet& inputs) {
    if (rep.feature_dim() != head.feature_dim())
        throw DimensionError("eval_model: head expects " + std::to_string(head.feature_dim()) +
                             " features, representation gives " + std::to_string(rep.feature_dim()));
    const FeatureSet f = inputs.pairwise()
                             ? FeatureSet::pairs(rep.features(inputs.primary), rep.features(inputs.rejected))
                             : FeatureSet::points(rep.features(inputs.primary));
    return to_probvecs(head_outputs(head, f), head.gamma());
}

/// Samples a column-stochastic head M* so that F* = M* o h_s lies in the strong class.
/// Smaller `concentration` gives more peaked columns.
inline StochasticHead make_realizable_truth(const RepresentationMap& rep_strong, long k, std::uint64_t seed,
                                            double concentration = 0.5) {
    Rng rng(detail::splitmix64(seed ^ 0x7275746800000000ULL));
    return StochasticHead::random(k, rep_strong.feature_dim(), rep_strong.gamma, rng, concentration);
}

/// Fraction of pairs whose class-1 probability is strictly above 1/2.
inline double accuracy(std::span<const double> pair_scores) {
    if (pair_scores.empty()) throw InvalidWeightsError("accuracy: empty pair set");
    std::size_t correct = 0;
    for (double s : pair_scores) correct += s > 0.5 ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(pair_scores.size());
}

/// Accuracy of 2 x n pair distributions (row 1 is the "chosen wins" probability).
/// Compares the two rows directly so the floor map cannot turn an exact tie into a win.
inline double accuracy(const Matrix& pair_outputs) {
    if (pair_outputs.rows() != 2) throw UnsupportedModeError("accuracy: pairwise outputs must have two rows");
    if (pair_outputs.cols() == 0) throw InvalidWeightsError("accuracy: empty pair set");
    long correct = 0;
    for (long j = 0; j < pair_outputs.cols(); ++j) correct += pair_outputs(1, j) > pair_outputs(0, j) ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(pair_outputs.cols());
}

}  // namespace w2sg
