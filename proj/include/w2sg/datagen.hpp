#pragma once

// Synthetic tasks: ground-truth, weak-supervision and test splits in multiclass or
// pairwise-preference mode, weak labels and label-swap noise.

#include <algorithm>
#include <numeric>
#include <ostream>

#include "training.hpp"

namespace w2sg {

enum class TaskMode { Multiclass, Pairwise };

inline std::string_view to_string(TaskMode m) { return m == TaskMode::Multiclass ? "multiclass" : "pairwise"; }

inline TaskMode parse_task_mode(std::string_view s) {
    if (s == "multiclass") return TaskMode::Multiclass;
    if (s == "pairwise") return TaskMode::Pairwise;
    throw ConfigError("task.mode must be 'multiclass' or 'pairwise', got '" + std::string(s) + "'");
}

struct TaskSpec {
    TaskMode mode = TaskMode::Pairwise;
    long k = 2;
    long d = 32;
    long d_s = 16;
    long d_w = 6;
    long n_truth = 4000;
    long n_weaklabel = 4000;
    long n_test = 4000;
    std::uint64_t seed = 0;

    /// Spread of the strong pre-softmax features.
    double feature_scale = 4.0;
    /// Gaussian noise added to the weak pre-softmax features.
    double weak_noise = 1.0;
    /// Scale of the ground-truth logit weights (pairwise mode).
    double truth_scale = 8.0;
    /// Dirichlet concentration of the realizable ground-truth head (multiclass mode).
    double truth_concentration = 0.3;
    /// Pairs are kept only when |F*(pair) - 1/2| exceeds this margin.
    double pair_margin = 0.1;

    void validate(double gamma) const {
        if (k < 2) throw ConfigError("task.k must be >= 2");
        if (mode == TaskMode::Pairwise && k != 2) throw ConfigError("task.k must be 2 in pairwise mode");
        if (d < 1) throw ConfigError("task.d must be >= 1");
        if (d_w < 2 || d_w >= d_s) throw ConfigError("task.d_w must satisfy 2 <= d_w < d_s");
        if (n_truth < 1 || n_weaklabel < 1 || n_test < 1) throw ConfigError("task split sizes must be >= 1");
        if (!(weak_noise > 0.0)) throw ConfigError("task.weak_noise must be positive");
        if (!(pair_margin >= 0.0 && pair_margin < 0.5)) throw ConfigError("task.pair_margin must be in [0, 0.5)");
        FloorConfig{gamma}.validate(std::max(k, d_s));
    }
};

struct NoiseSpec {
    double swap_fraction = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(swap_fraction >= 0.0 && swap_fraction <= 1.0)) throw ConfigError("noise swap fraction must be in [0, 1]");
    }
};

struct Dataset {
    std::string split;
    InputSet inputs;
    Matrix truth_labels;  // k x n, F* outputs
    std::vector<std::uint64_t> ids;

    long size() const { return inputs.size(); }
};

struct Task {
    TaskSpec spec;
    double gamma = 1e-3;
    std::shared_ptr<const RepresentationMap> strong;
    std::shared_ptr<const RepresentationMap> weak;
    Model truth;
    Dataset truth_set;
    Dataset weak_set;
    Dataset test_set;
};

namespace detail {

inline Matrix standard_normal(long d, long n, Rng& rng) { return gaussian_matrix(d, n, 1.0, rng); }

inline Dataset make_point_split(const std::string& name, long n, const Task& task, Rng& rng, std::uint64_t& next_id) {
    Dataset ds;
    ds.split = name;
    ds.inputs.primary = standard_normal(task.spec.d, n, rng);
    ds.truth_labels = task.truth.outputs(ds.inputs);
    for (long j = 0; j < n; ++j) ds.ids.push_back(next_id++);
    return ds;
}

inline Dataset make_pair_split(const std::string& name, long n, const Task& task, Rng& rng, std::uint64_t& next_id) {
    Dataset ds;
    ds.split = name;
    ds.inputs.primary.resize(task.spec.d, n);
    ds.inputs.rejected.resize(task.spec.d, n);
    const double threshold = 0.5 + task.spec.pair_margin;
    long filled = 0;
    long attempts = 0;
    const long batch = std::max<long>(64, n);
    while (filled < n) {
        if (attempts > 1000 * n + 100000)
            throw ConfigError("pairwise generation: margin filter rejects almost every pair; lower task.pair_margin");
        const Matrix a = standard_normal(task.spec.d, batch, rng);
        const Matrix b = standard_normal(task.spec.d, batch, rng);
        const Matrix pa = task.truth.outputs(InputSet{a, Matrix()});
        const Matrix pb = task.truth.outputs(InputSet{b, Matrix()});
        for (long j = 0; j < batch && filled < n; ++j, ++attempts) {
            const double s = pairwise_score(model_score(pa.col(j)), model_score(pb.col(j)));
            if (std::max(s, 1.0 - s) <= threshold) continue;
            const bool a_wins = s > 0.5;
            ds.inputs.primary.col(filled) = a_wins ? a.col(j) : b.col(j);
            ds.inputs.rejected.col(filled) = a_wins ? b.col(j) : a.col(j);
            ++filled;
        }
    }
    ds.truth_labels = task.truth.outputs(ds.inputs);
    for (long j = 0; j < n; ++j) ds.ids.push_back(next_id++);
    return ds;
}

}  // namespace detail

/// Builds the representations, the ground truth and the three disjoint splits.
/// Every input is a fresh Gaussian draw, so the splits are disjoint with probability one
/// (and checked by hash in the tests).
inline Task generate_task(const TaskSpec& spec, FloorConfig floor = {}) {
    spec.validate(floor.gamma);
    Task task;
    task.spec = spec;
    task.gamma = floor.gamma;
    const std::uint64_t base = detail::splitmix64(spec.seed);
    auto strong = std::make_shared<RepresentationMap>(
        make_strong_representation(spec.d, spec.d_s, detail::splitmix64(base ^ 1), floor, spec.feature_scale));
    auto weak = std::make_shared<RepresentationMap>(
        make_weak_representation(*strong, spec.d_w, spec.weak_noise, detail::splitmix64(base ^ 2)));
    task.strong = strong;
    task.weak = weak;
    task.truth.rep = strong;
    if (spec.mode == TaskMode::Multiclass) {
        task.truth.head = make_realizable_truth(*strong, spec.k, base ^ 3, spec.truth_concentration);
    } else {
        Rng rng(detail::splitmix64(base ^ 3));
        task.truth.head =
            LogitHead(detail::gaussian_matrix(2, spec.d_s, spec.truth_scale, rng), Vector::Zero(2), floor.gamma);
    }

    Rng rng(detail::splitmix64(base ^ 4));
    std::uint64_t next_id = 0;
    auto make = spec.mode == TaskMode::Multiclass ? detail::make_point_split : detail::make_pair_split;
    task.truth_set = make("truth", spec.n_truth, task, rng, next_id);
    task.weak_set = make("weak", spec.n_weaklabel, task, rng, next_id);
    task.test_set = make("test", spec.n_test, task, rng, next_id);
    return task;
}

inline Vector uniform_weights(long n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

/// Head class used for the ceiling and weak models: the convex stochastic class in
/// multiclass mode (F* is realizable there), logit heads for pairs.
inline HeadClass default_head_class(TaskMode mode) {
    return mode == TaskMode::Multiclass ? HeadClass::Stochastic : HeadClass::Logit;
}

/// Fits a head on `rep` features of the ground-truth split with forward CE against the
/// F* labels.
inline FitResult fit_on_truth(const Task& task, const std::shared_ptr<const RepresentationMap>& rep,
                              const TrainConfig& cfg, std::optional<HeadClass> cls = std::nullopt) {
    const Model probe{rep, LogitHead::zeros(task.spec.k, rep->feature_dim(), task.gamma)};
    const FeatureSet f = probe.features(task.truth_set.inputs);
    return fit_head(LossKind::ForwardCE, task.truth_set.truth_labels, f, uniform_weights(f.size()),
                    cls.value_or(default_head_class(task.spec.mode)), cfg, FloorConfig{task.gamma});
}

/// Soft labels of `weak_model` on `dataset`, floored, as a k x n matrix.
inline Matrix weak_label_matrix(const Model& weak_model, const Dataset& dataset) {
    return weak_model.outputs(dataset.inputs);
}

/// Soft labels of `weak_model` on `dataset` as a uniform-weight DatasetEval (role Weak).
inline DatasetEval weak_labels(const Model& weak_model, const Dataset& dataset) {
    DatasetEval d = DatasetEval::uniform(static_cast<std::size_t>(dataset.size()));
    d.set(Role::Weak, to_probvecs(weak_label_matrix(weak_model, dataset), weak_model.gamma()));
    return d;
}

/// Reverses the two-class label vector of exactly round(p n) points, chosen by a
/// seeded shuffle. Applying the same spec twice restores the input.
inline Matrix inject_swap_noise(const Matrix& labels, const NoiseSpec& noise) {
    noise.validate();
    if (labels.rows() != 2)
        throw UnsupportedModeError("swap noise is defined for two-class (pairwise) labels only, got k=" +
                                   std::to_string(labels.rows()));
    const long n = labels.cols();
    const long count = std::lround(noise.swap_fraction * static_cast<double>(n));
    std::vector<long> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0L);
    Rng rng(detail::splitmix64(noise.seed ^ 0x737761700000ULL));
    std::shuffle(order.begin(), order.end(), rng);
    Matrix out = labels;
    for (long i = 0; i < count; ++i) out.col(order[static_cast<std::size_t>(i)]).reverseInPlace();
    return out;
}

/// Points fall into `clusters` groups; each group has a dominant and a minor class and
/// every point carries a floored one-hot label, the dominant one for a `major` share of the
/// group. Features are floored cluster indicators, so a head can emit a near-deterministic
/// output per cluster.
struct BimodalFixture {
    FeatureSet features;
    Matrix supervisor;  // k x n
    Vector weights;
    std::vector<long> dominant;  // per point
    std::vector<long> minor;
};

inline BimodalFixture make_bimodal_fixture(std::uint64_t seed, long k = 4, long clusters = 5, long per_cluster = 10,
                                           double major = 0.7, FloorConfig floor = {}) {
    if (k < 2 || clusters < 1 || per_cluster < 2) throw ConfigError("bimodal fixture: bad shape");
    if (!(major > 0.5 && major < 1.0)) throw ConfigError("bimodal fixture: major share must be in (0.5, 1)");
    floor.validate(std::max(k, clusters));
    Rng rng(detail::splitmix64(seed ^ 0x62696d6f64616cULL));
    const long n = clusters * per_cluster;
    const long n_major = std::lround(major * static_cast<double>(per_cluster));
    BimodalFixture f;
    f.features.primary.resize(clusters, n);
    f.supervisor.resize(k, n);
    std::vector<long> classes(static_cast<std::size_t>(k));
    std::iota(classes.begin(), classes.end(), 0L);
    for (long c = 0; c < clusters; ++c) {
        std::shuffle(classes.begin(), classes.end(), rng);
        Vector z = Vector::Zero(clusters);
        z[c] = 1.0;
        z = detail::apply_floor(z, floor.gamma);
        for (long i = 0; i < per_cluster; ++i) {
            const long j = c * per_cluster + i;
            const long label = i < n_major ? classes[0] : classes[1];
            Vector y = Vector::Zero(k);
            y[label] = 1.0;
            f.features.primary.col(j) = z;
            f.supervisor.col(j) = detail::apply_floor(y, floor.gamma);
            f.dominant.push_back(classes[0]);
            f.minor.push_back(classes[1]);
        }
    }
    f.weights = uniform_weights(n);
    return f;
}

/// CSV layout, one row per point:
///   id,split,x_0..x_{d-1}[,r_0..r_{d-1}],p_0..p_{k-1}
/// r_* (rejected input) appears in pairwise mode only; p_* are ground-truth probabilities.
inline void export_csv(std::ostream& out, const Task& task) {
    const long d = task.spec.d;
    const bool pairs = task.spec.mode == TaskMode::Pairwise;
    out << "id,split";
    for (long i = 0; i < d; ++i) out << ",x_" << i;
    if (pairs)
        for (long i = 0; i < d; ++i) out << ",r_" << i;
    for (long c = 0; c < task.spec.k; ++c) out << ",p_" << c;
    out << '\n';
    out.precision(17);
    for (const Dataset* ds : {&task.truth_set, &task.weak_set, &task.test_set}) {
        for (long j = 0; j < ds->size(); ++j) {
            out << ds->ids[static_cast<std::size_t>(j)] << ',' << ds->split;
            for (long i = 0; i < d; ++i) out << ',' << ds->inputs.primary(i, j);
            if (pairs)
                for (long i = 0; i < d; ++i) out << ',' << ds->inputs.rejected(i, j);
            for (long c = 0; c < task.spec.k; ++c) out << ',' << ds->truth_labels(c, j);
            out << '\n';
        }
    }
}

}  // namespace w2sg
