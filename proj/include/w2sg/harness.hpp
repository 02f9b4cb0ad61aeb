#pragma once

// Config-driven experiment runner: JSON configs, sweeps over seeds, losses, noise levels
// and sample sizes, the theory suite, report files and plot-ready tables.

#include <charconv>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "theory.hpp"

namespace w2sg {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int {
    kExitOk = 0,
    kExitTheoryViolation = 2,
    kExitConfigError = 3,
    kExitOptimizationFailure = 4,
};

// ---------------------------------------------------------------------------
// Config

struct TheoryConfig {
    long n_triples = 1000;
    std::vector<long> triple_ks{2, 3, 5};
    long triple_points = 8;
    std::uint64_t triple_seed = 0;
    /// Injected precondition constant for the large-disagreement check (unset = C2).
    std::optional<double> disagreement_constant;

    std::vector<long> realizable_ks{2, 3, 5};
    std::vector<std::uint64_t> realizable_seeds;  // default 0..19
    RealizableOptions realizable;
    TrainConfig realizable_train;

    std::vector<long> gap_n_grid{64, 256, 1024, 4096};
    std::vector<std::uint64_t> gap_seeds;  // default 0..19
    RealizableOptions gap_setting;
    TrainConfig gap_train;

    TheoryConfig() {
        for (std::uint64_t s = 0; s < 20; ++s) realizable_seeds.push_back(s), gap_seeds.push_back(s);
        // A richer class (5 x 64 parameters) makes the O(1/n) estimation term dominate the
        // zero-mean first-order fluctuation of the gap.
        gap_setting.k = 5;
        gap_setting.d_s = 64;
        gap_setting.n_points = 2000;
        gap_train.max_steps = 2000;
    }
};

struct ExperimentConfig {
    TaskSpec task;
    std::vector<LossKind> losses;
    std::optional<ConfidenceConfig> confidence;
    std::vector<double> noise_grid{0.0};
    /// Student sample sizes drawn from the weak-label split; empty = the whole split.
    std::vector<long> n_grid;
    std::vector<std::uint64_t> seeds;
    HeadClass student_class = HeadClass::Logit;
    TrainConfig train;
    /// Weak and ceiling fits on the ground-truth split.
    TrainConfig teacher_train;
    FloorConfig floor;
    std::string output_dir = "out";
    /// Wall-clock budget per fit in seconds; 0 disables the guard.
    double cell_time_limit_seconds = 60.0;
    TheoryConfig theory;

    void validate() const {
        task.validate(floor.gamma);
        if (losses.empty()) throw ConfigError("config.losses: must not be empty");
        if (seeds.empty()) throw ConfigError("config.seeds: must not be empty");
        if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
            throw ConfigError("config.seeds: duplicate seed");
        if (noise_grid.empty()) throw ConfigError("config.noise_grid: must not be empty");
        for (double p : noise_grid) {
            if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("config.noise_grid: swap fraction must be in [0, 1]");
            if (p > 0.0 && task.mode != TaskMode::Pairwise)
                throw ConfigError("config.noise_grid: swap noise needs task.mode = pairwise");
        }
        for (long n : n_grid)
            if (n < 1) throw ConfigError("config.n_grid: sample sizes must be >= 1");
        if (confidence) {
            confidence->validate();
            if (task.k != 2) throw ConfigError("config.confidence: needs task.k = 2");
        }
        train.validate();
        try {
            teacher_train.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("teacher_") + e.what());
        }
        if (cell_time_limit_seconds < 0.0) throw ConfigError("config.cell_time_limit_seconds: must be >= 0");
        if (output_dir.empty()) throw ConfigError("config.output_dir: must not be empty");
    }
};

namespace detail {

/// Reads one JSON object, remembering which keys were consumed so unknown keys can be
/// reported with their full path.
class ConfigReader {
public:
    ConfigReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_, "expected an object");
    }

    [[noreturn]] static void fail(const std::string& path, const std::string& what) {
        throw ConfigError(path + ": " + what);
    }

    bool has(const char* key) const { return j_.contains(key); }

    std::string path(const char* key) const { return path_ + "." + key; }

    template <class T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        used_.insert(key);
        out = convert<T>(j_.at(key), path(key));
    }

    template <class T>
    T required(const char* key) {
        if (!j_.contains(key)) fail(path(key), "required field is missing");
        T out{};
        get(key, out);
        return out;
    }

    ConfigReader child(const char* key) {
        used_.insert(key);
        return ConfigReader(j_.at(key), path(key));
    }

    const json& raw(const char* key) {
        used_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!used_.count(key)) fail(path_ + "." + key, "unknown field");
    }

    template <class T>
    static T convert(const json& v, const std::string& where) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) fail(where, "expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
                fail(where, "expected a non-negative integer");
            return v.get<std::uint64_t>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) fail(where, "expected an integer");
            return static_cast<T>(v.get<long long>());
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) fail(where, "expected a number");
            return v.get<double>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) fail(where, "expected a string");
            return v.get<std::string>();
        } else {
            if (!v.is_array()) fail(where, "expected an array");
            T out;
            for (std::size_t i = 0; i < v.size(); ++i)
                out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
            return out;
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class F>
auto with_path(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        if (what.rfind("config.", 0) == 0) throw;
        // Library messages start with their field name, e.g. "task.k must be >= 2".
        const auto dot = what.find('.');
        const auto space = what.find(' ');
        if (dot != std::string::npos && dot < space) throw ConfigError(path + "." + what);
        throw ConfigError(path + ": " + what);
    }
}

inline void read_train(ConfigReader r, TrainConfig& cfg) {
    r.get("learning_rate", cfg.learning_rate);
    r.get("max_steps", cfg.max_steps);
    r.get("grad_tolerance", cfg.grad_tolerance);
    r.get("seed", cfg.seed);
    r.finish();
}

inline json write_train(const TrainConfig& cfg) {
    return {{"learning_rate", cfg.learning_rate},
            {"max_steps", cfg.max_steps},
            {"grad_tolerance", cfg.grad_tolerance},
            {"seed", cfg.seed}};
}

inline void read_realizable(ConfigReader r, RealizableOptions& o) {
    r.get("k", o.k);
    r.get("n_points", o.n_points);
    r.get("d", o.d);
    r.get("d_s", o.d_s);
    r.get("d_w", o.d_w);
    r.get("feature_scale", o.feature_scale);
    r.get("weak_noise", o.weak_noise);
    r.get("truth_concentration", o.truth_concentration);
    r.get("ceiling_error", o.ceiling_error);
    r.finish();
}

inline json write_realizable(const RealizableOptions& o) {
    return {{"k", o.k},
            {"n_points", o.n_points},
            {"d", o.d},
            {"d_s", o.d_s},
            {"d_w", o.d_w},
            {"feature_scale", o.feature_scale},
            {"weak_noise", o.weak_noise},
            {"truth_concentration", o.truth_concentration},
            {"ceiling_error", o.ceiling_error}};
}

inline HeadClass parse_head_class(const std::string& s, const std::string& where) {
    if (s == "stochastic") return HeadClass::Stochastic;
    if (s == "logit") return HeadClass::Logit;
    ConfigReader::fail(where, "expected 'stochastic' or 'logit', got '" + s + "'");
}

}  // namespace detail

/// Parses an experiment config. Errors carry the offending field path, e.g.
/// "config.task.k: expected an integer".
inline ExperimentConfig parse_config(const json& j) {
    using detail::ConfigReader;
    ExperimentConfig c;
    ConfigReader r(j, "config");

    if (r.has("floor")) {
        ConfigReader f = r.child("floor");
        f.get("gamma", c.floor.gamma);
        f.finish();
    }

    ConfigReader t = r.child("task");
    if (!j.contains("task")) ConfigReader::fail("config.task", "required field is missing");
    std::string mode = std::string(to_string(c.task.mode));
    t.get("mode", mode);
    c.task.mode = detail::with_path("config.task.mode", [&] { return parse_task_mode(mode); });
    t.get("k", c.task.k);
    t.get("d", c.task.d);
    t.get("d_s", c.task.d_s);
    t.get("d_w", c.task.d_w);
    t.get("n_truth", c.task.n_truth);
    t.get("n_weaklabel", c.task.n_weaklabel);
    t.get("n_test", c.task.n_test);
    t.get("feature_scale", c.task.feature_scale);
    t.get("weak_noise", c.task.weak_noise);
    t.get("truth_scale", c.task.truth_scale);
    t.get("truth_concentration", c.task.truth_concentration);
    t.get("pair_margin", c.task.pair_margin);
    t.finish();

    const auto loss_names = r.required<std::vector<std::string>>("losses");
    for (std::size_t i = 0; i < loss_names.size(); ++i)
        c.losses.push_back(detail::with_path("config.losses[" + std::to_string(i) + "]",
                                             [&] { return parse_loss_kind(loss_names[i]); }));
    if (std::set<LossKind>(c.losses.begin(), c.losses.end()).size() != c.losses.size())
        ConfigReader::fail("config.losses", "duplicate loss");

    if (r.has("confidence") && !j.at("confidence").is_null()) {
        ConfigReader cr = r.child("confidence");
        ConfidenceConfig conf;
        cr.get("alpha", conf.alpha);
        cr.get("threshold", conf.threshold);
        cr.finish();
        c.confidence = conf;
    } else if (r.has("confidence")) {
        r.raw("confidence");
    }

    r.get("noise_grid", c.noise_grid);
    r.get("n_grid", c.n_grid);
    c.seeds = r.required<std::vector<std::uint64_t>>("seeds");

    c.train = TrainConfig::defaults_for(HeadClass::Logit);
    if (r.has("train")) {
        ConfigReader tr = r.child("train");
        std::string cls = "logit";
        tr.get("head_class", cls);
        c.student_class = detail::parse_head_class(cls, "config.train.head_class");
        c.train = TrainConfig::defaults_for(c.student_class);
        tr.get("learning_rate", c.train.learning_rate);
        tr.get("max_steps", c.train.max_steps);
        tr.get("grad_tolerance", c.train.grad_tolerance);
        tr.get("seed", c.train.seed);
        tr.finish();
    }
    c.teacher_train = TrainConfig::defaults_for(default_head_class(c.task.mode));
    if (c.task.mode == TaskMode::Pairwise) c.teacher_train.learning_rate = c.train.learning_rate;
    c.teacher_train.max_steps = c.train.max_steps;
    if (r.has("teacher_train")) detail::read_train(r.child("teacher_train"), c.teacher_train);

    r.get("output_dir", c.output_dir);
    r.get("cell_time_limit_seconds", c.cell_time_limit_seconds);

    if (r.has("theory")) {
        ConfigReader th = r.child("theory");
        TheoryConfig& o = c.theory;
        th.get("n_triples", o.n_triples);
        th.get("triple_ks", o.triple_ks);
        th.get("triple_points", o.triple_points);
        th.get("triple_seed", o.triple_seed);
        if (th.has("disagreement_constant")) {
            double v = 0.0;
            th.get("disagreement_constant", v);
            o.disagreement_constant = v;
        }
        th.get("realizable_ks", o.realizable_ks);
        th.get("realizable_seeds", o.realizable_seeds);
        if (th.has("realizable")) detail::read_realizable(th.child("realizable"), o.realizable);
        if (th.has("realizable_train")) detail::read_train(th.child("realizable_train"), o.realizable_train);
        th.get("gap_n_grid", o.gap_n_grid);
        th.get("gap_seeds", o.gap_seeds);
        if (th.has("gap_setting")) detail::read_realizable(th.child("gap_setting"), o.gap_setting);
        if (th.has("gap_train")) detail::read_train(th.child("gap_train"), o.gap_train);
        th.finish();
        if (o.n_triples < 1 || o.triple_points < 1)
            ConfigReader::fail("config.theory", "triple corpus must be non-empty");
        for (long k : o.triple_ks)
            if (k < 2) ConfigReader::fail("config.theory.triple_ks", "k must be >= 2");
        for (long k : o.realizable_ks)
            if (k < 2) ConfigReader::fail("config.theory.realizable_ks", "k must be >= 2");
    }
    r.finish();
    c.theory.realizable.gamma = c.floor.gamma;
    c.theory.gap_setting.gamma = c.floor.gamma;
    detail::with_path("config", [&] {
        c.validate();
        return 0;
    });
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file '" + file.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + file.string() + "' is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

/// The effective config with every default spelled out. Keys are sorted, so the dump is canonical.
inline json to_json(const ExperimentConfig& c) {
    json losses = json::array();
    for (LossKind k : c.losses) losses.push_back(std::string(to_string(k)));
    json j{{"floor", {{"gamma", c.floor.gamma}}},
           {"task",
            {{"mode", std::string(to_string(c.task.mode))},
             {"k", c.task.k},
             {"d", c.task.d},
             {"d_s", c.task.d_s},
             {"d_w", c.task.d_w},
             {"n_truth", c.task.n_truth},
             {"n_weaklabel", c.task.n_weaklabel},
             {"n_test", c.task.n_test},
             {"feature_scale", c.task.feature_scale},
             {"weak_noise", c.task.weak_noise},
             {"truth_scale", c.task.truth_scale},
             {"truth_concentration", c.task.truth_concentration},
             {"pair_margin", c.task.pair_margin}}},
           {"losses", losses},
           {"noise_grid", c.noise_grid},
           {"n_grid", c.n_grid},
           {"seeds", c.seeds},
           {"train", detail::write_train(c.train)},
           {"teacher_train", detail::write_train(c.teacher_train)},
           {"output_dir", c.output_dir},
           {"cell_time_limit_seconds", c.cell_time_limit_seconds}};
    j["train"]["head_class"] = std::string(to_string(c.student_class));
    j["confidence"] =
        c.confidence ? json{{"alpha", c.confidence->alpha}, {"threshold", c.confidence->threshold}} : json(nullptr);
    const TheoryConfig& o = c.theory;
    j["theory"] = {{"n_triples", o.n_triples},
                   {"triple_ks", o.triple_ks},
                   {"triple_points", o.triple_points},
                   {"triple_seed", o.triple_seed},
                   {"realizable_ks", o.realizable_ks},
                   {"realizable_seeds", o.realizable_seeds},
                   {"realizable", detail::write_realizable(o.realizable)},
                   {"realizable_train", detail::write_train(o.realizable_train)},
                   {"gap_n_grid", o.gap_n_grid},
                   {"gap_seeds", o.gap_seeds},
                   {"gap_setting", detail::write_realizable(o.gap_setting)},
                   {"gap_train", detail::write_train(o.gap_train)}};
    if (o.disagreement_constant) j["theory"]["disagreement_constant"] = *o.disagreement_constant;
    return j;
}

/// Shifts every replication seed by `offset`.
inline void apply_seed_offset(ExperimentConfig& c, std::uint64_t offset) {
    for (auto& s : c.seeds) s += offset;
    for (auto& s : c.theory.realizable_seeds) s += offset;
    for (auto& s : c.theory.gap_seeds) s += offset;
    c.theory.triple_seed += offset;
}

// ---------------------------------------------------------------------------
// Small utilities

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

/// Shortest round-trip decimal; "nan" for missing values.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// NaN becomes JSON null.
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double json_number(const json& v) {
    return v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

struct MeanStd {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double std = std::numeric_limits<double>::quiet_NaN();
    long count = 0;
};

/// Mean and sample standard deviation of the finite entries.
inline MeanStd mean_std(const std::vector<double>& v) {
    std::vector<double> x;
    for (double d : v)
        if (std::isfinite(d)) x.push_back(d);
    MeanStd m;
    m.count = static_cast<long>(x.size());
    if (x.empty()) return m;
    m.mean = pairwise_sum(x) / static_cast<double>(x.size());
    std::vector<double> sq;
    for (double d : x) sq.push_back((d - m.mean) * (d - m.mean));
    m.std = x.size() > 1 ? std::sqrt(pairwise_sum(sq) / static_cast<double>(x.size() - 1)) : 0.0;
    return m;
}

/// Fraction of points where the argmax of `pred` matches the argmax of `truth`.
inline double top1_agreement(const Matrix& pred, const Matrix& truth) {
    if (pred.cols() == 0 || pred.cols() != truth.cols()) throw DimensionError("top1_agreement: shape mismatch");
    long hits = 0;
    for (long j = 0; j < pred.cols(); ++j) {
        long a = 0, b = 0;
        pred.col(j).maxCoeff(&a);
        truth.col(j).maxCoeff(&b);
        hits += a == b;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.cols());
}

inline double task_accuracy(const Task& task, const Matrix& outputs, const Dataset& ds) {
    return task.spec.mode == TaskMode::Pairwise ? accuracy(outputs) : top1_agreement(outputs, ds.truth_labels);
}

/// Mean over points of loss(kind, a_j, b_j).
inline double mean_loss(LossKind kind, const Matrix& a, const Matrix& b) {
    return output_loss(kind, a, b, uniform_weights(a.cols())).value;
}

// ---------------------------------------------------------------------------
// Loss-comparison runs

enum class Variant { Plain, Confidence };

inline std::string_view to_string(Variant v) { return v == Variant::Plain ? "plain" : "confidence"; }

struct CellKey {
    std::uint64_t seed = 0;
    Variant variant = Variant::Plain;
    LossKind loss = LossKind::ForwardKL;
    double noise = 0.0;
    long n = 0;  // 0 = the whole weak-label split

    auto tie() const { return std::tuple(seed, variant, loss, noise, n); }
    bool operator<(const CellKey& o) const { return tie() < o.tie(); }
};

struct CellRecord {
    CellKey key;
    std::string status = "ok";
    double acc_weak = 0.0, acc_ceiling = 0.0, acc_strong = 0.0;
    double kl_star_weak = 0.0, kl_star_strong = 0.0, ce_star_strong = 0.0;
    double kl_weak_strong = 0.0, kl_strong_weak = 0.0;
    double r_value = 0.0, r1_value = 0.0, squared_cross = 0.0;
    double residual_forward = 0.0, residual_reverse = 0.0, residual_squared = 0.0;
    double gain_ws = 0.0, gain_sw = 0.0, lower_ws = 0.0, lower_sw = 0.0;
    double projection_slack = std::numeric_limits<double>::quiet_NaN();
    double reverse_ce_slack = std::numeric_limits<double>::quiet_NaN();
    std::string projection_status = "not_applicable";
    std::string reverse_ce_status = "not_applicable";
    double final_loss = 0.0;
    int steps = 0;
    bool converged = false;
    double wall_time_s = 0.0;

    /// True when a hard invariant failed: an identity residual or a universal bound.
    bool hard_violation() const {
        if (status != "ok") return false;
        for (double r : {residual_forward, residual_reverse, residual_squared})
            if (!(std::abs(r) <= kIdentityTol)) return true;
        for (double s : {gain_ws, gain_sw, lower_ws, lower_sw})
            if (!(s >= -kBoundSlack)) return true;
        return false;
    }

    bool optimization_failure() const { return status != "ok"; }
};

/// CSV column order. wall_time_s is last and excluded from the stable hash.
inline const std::vector<std::string>& csv_columns() {
    static const std::vector<std::string> cols{"seed",
                                               "variant",
                                               "loss",
                                               "noise",
                                               "n",
                                               "status",
                                               "acc_weak",
                                               "acc_ceiling",
                                               "acc_strong",
                                               "kl_star_weak",
                                               "kl_star_strong",
                                               "ce_star_strong",
                                               "kl_weak_strong",
                                               "kl_strong_weak",
                                               "r",
                                               "r1",
                                               "squared_cross",
                                               "residual_forward",
                                               "residual_reverse",
                                               "residual_squared",
                                               "slack_gain_ws",
                                               "slack_gain_sw",
                                               "slack_lower_ws",
                                               "slack_lower_sw",
                                               "slack_projection",
                                               "status_projection",
                                               "slack_reverse_ce",
                                               "status_reverse_ce",
                                               "final_loss",
                                               "steps",
                                               "converged",
                                               "wall_time_s"};
    return cols;
}

inline std::vector<std::string> csv_fields(const CellRecord& r) {
    const auto f = format_number;
    return {std::to_string(r.key.seed),
            std::string(to_string(r.key.variant)),
            std::string(to_string(r.key.loss)),
            f(r.key.noise),
            std::to_string(r.key.n),
            r.status,
            f(r.acc_weak),
            f(r.acc_ceiling),
            f(r.acc_strong),
            f(r.kl_star_weak),
            f(r.kl_star_strong),
            f(r.ce_star_strong),
            f(r.kl_weak_strong),
            f(r.kl_strong_weak),
            f(r.r_value),
            f(r.r1_value),
            f(r.squared_cross),
            f(r.residual_forward),
            f(r.residual_reverse),
            f(r.residual_squared),
            f(r.gain_ws),
            f(r.gain_sw),
            f(r.lower_ws),
            f(r.lower_sw),
            f(r.projection_slack),
            r.projection_status,
            f(r.reverse_ce_slack),
            r.reverse_ce_status,
            f(r.final_loss),
            std::to_string(r.steps),
            r.converged ? "true" : "false",
            f(r.wall_time_s)};
}

inline json record_json(const CellRecord& r) {
    const auto f = number_or_null;
    return {{"seed", r.key.seed},
            {"variant", std::string(to_string(r.key.variant))},
            {"loss", std::string(to_string(r.key.loss))},
            {"noise", r.key.noise},
            {"n", r.key.n},
            {"status", r.status},
            {"acc_weak", f(r.acc_weak)},
            {"acc_ceiling", f(r.acc_ceiling)},
            {"acc_strong", f(r.acc_strong)},
            {"kl_star_weak", f(r.kl_star_weak)},
            {"kl_star_strong", f(r.kl_star_strong)},
            {"ce_star_strong", f(r.ce_star_strong)},
            {"kl_weak_strong", f(r.kl_weak_strong)},
            {"kl_strong_weak", f(r.kl_strong_weak)},
            {"r", f(r.r_value)},
            {"r1", f(r.r1_value)},
            {"squared_cross", f(r.squared_cross)},
            {"residual_forward", f(r.residual_forward)},
            {"residual_reverse", f(r.residual_reverse)},
            {"residual_squared", f(r.residual_squared)},
            {"slack_gain", {f(r.gain_ws), f(r.gain_sw)}},
            {"slack_lower", {f(r.lower_ws), f(r.lower_sw)}},
            {"slack_projection", f(r.projection_slack)},
            {"status_projection", r.projection_status},
            {"slack_reverse_ce", f(r.reverse_ce_slack)},
            {"status_reverse_ce", r.reverse_ce_status},
            {"final_loss", f(r.final_loss)},
            {"steps", r.steps},
            {"converged", r.converged}};
}

struct RunReport {
    std::string kind = "run";
    std::string config_hash;
    json config;
    std::vector<CellRecord> records;  // sorted by key
    json summary;
    json invariants;
    json theory;  // theory suite sections, empty for runs
    double total_wall_time_s = 0.0;
    int exit_code = kExitOk;

    /// CSV with every column.
    std::string csv() const;
    /// CSV without the wall-time column: byte-identical across reruns of a config.
    std::string stable_csv() const;
    json stable_json() const;
    json to_json() const;
};

namespace detail {

inline std::string join_csv(const std::vector<std::string>& fields, std::size_t count) {
    std::string line;
    for (std::size_t i = 0; i < count; ++i) {
        if (i) line += ',';
        line += fields[i];
    }
    return line + '\n';
}

}  // namespace detail

inline std::string RunReport::csv() const {
    if (kind != "run") return theory.value("csv", std::string());
    const std::size_t n = csv_columns().size();
    std::string out = detail::join_csv(csv_columns(), n);
    for (const auto& r : records) out += detail::join_csv(csv_fields(r), n);
    return out;
}

inline std::string RunReport::stable_csv() const {
    if (kind != "run") return csv();
    const std::size_t n = csv_columns().size() - 1;
    std::string out = detail::join_csv(csv_columns(), n);
    for (const auto& r : records) out += detail::join_csv(csv_fields(r), n);
    return out;
}

inline json RunReport::stable_json() const {
    json recs = json::array();
    for (const auto& r : records) recs.push_back(record_json(r));
    json s{{"records", recs}, {"summary", summary}, {"invariants", invariants}};
    if (!theory.is_null()) {
        json t = theory;
        t.erase("csv");
        s["theory"] = t;
    }
    return s;
}

inline json RunReport::to_json() const {
    const json stable = stable_json();
    json timing{{"total_wall_time_s", total_wall_time_s}};
    json walls = json::array();
    for (const auto& r : records) walls.push_back(r.wall_time_s);
    timing["record_wall_time_s"] = walls;
    return {{"schema_version", kSchemaVersion},
            {"kind", kind},
            {"config_hash", config_hash},
            {"config", config},
            {"stable", stable},
            {"stable_hash", hex64(fnv1a(stable.dump() + stable_csv()))},
            {"timing", timing},
            {"exit_code", exit_code}};
}

namespace detail {

/// Everything a seed shares across its cells: the task, teachers and cached features.
struct SeedContext {
    std::uint64_t seed = 0;
    Task task;
    Model weak;
    Model ceiling;
    FeatureSet weak_split_features;  // strong features of the weak-label split
    FeatureSet test_features;        // strong features of the test split
    Matrix weak_labels;              // k x n, weak model on the weak-label split
    double acc_weak = 0.0, acc_ceiling = 0.0, kl_star_weak = 0.0;
    std::string failure;  // non-empty when a teacher fit failed
};

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

inline std::uint64_t noise_bits(double p) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &p, sizeof bits);
    return bits;
}

inline std::string failure_status(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const StepSizeError&) {
        return "step_size_error";
    } catch (const TimeLimitError&) {
        return "time_limit";
    } catch (const NumericError&) {
        return "numeric_error";
    }
}

inline SeedContext prepare_seed(const ExperimentConfig& c, std::uint64_t seed) {
    SeedContext ctx;
    ctx.seed = seed;
    TaskSpec spec = c.task;
    spec.seed = seed;
    ctx.task = generate_task(spec, c.floor);
    const Task& t = ctx.task;
    TrainConfig tc = c.teacher_train;
    tc.seed = mix(seed, c.teacher_train.seed ^ 0x7465616368ULL);
    tc.time_limit_seconds = c.cell_time_limit_seconds;
    try {
        ctx.weak = Model{t.weak, fit_on_truth(t, t.weak, tc).head};
        ctx.ceiling = Model{t.strong, fit_on_truth(t, t.strong, tc).head};
    } catch (const Error&) {
        ctx.failure = "teacher_" + failure_status(std::current_exception());
        return ctx;
    }
    ctx.weak_split_features = ctx.ceiling.features(t.weak_set.inputs);
    ctx.test_features = ctx.ceiling.features(t.test_set.inputs);
    ctx.weak_labels = weak_label_matrix(ctx.weak, t.weak_set);
    const Matrix weak_test = ctx.weak.outputs(t.test_set.inputs);
    ctx.acc_weak = task_accuracy(t, weak_test, t.test_set);
    ctx.acc_ceiling = task_accuracy(t, head_outputs(ctx.ceiling.head, ctx.test_features), t.test_set);
    ctx.kl_star_weak = mean_loss(LossKind::ForwardKL, t.test_set.truth_labels, weak_test);
    return ctx;
}

inline void fill_bounds(CellRecord& rec, const DatasetEval& triple, const BoundConstants& consts) {
    const auto p = decompose_forward(triple, LossFamily::KL);
    const auto pc = decompose_forward(triple, LossFamily::CE);
    const auto r1 = decompose_reverse(triple);
    const auto sq = decompose_squared(triple);
    rec.r_value = p.r_value;
    rec.r1_value = r1.r_value;
    rec.squared_cross = sq.r_value;
    rec.residual_forward = std::abs(p.residual) >= std::abs(pc.residual) ? p.residual : pc.residual;
    rec.residual_reverse = r1.residual;
    rec.residual_squared = sq.residual;
    rec.kl_weak_strong = population_kl(Role::Weak, Role::Student, triple);
    rec.kl_strong_weak = population_kl(Role::Student, Role::Weak, triple);
    const auto l1 = check_gain_bound(triple, LossFamily::KL, consts);
    const auto t2 = check_lower_bound(triple, LossFamily::KL, consts);
    const auto l1c = check_gain_bound(triple, LossFamily::CE, consts);
    const auto t2c = check_lower_bound(triple, LossFamily::CE, consts);
    rec.gain_ws = std::min(l1[0].slack, l1c[0].slack);
    rec.gain_sw = std::min(l1[1].slack, l1c[1].slack);
    rec.lower_ws = std::min(t2[0].slack, t2c[0].slack);
    rec.lower_sw = std::min(t2[1].slack, t2c[1].slack);
}

inline CellRecord run_cell(const ExperimentConfig& c, const SeedContext& ctx, const CellKey& key) {
    const auto start = std::chrono::steady_clock::now();
    CellRecord rec;
    rec.key = key;
    rec.acc_weak = ctx.acc_weak;
    rec.acc_ceiling = ctx.acc_ceiling;
    rec.kl_star_weak = ctx.kl_star_weak;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto mark_failed = [&](std::string status) {
        rec.status = std::move(status);
        for (double* v :
             {&rec.acc_strong, &rec.kl_star_strong, &rec.ce_star_strong, &rec.kl_weak_strong, &rec.kl_strong_weak,
              &rec.r_value, &rec.r1_value, &rec.squared_cross, &rec.residual_forward, &rec.residual_reverse,
              &rec.residual_squared, &rec.gain_ws, &rec.gain_sw, &rec.lower_ws, &rec.lower_sw, &rec.final_loss})
            *v = nan;
    };
    if (!ctx.failure.empty()) {
        mark_failed(ctx.failure);
        return rec;
    }
    const Task& t = ctx.task;
    const Matrix supervisor =
        key.noise > 0.0 ? inject_swap_noise(ctx.weak_labels, {key.noise, mix(key.seed, noise_bits(key.noise))})
                        : ctx.weak_labels;

    TrainConfig cfg = c.train;
    // Students of one seed and sample size share their initialization and sample.
    cfg.seed = mix(key.seed, c.train.seed ^ static_cast<std::uint64_t>(key.n));
    cfg.time_limit_seconds = c.cell_time_limit_seconds;
    const FloorConfig floor = c.floor;

    FeatureSet feats = ctx.weak_split_features;
    Matrix sup = supervisor;
    if (key.n > 0) {
        const EmpiricalSample s = draw_sample(key.n, uniform_sampler(feats.size()), feats, supervisor, cfg.seed);
        feats = s.features;
        sup = s.supervisor;
    }
    const Vector weights = uniform_weights(feats.size());

    FitResult fit;
    try {
        fit = key.variant == Variant::Plain
                  ? fit_head(key.loss, sup, feats, weights, c.student_class, cfg, floor)
                  : fit_confidence(key.loss, sup, feats, weights, c.student_class, cfg, *c.confidence, floor);
    } catch (const Error&) {
        mark_failed(failure_status(std::current_exception()));
        rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return rec;
    }
    rec.final_loss = fit.final_loss;
    rec.steps = fit.steps_taken;
    rec.converged = fit.converged;

    const Matrix test_out = head_outputs(fit.head, ctx.test_features);
    rec.acc_strong = task_accuracy(t, test_out, t.test_set);
    rec.kl_star_strong = mean_loss(LossKind::ForwardKL, t.test_set.truth_labels, test_out);
    rec.ce_star_strong = mean_loss(LossKind::ForwardCE, t.test_set.truth_labels, test_out);

    // Identities and bounds on the weak-label split, where the student was fit.
    const Matrix split_out = head_outputs(fit.head, ctx.weak_split_features);
    RealizableSetting setting;
    setting.k = t.spec.k;
    setting.gamma = floor.gamma;
    setting.strong_features = ctx.weak_split_features;
    setting.weights = uniform_weights(ctx.weak_split_features.size());
    setting.truth = t.weak_set.truth_labels;
    setting.weak = supervisor;
    const DatasetEval triple = realizable_triple(setting, split_out);
    fill_bounds(rec, triple, BoundConstants{floor.gamma});

    // The convex-class guarantees apply to full-split reverse students of a realizable F*.
    const bool realizable = t.spec.mode == TaskMode::Multiclass && c.student_class == HeadClass::Stochastic &&
                            key.variant == Variant::Plain && key.n == 0 &&
                            (key.loss == LossKind::ReverseKL || key.loss == LossKind::ReverseCE);
    if (realizable) {
        const double cert = certificate_improvement(key.loss, setting, fit, cfg);
        const double eps = optimization_slack(cfg, cert);
        const BoundReport b = key.loss == LossKind::ReverseKL ? check_projection_bound(fit, triple, eps)
                                                              : check_reverse_ce_bound(fit, triple, eps);
        (key.loss == LossKind::ReverseKL ? rec.projection_slack : rec.reverse_ce_slack) = b.slack;
        (key.loss == LossKind::ReverseKL ? rec.projection_status : rec.reverse_ce_status) =
            std::string(to_string(b.status));
    }
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

inline std::optional<LossKind> forward_counterpart(LossKind k) {
    if (k == LossKind::ReverseKL) return LossKind::ForwardKL;
    if (k == LossKind::ReverseCE) return LossKind::ForwardCE;
    return std::nullopt;
}

inline json summarize(const std::vector<CellRecord>& records) {
    // Groups: (variant, loss, noise, n) -> per-seed values, seeds in sorted order.
    using GroupKey = std::tuple<Variant, LossKind, double, long>;
    std::map<GroupKey, std::vector<const CellRecord*>> groups;
    for (const auto& r : records) groups[{r.key.variant, r.key.loss, r.key.noise, r.key.n}].push_back(&r);

    json out_groups = json::array();
    for (const auto& [key, recs] : groups) {
        std::vector<double> strong, weak, ceiling, kl;
        for (const auto* r : recs) {
            strong.push_back(r->acc_strong);
            weak.push_back(r->acc_weak);
            ceiling.push_back(r->acc_ceiling);
            kl.push_back(r->kl_star_strong);
        }
        const auto s = mean_std(strong), w = mean_std(weak), ce = mean_std(ceiling), k = mean_std(kl);
        out_groups.push_back({{"variant", std::string(to_string(std::get<0>(key)))},
                              {"loss", std::string(to_string(std::get<1>(key)))},
                              {"noise", std::get<2>(key)},
                              {"n", std::get<3>(key)},
                              {"n_seeds", s.count},
                              {"acc_strong_mean", number_or_null(s.mean)},
                              {"acc_strong_std", number_or_null(s.std)},
                              {"acc_weak_mean", number_or_null(w.mean)},
                              {"acc_weak_std", number_or_null(w.std)},
                              {"acc_ceiling_mean", number_or_null(ce.mean)},
                              {"acc_ceiling_std", number_or_null(ce.std)},
                              {"kl_star_strong_mean", number_or_null(k.mean)},
                              {"kl_star_strong_std", number_or_null(k.std)}});
    }

    // Paired reverse-vs-forward comparisons per seed.
    json comparisons = json::array();
    for (const auto& [key, recs] : groups) {
        const auto fwd = forward_counterpart(std::get<1>(key));
        if (!fwd) continue;
        const auto it = groups.find({std::get<0>(key), *fwd, std::get<2>(key), std::get<3>(key)});
        if (it == groups.end()) continue;
        std::map<std::uint64_t, double> fwd_acc;
        for (const auto* r : it->second) fwd_acc[r->key.seed] = r->acc_strong;
        std::vector<double> diffs;
        long wins = 0, strict = 0, compared = 0;
        for (const auto* r : recs) {
            const auto f = fwd_acc.find(r->key.seed);
            if (f == fwd_acc.end() || !std::isfinite(r->acc_strong) || !std::isfinite(f->second)) continue;
            ++compared;
            const double d = r->acc_strong - f->second;
            diffs.push_back(d);
            wins += d >= 0.0;
            strict += d > 0.0;
        }
        comparisons.push_back({{"variant", std::string(to_string(std::get<0>(key)))},
                               {"reverse", std::string(to_string(std::get<1>(key)))},
                               {"forward", std::string(to_string(*fwd))},
                               {"noise", std::get<2>(key)},
                               {"n", std::get<3>(key)},
                               {"seeds_compared", compared},
                               {"wins", wins},
                               {"strict_wins", strict},
                               {"median_diff", diffs.empty() ? json(nullptr) : json(median(diffs))},
                               {"mean_diff", number_or_null(mean_std(diffs).mean)}});
    }

    return {{"groups", out_groups}, {"comparisons", comparisons}};
}

}  // namespace detail

/// Runs every cell of the sweep grid. Does not write files; see write_report.
inline RunReport run(const ExperimentConfig& c, unsigned workers = worker_count()) {
    c.validate();
    const auto start = std::chrono::steady_clock::now();
    RunReport rep;
    rep.kind = "run";
    rep.config = to_json(c);
    rep.config_hash = config_hash(c);

    std::vector<std::uint64_t> seeds = c.seeds;
    std::sort(seeds.begin(), seeds.end());
    std::vector<detail::SeedContext> contexts(seeds.size());
    parallel_for(seeds.size(), workers, [&](std::size_t i) { contexts[i] = detail::prepare_seed(c, seeds[i]); });

    std::vector<std::pair<std::size_t, CellKey>> cells;
    std::vector<long> ns = c.n_grid.empty() ? std::vector<long>{0} : c.n_grid;
    for (std::size_t i = 0; i < seeds.size(); ++i)
        for (LossKind loss : c.losses)
            for (double p : c.noise_grid)
                for (long n : ns) {
                    cells.push_back({i, CellKey{seeds[i], Variant::Plain, loss, p, n}});
                    if (c.confidence && (loss == LossKind::ForwardCE || loss == LossKind::ReverseCE))
                        cells.push_back({i, CellKey{seeds[i], Variant::Confidence, loss, p, n}});
                }
    std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    rep.records.resize(cells.size());
    parallel_for(cells.size(), workers, [&](std::size_t i) {
        rep.records[i] = detail::run_cell(c, contexts[cells[i].first], cells[i].second);
    });

    rep.summary = detail::summarize(rep.records);
    double max_residual = 0.0;
    long hard = 0, failures = 0, not_converged = 0;
    json offending = json::array();
    for (const auto& r : rep.records) {
        for (double v : {r.residual_forward, r.residual_reverse, r.residual_squared})
            if (std::isfinite(v)) max_residual = std::max(max_residual, std::abs(v));
        if (r.hard_violation()) {
            ++hard;
            offending.push_back({{"seed", r.key.seed}, {"loss", std::string(to_string(r.key.loss))}});
        }
        failures += r.optimization_failure();
        not_converged += r.status == "ok" && !r.converged;
    }
    rep.invariants = {{"max_identity_residual", max_residual},
                      {"hard_violations", hard},
                      {"offending", offending},
                      {"optimization_failures", failures},
                      {"not_converged", not_converged}};
    rep.exit_code = hard > 0 ? kExitTheoryViolation : kExitOk;
    rep.total_wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Theory suite

namespace detail {

struct Tally {
    long checks = 0;
    long violations = 0;
    double worst = std::numeric_limits<double>::infinity();  // min slack, or max |residual| for identities
    json offending = json::array();

    void bound(const BoundReport& r, std::uint64_t seed, const std::string& what) {
        ++checks;
        worst = std::min(worst, r.slack);
        if (!r.holds) {
            ++violations;
            if (offending.size() < 20) offending.push_back({{"seed", seed}, {"check", what}, {"slack", r.slack}});
        }
    }

    json to_json() const {
        return {{"checks", checks},
                {"violations", violations},
                {"min_slack", number_or_null(worst)},
                {"offending", offending}};
    }
};

struct IdentityTally {
    long checks = 0;
    double max_residual = 0.0;
    long sign_failures = 0;
    json offending = json::array();

    void add(const DecompositionReport& r, std::uint64_t seed, bool sign_ok) {
        ++checks;
        max_residual = std::max(max_residual, std::abs(r.residual));
        if (!r.exact() || !sign_ok) {
            sign_failures += !sign_ok;
            if (offending.size() < 20) offending.push_back({{"seed", seed}, {"residual", r.residual}});
        }
    }

    bool ok() const { return max_residual <= kIdentityTol && sign_failures == 0; }

    json to_json() const {
        return {{"checks", checks},
                {"max_residual", max_residual},
                {"sign_failures", sign_failures},
                {"offending", offending},
                {"ok", ok()}};
    }
};

/// Sign equivalence that is exact in exact arithmetic; near-ties are skipped.
inline bool sign_matches(double r, double better_margin) {
    if (std::abs(better_margin) <= 1e-12 || std::abs(r) <= 1e-12) return true;
    return (r > 0.0) == (better_margin > 0.0);
}

}  // namespace detail

/// Runs the identity and bound corpus, the realizable convex-class suite and the gap curve.
inline RunReport run_theory_suite(const ExperimentConfig& c, unsigned workers = worker_count()) {
    const auto start = std::chrono::steady_clock::now();
    const TheoryConfig& o = c.theory;
    const BoundConstants consts{c.floor.gamma};
    RunReport rep;
    rep.kind = "theory";
    rep.config = to_json(c);
    rep.config_hash = config_hash(c);

    // Seeded triple corpus.
    detail::IdentityTally forward_decomp, reverse, squared;
    detail::Tally gain_bound, lower_bound, large_disagreement;
    long disagreement_applicable = 0;
    for (long k : o.triple_ks) {
        for (long i = 0; i < o.n_triples; ++i) {
            const std::uint64_t seed = detail::mix(o.triple_seed, static_cast<std::uint64_t>(k * 1000003 + i));
            Rng rng(seed);
            const DatasetEval t = sample_triple(k, o.triple_points, c.floor.gamma, rng);
            for (LossFamily fam : {LossFamily::KL, LossFamily::CE}) {
                const auto p = decompose_forward(t, fam);
                const LossKind kind = forward_kind(fam);
                forward_decomp.add(
                    p, seed,
                    detail::sign_matches(p.r_value, population_loss(kind, Role::Truth, Role::Weak, t) -
                                                        population_loss(kind, Role::Truth, Role::Student, t)));
                for (const auto& r : check_gain_bound(t, fam, consts)) gain_bound.bound(r, seed, "gain_bound");
                for (const auto& r : check_lower_bound(t, fam, consts)) lower_bound.bound(r, seed, "lower_bound");
            }
            const auto r1 = decompose_reverse(t);
            reverse.add(r1, seed,
                        detail::sign_matches(r1.r_value, population_kl(Role::Weak, Role::Truth, t) -
                                                             population_kl(Role::Student, Role::Truth, t)));
            const auto sq = decompose_squared(t);
            squared.add(sq, seed,
                        detail::sign_matches(sq.r_value,
                                             population_loss(LossKind::Squared, Role::Weak, Role::Truth, t) -
                                                 population_loss(LossKind::Squared, Role::Student, Role::Weak, t) -
                                                 population_loss(LossKind::Squared, Role::Student, Role::Truth, t)));
            const auto b1 = check_large_disagreement(t, consts, LossFamily::KL, o.disagreement_constant);
            if (b1.status != CheckStatus::NotApplicable) {
                ++disagreement_applicable;
                large_disagreement.bound(b1, seed, "large_disagreement");
            }
        }
    }

    // Realizable convex-class suite.
    struct RealizableJob {
        long k;
        std::uint64_t seed;
    };
    std::vector<RealizableJob> jobs;
    for (long k : o.realizable_ks)
        for (std::uint64_t s : o.realizable_seeds) jobs.push_back({k, s});
    std::vector<std::array<RealizableCheck, 2>> checks(jobs.size());
    parallel_for(jobs.size(), workers, [&](std::size_t i) {
        RealizableOptions opt = o.realizable;
        opt.k = jobs[i].k;
        const RealizableSetting s = make_realizable_setting(opt, jobs[i].seed);
        TrainConfig cfg = o.realizable_train;
        cfg.seed = detail::mix(jobs[i].seed, o.realizable_train.seed);
        cfg.time_limit_seconds = c.cell_time_limit_seconds;
        checks[i] = {run_realizable_check(LossKind::ReverseKL, s, cfg),
                     run_realizable_check(LossKind::ReverseCE, s, cfg)};
    });
    detail::Tally projection_bound, reverse_ce_bound;
    long projection_inconclusive = 0, reverse_ce_inconclusive = 0;
    json realizable = json::array();
    std::string csv = "section,check,k,seed,n,lhs,rhs,slack,eps_opt,status\n";
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        for (int which = 0; which < 2; ++which) {
            const RealizableCheck& chk = checks[i][static_cast<std::size_t>(which)];
            const std::string name = which == 0 ? "projection_bound" : "reverse_ce_bound";
            if (chk.report.status == CheckStatus::Inconclusive) {
                ++(which == 0 ? projection_inconclusive : reverse_ce_inconclusive);
            } else {
                (which == 0 ? projection_bound : reverse_ce_bound).bound(chk.report, jobs[i].seed, name);
            }
            realizable.push_back({{"check", name},
                                  {"k", jobs[i].k},
                                  {"seed", jobs[i].seed},
                                  {"lhs", number_or_null(chk.report.lhs)},
                                  {"rhs", number_or_null(chk.report.rhs)},
                                  {"slack", number_or_null(chk.report.slack)},
                                  {"eps_opt", chk.eps_opt},
                                  {"certificate", chk.certificate},
                                  {"converged", chk.fit.converged},
                                  {"steps", chk.fit.steps_taken},
                                  {"status", std::string(to_string(chk.report.status))}});
            csv += "realizable," + name + "," + std::to_string(jobs[i].k) + "," + std::to_string(jobs[i].seed) + ",," +
                   format_number(chk.report.lhs) + "," + format_number(chk.report.rhs) + "," +
                   format_number(chk.report.slack) + "," + format_number(chk.eps_opt) + "," +
                   std::string(to_string(chk.report.status)) + "\n";
        }
    }

    // Finite-sample gap curve.
    TrainConfig gap_cfg = o.gap_train;
    gap_cfg.time_limit_seconds = c.cell_time_limit_seconds;
    const GapCurve gap = finite_sample_gap_curve(o.gap_n_grid, o.gap_seeds, o.gap_setting, gap_cfg, workers);
    json gap_json{{"n", gap.n_grid},
                  {"median", gap.median_gap},
                  {"per_seed", gap.per_seed_gap},
                  {"seeds", o.gap_seeds},
                  {"inversions", gap.inversions},
                  {"worst_inversion", gap.worst_inversion},
                  {"non_increasing", gap.non_increasing}};
    for (std::size_t i = 0; i < gap.n_grid.size(); ++i)
        csv += "gap,median_gap,,," + std::to_string(gap.n_grid[i]) + ",,," + format_number(gap.median_gap[i]) + ",," +
               (gap.non_increasing ? "holds" : "violated") + "\n";

    const auto add_summary = [&](const std::string& name, double value, bool ok) {
        csv += "summary," + name + ",,,,,," + format_number(value) + ",," + (ok ? "holds" : "violated") + "\n";
    };
    add_summary("max_residual_forward", forward_decomp.max_residual, forward_decomp.ok());
    add_summary("max_residual_reverse", reverse.max_residual, reverse.ok());
    add_summary("max_residual_squared", squared.max_residual, squared.ok());
    add_summary("gain_bound_violations", static_cast<double>(gain_bound.violations), gain_bound.violations == 0);
    add_summary("lower_bound_violations", static_cast<double>(lower_bound.violations), lower_bound.violations == 0);
    add_summary("constants_ordered", constants_ordered(consts) ? 1.0 : 0.0, constants_ordered(consts));
    add_summary("large_disagreement_violations", static_cast<double>(large_disagreement.violations),
                large_disagreement.violations == 0);
    add_summary("projection_bound_violations", static_cast<double>(projection_bound.violations),
                projection_bound.violations == 0);
    add_summary("reverse_ce_bound_violations", static_cast<double>(reverse_ce_bound.violations),
                reverse_ce_bound.violations == 0);

    const bool ok = forward_decomp.ok() && reverse.ok() && squared.ok() && gain_bound.violations == 0 &&
                    lower_bound.violations == 0 && constants_ordered(consts) && large_disagreement.violations == 0 &&
                    projection_bound.violations == 0 && reverse_ce_bound.violations == 0 && gap.non_increasing;

    rep.theory = {
        {"constants",
         {{"gamma", consts.gamma},
          {"sigma", consts.sigma()},
          {"c1", consts.c1()},
          {"c2", consts.c2()},
          {"ordered", constants_ordered(consts)}}},
        {"identities",
         {{"forward", forward_decomp.to_json()}, {"reverse", reverse.to_json()}, {"squared", squared.to_json()}}},
        {"bounds", {{"gain_bound", gain_bound.to_json()}, {"lower_bound", lower_bound.to_json()}}},
        {"large_disagreement", {{"applicable", disagreement_applicable}, {"tally", large_disagreement.to_json()}}},
        {"projection_bound", {{"tally", projection_bound.to_json()}, {"inconclusive", projection_inconclusive}}},
        {"reverse_ce_bound", {{"tally", reverse_ce_bound.to_json()}, {"inconclusive", reverse_ce_inconclusive}}},
        {"realizable", realizable},
        {"gap_curve", gap_json},
        {"ok", ok},
        {"csv", csv}};
    rep.invariants = {{"ok", ok}};
    rep.exit_code = ok ? kExitOk : kExitTheoryViolation;
    rep.total_wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Files

inline void write_text(const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + file.string() + "'");
    out << text;
}

/// Writes report.json and report.csv into `dir`.
inline void write_report(const RunReport& rep, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "report.json", rep.to_json().dump(2) + "\n");
    write_text(dir / "report.csv", rep.csv());
}

enum class PlotKind { LossBars, NoiseCurves, GapCurve };

inline PlotKind parse_plot_kind(std::string_view s) {
    if (s == "loss-bars") return PlotKind::LossBars;
    if (s == "noise-curves") return PlotKind::NoiseCurves;
    if (s == "gap-curve") return PlotKind::GapCurve;
    throw ConfigError("--which must be loss-bars, noise-curves or gap-curve, got '" + std::string(s) + "'");
}

inline std::string_view to_string(PlotKind k) {
    switch (k) {
        case PlotKind::LossBars: return "loss-bars";
        case PlotKind::NoiseCurves: return "noise-curves";
        case PlotKind::GapCurve: return "gap-curve";
    }
    return "";
}

/// Long-format plot table from a report.json document.
///   loss-bars:    variant,loss,noise,n,n_seeds,acc_strong_mean,acc_strong_std,acc_weak_mean,
///                 acc_weak_std,acc_ceiling_mean,acc_ceiling_std   (noise = 0, whole split)
///   noise-curves: same columns, one row per (variant, loss, noise)  (whole split)
///   gap-curve:    n,n_seeds,median_gap,mean_gap,std_gap
inline std::string emit_plot_data(const json& report, PlotKind which) {
    if (!report.contains("schema_version") || report.at("schema_version") != kSchemaVersion)
        throw ConfigError("report: unsupported or missing schema_version");
    const std::string kind = report.value("kind", "");
    const auto f = format_number;
    if (which == PlotKind::GapCurve) {
        if (kind != "theory" || !report.at("stable").contains("theory"))
            throw ConfigError("gap-curve needs a theory report (missing grid dimension: n)");
        const json& g = report.at("stable").at("theory").at("gap_curve");
        std::string out = "n,n_seeds,median_gap,mean_gap,std_gap\n";
        const auto& ns = g.at("n");
        for (std::size_t i = 0; i < ns.size(); ++i) {
            std::vector<double> v;
            for (const auto& x : g.at("per_seed")[i]) v.push_back(json_number(x));
            const MeanStd m = mean_std(v);
            out += std::to_string(ns[i].get<long>()) + "," + std::to_string(m.count) + "," +
                   f(json_number(g.at("median")[i])) + "," + f(m.mean) + "," + f(m.std) + "\n";
        }
        return out;
    }
    if (kind != "run") throw ConfigError(std::string(to_string(which)) + " needs a run report");
    const json& groups = report.at("stable").at("summary").at("groups");
    std::string out =
        "variant,loss,noise,n,n_seeds,acc_strong_mean,acc_strong_std,acc_weak_mean,acc_weak_std,acc_ceiling_mean,"
        "acc_ceiling_std\n";
    std::set<double> noises;
    long rows = 0;
    for (const auto& g : groups) {
        if (g.at("n").get<long>() != 0) continue;
        const double p = g.at("noise").get<double>();
        noises.insert(p);
        if (which == PlotKind::LossBars && p != 0.0) continue;
        out += g.at("variant").get<std::string>() + "," + g.at("loss").get<std::string>() + "," + f(p) + ",0," +
               std::to_string(g.at("n_seeds").get<long>());
        for (const char* col : {"acc_strong_mean", "acc_strong_std", "acc_weak_mean", "acc_weak_std",
                                "acc_ceiling_mean", "acc_ceiling_std"})
            out += "," + f(json_number(g.at(col)));
        out += "\n";
        ++rows;
    }
    if (which == PlotKind::LossBars && rows == 0)
        throw ConfigError("loss-bars needs noise-free whole-split cells (missing grid dimension: noise = 0)");
    if (which == PlotKind::NoiseCurves && noises.size() < 2)
        throw ConfigError("noise-curves needs at least two noise levels (missing grid dimension: noise)");
    return out;
}

}  // namespace w2sg
