#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "core.hpp"
#include "learners.hpp"
#include "linear_model.hpp"
#include "metrics.hpp"

namespace tabens {

using json = nlohmann::json;

inline constexpr int kModelSchema = 1;

namespace detail {

inline void require_pool(std::span<const ProbabilityMatrix> bases) {
    require(!bases.empty(), ErrorCode::InvalidArgument, "empty base pool");
    for (const auto& b : bases) require_same_shape(bases.front(), b);
}

}  // namespace detail

// ============================================================================
// Convex combination
// ============================================================================
inline ProbabilityMatrix combine_convex(std::span<const ProbabilityMatrix> bases, const WeightVector& w) {
    detail::require_pool(bases);
    require(w.size() == bases.size(), ErrorCode::ShapeMismatch, "one weight per base required");
    Matrix out(bases.front().rows(), bases.front().classes(), 0.0);
    for (std::size_t k = 0; k < bases.size(); ++k) {
        const double wk = w[k];
        const auto& src = bases[k].matrix().data();
        auto& dst = out.data();
        for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += wk * src[e];
    }
    return ProbabilityMatrix(std::move(out));
}

inline std::vector<double> validation_accuracies(std::span<const ProbabilityMatrix> bases,
                                                 std::span<const int> labels) {
    detail::require_pool(bases);
    std::vector<double> acc;
    acc.reserve(bases.size());
    for (const auto& b : bases) acc.push_back(metrics::accuracy(b, labels));
    return acc;
}

// ============================================================================
// Weighted averaging: w_k proportional to validation accuracy.
// ============================================================================
inline WeightVector weights_from_scores(std::span<const double> scores) {
    double total = 0.0;
    for (double s : scores) {
        require(s >= 0.0 && std::isfinite(s), ErrorCode::InvalidArgument, "scores must be non-negative");
        total += s;
    }
    // All-zero scores fall back to uniform weights.
    if (total <= 0.0) return WeightVector::uniform(scores.size());
    std::vector<double> w(scores.size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = scores[k] / total;
    return WeightVector(std::move(w));
}

inline WeightVector fit_weighted_average(std::span<const ProbabilityMatrix> val_probs,
                                         std::span<const int> val_labels) {
    const auto acc = validation_accuracies(val_probs, val_labels);
    return weights_from_scores(acc);
}

// ============================================================================
// Greedy forward selection with replacement
// ============================================================================
struct GreedyConfig {
    int iterations = 50;
};

struct GreedySelection {
    WeightVector weights;            // count_k / S
    std::vector<int> counts;         // selections per base
    std::vector<std::size_t> order;  // base picked at each iteration
    std::vector<double> trajectory;  // validation accuracy after each pick
};

// Every iteration adds the base whose copy maximises validation accuracy of the
// uniform average over the current multiset; ties go to the lowest base index.
// All S iterations run.
inline GreedySelection fit_greedy_selection(std::span<const ProbabilityMatrix> val_probs,
                                            std::span<const int> val_labels,
                                            const GreedyConfig& cfg = {}) {
    detail::require_pool(val_probs);
    require(cfg.iterations >= 1, ErrorCode::InvalidArgument, "greedy needs S >= 1");
    require_labels(val_probs.front(), val_labels);
    const std::size_t K = val_probs.size();
    const std::size_t n = val_probs.front().rows();
    const std::size_t C = val_probs.front().classes();

    GreedySelection sel;
    sel.counts.assign(K, 0);
    Matrix sum(n, C, 0.0);
    std::vector<double> cand(C);
    for (int it = 0; it < cfg.iterations; ++it) {
        const double size = static_cast<double>(it + 1);
        std::size_t best = 0;
        double best_acc = -1.0;
        for (std::size_t k = 0; k < K; ++k) {
            std::size_t hit = 0;
            for (std::size_t i = 0; i < n; ++i) {
                auto s = sum.row(i);
                auto p = val_probs[k].row(i);
                for (std::size_t c = 0; c < C; ++c) cand[c] = (s[c] + p[c]) / size;
                hit += argmax(cand) == val_labels[i];
            }
            const double acc = n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
            if (acc > best_acc) {
                best_acc = acc;
                best = k;
            }
        }
        auto& src = val_probs[best].matrix().data();
        for (std::size_t e = 0; e < src.size(); ++e) sum.data()[e] += src[e];
        ++sel.counts[best];
        sel.order.push_back(best);
        sel.trajectory.push_back(best_acc);
    }
    std::vector<double> w(K);
    for (std::size_t k = 0; k < K; ++k)
        w[k] = static_cast<double>(sel.counts[k]) / static_cast<double>(cfg.iterations);
    sel.weights = WeightVector(std::move(w));
    return sel;
}

// ============================================================================
// Stacking: multinomial logistic meta-learner over concatenated base probabilities
// ============================================================================
struct StackingModel {
    std::size_t base_count = 0;
    std::size_t class_count = 0;
    SoftmaxRegression meta;  // C x (K*C + 1)

    const Matrix& meta_weights() const { return meta.weights(); }
};

inline Matrix stack_features(std::span<const ProbabilityMatrix> bases) {
    detail::require_pool(bases);
    const std::size_t n = bases.front().rows();
    const std::size_t C = bases.front().classes();
    Matrix out(n, bases.size() * C);
    for (std::size_t i = 0; i < n; ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < bases.size(); ++k) {
            auto src = bases[k].row(i);
            std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(k * C));
        }
    }
    return out;
}

inline StackingModel fit_stacking(std::span<const ProbabilityMatrix> oof_probs,
                                  std::span<const int> train_labels,
                                  const SoftmaxRegressionOptions& opt = {}) {
    detail::require_pool(oof_probs);
    require_labels(oof_probs.front(), train_labels);
    StackingModel m;
    m.base_count = oof_probs.size();
    m.class_count = oof_probs.front().classes();
    m.meta = SoftmaxRegression::train(stack_features(oof_probs), train_labels,
                                      static_cast<int>(m.class_count), opt);
    return m;
}

inline ProbabilityMatrix predict_stacking(const StackingModel& model,
                                          std::span<const ProbabilityMatrix> test_probs) {
    detail::require_pool(test_probs);
    require(test_probs.size() == model.base_count && test_probs.front().classes() == model.class_count,
            ErrorCode::ShapeMismatch, "stacking inputs do not match the fitted pool");
    return model.meta.predict_proba(stack_features(test_probs));
}

// ============================================================================
// Temperature scaling
// ============================================================================
inline constexpr double kMinTemperature = 0.05;
inline constexpr double kMaxTemperature = 20.0;

class TemperatureVector {
public:
    TemperatureVector() = default;
    explicit TemperatureVector(std::vector<double> t) : t_(std::move(t)) {
        for (double v : t_)
            require(v >= kMinTemperature && v <= kMaxTemperature, ErrorCode::InvalidArgument,
                    "temperature outside [0.05, 20]");
    }
    static TemperatureVector identity(std::size_t k) { return TemperatureVector(std::vector<double>(k, 1.0)); }

    std::size_t size() const noexcept { return t_.size(); }
    double operator[](std::size_t k) const { return t_[k]; }
    const std::vector<double>& values() const noexcept { return t_; }

private:
    std::vector<double> t_;
};

// softmax(log p / T) on clipped probabilities. T = 1 is the identity map and
// returns the input untouched.
inline ProbabilityMatrix temperature_scale(const ProbabilityMatrix& p, double temperature) {
    if (temperature == 1.0) return p;
    const auto q = p.clipped();
    Matrix out(q.rows(), q.classes());
    std::vector<double> z(q.classes());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t c = 0; c < q.classes(); ++c) z[c] = std::log(q(i, c)) / temperature;
        SoftmaxRegression::softmax_into(z, out.row(i));
    }
    return ProbabilityMatrix(std::move(out));
}

namespace detail {

class TemperatureObjective {
public:
    TemperatureObjective(const ProbabilityMatrix& p, std::span<const int> labels)
        : logp_(p.rows(), p.classes()), labels_(labels.begin(), labels.end()) {
        const auto q = p.clipped();
        for (std::size_t e = 0; e < q.matrix().data().size(); ++e)
            logp_.data()[e] = std::log(q.matrix().data()[e]);
    }

    // Mean NLL of softmax(log p / e^u).
    double operator()(double log_t) const {
        const double inv_t = std::exp(-log_t);
        double total = 0.0;
        for (std::size_t i = 0; i < logp_.rows(); ++i) {
            auto r = logp_.row(i);
            double mx = -std::numeric_limits<double>::infinity();
            for (double v : r) mx = std::max(mx, v * inv_t);
            double s = 0.0;
            for (double v : r) s += std::exp(v * inv_t - mx);
            total += mx + std::log(s) - r[static_cast<std::size_t>(labels_[i])] * inv_t;
        }
        return total / static_cast<double>(logp_.rows());
    }

private:
    Matrix logp_;
    std::vector<int> labels_;
};

}  // namespace detail

// Golden-section search on log T over [ln 0.05, ln 20] (tolerance 1e-4 in log
// space, at most 200 iterations). A flat objective returns T = 1. The interior
// optimum is compared against both bracket ends, so monotone objectives land
// exactly on the bound.
inline double fit_temperature(const ProbabilityMatrix& val_probs, std::span<const int> val_labels) {
    require_labels(val_probs, val_labels);
    require(val_probs.rows() > 0, ErrorCode::DegenerateInput, "temperature fit on zero rows");
    const detail::TemperatureObjective f(val_probs, val_labels);
    double lo = std::log(kMinTemperature);
    double hi = std::log(kMaxTemperature);
    const double f_lo = f(lo), f_hi = f(hi), f_mid = f(0.5 * (lo + hi)), f_one = f(0.0);
    const double top = std::max({f_lo, f_hi, f_mid, f_one});
    const double bottom = std::min({f_lo, f_hi, f_mid, f_one});
    if (top - bottom <= 1e-12) return 1.0;

    constexpr double kInvPhi = 0.6180339887498948482;
    double a = lo, b = hi;
    double x1 = b - kInvPhi * (b - a), x2 = a + kInvPhi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 200 && (b - a) > 1e-4; ++it) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - kInvPhi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + kInvPhi * (b - a);
            f2 = f(x2);
        }
    }
    const double u = 0.5 * (a + b);
    const double fu = f(u);
    if (f_hi < fu && f_hi <= f_lo) return kMaxTemperature;
    if (f_lo < fu) return kMinTemperature;
    return std::clamp(std::exp(u), kMinTemperature, kMaxTemperature);
}

inline TemperatureVector fit_temperatures(std::span<const ProbabilityMatrix> val_probs,
                                          std::span<const int> val_labels) {
    detail::require_pool(val_probs);
    std::vector<double> t;
    for (const auto& p : val_probs) t.push_back(fit_temperature(p, val_labels));
    return TemperatureVector(std::move(t));
}

// Uniform average of per-base temperature-scaled matrices, computed through
// combine_convex so that unit temperatures reproduce the plain uniform blend.
inline ProbabilityMatrix temp_scaled_blend(std::span<const ProbabilityMatrix> test_probs,
                                           const TemperatureVector& temps) {
    detail::require_pool(test_probs);
    require(temps.size() == test_probs.size(), ErrorCode::ShapeMismatch, "one temperature per base required");
    std::vector<ProbabilityMatrix> scaled;
    scaled.reserve(test_probs.size());
    for (std::size_t k = 0; k < test_probs.size(); ++k)
        scaled.push_back(temperature_scale(test_probs[k], temps[k]));
    return combine_convex(scaled, WeightVector::uniform(test_probs.size()));
}

// ============================================================================
// Seed (random-init) ensemble
// ============================================================================
struct SeedEnsembleConfig {
    int seeds_per_base = 3;
};

// Elementwise running mean; identical inputs return that input bit-for-bit.
inline ProbabilityMatrix seed_average(std::span<const ProbabilityMatrix> variants) {
    detail::require_pool(variants);
    Matrix mean = variants.front().matrix();
    for (std::size_t m = 1; m < variants.size(); ++m) {
        const auto& src = variants[m].matrix().data();
        auto& dst = mean.data();
        const double inv = 1.0 / static_cast<double>(m + 1);
        for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += (src[e] - dst[e]) * inv;
    }
    return ProbabilityMatrix(std::move(mean));
}

// Nonzero seed for variant m of base k, derived from the run's purpose seed.
inline std::uint64_t variant_seed(std::uint64_t seed, std::size_t base, std::size_t variant) {
    const std::uint64_t s = derive_seed(derive_seed(seed, base), variant);
    return s == 0 ? 1 : s;
}

class SeedEnsembleModel {
public:
    SeedEnsembleModel() = default;
    SeedEnsembleModel(std::vector<std::vector<LearnerPtr>> variants, WeightVector weights,
                      std::vector<double> scores)
        : variants_(std::move(variants)), weights_(std::move(weights)), scores_(std::move(scores)) {}

    const WeightVector& weights() const noexcept { return weights_; }
    const std::vector<double>& validation_scores() const noexcept { return scores_; }
    std::size_t base_count() const noexcept { return variants_.size(); }
    const std::vector<std::vector<LearnerPtr>>& variants() const noexcept { return variants_; }

    std::vector<ProbabilityMatrix> per_base(const Matrix& x) const {
        std::vector<ProbabilityMatrix> out;
        for (const auto& group : variants_) {
            std::vector<ProbabilityMatrix> preds;
            for (const auto& m : group) preds.push_back(m->predict_proba(x));
            out.push_back(seed_average(preds));
        }
        return out;
    }

    ProbabilityMatrix predict_proba(const Matrix& x) const { return combine_convex(per_base(x), weights_); }

private:
    std::vector<std::vector<LearnerPtr>> variants_;
    WeightVector weights_;
    std::vector<double> scores_;
};

// Per base: M seed-perturbed refits averaged uniformly. Across bases: weights
// proportional to the validation accuracy of each seed average.
inline SeedEnsembleModel fit_seed_ensemble(std::span<const Learner* const> bases, const Matrix& x_train,
                                           std::span<const int> y_train, const Matrix& x_val,
                                           std::span<const int> y_val, int class_count,
                                           const SeedEnsembleConfig& cfg, std::uint64_t seed) {
    require(!bases.empty(), ErrorCode::InvalidArgument, "empty base pool");
    require(cfg.seeds_per_base >= 2, ErrorCode::InvalidArgument, "seed ensemble needs M >= 2");
    for (const Learner* b : bases)
        if (!b->refittable())
            throw Error(ErrorCode::RefitUnsupported, "'" + b->name() + "' cannot be refit with new seeds");
    std::vector<std::vector<LearnerPtr>> variants(bases.size());
    std::vector<ProbabilityMatrix> val_avg;
    for (std::size_t k = 0; k < bases.size(); ++k) {
        std::vector<ProbabilityMatrix> val_preds;
        for (int m = 0; m < cfg.seeds_per_base; ++m) {
            auto model = bases[k]->clone(variant_seed(seed, k, static_cast<std::size_t>(m)));
            model->fit(x_train, y_train, class_count);
            val_preds.push_back(model->predict_proba(x_val));
            variants[k].push_back(std::move(model));
        }
        val_avg.push_back(seed_average(val_preds));
    }
    auto scores = validation_accuracies(val_avg, y_val);
    auto w = weights_from_scores(scores);
    return SeedEnsembleModel(std::move(variants), std::move(w), std::move(scores));
}

// ============================================================================
// Two-level cascade stacking with skip connections
// ============================================================================
struct CascadeConfig {
    int levels = 2;
    int oof_folds = 3;
    int final_selection_iterations = 50;
};

struct CascadeCandidate {
    std::string name;
    int level = 1;
    double oof_accuracy = 0.0;  // on train, from the level's out-of-fold predictions
    double val_accuracy = 0.0;
};

class CascadeModel {
public:
    CascadeModel() = default;

    const std::vector<CascadeCandidate>& candidates() const noexcept { return candidates_; }
    const GreedySelection& selection() const noexcept { return selection_; }
    std::size_t level1_count() const noexcept { return level1_.size(); }
    std::size_t level2_count() const noexcept { return level2_.size(); }

    // Level-1 and level-2 candidate outputs, in candidate order.
    std::vector<ProbabilityMatrix> candidate_outputs(const Matrix& x) const {
        std::vector<ProbabilityMatrix> out;
        for (const auto& m : level1_) out.push_back(m->predict_proba(x));
        if (!level2_.empty()) {
            Matrix feats = x;
            for (std::size_t k = 0; k < level1_.size(); ++k) feats = feats.hconcat(out[k].matrix());
            for (const auto& m : level2_) out.push_back(m->predict_proba(feats));
        }
        return out;
    }

    ProbabilityMatrix predict_proba(const Matrix& x) const {
        return combine_convex(candidate_outputs(x), selection_.weights);
    }

private:
    friend CascadeModel fit_cascade(std::span<const Learner* const>, std::span<const Learner* const>,
                                    const Matrix&, std::span<const int>, const Matrix&, std::span<const int>,
                                    int, const CascadeConfig&, std::uint64_t);
    std::vector<LearnerPtr> level1_;
    std::vector<LearnerPtr> level2_;
    std::vector<CascadeCandidate> candidates_;
    GreedySelection selection_;
};

// Level 1: 3-fold OOF of each base on train, plus a full-train refit.
// Level 2: each level-2 learner sees raw features concatenated with the level-1
// OOF probabilities (full-train level-1 predictions at inference), again with
// 3-fold OOF and a full-train refit. Final layer: greedy selection on the
// validation split over all level-1 and level-2 outputs.
inline CascadeModel fit_cascade(std::span<const Learner* const> bases,
                                std::span<const Learner* const> level2_pool, const Matrix& x_train,
                                std::span<const int> y_train, const Matrix& x_val,
                                std::span<const int> y_val, int class_count, const CascadeConfig& cfg,
                                std::uint64_t seed) {
    require(cfg.levels == 2, ErrorCode::InvalidArgument, "only two-level cascades are supported");
    require(!bases.empty(), ErrorCode::InvalidArgument, "empty base pool");
    for (const Learner* b : bases)
        if (!b->refittable())
            throw Error(ErrorCode::RefitUnsupported, "cascade cannot refit '" + b->name() + "'");
    for (const Learner* b : level2_pool)
        if (!b->refittable())
            throw Error(ErrorCode::RefitUnsupported, "cascade cannot refit '" + b->name() + "'");

    CascadeModel model;
    const auto folds1 = assign_folds(y_train, cfg.oof_folds, derive_seed(seed, "cascade-level1"));
    Matrix level2_train = x_train;
    Matrix level2_val = x_val;
    std::vector<ProbabilityMatrix> val_outputs;
    for (const Learner* b : bases) {
        const auto oof = oof_predict(*b, x_train, y_train, class_count, folds1);
        auto full = b->clone(b->seed());
        full->fit(x_train, y_train, class_count);
        auto val = full->predict_proba(x_val);
        model.candidates_.push_back({b->name(), 1, metrics::accuracy(oof, y_train), metrics::accuracy(val, y_val)});
        level2_train = level2_train.hconcat(oof.matrix());
        level2_val = level2_val.hconcat(val.matrix());
        val_outputs.push_back(std::move(val));
        model.level1_.push_back(std::move(full));
    }
    if (!level2_pool.empty()) {
        const auto folds2 = assign_folds(y_train, cfg.oof_folds, derive_seed(seed, "cascade-level2"));
        for (const Learner* l : level2_pool) {
            const auto oof = oof_predict(*l, level2_train, y_train, class_count, folds2);
            auto full = l->clone(l->seed());
            full->fit(level2_train, y_train, class_count);
            auto val = full->predict_proba(level2_val);
            model.candidates_.push_back(
                {l->name(), 2, metrics::accuracy(oof, y_train), metrics::accuracy(val, y_val)});
            val_outputs.push_back(std::move(val));
            model.level2_.push_back(std::move(full));
        }
    }
    model.selection_ = fit_greedy_selection(val_outputs, y_val, GreedyConfig{cfg.final_selection_iterations});
    return model;
}

// ============================================================================
// Audit serialization (schema 1)
// ============================================================================
inline json to_json(const WeightVector& w) { return w.values(); }

inline json weighted_average_json(const WeightVector& w, std::span<const double> scores) {
    return {{"schema", kModelSchema}, {"type", "weighted_average"}, {"weights", to_json(w)},
            {"scores", std::vector<double>(scores.begin(), scores.end())}};
}

inline json to_json(const GreedySelection& g) {
    return {{"schema", kModelSchema}, {"type", "greedy_selection"}, {"weights", to_json(g.weights)},
            {"counts", g.counts}, {"order", g.order}, {"trajectory", g.trajectory}};
}

inline json to_json(const StackingModel& m) {
    json rows = json::array();
    for (std::size_t c = 0; c < m.meta_weights().rows(); ++c) {
        auto r = m.meta_weights().row(c);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return {{"schema", kModelSchema}, {"type", "stacking"}, {"bases", m.base_count},
            {"classes", m.class_count}, {"meta_weights", rows}, {"epochs", m.meta.epochs_run()}};
}

inline json to_json(const TemperatureVector& t) {
    return {{"schema", kModelSchema}, {"type", "temperature_blend"}, {"temperatures", t.values()}};
}

inline json to_json(const SeedEnsembleModel& m, std::span<const std::string> base_names) {
    json seeds = json::array();
    for (const auto& group : m.variants()) {
        json g = json::array();
        for (const auto& v : group) g.push_back(v->seed());
        seeds.push_back(g);
    }
    return {{"schema", kModelSchema},
            {"type", "seed_ensemble"},
            {"bases", std::vector<std::string>(base_names.begin(), base_names.end())},
            {"seeds", seeds},
            {"scores", m.validation_scores()},
            {"weights", to_json(m.weights())}};
}

inline json to_json(const CascadeModel& m) {
    json cands = json::array();
    for (std::size_t i = 0; i < m.candidates().size(); ++i) {
        const auto& c = m.candidates()[i];
        cands.push_back({{"name", c.name}, {"level", c.level}, {"oof_accuracy", c.oof_accuracy},
                         {"val_accuracy", c.val_accuracy}, {"weight", m.selection().weights[i]}});
    }
    return {{"schema", kModelSchema}, {"type", "cascade"}, {"levels", 2},
            {"candidates", cands}, {"selection", to_json(m.selection())}};
}

}  // namespace tabens
