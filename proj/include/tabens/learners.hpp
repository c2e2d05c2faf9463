#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "linear_model.hpp"

namespace tabens {

enum class ModelKind { Builtin, FileBacked, External };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Builtin: return "builtin";
        case ModelKind::FileBacked: return "file_backed";
        case ModelKind::External: return "external";
    }
    return "unknown";
}

struct FitReport {
    double fit_seconds = 0.0;
    double predict_seconds = 0.0;
};

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

// Uniform classifier contract for every pool member.
class Learner {
public:
    virtual ~Learner() = default;

    virtual std::string name() const = 0;
    virtual ModelKind kind() const = 0;
    virtual std::uint64_t seed() const = 0;
    virtual bool refittable() const { return true; }

    // Fits on (features, labels). class_count fixes the output width even when
    // a class is missing from this particular training subset.
    virtual FitReport fit(const Matrix& features, std::span<const int> labels, int class_count) = 0;
    virtual ProbabilityMatrix predict_proba(const Matrix& features) const = 0;

    // Fresh, unfitted instance with the same configuration and the given seed.
    virtual std::unique_ptr<Learner> clone(std::uint64_t seed) const = 0;
};

using LearnerPtr = std::unique_ptr<Learner>;

namespace detail {

inline void check_training_input(const Matrix& x, std::span<const int> y, int class_count) {
    require(x.rows() > 0 && x.cols() > 0, ErrorCode::SingularData, "empty feature matrix");
    require(x.rows() == y.size(), ErrorCode::ShapeMismatch, "feature rows/label count mismatch");
    require(class_count >= 2, ErrorCode::InvalidArgument, "need at least two classes");
    for (double v : x.data())
        require(std::isfinite(v), ErrorCode::InvalidArgument, "non-finite feature value");
    for (int c : y)
        require(c >= 0 && c < class_count, ErrorCode::InvalidArgument, "label outside [0, C)");
}

// Rows kept by a seed-perturbed fit: seed 0 keeps all rows, any other seed a
// seeded 90% subsample (at least one row), in ascending order.
inline std::vector<std::size_t> perturbation_rows(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    if (seed == 0) return rows;
    SplitMix64 g(derive_seed(seed, "subsample"));
    g.shuffle(rows);
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(0.9 * static_cast<double>(n))));
    rows.resize(keep);
    std::sort(rows.begin(), rows.end());
    return rows;
}

}  // namespace detail

// z-score transform from training statistics; zero-variance columns keep scale 1.
class Standardizer {
public:
    Standardizer() = default;
    explicit Standardizer(const Matrix& x) : mean_(x.cols(), 0.0), scale_(x.cols(), 1.0) {
        const double n = static_cast<double>(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) mean_[j] += x(i, j);
        for (double& m : mean_) m /= n;
        std::vector<double> var(x.cols(), 0.0);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) {
                const double dlt = x(i, j) - mean_[j];
                var[j] += dlt * dlt;
            }
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double sd = std::sqrt(var[j] / n);
            scale_[j] = sd > 0.0 ? sd : 1.0;
        }
    }

    std::size_t width() const noexcept { return mean_.size(); }

    Matrix apply(const Matrix& x) const {
        require(x.cols() == width(), ErrorCode::WidthMismatch,
                "expected width " + std::to_string(width()) + ", got " + std::to_string(x.cols()));
        Matrix out = x;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            auto r = out.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] = (r[j] - mean_[j]) / scale_[j];
        }
        return out;
    }

private:
    std::vector<double> mean_;
    std::vector<double> scale_;
};

// ============================================================================
// Builtin learners
// ============================================================================

// Multinomial linear classifier on standardized features.
class LinearLearner final : public Learner {
public:
    explicit LinearLearner(std::uint64_t seed = 0, SoftmaxRegressionOptions opt = {})
        : seed_(seed), opt_(opt) {}

    std::string name() const override { return "linear"; }
    ModelKind kind() const override { return ModelKind::Builtin; }
    std::uint64_t seed() const override { return seed_; }

    FitReport fit(const Matrix& x, std::span<const int> y, int class_count) override {
        Stopwatch sw;
        detail::check_training_input(x, y, class_count);
        const auto rows = detail::perturbation_rows(x.rows(), seed_);
        const Matrix xs = x.select_rows(rows);
        const auto ys = select(y, rows);
        scaler_ = Standardizer(xs);
        auto opt = opt_;
        opt.init_seed = seed_;
        model_ = SoftmaxRegression::train(scaler_.apply(xs), ys, class_count, opt);
        return {sw.seconds(), 0.0};
    }

    ProbabilityMatrix predict_proba(const Matrix& x) const override {
        require(model_.has_value(), ErrorCode::NotFitted, "linear learner not fitted");
        return model_->predict_proba(scaler_.apply(x));
    }

    std::unique_ptr<Learner> clone(std::uint64_t seed) const override {
        return std::make_unique<LinearLearner>(seed, opt_);
    }

    const SoftmaxRegression& model() const {
        require(model_.has_value(), ErrorCode::NotFitted, "linear learner not fitted");
        return *model_;
    }

private:
    std::uint64_t seed_;
    SoftmaxRegressionOptions opt_;
    Standardizer scaler_;
    std::optional<SoftmaxRegression> model_;
};

// Gaussian class-conditional learner with diagonal covariance.
class GaussianLearner final : public Learner {
public:
    explicit GaussianLearner(std::uint64_t seed = 0, double var_smoothing = 1e-9)
        : seed_(seed), smoothing_(var_smoothing) {}

    std::string name() const override { return "gaussian"; }
    ModelKind kind() const override { return ModelKind::Builtin; }
    std::uint64_t seed() const override { return seed_; }

    FitReport fit(const Matrix& x, std::span<const int> y, int class_count) override {
        Stopwatch sw;
        detail::check_training_input(x, y, class_count);
        const auto rows = detail::perturbation_rows(x.rows(), seed_);
        const std::size_t d = x.cols();
        const auto C = static_cast<std::size_t>(class_count);

        // Smoothing scale: largest per-feature variance over the fitted rows.
        std::vector<double> gmean(d, 0.0), gvar(d, 0.0);
        for (std::size_t i : rows)
            for (std::size_t j = 0; j < d; ++j) gmean[j] += x(i, j);
        for (double& m : gmean) m /= static_cast<double>(rows.size());
        for (std::size_t i : rows)
            for (std::size_t j = 0; j < d; ++j) gvar[j] += (x(i, j) - gmean[j]) * (x(i, j) - gmean[j]);
        double max_var = 0.0;
        for (double& v : gvar) max_var = std::max(max_var, v / static_cast<double>(rows.size()));
        const double eps = smoothing_ * (max_var > 0.0 ? max_var : 1.0);

        mean_ = Matrix(C, d, 0.0);
        var_ = Matrix(C, d, 0.0);
        log_prior_.assign(C, -std::numeric_limits<double>::infinity());
        std::vector<std::size_t> count(C, 0);
        for (std::size_t i : rows) {
            const auto c = static_cast<std::size_t>(y[i]);
            ++count[c];
            for (std::size_t j = 0; j < d; ++j) mean_(c, j) += x(i, j);
        }
        for (std::size_t c = 0; c < C; ++c) {
            if (count[c] == 0) continue;
            for (std::size_t j = 0; j < d; ++j) mean_(c, j) /= static_cast<double>(count[c]);
            log_prior_[c] = std::log(static_cast<double>(count[c]) / static_cast<double>(rows.size()));
        }
        for (std::size_t i : rows) {
            const auto c = static_cast<std::size_t>(y[i]);
            for (std::size_t j = 0; j < d; ++j) {
                const double dlt = x(i, j) - mean_(c, j);
                var_(c, j) += dlt * dlt;
            }
        }
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < d; ++j)
                var_(c, j) = (count[c] ? var_(c, j) / static_cast<double>(count[c]) : 0.0) + eps;
        width_ = d;
        return {sw.seconds(), 0.0};
    }

    ProbabilityMatrix predict_proba(const Matrix& x) const override {
        require(width_ > 0, ErrorCode::NotFitted, "gaussian learner not fitted");
        require(x.cols() == width_, ErrorCode::WidthMismatch, "feature width differs from training");
        const std::size_t C = log_prior_.size();
        Matrix p(x.rows(), C);
        std::vector<double> ll(C);
        constexpr double kLog2Pi = 1.8378770664093454836;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < C; ++c) {
                if (!std::isfinite(log_prior_[c])) {
                    ll[c] = -std::numeric_limits<double>::infinity();
                    continue;
                }
                double s = log_prior_[c];
                for (std::size_t j = 0; j < width_; ++j) {
                    const double dlt = x(i, j) - mean_(c, j);
                    s -= 0.5 * (kLog2Pi + std::log(var_(c, j)) + dlt * dlt / var_(c, j));
                }
                ll[c] = s;
                mx = std::max(mx, s);
            }
            double z = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double e = std::isfinite(ll[c]) ? std::exp(ll[c] - mx) : 0.0;
                p(i, c) = e;
                z += e;
            }
            for (std::size_t c = 0; c < C; ++c) p(i, c) /= z;
        }
        return ProbabilityMatrix(std::move(p));
    }

    std::unique_ptr<Learner> clone(std::uint64_t seed) const override {
        return std::make_unique<GaussianLearner>(seed, smoothing_);
    }

private:
    std::uint64_t seed_;
    double smoothing_;
    std::size_t width_ = 0;
    Matrix mean_, var_;
    std::vector<double> log_prior_;
};

// k-nearest-neighbour voter on standardized features. Neighbours at equal
// distance are taken in training-row order.
class KnnLearner final : public Learner {
public:
    explicit KnnLearner(std::uint64_t seed = 0, std::size_t k = 5) : seed_(seed), k_(k) {}

    std::string name() const override { return "knn"; }
    ModelKind kind() const override { return ModelKind::Builtin; }
    std::uint64_t seed() const override { return seed_; }

    FitReport fit(const Matrix& x, std::span<const int> y, int class_count) override {
        Stopwatch sw;
        detail::check_training_input(x, y, class_count);
        const auto rows = detail::perturbation_rows(x.rows(), seed_);
        const Matrix xs = x.select_rows(rows);
        scaler_ = Standardizer(xs);
        train_ = scaler_.apply(xs);
        labels_ = select(y, rows);
        classes_ = class_count;
        return {sw.seconds(), 0.0};
    }

    ProbabilityMatrix predict_proba(const Matrix& x) const override {
        require(classes_ > 0, ErrorCode::NotFitted, "knn learner not fitted");
        const Matrix q = scaler_.apply(x);
        const std::size_t n = train_.rows();
        const std::size_t k = std::min(k_, n);
        Matrix p(q.rows(), static_cast<std::size_t>(classes_), 0.0);
        std::vector<std::pair<double, std::size_t>> dist(n);
        for (std::size_t i = 0; i < q.rows(); ++i) {
            auto qi = q.row(i);
            for (std::size_t t = 0; t < n; ++t) {
                auto tr = train_.row(t);
                double s = 0.0;
                for (std::size_t j = 0; j < qi.size(); ++j) s += (qi[j] - tr[j]) * (qi[j] - tr[j]);
                dist[t] = {s, t};
            }
            std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
            for (std::size_t t = 0; t < k; ++t)
                p(i, static_cast<std::size_t>(labels_[dist[t].second])) += 1.0;
            for (double& v : p.row(i)) v /= static_cast<double>(k);
        }
        return ProbabilityMatrix(std::move(p));
    }

    std::unique_ptr<Learner> clone(std::uint64_t seed) const override {
        return std::make_unique<KnnLearner>(seed, k_);
    }

private:
    std::uint64_t seed_;
    std::size_t k_;
    Standardizer scaler_;
    Matrix train_;
    std::vector<int> labels_;
    int classes_ = 0;
};

// Predicts training class frequencies for every row.
class ClassPriorLearner final : public Learner {
public:
    explicit ClassPriorLearner(std::uint64_t seed = 0) : seed_(seed) {}

    std::string name() const override { return "prior"; }
    ModelKind kind() const override { return ModelKind::Builtin; }
    std::uint64_t seed() const override { return seed_; }

    FitReport fit(const Matrix& x, std::span<const int> y, int class_count) override {
        Stopwatch sw;
        detail::check_training_input(x, y, class_count);
        const auto rows = detail::perturbation_rows(x.rows(), seed_);
        prior_.assign(static_cast<std::size_t>(class_count), 0.0);
        for (std::size_t i : rows) prior_[static_cast<std::size_t>(y[i])] += 1.0;
        for (double& v : prior_) v /= static_cast<double>(rows.size());
        width_ = x.cols();
        return {sw.seconds(), 0.0};
    }

    ProbabilityMatrix predict_proba(const Matrix& x) const override {
        require(!prior_.empty(), ErrorCode::NotFitted, "prior learner not fitted");
        require(x.cols() == width_, ErrorCode::WidthMismatch, "feature width differs from training");
        Matrix p(x.rows(), prior_.size());
        for (std::size_t i = 0; i < x.rows(); ++i)
            std::copy(prior_.begin(), prior_.end(), p.row(i).begin());
        return ProbabilityMatrix(std::move(p));
    }

    std::unique_ptr<Learner> clone(std::uint64_t seed) const override {
        return std::make_unique<ClassPriorLearner>(seed);
    }

private:
    std::uint64_t seed_;
    std::vector<double> prior_;
    std::size_t width_ = 0;
};

// ============================================================================
// File-backed predictor: a stored n x C matrix for one (model, dataset, split).
// Predict-only.
// ============================================================================
class FileBackedPredictor final : public Learner {
public:
    FileBackedPredictor(std::string model, ProbabilityMatrix stored, std::string dataset = {},
                        std::string split = {})
        : model_(std::move(model)),
          dataset_(std::move(dataset)),
          split_(std::move(split)),
          stored_(std::move(stored)) {}

    std::string name() const override { return model_; }
    ModelKind kind() const override { return ModelKind::FileBacked; }
    std::uint64_t seed() const override { return 0; }
    bool refittable() const override { return false; }

    const std::string& dataset() const noexcept { return dataset_; }
    const std::string& split() const noexcept { return split_; }
    const ProbabilityMatrix& stored() const noexcept { return stored_; }

    FitReport fit(const Matrix&, std::span<const int>, int) override {
        throw Error(ErrorCode::RefitUnsupported,
                    "file-backed predictor '" + model_ + "' cannot be refit");
    }

    ProbabilityMatrix predict_proba(const Matrix& x) const override {
        require(x.rows() == stored_.rows(), ErrorCode::ShapeMismatch,
                "file-backed predictor '" + model_ + "' stores " + std::to_string(stored_.rows()) +
                    " rows, query has " + std::to_string(x.rows()));
        return stored_;
    }

    std::unique_ptr<Learner> clone(std::uint64_t) const override {
        throw Error(ErrorCode::RefitUnsupported,
                    "file-backed predictor '" + model_ + "' cannot be refit");
    }

private:
    std::string model_;
    std::string dataset_;
    std::string split_;
    ProbabilityMatrix stored_;
};

inline LearnerPtr make_builtin(const std::string& name, std::uint64_t seed = 0) {
    if (name == "linear") return std::make_unique<LinearLearner>(seed);
    if (name == "gaussian") return std::make_unique<GaussianLearner>(seed);
    if (name == "knn") return std::make_unique<KnnLearner>(seed);
    if (name == "prior") return std::make_unique<ClassPriorLearner>(seed);
    throw Error(ErrorCode::InvalidConfig, "unknown builtin learner '" + name + "'");
}

inline std::vector<std::string> builtin_pool_names() { return {"linear", "gaussian", "knn"}; }

// ============================================================================
// Out-of-fold prediction
// ============================================================================

// Row i of the result comes from a clone of `prototype` fitted on every fold
// except fold_of_row[i]. Clones share the prototype's seed.
inline ProbabilityMatrix oof_predict(const Learner& prototype, const Matrix& x,
                                     std::span<const int> y, int class_count,
                                     const FoldAssignment& folds, FitReport* timing = nullptr) {
    if (!prototype.refittable())
        throw Error(ErrorCode::RefitUnsupported,
                    "'" + prototype.name() + "' cannot produce out-of-fold predictions");
    require(folds.fold_of_row.size() == x.rows() && x.rows() == y.size(), ErrorCode::ShapeMismatch,
            "fold assignment does not cover all rows");
    Matrix out(x.rows(), static_cast<std::size_t>(class_count), 0.0);
    for (int f = 0; f < folds.fold_count; ++f) {
        const auto held = folds.members(f);
        if (held.empty()) continue;
        const auto kept = folds.complement(f);
        require(!kept.empty(), ErrorCode::TooFewSamples, "fold leaves no training rows");
        auto model = prototype.clone(prototype.seed());
        const auto rep = model->fit(x.select_rows(kept), select(y, kept), class_count);
        Stopwatch sw;
        const auto p = model->predict_proba(x.select_rows(held));
        if (timing) {
            timing->fit_seconds += rep.fit_seconds;
            timing->predict_seconds += sw.seconds();
        }
        require(p.classes() == out.cols(), ErrorCode::ShapeMismatch,
                "fold model returned the wrong class count");
        for (std::size_t r = 0; r < held.size(); ++r)
            std::copy(p.row(r).begin(), p.row(r).end(), out.row(held[r]).begin());
    }
    return ProbabilityMatrix(std::move(out));
}

}  // namespace tabens
