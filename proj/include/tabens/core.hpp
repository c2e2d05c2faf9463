#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tabens {

// ============================================================================
// Errors
// ============================================================================
enum class ErrorCode {
    ShapeMismatch,
    ClassTooSmall,
    TooFewSamples,
    SingularData,
    WidthMismatch,
    NotFitted,
    RefitUnsupported,
    SingleClass,
    DegenerateInput,
    UnsupportedK,
    TooFewPairs,
    ZeroVariance,
    NoGroups,
    InsufficientOverlap,
    InvalidArgument,
    InvalidConfig,
    Io,
    Protocol,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::ClassTooSmall: return "ClassTooSmall";
        case ErrorCode::TooFewSamples: return "TooFewSamples";
        case ErrorCode::SingularData: return "SingularData";
        case ErrorCode::WidthMismatch: return "WidthMismatch";
        case ErrorCode::NotFitted: return "NotFitted";
        case ErrorCode::RefitUnsupported: return "RefitUnsupported";
        case ErrorCode::SingleClass: return "SingleClass";
        case ErrorCode::DegenerateInput: return "DegenerateInput";
        case ErrorCode::UnsupportedK: return "UnsupportedK";
        case ErrorCode::TooFewPairs: return "TooFewPairs";
        case ErrorCode::ZeroVariance: return "ZeroVariance";
        case ErrorCode::NoGroups: return "NoGroups";
        case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::Io: return "Io";
        case ErrorCode::Protocol: return "Protocol";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

// ============================================================================
// Dense row-major matrix
// ============================================================================
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        require(data_.size() == rows_ * cols_, ErrorCode::ShapeMismatch,
                "matrix buffer does not match dimensions");
    }

    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) return {};
        Matrix m(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            require(rows[i].size() == m.cols_, ErrorCode::ShapeMismatch, "ragged rows");
            std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
        }
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0 || cols_ == 0; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    const std::vector<double>& data() const noexcept { return data_; }
    std::vector<double>& data() noexcept { return data_; }

    Matrix select_rows(std::span<const std::size_t> idx) const {
        Matrix out(idx.size(), cols_);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            auto src = row(idx[r]);
            std::copy(src.begin(), src.end(), out.row(r).begin());
        }
        return out;
    }

    // [this | other], row-aligned.
    Matrix hconcat(const Matrix& other) const {
        require(rows_ == other.rows_, ErrorCode::ShapeMismatch, "hconcat row mismatch");
        Matrix out(rows_, cols_ + other.cols_);
        for (std::size_t i = 0; i < rows_; ++i) {
            auto dst = out.row(i);
            std::copy(row(i).begin(), row(i).end(), dst.begin());
            std::copy(other.row(i).begin(), other.row(i).end(), dst.begin() + cols_);
        }
        return out;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Lowest index wins ties, everywhere in the library.
inline int argmax(std::span<const double> v) {
    int best = 0;
    for (std::size_t c = 1; c < v.size(); ++c)
        if (v[c] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    return best;
}

inline constexpr double kRowSumTolerance = 1e-9;
inline constexpr double kClipEpsilon = 1e-15;

// ============================================================================
// ProbabilityMatrix: n x C, non-negative, rows summing to 1 within 1e-9.
// ============================================================================
class ProbabilityMatrix {
public:
    ProbabilityMatrix() = default;
    explicit ProbabilityMatrix(Matrix m) : m_(std::move(m)) {
        require(m_.rows() == 0 || m_.cols() >= 1, ErrorCode::ShapeMismatch,
                "probability matrix needs at least one class");
        for (std::size_t i = 0; i < m_.rows(); ++i) {
            double s = 0.0;
            for (double p : m_.row(i)) {
                require(std::isfinite(p) && p >= 0.0, ErrorCode::InvalidArgument,
                        "probability entries must be finite and non-negative (row " +
                            std::to_string(i) + ")");
                s += p;
            }
            require(std::abs(s - 1.0) <= kRowSumTolerance, ErrorCode::InvalidArgument,
                    "probability row " + std::to_string(i) + " sums to " + std::to_string(s));
        }
    }

    // Divides each row by its sum; for inputs that are stochastic only up to rounding.
    static ProbabilityMatrix normalized(Matrix m) {
        for (std::size_t i = 0; i < m.rows(); ++i) {
            auto r = m.row(i);
            double s = std::accumulate(r.begin(), r.end(), 0.0);
            require(s > 0.0 && std::isfinite(s), ErrorCode::InvalidArgument,
                    "cannot normalize row with non-positive mass");
            for (double& p : r) p /= s;
        }
        return ProbabilityMatrix(std::move(m));
    }

    static ProbabilityMatrix uniform(std::size_t rows, std::size_t classes) {
        return ProbabilityMatrix(Matrix(rows, classes, 1.0 / static_cast<double>(classes)));
    }

    std::size_t rows() const noexcept { return m_.rows(); }
    std::size_t classes() const noexcept { return m_.cols(); }
    double operator()(std::size_t i, std::size_t c) const { return m_(i, c); }
    std::span<const double> row(std::size_t i) const { return m_.row(i); }
    const Matrix& matrix() const noexcept { return m_; }

    int predicted(std::size_t i) const { return argmax(m_.row(i)); }

    std::vector<int> hard_predictions() const {
        std::vector<int> out(rows());
        for (std::size_t i = 0; i < rows(); ++i) out[i] = predicted(i);
        return out;
    }

    double confidence(std::size_t i) const {
        auto r = m_.row(i);
        return *std::max_element(r.begin(), r.end());
    }

    ProbabilityMatrix select_rows(std::span<const std::size_t> idx) const {
        return ProbabilityMatrix(m_.select_rows(idx));
    }

    // Rows clipped to [eps, 1] and renormalized; the form consumed before any log.
    ProbabilityMatrix clipped(double eps = kClipEpsilon) const {
        Matrix out = m_;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            auto r = out.row(i);
            double s = 0.0;
            for (double& p : r) {
                p = std::clamp(p, eps, 1.0);
                s += p;
            }
            for (double& p : r) p /= s;
        }
        return ProbabilityMatrix(std::move(out));
    }

    friend bool operator==(const ProbabilityMatrix&, const ProbabilityMatrix&) = default;

private:
    Matrix m_;
};

inline void require_same_shape(const ProbabilityMatrix& a, const ProbabilityMatrix& b) {
    require(a.rows() == b.rows() && a.classes() == b.classes(), ErrorCode::ShapeMismatch,
            "probability matrices differ in shape");
}

inline void require_labels(const ProbabilityMatrix& p, std::span<const int> labels) {
    require(p.rows() == labels.size(), ErrorCode::ShapeMismatch,
            "label count does not match prediction rows");
    for (int y : labels)
        require(y >= 0 && static_cast<std::size_t>(y) < p.classes(), ErrorCode::InvalidArgument,
                "label outside [0, C)");
}

// ============================================================================
// WeightVector: convex weights over K bases.
// ============================================================================
class WeightVector {
public:
    WeightVector() = default;
    explicit WeightVector(std::vector<double> w) : w_(std::move(w)) {
        require(!w_.empty(), ErrorCode::InvalidArgument, "empty weight vector");
        double s = 0.0;
        for (double x : w_) {
            require(std::isfinite(x) && x >= 0.0, ErrorCode::InvalidArgument,
                    "weights must be finite and non-negative");
            s += x;
        }
        require(std::abs(s - 1.0) <= 1e-12, ErrorCode::InvalidArgument, "weights must sum to 1");
    }

    static WeightVector uniform(std::size_t k) {
        return WeightVector(std::vector<double>(k, 1.0 / static_cast<double>(k)));
    }

    static WeightVector one_hot(std::size_t k, std::size_t at) {
        std::vector<double> w(k, 0.0);
        w.at(at) = 1.0;
        return WeightVector(std::move(w));
    }

    std::size_t size() const noexcept { return w_.size(); }
    double operator[](std::size_t k) const { return w_[k]; }
    const std::vector<double>& values() const noexcept { return w_; }

    friend bool operator==(const WeightVector&, const WeightVector&) = default;

private:
    std::vector<double> w_;
};

// ============================================================================
// Deterministic randomness
//
// SplitMix64 (Steele, Lea, Flood 2014) drives every shuffle, subsample and
// weight initialisation. The standard library distributions are avoided so
// that index sets are bit-identical across toolchains.
// ============================================================================
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform integer in [0, bound) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t x;
        do { x = next(); } while (x >= limit);
        return x % bound;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Box-Muller; one variate per call.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Seed hierarchy: master -> dataset -> purpose. Each level mixes a tag into the
// parent seed through one SplitMix64 step.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
    SplitMix64 g(parent ^ fnv1a(tag));
    return g.next();
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
    SplitMix64 g(parent ^ (0xA0761D6478BD642FULL * (index + 1)));
    return g.next();
}

// ============================================================================
// Dataset
// ============================================================================
struct Dataset {
    std::string id;
    Matrix features;
    std::vector<int> labels;
    int class_count = 0;
    std::vector<std::string> class_names;
    std::vector<std::string> feature_names;
    std::optional<std::size_t> group_column;

    std::size_t size() const noexcept { return labels.size(); }

    void validate() const {
        require(features.rows() == labels.size(), ErrorCode::ShapeMismatch,
                "feature rows do not match label count");
        require(class_count >= 2, ErrorCode::InvalidArgument, "need at least two classes");
        std::vector<std::size_t> seen(static_cast<std::size_t>(class_count), 0);
        for (int y : labels) {
            require(y >= 0 && y < class_count, ErrorCode::InvalidArgument, "label outside [0, C)");
            ++seen[static_cast<std::size_t>(y)];
        }
        for (std::size_t c = 0; c < seen.size(); ++c)
            require(seen[c] > 0, ErrorCode::ClassTooSmall,
                    "class " + std::to_string(c) + " has no samples");
        for (double x : features.data())
            require(std::isfinite(x), ErrorCode::InvalidArgument, "non-finite feature value");
        if (group_column)
            require(*group_column < features.cols(), ErrorCode::InvalidArgument,
                    "group column out of range");
    }

    std::vector<int> groups() const {
        require(group_column.has_value(), ErrorCode::NoGroups, "dataset has no group column");
        std::vector<int> g(size());
        for (std::size_t i = 0; i < size(); ++i)
            g[i] = static_cast<int>(features(i, *group_column));
        return g;
    }
};

inline std::vector<int> select(std::span<const int> v, std::span<const std::size_t> idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
    return out;
}

// ============================================================================
// Splitting
// ============================================================================
struct SplitSpec {
    std::uint64_t seed = 0;
    double test_fraction = 0.20;
    double val_fraction_of_train = 0.25;
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> by_class(std::span<const std::size_t> indices,
                                                      std::span<const int> labels,
                                                      int class_count) {
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(class_count));
    for (std::size_t i : indices) out[static_cast<std::size_t>(labels[i])].push_back(i);
    return out;
}

// Per-class take counts for `fraction` of each stratum: floor quotas plus
// largest-remainder top-up so the total is round(fraction * n). A class never
// gives away its last member.
inline std::vector<std::size_t> stratum_quotas(const std::vector<std::size_t>& sizes,
                                               double fraction) {
    const std::size_t n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<std::size_t> quota(sizes.size());
    std::vector<double> remainder(sizes.size());
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        const double exact = fraction * static_cast<double>(sizes[c]);
        quota[c] = std::min(static_cast<std::size_t>(std::floor(exact)),
                            sizes[c] > 0 ? sizes[c] - 1 : 0);
        remainder[c] = exact - static_cast<double>(quota[c]);
        assigned += quota[c];
    }
    std::vector<std::size_t> order(sizes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t c : order) {
        if (assigned >= target) break;
        if (remainder[c] <= 0.0) continue;
        if (quota[c] + 1 >= sizes[c]) continue;
        ++quota[c];
        ++assigned;
    }
    return quota;
}

}  // namespace detail

// Stratified train/val/test partition. Each stratum is shuffled with a seeded
// SplitMix64 and sliced: first the test quota, then the validation quota of the
// remainder, the rest is train. Classes with fewer than three members go to
// train whole and are reported in `warnings`.
inline Split stratified_split(const Dataset& ds, const SplitSpec& spec) {
    require(spec.test_fraction > 0.0 && spec.test_fraction < 1.0 &&
                spec.val_fraction_of_train > 0.0 && spec.val_fraction_of_train < 1.0,
            ErrorCode::InvalidArgument, "split fractions must lie in (0, 1)");
    require(ds.labels.size() == ds.features.rows(), ErrorCode::ShapeMismatch,
            "labels/features mismatch");
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    auto strata = detail::by_class(all, ds.labels, ds.class_count);

    SplitMix64 rng(spec.seed);
    std::vector<std::size_t> sizes(strata.size());
    Split out;
    for (std::size_t c = 0; c < strata.size(); ++c) {
        if (strata[c].empty())
            throw Error(ErrorCode::ClassTooSmall,
                        "class " + std::to_string(c) + " cannot be represented in train");
        rng.shuffle(strata[c]);
        if (strata[c].size() < 3)
            out.warnings.push_back("class " + std::to_string(c) + " has " +
                                   std::to_string(strata[c].size()) +
                                   " sample(s); routed to train only");
        sizes[c] = strata[c].size() < 3 ? 0 : strata[c].size();
    }

    const auto test_q = detail::stratum_quotas(sizes, spec.test_fraction);
    std::vector<std::size_t> rest(sizes.size());
    for (std::size_t c = 0; c < sizes.size(); ++c) rest[c] = sizes[c] - test_q[c];
    const auto val_q = detail::stratum_quotas(rest, spec.val_fraction_of_train);

    for (std::size_t c = 0; c < strata.size(); ++c) {
        const auto& s = strata[c];
        std::size_t pos = 0;
        for (; pos < test_q[c]; ++pos) out.test.push_back(s[pos]);
        for (std::size_t k = 0; k < val_q[c]; ++k, ++pos) out.val.push_back(s[pos]);
        for (; pos < s.size(); ++pos) out.train.push_back(s[pos]);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

// ============================================================================
// Fold assignment
// ============================================================================
struct FoldAssignment {
    std::vector<int> fold_of_row;  // parallel to the index set it was built from
    int fold_count = 0;

    std::vector<std::size_t> members(int fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < fold_of_row.size(); ++i)
            if (fold_of_row[i] == fold) out.push_back(i);
        return out;
    }

    std::vector<std::size_t> complement(int fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < fold_of_row.size(); ++i)
            if (fold_of_row[i] != fold) out.push_back(i);
        return out;
    }
};

// Stratified folds over `labels` (one label per row of the set being folded).
// Each stratum is shuffled, then dealt round-robin; the dealing position
// carries over between classes so total fold sizes also stay within one.
inline FoldAssignment assign_folds(std::span<const int> labels, int fold_count,
                                   std::uint64_t seed) {
    require(fold_count >= 2, ErrorCode::InvalidArgument, "fold count must be >= 2");
    require(labels.size() >= static_cast<std::size_t>(fold_count), ErrorCode::TooFewSamples,
            "fewer rows than folds");
    int max_label = -1;
    for (int y : labels) {
        require(y >= 0, ErrorCode::InvalidArgument, "negative label");
        max_label = std::max(max_label, y);
    }
    std::vector<std::size_t> rows(labels.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    auto strata = detail::by_class(rows, labels, max_label + 1);

    SplitMix64 rng(seed);
    FoldAssignment fa;
    fa.fold_count = fold_count;
    fa.fold_of_row.assign(labels.size(), -1);
    std::size_t cursor = 0;
    for (auto& s : strata) {
        rng.shuffle(s);
        for (std::size_t i : s) {
            fa.fold_of_row[i] = static_cast<int>(cursor % static_cast<std::size_t>(fold_count));
            ++cursor;
        }
    }
    return fa;
}

}  // namespace tabens
