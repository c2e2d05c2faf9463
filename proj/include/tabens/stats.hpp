#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "metrics.hpp"

namespace tabens::stats {

// ============================================================================
// Special functions
// ============================================================================

// Regularized upper incomplete gamma Q(a, x): power series for P when
// x < a + 1, modified Lentz continued fraction for Q otherwise.
inline double gamma_q(double a, double x) {
    require(a > 0.0 && x >= 0.0, ErrorCode::InvalidArgument, "gamma_q needs a > 0, x >= 0");
    if (x == 0.0) return 1.0;
    constexpr double kEps = 1e-16;
    constexpr int kMaxIter = 10000;
    const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a, term = 1.0 / a, sum = term;
        for (int n = 0; n < kMaxIter; ++n) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * kEps) break;
        }
        return 1.0 - sum * std::exp(log_prefix);
    }
    constexpr double kTiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / kTiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kEps) break;
    }
    return std::exp(log_prefix) * h;
}

// Upper tail of the chi-square distribution.
inline double chi_square_sf(double chi2, double dof) {
    require(dof > 0.0, ErrorCode::InvalidArgument, "chi-square needs positive degrees of freedom");
    if (chi2 <= 0.0) return 1.0;
    return gamma_q(0.5 * dof, 0.5 * chi2);
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// ============================================================================
// Ranks
// ============================================================================
struct RankMatrix {
    Matrix ranks;  // N datasets x K methods; 1 = best, ties averaged
    std::vector<std::string> method_names;
    std::vector<std::string> dataset_ids;

    std::size_t datasets() const noexcept { return ranks.rows(); }
    std::size_t methods() const noexcept { return ranks.cols(); }

    std::vector<double> mean_ranks() const {
        std::vector<double> m(methods(), 0.0);
        for (std::size_t i = 0; i < datasets(); ++i)
            for (std::size_t j = 0; j < methods(); ++j) m[j] += ranks(i, j);
        for (double& v : m) v /= static_cast<double>(datasets());
        return m;
    }
};

inline RankMatrix rank_table(const Matrix& values, bool higher_is_better,
                             std::vector<std::string> methods = {}, std::vector<std::string> datasets = {}) {
    for (double v : values.data()) require(std::isfinite(v), ErrorCode::InvalidArgument, "non-finite metric value");
    RankMatrix r;
    r.ranks = Matrix(values.rows(), values.cols());
    std::vector<double> row(values.cols());
    for (std::size_t i = 0; i < values.rows(); ++i) {
        for (std::size_t j = 0; j < values.cols(); ++j) row[j] = higher_is_better ? -values(i, j) : values(i, j);
        const auto mr = metrics::midranks(row);
        std::copy(mr.begin(), mr.end(), r.ranks.row(i).begin());
    }
    r.method_names = std::move(methods);
    r.dataset_ids = std::move(datasets);
    return r;
}

// ============================================================================
// Friedman test (classic form, no tie correction)
// ============================================================================
struct FriedmanResult {
    double chi2 = 0.0;
    double p = 1.0;
    std::size_t n = 0, k = 0;
};

inline FriedmanResult friedman(const RankMatrix& r) {
    const std::size_t N = r.datasets(), K = r.methods();
    require(N >= 2, ErrorCode::DegenerateInput, "friedman needs at least two datasets");
    require(K >= 2, ErrorCode::DegenerateInput, "friedman needs at least two methods");
    const auto R = r.mean_ranks();
    const double k = static_cast<double>(K), n = static_cast<double>(N);
    double sum_sq = 0.0;
    for (double v : R) sum_sq += v * v;
    FriedmanResult out;
    out.chi2 = 12.0 * n / (k * (k + 1.0)) * (sum_sq - k * (k + 1.0) * (k + 1.0) / 4.0);
    out.p = chi_square_sf(out.chi2, k - 1.0);
    out.n = N;
    out.k = K;
    return out;
}

// ============================================================================
// Nemenyi critical difference
// ============================================================================

// Two-tailed Nemenyi critical values q_alpha (studentized range / sqrt 2) for
// K = 2..20, following Demsar (2006, JMLR 7, Table 5) for K <= 10 and the
// studentized-range quantiles at infinite df beyond.
inline constexpr std::array<double, 19> kNemenyiQ05 = {
    1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164, 3.219,
    3.268, 3.313, 3.354, 3.391, 3.426, 3.458, 3.489, 3.517, 3.544};
inline constexpr std::array<double, 19> kNemenyiQ10 = {
    1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920, 2.978,
    3.030, 3.077, 3.120, 3.159, 3.196, 3.230, 3.261, 3.291, 3.319};

inline double nemenyi_q(std::size_t k, double alpha) {
    require(k >= 2 && k <= 20, ErrorCode::UnsupportedK, "Nemenyi table covers K = 2..20, got " + std::to_string(k));
    if (alpha == 0.05) return kNemenyiQ05[k - 2];
    if (alpha == 0.10) return kNemenyiQ10[k - 2];
    throw Error(ErrorCode::InvalidArgument, "Nemenyi alpha must be 0.05 or 0.10");
}

inline double nemenyi_cd(std::size_t k, std::size_t n, double alpha = 0.05) {
    require(n >= 1, ErrorCode::DegenerateInput, "Nemenyi needs at least one dataset");
    const double q = nemenyi_q(k, alpha);
    const double kk = static_cast<double>(k);
    return q * std::sqrt(kk * (kk + 1.0) / (6.0 * static_cast<double>(n)));
}

// Maximal runs of methods (sorted by mean rank) spanning no more than `cd`;
// the bars of a critical-difference diagram. Indices refer to sorted order.
inline std::vector<std::pair<std::size_t, std::size_t>> cd_groups(std::span<const double> sorted_ranks, double cd) {
    std::vector<std::pair<std::size_t, std::size_t>> groups;
    std::size_t last_end = 0;
    for (std::size_t i = 0; i < sorted_ranks.size(); ++i) {
        std::size_t j = i;
        while (j + 1 < sorted_ranks.size() && sorted_ranks[j + 1] - sorted_ranks[i] <= cd) ++j;
        if (j > i && (groups.empty() || j > last_end)) {
            groups.emplace_back(i, j);
            last_end = j;
        }
    }
    return groups;
}

// ============================================================================
// Wilcoxon signed-rank test
// ============================================================================
struct WilcoxonResult {
    double w_plus = 0.0;
    double p = 1.0;
    std::size_t n_used = 0;  // pairs left after dropping zero differences
    bool exact = false;
};

inline constexpr std::size_t kWilcoxonExactMax = 12;

namespace detail {

struct SignedRanks {
    std::vector<double> ranks;  // midranks of |d|, zero differences removed
    std::vector<bool> positive;
    double w_plus = 0.0;
    double tie_term = 0.0;  // sum over tie groups of t^3 - t
};

inline SignedRanks signed_ranks(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size(), ErrorCode::ShapeMismatch, "wilcoxon needs paired samples");
    std::vector<double> mag;
    SignedRanks s;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (d == 0.0) continue;
        mag.push_back(std::abs(d));
        s.positive.push_back(d > 0.0);
    }
    s.ranks = metrics::midranks(mag);
    for (std::size_t i = 0; i < s.ranks.size(); ++i)
        if (s.positive[i]) s.w_plus += s.ranks[i];
    std::map<double, std::size_t> ties;
    for (double m : mag) ++ties[m];
    for (const auto& [v, t] : ties) {
        const double tt = static_cast<double>(t);
        s.tie_term += tt * tt * tt - tt;
    }
    return s;
}

}  // namespace detail

// Two-sided p from the sign-flip distribution of W+, enumerated exactly.
// Midranks are doubled so every sum is an integer.
inline double wilcoxon_exact_p(std::span<const double> ranks, double w_plus) {
    const std::size_t n = ranks.size();
    require(n <= 30, ErrorCode::InvalidArgument, "exact enumeration limited to 30 pairs");
    std::vector<std::int64_t> r2(n);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        r2[i] = std::llround(2.0 * ranks[i]);
        total += r2[i];
    }
    // counts[s] = number of sign patterns with doubled W+ = s
    std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
    counts[0] = 1.0;
    std::int64_t reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::int64_t s = reach; s >= 0; --s)
            counts[static_cast<std::size_t>(s + r2[i])] += counts[static_cast<std::size_t>(s)];
        reach += r2[i];
    }
    const auto w2 = std::llround(2.0 * w_plus);
    double le = 0.0, ge = 0.0;
    for (std::int64_t s = 0; s <= total; ++s) {
        if (s <= w2) le += counts[static_cast<std::size_t>(s)];
        if (s >= w2) ge += counts[static_cast<std::size_t>(s)];
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    return std::min(1.0, 2.0 * std::min(le, ge) / all);
}

// Normal approximation with tie-corrected variance and 0.5 continuity correction.
inline double wilcoxon_normal_p(std::size_t n, double w_plus, double tie_term) {
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) return 1.0;
    const double z = std::max(std::abs(w_plus - mu) - 0.5, 0.0) / std::sqrt(var);
    return std::min(1.0, 2.0 * normal_sf(z));
}

enum class WilcoxonMethod { Auto, Exact, Normal };

// Zero differences are dropped before ranking. Auto uses exact enumeration up
// to 12 remaining pairs and the normal approximation beyond.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                           WilcoxonMethod method = WilcoxonMethod::Auto) {
    const auto s = detail::signed_ranks(x, y);
    const std::size_t n = s.ranks.size();
    require(n >= 5, ErrorCode::TooFewPairs,
            "wilcoxon needs at least 5 non-zero differences, got " + std::to_string(n));
    WilcoxonResult r;
    r.w_plus = s.w_plus;
    r.n_used = n;
    r.exact = method == WilcoxonMethod::Exact || (method == WilcoxonMethod::Auto && n <= kWilcoxonExactMax);
    r.p = r.exact ? wilcoxon_exact_p(s.ranks, s.w_plus) : wilcoxon_normal_p(n, s.w_plus, s.tie_term);
    return r;
}

// ============================================================================
// Head-to-head, frontier, correlation, oracle comparison
// ============================================================================
struct WinMatrix {
    std::vector<std::vector<std::size_t>> wins;  // wins[i][j]: datasets where i strictly beats j
    std::vector<std::vector<double>> percent;
    std::size_t datasets = 0;
};

inline WinMatrix win_matrix(const Matrix& values) {
    for (double v : values.data()) require(std::isfinite(v), ErrorCode::InvalidArgument, "non-finite metric value");
    const std::size_t N = values.rows(), K = values.cols();
    WinMatrix w;
    w.datasets = N;
    w.wins.assign(K, std::vector<std::size_t>(K, 0));
    w.percent.assign(K, std::vector<double>(K, 0.0));
    for (std::size_t d = 0; d < N; ++d)
        for (std::size_t i = 0; i < K; ++i)
            for (std::size_t j = 0; j < K; ++j)
                if (i != j && values(d, i) > values(d, j)) ++w.wins[i][j];
    if (N)
        for (std::size_t i = 0; i < K; ++i)
            for (std::size_t j = 0; j < K; ++j)
                w.percent[i][j] = 100.0 * static_cast<double>(w.wins[i][j]) / static_cast<double>(N);
    return w;
}

struct FrontierPoint {
    std::string method;
    double accuracy = 0.0;
    double seconds = 0.0;
};

// Non-dominated methods under (higher accuracy, lower time); returned in input order.
inline std::vector<std::string> pareto_frontier(std::span<const FrontierPoint> points) {
    for (const auto& p : points) require(p.seconds > 0.0, ErrorCode::InvalidArgument, "frontier times must be positive");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < points.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
            if (i == j) continue;
            const auto& a = points[j];
            const auto& b = points[i];
            dominated = a.accuracy >= b.accuracy && a.seconds <= b.seconds &&
                        (a.accuracy > b.accuracy || a.seconds < b.seconds);
        }
        if (!dominated) out.push_back(points[i].method);
    }
    return out;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size(), ErrorCode::ShapeMismatch, "correlation needs paired samples");
    require(x.size() >= 3, ErrorCode::DegenerateInput, "correlation needs at least three pairs");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0.0 && syy > 0.0, ErrorCode::ZeroVariance, "correlation of a constant sequence");
    return sxy / std::sqrt(sxx * syy);
}

struct SpreadGain {
    double spread = 0.0;  // max - min base accuracy
    double gain = 0.0;    // ensemble accuracy - best base accuracy
};

inline SpreadGain spread_gain(std::span<const double> base_accuracies, double ensemble_accuracy) {
    require(!base_accuracies.empty(), ErrorCode::InvalidArgument, "no base accuracies");
    const auto [lo, hi] = std::minmax_element(base_accuracies.begin(), base_accuracies.end());
    return {*hi - *lo, ensemble_accuracy - *hi};
}

inline double spread_gain_correlation(std::span<const SpreadGain> per_dataset) {
    std::vector<double> s, g;
    for (const auto& p : per_dataset) {
        s.push_back(p.spread);
        g.push_back(p.gain);
    }
    return pearson(s, g);
}

struct OracleComparison {
    std::size_t wins = 0, ties = 0, losses = 0;
    double mean_delta = 0.0;
};

// Ensemble vs the per-dataset best base.
inline OracleComparison oracle_comparison(const Matrix& base_acc, std::span<const double> ensemble_acc) {
    require(base_acc.rows() == ensemble_acc.size(), ErrorCode::ShapeMismatch, "one ensemble value per dataset");
    require(base_acc.cols() >= 1 && base_acc.rows() >= 1, ErrorCode::DegenerateInput, "empty accuracy table");
    OracleComparison o;
    for (std::size_t d = 0; d < base_acc.rows(); ++d) {
        auto r = base_acc.row(d);
        const double oracle = *std::max_element(r.begin(), r.end());
        const double e = ensemble_acc[d];
        if (e > oracle) ++o.wins;
        else if (e == oracle) ++o.ties;
        else ++o.losses;
        o.mean_delta += e - oracle;
    }
    o.mean_delta /= static_cast<double>(base_acc.rows());
    return o;
}

}  // namespace tabens::stats
