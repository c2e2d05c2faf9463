#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "core.hpp"

namespace tabens::metrics {

// Fraction of rows whose argmax (lowest index on ties) equals the label.
inline double accuracy(const ProbabilityMatrix& p, std::span<const int> labels) {
    require_labels(p, labels);
    require(p.rows() > 0, ErrorCode::DegenerateInput, "accuracy of zero rows");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) hit += p.predicted(i) == labels[i];
    return static_cast<double>(hit) / static_cast<double>(p.rows());
}

inline double accuracy(std::span<const int> predicted, std::span<const int> labels) {
    require(predicted.size() == labels.size(), ErrorCode::ShapeMismatch, "length mismatch");
    require(!labels.empty(), ErrorCode::DegenerateInput, "accuracy of zero rows");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// Per-class F1 averaged with support weights.
inline double weighted_f1(const ProbabilityMatrix& p, std::span<const int> labels) {
    require_labels(p, labels);
    require(p.rows() > 0, ErrorCode::DegenerateInput, "f1 of zero rows");
    const std::size_t C = p.classes();
    std::vector<std::size_t> tp(C, 0), fp(C, 0), fn(C, 0), support(C, 0);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const auto pred = static_cast<std::size_t>(p.predicted(i));
        const auto y = static_cast<std::size_t>(labels[i]);
        ++support[y];
        if (pred == y) {
            ++tp[y];
        } else {
            ++fp[pred];
            ++fn[y];
        }
    }
    double out = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
        const double f1 = denom ? 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom) : 0.0;
        out += f1 * static_cast<double>(support[c]) / static_cast<double>(p.rows());
    }
    return out;
}

// Average (mid) ranks, 1-based; equal values share the mean of their positions.
inline std::vector<double> midranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
        i = j + 1;
    }
    return rank;
}

// One-vs-rest ROC-AUC from the Mann-Whitney rank statistic (ties count 1/2),
// support-weighted over the classes present in `labels`.
inline double roc_auc_ovr(const ProbabilityMatrix& p, std::span<const int> labels) {
    require_labels(p, labels);
    const std::size_t n = p.rows();
    const std::size_t C = p.classes();
    std::vector<std::size_t> support(C, 0);
    for (int y : labels) ++support[static_cast<std::size_t>(y)];
    const auto present = std::count_if(support.begin(), support.end(), [](std::size_t s) { return s > 0; });
    require(present >= 2, ErrorCode::SingleClass, "roc-auc needs at least two classes in labels");

    double total = 0.0, weight = 0.0;
    std::vector<double> scores(n);
    for (std::size_t c = 0; c < C; ++c) {
        if (support[c] == 0) continue;
        for (std::size_t i = 0; i < n; ++i) scores[i] = p(i, c);
        const auto ranks = midranks(scores);
        double pos_rank_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (static_cast<std::size_t>(labels[i]) == c) pos_rank_sum += ranks[i];
        const double np = static_cast<double>(support[c]);
        const double nn = static_cast<double>(n - support[c]);
        const double auc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
        total += np * auc;
        weight += np;
    }
    return total / weight;
}

// Mean negative log-probability of the true class after clipping to [1e-15, 1].
inline double log_loss(const ProbabilityMatrix& p, std::span<const int> labels) {
    require_labels(p, labels);
    require(p.rows() > 0, ErrorCode::DegenerateInput, "log-loss of zero rows");
    const auto q = p.clipped();
    double s = 0.0;
    for (std::size_t i = 0; i < q.rows(); ++i) s -= std::log(q(i, static_cast<std::size_t>(labels[i])));
    return s / static_cast<double>(q.rows());
}

// Equal-width bins on (0, 1], right-closed: bin b holds (b/B, (b+1)/B], bin 0
// also holds 0. A confidence sitting on an interior edge falls to the lower bin.
inline std::size_t confidence_bin(double conf, std::size_t bins) {
    const auto B = static_cast<double>(bins);
    auto edge = [&](std::size_t b) { return static_cast<double>(b) / B; };
    long idx = static_cast<long>(std::ceil(conf * B)) - 1;
    idx = std::clamp<long>(idx, 0, static_cast<long>(bins) - 1);
    auto b = static_cast<std::size_t>(idx);
    while (b > 0 && conf <= edge(b)) --b;
    while (b + 1 < bins && conf > edge(b + 1)) ++b;
    return b;
}

struct ReliabilityBin {
    std::size_t count = 0;
    double confidence_sum = 0.0;
    double correct = 0.0;
};

inline std::vector<ReliabilityBin> reliability_bins(const ProbabilityMatrix& p,
                                                    std::span<const int> labels, std::size_t bins) {
    require_labels(p, labels);
    require(bins >= 1, ErrorCode::InvalidArgument, "need at least one bin");
    std::vector<ReliabilityBin> out(bins);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const double conf = p.confidence(i);
        auto& b = out[confidence_bin(conf, bins)];
        ++b.count;
        b.confidence_sum += conf;
        b.correct += p.predicted(i) == labels[i] ? 1.0 : 0.0;
    }
    return out;
}

// Expected calibration error over top-class confidence.
inline double ece(const ProbabilityMatrix& p, std::span<const int> labels, std::size_t bins = 15) {
    const auto table = reliability_bins(p, labels, bins);
    const double n = static_cast<double>(p.rows());
    double s = 0.0;
    for (const auto& b : table) {
        if (!b.count) continue;
        const double cnt = static_cast<double>(b.count);
        s += cnt / n * std::abs(b.correct / cnt - b.confidence_sum / cnt);
    }
    return s;
}

// Reliability term of the Brier decomposition for the correct/incorrect
// problem scored by top-class confidence; binned exactly as ece().
inline double brier_reliability(const ProbabilityMatrix& p, std::span<const int> labels,
                                std::size_t bins = 15) {
    const auto table = reliability_bins(p, labels, bins);
    const double n = static_cast<double>(p.rows());
    double s = 0.0;
    for (const auto& b : table) {
        if (!b.count) continue;
        const double cnt = static_cast<double>(b.count);
        const double gap = b.confidence_sum / cnt - b.correct / cnt;
        s += cnt / n * gap * gap;
    }
    return s;
}

namespace detail {

// Rows by descending confidence, ties by ascending row index.
inline std::vector<std::size_t> confidence_order(const ProbabilityMatrix& p) {
    std::vector<std::size_t> order(p.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> conf(p.rows());
    for (std::size_t i = 0; i < p.rows(); ++i) conf[i] = p.confidence(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
    return order;
}

}  // namespace detail

// Mean selective risk over coverages 1/n, 2/n, ..., 1.
inline double aurc(const ProbabilityMatrix& p, std::span<const int> labels) {
    require_labels(p, labels);
    require(p.rows() > 0, ErrorCode::DegenerateInput, "aurc of zero rows");
    const auto order = detail::confidence_order(p);
    double errors = 0.0, area = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        errors += p.predicted(order[i]) != labels[order[i]] ? 1.0 : 0.0;
        area += errors / static_cast<double>(i + 1);
    }
    return area / static_cast<double>(order.size());
}

// Largest coverage i/n whose confidence-ordered prefix has accuracy >= target.
inline double coverage_at_accuracy(const ProbabilityMatrix& p, std::span<const int> labels,
                                   double target = 0.95) {
    require_labels(p, labels);
    require(p.rows() > 0, ErrorCode::DegenerateInput, "coverage of zero rows");
    const auto order = detail::confidence_order(p);
    double correct = 0.0;
    std::size_t best = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        correct += p.predicted(order[i]) == labels[order[i]] ? 1.0 : 0.0;
        if (correct / static_cast<double>(i + 1) >= target) best = i + 1;
    }
    return static_cast<double>(best) / static_cast<double>(order.size());
}

inline constexpr std::size_t kMinGroupSize = 5;

// Minimum per-group accuracy. Groups smaller than five rows are pooled into a
// single remainder group before the minimum is taken.
inline double worst_group_accuracy(const ProbabilityMatrix& p, std::span<const int> labels,
                                   std::span<const int> groups) {
    require_labels(p, labels);
    require(groups.size() == labels.size(), ErrorCode::ShapeMismatch, "group vector length mismatch");
    require(!groups.empty(), ErrorCode::NoGroups, "no rows carry a group");
    std::map<int, std::size_t> size;
    for (int g : groups) ++size[g];
    struct Tally {
        std::size_t n = 0, hit = 0;
    };
    std::map<int, Tally> big;
    Tally rest;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        Tally& t = size[groups[i]] >= kMinGroupSize ? big[groups[i]] : rest;
        ++t.n;
        t.hit += p.predicted(i) == labels[i];
    }
    double worst = 1.0;
    for (const auto& [g, t] : big)
        worst = std::min(worst, static_cast<double>(t.hit) / static_cast<double>(t.n));
    if (rest.n) worst = std::min(worst, static_cast<double>(rest.hit) / static_cast<double>(rest.n));
    return worst;
}

// ============================================================================
// MetricBundle
// ============================================================================
struct MetricBundle {
    double accuracy = 0.0;
    double weighted_f1 = 0.0;
    std::optional<double> roc_auc_ovr;  // null when the evaluated labels hold one class
    double log_loss = 0.0;
    double ece = 0.0;
    double brier_rel = 0.0;
    double aurc = 0.0;
    double cov_at_95 = 0.0;
    std::optional<double> wga;  // null without a group column
    double fit_seconds = 0.0;
    double predict_seconds = 0.0;
};

inline MetricBundle evaluate(const ProbabilityMatrix& p, std::span<const int> labels,
                             std::optional<std::span<const int>> groups = std::nullopt) {
    MetricBundle m;
    m.accuracy = accuracy(p, labels);
    m.weighted_f1 = weighted_f1(p, labels);
    try {
        m.roc_auc_ovr = roc_auc_ovr(p, labels);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::SingleClass) throw;
    }
    m.log_loss = log_loss(p, labels);
    m.ece = ece(p, labels);
    m.brier_rel = brier_reliability(p, labels);
    m.aurc = aurc(p, labels);
    m.cov_at_95 = coverage_at_accuracy(p, labels, 0.95);
    if (groups) m.wga = worst_group_accuracy(p, labels, *groups);
    return m;
}

}  // namespace tabens::metrics
