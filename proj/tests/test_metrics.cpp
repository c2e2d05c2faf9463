#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tabens/combiners.hpp"
#include "tabens/metrics.hpp"

using namespace tabens;
using namespace tabens::metrics;

namespace {

ProbabilityMatrix pm(const std::vector<std::vector<double>>& rows) {
    return ProbabilityMatrix(Matrix::from_rows(rows));
}

ProbabilityMatrix constant_rows(std::size_t n, std::vector<double> row) {
    Matrix m(n, row.size());
    for (std::size_t i = 0; i < n; ++i) std::copy(row.begin(), row.end(), m.row(i).begin());
    return ProbabilityMatrix(std::move(m));
}

}  // namespace

TEST(Accuracy, Basics) {
    const std::vector<int> y{0, 2, 1};
    EXPECT_EQ(accuracy(oracle::one_hot(y, 3), y), 1.0);
    EXPECT_EQ(accuracy(ProbabilityMatrix::uniform(4, 3), std::vector<int>{0, 0, 0, 0}), 1.0);
    EXPECT_THROW(accuracy(ProbabilityMatrix::uniform(4, 3), std::vector<int>{0, 0}), Error);
    EXPECT_EQ(accuracy(std::vector<int>{1, 2, 3}, std::vector<int>{1, 0, 3}), 2.0 / 3.0);
}

TEST(Accuracy, RandomRecount) {
    std::mt19937_64 g(1);
    const auto p = oracle::random_coarse_probs(g, 20, 3);
    const auto y = oracle::random_labels(g, 20, 3);
    EXPECT_EQ(accuracy(p, y), oracle::accuracy(p, y));
}

TEST(WeightedF1, HandContingencies) {
    EXPECT_EQ(weighted_f1(oracle::one_hot({0, 1, 1, 0}, 2), std::vector<int>{0, 1, 1, 0}), 1.0);
    // TP=2, FP=1, FN=1, TN=2 for class 1.
    const std::vector<int> y{1, 1, 1, 0, 0, 0};
    const auto p = oracle::one_hot({1, 1, 0, 1, 0, 0}, 2);
    EXPECT_NEAR(weighted_f1(p, y), 2.0 / 3.0, 1e-15);
    // Everything predicted class 0 on balanced binary: F1_0 = 2/3, F1_1 = 0.
    EXPECT_NEAR(weighted_f1(oracle::one_hot({0, 0, 0, 0}, 2), std::vector<int>{0, 0, 1, 1}), 1.0 / 3.0, 1e-15);
}

TEST(RocAuc, Basics) {
    const auto p = pm({{0.9, 0.1}, {0.8, 0.2}, {0.3, 0.7}, {0.1, 0.9}});
    EXPECT_EQ(roc_auc_ovr(p, std::vector<int>{0, 0, 1, 1}), 1.0);
    EXPECT_EQ(roc_auc_ovr(ProbabilityMatrix::uniform(4, 2), std::vector<int>{0, 1, 0, 1}), 0.5);
    try {
        roc_auc_ovr(p, std::vector<int>{1, 1, 1, 1});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SingleClass);
    }
}

TEST(RocAuc, SixRowsThreeClassesAllPairs) {
    const auto p = pm({{0.5, 0.3, 0.2}, {0.2, 0.5, 0.3}, {0.3, 0.3, 0.4}, {0.5, 0.25, 0.25}, {0.1, 0.1, 0.8}, {0.3, 0.4, 0.3}});
    const std::vector<int> y{0, 1, 2, 1, 2, 0};
    EXPECT_NEAR(roc_auc_ovr(p, y), oracle::roc_auc_ovr(p, y), 1e-12);
}

TEST(RocAuc, MonotoneTransformInvariance) {
    std::mt19937_64 g(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 30;
        auto y = oracle::random_labels(g, n, 2);
        y[0] = 0;
        y[1] = 1;
        Matrix a(n, 2), b(n, 2);
        for (std::size_t i = 0; i < n; ++i) {
            const double s = std::round(u(g) * 8) / 8;  // coarse scores keep ties in play
            a(i, 1) = s;
            a(i, 0) = 1 - s;
            b(i, 1) = s * s * s;
            b(i, 0) = 1 - b(i, 1);
        }
        const ProbabilityMatrix pa(a), pb(b);
        EXPECT_NEAR(roc_auc_ovr(pa, y), roc_auc_ovr(pb, y), 1e-12);
        EXPECT_NEAR(roc_auc_ovr(pa, y), oracle::roc_auc_ovr(pa, y), 1e-12);
    }
}

TEST(LogLoss, Basics) {
    const std::vector<int> y{0, 1, 2};
    EXPECT_LT(log_loss(oracle::one_hot(y, 3), y), 1e-13);
    EXPECT_NEAR(log_loss(ProbabilityMatrix::uniform(5, 2), std::vector<int>{0, 1, 1, 0, 1}), std::log(2.0), 1e-15);
    const auto wrong = oracle::one_hot({1, 2, 0}, 3);
    EXPECT_TRUE(std::isfinite(log_loss(wrong, y)));
    EXPECT_NEAR(log_loss(wrong, y), -std::log(1e-15 / (1.0 + 2e-15)), 1e-6);
}

TEST(LogLoss, FlatteningWrongConfidentNeverHurts) {
    const auto p = constant_rows(8, {0.95, 0.05});
    const std::vector<int> y(8, 1);
    double prev = log_loss(p, y);
    for (double t : {1.5, 2.0, 4.0, 8.0, 20.0}) {
        const double now = log_loss(temperature_scale(p, t), y);
        EXPECT_LE(now, prev);
        prev = now;
    }
}

TEST(Ece, Basics) {
    const std::vector<int> y{0, 1, 0, 1};
    EXPECT_EQ(ece(oracle::one_hot(y, 2), y), 0.0);
    const auto p = constant_rows(4, {0.9, 0.1});
    EXPECT_NEAR(ece(p, y), 0.4, 1e-15);
    EXPECT_NEAR(brier_reliability(p, y), 0.16, 1e-15);
    EXPECT_EQ(brier_reliability(oracle::one_hot(y, 2), y), 0.0);
}

TEST(Ece, SingleBinIsMeanConfidenceGap) {
    std::mt19937_64 g(3);
    for (int t = 0; t < 50; ++t) {
        const auto p = oracle::random_probs(g, 25, 3);
        const auto y = oracle::random_labels(g, 25, 3);
        double conf = 0;
        for (std::size_t i = 0; i < 25; ++i) conf += p.confidence(i);
        EXPECT_NEAR(ece(p, y, 1), std::abs(conf / 25.0 - accuracy(p, y)), 1e-15);
    }
}

TEST(Ece, EdgePolicy) {
    EXPECT_EQ(confidence_bin(1.0, 15), 14u);
    EXPECT_EQ(confidence_bin(0.0, 15), 0u);
    EXPECT_EQ(confidence_bin(0.5, 2), 0u);
    EXPECT_EQ(confidence_bin(0.5000001, 2), 1u);
    for (int b = 1; b < 15; ++b) EXPECT_EQ(confidence_bin(b / 15.0, 15), static_cast<std::size_t>(b - 1)) << b;
    EXPECT_EQ(confidence_bin(0.6, 5), 2u);
}

TEST(Aurc, Basics) {
    const std::vector<int> y{0, 1, 0};
    EXPECT_EQ(aurc(oracle::one_hot(y, 2), y), 0.0);
    EXPECT_EQ(aurc(oracle::one_hot({1, 0, 1}, 2), y), 1.0);
    // Ordering by confidence: rows 2 (0.9, wrong), 0 (0.8, right), 3 (0.7, right), 1 (0.6, wrong).
    const auto p = pm({{0.8, 0.2}, {0.4, 0.6}, {0.1, 0.9}, {0.7, 0.3}});
    const std::vector<int> y4{0, 0, 0, 0};
    EXPECT_NEAR(aurc(p, y4), (1.0 + 0.5 + 1.0 / 3.0 + 0.5) / 4.0, 1e-15);
    EXPECT_NEAR(1.0 - accuracy(p, y4), 0.5, 1e-15);
}

TEST(Coverage, Basics) {
    const std::vector<int> y{0, 1, 0};
    EXPECT_EQ(coverage_at_accuracy(oracle::one_hot(y, 2), y), 1.0);
    EXPECT_EQ(coverage_at_accuracy(oracle::one_hot({1, 0, 1}, 2), y, 0.0), 1.0);
    // Top row wrong, nineteen correct below it.
    Matrix m(20, 2);
    std::vector<int> y20(20, 0);
    for (std::size_t i = 0; i < 20; ++i) {
        m(i, 0) = 0.9 - 0.01 * static_cast<double>(i);
        m(i, 1) = 1.0 - m(i, 0);
    }
    y20[0] = 1;
    const ProbabilityMatrix p(m);
    const double want = oracle::coverage(p, y20, 0.95);
    EXPECT_EQ(coverage_at_accuracy(p, y20), want);
    EXPECT_EQ(want, 1.0);  // 19/20 = 0.95 qualifies at full coverage
    y20[1] = 1;
    EXPECT_EQ(coverage_at_accuracy(p, y20), oracle::coverage(p, y20, 0.95));
    EXPECT_EQ(coverage_at_accuracy(p, y20), 0.0);
}

TEST(Wga, Basics) {
    const std::vector<int> y{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    const auto p = oracle::one_hot({0, 1, 0, 1, 0, 0, 1, 1, 0, 0}, 2);
    const std::vector<int> one(10, 4);
    EXPECT_EQ(worst_group_accuracy(p, y, one), accuracy(p, y));
    const std::vector<int> two{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    EXPECT_EQ(worst_group_accuracy(p, y, two), 0.4);
    try {
        worst_group_accuracy(ProbabilityMatrix(), {}, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoGroups);
    }
}

TEST(Wga, SmallGroupsPooled) {
    // Group 7 has 2 rows (both wrong), group 8 has 2 rows (both right): pooled rest = 0.5.
    const std::vector<int> y{0, 0, 0, 0, 0, 0, 0, 0, 0};
    const auto p = oracle::one_hot({0, 0, 0, 0, 0, 1, 1, 0, 0}, 2);
    const std::vector<int> g{1, 1, 1, 1, 1, 7, 7, 8, 8};
    EXPECT_EQ(worst_group_accuracy(p, y, g), 0.5);
    EXPECT_EQ(oracle::worst_group(p, y, g), 0.5);
}

TEST(MetricSuite, RandomInstancesMatchOracles) {
    std::mt19937_64 g(7);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + g() % 49, C = 2 + g() % 3;
        const auto p = trial % 2 ? oracle::random_probs(g, n, C) : oracle::random_coarse_probs(g, n, C, 10);
        auto y = oracle::random_labels(g, n, static_cast<int>(C));
        y[0] = 0;
        y[1] = 1;
        std::vector<int> groups(n);
        for (auto& v : groups) v = static_cast<int>(g() % 4);
        EXPECT_NEAR(accuracy(p, y), oracle::accuracy(p, y), 1e-9);
        EXPECT_NEAR(weighted_f1(p, y), oracle::weighted_f1(p, y), 1e-9);
        EXPECT_NEAR(roc_auc_ovr(p, y), oracle::roc_auc_ovr(p, y), 1e-12);
        EXPECT_NEAR(log_loss(p, y), oracle::log_loss(p, y), 1e-9);
        EXPECT_NEAR(ece(p, y), oracle::ece(p, y), 1e-9);
        EXPECT_NEAR(brier_reliability(p, y), oracle::brier_rel(p, y), 1e-9);
        EXPECT_NEAR(aurc(p, y), oracle::aurc(p, y), 1e-9);
        EXPECT_NEAR(coverage_at_accuracy(p, y), oracle::coverage(p, y, 0.95), 1e-9);
        EXPECT_NEAR(worst_group_accuracy(p, y, groups), oracle::worst_group(p, y, groups), 1e-9);
    }
}

TEST(MetricSuite, RowPermutationInvariance) {
    std::mt19937_64 g(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 30;
        // Distinct confidences keep the aurc/coverage order free of index ties.
        const auto p = oracle::random_probs(g, n, 3);
        const auto y = oracle::random_labels(g, n, 3);
        std::vector<int> groups(n);
        for (auto& v : groups) v = static_cast<int>(g() % 3);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), g);
        const auto pp = p.select_rows(perm);
        const auto yp = select(y, perm);
        const auto gp = select(groups, perm);
        const auto a = evaluate(p, y, std::span<const int>(groups));
        const auto b = evaluate(pp, yp, std::span<const int>(gp));
        EXPECT_EQ(a.accuracy, b.accuracy);
        EXPECT_NEAR(a.weighted_f1, b.weighted_f1, 1e-12);
        EXPECT_NEAR(*a.roc_auc_ovr, *b.roc_auc_ovr, 1e-12);
        EXPECT_NEAR(a.log_loss, b.log_loss, 1e-12);
        EXPECT_NEAR(a.ece, b.ece, 1e-12);
        EXPECT_NEAR(a.brier_rel, b.brier_rel, 1e-12);
        EXPECT_NEAR(a.aurc, b.aurc, 1e-12);
        EXPECT_EQ(a.cov_at_95, b.cov_at_95);
        EXPECT_EQ(*a.wga, *b.wga);
    }
}

TEST(MetricSuite, BundleRangesAndNulls) {
    std::mt19937_64 g(9);
    const auto p = oracle::random_probs(g, 40, 3);
    const auto y = oracle::random_labels(g, 40, 3);
    const auto m = evaluate(p, y);
    EXPECT_FALSE(m.wga.has_value());
    for (double v : {m.accuracy, m.weighted_f1, m.cov_at_95, m.ece, m.aurc, *m.roc_auc_ovr}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_GE(m.log_loss, 0.0);
    const auto single = evaluate(p, std::vector<int>(40, 2));
    EXPECT_FALSE(single.roc_auc_ovr.has_value());
}
