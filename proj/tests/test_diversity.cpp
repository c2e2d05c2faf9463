#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tabens/diversity.hpp"

using namespace tabens;
using namespace tabens::diversity;

TEST(Contingency, IdenticalAndComplementary) {
    const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
    const std::vector<int> p{0, 1, 2, 0, 1, 2, 1, 2, 0, 1};  // 6 correct
    EXPECT_EQ(contingency(p, p, y), (ContingencyTable{6, 0, 0, 4}));
    std::vector<int> q(10);
    for (std::size_t i = 0; i < 10; ++i) q[i] = p[i] == y[i] ? (y[i] + 1) % 3 : y[i];
    const auto t = contingency(p, q, y);
    EXPECT_EQ(t.a, 0u);
    EXPECT_EQ(t.d, 0u);
    EXPECT_THROW(contingency(p, std::vector<int>{0}, y), Error);
}

TEST(Contingency, RandomRecount) {
    std::mt19937_64 g(1);
    for (int trial = 0; trial < 100; ++trial) {
        const auto y = oracle::random_labels(g, 40, 3);
        const auto a = oracle::random_labels(g, 40, 3), b = oracle::random_labels(g, 40, 3);
        const auto t = contingency(a, b, y);
        const auto o = oracle::recount(a, b, y);
        EXPECT_EQ(static_cast<double>(t.a), o.a);
        EXPECT_EQ(static_cast<double>(t.b), o.b);
        EXPECT_EQ(static_cast<double>(t.c), o.c);
        EXPECT_EQ(static_cast<double>(t.d), o.d);
        EXPECT_EQ(t.n(), 40u);
    }
}

TEST(QStatistic, Values) {
    EXPECT_EQ(*q_statistic({6, 0, 0, 4}), 1.0);
    EXPECT_EQ(*q_statistic({0, 5, 5, 0}), -1.0);
    EXPECT_NEAR(*q_statistic({4, 1, 1, 4}), 15.0 / 17.0, 1e-15);
    EXPECT_FALSE(q_statistic({0, 3, 0, 0}).has_value());
}

TEST(QStatistic, Symmetries) {
    std::mt19937_64 g(2);
    for (int i = 0; i < 200; ++i) {
        const ContingencyTable t{g() % 20, g() % 20, g() % 20, g() % 20};
        const auto q = q_statistic(t);
        const auto swapped = q_statistic({t.a, t.c, t.b, t.d});
        ASSERT_EQ(q.has_value(), swapped.has_value());
        if (q) {
            EXPECT_EQ(*q, *swapped);
            EXPECT_EQ(*q, -*q_statistic({t.b, t.a, t.d, t.c}));
            EXPECT_GE(*q, -1.0);
            EXPECT_LE(*q, 1.0);
        }
        if (t.n()) EXPECT_EQ(disagreement(t), disagreement({t.a, t.c, t.b, t.d}));
    }
}

TEST(Kappa, Values) {
    EXPECT_EQ(*cohen_kappa({4, 0, 0, 4}), 1.0);
    EXPECT_EQ(*cohen_kappa({4, 4, 4, 4}), 0.0);
    EXPECT_FALSE(cohen_kappa({5, 0, 0, 0}).has_value());
    EXPECT_FALSE(cohen_kappa({0, 0, 0, 5}).has_value());
}

TEST(Disagreement, Values) {
    EXPECT_EQ(disagreement({6, 0, 0, 4}), 0.0);
    EXPECT_EQ(disagreement({0, 5, 5, 0}), 1.0);
    EXPECT_NEAR(disagreement({4, 1, 1, 4}), 0.2, 1e-15);
}

TEST(Pool, IdenticalModelsHaveQOne) {
    std::mt19937_64 g(3);
    std::vector<std::vector<int>> labels;
    std::vector<std::vector<std::vector<int>>> preds(2);
    for (int t = 0; t < 3; ++t) {
        labels.push_back(oracle::random_labels(g, 30, 3));
        const auto p = oracle::random_labels(g, 30, 3);
        preds[0].push_back(p);
        preds[1].push_back(p);
    }
    const auto r = pool_diversity(preds, labels, {"a", "b"});
    EXPECT_EQ(r.mean_q, 1.0);
    EXPECT_EQ(r.std_q, 0.0);
    EXPECT_EQ(*r.per_pair_q[0][1], 1.0);
    EXPECT_FALSE(r.per_pair_q[0][0].has_value());
    EXPECT_EQ(r.mean_disagreement, 0.0);
}

TEST(Pool, ComplementaryPairHandAggregation) {
    // One task, 4 rows, labels all 0.
    const std::vector<std::vector<int>> labels{{0, 0, 0, 0}};
    const std::vector<int> m0{0, 0, 1, 1}, m1{1, 1, 0, 0}, m2{0, 1, 0, 1};
    const std::vector<std::vector<std::vector<int>>> preds{{m0}, {m1}, {m2}};
    const auto r = pool_diversity(preds, labels);
    // (0,1): a=0,b=2,c=2,d=0 -> Q=-1. (0,2): a=1,b=1,c=1,d=1 -> Q=0. (1,2): a=1,b=1,c=1,d=1 -> Q=0.
    EXPECT_EQ(*r.per_pair_q[0][1], -1.0);
    EXPECT_EQ(*r.per_pair_q[0][2], 0.0);
    EXPECT_EQ(*r.per_pair_q[1][2], 0.0);
    EXPECT_NEAR(r.mean_q, -1.0 / 3.0, 1e-15);
    EXPECT_NEAR(r.std_q, std::sqrt(((2.0 / 3) * (2.0 / 3) + 2 * (1.0 / 9)) / 3.0), 1e-15);
    EXPECT_NEAR(r.mean_disagreement, (1.0 + 0.5 + 0.5) / 3.0, 1e-15);
}

TEST(Pool, UndefinedPairListedAndExcluded) {
    // Model 0 is always right, so every pair with it has c = d = 0 on every task.
    const std::vector<std::vector<int>> labels{{0, 0, 0}, {1, 1}};
    const std::vector<std::vector<std::vector<int>>> preds{
        {{0, 0, 0}, {1, 1}},
        {{0, 0, 1}, {1, 0}},
        {{1, 1, 0}, {0, 1}}};
    const auto r = pool_diversity(preds, labels, {"x", "y", "z"});
    ASSERT_EQ(r.undefined_pairs.size(), 2u);
    EXPECT_EQ(r.undefined_pairs[0], (std::pair<std::size_t, std::size_t>{0, 1}));
    EXPECT_EQ(r.undefined_pairs[1], (std::pair<std::size_t, std::size_t>{0, 2}));
    EXPECT_FALSE(r.per_pair_q[0][1].has_value());
    EXPECT_FALSE(r.per_pair_q[0][2].has_value());
    // (1,2): task 1 a=0,b=2,c=1,d=0 and task 2 a=0,b=1,c=1,d=0, both Q=-1.
    EXPECT_EQ(*r.per_pair_q[1][2], -1.0);
    EXPECT_EQ(r.mean_q, -1.0);
    const auto j = to_json(r);
    EXPECT_TRUE(j["per_pair_q"][0][1].is_null());
    EXPECT_EQ(j["undefined_pairs"][0][0], "x");
}

TEST(Pool, OracleEquivalenceOnRandomSets) {
    std::mt19937_64 g(4);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t K = 2 + g() % 5, T = 1 + g() % 4;
        std::vector<std::vector<int>> labels;
        std::vector<std::vector<std::vector<int>>> preds(K);
        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t n = 5 + g() % 40;
            labels.push_back(oracle::random_labels(g, n, 3));
            for (std::size_t k = 0; k < K; ++k) preds[k].push_back(oracle::random_labels(g, n, 3));
        }
        const auto r = pool_diversity(preds, labels);
        std::vector<double> pair_means;
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t l = k + 1; l < K; ++l) {
                double s = 0;
                int cnt = 0;
                for (std::size_t t = 0; t < T; ++t) {
                    const auto o = oracle::recount(preds[k][t], preds[l][t], labels[t]);
                    const double den = o.a * o.d + o.b * o.c;
                    if (den == 0) continue;
                    s += (o.a * o.d - o.b * o.c) / den;
                    ++cnt;
                }
                if (!cnt) {
                    EXPECT_FALSE(r.per_pair_q[k][l].has_value());
                    continue;
                }
                ASSERT_TRUE(r.per_pair_q[k][l].has_value());
                EXPECT_NEAR(*r.per_pair_q[k][l], s / cnt, 1e-12);
                EXPECT_EQ(r.per_pair_q[k][l], r.per_pair_q[l][k]);
                pair_means.push_back(s / cnt);
            }
        double m = 0;
        for (double v : pair_means) m += v;
        m /= static_cast<double>(pair_means.size());
        EXPECT_NEAR(r.mean_q, m, 1e-12);
    }
}

TEST(Consensus, Reports) {
    const std::vector<int> y(10, 0);
    const std::vector<int> a{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
    auto r = consensus_report({a, a}, y);
    EXPECT_EQ(r.consensus_fraction, 1.0);
    EXPECT_EQ(r.ceiling_bound, 0.0);
    auto b = a;
    b[1] = 0;
    b[4] = 0;
    b[7] = 2;
    r = consensus_report({a, b}, y);
    EXPECT_EQ(r.consensus_fraction, 0.7);
    EXPECT_EQ(r.ceiling_bound, 1.0 - r.consensus_fraction);
    EXPECT_FALSE(r.consensus_mask[1]);
    EXPECT_TRUE(r.consensus_mask[0]);
    EXPECT_EQ(consensus_report({a}, y).consensus_fraction, 1.0);
    EXPECT_THROW(consensus_report({a, std::vector<int>{0}}, y), Error);
}
