#include <gtest/gtest.h>

#include <boost/math/special_functions/gamma.hpp>
#include <random>

#include "tabens/stats.hpp"

using namespace tabens;
using namespace tabens::stats;

namespace {

// Rank by counting: 1 + strictly better + half of the other ties.
std::vector<double> count_ranks(const std::vector<double>& row, bool higher) {
    std::vector<double> r(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        double better = 0, tied = 0;
        for (std::size_t l = 0; l < row.size(); ++l) {
            if (l == j) continue;
            if (higher ? row[l] > row[j] : row[l] < row[j]) better += 1;
            else if (row[l] == row[j]) tied += 1;
        }
        r[j] = 1 + better + tied / 2;
    }
    return r;
}

double brute_friedman(const Matrix& v) {
    const double N = static_cast<double>(v.rows()), K = static_cast<double>(v.cols());
    std::vector<double> sums(v.cols(), 0.0);
    for (std::size_t i = 0; i < v.rows(); ++i) {
        std::vector<double> row(v.row(i).begin(), v.row(i).end());
        const auto r = count_ranks(row, true);
        for (std::size_t j = 0; j < r.size(); ++j) sums[j] += r[j];
    }
    double s = 0;
    for (double x : sums) s += x * x;
    return 12.0 / (N * K * (K + 1)) * s - 3 * N * (K + 1);
}

// Two-sided p from every sign pattern over count-based midranks of |d|.
double brute_wilcoxon(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] != y[i]) d.push_back(x[i] - y[i]);
    std::vector<double> mag;
    for (double v : d) mag.push_back(std::abs(v));
    const auto r = count_ranks(mag, false);
    double w = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0) w += r[i];
    const std::size_t n = d.size();
    double le = 0, ge = 0;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1) s += r[i];
        if (s <= w + 1e-9) le += 1;
        if (s >= w - 1e-9) ge += 1;
    }
    return std::min(1.0, 2 * std::min(le, ge) / std::ldexp(1.0, static_cast<int>(n)));
}

Matrix random_table(std::mt19937_64& g, std::size_t n, std::size_t k, int levels) {
    Matrix m(n, k);
    for (auto& v : m.data()) v = static_cast<double>(g() % static_cast<std::uint64_t>(levels)) / levels;
    return m;
}

}  // namespace

TEST(Ranks, HandExamples) {
    const auto r = rank_table(Matrix::from_rows({{0.9, 0.8, 0.7}, {0.5, 0.5, 0.4}}), true, {"a", "b", "c"});
    EXPECT_EQ(r.ranks(0, 0), 1.0);
    EXPECT_EQ(r.ranks(0, 2), 3.0);
    EXPECT_EQ(r.ranks(1, 0), 1.5);
    EXPECT_EQ(r.ranks(1, 1), 1.5);
    EXPECT_EQ(r.ranks(1, 2), 3.0);
    const auto low = rank_table(Matrix::from_rows({{0.1, 0.3, 0.2}}), false);
    EXPECT_EQ(low.ranks(0, 0), 1.0);
    EXPECT_EQ(low.ranks(0, 1), 3.0);
    EXPECT_EQ(r.mean_ranks(), (std::vector<double>{1.25, 1.75, 3.0}));
    EXPECT_THROW(rank_table(Matrix::from_rows({{0.1, std::nan("")}}), true), Error);
}

TEST(Ranks, RowsSumToTriangular) {
    std::mt19937_64 g(1);
    for (int t = 0; t < 100; ++t) {
        const std::size_t K = 2 + g() % 8;
        const auto v = random_table(g, 5, K, 4);
        const auto r = rank_table(v, t % 2 == 0);
        for (std::size_t i = 0; i < 5; ++i) {
            double s = 0;
            for (double x : r.ranks.row(i)) s += x;
            EXPECT_EQ(s, static_cast<double>(K * (K + 1)) / 2);
            std::vector<double> row(v.row(i).begin(), v.row(i).end());
            const auto want = count_ranks(row, t % 2 == 0);
            for (std::size_t j = 0; j < K; ++j) EXPECT_EQ(r.ranks(i, j), want[j]);
        }
    }
}

TEST(Friedman, IdenticalRankingsGiveTwenty) {
    Matrix v(10, 3);
    for (std::size_t i = 0; i < 10; ++i) {
        v(i, 0) = 0.9;
        v(i, 1) = 0.8;
        v(i, 2) = 0.7;
    }
    const auto f = friedman(rank_table(v, true));
    EXPECT_NEAR(f.chi2, 20.0, 1e-12);
    EXPECT_NEAR(f.p, std::exp(-10.0), 1e-15);
    EXPECT_EQ(f.k, 3u);
    EXPECT_EQ(f.n, 10u);
}

TEST(Friedman, AllTiedGivesZero) {
    Matrix v(6, 4);
    for (auto& x : v.data()) x = 0.5;
    const auto f = friedman(rank_table(v, true));
    EXPECT_NEAR(f.chi2, 0.0, 1e-12);
    EXPECT_NEAR(f.p, 1.0, 1e-12);
}

TEST(Friedman, TwoMethodsMatchSignCount) {
    std::mt19937_64 g(2);
    for (int t = 0; t < 50; ++t) {
        const std::size_t N = 3 + g() % 20;
        Matrix v(N, 2);
        std::size_t w = 0;
        for (std::size_t i = 0; i < N; ++i) {
            const bool a_wins = g() % 2;
            v(i, 0) = a_wins ? 0.9 : 0.1;
            v(i, 1) = 0.5;
            w += a_wins;
        }
        const auto f = friedman(rank_table(v, true));
        const double d = 2.0 * static_cast<double>(w) - static_cast<double>(N);
        EXPECT_NEAR(f.chi2, d * d / static_cast<double>(N), 1e-12);
        EXPECT_NEAR(f.p, std::erfc(std::sqrt(f.chi2 / 2)), 1e-12);
    }
}

TEST(Friedman, RandomTablesMatchBruteForce) {
    std::mt19937_64 g(3);
    for (int t = 0; t < 200; ++t) {
        const auto v = random_table(g, 2 + g() % 30, 2 + g() % 10, 5);
        EXPECT_NEAR(friedman(rank_table(v, true)).chi2, brute_friedman(v), 1e-9);
    }
    EXPECT_THROW(friedman(rank_table(Matrix(1, 3), true)), Error);
}

TEST(Nemenyi, CriticalDifferences) {
    EXPECT_NEAR(nemenyi_cd(12, 153), 1.34717, 1e-3);
    EXPECT_NEAR(nemenyi_cd(2, 1), 1.960, 1e-3);
    EXPECT_NEAR(nemenyi_cd(5, 20), 2.728 * std::sqrt(30.0 / 120.0), 1e-12);
    for (std::size_t k = 2; k <= 20; ++k) {
        EXPECT_NEAR(nemenyi_cd(k, 40) * 2, nemenyi_cd(k, 10), 1e-12);
        EXPECT_LT(nemenyi_q(k, 0.10), nemenyi_q(k, 0.05));
        if (k > 2) EXPECT_GT(nemenyi_q(k, 0.05), nemenyi_q(k - 1, 0.05));
    }
    for (std::size_t k : {1u, 21u}) {
        try {
            nemenyi_cd(k, 10);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::UnsupportedK);
        }
    }
    EXPECT_THROW(nemenyi_q(5, 0.01), Error);
}

TEST(Nemenyi, Groups) {
    const std::vector<double> a{1.0, 1.5, 3.0, 3.2};
    EXPECT_EQ(cd_groups(a, 1.0), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {2, 3}}));
    const std::vector<double> b{1.0, 1.8, 2.5};
    EXPECT_EQ(cd_groups(b, 1.0), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 2}}));
    EXPECT_EQ(cd_groups(b, 2.0), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}}));
    EXPECT_TRUE(cd_groups(a, 0.1).empty());
}

TEST(Wilcoxon, HandExamples) {
    const std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    try {
        wilcoxon_signed_rank(x, x);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TooFewPairs);
    }
    std::vector<double> y(x);
    for (std::size_t i = 0; i < 10; ++i) y[i] -= 0.01 * static_cast<double>(i + 1);
    const auto r = wilcoxon_signed_rank(x, y);
    EXPECT_TRUE(r.exact);
    EXPECT_EQ(r.w_plus, 55.0);
    EXPECT_EQ(r.n_used, 10u);
    EXPECT_NEAR(r.p, 2.0 / 1024.0, 1e-15);
    const auto swapped = wilcoxon_signed_rank(y, x);
    EXPECT_EQ(swapped.w_plus, 0.0);
    EXPECT_EQ(swapped.p, r.p);
}

TEST(Wilcoxon, ZeroDifferencesDropped) {
    const std::vector<double> x{1, 2, 3, 4, 5, 6, 7};
    const std::vector<double> y{1, 2, 3, 3, 4, 5, 6};
    try {
        wilcoxon_signed_rank(x, y);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TooFewPairs);
    }
    const std::vector<double> y2{1, 2, 2, 3, 4, 5, 6};
    EXPECT_EQ(wilcoxon_signed_rank(x, y2).n_used, 5u);
}

TEST(Wilcoxon, ExactMatchesSignEnumeration) {
    std::mt19937_64 g(4);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 5 + g() % 10;
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<double>(g() % 7);
            y[i] = static_cast<double>(g() % 7);
        }
        std::size_t nz = 0;
        for (std::size_t i = 0; i < n; ++i) nz += x[i] != y[i];
        if (nz < 5) continue;
        const auto r = wilcoxon_signed_rank(x, y, WilcoxonMethod::Exact);
        EXPECT_NEAR(r.p, brute_wilcoxon(x, y), 1e-12);
    }
}

TEST(Wilcoxon, NormalBranchFormula) {
    std::mt19937_64 g(5);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 13 + g() % 30;
        std::vector<double> x(n), y(n, 0.0);
        for (auto& v : x) v = static_cast<double>(static_cast<int>(g() % 21) - 10) + 0.5;
        const auto r = wilcoxon_signed_rank(x, y);
        EXPECT_FALSE(r.exact);
        std::vector<double> mag;
        for (double v : x) mag.push_back(std::abs(v));
        const auto rk = count_ranks(mag, false);
        double w = 0, tie = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (x[i] > 0) w += rk[i];
        std::map<double, double> groups;
        for (double v : mag) groups[v] += 1;
        for (auto [v, c] : groups) tie += c * c * c - c;
        const double nn = static_cast<double>(n);
        const double var = nn * (nn + 1) * (2 * nn + 1) / 24 - tie / 48;
        const double z = std::max(std::abs(w - nn * (nn + 1) / 4) - 0.5, 0.0) / std::sqrt(var);
        EXPECT_EQ(r.w_plus, w);
        EXPECT_NEAR(r.p, std::min(1.0, std::erfc(z / std::sqrt(2.0))), 1e-12);
    }
}

TEST(WinMatrix, CountsAndPercentages) {
    std::mt19937_64 g(6);
    for (int t = 0; t < 50; ++t) {
        const std::size_t N = 1 + g() % 20, K = 2 + g() % 5;
        const auto v = random_table(g, N, K, 3);
        const auto w = win_matrix(v);
        EXPECT_EQ(w.datasets, N);
        for (std::size_t i = 0; i < K; ++i) {
            EXPECT_EQ(w.wins[i][i], 0u);
            for (std::size_t j = 0; j < K; ++j) {
                if (i == j) continue;
                std::size_t ties = 0, wins = 0;
                for (std::size_t d = 0; d < N; ++d) {
                    ties += v(d, i) == v(d, j);
                    wins += v(d, i) > v(d, j);
                }
                EXPECT_EQ(w.wins[i][j], wins);
                EXPECT_EQ(w.wins[i][j] + w.wins[j][i] + ties, N);
                EXPECT_NEAR(w.percent[i][j] + w.percent[j][i] + 100.0 * static_cast<double>(ties) / static_cast<double>(N),
                            100.0, 1e-9);
            }
        }
    }
}

TEST(Pareto, HandAndDominanceLoop) {
    const std::vector<FrontierPoint> pts{{"a", 0.9, 10}, {"b", 0.8, 1}, {"c", 0.85, 20}, {"d", 0.9, 10}, {"e", 0.7, 1}};
    EXPECT_EQ(pareto_frontier(pts), (std::vector<std::string>{"a", "b", "d"}));
    std::mt19937_64 g(7);
    for (int t = 0; t < 100; ++t) {
        std::vector<FrontierPoint> p;
        for (int i = 0; i < 8; ++i)
            p.push_back({std::to_string(i), static_cast<double>(g() % 5) / 5, 1.0 + static_cast<double>(g() % 5)});
        std::vector<std::string> want;
        for (std::size_t i = 0; i < p.size(); ++i) {
            bool dom = false;
            for (std::size_t j = 0; j < p.size(); ++j) {
                const bool ge = p[j].accuracy >= p[i].accuracy && p[j].seconds <= p[i].seconds;
                const bool strict = p[j].accuracy > p[i].accuracy || p[j].seconds < p[i].seconds;
                dom = dom || (ge && strict);
            }
            if (!dom) want.push_back(p[i].method);
        }
        EXPECT_EQ(pareto_frontier(p), want);
        EXPECT_FALSE(want.empty());
    }
    const std::vector<FrontierPoint> bad{{"z", 0.5, 0.0}};
    EXPECT_THROW(pareto_frontier(bad), Error);
}

TEST(SpreadGain, ValuesAndCorrelation) {
    const std::vector<double> base{0.7, 0.9, 0.8};
    const auto sg = spread_gain(base, 0.92);
    EXPECT_NEAR(sg.spread, 0.2, 1e-15);
    EXPECT_NEAR(sg.gain, 0.02, 1e-15);
    const std::vector<SpreadGain> line{{0.1, 0.01}, {0.2, 0.02}, {0.3, 0.03}, {0.4, 0.04}};
    EXPECT_NEAR(spread_gain_correlation(line), 1.0, 1e-12);
    const std::vector<SpreadGain> flat{{0.1, 0.0}, {0.2, 0.0}, {0.3, 0.0}};
    try {
        spread_gain_correlation(flat);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ZeroVariance);
    }
    const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 1, 4, 3, 5};
    EXPECT_NEAR(pearson(x, y), 0.8, 1e-12);
}

TEST(OracleComparison, Counts) {
    const auto base = Matrix::from_rows({{0.8, 0.7}, {0.6, 0.9}, {0.5, 0.5}});
    const std::vector<double> ens{0.85, 0.9, 0.4};
    const auto o = oracle_comparison(base, ens);
    EXPECT_EQ(o.wins, 1u);
    EXPECT_EQ(o.ties, 1u);
    EXPECT_EQ(o.losses, 1u);
    EXPECT_NEAR(o.mean_delta, (0.05 + 0.0 - 0.1) / 3, 1e-15);
}

TEST(GammaQ, MatchesReference) {
    std::mt19937_64 g(8);
    std::uniform_real_distribution<double> ua(0.5, 30.0), ux(0.01, 80.0);
    for (int t = 0; t < 500; ++t) {
        const double a = ua(g), x = ux(g);
        const double want = boost::math::gamma_q(a, x);
        EXPECT_NEAR(gamma_q(a, x), want, 1e-12 + 1e-10 * want) << a << " " << x;
    }
    EXPECT_EQ(gamma_q(2.0, 0.0), 1.0);
    EXPECT_NEAR(chi_square_sf(3.841458820694124, 1), 0.05, 1e-12);
    EXPECT_NEAR(chi_square_sf(5.991464547107979, 2), 0.05, 1e-12);
}
