#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "core.hpp"

namespace tabens::diversity {

using json = nlohmann::json;

// Joint correctness counts of a model pair (k, l) on one task.
struct ContingencyTable {
    std::uint64_t a = 0;  // both correct
    std::uint64_t b = 0;  // k correct, l wrong
    std::uint64_t c = 0;  // k wrong, l correct
    std::uint64_t d = 0;  // both wrong

    std::uint64_t n() const noexcept { return a + b + c + d; }
    friend bool operator==(const ContingencyTable&, const ContingencyTable&) = default;
};

inline ContingencyTable contingency(std::span<const int> preds_k, std::span<const int> preds_l,
                                    std::span<const int> labels) {
    require(preds_k.size() == labels.size() && preds_l.size() == labels.size(), ErrorCode::ShapeMismatch,
            "prediction vectors differ in length from labels");
    ContingencyTable t;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool ok_k = preds_k[i] == labels[i];
        const bool ok_l = preds_l[i] == labels[i];
        if (ok_k && ok_l) ++t.a;
        else if (ok_k) ++t.b;
        else if (ok_l) ++t.c;
        else ++t.d;
    }
    return t;
}

// Yule's Q = (ad - bc) / (ad + bc); undefined when ad + bc = 0.
inline std::optional<double> q_statistic(const ContingencyTable& t) {
    const double ad = static_cast<double>(t.a) * static_cast<double>(t.d);
    const double bc = static_cast<double>(t.b) * static_cast<double>(t.c);
    if (ad + bc == 0.0) return std::nullopt;
    return (ad - bc) / (ad + bc);
}

// Cohen's kappa on the correctness table; undefined when chance agreement is 1.
inline std::optional<double> cohen_kappa(const ContingencyTable& t) {
    require(t.n() > 0, ErrorCode::DegenerateInput, "kappa of an empty table");
    const double n = static_cast<double>(t.n());
    const double a = static_cast<double>(t.a), b = static_cast<double>(t.b);
    const double c = static_cast<double>(t.c), d = static_cast<double>(t.d);
    const double po = (a + d) / n;
    const double pe = ((a + b) * (a + c) + (c + d) * (b + d)) / (n * n);
    if (pe == 1.0) return std::nullopt;
    return (po - pe) / (1.0 - pe);
}

inline double disagreement(const ContingencyTable& t) {
    require(t.n() > 0, ErrorCode::DegenerateInput, "disagreement of an empty table");
    return static_cast<double>(t.b + t.c) / static_cast<double>(t.n());
}

// ============================================================================
// Pool-level report
// ============================================================================
struct UndefinedEntry {
    std::size_t k = 0, l = 0;
    std::size_t task = 0;
    std::string measure;  // "q" or "kappa"
};

struct DiversityReport {
    std::vector<std::string> model_names;
    // K x K, symmetric; diagonal and pairs without any defined task are null.
    std::vector<std::vector<std::optional<double>>> per_pair_q;
    std::vector<std::vector<std::optional<double>>> per_pair_kappa;
    std::vector<std::vector<double>> per_pair_disagreement;
    double mean_q = std::nan("");
    double std_q = std::nan("");
    double mean_kappa = std::nan("");
    double mean_disagreement = std::nan("");
    std::vector<std::pair<std::size_t, std::size_t>> undefined_pairs;  // Q undefined on every task
    std::vector<UndefinedEntry> undefined_entries;
};

// per_task_preds[k][t] is model k's hard predictions on task t; labels[t] the truth.
// Per pair: unweighted mean over tasks where the measure is defined. Pool: mean
// and population standard deviation over unordered pairs with a defined mean.
inline DiversityReport pool_diversity(const std::vector<std::vector<std::vector<int>>>& per_task_preds,
                                      const std::vector<std::vector<int>>& labels,
                                      std::vector<std::string> names = {}) {
    const std::size_t K = per_task_preds.size();
    require(K >= 2, ErrorCode::InvalidArgument, "diversity needs at least two models");
    const std::size_t T = labels.size();
    require(T >= 1, ErrorCode::InvalidArgument, "diversity needs at least one task");
    for (const auto& m : per_task_preds)
        require(m.size() == T, ErrorCode::ShapeMismatch, "every model needs predictions for every task");
    if (names.empty())
        for (std::size_t k = 0; k < K; ++k) names.push_back("model" + std::to_string(k));
    require(names.size() == K, ErrorCode::ShapeMismatch, "one name per model");

    DiversityReport r;
    r.model_names = std::move(names);
    r.per_pair_q.assign(K, std::vector<std::optional<double>>(K));
    r.per_pair_kappa.assign(K, std::vector<std::optional<double>>(K));
    r.per_pair_disagreement.assign(K, std::vector<double>(K, 0.0));

    std::vector<double> pair_q, pair_kappa, pair_dis;
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t l = k + 1; l < K; ++l) {
            double q_sum = 0.0, kappa_sum = 0.0, dis_sum = 0.0;
            std::size_t q_n = 0, kappa_n = 0, dis_n = 0;
            for (std::size_t t = 0; t < T; ++t) {
                const auto tab = contingency(per_task_preds[k][t], per_task_preds[l][t], labels[t]);
                if (tab.n() == 0) continue;
                if (auto q = q_statistic(tab)) {
                    q_sum += *q;
                    ++q_n;
                } else {
                    r.undefined_entries.push_back({k, l, t, "q"});
                }
                if (auto kap = cohen_kappa(tab)) {
                    kappa_sum += *kap;
                    ++kappa_n;
                } else {
                    r.undefined_entries.push_back({k, l, t, "kappa"});
                }
                dis_sum += disagreement(tab);
                ++dis_n;
            }
            if (q_n) {
                const double q = q_sum / static_cast<double>(q_n);
                r.per_pair_q[k][l] = r.per_pair_q[l][k] = q;
                pair_q.push_back(q);
            } else {
                r.undefined_pairs.emplace_back(k, l);
            }
            if (kappa_n) {
                const double kap = kappa_sum / static_cast<double>(kappa_n);
                r.per_pair_kappa[k][l] = r.per_pair_kappa[l][k] = kap;
                pair_kappa.push_back(kap);
            }
            if (dis_n) {
                const double dis = dis_sum / static_cast<double>(dis_n);
                r.per_pair_disagreement[k][l] = r.per_pair_disagreement[l][k] = dis;
                pair_dis.push_back(dis);
            }
        }
    }
    auto mean = [](const std::vector<double>& v) {
        if (v.empty()) return std::nan("");
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    r.mean_q = mean(pair_q);
    if (!pair_q.empty()) {
        double ss = 0.0;
        for (double x : pair_q) ss += (x - r.mean_q) * (x - r.mean_q);
        r.std_q = std::sqrt(ss / static_cast<double>(pair_q.size()));
    }
    r.mean_kappa = mean(pair_kappa);
    r.mean_disagreement = mean(pair_dis);
    return r;
}

// ============================================================================
// Consensus ceiling
// ============================================================================
struct ConsensusReport {
    double consensus_fraction = 1.0;
    double ceiling_bound = 0.0;  // 1 - consensus_fraction
    std::vector<bool> consensus_mask;
};

// A row is in the consensus set iff every model predicts the same label there.
inline ConsensusReport consensus_report(const std::vector<std::vector<int>>& hard_preds,
                                        std::span<const int> labels) {
    require(!hard_preds.empty(), ErrorCode::InvalidArgument, "consensus needs at least one model");
    const std::size_t n = labels.size();
    for (const auto& p : hard_preds)
        require(p.size() == n, ErrorCode::ShapeMismatch, "prediction vectors differ in length from labels");
    ConsensusReport r;
    r.consensus_mask.assign(n, true);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 1; k < hard_preds.size(); ++k)
            if (hard_preds[k][i] != hard_preds[0][i]) {
                r.consensus_mask[i] = false;
                break;
            }
        agree += r.consensus_mask[i];
    }
    r.consensus_fraction = n ? static_cast<double>(agree) / static_cast<double>(n) : 1.0;
    r.ceiling_bound = 1.0 - r.consensus_fraction;
    return r;
}

// ============================================================================
// Serialization
// ============================================================================
inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json nan_json(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

inline json to_json(const DiversityReport& r) {
    auto matrix = [](const std::vector<std::vector<std::optional<double>>>& m) {
        json rows = json::array();
        for (const auto& row : m) {
            json jr = json::array();
            for (const auto& v : row) jr.push_back(optional_json(v));
            rows.push_back(jr);
        }
        return rows;
    };
    json undef = json::array();
    for (auto [k, l] : r.undefined_pairs) undef.push_back({r.model_names[k], r.model_names[l]});
    json entries = json::array();
    for (const auto& e : r.undefined_entries)
        entries.push_back({{"pair", {r.model_names[e.k], r.model_names[e.l]}}, {"task", e.task}, {"measure", e.measure}});
    return {{"schema", 1},
            {"models", r.model_names},
            {"per_pair_q", matrix(r.per_pair_q)},
            {"per_pair_kappa", matrix(r.per_pair_kappa)},
            {"per_pair_disagreement", r.per_pair_disagreement},
            {"mean_q", nan_json(r.mean_q)},
            {"std_q", nan_json(r.std_q)},
            {"mean_kappa", nan_json(r.mean_kappa)},
            {"mean_disagreement", nan_json(r.mean_disagreement)},
            {"undefined_pairs", undef},
            {"undefined_entries", entries}};
}

}  // namespace tabens::diversity
