// Desk-scale benchmark: ten Gaussian-mixture datasets, three builtin learners,
// all six strategies, then the full report set and a printed leaderboard.
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "tabens/harness.hpp"
#include "tabens/synthetic.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"desk benchmark"};
    std::string out = "desk_out";
    int workers = 2;
    std::size_t datasets = 10;
    bool redundant = false;
    app.add_option("--out", out, "output directory");
    app.add_option("--workers", workers, "datasets processed in parallel")->check(CLI::PositiveNumber);
    app.add_option("--datasets", datasets, "number of synthetic datasets")->check(CLI::Range(2, 100));
    app.add_flag("--redundant", redundant, "pool of three seeds of the linear learner instead of three learners");
    CLI11_PARSE(app, argc, argv);

    const fs::path root(out);
    fs::create_directories(root / "data");
    tabens::RunConfig cfg;
    cfg.master_seed = 2024;
    cfg.output_dir = root / "run";
    for (const auto& ds : tabens::desk_suite(datasets)) {
        const auto path = root / "data" / (ds.id + ".csv");
        tabens::write_dataset_csv(path, ds);
        cfg.datasets.push_back({path, "target", std::nullopt, ds.id, false});
    }
    const auto add = [&](const std::string& name, const std::string& learner, std::uint64_t seed) {
        tabens::BaseSpec b;
        b.name = name;
        b.learner = learner;
        b.seed = seed;
        cfg.pool.push_back(b);
    };
    if (redundant) {
        for (std::uint64_t s = 1; s <= 3; ++s) add("linear_s" + std::to_string(s), "linear", s);
    } else {
        for (const auto& n : tabens::builtin_pool_names()) add(n, n, 0);
    }

    try {
        const auto summary = tabens::run(cfg, workers);
        std::printf("%zu records, %zu errors -> %s\n", summary.records, summary.errors,
                    summary.records_path.string().c_str());
        tabens::write_report(summary.records_path, root / "report");
        const auto rep = tabens::aggregate(tabens::read_records(summary.records_path));
        std::printf("\n%-20s %9s %9s %9s %9s %10s\n", "method", "rank", "acc", "ece", "logloss", "seconds");
        for (const auto& e : rep.leaderboard)
            std::printf("%-20s %9.3f %9.4f %9.4f %9.4f %10.4f\n", e.method.c_str(), e.mean_rank.value_or(NAN),
                        e.means.at("accuracy"), e.means.at("ece"), e.means.at("log_loss"), e.mean_total_seconds);
        std::printf("\nFriedman chi2 = %.3f (p = %.3g), Nemenyi CD = %.3f over N = %zu\n", rep.friedman.chi2,
                    rep.friedman.p, rep.cd.value_or(NAN), rep.datasets.size());
        std::printf("report written to %s\n", (root / "report").string().c_str());
    } catch (const tabens::Error& e) {
        std::cerr << "error [" << tabens::to_string(e.code()) << "]: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
