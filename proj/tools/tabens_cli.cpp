#include <iostream>

#include "CLI11.hpp"

#include "tabens/harness.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"tabens: benchmark lab for ensembles of tabular classifiers"};
    app.require_subcommand(1);

    std::string config_path;
    int workers = 1;
    auto* run = app.add_subcommand("run", "run the protocol on every dataset, write records.jsonl and artifacts");
    run->add_option("--config", config_path, "run configuration JSON")->required()->check(CLI::ExistingFile);
    run->add_option("--workers", workers, "datasets processed in parallel")->check(CLI::PositiveNumber);

    std::string records_path, out_dir;
    auto* report = app.add_subcommand("report", "aggregate records into the full report set");
    report->add_option("--records", records_path, "records.jsonl")->required()->check(CLI::ExistingFile);
    report->add_option("--out", out_dir, "output directory")->required();

    auto* div = app.add_subcommand("diversity", "write diversity.json next to the records");
    div->add_option("--records", records_path, "records.jsonl")->required()->check(CLI::ExistingFile);

    std::string lint_path;
    auto* lint = app.add_subcommand("validate", "lint a run configuration");
    lint->add_option("--config", lint_path, "run configuration JSON")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto cfg = tabens::load_run_config(config_path);
            const auto s = tabens::run(cfg, workers);
            std::cout << "wrote " << s.records << " records (" << s.errors << " errors) to " << s.records_path.string()
                      << '\n';
        } else if (*report) {
            tabens::write_report(records_path, out_dir);
            std::cout << "report written to " << out_dir << '\n';
        } else if (*div) {
            const auto records = tabens::read_records(records_path);
            const fs::path dir = fs::path(records_path).parent_path();
            const auto d = tabens::diversity_from_records(records, dir);
            std::ofstream(dir / "diversity.json") << tabens::to_json(d).dump(1) << '\n';
            std::cout << "mean Q " << d.pool.mean_q << " over " << d.pool.model_names.size() << " bases\n";
        } else if (*lint) {
            const auto cfg = tabens::load_run_config(lint_path);
            const auto problems = tabens::config_problems(cfg);
            for (const auto& p : problems) std::cerr << "error: " << p << '\n';
            if (!problems.empty()) return 1;
            std::cout << "ok: " << cfg.datasets.size() << " datasets, " << cfg.pool.size() << " bases, "
                      << cfg.strategy_names().size() << " strategies\n";
        }
    } catch (const tabens::Error& e) {
        std::cerr << "error [" << tabens::to_string(e.code()) << "]: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
