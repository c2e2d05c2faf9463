#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "combiners.hpp"
#include "core.hpp"
#include "diversity.hpp"
#include "external.hpp"
#include "io.hpp"
#include "learners.hpp"
#include "metrics.hpp"
#include "stats.hpp"

namespace tabens {

// ============================================================================
// Run configuration
// ============================================================================
inline constexpr int kRecordSchema = 1;

inline const std::string kMethodWA = "WA_performance";
inline const std::string kMethodGreedy = "Greedy_Selection";
inline const std::string kMethodStacking = "Stacking_LR";
inline const std::string kMethodTemperature = "Temp_Scaled";
inline const std::string kMethodCascade = "Cascade_2level";

inline std::string deep_ensemble_method_name(int seeds) { return "DeepEnsemble_" + std::to_string(seeds) + "seed"; }

struct DatasetSpec {
    std::filesystem::path path;
    std::string target;
    std::optional<std::string> group;
    std::string id;  // defaults to the file stem
    bool impute = false;
};

struct SplitFiles {
    std::filesystem::path val;
    std::filesystem::path test;
};

struct BaseSpec {
    std::string name;
    ModelKind kind = ModelKind::Builtin;
    std::string learner;                       // builtin
    std::uint64_t seed = 0;                    // builtin and external
    std::map<std::string, SplitFiles> files;   // file-backed, keyed by dataset id
    std::vector<std::string> command;          // external
    double timeout_seconds = 300.0;            // external
};

struct StrategyToggles {
    bool weighted_average = true;
    bool greedy = true;
    bool stacking = true;
    bool temperature = true;
    bool cascade = true;
    bool deep_ensemble = true;
};

struct RunConfig {
    std::uint64_t master_seed = 0;
    std::vector<DatasetSpec> datasets;
    std::vector<BaseSpec> pool;
    StrategyToggles strategies;
    int stacking_folds = 5;
    int cascade_folds = 3;
    int greedy_iterations = 50;
    int seeds_per_base = 3;
    std::filesystem::path output_dir = "results";

    std::vector<std::string> strategy_names() const {
        std::vector<std::string> out;
        if (strategies.weighted_average) out.push_back(kMethodWA);
        if (strategies.greedy) out.push_back(kMethodGreedy);
        if (strategies.stacking) out.push_back(kMethodStacking);
        if (strategies.temperature) out.push_back(kMethodTemperature);
        if (strategies.cascade) out.push_back(kMethodCascade);
        if (strategies.deep_ensemble) out.push_back(deep_ensemble_method_name(seeds_per_base));
        return out;
    }

    std::vector<std::string> method_names() const {
        std::vector<std::string> out;
        for (const auto& b : pool) out.push_back(b.name);
        for (auto& s : strategy_names()) out.push_back(std::move(s));
        return out;
    }

    std::string dataset_id(const DatasetSpec& d) const {
        return d.id.empty() ? d.path.stem().string() : d.id;
    }
};

namespace detail {

inline void config_error(bool cond, const std::string& msg) { require(cond, ErrorCode::InvalidConfig, msg); }

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path q(p);
    return q.is_absolute() || base.empty() ? q : base / q;
}

}  // namespace detail

// Relative paths inside the JSON resolve against `base_dir`.
inline RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
    using detail::config_error;
    config_error(j.is_object(), "config must be a JSON object");
    RunConfig c;
    try {
        c.master_seed = j.value("master_seed", std::uint64_t{0});
        config_error(j.contains("datasets") && j["datasets"].is_array(), "config needs a 'datasets' array");
        for (const auto& d : j["datasets"]) {
            DatasetSpec s;
            config_error(d.contains("path") && d.contains("target"), "each dataset needs 'path' and 'target'");
            s.path = detail::resolve(base_dir, d["path"].get<std::string>());
            s.target = d["target"].get<std::string>();
            if (d.contains("group") && !d["group"].is_null()) s.group = d["group"].get<std::string>();
            s.id = d.value("id", std::string{});
            s.impute = d.value("impute", false);
            c.datasets.push_back(std::move(s));
        }
        config_error(j.contains("pool") && j["pool"].is_array(), "config needs a 'pool' array");
        for (const auto& b : j["pool"]) {
            BaseSpec s;
            config_error(b.contains("name"), "each pool entry needs a 'name'");
            s.name = b["name"].get<std::string>();
            const std::string kind = b.value("kind", std::string{"builtin"});
            if (kind == "builtin") {
                s.kind = ModelKind::Builtin;
                s.learner = b.value("learner", s.name);
                s.seed = b.value("seed", std::uint64_t{0});
            } else if (kind == "file") {
                s.kind = ModelKind::FileBacked;
                config_error(b.contains("files") && b["files"].is_object(),
                             "file-backed entry '" + s.name + "' needs a 'files' object keyed by dataset id");
                for (const auto& [ds, f] : b["files"].items())
                    s.files[ds] = {detail::resolve(base_dir, f.at("val").get<std::string>()),
                                   detail::resolve(base_dir, f.at("test").get<std::string>())};
            } else if (kind == "external") {
                s.kind = ModelKind::External;
                config_error(b.contains("command") && b["command"].is_array() && !b["command"].empty(),
                             "external entry '" + s.name + "' needs a non-empty 'command' array");
                s.command = b["command"].get<std::vector<std::string>>();
                s.seed = b.value("seed", std::uint64_t{0});
                s.timeout_seconds = b.value("timeout_seconds", 300.0);
            } else {
                throw Error(ErrorCode::InvalidConfig, "unknown pool kind '" + kind + "'");
            }
            c.pool.push_back(std::move(s));
        }
        if (j.contains("strategies")) {
            const auto& t = j["strategies"];
            c.strategies.weighted_average = t.value("wa", true);
            c.strategies.greedy = t.value("greedy", true);
            c.strategies.stacking = t.value("stacking", true);
            c.strategies.temperature = t.value("temperature", true);
            c.strategies.cascade = t.value("cascade", true);
            c.strategies.deep_ensemble = t.value("deep_ensemble", true);
        }
        if (j.contains("folds")) {
            c.stacking_folds = j["folds"].value("stacking", 5);
            c.cascade_folds = j["folds"].value("cascade", 3);
        }
        c.greedy_iterations = j.value("greedy_iterations", 50);
        c.seeds_per_base = j.value("seeds_per_base", 3);
        c.output_dir = detail::resolve(base_dir, j.value("output_dir", std::string{"results"}));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("malformed config: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::Io, "cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

// Lint: returns every problem found rather than stopping at the first.
inline std::vector<std::string> config_problems(const RunConfig& c) {
    std::vector<std::string> p;
    if (c.datasets.empty()) p.push_back("no datasets");
    if (c.pool.size() < 2) p.push_back("pool needs at least two bases");
    std::set<std::string> ids;
    for (const auto& d : c.datasets) {
        if (!std::filesystem::exists(d.path)) p.push_back("dataset file missing: " + d.path.string());
        if (!ids.insert(c.dataset_id(d)).second) p.push_back("duplicate dataset id: " + c.dataset_id(d));
    }
    const auto strategies = c.strategy_names();
    std::set<std::string> names;
    const auto builtins = builtin_pool_names();
    for (const auto& b : c.pool) {
        if (b.name.empty()) p.push_back("pool entry with empty name");
        if (!names.insert(b.name).second) p.push_back("duplicate pool name: " + b.name);
        if (std::find(strategies.begin(), strategies.end(), b.name) != strategies.end())
            p.push_back("pool name clashes with a strategy: " + b.name);
        if (b.kind == ModelKind::Builtin && b.learner != "prior" &&
            std::find(builtins.begin(), builtins.end(), b.learner) == builtins.end())
            p.push_back("unknown builtin learner '" + b.learner + "' for " + b.name);
        if (b.kind == ModelKind::FileBacked) {
            for (const auto& d : c.datasets) {
                const auto it = b.files.find(c.dataset_id(d));
                if (it == b.files.end()) {
                    p.push_back("file-backed " + b.name + " has no files for dataset " + c.dataset_id(d));
                    continue;
                }
                for (const auto& f : {it->second.val, it->second.test})
                    if (!std::filesystem::exists(f)) p.push_back("prediction file missing: " + f.string());
            }
        }
    }
    if (c.stacking_folds < 2) p.push_back("stacking folds must be >= 2");
    if (c.cascade_folds < 2) p.push_back("cascade folds must be >= 2");
    if (c.greedy_iterations < 1) p.push_back("greedy iterations must be >= 1");
    if (c.seeds_per_base < 2) p.push_back("seeds_per_base must be >= 2");
    return p;
}

inline void validate(const RunConfig& c) {
    const auto p = config_problems(c);
    if (p.empty()) return;
    std::string msg = "invalid run config:";
    for (const auto& s : p) msg += "\n  " + s;
    throw Error(ErrorCode::InvalidConfig, msg);
}

// ============================================================================
// Run records
// ============================================================================
struct RunRecord {
    std::string dataset;
    std::string method;
    std::string kind;  // "base" or "strategy"
    bool ok = false;
    std::string error_code;
    std::string error;
    metrics::MetricBundle metrics;
    double pool_seconds = 0.0;
    double combiner_seconds = 0.0;
    double total_seconds = 0.0;
    std::size_t n_test = 0;
    std::string timestamp;
    std::string predictions;  // relative to the records file
    std::string labels;
    std::string model;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline const std::vector<std::string>& metric_keys() {
    static const std::vector<std::string> k{"accuracy", "weighted_f1", "roc_auc_ovr", "log_loss", "ece",
                                            "brier_rel", "aurc", "cov_at_95", "wga"};
    return k;
}

inline json to_json(const RunRecord& r) {
    json j;
    j["schema"] = kRecordSchema;
    j["dataset"] = r.dataset;
    j["method"] = r.method;
    j["kind"] = r.kind;
    j["status"] = r.ok ? "ok" : "error";
    j["error_code"] = r.ok ? json(nullptr) : json(r.error_code);
    j["error"] = r.ok ? json(nullptr) : json(r.error);
    const auto opt = [&](const std::optional<double>& v) { return r.ok && v ? json(*v) : json(nullptr); };
    const auto val = [&](double v) { return r.ok ? json(v) : json(nullptr); };
    const auto& m = r.metrics;
    j["accuracy"] = val(m.accuracy);
    j["weighted_f1"] = val(m.weighted_f1);
    j["roc_auc_ovr"] = opt(m.roc_auc_ovr);
    j["log_loss"] = val(m.log_loss);
    j["ece"] = val(m.ece);
    j["brier_rel"] = val(m.brier_rel);
    j["aurc"] = val(m.aurc);
    j["cov_at_95"] = val(m.cov_at_95);
    j["wga"] = opt(m.wga);
    j["fit_seconds"] = m.fit_seconds;
    j["predict_seconds"] = m.predict_seconds;
    j["pool_seconds"] = r.pool_seconds;
    j["combiner_seconds"] = r.combiner_seconds;
    j["total_seconds"] = r.total_seconds;
    j["n_test"] = r.n_test;
    j["timestamp"] = r.timestamp;
    j["predictions"] = r.predictions.empty() ? json(nullptr) : json(r.predictions);
    j["labels"] = r.labels.empty() ? json(nullptr) : json(r.labels);
    j["model"] = r.model.empty() ? json(nullptr) : json(r.model);
    return j;
}

inline RunRecord run_record_from_json(const json& j) {
    require(j.value("schema", 0) == kRecordSchema, ErrorCode::Protocol, "unsupported record schema");
    RunRecord r;
    try {
        r.dataset = j.at("dataset").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.kind = j.value("kind", std::string{"strategy"});
        r.ok = j.at("status").get<std::string>() == "ok";
        const auto str = [&](const char* k) { return j.contains(k) && j[k].is_string() ? j[k].get<std::string>() : std::string{}; };
        const auto num = [&](const char* k) { return j.contains(k) && j[k].is_number() ? j[k].get<double>() : 0.0; };
        const auto opt = [&](const char* k) -> std::optional<double> {
            if (j.contains(k) && j[k].is_number()) return j[k].get<double>();
            return std::nullopt;
        };
        r.error_code = str("error_code");
        r.error = str("error");
        auto& m = r.metrics;
        m.accuracy = num("accuracy");
        m.weighted_f1 = num("weighted_f1");
        m.roc_auc_ovr = opt("roc_auc_ovr");
        m.log_loss = num("log_loss");
        m.ece = num("ece");
        m.brier_rel = num("brier_rel");
        m.aurc = num("aurc");
        m.cov_at_95 = num("cov_at_95");
        m.wga = opt("wga");
        m.fit_seconds = num("fit_seconds");
        m.predict_seconds = num("predict_seconds");
        r.pool_seconds = num("pool_seconds");
        r.combiner_seconds = num("combiner_seconds");
        r.total_seconds = num("total_seconds");
        r.n_test = j.value("n_test", std::size_t{0});
        r.timestamp = str("timestamp");
        r.predictions = str("predictions");
        r.labels = str("labels");
        r.model = str("model");
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Protocol, std::string("malformed record: ") + e.what());
    }
    return r;
}

inline std::vector<RunRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::Io, "cannot open records " + path.string());
    std::vector<RunRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(run_record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::Protocol, "records line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// Appends one JSON line per record; safe to share between dataset workers.
class RecordWriter {
public:
    explicit RecordWriter(const std::filesystem::path& path, bool truncate = true)
        : out_(path, truncate ? std::ios::trunc : std::ios::app) {
        require(out_.good(), ErrorCode::Io, "cannot open " + path.string() + " for writing");
    }

    void write(const RunRecord& r) {
        const std::string line = to_json(r).dump();
        std::lock_guard lock(mu_);
        out_ << line << '\n';
        out_.flush();
    }

private:
    std::mutex mu_;
    std::ofstream out_;
};

// ============================================================================
// Per-dataset pipeline
// ============================================================================
struct CachedBase {
    std::string name;
    LearnerPtr learner;  // fitted on train; null for file-backed bases
    ProbabilityMatrix val;
    ProbabilityMatrix test;
    double seconds = 0.0;  // fit + inference on val and test
};

struct DatasetOutcome {
    std::string dataset;
    Split split;
    std::vector<int> y_val;
    std::vector<int> y_test;
    std::vector<CachedBase> bases;  // successful bases only, in pool order
    std::map<std::string, ProbabilityMatrix> test_predictions;  // every successful method
    std::map<std::string, json> models;                          // fitted strategy models
    std::optional<GreedySelection> greedy;
    std::optional<TemperatureVector> temperatures;
    std::vector<RunRecord> records;
};

namespace detail {

inline std::string safe_name(std::string s) {
    for (char& ch : s)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
    return s;
}

inline RunRecord error_record(const std::string& dataset, const std::string& method, const std::string& kind,
                              const std::exception& e) {
    RunRecord r;
    r.dataset = dataset;
    r.method = method;
    r.kind = kind;
    r.ok = false;
    if (const auto* te = dynamic_cast<const Error*>(&e)) r.error_code = to_string(te->code());
    else r.error_code = "Internal";
    r.error = e.what();
    r.timestamp = utc_timestamp();
    return r;
}

inline void write_labels_csv(const std::filesystem::path& path, std::span<const int> y) {
    Matrix m(y.size(), 1);
    for (std::size_t i = 0; i < y.size(); ++i) m(i, 0) = y[i];
    write_matrix_csv(path, m);
}

inline std::vector<int> read_labels_csv(const std::filesystem::path& path) {
    const Matrix m = read_matrix_csv(path);
    require(m.cols() == 1, ErrorCode::Io, "label file must have one column: " + path.string());
    std::vector<int> y(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) y[i] = static_cast<int>(m(i, 0));
    return y;
}

inline ProbabilityMatrix load_split_matrix(const std::filesystem::path& path, std::size_t rows, int classes) {
    ProbabilityMatrix p(read_matrix_csv(path));
    require(p.rows() == rows, ErrorCode::ShapeMismatch,
            path.string() + " has " + std::to_string(p.rows()) + " rows, split has " + std::to_string(rows));
    require(p.classes() == static_cast<std::size_t>(classes), ErrorCode::ShapeMismatch,
            path.string() + " has " + std::to_string(p.classes()) + " columns, dataset has " +
                std::to_string(classes) + " classes");
    return p;
}

}  // namespace detail

struct DatasetRunOptions {
    std::filesystem::path artifact_root;  // empty: keep everything in memory
    std::string artifact_prefix;          // path of the dataset dir relative to the records file
    RecordWriter* writer = nullptr;
};

// Runs the protocol on one ingested dataset: split, fit and cache every base
// once, then feed identical cached predictions to each enabled strategy.
inline DatasetOutcome run_dataset(const RunConfig& cfg, const Dataset& ds, const DatasetRunOptions& opt = {}) {
    ds.validate();
    DatasetOutcome out;
    out.dataset = ds.id;
    const std::uint64_t ds_seed = derive_seed(cfg.master_seed, ds.id);
    out.split = stratified_split(ds, {derive_seed(ds_seed, "split")});
    const auto& sp = out.split;
    const Matrix x_train = ds.features.select_rows(sp.train);
    const Matrix x_val = ds.features.select_rows(sp.val);
    const Matrix x_test = ds.features.select_rows(sp.test);
    const auto y_train = select(ds.labels, sp.train);
    out.y_val = select(ds.labels, sp.val);
    out.y_test = select(ds.labels, sp.test);
    std::optional<std::vector<int>> groups;
    if (ds.group_column) groups = select(ds.groups(), sp.test);
    const int C = ds.class_count;

    const bool persist = !opt.artifact_root.empty();
    const std::filesystem::path dir = opt.artifact_root;
    const auto rel = [&](const std::string& file) {
        return opt.artifact_prefix.empty() ? file : opt.artifact_prefix + "/" + file;
    };
    std::string labels_rel;
    if (persist) {
        std::filesystem::create_directories(dir);
        detail::write_labels_csv(dir / "labels_test.csv", out.y_test);
        labels_rel = rel("labels_test.csv");
        std::ofstream(dir / "split.json") << json{{"schema", kRecordSchema}, {"dataset", ds.id},
                                                  {"train", sp.train}, {"val", sp.val}, {"test", sp.test},
                                                  {"warnings", sp.warnings}}
                                                 .dump(1)
                                          << '\n';
    }

    const auto emit = [&](RunRecord r) {
        if (opt.writer) opt.writer->write(r);
        out.records.push_back(std::move(r));
    };
    const auto success = [&](const std::string& method, const std::string& kind, const ProbabilityMatrix& test,
                             double fit_s, double predict_s, double pool_s, const json* model) {
        RunRecord r;
        r.dataset = ds.id;
        r.method = method;
        r.kind = kind;
        r.ok = true;
        r.metrics = groups ? metrics::evaluate(test, out.y_test, std::span<const int>(*groups))
                           : metrics::evaluate(test, out.y_test);
        r.metrics.fit_seconds = fit_s;
        r.metrics.predict_seconds = predict_s;
        r.pool_seconds = pool_s;
        r.combiner_seconds = kind == "base" ? 0.0 : fit_s + predict_s;
        r.total_seconds = kind == "base" ? fit_s + predict_s : pool_s + r.combiner_seconds;
        r.n_test = test.rows();
        r.timestamp = utc_timestamp();
        if (persist) {
            const std::string stem = detail::safe_name(method);
            write_matrix_csv(dir / (stem + ".test.csv"), test.matrix());
            r.predictions = rel(stem + ".test.csv");
            r.labels = labels_rel;
            if (model) {
                std::ofstream(dir / (stem + ".model.json")) << model->dump(1) << '\n';
                r.model = rel(stem + ".model.json");
            }
        }
        out.test_predictions.emplace(method, test);
        if (model) out.models.emplace(method, *model);
        emit(std::move(r));
    };

    // Pool: every base is fitted and queried exactly once.
    double pool_seconds = 0.0;
    for (const auto& spec : cfg.pool) {
        try {
            CachedBase cb;
            cb.name = spec.name;
            if (spec.kind == ModelKind::FileBacked) {
                const auto it = spec.files.find(ds.id);
                require(it != spec.files.end(), ErrorCode::InvalidConfig,
                        "no prediction files for dataset " + ds.id);
                const Stopwatch sw;
                cb.val = detail::load_split_matrix(it->second.val, sp.val.size(), C);
                cb.test = detail::load_split_matrix(it->second.test, sp.test.size(), C);
                cb.seconds = sw.seconds();
                success(spec.name, "base", cb.test, 0.0, cb.seconds, 0.0, nullptr);
            } else {
                if (spec.kind == ModelKind::External)
                    cb.learner = std::make_unique<ExternalPredictor>(spec.name, spec.command, spec.seed,
                                                                     spec.timeout_seconds);
                else
                    cb.learner = make_builtin(spec.learner, spec.seed);
                const auto rep = cb.learner->fit(x_train, y_train, C);
                const Stopwatch sw;
                cb.val = cb.learner->predict_proba(x_val);
                cb.test = cb.learner->predict_proba(x_test);
                const double predict_s = sw.seconds();
                cb.seconds = rep.fit_seconds + predict_s;
                require(cb.val.classes() == static_cast<std::size_t>(C), ErrorCode::ShapeMismatch,
                        spec.name + " returned the wrong number of classes");
                success(spec.name, "base", cb.test, rep.fit_seconds, predict_s, 0.0, nullptr);
            }
            pool_seconds += cb.seconds;
            out.bases.push_back(std::move(cb));
        } catch (const std::exception& e) {
            emit(detail::error_record(ds.id, spec.name, "base", e));
        }
    }

    std::vector<ProbabilityMatrix> val, test;
    std::vector<const Learner*> learners;
    for (const auto& b : out.bases) {
        val.push_back(b.val);
        test.push_back(b.test);
        learners.push_back(b.learner.get());
    }
    const auto require_refit = [&](const std::string& strategy) {
        for (std::size_t k = 0; k < out.bases.size(); ++k)
            if (!learners[k] || !learners[k]->refittable())
                throw Error(ErrorCode::RefitUnsupported,
                            strategy + " needs to refit '" + out.bases[k].name + "', which is file-backed");
    };

    const auto run_strategy = [&](const std::string& method, const std::function<void()>& body) {
        try {
            require(!out.bases.empty(), ErrorCode::DegenerateInput, "no base model succeeded on " + ds.id);
            body();
        } catch (const std::exception& e) {
            emit(detail::error_record(ds.id, method, "strategy", e));
        }
    };

    if (cfg.strategies.weighted_average)
        run_strategy(kMethodWA, [&] {
            const Stopwatch fit;
            const auto scores = validation_accuracies(val, out.y_val);
            const auto w = weights_from_scores(scores);
            const double fit_s = fit.seconds();
            const Stopwatch pred;
            const auto p = combine_convex(test, w);
            const double pred_s = pred.seconds();
            const json model = weighted_average_json(w, scores);
            success(kMethodWA, "strategy", p, fit_s, pred_s, pool_seconds, &model);
        });

    if (cfg.strategies.greedy)
        run_strategy(kMethodGreedy, [&] {
            const Stopwatch fit;
            auto g = fit_greedy_selection(val, out.y_val, GreedyConfig{cfg.greedy_iterations});
            const double fit_s = fit.seconds();
            const Stopwatch pred;
            const auto p = combine_convex(test, g.weights);
            const double pred_s = pred.seconds();
            const json model = to_json(g);
            out.greedy = std::move(g);
            success(kMethodGreedy, "strategy", p, fit_s, pred_s, pool_seconds, &model);
        });

    if (cfg.strategies.stacking)
        run_strategy(kMethodStacking, [&] {
            require_refit(kMethodStacking);
            const Stopwatch fit;
            const auto folds = assign_folds(y_train, cfg.stacking_folds, derive_seed(ds_seed, "stacking"));
            std::vector<ProbabilityMatrix> oof;
            for (const Learner* l : learners) oof.push_back(oof_predict(*l, x_train, y_train, C, folds));
            const auto model = fit_stacking(oof, y_train);
            const double fit_s = fit.seconds();
            const Stopwatch pred;
            const auto p = predict_stacking(model, test);
            const double pred_s = pred.seconds();
            const json mj = to_json(model);
            success(kMethodStacking, "strategy", p, fit_s, pred_s, pool_seconds, &mj);
        });

    if (cfg.strategies.temperature)
        run_strategy(kMethodTemperature, [&] {
            const Stopwatch fit;
            auto t = fit_temperatures(val, out.y_val);
            const double fit_s = fit.seconds();
            const Stopwatch pred;
            const auto p = temp_scaled_blend(test, t);
            const double pred_s = pred.seconds();
            const json model = to_json(t);
            out.temperatures = std::move(t);
            success(kMethodTemperature, "strategy", p, fit_s, pred_s, pool_seconds, &model);
        });

    if (cfg.strategies.cascade)
        run_strategy(kMethodCascade, [&] {
            require_refit(kMethodCascade);
            std::vector<LearnerPtr> level2;
            std::vector<const Learner*> level2_ptrs;
            for (const auto& name : builtin_pool_names()) {
                level2.push_back(make_builtin(name, 0));
                level2_ptrs.push_back(level2.back().get());
            }
            CascadeConfig cc;
            cc.oof_folds = cfg.cascade_folds;
            cc.final_selection_iterations = cfg.greedy_iterations;
            const Stopwatch fit;
            const auto model = fit_cascade(learners, level2_ptrs, x_train, y_train, x_val, out.y_val, C, cc,
                                           derive_seed(ds_seed, "cascade"));
            const double fit_s = fit.seconds();
            const Stopwatch pred;
            const auto p = model.predict_proba(x_test);
            const double pred_s = pred.seconds();
            const json mj = to_json(model);
            success(kMethodCascade, "strategy", p, fit_s, pred_s, pool_seconds, &mj);
        });

    if (cfg.strategies.deep_ensemble) {
        const std::string name = deep_ensemble_method_name(cfg.seeds_per_base);
        run_strategy(name, [&] {
            require_refit(name);
            const Stopwatch fit;
            const auto model = fit_seed_ensemble(learners, x_train, y_train, x_val, out.y_val, C,
                                                 SeedEnsembleConfig{cfg.seeds_per_base},
                                                 derive_seed(ds_seed, "deep-ensemble"));
            const double fit_s = fit.seconds();
            const Stopwatch pred;
            const auto p = model.predict_proba(x_test);
            const double pred_s = pred.seconds();
            std::vector<std::string> names;
            for (const auto& b : out.bases) names.push_back(b.name);
            const json mj = to_json(model, names);
            success(name, "strategy", p, fit_s, pred_s, pool_seconds, &mj);
        });
    }
    return out;
}

inline Dataset load_dataset(const RunConfig& cfg, const DatasetSpec& spec) {
    CsvDatasetOptions o;
    o.target = spec.target;
    o.group = spec.group;
    o.missing = spec.impute ? MissingPolicy::MedianImpute : MissingPolicy::Reject;
    o.id = cfg.dataset_id(spec);
    return load_csv_dataset(spec.path, o);
}

struct RunSummary {
    std::filesystem::path records_path;
    std::size_t records = 0;
    std::size_t errors = 0;
};

// Datasets run concurrently on `workers` threads; each dataset stays sequential.
inline RunSummary run(const RunConfig& cfg, int workers = 1) {
    validate(cfg);
    std::filesystem::create_directories(cfg.output_dir);
    RunSummary summary;
    summary.records_path = cfg.output_dir / "records.jsonl";
    RecordWriter writer(summary.records_path);
    std::ofstream(cfg.output_dir / "advisory.json") << "{}\n";
    std::atomic<std::size_t> next{0}, count{0}, errors{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < cfg.datasets.size(); i = next++) {
            const auto& spec = cfg.datasets[i];
            const std::string id = cfg.dataset_id(spec);
            std::vector<RunRecord> recs;
            try {
                const Dataset ds = load_dataset(cfg, spec);
                DatasetRunOptions opt;
                opt.artifact_root = cfg.output_dir / detail::safe_name(id);
                opt.artifact_prefix = detail::safe_name(id);
                opt.writer = &writer;
                recs = run_dataset(cfg, ds, opt).records;
            } catch (const std::exception& e) {
                for (const auto& m : cfg.method_names()) {
                    const bool base = std::any_of(cfg.pool.begin(), cfg.pool.end(),
                                                  [&](const BaseSpec& b) { return b.name == m; });
                    recs.push_back(detail::error_record(id, m, base ? "base" : "strategy", e));
                    writer.write(recs.back());
                }
            }
            count += recs.size();
            for (const auto& r : recs) errors += !r.ok;
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(cfg.datasets.size())));
    std::vector<std::thread> threads;
    for (int t = 1; t < n; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    summary.records = count;
    summary.errors = errors;
    return summary;
}

// ============================================================================
// Aggregation
// ============================================================================
struct LeaderboardEntry {
    std::string method;
    std::string kind;
    std::size_t datasets = 0;
    bool in_ranks = false;  // false: missing at least one dataset, excluded from rank statistics
    std::optional<double> mean_rank;
    std::map<std::string, double> means;  // over the method's own successful datasets
    double mean_total_seconds = 0.0;
};

struct AggregateReport {
    std::vector<std::string> datasets;       // rank universe
    std::vector<std::string> ranked_methods; // methods complete on every dataset
    std::vector<std::string> excluded_methods;
    stats::RankMatrix ranks;
    stats::FriedmanResult friedman;
    std::optional<double> cd;  // null for K outside the Nemenyi table
    std::vector<std::vector<std::optional<double>>> wilcoxon_p;
    stats::WinMatrix wins;
    std::vector<std::string> pareto;
    std::map<std::string, std::optional<double>> spread_gain_r;
    std::map<std::string, stats::OracleComparison> oracle;
    std::vector<LeaderboardEntry> leaderboard;
};

namespace detail {

inline std::optional<double> metric_value(const RunRecord& r, const std::string& key) {
    const auto& m = r.metrics;
    if (key == "accuracy") return m.accuracy;
    if (key == "weighted_f1") return m.weighted_f1;
    if (key == "roc_auc_ovr") return m.roc_auc_ovr;
    if (key == "log_loss") return m.log_loss;
    if (key == "ece") return m.ece;
    if (key == "brier_rel") return m.brier_rel;
    if (key == "aurc") return m.aurc;
    if (key == "cov_at_95") return m.cov_at_95;
    if (key == "wga") return m.wga;
    throw Error(ErrorCode::InvalidArgument, "unknown metric " + key);
}

}  // namespace detail

// Intersection rule: the dataset universe is every dataset with at least one
// successful record; methods missing any of them are reported but not ranked.
inline AggregateReport aggregate(const std::vector<RunRecord>& records) {
    AggregateReport rep;
    std::vector<std::string> methods;
    std::map<std::string, std::string> kind_of;
    std::map<std::pair<std::string, std::string>, const RunRecord*> cell;
    for (const auto& r : records) {
        if (!kind_of.count(r.method)) {
            methods.push_back(r.method);
            kind_of[r.method] = r.kind;
        }
        if (!r.ok) continue;
        if (std::find(rep.datasets.begin(), rep.datasets.end(), r.dataset) == rep.datasets.end())
            rep.datasets.push_back(r.dataset);
        cell[{r.dataset, r.method}] = &r;
    }
    for (const auto& m : methods) {
        const bool complete = std::all_of(rep.datasets.begin(), rep.datasets.end(),
                                          [&](const std::string& d) { return cell.count({d, m}) > 0; });
        (complete ? rep.ranked_methods : rep.excluded_methods).push_back(m);
    }
    require(rep.datasets.size() >= 2, ErrorCode::InsufficientOverlap,
            "rank statistics need at least two datasets with results, got " + std::to_string(rep.datasets.size()));
    require(rep.ranked_methods.size() >= 2, ErrorCode::InsufficientOverlap,
            "fewer than two methods completed every dataset");

    const std::size_t N = rep.datasets.size(), K = rep.ranked_methods.size();
    Matrix acc(N, K), secs(N, K);
    for (std::size_t d = 0; d < N; ++d)
        for (std::size_t k = 0; k < K; ++k) {
            const auto* r = cell.at({rep.datasets[d], rep.ranked_methods[k]});
            acc(d, k) = r->metrics.accuracy;
            secs(d, k) = r->total_seconds;
        }
    rep.ranks = stats::rank_table(acc, true, rep.ranked_methods, rep.datasets);
    rep.friedman = stats::friedman(rep.ranks);
    if (K <= 20) rep.cd = stats::nemenyi_cd(K, N);
    rep.wilcoxon_p.assign(K, std::vector<std::optional<double>>(K));
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = i + 1; j < K; ++j) {
            std::vector<double> a(N), b(N);
            for (std::size_t d = 0; d < N; ++d) {
                a[d] = acc(d, i);
                b[d] = acc(d, j);
            }
            try {
                rep.wilcoxon_p[i][j] = rep.wilcoxon_p[j][i] = stats::wilcoxon_signed_rank(a, b).p;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::TooFewPairs) throw;
            }
        }
    rep.wins = stats::win_matrix(acc);

    std::vector<stats::FrontierPoint> pts;
    for (std::size_t k = 0; k < K; ++k) {
        double a = 0, s = 0;
        for (std::size_t d = 0; d < N; ++d) {
            a += acc(d, k);
            s += secs(d, k);
        }
        pts.push_back({rep.ranked_methods[k], a / static_cast<double>(N),
                       std::max(s / static_cast<double>(N), 1e-9)});
    }
    rep.pareto = stats::pareto_frontier(pts);

    std::vector<std::size_t> base_cols;
    for (std::size_t k = 0; k < K; ++k)
        if (kind_of[rep.ranked_methods[k]] == "base") base_cols.push_back(k);
    if (!base_cols.empty()) {
        Matrix base_acc(N, base_cols.size());
        for (std::size_t d = 0; d < N; ++d)
            for (std::size_t b = 0; b < base_cols.size(); ++b) base_acc(d, b) = acc(d, base_cols[b]);
        for (std::size_t k = 0; k < K; ++k) {
            if (kind_of[rep.ranked_methods[k]] == "base") continue;
            std::vector<double> ens(N);
            std::vector<stats::SpreadGain> sg;
            for (std::size_t d = 0; d < N; ++d) {
                ens[d] = acc(d, k);
                auto row = base_acc.row(d);
                sg.push_back(stats::spread_gain(std::vector<double>(row.begin(), row.end()), ens[d]));
            }
            rep.oracle[rep.ranked_methods[k]] = stats::oracle_comparison(base_acc, ens);
            try {
                rep.spread_gain_r[rep.ranked_methods[k]] = stats::spread_gain_correlation(sg);
            } catch (const Error&) {
                rep.spread_gain_r[rep.ranked_methods[k]] = std::nullopt;
            }
        }
    }

    const auto mean_ranks = rep.ranks.mean_ranks();
    for (const auto& m : methods) {
        LeaderboardEntry e;
        e.method = m;
        e.kind = kind_of[m];
        const auto it = std::find(rep.ranked_methods.begin(), rep.ranked_methods.end(), m);
        e.in_ranks = it != rep.ranked_methods.end();
        if (e.in_ranks) e.mean_rank = mean_ranks[static_cast<std::size_t>(it - rep.ranked_methods.begin())];
        std::map<std::string, std::size_t> counts;
        for (const auto& d : rep.datasets) {
            const auto c = cell.find({d, m});
            if (c == cell.end()) continue;
            ++e.datasets;
            e.mean_total_seconds += c->second->total_seconds;
            for (const auto& key : metric_keys())
                if (const auto v = detail::metric_value(*c->second, key)) {
                    e.means[key] += *v;
                    ++counts[key];
                }
        }
        for (auto& [key, v] : e.means) v /= static_cast<double>(counts[key]);
        if (e.datasets) e.mean_total_seconds /= static_cast<double>(e.datasets);
        rep.leaderboard.push_back(std::move(e));
    }
    std::stable_sort(rep.leaderboard.begin(), rep.leaderboard.end(),
                     [](const LeaderboardEntry& a, const LeaderboardEntry& b) {
                         if (a.in_ranks != b.in_ranks) return a.in_ranks;
                         if (a.in_ranks) return *a.mean_rank < *b.mean_rank;
                         const double x = a.means.count("accuracy") ? a.means.at("accuracy") : -1.0;
                         const double y = b.means.count("accuracy") ? b.means.at("accuracy") : -1.0;
                         return x > y;
                     });
    return rep;
}

inline json leaderboard_json(const AggregateReport& r) {
    json rows = json::array();
    for (const auto& e : r.leaderboard) {
        json j{{"method", e.method},
               {"kind", e.kind},
               {"datasets", e.datasets},
               {"in_ranks", e.in_ranks},
               {"mean_rank", e.mean_rank ? json(*e.mean_rank) : json(nullptr)},
               {"mean_total_seconds", e.mean_total_seconds}};
        for (const auto& key : metric_keys()) j[key] = e.means.count(key) ? json(e.means.at(key)) : json(nullptr);
        rows.push_back(std::move(j));
    }
    return {{"schema", kRecordSchema}, {"rank_metric", "accuracy"}, {"datasets", r.datasets.size()}, {"methods", rows}};
}

inline json stat_report_json(const AggregateReport& r) {
    const auto mr = r.ranks.mean_ranks();
    json ranks = json::object();
    for (std::size_t k = 0; k < r.ranked_methods.size(); ++k) ranks[r.ranked_methods[k]] = mr[k];
    json wil = json::array();
    for (const auto& row : r.wilcoxon_p) {
        json jr = json::array();
        for (const auto& v : row) jr.push_back(v ? json(*v) : json(nullptr));
        wil.push_back(std::move(jr));
    }
    json oracle = json::object();
    for (const auto& [m, o] : r.oracle)
        oracle[m] = {{"wins", o.wins}, {"ties", o.ties}, {"losses", o.losses}, {"mean_delta", o.mean_delta}};
    json sg = json::object();
    for (const auto& [m, v] : r.spread_gain_r) sg[m] = v ? json(*v) : json(nullptr);
    return {{"schema", kRecordSchema},
            {"n_datasets", r.datasets.size()},
            {"k_methods", r.ranked_methods.size()},
            {"datasets", r.datasets},
            {"methods", r.ranked_methods},
            {"excluded_methods", r.excluded_methods},
            {"mean_ranks", ranks},
            {"friedman", {{"chi2", r.friedman.chi2}, {"p", r.friedman.p}, {"df", r.friedman.k - 1}}},
            {"nemenyi", {{"alpha", 0.05}, {"cd", r.cd ? json(*r.cd) : json(nullptr)}}},
            {"wilcoxon_p", wil},
            {"win_counts", r.wins.wins},
            {"win_percent", r.wins.percent},
            {"pareto", r.pareto},
            {"spread_gain_r", sg},
            {"oracle_comparison", oracle}};
}

inline json cd_diagram_json(const AggregateReport& r) {
    const auto mr = r.ranks.mean_ranks();
    std::vector<std::size_t> order(mr.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mr[a] < mr[b]; });
    std::vector<double> sorted;
    json methods = json::array();
    for (std::size_t k : order) {
        sorted.push_back(mr[k]);
        methods.push_back({{"method", r.ranked_methods[k]}, {"mean_rank", mr[k]}});
    }
    json groups = json::array();
    if (r.cd)
        for (auto [a, b] : stats::cd_groups(sorted, *r.cd)) groups.push_back({a, b});
    return {{"schema", kRecordSchema},
            {"cd", r.cd ? json(*r.cd) : json(nullptr)},
            {"n_datasets", r.datasets.size()},
            {"methods", methods},
            {"groups", groups}};
}

inline std::string win_matrix_csv(const AggregateReport& r) {
    std::ostringstream os;
    os << "method";
    for (const auto& m : r.ranked_methods) os << ',' << m;
    os << '\n';
    for (std::size_t i = 0; i < r.ranked_methods.size(); ++i) {
        os << r.ranked_methods[i];
        for (std::size_t j = 0; j < r.ranked_methods.size(); ++j) os << ',' << csv::format_real(r.wins.percent[i][j]);
        os << '\n';
    }
    return os.str();
}

inline json pareto_json(const AggregateReport& r) {
    json pts = json::array();
    double fastest = std::numeric_limits<double>::infinity();
    for (const auto& e : r.leaderboard)
        if (e.in_ranks) fastest = std::min(fastest, e.mean_total_seconds);
    for (const auto& e : r.leaderboard) {
        if (!e.in_ranks) continue;
        pts.push_back({{"method", e.method},
                       {"mean_accuracy", e.means.at("accuracy")},
                       {"mean_total_seconds", e.mean_total_seconds},
                       {"time_ratio_to_fastest", fastest > 0 ? json(e.mean_total_seconds / fastest) : json(nullptr)},
                       {"on_frontier", std::find(r.pareto.begin(), r.pareto.end(), e.method) != r.pareto.end()}});
    }
    return {{"schema", kRecordSchema}, {"time_accounting", "pool_seconds + combiner_seconds"},
            {"frontier", r.pareto}, {"points", pts}};
}

// ============================================================================
// Diversity from persisted predictions
// ============================================================================
struct RecordDiversity {
    diversity::DiversityReport pool;
    std::map<std::string, diversity::ConsensusReport> consensus;  // per dataset
};

// Uses base records only; bases must have predictions on every dataset in use.
inline RecordDiversity diversity_from_records(const std::vector<RunRecord>& records,
                                              const std::filesystem::path& records_dir) {
    std::vector<std::string> bases, datasets;
    std::map<std::pair<std::string, std::string>, const RunRecord*> cell;
    for (const auto& r : records) {
        if (r.kind != "base") continue;
        if (std::find(bases.begin(), bases.end(), r.method) == bases.end()) bases.push_back(r.method);
        if (!r.ok || r.predictions.empty()) continue;
        if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
        cell[{r.dataset, r.method}] = &r;
    }
    std::vector<std::string> used;
    for (const auto& b : bases)
        if (std::all_of(datasets.begin(), datasets.end(), [&](const auto& d) { return cell.count({d, b}) > 0; }))
            used.push_back(b);
    require(used.size() >= 2, ErrorCode::InsufficientOverlap, "diversity needs two bases with predictions on every dataset");
    require(!datasets.empty(), ErrorCode::InsufficientOverlap, "no base predictions found");

    RecordDiversity out;
    std::vector<std::vector<std::vector<int>>> preds(used.size());
    std::vector<std::vector<int>> labels;
    for (const auto& d : datasets) {
        const auto* first = cell.at({d, used.front()});
        labels.push_back(detail::read_labels_csv(records_dir / first->labels));
        std::vector<std::vector<int>> hard;
        for (std::size_t k = 0; k < used.size(); ++k) {
            const ProbabilityMatrix p(read_matrix_csv(records_dir / cell.at({d, used[k]})->predictions));
            require(p.rows() == labels.back().size(), ErrorCode::ShapeMismatch, "prediction rows differ from labels on " + d);
            preds[k].push_back(p.hard_predictions());
            hard.push_back(preds[k].back());
        }
        out.consensus[d] = diversity::consensus_report(hard, labels.back());
    }
    out.pool = diversity::pool_diversity(preds, labels, used);
    return out;
}

inline json to_json(const RecordDiversity& d) {
    json j = diversity::to_json(d.pool);
    json cons = json::object();
    double mean = 0;
    for (const auto& [ds, c] : d.consensus) {
        cons[ds] = {{"consensus_fraction", c.consensus_fraction}, {"ceiling_bound", c.ceiling_bound}};
        mean += c.ceiling_bound;
    }
    j["consensus"] = cons;
    j["mean_ceiling_bound"] = d.consensus.empty() ? json(nullptr) : json(mean / static_cast<double>(d.consensus.size()));
    return j;
}

// Writes the full report set into `out_dir`.
inline void write_report(const std::filesystem::path& records_path, const std::filesystem::path& out_dir) {
    const auto records = read_records(records_path);
    const auto rep = aggregate(records);
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "leaderboard.json") << leaderboard_json(rep).dump(1) << '\n';
    std::ofstream(out_dir / "stat_report.json") << stat_report_json(rep).dump(1) << '\n';
    std::ofstream(out_dir / "cd_diagram.json") << cd_diagram_json(rep).dump(1) << '\n';
    std::ofstream(out_dir / "win_matrix.csv") << win_matrix_csv(rep);
    std::ofstream(out_dir / "pareto.json") << pareto_json(rep).dump(1) << '\n';
    json div;
    try {
        div = to_json(diversity_from_records(records, records_path.parent_path()));
    } catch (const Error& e) {
        div = {{"schema", kRecordSchema}, {"error_code", to_string(e.code())}, {"error", e.what()}};
    }
    std::ofstream(out_dir / "diversity.json") << div.dump(1) << '\n';
}

}  // namespace tabens
