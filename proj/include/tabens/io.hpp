#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "core.hpp"
#include "learners.hpp"

namespace tabens {

using json = nlohmann::json;

// ============================================================================
// CSV primitives (RFC 4180 quoting, comma separator)
// ============================================================================
namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cell));
            cell.clear();
        } else if (ch != '\r') {
            cell.push_back(ch);
        }
    }
    out.push_back(std::move(cell));
    return out;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* first = s.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::Io, "cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto cells = split_line(line);
        for (auto& c : cells) c = trim(std::move(c));
        rows.push_back(std::move(cells));
    }
    return rows;
}

// Shortest round-trip decimal.
inline std::string format_real(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace csv

// ============================================================================
// Dataset ingestion
// ============================================================================
enum class MissingPolicy { Reject, MedianImpute };

struct CsvDatasetOptions {
    std::string target;
    std::optional<std::string> group;
    MissingPolicy missing = MissingPolicy::Reject;
    std::string id;  // defaults to the file stem
};

namespace detail {

inline bool is_missing(const std::string& cell) {
    return cell.empty() || cell == "?" || cell == "NA" || cell == "NaN" || cell == "nan";
}

}  // namespace detail

// Header row required. Columns holding any non-numeric value are integer-coded
// in first-appearance order. Targets are coded in ascending numeric order when
// every value is numeric, first-appearance order otherwise.
inline Dataset load_csv_dataset(const std::filesystem::path& path, const CsvDatasetOptions& opt) {
    auto rows = csv::read_rows(path);
    require(rows.size() >= 2, ErrorCode::Io, path.string() + ": need a header and at least one row");
    const auto header = rows.front();
    const std::size_t width = header.size();
    auto col_of = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        require(it != header.end(), ErrorCode::InvalidConfig,
                path.string() + ": no column named '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t target_col = col_of(opt.target);
    const std::size_t n = rows.size() - 1;
    for (std::size_t r = 1; r < rows.size(); ++r)
        require(rows[r].size() == width, ErrorCode::Io,
                path.string() + ": row " + std::to_string(r) + " has " +
                    std::to_string(rows[r].size()) + " cells, header has " + std::to_string(width));

    Dataset ds;
    ds.id = opt.id.empty() ? path.stem().string() : opt.id;

    // Target.
    {
        std::vector<std::string> raw(n);
        bool numeric = true;
        for (std::size_t i = 0; i < n; ++i) {
            raw[i] = rows[i + 1][target_col];
            require(!detail::is_missing(raw[i]), ErrorCode::InvalidArgument,
                    path.string() + ": missing target at row " + std::to_string(i + 1));
            numeric = numeric && csv::parse_number(raw[i]).has_value();
        }
        std::vector<std::string> order;
        for (const auto& v : raw)
            if (std::find(order.begin(), order.end(), v) == order.end()) order.push_back(v);
        if (numeric)
            std::stable_sort(order.begin(), order.end(), [](const std::string& a, const std::string& b) {
                return *csv::parse_number(a) < *csv::parse_number(b);
            });
        std::unordered_map<std::string, int> code;
        for (std::size_t c = 0; c < order.size(); ++c) code[order[c]] = static_cast<int>(c);
        ds.labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) ds.labels[i] = code.at(raw[i]);
        ds.class_count = static_cast<int>(order.size());
        ds.class_names = order;
    }

    // Features.
    std::vector<std::size_t> feature_cols;
    for (std::size_t j = 0; j < width; ++j)
        if (j != target_col) feature_cols.push_back(j);
    ds.features = Matrix(n, feature_cols.size());
    for (std::size_t f = 0; f < feature_cols.size(); ++f) {
        const std::size_t j = feature_cols[f];
        ds.feature_names.push_back(header[j]);
        bool numeric = true;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& cell = rows[i + 1][j];
            if (!detail::is_missing(cell) && !csv::parse_number(cell)) numeric = false;
        }
        std::vector<bool> missing(n, false);
        std::unordered_map<std::string, int> codes;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& cell = rows[i + 1][j];
            if (detail::is_missing(cell)) {
                require(opt.missing == MissingPolicy::MedianImpute, ErrorCode::InvalidArgument,
                        path.string() + ": missing value in column '" + header[j] + "' at row " +
                            std::to_string(i + 1));
                missing[i] = true;
                continue;
            }
            double v;
            if (numeric) {
                v = *csv::parse_number(cell);
                require(std::isfinite(v), ErrorCode::InvalidArgument,
                        path.string() + ": non-finite value in column '" + header[j] + "'");
            } else {
                auto [it, inserted] = codes.emplace(cell, static_cast<int>(codes.size()));
                v = it->second;
            }
            ds.features(i, f) = v;
        }
        if (std::find(missing.begin(), missing.end(), true) != missing.end()) {
            std::vector<double> present;
            for (std::size_t i = 0; i < n; ++i)
                if (!missing[i]) present.push_back(ds.features(i, f));
            require(!present.empty(), ErrorCode::InvalidArgument,
                    path.string() + ": column '" + header[j] + "' has no values to impute from");
            std::sort(present.begin(), present.end());
            const std::size_t m = present.size();
            const double median = m % 2 ? present[m / 2] : 0.5 * (present[m / 2 - 1] + present[m / 2]);
            for (std::size_t i = 0; i < n; ++i)
                if (missing[i]) ds.features(i, f) = median;
        }
    }
    if (opt.group) {
        auto it = std::find(ds.feature_names.begin(), ds.feature_names.end(), *opt.group);
        require(it != ds.feature_names.end(), ErrorCode::InvalidConfig,
                path.string() + ": group column '" + *opt.group + "' not among features");
        ds.group_column = static_cast<std::size_t>(it - ds.feature_names.begin());
    }
    ds.validate();
    return ds;
}

inline void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds,
                              const std::string& target_name = "target") {
    std::ofstream out(path);
    require(out.good(), ErrorCode::Io, "cannot write " + path.string());
    for (std::size_t j = 0; j < ds.features.cols(); ++j)
        out << (j < ds.feature_names.size() ? ds.feature_names[j] : "x" + std::to_string(j)) << ',';
    out << target_name << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < ds.features.cols(); ++j)
            out << csv::format_real(ds.features(i, j)) << ',';
        out << ds.labels[i] << '\n';
    }
}

// ============================================================================
// Matrix files and file-backed predictors
// ============================================================================
inline Matrix read_matrix_csv(const std::filesystem::path& path) {
    auto rows = csv::read_rows(path);
    std::vector<std::vector<double>> values;
    values.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<double> row;
        for (const auto& cell : rows[r]) {
            auto v = csv::parse_number(cell);
            require(v.has_value(), ErrorCode::Io,
                    path.string() + ": non-numeric cell at line " + std::to_string(r + 1));
            row.push_back(*v);
        }
        values.push_back(std::move(row));
    }
    return Matrix::from_rows(values);
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::Io, "cannot write " + path.string());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << csv::format_real(m(i, j));
        }
        out << '\n';
    }
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p.replace_extension(".json");
    return p;
}

// Loads `<stem>.csv` plus its sidecar `<stem>.json`
// {"model": name, "dataset": id, "split": "train" | "val" | "test"}.
inline FileBackedPredictor load_file_backed(const std::filesystem::path& csv_path) {
    const auto side = sidecar_path(csv_path);
    std::ifstream in(side);
    require(in.good(), ErrorCode::Io, "missing sidecar " + side.string());
    json meta;
    try {
        meta = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Io, side.string() + ": " + e.what());
    }
    require(meta.contains("model") && meta["model"].is_string() && meta.contains("dataset") &&
                meta["dataset"].is_string() && meta.contains("split") && meta["split"].is_string(),
            ErrorCode::Io, side.string() + ": sidecar needs string fields model, dataset, split");
    const auto split = meta["split"].get<std::string>();
    require(split == "train" || split == "val" || split == "test", ErrorCode::Io,
            side.string() + ": split must be train, val or test");
    return FileBackedPredictor(meta["model"].get<std::string>(),
                               ProbabilityMatrix(read_matrix_csv(csv_path)),
                               meta["dataset"].get<std::string>(), split);
}

inline void save_file_backed(const std::filesystem::path& csv_path, const std::string& model,
                             const std::string& dataset, const std::string& split,
                             const ProbabilityMatrix& p) {
    write_matrix_csv(csv_path, p.matrix());
    std::ofstream side(sidecar_path(csv_path));
    require(side.good(), ErrorCode::Io, "cannot write sidecar for " + csv_path.string());
    side << json{{"model", model}, {"dataset", dataset}, {"split", split}}.dump() << '\n';
}

}  // namespace tabens
