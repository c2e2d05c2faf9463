#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "core.hpp"

// Newline-delimited JSON protocol spoken with external model workers.
//
//   -> {"op":"handshake","version":1}        <- {"ok":true,"model":s,"classes":n|null}
//   -> {"op":"fit","X":[[..]],"y":[..],"seed":n}  <- {"ok":true,"fit_seconds":r}
//   -> {"op":"predict_proba","X":[[..]]}     <- {"ok":true,"proba":[[..]]}
//   -> {"op":"shutdown"}                     <- {"ok":true}
//   any failure                              <- {"ok":false,"error":s}
//
// Reals travel as shortest round-trip decimals, so a matrix survives
// serialize -> parse bit-for-bit.
namespace tabens::wire {

using json = nlohmann::json;

inline constexpr int kProtocolVersion = 1;

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return rows;
}

inline Matrix matrix_from_json(const json& j) {
    if (!j.is_array()) throw Error(ErrorCode::Protocol, "expected an array of rows");
    std::vector<std::vector<double>> rows;
    rows.reserve(j.size());
    for (const auto& r : j) {
        if (!r.is_array()) throw Error(ErrorCode::Protocol, "expected a row array");
        std::vector<double> row;
        row.reserve(r.size());
        for (const auto& v : r) {
            if (!v.is_number()) throw Error(ErrorCode::Protocol, "non-numeric matrix entry");
            row.push_back(v.get<double>());
        }
        rows.push_back(std::move(row));
    }
    return Matrix::from_rows(rows);
}

inline std::string handshake_request() {
    return json{{"op", "handshake"}, {"version", kProtocolVersion}}.dump();
}

inline std::string fit_request(const Matrix& x, std::span<const int> y, std::uint64_t seed) {
    return json{{"op", "fit"},
                {"X", matrix_to_json(x)},
                {"y", std::vector<int>(y.begin(), y.end())},
                {"seed", seed}}
        .dump();
}

inline std::string predict_request(const Matrix& x) {
    return json{{"op", "predict_proba"}, {"X", matrix_to_json(x)}}.dump();
}

inline std::string shutdown_request() { return json{{"op", "shutdown"}}.dump(); }

inline std::string ok_response(json body = json::object()) {
    body["ok"] = true;
    return body.dump();
}

inline std::string error_response(const std::string& message) {
    return json{{"ok", false}, {"error", message}}.dump();
}

// Parses a response line; {"ok":false} and malformed lines raise Protocol.
inline json parse_response(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Protocol, std::string("malformed response: ") + e.what());
    }
    if (!j.is_object() || !j.contains("ok") || !j["ok"].is_boolean())
        throw Error(ErrorCode::Protocol, "response lacks boolean 'ok'");
    if (!j["ok"].get<bool>()) {
        const std::string msg =
            j.contains("error") && j["error"].is_string() ? j["error"].get<std::string>() : "unknown";
        throw Error(ErrorCode::Protocol, "worker error: " + msg);
    }
    return j;
}

struct Handshake {
    std::string model;
    std::optional<int> classes;
};

inline Handshake parse_handshake(const json& j) {
    if (!j.contains("model") || !j["model"].is_string())
        throw Error(ErrorCode::Protocol, "handshake lacks 'model'");
    Handshake h{j["model"].get<std::string>(), std::nullopt};
    if (j.contains("classes") && j["classes"].is_number_integer()) h.classes = j["classes"].get<int>();
    return h;
}

}  // namespace tabens::wire
