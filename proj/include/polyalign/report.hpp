#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "theory.hpp"

namespace polyalign {

inline constexpr const char* kToolVersion = "0.3.0";

// JSON-lines bound trace: one header line, then one line per epoch.
inline std::string trace_to_jsonl(const BoundTrace& t) {
    using nlohmann::json;
    std::string out = json{{"type", "header"},
                           {"seed", t.seed},
                           {"plan_seed", t.plan_seed},
                           {"eta", t.eta},
                           {"lipschitz_samples", t.lipschitz_samples},
                           {"perturbation_scale", t.perturbation_scale}}
                          .dump() +
                      "\n";
    for (const auto& r : t.records) {
        out += json{{"type", "epoch"},
                    {"epoch", r.epoch},
                    {"steps", r.steps},
                    {"prev_error", r.prev_error},
                    {"measured_error", r.measured_error},
                    {"g_max", r.g_max},
                    {"lambda_hat", r.lambda_hat},
                    {"a", r.a},
                    {"distribution_error", r.distribution_error},
                    {"bound_rhs", r.bound_rhs},
                    {"holds", r.holds},
                    {"plan", r.plan}}
                   .dump() +
               "\n";
    }
    return out;
}

inline BoundTrace trace_from_jsonl(const std::string& text) {
    BoundTrace t;
    std::istringstream in(text);
    std::size_t lineno = 0;
    bool header = false;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "header") {
                t.seed = j.at("seed").get<std::uint64_t>();
                t.plan_seed = j.at("plan_seed").get<std::uint64_t>();
                t.eta = j.at("eta").get<double>();
                t.lipschitz_samples = j.at("lipschitz_samples").get<std::size_t>();
                t.perturbation_scale = j.at("perturbation_scale").get<double>();
                header = true;
            } else if (type == "epoch") {
                EpochBoundRecord r;
                r.epoch = j.at("epoch").get<std::size_t>();
                r.steps = j.at("steps").get<std::size_t>();
                r.prev_error = j.at("prev_error").get<double>();
                r.measured_error = j.at("measured_error").get<double>();
                r.g_max = j.at("g_max").get<Vec>();
                r.lambda_hat = j.at("lambda_hat").get<double>();
                r.a = j.at("a").get<double>();
                r.distribution_error = j.at("distribution_error").get<double>();
                r.bound_rhs = j.at("bound_rhs").get<double>();
                r.holds = j.at("holds").get<bool>();
                r.plan = j.at("plan").get<std::vector<std::size_t>>();
                t.records.push_back(std::move(r));
            } else {
                throw FormatError(FormatErrorKind::malformed, "unknown record type '" + type + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(FormatErrorKind::malformed, "bound trace line " + std::to_string(lineno) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError(FormatErrorKind::malformed, "bound trace line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!header) throw FormatError(FormatErrorKind::malformed, "bound trace has no header line");
    return t;
}

/// Recomputes each epoch's right-hand side from its stored inputs and
/// re-derives the verdicts; stored verdicts and bounds are not trusted.
inline bool replay_trace(BoundTrace& t) {
    for (auto& r : t.records) r.bound_rhs = bound_rhs({r.prev_error, t.eta, r.a, r.g_max, r.distribution_error});
    return recheck_trace(t);
}

inline nlohmann::json to_json(const MomentumCheckReport& r) {
    return {{"measured", r.measured}, {"rhs", r.rhs},      {"g_max", r.g_max},
            {"distribution_error", r.distribution_error}, {"beta1", r.beta1}, {"holds", r.holds}};
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Written next to a command's outputs. Holds the effective config, so the
/// command can be re-run from the manifest alone.
struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::string started_at = utc_timestamp();
    std::string finished_at;
    std::vector<std::string> outputs;
    std::vector<std::string> argv;
    nlohmann::json extra = nlohmann::json::object();

    std::string config_hash() const { return hex64(fnv1a64(config.dump())); }

    nlohmann::json to_json() const {
        return {{"command", command},       {"tool_version", kToolVersion}, {"config_hash", config_hash()},
                {"seed", seed},             {"started_at", started_at},     {"finished_at", finished_at},
                {"outputs", outputs},       {"argv", argv},                 {"config", config},
                {"extra", extra}};
    }
};

inline void write_text(const std::string& path, const std::string& text) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(FormatErrorKind::io, "cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw FormatError(FormatErrorKind::io, "write failed for '" + path + "'");
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrorKind::io, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace polyalign
