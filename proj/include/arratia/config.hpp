#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "arratia/verify.hpp"

namespace arratia {

inline constexpr std::uint64_t kDefaultMasterSeed = 20261017;

/// Invalid configuration; the message names the file, line (when known) and offending key.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::uint64_t master_seed = kDefaultMasterSeed;
    std::size_t threads = 0;  // 0: hardware concurrency
    std::string cache_dir;

    double T = 1.0;          // [grid]
    std::size_t M = 1024;
    std::size_t N = 20000;   // [mc]
    bool N_override = false;  // [mc].N given: every suite runs with N paths
    std::vector<double> u{0.0, 1.0};  // [domain]

    std::string output_dir = "out";  // [output]
    std::string json_report = "report.json";
    std::string csv_report = "report.csv";

    TolerancePolicy tol;
    std::vector<nlohmann::json> kernels;  // [[kernel]] entries, validated against the registry
    std::vector<TestSpec> suites;         // [[suite]] entries; empty runs the preregistered suites

    /// Normalized effective configuration, as persisted in reports.
    nlohmann::json to_json() const;
};

/// TOML or JSON, chosen by extension (.json for JSON, anything else TOML).
RunConfig load_config(const std::string& path);
RunConfig parse_config_toml(std::string_view text, const std::string& source = "<config>");
RunConfig parse_config_json(std::string_view text, const std::string& source = "<config>");

/// Suites to run: the explicit list, or the preregistered ones with the configured tolerances.
std::vector<TestSpec> suites_for(const RunConfig& cfg);

/// Cache directory after the ARRATIA_CACHE_DIR override.
std::string effective_cache_dir(const RunConfig& cfg);

}  // namespace arratia
