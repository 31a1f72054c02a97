#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "arratia/rho_weights.hpp"
#include "arratia/survival.hpp"

namespace arratia {

// ---------------------------------------------------------------------------
// Field cache file: one line of JSON header {"format", "key", "summary"}, then a little-endian u64 count
// followed by that many little-endian doubles. Files are named <backend>-<hash of key>.arfc.

struct CachedTable {
    nlohmann::json header;
    std::vector<double> data;
};

std::string cache_file(const std::string& dir, const nlohmann::json& key);
/// nullopt when the file is missing or its stored key differs; throws on a corrupt file.
std::optional<CachedTable> cache_load(const std::string& dir, const nlohmann::json& key);
void cache_store(const std::string& dir, const nlohmann::json& key, const nlohmann::json& summary,
                 std::span<const double> data);

nlohmann::json beta_table_key(const std::string& backend, double s, double h, double extent, const SeedLedger* seed,
                              std::size_t mc_paths);
std::vector<double> pack(const BetaTable& t);
BetaTable unpack_beta_table(const nlohmann::json& header, std::span<const double> data);

nlohmann::json pde_field_key(const DriftField& drift, const Domain& domain, const PdeMesh& mesh);
std::vector<double> pack(const PdeGridField& f);
std::shared_ptr<PdeGridField> unpack_pde_field(const nlohmann::json& header, std::span<const double> data,
                                               const DriftField& drift, const Domain& domain);

/// Load from the cache or build and store; `warning` receives a note on a miss. Empty dir: always build.
std::shared_ptr<PdeGridField> cached_alpha_pde(const std::string& dir, const DriftField& drift, const Domain& domain,
                                               const PdeMesh& mesh, std::string* warning = nullptr);

}  // namespace arratia
