#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

namespace arratia {

/// Uniform grid t_j = j*T/M on [0, T].
class TimeGrid {
public:
    TimeGrid() = default;

    double horizon() const { return horizon_; }
    std::size_t steps() const { return steps_; }
    double dt() const { return steps_ == 0 ? 0.0 : horizon_ / static_cast<double>(steps_); }
    double time(std::size_t j) const;
    std::vector<double> points() const;

    /// Largest j with t_j <= t (clamped to [0, M]).
    std::size_t index_at_or_before(double t) const;
    /// Number of grid times t_j, j < M, with t_j < t.
    std::size_t count_before(double t) const;

    /// Grid on [t_k, T] re-based at 0. May have zero steps when k == M.
    TimeGrid tail(std::size_t k) const;

    friend TimeGrid make_grid(double horizon, std::size_t steps);

private:
    TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {}
    double horizon_ = 0.0;
    std::size_t steps_ = 0;
};

TimeGrid make_grid(double horizon, std::size_t steps);

/// Reproducibility record: identical (master_seed, stream_id) gives identical draws.
struct SeedLedger {
    std::uint64_t master_seed = 0;
    std::uint64_t stream_id = 0;
    std::uint64_t draws = 0;

    SeedLedger substream(std::uint64_t k) const;
    nlohmann::json to_json() const;
    static SeedLedger from_json(const nlohmann::json& j);
};

std::uint64_t splitmix64(std::uint64_t x);

/// Engine for one path. Streams for different path indices never share state.
class PathRng {
public:
    PathRng(const SeedLedger& ledger, std::uint64_t path_index, std::uint64_t substream = 0);

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// n x (M+1) path values, coordinate-major, plus per-step crossing uniforms
/// so every exit test on the same noise sees the same bridge draws.
class SamplePath {
public:
    SamplePath() = default;
    SamplePath(const TimeGrid& grid, std::span<const double> start);

    const TimeGrid& grid() const { return grid_; }
    std::size_t dimension() const { return n_; }
    std::size_t columns() const { return grid_.steps() + 1; }

    double value(std::size_t i, std::size_t j) const { return values_[i * columns() + j]; }
    double& value(std::size_t i, std::size_t j) { return values_[i * columns() + j]; }
    double increment(std::size_t i, std::size_t j) const { return value(i, j + 1) - value(i, j); }

    std::span<const double> coordinate(std::size_t i) const {
        return {values_.data() + i * columns(), columns()};
    }
    std::span<double> coordinate(std::size_t i) { return {values_.data() + i * columns(), columns()}; }
    std::vector<double> at(std::size_t j) const;
    std::vector<double> start() const { return at(0); }

    bool has_uniforms() const { return !uniforms_.empty(); }
    /// Uniform used for the bridge test of slot i (adjacent pair i,i+1 or coordinate i) in step j.
    double uniform(std::size_t i, std::size_t j) const { return uniforms_[i * grid_.steps() + j]; }
    std::vector<double>& uniforms() { return uniforms_; }
    const std::vector<double>& uniforms() const { return uniforms_; }

    const std::vector<double>& raw() const { return values_; }
    std::vector<double>& raw() { return values_; }

private:
    TimeGrid grid_;
    std::size_t n_ = 0;
    std::vector<double> values_;
    std::vector<double> uniforms_;
};

/// Brownian path from start; increments N(0, dt) iid across coordinates and steps.
SamplePath sample_brownian(std::span<const double> start, const TimeGrid& grid, PathRng& rng);
SamplePath sample_brownian(std::span<const double> start, const TimeGrid& grid, const SeedLedger& seed,
                           std::uint64_t path_index = 0);

}  // namespace arratia
