#include "arratia/rng_paths.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace arratia {

double TimeGrid::time(std::size_t j) const {
    if (j >= steps_) return horizon_;
    return horizon_ * static_cast<double>(j) / static_cast<double>(steps_);
}

std::vector<double> TimeGrid::points() const {
    std::vector<double> p(steps_ + 1);
    for (std::size_t j = 0; j <= steps_; ++j) p[j] = time(j);
    return p;
}

std::size_t TimeGrid::index_at_or_before(double t) const {
    if (steps_ == 0 || t <= 0.0) return 0;
    if (t >= horizon_) return steps_;
    auto j = static_cast<std::size_t>(std::floor(t / dt()));
    while (j < steps_ && time(j + 1) <= t) ++j;
    while (j > 0 && time(j) > t) --j;
    return j;
}

std::size_t TimeGrid::count_before(double t) const {
    if (t <= 0.0) return 0;
    if (!(t < horizon_)) return steps_;
    std::size_t j = index_at_or_before(t);
    return time(j) < t ? j + 1 : j;
}

TimeGrid TimeGrid::tail(std::size_t k) const {
    if (k > steps_) throw std::invalid_argument("tail index beyond grid");
    return TimeGrid(horizon_ - time(k), steps_ - k);
}

TimeGrid make_grid(double horizon, std::size_t steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("grid horizon must be positive");
    if (steps == 0) throw std::invalid_argument("grid needs at least one step");
    return TimeGrid(horizon, steps);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

SeedLedger SeedLedger::substream(std::uint64_t k) const {
    return SeedLedger{master_seed, splitmix64(stream_id * 0x100000001b3ULL + k + 1), 0};
}

nlohmann::json SeedLedger::to_json() const {
    return {{"master_seed", master_seed}, {"stream_id", stream_id}};
}

SeedLedger SeedLedger::from_json(const nlohmann::json& j) {
    SeedLedger s;
    s.master_seed = j.at("master_seed").get<std::uint64_t>();
    s.stream_id = j.at("stream_id").get<std::uint64_t>();
    return s;
}

PathRng::PathRng(const SeedLedger& ledger, std::uint64_t path_index, std::uint64_t substream) {
    std::uint64_t h = splitmix64(ledger.master_seed);
    h = splitmix64(h ^ ledger.stream_id);
    h = splitmix64(h ^ path_index);
    h = splitmix64(h ^ (substream * 0x9e3779b97f4a7c15ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(path_index), static_cast<std::uint32_t>(substream)};
    engine_.seed(seq);
}

SamplePath::SamplePath(const TimeGrid& grid, std::span<const double> start)
    : grid_(grid), n_(start.size()), values_(start.size() * (grid.steps() + 1)) {
    for (std::size_t i = 0; i < n_; ++i) {
        if (!std::isfinite(start[i])) throw std::invalid_argument("start must be finite");
        std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(i * columns()), columns(), start[i]);
    }
}

std::vector<double> SamplePath::at(std::size_t j) const {
    std::vector<double> v(n_);
    for (std::size_t i = 0; i < n_; ++i) v[i] = value(i, j);
    return v;
}

SamplePath sample_brownian(std::span<const double> start, const TimeGrid& grid, PathRng& rng) {
    if (start.empty()) throw std::invalid_argument("path dimension must be at least 1");
    SamplePath p(grid, start);
    const std::size_t M = grid.steps();
    const double sd = std::sqrt(grid.dt());
    for (std::size_t j = 0; j < M; ++j)
        for (std::size_t i = 0; i < start.size(); ++i) p.value(i, j + 1) = p.value(i, j) + sd * rng.normal();
    auto& u = p.uniforms();
    u.resize(start.size() * M);
    for (std::size_t j = 0; j < M; ++j)
        for (std::size_t i = 0; i < start.size(); ++i) u[i * M + j] = rng.uniform();
    return p;
}

SamplePath sample_brownian(std::span<const double> start, const TimeGrid& grid, const SeedLedger& seed,
                           std::uint64_t path_index) {
    PathRng rng(seed, path_index);
    return sample_brownian(start, grid, rng);
}

}  // namespace arratia
