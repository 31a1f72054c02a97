#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arratia/rng_paths.hpp"

namespace arratia {

inline constexpr double kNoCollision = std::numeric_limits<double>::infinity();

/// n-point motion of the coalescing flow on one grid.
/// `noise` holds the independent drivers; merged particles follow the driver of their leftmost member.
struct CoalescingMotion {
    SamplePath noise;
    SamplePath paths;
    std::vector<double> adjacent_tau;  // adjacent_tau[k] = meeting time of coordinates k, k+1

    std::size_t particles() const { return paths.dimension(); }
    /// Meeting time of coordinates i and j (0-based), +inf if they have not met.
    double pairwise_tau(std::size_t i, std::size_t j) const;
};

struct FirstCollision {
    double time = kNoCollision;
    std::optional<std::vector<double>> reduced_start;
    std::optional<std::size_t> colliding_pair;  // 0-based left index k of the pair (k, k+1)
    std::size_t step = 0;                       // grid cell [t_step, t_step+1) containing time

    bool finite() const { return time != kNoCollision; }
};

CoalescingMotion simulate_npoint(std::span<const double> start, const TimeGrid& grid, PathRng& rng,
                                 bool bridge_correction = true);
CoalescingMotion simulate_npoint(std::span<const double> start, const TimeGrid& grid, const SeedLedger& seed,
                                 std::uint64_t path_index = 0, bool bridge_correction = true);
/// Coalescing motion driven by a given independent noise path (its uniforms drive the bridge tests).
CoalescingMotion coalesce(const SamplePath& noise, bool bridge_correction = true);

FirstCollision first_collision(const CoalescingMotion& motion);

struct CollisionSplit {
    SamplePath pre_path;         // stopped after the collision cell, frozen afterwards
    CoalescingMotion post_motion;  // n-1 coordinates on the grid tail
    FirstCollision collision;
};

/// Split at the first collision; nullopt when no collision occurred on the grid.
std::optional<CollisionSplit> split_at_collision(const CoalescingMotion& motion);

// ---------------------------------------------------------------------------
// Staged motion: each coalescence stage on its own grid and noise.

struct StageOptions {
    TimeGrid grid;                 // per-stage fine grid on the local clock
    bool bridge_correction = true;
    bool extend_tail = true;       // keep stepping past the grid until the stage collides
    double tail_step_factor = 0.05;  // tail step = max(dt, factor * min_gap^2)
    double tail_cap = 1e6;         // local time cap for the tail
};

struct MotionStage {
    SamplePath path;                 // grid path, frozen after the collision cell
    double tau = kNoCollision;       // local collision time (may exceed the grid horizon)
    std::size_t colliding_pair = 0;
    std::vector<double> next_start;  // start of the next stage
    bool truncated = false;          // tail cap reached without collision

    std::size_t particles() const { return path.dimension(); }
};

/// stages[0] has n particles, stages.back() has one.
struct StagedMotion {
    std::vector<MotionStage> stages;

    bool complete() const;
    std::size_t particles() const { return stages.empty() ? 0 : stages.front().particles(); }
    /// Stage carrying m particles.
    const MotionStage& stage_with(std::size_t m) const { return stages.at(particles() - m); }
};

/// One stage from `start` until its first collision (or the tail cap).
MotionStage simulate_stage(std::span<const double> start, const StageOptions& opts, PathRng& rng);

StagedMotion simulate_staged(std::span<const double> start, const StageOptions& opts, const SeedLedger& seed,
                             std::uint64_t path_index);
/// Stages obtained by repeated splitting of a single-grid motion; stages without a collision are truncated.
StagedMotion stages_from_motion(const CoalescingMotion& motion);

// ---------------------------------------------------------------------------
// Binary dump: magic "ARPD", u32 version, u64 n, u64 M, f64 T, u64 master_seed, u64 stream_id,
// u64 count, then count blocks of n*(M+1) little-endian doubles, coordinate-major.

void write_path_dump(const std::string& file, const std::vector<SamplePath>& paths, const SeedLedger& seed);
struct PathDump {
    std::size_t n = 0;
    TimeGrid grid;
    SeedLedger seed;
    std::vector<std::vector<double>> values;
};
PathDump read_path_dump(const std::string& file);

}  // namespace arratia
