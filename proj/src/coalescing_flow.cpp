#include "arratia/coalescing_flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "arratia/domain.hpp"

namespace arratia {

namespace {

void require_ordered(std::span<const double> start) {
    if (start.empty()) throw std::invalid_argument("motion needs at least one particle");
    for (std::size_t k = 0; k + 1 < start.size(); ++k)
        if (!(start[k] < start[k + 1])) throw std::invalid_argument("start must be strictly increasing (point of S^n)");
}

// Copy of `src` restricted to columns [from, M] with coordinate `drop` removed (drop >= n keeps all).
SamplePath slice(const SamplePath& src, std::size_t from, std::size_t drop) {
    const TimeGrid g = src.grid().tail(from);
    std::vector<double> start;
    for (std::size_t i = 0; i < src.dimension(); ++i)
        if (i != drop) start.push_back(src.value(i, from));
    SamplePath out(g, start);
    std::size_t r = 0;
    for (std::size_t i = 0; i < src.dimension(); ++i) {
        if (i == drop) continue;
        for (std::size_t j = 0; j < out.columns(); ++j) out.value(r, j) = src.value(i, from + j);
        ++r;
    }
    if (src.has_uniforms()) {
        const std::size_t M = src.grid().steps(), Mo = g.steps();
        auto& u = out.uniforms();
        u.assign(out.dimension() * Mo, 1.0);
        r = 0;
        for (std::size_t i = 0; i < src.dimension(); ++i) {
            if (i == drop) continue;
            for (std::size_t j = 0; j < Mo; ++j) u[r * Mo + j] = src.uniforms()[i * M + from + j];
            ++r;
        }
    }
    return out;
}

// Path frozen after column `last`: later columns repeat it and bridge tests never fire.
SamplePath stopped_copy(const SamplePath& src, std::size_t last) {
    SamplePath out = src;
    const std::size_t M = src.grid().steps();
    for (std::size_t i = 0; i < out.dimension(); ++i)
        for (std::size_t j = last + 1; j <= M; ++j) out.value(i, j) = out.value(i, last);
    if (out.has_uniforms())
        for (std::size_t i = 0; i < out.dimension(); ++i)
            for (std::size_t j = last; j < M; ++j) out.uniforms()[i * M + j] = 1.0;
    return out;
}

std::vector<double> merge_pair(std::vector<double> v, std::size_t k) {
    v[k] = 0.5 * (v[k] + v[k + 1]);
    v.erase(v.begin() + static_cast<std::ptrdiff_t>(k) + 1);
    for (std::size_t i = 1; i < v.size(); ++i) v[i] = std::max(v[i], v[i - 1]);
    return v;
}

}  // namespace

double CoalescingMotion::pairwise_tau(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0;
    if (i > j) std::swap(i, j);
    if (j >= particles()) throw std::out_of_range("pairwise_tau index");
    double t = 0.0;
    for (std::size_t k = i; k < j; ++k) t = std::max(t, adjacent_tau[k]);
    return t;
}

CoalescingMotion coalesce(const SamplePath& noise, bool bridge_correction) {
    const std::size_t n = noise.dimension();
    const TimeGrid& grid = noise.grid();
    const std::size_t M = grid.steps();
    const double dt = grid.dt();
    std::vector<double> start = noise.start();
    require_ordered(start);

    CoalescingMotion m;
    m.noise = noise;
    m.paths = SamplePath(grid, start);
    m.adjacent_tau.assign(n > 0 ? n - 1 : 0, kNoCollision);

    std::vector<std::size_t> left(n);
    for (std::size_t i = 0; i < n; ++i) left[i] = i;
    std::vector<double> x = start, xs, y;

    for (std::size_t j = 0; j < M; ++j) {
        const std::size_t C = left.size();
        xs = x;
        y.resize(C);
        for (std::size_t c = 0; c < C; ++c) y[c] = x[c] + noise.increment(left[c], j);
        for (;;) {
            double best = 2.0;
            std::size_t bc = 0;
            for (std::size_t c = 0; c + 1 < left.size(); ++c) {
                const double d0 = xs[c + 1] - xs[c], d1 = y[c + 1] - y[c];
                const std::size_t slot = left[c + 1] - 1;
                double frac = -1.0;
                if (d1 <= 0.0)
                    frac = d0 / (d0 - d1);
                else if (bridge_correction && noise.has_uniforms() &&
                         noise.uniform(slot, j) < bridge_crossing_probability(d0, d1, dt, 2.0))
                    frac = 0.5;
                if (frac >= 0.0 && frac < best) {
                    best = frac;
                    bc = c;
                }
            }
            if (best > 1.0) break;
            const std::size_t slot = left[bc + 1] - 1;
            m.adjacent_tau[slot] = grid.time(j) + best * dt;
            y[bc] = 0.5 * (y[bc] + y[bc + 1]);
            xs[bc] = 0.5 * (xs[bc] + xs[bc + 1]);
            y.erase(y.begin() + static_cast<std::ptrdiff_t>(bc) + 1);
            xs.erase(xs.begin() + static_cast<std::ptrdiff_t>(bc) + 1);
            left.erase(left.begin() + static_cast<std::ptrdiff_t>(bc) + 1);
        }
        x = y;
        for (std::size_t c = 0; c < left.size(); ++c) {
            const std::size_t hi = c + 1 < left.size() ? left[c + 1] : n;
            for (std::size_t i = left[c]; i < hi; ++i) m.paths.value(i, j + 1) = x[c];
        }
    }
    return m;
}

CoalescingMotion simulate_npoint(std::span<const double> start, const TimeGrid& grid, PathRng& rng,
                                 bool bridge_correction) {
    require_ordered(start);
    return coalesce(sample_brownian(start, grid, rng), bridge_correction);
}

CoalescingMotion simulate_npoint(std::span<const double> start, const TimeGrid& grid, const SeedLedger& seed,
                                 std::uint64_t path_index, bool bridge_correction) {
    PathRng rng(seed, path_index);
    return simulate_npoint(start, grid, rng, bridge_correction);
}

FirstCollision first_collision(const CoalescingMotion& motion) {
    FirstCollision fc;
    if (motion.adjacent_tau.empty()) return fc;
    auto it = std::min_element(motion.adjacent_tau.begin(), motion.adjacent_tau.end());
    if (*it == kNoCollision) return fc;
    const std::size_t k = static_cast<std::size_t>(it - motion.adjacent_tau.begin());
    const TimeGrid& g = motion.paths.grid();
    fc.time = *it;
    fc.colliding_pair = k;
    std::size_t step = g.index_at_or_before(fc.time);
    if (step >= g.steps()) step = g.steps() - 1;
    if (step > 0 && g.time(step) >= fc.time) --step;
    fc.step = step;
    std::vector<double> col = motion.paths.at(step + 1);
    col.erase(col.begin() + static_cast<std::ptrdiff_t>(k) + 1);
    fc.reduced_start = std::move(col);
    return fc;
}

std::optional<CollisionSplit> split_at_collision(const CoalescingMotion& motion) {
    FirstCollision fc = first_collision(motion);
    if (!fc.finite()) return std::nullopt;
    const std::size_t k = fc.step;
    const std::size_t drop = *fc.colliding_pair + 1;
    CollisionSplit s;
    s.pre_path = stopped_copy(motion.noise, k + 1);
    s.collision = fc;
    CoalescingMotion& post = s.post_motion;
    post.noise = slice(motion.noise, k + 1, drop);
    post.paths = slice(motion.paths, k + 1, drop);
    const std::size_t n1 = post.paths.dimension();
    post.adjacent_tau.assign(n1 > 0 ? n1 - 1 : 0, kNoCollision);
    const double offset = motion.paths.grid().time(k + 1);
    auto orig = [&](std::size_t r) { return r < drop ? r : r + 1; };
    for (std::size_t r = 0; r + 1 < n1; ++r) {
        const double t = motion.pairwise_tau(orig(r), orig(r + 1));
        post.adjacent_tau[r] = t == kNoCollision ? kNoCollision : std::max(0.0, t - offset);
    }
    return s;
}

// ---------------------------------------------------------------------------

bool StagedMotion::complete() const {
    if (stages.empty() || stages.back().particles() != 1) return false;
    for (std::size_t s = 0; s + 1 < stages.size(); ++s)
        if (stages[s].truncated || stages[s].tau == kNoCollision) return false;
    return true;
}

MotionStage simulate_stage(std::span<const double> start_span, const StageOptions& opts, PathRng& rng) {
    const std::vector<double> start(start_span.begin(), start_span.end());
    const std::size_t n = start.size();
    const TimeGrid& grid = opts.grid;
    const std::size_t M = grid.steps();
    const double dt = grid.dt();
    MotionStage st;
    if (n == 1) {
        st.path = sample_brownian(start, grid, rng);
        return st;
    }
    st.path = SamplePath(grid, start);
    auto& uni = st.path.uniforms();
    uni.assign(n * M, 1.0);
    const Domain dom = Domain::weyl_chamber(n);

    for (std::size_t k = 0; k + 1 < n; ++k) {
        if (!(start[k] < start[k + 1])) {
            st.tau = 0.0;
            st.colliding_pair = k;
            st.next_start = merge_pair(start, k);
            return st;
        }
    }

    std::vector<double> x0(start), x1(n), u(n);
    const double sd = std::sqrt(dt);
    for (std::size_t j = 0; j < M; ++j) {
        for (std::size_t i = 0; i < n; ++i) x1[i] = x0[i] + sd * rng.normal();
        for (std::size_t i = 0; i + 1 < n; ++i) u[i] = rng.uniform();
        for (std::size_t i = 0; i < n; ++i) st.path.value(i, j + 1) = x1[i];
        for (std::size_t i = 0; i + 1 < n; ++i) uni[i * M + j] = u[i];
        auto ex = dom.step_exit(x0, x1, dt, opts.bridge_correction, [&](std::size_t s) { return u[s]; });
        if (ex) {
            st.tau = grid.time(j) + ex->fraction * dt;
            st.colliding_pair = ex->slot;
            st.next_start = merge_pair(x1, ex->slot);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t jj = j + 2; jj <= M; ++jj) st.path.value(i, jj) = x1[i];
            return st;
        }
        std::swap(x0, x1);
    }
    if (!opts.extend_tail) return st;

    double t = grid.horizon();
    const double limit = grid.horizon() + opts.tail_cap;
    while (t < limit) {
        const double g = dom.boundary_distance(x0);
        const double h = std::min(std::max(dt, opts.tail_step_factor * g * g), limit - t);
        const double s = std::sqrt(h);
        for (std::size_t i = 0; i < n; ++i) x1[i] = x0[i] + s * rng.normal();
        for (std::size_t i = 0; i + 1 < n; ++i) u[i] = rng.uniform();
        auto ex = dom.step_exit(x0, x1, h, opts.bridge_correction, [&](std::size_t sl) { return u[sl]; });
        if (ex) {
            st.tau = t + ex->fraction * h;
            st.colliding_pair = ex->slot;
            st.next_start = merge_pair(x1, ex->slot);
            return st;
        }
        t += h;
        std::swap(x0, x1);
    }
    st.truncated = true;
    return st;
}

StagedMotion simulate_staged(std::span<const double> start, const StageOptions& opts, const SeedLedger& seed,
                             std::uint64_t path_index) {
    require_ordered(start);
    if (opts.grid.steps() == 0) throw std::invalid_argument("stage grid needs at least one step");
    StagedMotion sm;
    std::vector<double> cur(start.begin(), start.end());
    for (std::uint64_t s = 0;; ++s) {
        PathRng rng(seed, path_index, s + 1);
        MotionStage st = simulate_stage(cur, opts, rng);
        const bool last = st.particles() == 1;
        const bool stop = last || st.truncated || st.tau == kNoCollision;
        cur = st.next_start;
        sm.stages.push_back(std::move(st));
        if (stop) break;
    }
    return sm;
}

StagedMotion stages_from_motion(const CoalescingMotion& motion) {
    StagedMotion sm;
    CoalescingMotion cur = motion;
    for (;;) {
        MotionStage st;
        if (cur.particles() == 1) {
            st.path = cur.noise;
            sm.stages.push_back(std::move(st));
            break;
        }
        auto split = split_at_collision(cur);
        if (!split) {
            st.path = cur.noise;
            st.truncated = true;
            sm.stages.push_back(std::move(st));
            break;
        }
        st.path = std::move(split->pre_path);
        st.tau = split->collision.time;
        st.colliding_pair = *split->collision.colliding_pair;
        st.next_start = *split->collision.reduced_start;
        sm.stages.push_back(std::move(st));
        cur = std::move(split->post_motion);
    }
    return sm;
}

// ---------------------------------------------------------------------------

namespace {

template <class T>
void put(std::ofstream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::ifstream& is) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw std::runtime_error("truncated path dump");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

}  // namespace

void write_path_dump(const std::string& file, const std::vector<SamplePath>& paths, const SeedLedger& seed) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + file);
    const std::size_t n = paths.empty() ? 0 : paths.front().dimension();
    const TimeGrid g = paths.empty() ? TimeGrid{} : paths.front().grid();
    os.write("ARPD", 4);
    put<std::uint32_t>(os, 1);
    put<std::uint64_t>(os, n);
    put<std::uint64_t>(os, g.steps());
    put<double>(os, g.horizon());
    put<std::uint64_t>(os, seed.master_seed);
    put<std::uint64_t>(os, seed.stream_id);
    put<std::uint64_t>(os, paths.size());
    for (const auto& p : paths) {
        if (p.dimension() != n || p.grid().steps() != g.steps()) throw std::invalid_argument("mixed path shapes in dump");
        for (double v : p.raw()) put<double>(os, v);
    }
}

PathDump read_path_dump(const std::string& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + file);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ARPD", 4) != 0) throw std::runtime_error("not a path dump: " + file);
    if (get<std::uint32_t>(is) != 1) throw std::runtime_error("unsupported path dump version");
    PathDump d;
    d.n = get<std::uint64_t>(is);
    const auto M = get<std::uint64_t>(is);
    const double T = get<double>(is);
    d.seed.master_seed = get<std::uint64_t>(is);
    d.seed.stream_id = get<std::uint64_t>(is);
    const auto count = get<std::uint64_t>(is);
    if (M > 0) d.grid = make_grid(T, M);
    d.values.resize(count);
    for (auto& v : d.values) {
        v.resize(d.n * (M + 1));
        for (auto& x : v) x = get<double>(is);
    }
    return d;
}

}  // namespace arratia
