#include "arratia/girsanov.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace arratia {

std::size_t XiSolution::live_steps() const { return xi.grid().count_before(lifetime); }

XiSolution solve_xi(const SamplePath& omega, const DriftField& drift, const Domain& domain, bool bridge) {
    const std::size_t n = omega.dimension();
    if (n != domain.dimension()) throw std::invalid_argument("path dimension does not match the domain");
    const TimeGrid& grid = omega.grid();
    const std::size_t M = grid.steps();
    const double dt = grid.dt();
    XiSolution s;
    std::vector<double> x0 = omega.start(), x1(n), al(n, 0.0);
    s.xi = SamplePath(grid, x0);
    // xi sees the same bridge draws, so an exit test on xi alone reproduces the lifetime
    s.xi.uniforms() = omega.uniforms();
    if (!domain.contains(x0)) {
        s.lifetime = 0.0;
        return s;
    }
    const bool use_bridge = bridge && omega.has_uniforms();
    for (std::size_t j = 0; j < M; ++j) {
        if (!drift.is_zero()) drift(x0, al);
        for (std::size_t i = 0; i < n; ++i) {
            x1[i] = x0[i] + omega.increment(i, j) + al[i] * dt;
            s.xi.value(i, j + 1) = x1[i];
        }
        auto ex = domain.step_exit(x0, x1, dt, use_bridge, [&](std::size_t slot) { return omega.uniform(slot, j); });
        if (ex) {
            s.lifetime = grid.time(j) + ex->fraction * dt;
            s.exit_step = j;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t jj = j + 2; jj <= M; ++jj) s.xi.value(i, jj) = x1[i];
            return s;
        }
        std::swap(x0, x1);
    }
    return s;
}

namespace {

// Capped gradient of log alpha; returns true when any component hit the cap.
bool capped_gradient(const SurvivalField& field, double t, std::span<const double> x, std::span<double> g) {
    std::vector<double> v = grad_log_alpha(field, t, x);
    bool capped = false;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (std::abs(v[i]) > kDriftCap) {
            v[i] = std::copysign(kDriftCap, v[i]);
            capped = true;
        }
        g[i] = v[i];
    }
    return capped;
}

}  // namespace

TransformedPath phi_transform(double t, const SamplePath& omega, const XiSolution& xi, const SurvivalField& field) {
    if (!(xi.lifetime > t)) throw std::invalid_argument("phi_transform needs lifetime > t");
    const std::size_t n = omega.dimension();
    const TimeGrid& grid = omega.grid();
    const std::size_t M = grid.steps();
    const double dt = grid.dt();
    TransformedPath out;
    out.anchor = t;
    out.valid = true;
    out.path = omega;
    std::vector<double> c(n, 0.0), g(n), x(n);
    for (std::size_t j = 0; j < M; ++j) {
        const double tj = grid.time(j);
        if (!(tj < t)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t jj = j + 1; jj <= M; ++jj) out.path.value(i, jj) = omega.value(i, jj) - c[i];
            return out;
        }
        for (std::size_t i = 0; i < n; ++i) x[i] = xi.xi.value(i, j);
        if (capped_gradient(field, t - tj, x, g)) ++out.capped_steps;
        ++out.corrected_steps;
        for (std::size_t i = 0; i < n; ++i) {
            out.max_drift = std::max(out.max_drift, std::abs(g[i]));
            c[i] += g[i] * dt;
            out.path.value(i, j + 1) = omega.value(i, j + 1) - c[i];
        }
    }
    return out;
}

TransformedPath phi_transform(double t, const SamplePath& omega, const SurvivalField& field, const DriftField& drift,
                              bool bridge) {
    XiSolution xi = solve_xi(omega, drift, field.domain(), bridge);
    return phi_transform(t, omega, xi, field);
}

SamplePath psi_inverse(double t, const SamplePath& eta, const SurvivalField& field, const DriftField& drift) {
    const std::size_t n = eta.dimension();
    const TimeGrid& grid = eta.grid();
    const std::size_t M = grid.steps();
    const double dt = grid.dt();
    const Domain& dom = field.domain();
    SamplePath omega = eta;
    std::vector<double> xi = eta.start(), c(n, 0.0), g(n), al(n, 0.0);
    auto fail = [&](std::size_t j, const std::string& why) {
        std::ostringstream os;
        os << "path outside the image of phi: " << why << " at step " << j;
        throw NotInRangeError(os.str());
    };
    for (std::size_t j = 0; j < M; ++j) {
        const double tj = grid.time(j);
        if (!(tj < t)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t jj = j + 1; jj <= M; ++jj) omega.value(i, jj) = eta.value(i, jj) + c[i];
            break;
        }
        if (!dom.contains(xi)) fail(j, "xi left the domain");
        try {
            capped_gradient(field, t - tj, xi, g);
        } catch (const SingularityError& e) {
            fail(j, e.what());
        }
        if (!drift.is_zero()) drift(xi, al);
        for (std::size_t i = 0; i < n; ++i) {
            xi[i] += eta.increment(i, j) + (al[i] + g[i]) * dt;
            c[i] += g[i] * dt;
            omega.value(i, j + 1) = eta.value(i, j + 1) + c[i];
        }
        if (grid.time(j + 1) <= t && !dom.contains(xi)) fail(j + 1, "xi left the domain");
    }
    return omega;
}

SamplePath g_transform(const SamplePath& omega, const DriftField& drift, const Domain& domain, double* lifetime) {
    const XiSolution life = solve_xi(omega, DriftField::zero(omega.dimension()), domain);
    if (lifetime) *lifetime = life.lifetime;
    const std::size_t n = omega.dimension();
    const TimeGrid& grid = omega.grid();
    const std::size_t M = grid.steps();
    const double dt = grid.dt();
    const std::size_t live = life.live_steps();
    SamplePath out(grid, omega.start());
    std::vector<double> x(n), al(n, 0.0), c(n, 0.0);
    for (std::size_t j = 0; j < M; ++j) {
        if (j < live) {
            for (std::size_t i = 0; i < n; ++i) x[i] = omega.value(i, j);
            if (!drift.is_zero()) {
                drift(x, al);
                for (std::size_t i = 0; i < n; ++i)
                    if (!std::isfinite(al[i])) {
                        std::ostringstream os;
                        os << "drift singular along the path at step " << j;
                        throw SingularityError(os.str());
                    }
            }
            for (std::size_t i = 0; i < n; ++i) {
                c[i] += al[i] * dt;
                out.value(i, j + 1) = omega.value(i, j + 1) - c[i];
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) out.value(i, j + 1) = out.value(i, j);
        }
    }
    return out;
}

double ConditionedBatch::acceptance_stderr() const {
    if (attempts == 0) return 0.0;
    const double p = acceptance();
    return std::sqrt(p * (1.0 - p) / static_cast<double>(attempts));
}

ConditionedBatch sample_conditioned(std::span<const double> u, double t, const DriftField& drift,
                                    const Domain& domain, const TimeGrid& grid, std::size_t N,
                                    const SeedLedger& seed, double min_acceptance) {
    if (t > grid.horizon()) throw std::invalid_argument("conditioning time beyond the grid horizon");
    ConditionedBatch b;
    const auto cap = static_cast<std::size_t>(static_cast<double>(N) / min_acceptance) + 1000;
    while (b.paths.size() < N) {
        SamplePath w = sample_brownian(u, grid, seed, b.attempts);
        ++b.attempts;
        if (solve_xi(w, drift, domain).alive_at(t)) b.paths.push_back(std::move(w));
        if ((b.attempts >= 1000 && b.acceptance() < min_acceptance) || b.attempts > cap)
            throw std::runtime_error(
                "rejection acceptance below budget threshold; conditioned sampling by h-transform is not implemented");
    }
    return b;
}

}  // namespace arratia
