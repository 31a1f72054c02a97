#include "arratia/rho_weights.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "arratia/cache.hpp"
#include "arratia/girsanov.hpp"

namespace arratia {

namespace {

const double kSqrt23 = std::sqrt(2.0 / 3.0);
const double kInvSqrt2 = 1.0 / std::numbers::sqrt2;
const std::array<double, 3> kEx{-2.0 / std::sqrt(6.0), 1.0 / std::sqrt(6.0), 1.0 / std::sqrt(6.0)};
const std::array<double, 3> kEy{0.0, -kInvSqrt2, kInvSqrt2};

// Poisson integrals of E(y) = erfc(c |y|^{1/3}) on the line against the kernel at zeta = a + ib,
// after y = a + b tan(theta). Returns int E P, int E dP/da, int E dP/db.
// Breakpoints: geometric ladders towards y = 0 (cusp of E) and around the peak y = a (scale b);
// pieces touching y = 0 use theta = end + L v^3, which smooths the |y|^{1/3} cusp.
std::array<double, 3> wedge_integrals(double c, double a, double b, bool with_gradient) {
    static const QuadratureRule rule = gauss_legendre(16, 0.0, 1.0);
    const double Y = std::pow(6.5 / c, 3);  // E < 1e-20 beyond |y| = Y
    std::vector<double> ys{-Y, 0.0, Y};
    for (double r = Y / 8; r > 1e-12 * Y; r /= 8) {
        ys.push_back(r);
        ys.push_back(-r);
    }
    for (double r = b; r < 4 * Y; r *= 8) {
        ys.push_back(a - r);
        ys.push_back(a + r);
    }
    ys.push_back(a);
    std::sort(ys.begin(), ys.end());
    std::array<double, 3> out{};
    auto piece = [&](double y0, double y1) {
        const double t0 = std::atan((y0 - a) / b), t1 = std::atan((y1 - a) / b);
        // grade towards the end at y = 0 when there is one
        const bool at0 = y0 == 0.0, at1 = y1 == 0.0;
        const double base = at1 ? t1 : t0, L = at1 ? t0 - t1 : t1 - t0;
        for (std::size_t q = 0; q < rule.x.size(); ++q) {
            const double v = rule.x[q];
            double th, w;
            if (at0 || at1) {
                th = base + L * v * v * v;
                w = rule.w[q] * 3.0 * std::abs(L) * v * v;
            } else {
                th = base + L * v;
                w = rule.w[q] * std::abs(L);
            }
            const double e = std::erfc(c * std::cbrt(std::abs(a + b * std::tan(th)))) * w;
            out[0] += e;
            if (with_gradient) {
                out[1] += e * std::sin(2 * th) / b;
                out[2] -= e * std::cos(2 * th) / b;
            }
        }
    };
    for (std::size_t k = 0; k + 1 < ys.size(); ++k) {
        const double y0 = std::max(ys[k], -Y), y1 = std::min(ys[k + 1], Y);
        if (y1 > y0) piece(y0, y1);
    }
    for (double& o : out) o /= std::numbers::pi;
    return out;
}

double erf_gap(double g, double s) { return std::erf(g / (2.0 * std::sqrt(s))); }

}  // namespace

BetaValue beta3_harmonic(double s, std::span<const double> u, bool with_gradient) {
    if (u.size() != 3) throw std::invalid_argument("beta3_harmonic needs three particles");
    BetaValue r;
    if (s <= 0.0) return r;
    double g1 = u[1] - u[0], g2 = u[2] - u[1];
    if (g1 < 0.0 || g2 < 0.0) throw std::invalid_argument("beta3_harmonic needs u in the closed chamber");
    if (g1 == 0.0 || g2 == 0.0) {
        r.value = erf_gap(g1 + g2, s);
        if (!with_gradient) return r;
        // gradient from a point just inside the chamber
        const double eps = 1e-7 * (1.0 + g1 + g2);
        const std::array<double, 3> v{0.0, std::max(g1, eps), std::max(g1, eps) + std::max(g2, eps)};
        r.grad = beta3_harmonic(s, v, true).grad;
        return r;
    }
    const double c = std::sqrt(1.5) / (2.0 * std::sqrt(s));
    const std::complex<double> z(kSqrt23 * (g1 + 0.5 * g2), g2 * kInvSqrt2);
    const std::complex<double> zeta = z * z * z;
    const double a = zeta.real(), b = zeta.imag();
    const auto I = wedge_integrals(c, a, b, with_gradient);
    r.value = std::clamp(1.0 - I[0], 0.0, 1.0);
    if (!with_gradient) return r;
    const double ba = -I[1], bb = -I[2];
    const std::complex<double> D = std::complex<double>(ba, -bb) * 3.0 * z * z;
    const double bx = D.real(), by = -D.imag();
    for (std::size_t k = 0; k < 3; ++k) r.grad[k] = bx * kEx[k] + by * kEy[k];
    return r;
}

McEstimate beta_monte_carlo(double s, std::span<const double> u, std::size_t N, const SeedLedger& seed,
                            const StageOptions& stage) {
    if (u.size() != 3) throw std::invalid_argument("beta_monte_carlo needs three particles");
    if (N == 0) throw std::invalid_argument("beta_monte_carlo needs N >= 1");
    McEstimate e;
    e.samples = N;
    if (s <= 0.0) {
        e.value = 1.0;
        return e;
    }
    StageOptions opt = stage;
    if (opt.grid.steps() == 0) opt.grid = make_grid(1e-3, 1);
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t p = 0; p < N; ++p) {
        PathRng rng(seed, p, 1);
        MotionStage st = simulate_stage(u, opt, rng);
        // truncated paths are far apart after the tail cap; their weight is 1 to double precision
        const double v = st.truncated ? 1.0 : erf_gap(st.next_start[1] - st.next_start[0], s);
        sum += v;
        sum2 += v * v;
    }
    const double n = static_cast<double>(N);
    e.value = sum / n;
    e.stderr_ = N > 1 ? std::sqrt(std::max(sum2 / n - e.value * e.value, 0.0) / (n - 1.0)) : 0.0;
    return e;
}

// ---------------------------------------------------------------------------

namespace {

double bilinear(const std::vector<double>& f, std::size_t N, double h, double g1, double g2) {
    const double ext = h * static_cast<double>(N - 1);
    const double s1 = std::clamp(g1, 0.0, ext) / h, s2 = std::clamp(g2, 0.0, ext) / h;
    auto i1 = std::min(static_cast<std::size_t>(s1), N - 2), i2 = std::min(static_cast<std::size_t>(s2), N - 2);
    const double f1 = s1 - static_cast<double>(i1), f2 = s2 - static_cast<double>(i2);
    const std::size_t o = i1 * N + i2;
    return (1 - f1) * (1 - f2) * f[o] + (1 - f1) * f2 * f[o + 1] + f1 * (1 - f2) * f[o + N] + f1 * f2 * f[o + N + 1];
}

std::size_t table_nodes(double h, double extent) {
    if (!(h > 0.0) || !(extent > 2.0 * h)) throw std::invalid_argument("invalid beta table mesh");
    return static_cast<std::size_t>(std::llround(extent / h)) + 1;
}

// Second-order differences along one axis: central inside, one-sided at the ends.
double axis_diff(double h, std::size_t k, std::size_t N, const std::function<double(std::size_t)>& f) {
    if (k == 0) return (-3 * f(0) + 4 * f(1) - f(2)) / (2 * h);
    if (k == N - 1) return (3 * f(k) - 4 * f(k - 1) + f(k - 2)) / (2 * h);
    return (f(k + 1) - f(k - 1)) / (2 * h);
}

void fill_fd(BetaTable& t) {
    const std::size_t N = t.nodes;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t o = i * N + j;
            t.d1[o] = axis_diff(t.h, i, N, [&](std::size_t k) { return t.value[k * N + j]; });
            t.d2[o] = axis_diff(t.h, j, N, [&](std::size_t k) { return t.value[i * N + k]; });
        }
}

}  // namespace

double BetaTable::beta(std::span<const double> g) const { return bilinear(value, nodes, h, g[0], g[1]); }

void BetaTable::grad_log_u(std::span<const double> u, std::span<double> out) const {
    const double g1 = u[1] - u[0], g2 = u[2] - u[1];
    const double b = bilinear(value, nodes, h, g1, g2);
    if (!(b >= kAlphaFloor)) {
        std::ostringstream os;
        os << "beta below floor at gaps (" << g1 << "," << g2 << ")";
        throw SingularityError(os.str());
    }
    const double a1 = bilinear(d1, nodes, h, g1, g2), a2 = bilinear(d2, nodes, h, g1, g2);
    out[0] = -a1 / b;
    out[1] = (a1 - a2) / b;
    out[2] = a2 / b;
}

double BetaTable::max_stderr() const {
    double m = 0.0;
    for (double v : stderr_) m = std::max(m, v);
    return m;
}

BetaTable beta_table_harmonic(double s, double h, double extent) {
    if (!(s > 0.0)) throw std::invalid_argument("beta table needs s > 0");
    BetaTable t;
    t.s = s;
    t.h = h;
    t.nodes = table_nodes(h, extent);
    const std::size_t N = t.nodes;
    t.value.assign(N * N, 0.0);
    t.d1.assign(N * N, 0.0);
    t.d2.assign(N * N, 0.0);
    t.stderr_.assign(N * N, 0.0);
    const double gs = 1.0 / std::sqrt(std::numbers::pi * s);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            const double g1 = h * static_cast<double>(i), g2 = h * static_cast<double>(j);
            const std::size_t o = i * N + j;
            if (i == 0 || j == 0) {
                t.value[o] = erf_gap(g1 + g2, s);
                continue;
            }
            const std::array<double, 3> u{0.0, g1, g1 + g2};
            BetaValue b = beta3_harmonic(s, u, true);
            t.value[o] = b.value;
            // d/dg1 = -(d/du1), d/dg2 = d/du3 for the gap parametrization with u1 fixed
            t.d1[o] = b.grad[1] + b.grad[2];
            t.d2[o] = b.grad[2];
        }
    // walls: tangential derivative exact, normal derivative one-sided second order
    auto f = [&](std::size_t i, std::size_t j) { return t.value[i * N + j]; };
    for (std::size_t j = 0; j < N; ++j) {
        const double g2 = h * static_cast<double>(j);
        const std::size_t o = j;  // i = 0
        t.d1[o] = (-3 * f(0, j) + 4 * f(1, j) - f(2, j)) / (2 * h);
        t.d2[o] = j == 0 ? (-3 * f(0, 0) + 4 * f(0, 1) - f(0, 2)) / (2 * h) : gs * std::exp(-g2 * g2 / (4 * s));
    }
    for (std::size_t i = 1; i < N; ++i) {
        const double g1 = h * static_cast<double>(i);
        const std::size_t o = i * N;  // j = 0
        t.d2[o] = (-3 * f(i, 0) + 4 * f(i, 1) - f(i, 2)) / (2 * h);
        t.d1[o] = gs * std::exp(-g1 * g1 / (4 * s));
    }
    return t;
}

BetaTable beta_table_mc(double s, double h, double extent, std::size_t N, const SeedLedger& seed,
                        const StageOptions& stage) {
    if (!(s > 0.0)) throw std::invalid_argument("beta table needs s > 0");
    BetaTable t;
    t.s = s;
    t.h = h;
    t.nodes = table_nodes(h, extent);
    const std::size_t K = t.nodes;
    t.value.assign(K * K, 0.0);
    t.d1.assign(K * K, 0.0);
    t.d2.assign(K * K, 0.0);
    t.stderr_.assign(K * K, 0.0);
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
            const double g1 = h * static_cast<double>(i), g2 = h * static_cast<double>(j);
            const std::size_t o = i * K + j;
            if (i == 0 || j == 0) {
                t.value[o] = erf_gap(g1 + g2, s);
                continue;
            }
            const std::array<double, 3> u{0.0, g1, g1 + g2};
            // same seed at every node: common random numbers across the stencil
            McEstimate e = beta_monte_carlo(s, u, N, seed, stage);
            t.value[o] = e.value;
            t.stderr_[o] = e.stderr_;
        }
    fill_fd(t);
    return t;
}

DriftField aleph_field(std::shared_ptr<const BetaTable> table) {
    std::ostringstream os;
    os.precision(17);
    os << "grad-log-beta(s=" << table->s << ",h=" << table->h << ",nodes=" << table->nodes << ")";
    return DriftField(
        3, [table](std::span<const double> u, std::span<double> out) { table->grad_log_u(u, out); }, true, os.str());
}

// ---------------------------------------------------------------------------

RhoWeights::RhoWeights(std::vector<double> u) : u_(std::move(u)) {
    if (u_.empty() || u_.size() > 2) throw std::invalid_argument("closed-form weights cover n <= 2; use RhoOptions for n = 3");
    for (std::size_t k = 0; k + 1 < u_.size(); ++k)
        if (!(u_[k] < u_[k + 1])) throw std::invalid_argument("weights need u in S^n");
}

RhoWeights::RhoWeights(std::vector<double> u, const RhoOptions& opts) : u_(std::move(u)), opts_(opts) {
    if (u_.size() != 3) throw std::invalid_argument("tabulated weights are implemented for n = 3");
    if (!(u_[0] < u_[1] && u_[1] < u_[2])) throw std::invalid_argument("weights need u in S^3");
    if (!(opts.s_lo > 0.0) || !(opts.s_hi >= opts.s_lo)) throw std::invalid_argument("stage-2 time range must be positive");
    nodes_ = ChebyshevInterpolant(opts.s_lo, opts.s_hi, opts.s_nodes);
    const Domain S3 = Domain::weyl_chamber(3);
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
        const double s = nodes_.nodes()[k];
        std::shared_ptr<const BetaTable> table;
        double bu = 0.0, bse = 0.0;
        const SeedLedger sub = opts.seed.substream(k);
        const bool harmonic = opts.backend == BetaBackend::Harmonic;
        const nlohmann::json key = beta_table_key(harmonic ? "beta-harmonic" : "beta-mc", s, opts.table_h,
                                                  opts.table_extent, harmonic ? nullptr : &sub, opts.mc_paths);
        if (!opts.cache_dir.empty())
            if (auto hit = cache_load(opts.cache_dir, key))
                table = std::make_shared<BetaTable>(unpack_beta_table(hit->header, hit->data));
        const bool miss = !opts.cache_dir.empty() && !table;
        if (harmonic) {
            if (!table) table = std::make_shared<BetaTable>(beta_table_harmonic(s, opts.table_h, opts.table_extent));
            bu = beta3_harmonic(s, u_, false).value;
        } else {
            if (!table)
                table = std::make_shared<BetaTable>(
                    beta_table_mc(s, opts.table_h, opts.table_extent, opts.mc_paths, sub, opts.stage));
            McEstimate e = beta_monte_carlo(s, u_, opts.mc_paths, sub, opts.stage);
            bu = e.value;
            bse = e.stderr_;
            if (e.stderr_ > 0.01 * e.value) {
                std::ostringstream os;
                os << "beta at s=" << s << " has relative stderr " << e.stderr_ / e.value << "; increase mc_paths";
                warnings_.push_back(os.str());
            }
        }
        if (miss) {
            cache_store(opts.cache_dir, key, {{"nodes", table->nodes}, {"stderr_max", table->max_stderr()}}, pack(*table));
            warnings_.push_back("field cache miss (" + cache_file(opts.cache_dir, key) + "); built on the fly");
        }
        tables_.push_back(table);
        alephs_.push_back(aleph_field(table));
        std::string note;
        fields_.push_back(cached_alpha_pde(opts.cache_dir, alephs_.back(), S3, opts.pde, &note));
        if (!note.empty()) warnings_.push_back(note);
        beta_at_u_.push_back(bu);
        beta_se_at_u_.push_back(bse);
    }
}

double RhoWeights::rho(double s2) const {
    if (s2 <= 0.0 || u_.size() == 1) return 1.0;
    if (u_.size() == 2) return alpha_s2_closed(s2, u_);
    if (opts_.backend == BetaBackend::Harmonic) return beta3_harmonic(s2, u_, false).value;
    return nodes_(s2, beta_at_u_);
}

double RhoWeights::rho(double s2, double s3) const {
    if (u_.size() < 3) {
        if (s3 > 0.0) throw std::invalid_argument("two stage times need n = 3");
        return rho(s2);
    }
    if (s3 <= 0.0) return rho(s2);
    if (s2 <= 0.0) return alpha_chamber_closed(s3, u_);
    if (s2 < opts_.s_lo * (1 - 1e-12) || s2 > opts_.s_hi * (1 + 1e-12))
        throw std::out_of_range("stage-2 time outside the tabulated range");
    std::vector<double> v(nodes_.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = beta_at_u_[k] * fields_[k]->alpha(s3, u_);
    return nodes_(s2, v);
}

double RhoWeights::rho_driftless(double s2, double s3) const {
    if (u_.size() < 3 || s2 <= 0.0 || s3 <= 0.0) return rho(s2, s3);
    if (driftless_.empty()) {
        const Domain S3 = Domain::weyl_chamber(3);
        for (const auto& t : tables_) {
            auto tb = t;
            driftless_.push_back(
                solve_gap_pde(DriftField::zero(3), S3, opts_.pde, [tb](std::span<const double> g) { return tb->beta(g); }));
        }
    }
    std::vector<double> v(nodes_.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = driftless_[k]->alpha(s3, u_);
    return nodes_(s2, v);
}

double RhoWeights::rho_stderr(double s2, double s3) const {
    if (u_.size() < 3 || s2 <= 0.0 || opts_.backend == BetaBackend::Harmonic) return 0.0;
    std::vector<double> w;
    nodes_.weights(s2, w);
    double var = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double a = s3 > 0.0 ? fields_[k]->alpha(s3, u_) : 1.0;
        var += w[k] * w[k] * beta_se_at_u_[k] * beta_se_at_u_[k] * a * a;
    }
    return std::sqrt(var);
}

RhoEstimate rho_beta_recursion(const std::vector<double>& times, std::span<const double> u, std::size_t N,
                               const SeedLedger& seed) {
    const std::size_t n = u.size();
    for (double t : times)
        if (!(t > 0.0)) throw std::invalid_argument("recursion times must be positive");
    for (std::size_t k = 0; k + 1 < n; ++k)
        if (!(u[k] < u[k + 1])) throw std::invalid_argument("recursion needs u in S^n");
    RhoEstimate r;
    r.aleph.assign(n, 0.0);
    r.samples = N;
    if (n < 2) throw std::invalid_argument("recursion needs n >= 2");
    if (n == 2) {
        if (times.size() != 1) throw std::invalid_argument("n = 2 takes the single time t2");
        r.rho = alpha_s2_closed(times[0], u);
        return r;
    }
    if (n > 3) throw std::invalid_argument("recursion implemented for n <= 3");
    if (times.empty() || times.size() > 2) throw std::invalid_argument("n = 3 takes (t2) or (t2, t3)");
    const double s = times[0];
    StageOptions stage;
    stage.grid = make_grid(1e-3, 1);
    stage.tail_step_factor = 0.01;
    McEstimate b = beta_monte_carlo(s, u, N, seed, stage);
    r.beta = b.value;
    r.beta_stderr = b.stderr_;
    // central differences in u with common random numbers
    const double h = 0.05 * std::min(u[1] - u[0], u[2] - u[1]);
    std::vector<double> v(u.begin(), u.end());
    for (std::size_t i = 0; i < 3; ++i) {
        v[i] = u[i] + h;
        const double bp = beta_monte_carlo(s, v, N, seed, stage).value;
        v[i] = u[i] - h;
        const double bm = beta_monte_carlo(s, v, N, seed, stage).value;
        v[i] = u[i];
        r.aleph[i] = (bp - bm) / (2.0 * h * b.value);
    }
    if (b.stderr_ > 0.01 * b.value) r.warnings.push_back("insufficient N for 1% relative stderr on beta");
    r.rho = r.beta;
    r.rho_stderr = r.beta_stderr;
    if (times.size() == 2) {
        const double gmax = std::max(u[1] - u[0], u[2] - u[1]);
        const double ext = std::max(4.0, 2.0 * gmax + 6.0 * std::sqrt(s));
        auto table = std::make_shared<BetaTable>(
            beta_table_mc(s, ext / 20.0, ext, std::max<std::size_t>(200, N / 10), seed.substream(1), stage));
        McEstimate a = alpha_monte_carlo(aleph_field(table), Domain::weyl_chamber(3), u, times[1], N,
                                         seed.substream(2));
        r.rho = b.value * a.value;
        r.rho_stderr = std::hypot(a.value * b.stderr_, b.value * a.stderr_);
        r.warnings.push_back("aleph drift for the survival factor comes from a coarse common-random-number table");
    }
    return r;
}

}  // namespace arratia
