#include "arratia/survival.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "arratia/girsanov.hpp"
#include "arratia/numerics.hpp"

namespace arratia {

DriftField::DriftField(std::size_t n, Eval f, bool translation_invariant, std::string description, bool smooth)
    : n_(n), f_(std::move(f)), translation_invariant_(translation_invariant), smooth_(smooth),
      description_(std::move(description)) {}

DriftField DriftField::zero(std::size_t n) {
    DriftField d;
    d.n_ = n;
    return d;
}

DriftField DriftField::constant(std::vector<double> c) {
    std::ostringstream os;
    os.precision(17);
    os << "constant(";
    for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
    os << ")";
    const std::size_t n = c.size();
    return DriftField(
        n, [c](std::span<const double>, std::span<double> out) { std::copy(c.begin(), c.end(), out.begin()); }, true,
        os.str());
}

std::uint64_t DriftField::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : description_) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h ^ n_;
}

void DriftField::operator()(std::span<const double> u, std::span<double> out) const {
    if (!f_) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    f_(u, out);
}

std::string to_string(Backend b) {
    switch (b) {
        case Backend::ClosedForm: return "closed-form";
        case Backend::KarlinMcGregor: return "karlin-mcgregor";
        case Backend::PdeGrid: return "pde-grid";
        case Backend::McTable: return "mc-table";
    }
    return "unknown";
}

std::vector<double> gaps_of(std::span<const double> u) {
    std::vector<double> g(u.size() > 0 ? u.size() - 1 : 0);
    for (std::size_t k = 0; k + 1 < u.size(); ++k) g[k] = u[k + 1] - u[k];
    return g;
}

void SurvivalField::grad_log(double t, std::span<const double> u, std::span<double> out) const {
    const double a = alpha(t, u);
    double dist = domain_.boundary_distance(u);
    if (!std::isfinite(dist)) dist = 1.0;
    const double h = 1e-4 * dist;
    std::vector<double> v(u.begin(), u.end());
    for (std::size_t i = 0; i < u.size(); ++i) {
        v[i] = u[i] + h;
        const double ap = alpha(t, v);
        v[i] = u[i] - h;
        const double am = alpha(t, v);
        v[i] = u[i];
        out[i] = (ap - am) / (2.0 * h * a);
    }
}

std::vector<double> grad_log_alpha(const SurvivalField& field, double t, std::span<const double> u) {
    std::vector<double> g(u.size(), 0.0);
    if (t <= 0.0) return g;
    if (!field.domain().contains(u)) {
        std::ostringstream os;
        os << "grad log alpha requested outside " << field.domain().describe() << " at t=" << t;
        throw SingularityError(os.str());
    }
    const double a = field.alpha(t, u);
    if (!(a >= kAlphaFloor)) {
        std::ostringstream os;
        os.precision(17);
        os << "alpha=" << a << " below floor at t=" << t << ", u=(";
        for (std::size_t i = 0; i < u.size(); ++i) os << (i ? "," : "") << u[i];
        os << ")";
        throw SingularityError(os.str());
    }
    field.grad_log(t, u, g);
    return g;
}

// ---------------------------------------------------------------------------
// Closed forms

namespace {

bool ordered(std::span<const double> u) {
    for (std::size_t k = 0; k + 1 < u.size(); ++k)
        if (!(u[k] < u[k + 1])) return false;
    return true;
}

// Pfaffian of the antisymmetric matrix a (row-major m x m) restricted to `idx`.
double pfaffian(const std::vector<double>& a, std::size_t m, std::vector<std::size_t>& idx) {
    if (idx.empty()) return 1.0;
    const std::size_t i0 = idx[0];
    double s = 0.0;
    for (std::size_t p = 1; p < idx.size(); ++p) {
        const std::size_t j = idx[p];
        std::vector<std::size_t> rest;
        rest.reserve(idx.size() - 2);
        for (std::size_t q = 1; q < idx.size(); ++q)
            if (q != p) rest.push_back(idx[q]);
        const double sign = (p % 2 == 1) ? 1.0 : -1.0;
        s += sign * a[i0 * m + j] * pfaffian(a, m, rest);
    }
    return s;
}

struct ChamberEval {
    double alpha;
    std::vector<double> grad;  // d alpha / d u
};

ChamberEval chamber_pfaffian(double t, std::span<const double> u, bool want_grad, bool tab) {
    const std::size_t n = u.size();
    ChamberEval r{1.0, std::vector<double>(want_grad ? n : 0, 0.0)};
    if (n <= 1 || t <= 0.0) return r;
    if (!ordered(u)) {
        r.alpha = 0.0;
        return r;
    }
    const double s = 2.0 * std::sqrt(t);
    const double gscale = 1.0 / std::sqrt(std::numbers::pi * t);
    auto E = [tab](double x) { return tab ? fast::erf(x) : std::erf(x); };
    auto G = [tab](double x) { return tab ? fast::gauss(x) : std::exp(-x * x); };

    if (n == 2) {
        const double x = (u[1] - u[0]) / s;
        r.alpha = E(x);
        if (want_grad) {
            const double d = G(x) * gscale;
            r.grad = {-d, d};
        }
        return r;
    }
    if (n == 3) {
        const double x12 = (u[1] - u[0]) / s, x23 = (u[2] - u[1]) / s, x13 = (u[2] - u[0]) / s;
        r.alpha = E(x12) + E(x23) - E(x13);
        if (want_grad) {
            const double g12 = G(x12) * gscale, g23 = G(x23) * gscale, g13 = G(x13) * gscale;
            r.grad = {-g12 + g13, g12 - g23, g23 - g13};
        }
        return r;
    }
    const std::size_t m = n % 2 == 0 ? n : n + 1;
    std::vector<double> a(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            const double v = j < n ? E((u[j] - u[i]) / s) : 1.0;
            a[i * m + j] = v;
            a[j * m + i] = -v;
        }
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    r.alpha = pfaffian(a, m, idx);
    if (want_grad) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                std::vector<std::size_t> rest;
                for (std::size_t q = 0; q < m; ++q)
                    if (q != i && q != j) rest.push_back(q);
                // cofactor of a_ij, 1-based sign (-1)^{i+j+1}
                const double sign = ((i + j) % 2 == 1) ? 1.0 : -1.0;
                const double c = sign * pfaffian(a, m, rest);
                const double d = G((u[j] - u[i]) / s) * gscale;
                r.grad[j] += c * d;
                r.grad[i] -= c * d;
            }
    }
    return r;
}

}  // namespace

double alpha_s2_closed(double t, std::span<const double> u) {
    if (u.size() != 2 || !(u[0] < u[1])) throw std::invalid_argument("alpha_s2_closed needs u in S^2 (u1 < u2)");
    if (t <= 0.0) return 1.0;
    return std::erf((u[1] - u[0]) / (2.0 * std::sqrt(t)));
}

double alpha_chamber_closed(double t, std::span<const double> u) {
    if (u.empty() || !ordered(u)) throw std::invalid_argument("alpha_chamber_closed needs u in S^n");
    return std::clamp(chamber_pfaffian(t, u, false, false).alpha, 0.0, 1.0);
}

ClosedFormField::ClosedFormField(Domain domain, bool tabulated)
    : SurvivalField(domain, DriftField::zero(domain.dimension())), tabulated_(tabulated) {
    if (domain.kind() == Domain::Kind::WeylChamber && domain.dimension() > 8)
        throw std::invalid_argument("closed-form chamber survival limited to n <= 8");
}

double ClosedFormField::alpha(double t, std::span<const double> u) const {
    if (t <= 0.0) return 1.0;
    if (domain_.kind() == Domain::Kind::HalfLine) {
        const double d = domain_.level() - u[0];
        if (d <= 0.0) return 0.0;
        const double x = d / std::sqrt(2.0 * t);
        return tabulated_ ? fast::erf(x) : std::erf(x);
    }
    return std::clamp(chamber_pfaffian(t, u, false, tabulated_).alpha, 0.0, 1.0);
}

void ClosedFormField::grad_log(double t, std::span<const double> u, std::span<double> out) const {
    if (t <= 0.0) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    if (domain_.kind() == Domain::Kind::HalfLine) {
        const double d = domain_.level() - u[0];
        const double x = d / std::sqrt(2.0 * t);
        const double a = tabulated_ ? fast::erf(x) : std::erf(x);
        const double g = tabulated_ ? fast::gauss(x) : std::exp(-x * x);
        out[0] = -std::sqrt(2.0 / (std::numbers::pi * t)) * g / a;
        return;
    }
    if (u.size() == 2 && tabulated_) {
        // x e^{-x^2}/erf(x) stays accurate as the gap closes
        const double gap = u[1] - u[0];
        const double x = gap / (2.0 * std::sqrt(t));
        const double v = 2.0 * fast::gauss_over_erf_times_x(x) / (gap * std::sqrt(std::numbers::pi));
        out[0] = -v;
        out[1] = v;
        return;
    }
    ChamberEval e = chamber_pfaffian(t, u, true, tabulated_);
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = e.grad[i] / e.alpha;
}

// ---------------------------------------------------------------------------
// Karlin-McGregor quadrature

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Sum over permutations of sign * prod, with y_1 and y_n integrated in closed form.
double km_integrand(std::span<const double> u, std::span<const double> inner, double t,
                    const std::vector<std::vector<std::size_t>>& perms, const std::vector<double>& signs) {
    const std::size_t n = u.size();
    const double st = std::sqrt(t);
    const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * t);
    double s = 0.0;
    for (std::size_t p = 0; p < perms.size(); ++p) {
        const auto& sg = perms[p];
        double v = signs[p];
        if (n == 2) {
            // inner = {y2}; y1 < y2 in closed form
            const double y2 = inner[0];
            v *= norm * std::exp(-(y2 - u[sg[1]]) * (y2 - u[sg[1]]) / (2 * t)) * normal_cdf((y2 - u[sg[0]]) / st);
        } else {
            for (std::size_t k = 0; k < inner.size(); ++k) {
                const double d = inner[k] - u[sg[k + 1]];
                v *= norm * std::exp(-d * d / (2 * t));
            }
            v *= normal_cdf((inner.front() - u[sg[0]]) / st);
            v *= 1.0 - normal_cdf((inner.back() - u[sg[n - 1]]) / st);
        }
        s += v;
    }
    return s;
}

double km_integrate(std::span<const double> u, double t, std::size_t order, const QuadratureSpec& q,
                    std::size_t& evals) {
    const std::size_t n = u.size();
    std::vector<std::size_t> sg(n);
    std::iota(sg.begin(), sg.end(), 0);
    std::vector<std::vector<std::size_t>> perms;
    std::vector<double> signs;
    do {
        perms.push_back(sg);
        int inv = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (sg[i] > sg[j]) ++inv;
        signs.push_back(inv % 2 ? -1.0 : 1.0);
    } while (std::next_permutation(sg.begin(), sg.end()));

    const double st = std::sqrt(t);
    const double lo = u.front() - q.truncation * st, hi = u.back() + q.truncation * st;
    const std::size_t dims = n == 2 ? 1 : n - 2;
    const double width = q.panel_width * st;
    const auto panels = static_cast<std::size_t>(std::ceil((hi - lo) / width));
    const QuadratureRule outer = composite_gauss(order, panels, lo, hi);

    std::vector<double> y(dims);
    if (dims == 1) {
        double s = 0.0;
        for (std::size_t i = 0; i < outer.x.size(); ++i) {
            y[0] = outer.x[i];
            s += outer.w[i] * km_integrand(u, y, t, perms, signs);
        }
        evals += outer.x.size();
        return s;
    }
    // dims == 2: y2 over [lo, hi], y3 = y2 + g with g over [0, hi - y2]
    double s = 0.0;
    for (std::size_t i = 0; i < outer.x.size(); ++i) {
        y[0] = outer.x[i];
        const double len = hi - y[0];
        const auto p2 = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(len / width)));
        const QuadratureRule inner = composite_gauss(order, p2, 0.0, len);
        double si = 0.0;
        for (std::size_t k = 0; k < inner.x.size(); ++k) {
            y[1] = y[0] + inner.x[k];
            si += inner.w[k] * km_integrand(u, y, t, perms, signs);
        }
        evals += inner.x.size();
        s += outer.w[i] * si;
    }
    return s;
}

}  // namespace

QuadratureResult alpha_karlin_mcgregor(double t, std::span<const double> u, const QuadratureSpec& q) {
    if (u.empty() || !ordered(u)) throw std::invalid_argument("Karlin-McGregor needs u in S^n");
    QuadratureResult r;
    if (u.size() == 1 || t <= 0.0) {
        r.value = 1.0;
        return r;
    }
    if (u.size() > 4) {
        r.ok = false;
        r.value = std::numeric_limits<double>::quiet_NaN();
        r.error = std::numeric_limits<double>::infinity();
        r.message = "tensor quadrature budget covers n <= 4";
        return r;
    }
    std::size_t evals = 0;
    const std::size_t coarse_order = std::max<std::size_t>(2, q.order / 2);
    const double coarse = km_integrate(u, t, coarse_order, q, evals);
    if (evals * 5 > q.budget) {
        r.ok = false;
        r.value = coarse;
        r.error = std::numeric_limits<double>::infinity();
        r.evaluations = evals;
        r.message = "quadrature budget exceeded; value is the coarse-order estimate";
        return r;
    }
    r.value = km_integrate(u, t, q.order, q, evals);
    r.error = std::abs(r.value - coarse) + 1e-14;
    r.evaluations = evals;
    return r;
}

KarlinMcGregorField::KarlinMcGregorField(std::size_t n, QuadratureSpec q)
    : SurvivalField(Domain::weyl_chamber(n), DriftField::zero(n)), q_(q) {
    if (n > 4) throw BudgetError("Karlin-McGregor field limited to n <= 4");
}

double KarlinMcGregorField::alpha(double t, std::span<const double> u) const {
    if (t <= 0.0) return 1.0;
    if (!ordered(u)) return 0.0;
    QuadratureResult r = alpha_karlin_mcgregor(t, u, q_);
    if (!r.ok) throw BudgetError(r.message);
    return std::clamp(r.value, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Gap-coordinate PDE

PdeGridField::PdeGridField(Domain domain, DriftField drift, PdeMesh mesh, std::vector<double> times,
                           std::vector<std::vector<double>> snapshots, std::size_t nodes_per_axis)
    : SurvivalField(std::move(domain), std::move(drift)), mesh_(mesh), times_(std::move(times)),
      snapshots_(std::move(snapshots)), nodes_(nodes_per_axis) {}

double PdeGridField::interpolate(std::size_t snap, std::span<const double> g) const {
    const std::size_t d = g.size();
    const auto& f = snapshots_[snap];
    std::size_t base = 0, stride = 1;
    std::vector<std::size_t> strides(d);
    std::vector<double> frac(d);
    for (std::size_t k = d; k-- > 0;) {
        strides[k] = stride;
        stride *= nodes_;
    }
    for (std::size_t k = 0; k < d; ++k) {
        double s = std::clamp(g[k], 0.0, mesh_.gap_extent) / mesh_.h;
        auto i = static_cast<std::size_t>(s);
        if (i >= nodes_ - 1) i = nodes_ - 2;
        frac[k] = s - static_cast<double>(i);
        base += i * strides[k];
    }
    double v = 0.0;
    for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
        double w = 1.0;
        std::size_t off = base;
        for (std::size_t k = 0; k < d; ++k) {
            if (corner >> k & 1U) {
                w *= frac[k];
                off += strides[k];
            } else {
                w *= 1.0 - frac[k];
            }
        }
        if (w != 0.0) v += w * f[off];
    }
    return v;
}

double PdeGridField::alpha(double t, std::span<const double> u) const {
    if (t <= 0.0) return 1.0;
    if (!ordered(u)) return 0.0;
    if (t > times_.back() * (1.0 + 1e-12)) throw std::out_of_range("PDE field queried beyond its horizon");
    const std::vector<double> g = gaps_of(u);
    auto it = std::lower_bound(times_.begin(), times_.end(), t);
    std::size_t k = static_cast<std::size_t>(it - times_.begin());
    if (k == 0) k = 1;
    if (k >= times_.size()) k = times_.size() - 1;
    const double t0 = times_[k - 1], t1 = times_[k];
    const double w = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
    const double a0 = interpolate(k - 1, g), a1 = interpolate(k, g);
    return std::clamp((1.0 - w) * a0 + w * a1, 0.0, 1.0);
}

namespace {

// Spatial part of the gap-coordinate scheme on the uniform node set {0, h, ..., (N-1)h}^d.
class GapOperator {
public:
    GapOperator(const DriftField& drift, const Domain& domain, const PdeMesh& mesh) {
        if (domain.kind() != Domain::Kind::WeylChamber || domain.dimension() < 2 || domain.dimension() > 4)
            throw std::invalid_argument("gap PDE supports the chamber S^n with 2 <= n <= 4");
        if (!drift.translation_invariant()) throw std::invalid_argument("gap PDE needs a translation-invariant drift");
        if (!(mesh.h > 0.0) || !(mesh.gap_extent > 2 * mesh.h) || !(mesh.horizon > 0.0))
            throw std::invalid_argument("invalid PDE mesh");
        n_ = domain.dimension();
        d_ = n_ - 1;
        h_ = mesh.h;
        N_ = static_cast<std::size_t>(std::llround(mesh.gap_extent / mesh.h)) + 1;
        total_ = 1;
        for (std::size_t k = 0; k < d_; ++k) total_ *= N_;
        stride_.resize(d_);
        std::size_t s = 1;
        for (std::size_t k = d_; k-- > 0;) {
            stride_[k] = s;
            s *= N_;
        }
        wall_.assign(total_, 0);
        b_.assign(total_ * d_, 0.0);
        std::vector<double> uu(n_), al(n_), g(d_);
        for (std::size_t idx = 0; idx < total_; ++idx) {
            gaps(idx, g);
            bool wall = false;
            uu[0] = 0.0;
            for (std::size_t k = 0; k < d_; ++k) {
                uu[k + 1] = uu[k] + g[k];
                wall = wall || index(idx, k) == 0;
            }
            wall_[idx] = wall;
            if (wall || drift.is_zero()) continue;
            drift(uu, al);
            double bs = 0.0;
            for (std::size_t k = 0; k < d_; ++k) {
                b_[idx * d_ + k] = al[k + 1] - al[k];
                if (!std::isfinite(b_[idx * d_ + k])) throw SingularityError("non-finite drift on PDE mesh");
                bs += std::abs(b_[idx * d_ + k]);
            }
            bmax_ = std::max(bmax_, bs);
        }
    }

    std::size_t nodes() const { return N_; }
    std::size_t total() const { return total_; }
    bool wall(std::size_t idx) const { return wall_[idx] != 0; }
    std::size_t index(std::size_t idx, std::size_t k) const { return (idx / stride_[k]) % N_; }
    void gaps(std::size_t idx, std::vector<double>& g) const {
        for (std::size_t k = 0; k < d_; ++k) g[k] = h_ * static_cast<double>(index(idx, k));
    }
    double dt_max() const {
        const double diff = (2.0 * static_cast<double>(d_) + 2.0 * static_cast<double>(d_ - 1)) / (h_ * h_);
        return 1.0 / (diff + bmax_ / h_);
    }

    /// L f at an interior node.
    double apply(const std::vector<double>& f, std::size_t idx) const {
        const double ih2 = 1.0 / (h_ * h_), i4h2 = 0.25 * ih2, i2h = 0.5 / h_, ih = 1.0 / h_;
        const double c = f[idx];
        double L = 0.0;
        for (std::size_t k = 0; k < d_; ++k) {
            const double fp = f[at(idx, k, +1)], fm = f[at(idx, k, -1)];
            L += (fp - 2.0 * c + fm) * ih2;
            const double bk = b_[idx * d_ + k];
            if (bk != 0.0) {
                if (std::abs(bk) * h_ <= 2.0)
                    L += bk * (fp - fm) * i2h;
                else
                    L += bk > 0 ? bk * (fp - c) * ih : bk * (c - fm) * ih;
            }
        }
        for (std::size_t k = 0; k + 1 < d_; ++k) {
            const std::size_t p = at(idx, k, +1), q = at(idx, k, -1);
            const double fpp = f[at(p, k + 1, +1)], fpm = f[at(p, k + 1, -1)];
            const double fmp = f[at(q, k + 1, +1)], fmm = f[at(q, k + 1, -1)];
            L -= (fpp - fpm - fmp + fmm) * i4h2;
        }
        return L;
    }

private:
    // neighbour along axis k with reflection at the far field
    std::size_t at(std::size_t idx, std::size_t k, int step) const {
        const std::size_t i = index(idx, k);
        if (step > 0) return i + 1 < N_ ? idx + stride_[k] : idx - stride_[k];
        return idx - stride_[k];
    }

    std::size_t n_ = 0, d_ = 0, N_ = 0, total_ = 0;
    double h_ = 0.0, bmax_ = 0.0;
    std::vector<std::size_t> stride_;
    std::vector<char> wall_;
    std::vector<double> b_;
};

}  // namespace

std::vector<double> apply_gap_operator(const DriftField& drift, const Domain& domain, const PdeMesh& mesh,
                                       const std::function<double(std::span<const double> g)>& f) {
    const GapOperator op(drift, domain, mesh);
    std::vector<double> v(op.total()), out(op.total(), 0.0), g(domain.dimension() - 1);
    for (std::size_t idx = 0; idx < op.total(); ++idx) {
        op.gaps(idx, g);
        v[idx] = f(g);
    }
    for (std::size_t idx = 0; idx < op.total(); ++idx)
        if (!op.wall(idx)) out[idx] = op.apply(v, idx);
    return out;
}

std::shared_ptr<PdeGridField> solve_gap_pde(const DriftField& drift, const Domain& domain, const PdeMesh& mesh,
                                            const std::function<double(std::span<const double> g)>& initial) {
    const GapOperator op(drift, domain, mesh);
    const std::size_t N = op.nodes(), total = op.total();
    PdeMesh m = mesh;
    m.gap_extent = mesh.h * static_cast<double>(N - 1);
    std::vector<double> f(total), g(domain.dimension() - 1);
    for (std::size_t idx = 0; idx < total; ++idx) {
        op.gaps(idx, g);
        f[idx] = op.wall(idx) ? 0.0 : std::clamp(initial(g), 0.0, 1.0);
    }

    const double dt_max = op.dt_max();
    double dt = mesh.dt > 0.0 ? mesh.dt : 0.9 * dt_max;
    if (dt > dt_max * (1.0 + 1e-12)) throw std::invalid_argument("PDE time step violates the explicit stability bound");
    const auto steps = static_cast<std::size_t>(std::ceil(m.horizon / dt));
    dt = m.horizon / static_cast<double>(steps);
    const std::size_t every = std::max<std::size_t>(1, (steps + m.max_snapshots - 1) / m.max_snapshots);

    std::vector<double> times{0.0};
    std::vector<std::vector<double>> snaps{f};
    std::vector<double> next(total);
    for (std::size_t s = 1; s <= steps; ++s) {
        for (std::size_t idx = 0; idx < total; ++idx)
            next[idx] = op.wall(idx) ? 0.0 : std::clamp(f[idx] + dt * op.apply(f, idx), 0.0, 1.0);
        std::swap(f, next);
        if (s % 64 == 0 || s == steps)
            for (double v : f)
                if (!std::isfinite(v)) throw std::runtime_error("PDE solution became non-finite");
        if (s % every == 0 || s == steps) {
            times.push_back(dt * static_cast<double>(s));
            snaps.push_back(f);
        }
    }
    return std::make_shared<PdeGridField>(domain, drift, m, std::move(times), std::move(snaps), N);
}

std::shared_ptr<PdeGridField> alpha_pde(const DriftField& drift, const Domain& domain, const PdeMesh& mesh) {
    return solve_gap_pde(drift, domain, mesh, [](std::span<const double>) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Monte Carlo

McEstimate alpha_monte_carlo(const DriftField& drift, const Domain& domain, std::span<const double> u, double t,
                             std::size_t N, const SeedLedger& seed, std::size_t steps) {
    if (N == 0) throw std::invalid_argument("alpha_monte_carlo needs N >= 1");
    McEstimate e;
    e.samples = N;
    if (t <= 0.0) {
        e.value = 1.0;
        return e;
    }
    if (steps == 0) steps = std::max<std::size_t>(16, static_cast<std::size_t>(std::ceil(1024.0 * t)));
    const TimeGrid grid = make_grid(t, steps);
    std::size_t alive = 0;
    for (std::size_t p = 0; p < N; ++p) {
        SamplePath w = sample_brownian(u, grid, seed, p);
        if (solve_xi(w, drift, domain).alive_at(t)) ++alive;
    }
    e.value = static_cast<double>(alive) / static_cast<double>(N);
    e.stderr_ = std::sqrt(std::max(e.value * (1.0 - e.value), 0.0) / static_cast<double>(N));
    return e;
}

McTableField::McTableField(Domain domain, DriftField drift, PdeMesh mesh, std::size_t N, const SeedLedger& seed,
                           std::size_t steps_per_unit)
    : SurvivalField(std::move(domain), std::move(drift)), mesh_(mesh) {
    const std::size_t n = domain_.dimension();
    if (domain_.kind() != Domain::Kind::WeylChamber || n < 2 || n > 3)
        throw std::invalid_argument("Monte Carlo table supports S^2 and S^3");
    if (N == 0) throw std::invalid_argument("Monte Carlo table needs N >= 1");
    const std::size_t d = n - 1;
    nodes_ = static_cast<std::size_t>(std::llround(mesh_.gap_extent / mesh_.h)) + 1;
    mesh_.gap_extent = mesh_.h * static_cast<double>(nodes_ - 1);
    const auto M = std::max<std::size_t>(8, static_cast<std::size_t>(std::ceil(steps_per_unit * mesh_.horizon)));
    const TimeGrid grid = make_grid(mesh_.horizon, M);
    const std::size_t levels = std::min<std::size_t>(M, 64);
    for (std::size_t l = 0; l <= levels; ++l) times_.push_back(mesh_.horizon * static_cast<double>(l) / levels);
    std::size_t total = 1;
    for (std::size_t k = 0; k < d; ++k) total *= nodes_;
    table_.assign(times_.size(), std::vector<double>(total, 0.0));
    std::vector<double> u(n);
    std::vector<std::size_t> ii(d);
    for (std::size_t idx = 0; idx < total; ++idx) {
        std::size_t rem = idx;
        bool wall = false;
        for (std::size_t k = d; k-- > 0;) {
            ii[k] = rem % nodes_;
            rem /= nodes_;
            wall = wall || ii[k] == 0;
        }
        u[0] = 0.0;
        for (std::size_t k = 0; k < d; ++k) u[k + 1] = u[k] + mesh_.h * static_cast<double>(ii[k]);
        table_[0][idx] = wall ? 0.0 : 1.0;
        if (wall) continue;
        std::vector<std::size_t> alive(times_.size(), 0);
        for (std::size_t p = 0; p < N; ++p) {
            SamplePath w = sample_brownian(u, grid, seed, p);  // common random numbers across nodes
            const double life = solve_xi(w, drift_, domain_).lifetime;
            for (std::size_t l = 1; l < times_.size(); ++l)
                if (life > times_[l]) ++alive[l];
        }
        for (std::size_t l = 1; l < times_.size(); ++l) {
            const double a = static_cast<double>(alive[l]) / static_cast<double>(N);
            table_[l][idx] = a;
            max_stderr_ = std::max(max_stderr_, std::sqrt(a * (1 - a) / static_cast<double>(N)));
        }
    }
    view_ = std::make_shared<PdeGridField>(domain_, drift_, mesh_, times_, std::move(table_), nodes_);
}

double McTableField::alpha(double t, std::span<const double> u) const {
    if (t <= 0.0) return 1.0;
    if (!ordered(u)) return 0.0;
    if (t > mesh_.horizon * (1.0 + 1e-12)) throw std::out_of_range("Monte Carlo table queried beyond its horizon");
    return view_->alpha(t, u);
}

}  // namespace arratia
