#include "arratia/chaos.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "arratia/numerics.hpp"

namespace arratia {

// ---------------------------------------------------------------------------
// Indices

ChaosIndex::ChaosIndex(std::size_t alphabet, std::vector<std::size_t> seq) : alphabet_(alphabet), seq_(std::move(seq)) {
    if (alphabet_ == 0) throw std::invalid_argument("chaos index alphabet must be nonempty");
    for (std::size_t k : seq_)
        if (k < 1 || k > alphabet_) {
            std::ostringstream os;
            os << "chaos index entry " << k << " outside {1.." << alphabet_ << "}";
            throw std::invalid_argument(os.str());
        }
}

std::string ChaosIndex::to_string() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t m = 0; m < seq_.size(); ++m) os << (m ? "," : "") << seq_[m];
    os << ")";
    return os.str();
}

MultiIndex::MultiIndex(std::vector<ChaosIndex> parts) : parts_(std::move(parts)) {
    for (std::size_t j = 0; j < parts_.size(); ++j)
        if (parts_[j].alphabet() != j + 1)
            throw std::invalid_argument("component j of a multi-index must be a word over {1..j}");
}

MultiIndex MultiIndex::of(std::vector<std::vector<std::size_t>> words) {
    std::vector<ChaosIndex> parts;
    for (std::size_t j = 0; j < words.size(); ++j) parts.emplace_back(j + 1, std::move(words[j]));
    return MultiIndex(std::move(parts));
}

std::size_t MultiIndex::total_degree() const {
    std::size_t d = 0;
    for (const auto& p : parts_) d += p.degree();
    return d;
}

std::string MultiIndex::to_string() const {
    std::string s;
    for (std::size_t j = 0; j < parts_.size(); ++j) s += (j ? ";" : "") + parts_[j].to_string();
    return s;
}

std::vector<MultiIndex> enumerate_indices(std::size_t n, std::size_t max_degree) {
    // words of every length over each alphabet, combined by total degree
    std::vector<std::vector<std::vector<std::size_t>>> words(n);
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<std::vector<std::size_t>> level{{}};
        words[j].push_back({});
        for (std::size_t d = 1; d <= max_degree; ++d) {
            std::vector<std::vector<std::size_t>> next;
            for (const auto& w : level)
                for (std::size_t a = 1; a <= j + 1; ++a) {
                    auto v = w;
                    v.push_back(a);
                    next.push_back(v);
                }
            for (const auto& w : next) words[j].push_back(w);
            level = std::move(next);
        }
    }
    std::vector<MultiIndex> out;
    for (std::size_t total = 0; total <= max_degree; ++total) {
        std::vector<std::size_t> pick(n, 0);
        for (;;) {
            std::size_t deg = 0;
            for (std::size_t j = 0; j < n; ++j) deg += words[j][pick[j]].size();
            if (deg == total) {
                std::vector<std::vector<std::size_t>> w(n);
                for (std::size_t j = 0; j < n; ++j) w[j] = words[j][pick[j]];
                out.push_back(MultiIndex::of(w));
            }
            std::size_t j = 0;
            while (j < n && ++pick[j] == words[j].size()) pick[j++] = 0;
            if (j == n) break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Kernels

double Factor::operator()(double t) const {
    if (!box.contains(t)) return 0.0;
    double v = 1.0;
    if (degree > 0) v = legendre(degree, 2.0 * (t - box.lo) / (box.hi - box.lo) - 1.0);
    if (modulation) v *= (*modulation)(t);
    return v;
}

namespace {

void check_boxes(const std::vector<Interval>& boxes) {
    for (const auto& b : boxes)
        if (!(b.hi > b.lo) || b.lo < 0.0 || !std::isfinite(b.hi))
            throw std::invalid_argument("kernel boxes need 0 <= lo < hi < inf");
}

}  // namespace

SimplexKernel SimplexKernel::constant(double c) {
    SimplexKernel k(0);
    k.terms_.push_back({c, {}});
    return k;
}

SimplexKernel SimplexKernel::box(std::vector<Interval> boxes, double coef) {
    return legendre_box(std::move(boxes), {}, coef);
}

SimplexKernel SimplexKernel::legendre_box(std::vector<Interval> boxes, std::vector<unsigned> degrees, double coef) {
    check_boxes(boxes);
    if (!degrees.empty() && degrees.size() != boxes.size())
        throw std::invalid_argument("one Legendre degree per coordinate");
    SimplexKernel k(boxes.size());
    SeparableTerm t{coef, {}};
    for (std::size_t m = 0; m < boxes.size(); ++m) t.factors.push_back({boxes[m], degrees.empty() ? 0U : degrees[m], nullptr});
    k.terms_.push_back(std::move(t));
    return k;
}

bool SimplexKernel::is_zero() const {
    return std::all_of(terms_.begin(), terms_.end(), [](const SeparableTerm& t) { return t.coef == 0.0; });
}

double SimplexKernel::scalar() const {
    if (arity_ != 0) throw std::logic_error("scalar() on a kernel of positive arity");
    double s = 0.0;
    for (const auto& t : terms_) s += t.coef;
    return s;
}

double SimplexKernel::support_end() const {
    double e = 0.0;
    for (const auto& t : terms_)
        for (const auto& f : t.factors) e = std::max(e, f.box.hi);
    return e;
}

std::vector<double> SimplexKernel::breakpoints() const {
    std::vector<double> b;
    for (const auto& t : terms_)
        for (const auto& f : t.factors) {
            b.push_back(f.box.lo);
            b.push_back(f.box.hi);
        }
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    return b;
}

std::string SimplexKernel::description() const {
    if (terms_.empty()) return "0";
    std::ostringstream os;
    os.precision(6);
    for (std::size_t i = 0; i < terms_.size(); ++i) {
        const auto& t = terms_[i];
        if (i) os << " + ";
        os << t.coef;
        for (const auto& f : t.factors) {
            os << "*";
            if (f.degree) os << "P" << f.degree;
            os << "[" << f.box.lo << "," << f.box.hi << ")";
            if (f.modulation) os << "~";
        }
    }
    return os.str();
}

double SimplexKernel::operator()(std::span<const double> t) const {
    if (t.size() != arity_) throw std::invalid_argument("kernel evaluated at the wrong arity");
    for (std::size_t m = 0; m < t.size(); ++m)
        if (!(t[m] > (m ? t[m - 1] : 0.0))) return 0.0;
    double s = 0.0;
    for (const auto& term : terms_) {
        double v = term.coef;
        for (std::size_t m = 0; m < arity_ && v != 0.0; ++m) v *= term.factors[m](t[m]);
        s += v;
    }
    return s;
}

SimplexKernel& SimplexKernel::operator+=(const SimplexKernel& other) {
    if (other.arity_ != arity_) throw std::invalid_argument("adding kernels of different arity");
    terms_.insert(terms_.end(), other.terms_.begin(), other.terms_.end());
    return *this;
}

SimplexKernel& SimplexKernel::operator*=(double c) {
    for (auto& t : terms_) t.coef *= c;
    return *this;
}

SimplexKernel SimplexKernel::modulate_last(std::function<double(double)> g) const {
    if (arity_ == 0) throw std::invalid_argument("modulate_last needs arity >= 1");
    SimplexKernel k = *this;
    auto shared = std::make_shared<const std::function<double(double)>>(std::move(g));
    for (auto& t : k.terms_) {
        auto& f = t.factors.back();
        if (f.modulation) {
            auto prev = f.modulation;
            f.modulation = std::make_shared<const std::function<double(double)>>(
                [prev, shared](double s) { return (*prev)(s) * (*shared)(s); });
        } else {
            f.modulation = shared;
        }
    }
    return k;
}

void SimplexKernel::add_term(SeparableTerm term) {
    if (term.factors.size() != arity_) throw std::invalid_argument("term arity differs from kernel arity");
    terms_.push_back(std::move(term));
}

SimplexKernel operator+(SimplexKernel a, const SimplexKernel& b) { return a += b; }
SimplexKernel operator*(double c, SimplexKernel a) { return a *= c; }

ProductKernel ProductKernel::product(std::vector<SimplexKernel> parts, double coef) {
    ProductKernel k;
    for (const auto& p : parts) k.arities_.push_back(p.arity());
    k.terms_.push_back({coef, std::move(parts)});
    return k;
}

ProductKernel ProductKernel::constant(std::size_t level, double c) {
    return product(std::vector<SimplexKernel>(level, SimplexKernel::constant(1.0)), c);
}

bool ProductKernel::is_zero() const {
    for (const auto& t : terms_) {
        if (t.coef == 0.0) continue;
        if (std::none_of(t.parts.begin(), t.parts.end(), [](const SimplexKernel& p) { return p.is_zero(); }))
            return false;
    }
    return true;
}

std::string ProductKernel::description() const {
    if (terms_.empty()) return "0";
    std::ostringstream os;
    os.precision(6);
    for (std::size_t i = 0; i < terms_.size(); ++i) {
        if (i) os << " + ";
        os << terms_[i].coef << "*{";
        for (std::size_t j = 0; j < terms_[i].parts.size(); ++j) os << (j ? " | " : "") << terms_[i].parts[j].description();
        os << "}";
    }
    return os.str();
}

bool ProductKernel::matches(const MultiIndex& index) const {
    if (index.level() != level()) return false;
    for (std::size_t j = 0; j < level(); ++j)
        if (index.part(j).degree() != arities_[j]) return false;
    return true;
}

double ProductKernel::operator()(const std::vector<std::vector<double>>& times) const {
    if (times.size() != level()) throw std::invalid_argument("product kernel evaluated at the wrong level");
    double s = 0.0;
    for (const auto& t : terms_) {
        double v = t.coef;
        for (std::size_t j = 0; j < t.parts.size() && v != 0.0; ++j)
            v *= t.parts[j].arity() == 0 ? t.parts[j].scalar() : t.parts[j](times[j]);
        s += v;
    }
    return s;
}

ProductKernel& ProductKernel::operator+=(const ProductKernel& other) {
    if (other.arities_ != arities_) throw std::invalid_argument("adding product kernels of different shape");
    terms_.insert(terms_.end(), other.terms_.begin(), other.terms_.end());
    return *this;
}

ProductKernel& ProductKernel::operator*=(double c) {
    for (auto& t : terms_) t.coef *= c;
    return *this;
}

ProductKernel operator+(ProductKernel a, const ProductKernel& b) { return a += b; }
ProductKernel operator*(double c, ProductKernel a) { return a *= c; }

std::vector<std::string> registered_kernels() { return {"box", "constant", "legendre"}; }

SimplexKernel kernel_from_json(const nlohmann::json& spec) {
    const std::string name = spec.at("name").get<std::string>();
    const double coef = spec.value("coef", 1.0);
    if (name == "constant") return SimplexKernel::constant(coef * spec.value("value", 1.0));
    if (name != "box" && name != "legendre")
        throw std::invalid_argument("unknown kernel '" + name + "'; registered: box, constant, legendre");
    if (!spec.contains("bounds")) throw std::invalid_argument("kernel '" + name + "' needs 'bounds'");
    std::vector<Interval> boxes;
    for (const auto& b : spec.at("bounds")) boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
    if (name == "box") return SimplexKernel::box(boxes, coef);
    if (!spec.contains("degrees")) throw std::invalid_argument("kernel 'legendre' needs 'degrees'");
    return SimplexKernel::legendre_box(boxes, spec.at("degrees").get<std::vector<unsigned>>(), coef);
}

// ---------------------------------------------------------------------------
// Iterated integrals

namespace {

void check_arity(const SimplexKernel& kernel, const ChaosIndex& index, std::size_t dimension, const TimeGrid& grid) {
    if (kernel.arity() != index.degree()) {
        std::ostringstream os;
        os << "kernel arity " << kernel.arity() << " does not match index " << index.to_string();
        throw std::invalid_argument(os.str());
    }
    for (std::size_t k : index.seq())
        if (k > dimension) throw std::invalid_argument("index entry exceeds the path dimension");
    if (kernel.support_end() > grid.horizon() * (1.0 + 1e-12))
        throw std::invalid_argument("kernel support extends past the grid horizon");
}

// S_m(t_{j+1}) = S_m(t_j) + f_m(t_j) S_{m-1}(t_j) dX_{k_m}(j), S_0 = 1; descending m keeps the left point.
template <class Inc>
double iterated_sum(const SeparableTerm& term, const ChaosIndex& index, const TimeGrid& grid, std::size_t steps,
                    Inc&& inc) {
    const std::size_t d = index.degree();
    std::vector<double> S(d + 1, 0.0);
    S[0] = 1.0;
    for (std::size_t j = 0; j < steps; ++j) {
        const double t = grid.time(j);
        for (std::size_t m = d; m >= 1; --m) {
            if (S[m - 1] == 0.0) continue;
            const double f = term.factors[m - 1](t);
            if (f != 0.0) S[m] += f * S[m - 1] * inc(index[m - 1] - 1, j);
        }
    }
    return term.coef * S[d];
}

double iterated(const SamplePath& path, const SimplexKernel& kernel, const ChaosIndex& index) {
    check_arity(kernel, index, path.dimension(), path.grid());
    if (index.empty()) return kernel.scalar();
    double s = 0.0;
    auto inc = [&](std::size_t i, std::size_t j) { return path.increment(i, j); };
    for (const auto& term : kernel.terms()) s += iterated_sum(term, index, path.grid(), path.grid().steps(), inc);
    return s;
}

}  // namespace

double ito_iterated(const SamplePath& path, const SimplexKernel& kernel, const ChaosIndex& index) {
    return iterated(path, kernel, index);
}

double flow_iterated_naive(const CoalescingMotion& motion, const SimplexKernel& kernel, const ChaosIndex& index) {
    return iterated(motion.paths, kernel, index);
}

StoppedIntegrator::StoppedIntegrator(const SamplePath& omega, XiSolution xi, std::shared_ptr<const SurvivalField> field)
    : omega_(omega), xi_(std::move(xi)), field_(std::move(field)) {
    if (!field_) throw std::invalid_argument("stopped integrals need a survival field");
    if (field_->dimension() != omega_.dimension()) throw std::invalid_argument("field dimension differs from the path");
    live_ = omega_.grid().count_before(xi_.lifetime);
    dw_.assign(omega_.dimension(), std::vector<double>(live_));
    for (std::size_t k = 0; k < omega_.dimension(); ++k)
        for (std::size_t j = 0; j < live_; ++j) dw_[k][j] = omega_.increment(k, j);
    const auto* cf = dynamic_cast<const ClosedFormField*>(field_.get());
    if (cf && field_->domain().kind() == Domain::Kind::WeylChamber && field_->dimension() == 2) {
        pair_closed_form_ = true;
        inv_two_sqrt_lag_.resize(omega_.grid().steps() + 1, 0.0);
        for (std::size_t L = 1; L < inv_two_sqrt_lag_.size(); ++L)
            inv_two_sqrt_lag_[L] = 0.5 / std::sqrt(static_cast<double>(L) * omega_.grid().dt());
    }
    rows_.resize(live_);
    have_row_.assign(live_, 0);
}

const std::vector<double>& StoppedIntegrator::row(std::size_t j) {
    if (have_row_[j]) return rows_[j];
    const std::size_t n = omega_.dimension();
    const TimeGrid& grid = omega_.grid();
    auto& r = rows_[j];
    r.assign(j * n, 0.0);
    std::vector<double> x(n), g(n);
    const double tj = grid.time(j);
    if (pair_closed_form_) {
        // grad log erf(gap / (2 sqrt(lag))) in closed form: +-2 r(x) / (gap sqrt(pi)), r(x) = x e^{-x^2} / erf(x)
        const double c = 2.0 / std::sqrt(std::numbers::pi);
        for (std::size_t i = 0; i < j; ++i) {
            const double gap = xi_.xi.value(1, i) - xi_.xi.value(0, i);
            if (!(gap > 0.0)) throw SingularityError("pair gap closed before the lifetime");
            double v = c * fast::gauss_over_erf_times_x(gap * inv_two_sqrt_lag_[j - i]) / gap;
            ++stats_.evaluations;
            if (v > kDriftCap) {
                v = kDriftCap;
                stats_.capped += 2;
            }
            r[i * 2] = -v;
            r[i * 2 + 1] = v;
        }
        have_row_[j] = 1;
        return r;
    }
    for (std::size_t i = 0; i < j; ++i) {
        for (std::size_t k = 0; k < n; ++k) x[k] = xi_.xi.value(k, i);
        field_->grad_log(tj - grid.time(i), x, g);
        ++stats_.evaluations;
        for (std::size_t k = 0; k < n; ++k) {
            double v = g[k];
            if (!std::isfinite(v)) {
                std::ostringstream os;
                os << "non-finite grad log alpha at lag " << tj - grid.time(i) << " on step " << i;
                throw SingularityError(os.str());
            }
            if (std::abs(v) > kDriftCap) {
                v = std::copysign(kDriftCap, v);
                ++stats_.capped;
            }
            r[i * n + k] = v;
        }
    }
    have_row_[j] = 1;
    return r;
}

double StoppedIntegrator::operator()(const SimplexKernel& kernel, const ChaosIndex& index) {
    const TimeGrid& grid = omega_.grid();
    check_arity(kernel, index, omega_.dimension(), grid);
    if (index.empty()) return kernel.scalar();
    const std::size_t d = index.degree(), n = omega_.dimension();
    const double dt = grid.dt();
    const std::size_t kd = index[d - 1] - 1;
    double total = 0.0;
    std::vector<std::vector<double>> fv(d, std::vector<double>(live_));
    std::vector<double> S(d);
    for (const auto& term : kernel.terms()) {
        for (std::size_t m = 0; m < d; ++m)
            for (std::size_t j = 0; j < live_; ++j) fv[m][j] = term.factors[m](grid.time(j));
        double sum = 0.0;
        for (std::size_t j = 0; j < live_; ++j) {
            const double fd = fv[d - 1][j];
            if (fd == 0.0) continue;
            const double dw = dw_[kd][j];
            double h = 1.0;
            if (d > 1) {
                const std::vector<double>& r = row(j);
                std::fill(S.begin(), S.end(), 0.0);
                S[0] = 1.0;
                for (std::size_t i = 0; i < j; ++i)
                    for (std::size_t m = d - 1; m >= 1; --m) {
                        const double f = fv[m - 1][i];
                        if (f == 0.0 || S[m - 1] == 0.0) continue;
                        const std::size_t k = index[m - 1] - 1;
                        S[m] += f * S[m - 1] * (dw_[k][i] - r[i * n + k] * dt);
                    }
                h = S[d - 1];
            }
            sum += fd * h * dw;
        }
        total += term.coef * sum;
    }
    return total;
}

double j_integral(const SamplePath& omega, const SimplexKernel& kernel, const ChaosIndex& index,
                  std::shared_ptr<const SurvivalField> field, const DriftField& drift, JStats* stats) {
    if (index.empty()) return kernel.scalar();
    XiSolution xi = solve_xi(omega, drift, field->domain());
    StoppedIntegrator integ(omega, std::move(xi), std::move(field));
    const double v = integ(kernel, index);
    if (stats) *stats = integ.stats();
    return v;
}

// ---------------------------------------------------------------------------
// Operators A on staged motions

namespace {

std::shared_ptr<const SurvivalField> chamber_field(std::size_t n) {
    static const std::shared_ptr<const SurvivalField> s2 =
        std::make_shared<ClosedFormField>(Domain::weyl_chamber(2), true);
    static const std::shared_ptr<const SurvivalField> s3 =
        std::make_shared<ClosedFormField>(Domain::weyl_chamber(3), true);
    return n == 2 ? s2 : s3;
}

}  // namespace

MotionIntegrals::MotionIntegrals(const StagedMotion& motion, std::shared_ptr<const RhoWeights> weights)
    : motion_(motion), weights_(std::move(weights)) {
    if (motion_.particles() == 0 || motion_.particles() > 3)
        throw std::invalid_argument("operators A are implemented for 1 <= n <= 3");
    truncated_ = !motion_.complete();
    stopped_.resize(4);
}

StoppedIntegrator& MotionIntegrals::stopped(std::size_t particles) {
    auto& slot = stopped_[particles];
    if (!slot) {
        const MotionStage& st = motion_.stage_with(particles);
        XiSolution xi;
        xi.xi = st.path;
        xi.lifetime = st.tau;
        const TimeGrid& g = st.path.grid();
        xi.exit_step = st.tau < g.horizon() ? static_cast<std::size_t>(st.tau / g.dt()) : g.steps();
        slot = std::make_unique<StoppedIntegrator>(st.path, std::move(xi), chamber_field(particles));
    }
    return *slot;
}

std::vector<double> MotionIntegrals::aleph_corrected(const SimplexKernel& a3, std::size_t coordinate) {
    const MotionStage& st = motion_.stage_with(3);
    const SamplePath& w = st.path;
    const TimeGrid& grid = w.grid();
    const std::size_t live = grid.count_before(st.tau);
    const std::size_t K = weights_->nodes().size();
    if (aleph_rows_.empty()) {
        aleph_rows_.assign(K, std::vector<double>(live * 3));
        std::vector<double> x(3), al(3);
        for (std::size_t k = 0; k < K; ++k) {
            const DriftField& aleph = weights_->aleph(k);
            for (std::size_t j = 0; j < live; ++j) {
                for (std::size_t i = 0; i < 3; ++i) x[i] = w.value(i, j);
                aleph(x, al);
                for (std::size_t i = 0; i < 3; ++i) aleph_rows_[k][j * 3 + i] = al[i];
            }
        }
    }
    const double dt = grid.dt();
    std::vector<double> c(K, 0.0);
    for (const auto& term : a3.terms())
        for (std::size_t j = 0; j < live; ++j) {
            const double f = term.factors[0](grid.time(j));
            if (f == 0.0) continue;
            const double dw = w.increment(coordinate, j);
            for (std::size_t k = 0; k < K; ++k) c[k] += term.coef * f * (dw - aleph_rows_[k][j * 3 + coordinate] * dt);
        }
    return c;
}

double MotionIntegrals::product_term(const ProductTerm& term, const MultiIndex& index) {
    const std::size_t n = index.level();
    const auto& k1 = index.part(0);
    const double v1 = k1.empty() ? term.parts[0].scalar() : ito_iterated(motion_.stage_with(1).path, term.parts[0], k1);
    if (n == 1 || v1 == 0.0) return v1;
    const auto& k2 = index.part(1);
    if (n == 2) return v1 * (k2.empty() ? term.parts[1].scalar() : stopped(2)(term.parts[1], k2));

    const auto& k3 = index.part(2);
    const SimplexKernel& a2 = term.parts[1];
    const SimplexKernel& a3 = term.parts[2];
    if (k3.empty()) return v1 * a3.scalar() * (k2.empty() ? a2.scalar() : stopped(2)(a2, k2));
    if (k2.empty()) return v1 * a2.scalar() * stopped(3)(a3, k3);

    if (!weights_) throw std::invalid_argument("A with nonempty k^2 and k^3 needs rho weights");
    if (k3.degree() != 1) throw std::invalid_argument("A with nonempty k^2 needs |k^3| = 1");
    const auto& nodes = weights_->nodes();
    for (const auto& t : a2.terms()) {
        const Interval& b = t.factors.back().box;
        if (b.lo < nodes.lower() * (1 - 1e-12) || b.hi > nodes.upper() * (1 + 1e-12))
            throw std::invalid_argument("last stage-2 kernel support must lie in the tabulated rho range");
    }
    const std::vector<double> c = aleph_corrected(a3, k3[0] - 1);
    const ChebyshevInterpolant interp = nodes;
    SimplexKernel mod = a2.modulate_last([interp, c](double s) { return interp(s, c); });
    return v1 * stopped(2)(mod, k2);
}

double MotionIntegrals::operator()(const ProductKernel& kernel, const MultiIndex& index) {
    if (index.level() != motion_.particles()) throw std::invalid_argument("multi-index level differs from the motion");
    if (!kernel.matches(index)) throw std::invalid_argument("product kernel arities do not match " + index.to_string());
    if (truncated_) throw TruncatedMotionError("motion did not coalesce to one particle within the tail cap");
    double s = 0.0;
    for (const auto& term : kernel.terms())
        if (term.coef != 0.0) s += term.coef * product_term(term, index);
    return s;
}

double a_operator(const StagedMotion& motion, const ProductKernel& kernel, const MultiIndex& index,
                  std::shared_ptr<const RhoWeights> weights) {
    MotionIntegrals mi(motion, std::move(weights));
    return mi(kernel, index);
}

// ---------------------------------------------------------------------------
// Weighted norms

LastTimeWeight unit_weight() {
    return {[](std::span<const double>) { return 1.0; }, nullptr, "unit"};
}

LastTimeWeight survival_weight(std::shared_ptr<const SurvivalField> field, std::vector<double> u) {
    std::ostringstream os;
    os << "alpha_" << field->domain().describe() << "(t_d,u)";
    return {[field, u](std::span<const double> last) {
                return std::isnan(last[0]) ? 1.0 : field->alpha(last[0], u);
            },
            nullptr, os.str()};
}

LastTimeWeight rho_weight(std::shared_ptr<const RhoWeights> weights) {
    auto times = [](std::span<const double> last, double& s2, double& s3) {
        s2 = last.size() > 1 && !std::isnan(last[1]) ? last[1] : 0.0;
        s3 = last.size() > 2 && !std::isnan(last[2]) ? last[2] : 0.0;
    };
    LastTimeWeight w;
    w.description = "rho(u)";
    w.density = [weights, times](std::span<const double> last) {
        double s2, s3;
        times(last, s2, s3);
        if (weights->level() == 1) return 1.0;
        if (weights->level() == 2) return weights->rho(s2);
        return weights->rho(s2, s3);
    };
    w.stderr_ = [weights, times](std::span<const double> last) {
        double s2, s3;
        times(last, s2, s3);
        return weights->rho_stderr(s2, s3);
    };
    return w;
}

namespace {

// Composite Gauss-Legendre on [0, end] with panels no wider than `panel` and edges at every breakpoint.
QuadratureRule panel_rule(std::vector<double> breaks, double lo, double hi, std::size_t order, double panel) {
    QuadratureRule r;
    breaks.push_back(lo);
    breaks.push_back(hi);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
        const double a = std::max(breaks[b], lo), c = std::min(breaks[b + 1], hi);
        if (!(c > a)) continue;
        const auto panels = static_cast<std::size_t>(std::ceil((c - a) / panel - 1e-9));
        QuadratureRule q = composite_gauss(order, std::max<std::size_t>(1, panels), a, c);
        r.x.insert(r.x.end(), q.x.begin(), q.x.end());
        r.w.insert(r.w.end(), q.w.begin(), q.w.end());
    }
    return r;
}

struct FactorPair {
    const Factor* a;
    const Factor* b;
    double operator()(double t) const { return (*a)(t) * (*b)(t); }
};

// N_m(s) = int_0^s phi_m(r) N_{m-1}(r) dr with N_0 = 1.
double nested(const std::vector<FactorPair>& phi, std::size_t m, double s, const std::vector<double>& breaks,
              std::size_t order, double panel) {
    if (m == 0) return 1.0;
    const FactorPair& p = phi[m - 1];
    const double lo = std::max(p.a->box.lo, p.b->box.lo);
    const double hi = std::min({s, p.a->box.hi, p.b->box.hi});
    if (!(hi > lo)) return 0.0;
    const QuadratureRule q = panel_rule(breaks, lo, hi, order, panel);
    double v = 0.0;
    for (std::size_t i = 0; i < q.x.size(); ++i) {
        const double f = p(q.x[i]);
        if (f != 0.0) v += q.w[i] * f * nested(phi, m - 1, q.x[i], breaks, order, panel);
    }
    return v;
}

// Profile of one part: sum over term pairs of c_a c_b phi_d(s) N_{d-1}(s) at the rule nodes.
std::vector<double> part_profile(const SimplexKernel& a, const SimplexKernel& b, const QuadratureRule& rule,
                                 const std::vector<double>& breaks, std::size_t order, double panel) {
    std::vector<double> prof(rule.x.size(), 0.0);
    const std::size_t d = a.arity();
    std::vector<FactorPair> phi(d);
    for (const auto& ta : a.terms())
        for (const auto& tb : b.terms()) {
            const double c = ta.coef * tb.coef;
            if (c == 0.0) continue;
            for (std::size_t m = 0; m < d; ++m) phi[m] = {&ta.factors[m], &tb.factors[m]};
            for (std::size_t q = 0; q < rule.x.size(); ++q) {
                const double f = phi[d - 1](rule.x[q]);
                if (f != 0.0) prof[q] += c * f * nested(phi, d - 1, rule.x[q], breaks, order, panel);
            }
        }
    return prof;
}

// Quadrature layout shared by a family of kernels with one arity pattern.
class Layout {
public:
    Layout(const std::vector<ProductKernel>& kernels, const LastTimeWeight& weight, std::size_t order, double panel)
        : order_(order), panel_(panel) {
        const std::size_t n = kernels.front().level();
        arities_ = kernels.front().arities();
        breaks_.resize(n);
        rules_.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            if (arities_[j] == 0) continue;
            active_.push_back(j);
            double start = std::numeric_limits<double>::infinity(), end = 0.0;
            for (const auto& k : kernels)
                for (const auto& t : k.terms()) {
                    auto b = t.parts[j].breakpoints();
                    breaks_[j].insert(breaks_[j].end(), b.begin(), b.end());
                    end = std::max(end, t.parts[j].support_end());
                    for (const auto& st : t.parts[j].terms()) start = std::min(start, st.factors.back().box.lo);
                }
            // the last time never precedes the lower edge of its own box
            start = std::isfinite(start) ? std::clamp(start, 0.0, end) : 0.0;
            std::sort(breaks_[j].begin(), breaks_[j].end());
            breaks_[j].erase(std::unique(breaks_[j].begin(), breaks_[j].end()), breaks_[j].end());
            rules_[j] = panel_rule(breaks_[j], start, std::max(end, 1e-300), order_, panel_);
        }
        // weight tensor over the active parts
        std::size_t size = 1;
        for (std::size_t j : active_) size *= rules_[j].x.size();
        w_.assign(size, 0.0);
        se_.assign(size, 0.0);
        std::vector<double> last(n, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t idx = 0; idx < size; ++idx) {
            std::size_t rem = idx;
            double qw = 1.0;
            for (std::size_t a = active_.size(); a-- > 0;) {
                const std::size_t j = active_[a], m = rules_[j].x.size();
                last[j] = rules_[j].x[rem % m];
                qw *= rules_[j].w[rem % m];
                rem /= m;
            }
            w_[idx] = qw * weight.density(last);
            if (weight.stderr_) se_[idx] = qw * weight.stderr_(last);
        }
    }

    WeightedValue inner(const ProductKernel& a, const ProductKernel& b) const {
        WeightedValue v;
        for (const auto& ta : a.terms())
            for (const auto& tb : b.terms()) {
                double c = ta.coef * tb.coef;
                if (c == 0.0) continue;
                std::vector<std::vector<double>> prof;
                for (std::size_t j = 0; j < arities_.size(); ++j) {
                    if (arities_[j] == 0)
                        c *= ta.parts[j].scalar() * tb.parts[j].scalar();
                    else
                        prof.push_back(part_profile(ta.parts[j], tb.parts[j], rules_[j], breaks_[j], order_, panel_));
                }
                if (c == 0.0) continue;
                double s = 0.0, e = 0.0;
                for (std::size_t idx = 0; idx < w_.size(); ++idx) {
                    std::size_t rem = idx;
                    double p = 1.0;
                    for (std::size_t a2 = active_.size(); a2-- > 0;) {
                        const std::size_t m = prof[a2].size();
                        p *= prof[a2][rem % m];
                        rem /= m;
                    }
                    s += p * w_[idx];
                    e += std::abs(p) * se_[idx];
                }
                v.value += c * s;
                v.weight_stderr += std::abs(c) * e;
            }
        return v;
    }

private:
    std::size_t order_;
    double panel_;
    std::vector<std::size_t> arities_, active_;
    std::vector<std::vector<double>> breaks_;
    std::vector<QuadratureRule> rules_;
    std::vector<double> w_, se_;
};

void check_family(const std::vector<ProductKernel>& kernels, const QuadratureOptions& q) {
    if (kernels.empty()) throw std::invalid_argument("empty kernel family");
    for (const auto& k : kernels)
        if (k.arities() != kernels.front().arities()) throw std::invalid_argument("kernels of different shape");
    std::size_t dim = 0;
    for (std::size_t a : kernels.front().arities()) dim += a;
    if (dim > q.max_dimension) {
        std::ostringstream os;
        os << "weighted quadrature of dimension " << dim << " exceeds the budget of " << q.max_dimension;
        throw BudgetError(os.str());
    }
}

}  // namespace

std::vector<std::vector<WeightedValue>> weighted_gram(const std::vector<ProductKernel>& kernels,
                                                      const LastTimeWeight& weight, const QuadratureOptions& q) {
    check_family(kernels, q);
    const Layout lo(kernels, weight, q.order, q.panel);
    const Layout hi(kernels, weight, 2 * q.order, q.panel);
    const std::size_t K = kernels.size();
    std::vector<std::vector<WeightedValue>> G(K, std::vector<WeightedValue>(K));
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = i; j < K; ++j) {
            WeightedValue a = lo.inner(kernels[i], kernels[j]);
            const WeightedValue b = hi.inner(kernels[i], kernels[j]);
            a.quad_error = std::abs(b.value - a.value);
            G[i][j] = G[j][i] = a;
        }
    return G;
}

WeightedValue weighted_inner(const ProductKernel& a, const ProductKernel& b, const LastTimeWeight& weight,
                             const QuadratureOptions& q) {
    return weighted_gram({a, b}, weight, q)[0][1];
}

WeightedValue weighted_kernel_norm(const ProductKernel& a, const MultiIndex& index, const LastTimeWeight& weight,
                                   const QuadratureOptions& q) {
    if (!a.matches(index)) throw std::invalid_argument("kernel arities do not match " + index.to_string());
    return weighted_gram({a}, weight, q)[0][0];
}

}  // namespace arratia
