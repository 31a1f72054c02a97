#include "arratia/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "arratia/numerics.hpp"
#include "arratia/parallel.hpp"
#include "arratia/report.hpp"

namespace arratia {

// ---------------------------------------------------------------------------
// Bases

namespace {

// Degree tuples of length d with sum <= max, ordered by sum then lexicographically (descending first entry).
void degree_tuples(std::size_t d, unsigned max, std::vector<std::vector<unsigned>>& out) {
    std::vector<unsigned> cur(d, 0);
    for (unsigned total = 0; total <= max; ++total) {
        std::function<void(std::size_t, unsigned)> rec = [&](std::size_t pos, unsigned left) {
            if (pos + 1 == d) {
                cur[pos] = left;
                out.push_back(cur);
                return;
            }
            for (unsigned a = left + 1; a-- > 0;) {
                cur[pos] = a;
                rec(pos + 1, left - a);
            }
        };
        if (d == 0) {
            if (total == 0) out.emplace_back();
        } else {
            rec(0, total);
        }
    }
}

unsigned tuple_sum(const std::vector<unsigned>& t) { return std::accumulate(t.begin(), t.end(), 0U); }

}  // namespace

std::vector<ProductKernel> raw_kernels(const MultiIndex& index, const BasisSpec& spec) {
    const std::size_t n = index.level();
    if (spec.max_size == 0) throw std::invalid_argument("basis truncation must be at least 1");
    if (spec.part_box.size() != n) throw std::invalid_argument("basis spec needs one box per part");
    std::vector<std::vector<std::vector<unsigned>>> per_part(n);
    for (std::size_t j = 0; j < n; ++j) {
        const Interval& b = spec.part_box[j];
        if (index.part(j).degree() > 0 && !(b.hi > b.lo && b.lo >= 0.0))
            throw std::invalid_argument("basis box of part " + std::to_string(j + 1) + " is empty");
        degree_tuples(index.part(j).degree(), spec.max_degree, per_part[j]);
    }
    // combinations over parts, by total degree
    std::vector<std::vector<std::size_t>> combos;
    std::vector<std::size_t> pick(n, 0);
    std::function<void(std::size_t)> rec = [&](std::size_t j) {
        if (j == n) {
            combos.push_back(pick);
            return;
        }
        for (std::size_t a = 0; a < per_part[j].size(); ++a) {
            pick[j] = a;
            rec(j + 1);
        }
    };
    rec(0);
    auto total = [&](const std::vector<std::size_t>& c) {
        unsigned s = 0;
        for (std::size_t j = 0; j < n; ++j) s += tuple_sum(per_part[j][c[j]]);
        return s;
    };
    std::stable_sort(combos.begin(), combos.end(), [&](const auto& a, const auto& b) { return total(a) < total(b); });
    std::vector<ProductKernel> out;
    for (const auto& c : combos) {
        if (total(c) > spec.max_degree) continue;
        if (out.size() == spec.max_size) break;
        std::vector<SimplexKernel> parts;
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t d = index.part(j).degree();
            if (d == 0) {
                parts.push_back(SimplexKernel::constant(1.0));
            } else {
                parts.push_back(SimplexKernel::legendre_box(std::vector<Interval>(d, spec.part_box[j]),
                                                            per_part[j][c[j]]));
            }
        }
        out.push_back(ProductKernel::product(std::move(parts)));
    }
    return out;
}

std::vector<double> WeightedBasis::combine(std::span<const double> raw_values) const {
    std::vector<double> e(size(), 0.0);
    for (std::size_t i = 0; i < size(); ++i)
        for (std::size_t j = 0; j <= i; ++j) e[i] += transform(i, j) * raw_values[j];
    return e;
}

std::vector<double> WeightedBasis::evaluate(MotionIntegrals& integrals) const {
    std::vector<double> r(size());
    for (std::size_t j = 0; j < size(); ++j) r[j] = integrals(raw[j], index);
    return combine(r);
}

namespace {

Eigen::MatrixXd gram_values(const std::vector<std::vector<WeightedValue>>& g, Eigen::MatrixXd* err) {
    const auto K = static_cast<Eigen::Index>(g.size());
    Eigen::MatrixXd G(K, K);
    if (err) err->resize(K, K);
    for (Eigen::Index i = 0; i < K; ++i)
        for (Eigen::Index j = 0; j < K; ++j) {
            G(i, j) = g[i][j].value;
            if (err) (*err)(i, j) = std::hypot(g[i][j].quad_error, g[i][j].weight_stderr);
        }
    return G;
}

double identity_defect(const Eigen::MatrixXd& E, const Eigen::MatrixXd& G) {
    const Eigen::MatrixXd D = E * G * E.transpose() - Eigen::MatrixXd::Identity(G.rows(), G.cols());
    return D.cwiseAbs().maxCoeff();
}

}  // namespace

WeightedBasis build_basis(const MultiIndex& index, const LastTimeWeight& weight, const BasisSpec& spec,
                          const QuadratureOptions& q) {
    WeightedBasis b;
    b.index = index;
    b.weight = weight.description;
    b.raw = raw_kernels(index, spec);
    b.gram = gram_values(weighted_gram(b.raw, weight, q), &b.gram_error);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b.gram, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
    b.condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(b.condition < 1e8)) {
        std::ostringstream os;
        os << "Gram matrix for " << index.to_string() << " has condition number " << b.condition
           << "; use a smaller truncation than " << b.raw.size() << " or a lower polynomial degree";
        throw IllConditionedError(os.str());
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(b.gram);
    if (llt.info() != Eigen::Success)
        throw IllConditionedError("Gram matrix for " + index.to_string() + " is not positive definite; use a smaller truncation");
    const Eigen::MatrixXd L = llt.matrixL();
    b.transform = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(L.rows(), L.cols()));
    b.orthonormality_error = identity_defect(b.transform, b.gram);
    for (std::size_t i = 0; i < b.size(); ++i) {
        ProductKernel e(b.raw[0].arities());
        for (std::size_t j = 0; j <= i; ++j)
            if (b.transform(i, j) != 0.0) e += b.transform(i, j) * b.raw[j];
        b.elements.push_back(std::move(e));
    }
    return b;
}

double orthonormality_defect(const WeightedBasis& basis, const LastTimeWeight& weight, const QuadratureOptions& q) {
    return identity_defect(basis.transform, gram_values(weighted_gram(basis.raw, weight, q), nullptr));
}

namespace {

bool a_operator_supported(const MultiIndex& index) {
    if (index.level() < 3) return true;
    return index.part(1).empty() || index.part(2).degree() <= 1;
}

}  // namespace

std::vector<WeightedBasis> build_bases(std::size_t n, std::size_t max_degree, const LastTimeWeight& weight,
                                       const BasisSpec& spec, const QuadratureOptions& q) {
    std::vector<WeightedBasis> out;
    for (const auto& index : enumerate_indices(n, max_degree))
        if (a_operator_supported(index)) out.push_back(build_basis(index, weight, spec, q));
    return out;
}

// ---------------------------------------------------------------------------
// Projection

namespace {

constexpr std::size_t kBlock = 64;

// Sums of x and x x^T over paths, gathered in fixed blocks so the result does not depend on the thread count.
struct Moments {
    std::size_t n = 0, skipped = 0;
    Eigen::VectorXd sum;
    Eigen::MatrixXd cross;
};

using SampleFn = std::function<bool(std::uint64_t path, Eigen::VectorXd& x)>;

Moments gather(std::size_t N, std::size_t K, std::size_t threads, const SampleFn& sample) {
    const std::size_t blocks = (N + kBlock - 1) / kBlock;
    std::vector<Moments> part(blocks);
    parallel_for(blocks, threads, [&](std::size_t b) {
        Moments& m = part[b];
        m.sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
        m.cross = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
        Eigen::VectorXd x(static_cast<Eigen::Index>(K));
        for (std::size_t p = b * kBlock; p < std::min(N, (b + 1) * kBlock); ++p) {
            if (!sample(p, x)) {
                ++m.skipped;
                continue;
            }
            ++m.n;
            m.sum += x;
            m.cross.selfadjointView<Eigen::Lower>().rankUpdate(x);
        }
    });
    Moments total;
    total.sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
    total.cross = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
    for (const auto& m : part) {
        total.n += m.n;
        total.skipped += m.skipped;
        total.sum += m.sum;
        total.cross += m.cross;
    }
    total.cross = total.cross.selfadjointView<Eigen::Lower>();
    return total;
}

// Mean and covariance of the mean.
void mean_cov(const Moments& m, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
    if (m.n < 2) throw std::runtime_error("projection needs at least two complete motions");
    const double n = static_cast<double>(m.n);
    mean = m.sum / n;
    cov = (m.cross - n * mean * mean.transpose()) / ((n - 1.0) * n);
}

std::size_t total_size(const std::vector<WeightedBasis>& bases) {
    std::size_t K = 0;
    for (const auto& b : bases) K += b.size();
    return K;
}

}  // namespace

CoefficientTable project(const MotionFunctional& f, const std::vector<WeightedBasis>& bases,
                         const ProjectionSetup& setup) {
    if (bases.empty()) throw std::invalid_argument("projection needs at least one basis");
    for (const auto& b : bases)
        if (b.index.level() != setup.u.size())
            throw std::invalid_argument("basis " + b.index.to_string() + " does not match the start point");
    const std::size_t K = total_size(bases);
    const Moments m = gather(setup.N, K, setup.threads, [&](std::uint64_t p, Eigen::VectorXd& x) {
        const StagedMotion motion = simulate_staged(setup.u, setup.stage, setup.seed, p);
        if (!motion.complete()) return false;
        const double fv = f(motion);
        MotionIntegrals mi(motion, setup.weights);
        Eigen::Index k = 0;
        for (const auto& b : bases)
            for (double e : b.evaluate(mi)) x[k++] = fv * e;
        return true;
    });
    CoefficientTable t;
    t.samples = m.n;
    t.truncated = m.skipped;
    t.functional = setup.functional;
    t.seed = setup.seed;
    Eigen::VectorXd mean;
    mean_cov(m, mean, t.covariance);
    Eigen::Index k = 0;
    for (const auto& b : bases)
        for (std::size_t i = 0; i < b.size(); ++i, ++k)
            t.entries.push_back({b.index, i, mean[k], std::sqrt(std::max(0.0, t.covariance(k, k)))});
    return t;
}

McEstimate second_moment(const MotionFunctional& f, const ProjectionSetup& setup) {
    const Moments m = gather(setup.N, 1, setup.threads, [&](std::uint64_t p, Eigen::VectorXd& x) {
        const StagedMotion motion = simulate_staged(setup.u, setup.stage, setup.seed, p);
        if (!motion.complete()) return false;
        const double v = f(motion);
        x[0] = v * v;
        return true;
    });
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    mean_cov(m, mean, cov);
    return {mean[0], std::sqrt(std::max(0.0, cov(0, 0))), m.n};
}

void CoefficientTable::write_csv(std::ostream& os) const {
    std::size_t levels = 0;
    for (const auto& e : entries) levels = std::max(levels, e.index.level());
    std::vector<std::string> head{"functional", "index"};
    for (std::size_t j = 0; j < levels; ++j) head.push_back("k" + std::to_string(j + 1));
    for (const char* h : {"total_degree", "element", "estimate", "stderr", "N"}) head.emplace_back(h);
    write_csv_row(os, head);
    for (const auto& e : entries) {
        std::vector<std::string> row{functional, e.index.to_string()};
        for (std::size_t j = 0; j < levels; ++j) row.push_back(j < e.index.level() ? e.index.part(j).to_string() : "");
        row.push_back(std::to_string(e.index.total_degree()));
        row.push_back(std::to_string(e.element));
        row.push_back(format_double(e.estimate));
        row.push_back(format_double(e.stderr_));
        row.push_back(std::to_string(samples));
        write_csv_row(os, row);
    }
}

nlohmann::json CoefficientTable::to_json() const {
    nlohmann::json j;
    j["functional"] = functional;
    j["samples"] = samples;
    j["truncated"] = truncated;
    j["seed"] = seed.to_json();
    auto& arr = j["coefficients"] = nlohmann::json::array();
    for (const auto& e : entries)
        arr.push_back({{"index", e.index.to_string()},
                       {"total_degree", e.index.total_degree()},
                       {"element", e.element},
                       {"estimate", json_number(e.estimate)},
                       {"stderr", json_number(e.stderr_)}});
    return j;
}

ParsevalReport parseval_report(const CoefficientTable& table, const McEstimate& f2) {
    ParsevalReport r;
    r.second_moment = f2.value;
    r.second_moment_stderr = f2.stderr_;
    std::size_t max_degree = 0;
    for (const auto& e : table.entries) max_degree = std::max(max_degree, e.index.total_degree());
    double prev = -1.0;
    for (std::size_t d = 0; d <= max_degree; ++d) {
        ParsevalLevel lv;
        lv.degree = d;
        const auto K = static_cast<Eigen::Index>(table.entries.size());
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(K);
        for (Eigen::Index k = 0; k < K; ++k) {
            const auto& e = table.entries[static_cast<std::size_t>(k)];
            if (e.index.total_degree() > d) continue;
            ++lv.terms;
            lv.partial_sum += e.estimate * e.estimate;
            grad[k] = 2.0 * e.estimate;
        }
        // delta method through the coefficient covariance
        lv.partial_stderr = std::sqrt(std::max(0.0, grad.dot(table.covariance * grad)));
        lv.ratio = lv.partial_sum / f2.value;
        lv.ratio_stderr = std::abs(lv.ratio) * std::hypot(lv.partial_sum > 0 ? lv.partial_stderr / lv.partial_sum : 0.0,
                                                          f2.stderr_ / f2.value);
        if (lv.partial_sum == 0.0) lv.ratio_stderr = f2.value > 0 ? lv.partial_stderr / f2.value : 0.0;
        lv.bessel = lv.partial_sum <= f2.value + 3.0 * std::hypot(lv.partial_stderr, f2.stderr_);
        r.bessel = r.bessel && lv.bessel;
        if (lv.partial_sum < prev) r.monotone = false;
        prev = lv.partial_sum;
        r.levels.push_back(lv);
    }
    return r;
}

nlohmann::json ParsevalReport::to_json() const {
    nlohmann::json j;
    j["second_moment"] = json_number(second_moment);
    j["second_moment_stderr"] = json_number(second_moment_stderr);
    j["monotone"] = monotone;
    j["bessel"] = bessel;
    auto& arr = j["levels"] = nlohmann::json::array();
    for (const auto& l : levels)
        arr.push_back({{"degree", l.degree},
                       {"terms", l.terms},
                       {"partial_sum", json_number(l.partial_sum)},
                       {"partial_stderr", json_number(l.partial_stderr)},
                       {"ratio", json_number(l.ratio)},
                       {"ratio_stderr", json_number(l.ratio_stderr)},
                       {"bessel", l.bessel}});
    return j;
}

RecursiveProjection compare_recursive_projection(const MotionFunctional& f, const WeightedBasis& post,
                                                 const WeightedBasis& pre, const ProjectionSetup& setup,
                                                 std::size_t inner) {
    if (setup.u.size() != 2) throw std::invalid_argument("recursive projection is implemented for n = 2");
    if (post.index.level() != 1 || pre.index.level() != 2 || !pre.index.part(0).empty())
        throw std::invalid_argument("recursive projection needs a level-1 post basis and a (0, k) pre basis");
    if (inner == 0) throw std::invalid_argument("inner sample count must be positive");
    RecursiveProjection r;
    r.post_size = post.size();
    r.pre_size = pre.size();
    const std::size_t K = post.size() * pre.size();

    auto post_values = [&](const MotionStage& st) {
        StagedMotion one;
        one.stages.push_back(st);
        MotionIntegrals mi(one);
        return post.evaluate(mi);
    };

    const SeedLedger direct_seed = setup.seed.substream(1), rec_seed = setup.seed.substream(2);
    const Moments md = gather(setup.N, K, setup.threads, [&](std::uint64_t p, Eigen::VectorXd& x) {
        const StagedMotion motion = simulate_staged(setup.u, setup.stage, direct_seed, p);
        if (!motion.complete()) return false;
        const double fv = f(motion);
        MotionIntegrals mi(motion);
        const auto J = pre.evaluate(mi);
        const auto I = post_values(motion.stages.back());
        for (std::size_t i = 0; i < I.size(); ++i)
            for (std::size_t m = 0; m < J.size(); ++m) x[static_cast<Eigen::Index>(i * J.size() + m)] = fv * I[i] * J[m];
        return true;
    });
    const Moments mr = gather(setup.N, K, setup.threads, [&](std::uint64_t p, Eigen::VectorXd& x) {
        PathRng rng(rec_seed, p, 1);
        MotionStage first = simulate_stage(setup.u, setup.stage, rng);
        if (first.truncated || first.tau == kNoCollision) return false;
        std::vector<double> b(post.size(), 0.0), J;
        for (std::size_t k = 0; k < inner; ++k) {
            PathRng rk(rec_seed, p, 2 + k);
            StagedMotion motion;
            motion.stages.push_back(first);
            motion.stages.push_back(simulate_stage(first.next_start, setup.stage, rk));
            const double fv = f(motion);
            if (k == 0) {
                MotionIntegrals mi(motion);
                J = pre.evaluate(mi);
            }
            const auto I = post_values(motion.stages.back());
            for (std::size_t i = 0; i < b.size(); ++i) b[i] += fv * I[i] / static_cast<double>(inner);
        }
        for (std::size_t i = 0; i < b.size(); ++i)
            for (std::size_t m = 0; m < J.size(); ++m) x[static_cast<Eigen::Index>(i * J.size() + m)] = b[i] * J[m];
        return true;
    });
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    mean_cov(md, mean, cov);
    for (std::size_t k = 0; k < K; ++k) {
        r.direct.push_back(mean[static_cast<Eigen::Index>(k)]);
        r.direct_stderr.push_back(std::sqrt(std::max(0.0, cov(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)))));
    }
    mean_cov(mr, mean, cov);
    for (std::size_t k = 0; k < K; ++k) {
        r.recursive.push_back(mean[static_cast<Eigen::Index>(k)]);
        r.recursive_stderr.push_back(std::sqrt(std::max(0.0, cov(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)))));
    }
    return r;
}

MotionFunctional basis_functional(const WeightedBasis& basis, std::vector<double> coef,
                                  std::shared_ptr<const RhoWeights> weights) {
    if (coef.size() != basis.size()) throw std::invalid_argument("one coefficient per basis element expected");
    auto b = std::make_shared<const WeightedBasis>(basis);
    return [b, coef = std::move(coef), weights](const StagedMotion& motion) {
        MotionIntegrals mi(motion, weights);
        const auto e = b->evaluate(mi);
        double s = 0.0;
        for (std::size_t i = 0; i < e.size(); ++i) s += coef[i] * e[i];
        return s;
    };
}

// ---------------------------------------------------------------------------
// Clark integrands

std::vector<std::string> clark_tags() { return {"coordinate-at-T", "survival-indicator"}; }

ClarkIntegrand clark_integrand(const std::string& tag, const ClarkParams& p) {
    ClarkIntegrand q;
    q.tag = tag;
    q.horizon = p.t;
    if (!(p.t > 0.0)) throw std::invalid_argument("Clark integrand needs a positive time");
    if (tag == "coordinate-at-T") {
        if (p.coordinate >= p.u.size()) throw std::invalid_argument("coordinate out of range");
        q.mean = p.u[p.coordinate];
        const std::size_t j = p.coordinate;
        q.value = [j](double, std::span<const double>, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
            out[j] = 1.0;
        };
        return q;
    }
    if (tag == "survival-indicator") {
        auto field = p.field ? p.field : std::make_shared<const ClosedFormField>(Domain::weyl_chamber(p.u.size()));
        if (field->dimension() != p.u.size()) throw std::invalid_argument("survival field dimension differs from u");
        q.mean = field->alpha(p.t, p.u);
        const double t = p.t;
        q.value = [field, t](double s, std::span<const double> x, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
            const double lag = t - s;
            if (lag <= 0.0 || !field->domain().contains(x)) return;
            const double a = field->alpha(lag, x);
            if (a < kAlphaFloor) return;
            field->grad_log(lag, x, out);
            for (double& o : out) o = std::isfinite(o) ? o * a : 0.0;
        };
        return q;
    }
    throw std::logic_error("Clark integrand for '" + tag + "' is not implemented; supported: coordinate-at-T, survival-indicator");
}

double clark_reconstruction(const ClarkIntegrand& q, const SamplePath& path, double lifetime) {
    const TimeGrid& g = path.grid();
    const std::size_t steps = std::min(g.count_before(std::min(q.horizon, lifetime)), g.steps());
    const std::size_t n = path.dimension();
    std::vector<double> x(n), v(n);
    double s = q.mean;
    for (std::size_t j = 0; j < steps; ++j) {
        for (std::size_t i = 0; i < n; ++i) x[i] = path.value(i, j);
        q.value(g.time(j), x, v);
        for (std::size_t i = 0; i < n; ++i) s += v[i] * path.increment(i, j);
    }
    return s;
}

}  // namespace arratia
