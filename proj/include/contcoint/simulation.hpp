#pragma once

// Seeded Monte Carlo paths for every factor-model kind.
//
// Linear-Gaussian parts are sampled from their exact transition laws, so the
// time grid introduces no discretisation bias. Jumps of compound-Poisson
// drivers are placed at exact (uniform order statistic) times. LS kernel
// processes are discretised as midpoint sums of the stochastic convolution on
// a lattice of step `substep`.
//
// Every (path, block) pair owns its own generator seeded from (seed, path,
// block), so results do not depend on how paths are split across workers.

#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "contcoint/factor_models.hpp"
#include "contcoint/io.hpp"

namespace contcoint {

struct TimeGrid {
    std::vector<double> points;

    TimeGrid() = default;
    explicit TimeGrid(std::vector<double> p) : points(std::move(p)) { validate(); }
    TimeGrid(std::initializer_list<double> p) : points(p) { validate(); }

    /// n+1 equally spaced points from t0 to t1.
    static TimeGrid uniform(double t0, double t1, int n) {
        if (n < 1) {
            throw ParameterError("time grid: need at least one step");
        }
        std::vector<double> p(static_cast<std::size_t>(n) + 1);
        for (int i = 0; i <= n; ++i) {
            p[static_cast<std::size_t>(i)] = t0 + (t1 - t0) * i / n;
        }
        return TimeGrid(std::move(p));
    }

    Index size() const noexcept { return static_cast<Index>(points.size()); }
    double operator[](Index i) const { return points[static_cast<std::size_t>(i)]; }

    void validate() const {
        if (points.empty()) {
            throw ParameterError("time grid: empty");
        }
        if (!(points.front() >= 0.0)) {
            throw ParameterError("time grid: first point must be nonnegative");
        }
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (!std::isfinite(points[i])) {
                throw DomainError("time grid: non-finite point");
            }
            if (i > 0 && !(points[i] > points[i - 1])) {
                throw ParameterError("time grid: points must be strictly increasing");
            }
        }
    }

    /// Index of t in the grid; throws RangeError when absent.
    Index index_of(double t) const {
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (std::abs(points[i] - t) <= 1e-12 * std::max(1.0, std::abs(t))) {
                return static_cast<Index>(i);
            }
        }
        throw RangeError("time grid: " + fmt17(t) + " is not a grid point");
    }
};

/// values are stored path-major: ((path * n_times) + time) * dim + coordinate.
struct PathEnsemble {
    TimeGrid grid;
    Index dim = 0;
    Index n_paths = 0;
    std::vector<double> values;
    std::uint64_t seed = 0;
    std::string model_digest;

    Index n_times() const noexcept { return grid.size(); }

    double operator()(Index path, Index t, Index k) const {
        return values[static_cast<std::size_t>((path * n_times() + t) * dim + k)];
    }

    Vector state(Index path, Index t) const {
        Vector v(dim);
        for (Index k = 0; k < dim; ++k) {
            v(k) = (*this)(path, t, k);
        }
        return v;
    }

    /// a^T X(t) for every path.
    std::vector<double> project(Index t, const Vector& a) const {
        if (a.size() != dim) {
            throw DimensionError("project: direction has length " + std::to_string(a.size()) +
                                 " but the ensemble has dimension " + std::to_string(dim));
        }
        if (t < 0 || t >= n_times()) {
            throw RangeError("project: time index out of range");
        }
        std::vector<double> out(static_cast<std::size_t>(n_paths));
        for (Index p = 0; p < n_paths; ++p) {
            const double* row = &values[static_cast<std::size_t>((p * n_times() + t) * dim)];
            double s = 0.0;
            for (Index k = 0; k < dim; ++k) {
                s += a(k) * row[k];
            }
            out[static_cast<std::size_t>(p)] = s;
        }
        return out;
    }
};

struct SimOptions {
    int workers = 1;
    /// Added to the path index when deriving substreams; lets callers draw a
    /// second, independent set of paths from the same seed.
    std::uint64_t path_offset = 0;
    /// Largest admitted kernel variation over half a lattice cell.
    double resolution_tol = 0.01;
};

using Rng = std::mt19937_64;

/// Generator for (seed, stream, block).
inline Rng substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t block) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
                      0x636f696eU};
    return Rng(seq);
}

inline Vector standard_normals(Rng& rng, Index n) {
    std::normal_distribution<double> nd;
    Vector v(n);
    for (Index i = 0; i < n; ++i) {
        v(i) = nd(rng);
    }
    return v;
}

/// Runs body(begin, end) over [0, n) split into contiguous chunks.
template <class F>
void parallel_ranges(Index n, int workers, F&& body) {
    workers = std::max(1, std::min<int>(workers, static_cast<int>(std::max<Index>(n, 1))));
    if (workers == 1) {
        body(Index{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    const Index chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const Index lo = std::min(n, w * chunk);
        const Index hi = std::min(n, lo + chunk);
        pool.emplace_back([&, w, lo, hi] {
            try {
                body(lo, hi);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

namespace detail {

struct OuTransition {
    Matrix f;       // e^{C dt}
    Vector b;       // int_0^dt e^{Cs} mu ds, including jump compensation
    Matrix factor;  // square root of the diffusion transition covariance
};

struct OuPlan {
    MultivariateOU ou;
    Matrix out;  // observation map (identity or b^T for CARMA)
    std::vector<double> steps;  // dt before each grid point (first may be 0)
    std::map<double, OuTransition> cache;
    Matrix stationary_factor;
    Vector stationary_mean;
    Matrix jump_factor;
    bool jumps = false;
};

inline OuPlan plan_ou(const MultivariateOU& ou, Matrix out, const TimeGrid& grid) {
    OuPlan plan;
    plan.ou = ou;
    plan.out = std::move(out);
    const Matrix q = ou.sigma * ou.driver.diffusion() * ou.sigma.transpose();
    plan.jumps = !ou.driver.is_brownian();
    Vector comp = Vector::Zero(ou.mu.size());
    if (plan.jumps) {
        comp = -ou.driver.rate() * (ou.sigma * ou.driver.jump_mean());
        plan.jump_factor = psd_factor(ou.driver.jump_cov());
    }
    double prev = 0.0;
    for (double t : grid.points) {
        const double dt = t - prev;
        plan.steps.push_back(dt);
        prev = t;
        if (dt > 0.0 && !plan.cache.count(dt)) {
            OuTransition tr;
            tr.f = mat_exp(ou.c, dt);
            tr.b = integrate_mat_exp(ou.c, ou.mu + comp, dt);
            tr.factor = psd_factor(transition_covariance(ou.c, q, dt));
            plan.cache.emplace(dt, std::move(tr));
        }
    }
    if (ou.start == StartKind::stationary) {
        const GaussianLaw law = ou_stationary_law(ou);
        plan.stationary_mean = law.mean;
        plan.stationary_factor = psd_factor(law.covariance);
    }
    return plan;
}

inline void run_ou_path(const OuPlan& plan, Rng& rng, Index n_times, Index dim, Index col0,
                        double* row0) {
    const MultivariateOU& ou = plan.ou;
    const Index n = ou.mu.size();
    Vector x = ou.x0;
    if (ou.start == StartKind::stationary) {
        x = plan.stationary_mean + plan.stationary_factor * standard_normals(rng, n);
    }
    for (Index k = 0; k < n_times; ++k) {
        const double dt = plan.steps[static_cast<std::size_t>(k)];
        if (dt > 0.0) {
            const OuTransition& tr = plan.cache.at(dt);
            Vector next = tr.f * x + tr.b + tr.factor * standard_normals(rng, n);
            if (plan.jumps) {
                std::poisson_distribution<long> pois(ou.driver.rate() * dt);
                std::uniform_real_distribution<double> unif(0.0, dt);
                const long nj = pois(rng);
                for (long j = 0; j < nj; ++j) {
                    const double u = unif(rng);
                    const Vector jump = ou.driver.jump_mean() +
                                        plan.jump_factor * standard_normals(rng, ou.driver.dim());
                    next += mat_exp(ou.c, dt - u) * (ou.sigma * jump);
                }
            }
            x = std::move(next);
        }
        const Vector y = plan.out * x;
        double* row = row0 + k * dim + col0;
        for (Index i = 0; i < y.size(); ++i) {
            row[i] = y(i);
        }
    }
}

struct LsPlan {
    const LsKernel* model = nullptr;
    std::vector<double> xs;
    double h = 0.0;
    long burn_cells = 0;
    long cell_lo = 0;
    long cell_hi = 0;  // exclusive
    std::vector<long> record;             // lattice index of each grid point
    std::vector<std::vector<Matrix>> lags;  // [x][i] = G((i + 1/2) h + x)
    Matrix diffusion_factor;
    Matrix jump_factor;
};

inline LsPlan plan_ls(const LsKernel& m, const std::vector<double>& xs, const TimeGrid& grid,
                      double resolution_tol) {
    validate(FactorModel{m});
    LsPlan plan;
    plan.model = &m;
    plan.xs = xs;
    plan.h = m.substep;
    if (m.lipschitz * m.substep / 2.0 > resolution_tol) {
        throw ResolutionError("ls simulation: substep " + fmt17(m.substep) +
                              " too coarse for kernel Lipschitz bound " + fmt17(m.lipschitz));
    }
    for (double x : xs) {
        if (!(x >= 0.0) || !std::isfinite(x)) {
            throw DomainError("ls simulation: time to maturity must be nonnegative");
        }
    }
    for (double t : grid.points) {
        const double r = t / plan.h;
        const long k = std::lround(r);
        if (std::abs(r - static_cast<double>(k)) > 1e-9 * std::max(1.0, r)) {
            throw ResolutionError("ls simulation: grid point " + fmt17(t) +
                                  " is not a multiple of the substep " + fmt17(plan.h));
        }
        plan.record.push_back(k);
    }
    plan.burn_cells = static_cast<long>(std::ceil(m.burn_in / plan.h - 1e-9));
    plan.cell_lo = m.two_sided ? plan.record.front() - plan.burn_cells : 0;
    if (!m.two_sided) {
        plan.cell_lo = 0;
    }
    plan.cell_hi = plan.record.back();
    plan.lags.resize(xs.size());
    for (std::size_t ix = 0; ix < xs.size(); ++ix) {
        auto& row = plan.lags[ix];
        row.reserve(static_cast<std::size_t>(plan.burn_cells));
        for (long i = 0; i < plan.burn_cells; ++i) {
            row.push_back(m.kernel((static_cast<double>(i) + 0.5) * plan.h + xs[ix]));
        }
    }
    plan.diffusion_factor = psd_factor(m.driver.diffusion());
    if (!m.driver.is_brownian()) {
        plan.jump_factor = psd_factor(m.driver.jump_cov());
    }
    return plan;
}

inline void run_ls_path(const LsPlan& plan, Rng& rng, Index n_times, Index dim, Index col0,
                        double* row0) {
    const LsKernel& m = *plan.model;
    const Index k = m.noise_dim;
    const long ncells = plan.cell_hi - plan.cell_lo;
    const double sqrt_h = std::sqrt(plan.h);
    Matrix noise(k, std::max<long>(ncells, 0));
    for (long j = 0; j < ncells; ++j) {
        noise.col(j) = plan.diffusion_factor * (sqrt_h * standard_normals(rng, k));
    }
    struct Jump {
        double time;
        Vector size;
    };
    std::vector<Jump> jumps;
    if (!m.driver.is_brownian() && ncells > 0) {
        const Vector comp = -m.driver.rate() * plan.h * m.driver.jump_mean();
        for (long j = 0; j < ncells; ++j) {
            noise.col(j) += comp;
        }
        const double lo = static_cast<double>(plan.cell_lo) * plan.h;
        const double span = static_cast<double>(ncells) * plan.h;
        std::poisson_distribution<long> pois(m.driver.rate() * span);
        std::uniform_real_distribution<double> unif(0.0, span);
        const long nj = pois(rng);
        jumps.reserve(static_cast<std::size_t>(nj));
        for (long j = 0; j < nj; ++j) {
            const double tau = lo + unif(rng);
            Vector size = m.driver.jump_mean() + plan.jump_factor * standard_normals(rng, k);
            jumps.push_back({tau, std::move(size)});
        }
    }
    const Index mo = m.out_dim;
    for (Index ti = 0; ti < n_times; ++ti) {
        const long kk = plan.record[static_cast<std::size_t>(ti)];
        const double t = static_cast<double>(kk) * plan.h;
        const long first = std::max(plan.cell_lo, m.two_sided ? kk - plan.burn_cells
                                                              : std::max(0L, kk - plan.burn_cells));
        for (std::size_t ix = 0; ix < plan.xs.size(); ++ix) {
            Vector acc = Vector::Zero(mo);
            const auto& lag = plan.lags[ix];
            for (long j = first; j < kk; ++j) {
                acc.noalias() += lag[static_cast<std::size_t>(kk - j - 1)] * noise.col(j - plan.cell_lo);
            }
            const double window_lo = static_cast<double>(first) * plan.h;
            for (const auto& jp : jumps) {
                if (jp.time >= window_lo && jp.time < t) {
                    acc.noalias() += m.kernel(t - jp.time + plan.xs[ix]) * jp.size;
                }
            }
            double* row = row0 + ti * dim + col0 + static_cast<Index>(ix) * mo;
            for (Index i = 0; i < mo; ++i) {
                row[i] = acc(i);
            }
        }
    }
}

using BlockPlan = std::variant<OuPlan, LsPlan>;

inline BlockPlan plan_block(const FactorModel& block, const TimeGrid& grid, const SimOptions& opt) {
    return std::visit(
        [&](const auto& m) -> BlockPlan {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, DriftedBM>) {
                const Index n = m.mu.size();
                return plan_ou(drifted_bm_as_ou(m), Matrix::Identity(n, n), grid);
            } else if constexpr (std::is_same_v<T, MultivariateOU>) {
                const Index n = m.mu.size();
                return plan_ou(m, Matrix::Identity(n, n), grid);
            } else if constexpr (std::is_same_v<T, Carma>) {
                return plan_ou(carma_as_ou(m), m.b.transpose(), grid);
            } else {
                return plan_ls(m, {0.0}, grid, opt.resolution_tol);
            }
        },
        block);
}

inline void run_block_path(const BlockPlan& plan, Rng& rng, Index n_times, Index dim, Index col0,
                           double* row0) {
    if (const auto* ou = std::get_if<OuPlan>(&plan)) {
        run_ou_path(*ou, rng, n_times, dim, col0, row0);
    } else {
        run_ls_path(std::get<LsPlan>(plan), rng, n_times, dim, col0, row0);
    }
}

inline void check_finite(const PathEnsemble& e) {
    for (double v : e.values) {
        if (!std::isfinite(v)) {
            throw NumericError("simulation produced non-finite values");
        }
    }
}

}  // namespace detail

inline PathEnsemble simulate(const CompositeModel& model, const TimeGrid& grid, Index n_paths,
                             std::uint64_t seed, const SimOptions& opt = {}) {
    validate(model);
    grid.validate();
    if (n_paths < 1) {
        throw ParameterError("simulate: n_paths must be positive");
    }
    std::vector<detail::BlockPlan> plans;
    std::vector<Index> cols;
    Index dim = 0;
    for (const auto& b : model.blocks) {
        if (const auto* ls = std::get_if<LsKernel>(&b)) {
            check_kernel_truncation(*ls);
        }
        plans.push_back(detail::plan_block(b, grid, opt));
        cols.push_back(dim);
        dim += factor_dim(b);
    }
    PathEnsemble e;
    e.grid = grid;
    e.dim = dim;
    e.n_paths = n_paths;
    e.seed = seed;
    e.model_digest = model_digest(model);
    e.values.assign(static_cast<std::size_t>(n_paths * grid.size() * dim), 0.0);
    const Index nt = grid.size();
    parallel_ranges(n_paths, opt.workers, [&](Index lo, Index hi) {
        for (Index p = lo; p < hi; ++p) {
            double* row0 = &e.values[static_cast<std::size_t>(p * nt * dim)];
            for (std::size_t b = 0; b < plans.size(); ++b) {
                Rng rng = substream(seed, static_cast<std::uint64_t>(p) + opt.path_offset, b);
                detail::run_block_path(plans[b], rng, nt, dim, cols[b], row0);
            }
        }
    });
    detail::check_finite(e);
    return e;
}

/// Samples the random field X~(t, x) = int G(t - s + x) dL(s) for every x in
/// `xs` using one realisation of the driving noise per path. Coordinates are
/// ordered x-major: (x_0 components, x_1 components, ...). With xs = {0} the
/// result coincides with simulate() for the same seed.
inline PathEnsemble simulate_ls_field(const LsKernel& model, const std::vector<double>& xs,
                                      const TimeGrid& grid, Index n_paths, std::uint64_t seed,
                                      const SimOptions& opt = {}) {
    if (xs.empty()) {
        throw ParameterError("simulate_ls_field: empty list of maturities");
    }
    if (n_paths < 1) {
        throw ParameterError("simulate_ls_field: n_paths must be positive");
    }
    check_kernel_truncation(model);
    const detail::LsPlan plan = detail::plan_ls(model, xs, grid, opt.resolution_tol);
    PathEnsemble e;
    e.grid = grid;
    e.dim = model.out_dim * static_cast<Index>(xs.size());
    e.n_paths = n_paths;
    e.seed = seed;
    std::string tag = describe(FactorModel{model}) + "@x=";
    for (double x : xs) {
        tag += fmt17(x) + ",";
    }
    {
        std::uint64_t hsh = 0xcbf29ce484222325ULL;
        for (unsigned char ch : tag) {
            hsh ^= ch;
            hsh *= 0x100000001b3ULL;
        }
        std::ostringstream os;
        os << std::hex;
        os.width(16);
        os.fill('0');
        os << hsh;
        e.model_digest = os.str();
    }
    e.values.assign(static_cast<std::size_t>(n_paths * grid.size() * e.dim), 0.0);
    const Index nt = grid.size();
    parallel_ranges(n_paths, opt.workers, [&](Index lo, Index hi) {
        for (Index p = lo; p < hi; ++p) {
            Rng rng = substream(seed, static_cast<std::uint64_t>(p) + opt.path_offset, 0);
            detail::run_ls_path(plan, rng, nt, e.dim, 0, &e.values[static_cast<std::size_t>(p * nt * e.dim)]);
        }
    });
    detail::check_finite(e);
    return e;
}

struct Moments {
    Vector mean;
    Matrix cov;
    Vector stderr_mean;
};

inline Moments ensemble_moments(const PathEnsemble& e, Index t_index) {
    if (e.n_paths < 2) {
        throw InsufficientSampleError("ensemble_moments: need at least two paths");
    }
    if (t_index < 0 || t_index >= e.n_times()) {
        throw RangeError("ensemble_moments: time index out of range");
    }
    Matrix x(e.n_paths, e.dim);
    for (Index p = 0; p < e.n_paths; ++p) {
        for (Index k = 0; k < e.dim; ++k) {
            x(p, k) = e(p, t_index, k);
        }
    }
    Moments m;
    m.mean = x.colwise().mean();
    const Matrix centred = x.rowwise() - m.mean.transpose();
    m.cov = centred.transpose() * centred / static_cast<double>(e.n_paths - 1);
    m.stderr_mean = (m.cov.diagonal().cwiseMax(0.0) / static_cast<double>(e.n_paths)).cwiseSqrt();
    return m;
}

/// Bootstrap standard error of each entry of the sample covariance.
inline Matrix covariance_bootstrap_stderr(const PathEnsemble& e, Index t_index, int n_boot,
                                          std::uint64_t seed) {
    if (e.n_paths < 2) {
        throw InsufficientSampleError("covariance_bootstrap_stderr: need at least two paths");
    }
    if (n_boot < 2) {
        throw ParameterError("covariance_bootstrap_stderr: need at least two resamples");
    }
    const Index n = e.n_paths;
    const Index d = e.dim;
    Matrix x(n, d);
    for (Index p = 0; p < n; ++p) {
        for (Index k = 0; k < d; ++k) {
            x(p, k) = e(p, t_index, k);
        }
    }
    Matrix sum = Matrix::Zero(d, d);
    Matrix sum_sq = Matrix::Zero(d, d);
    for (int b = 0; b < n_boot; ++b) {
        Rng rng = substream(seed, static_cast<std::uint64_t>(b), 0xb007);
        std::uniform_int_distribution<Index> pick(0, n - 1);
        Vector s1 = Vector::Zero(d);
        Matrix s2 = Matrix::Zero(d, d);
        for (Index i = 0; i < n; ++i) {
            const auto row = x.row(pick(rng));
            s1 += row.transpose();
            s2.noalias() += row.transpose() * row;
        }
        const Vector mean = s1 / static_cast<double>(n);
        const Matrix cov = (s2 - static_cast<double>(n) * mean * mean.transpose()) /
                           static_cast<double>(n - 1);
        sum += cov;
        sum_sq += cov.cwiseProduct(cov);
    }
    const double nb = n_boot;
    const Matrix var = (sum_sq - sum.cwiseProduct(sum) / nb) / (nb - 1.0);
    return var.cwiseMax(0.0).cwiseSqrt();
}

/// CSV with header `t,path,x1..xdim`, rows ordered by path then time.
inline std::string ensemble_csv(const PathEnsemble& e) {
    std::string out = "t,path";
    for (Index k = 0; k < e.dim; ++k) {
        out += ",x" + std::to_string(k + 1);
    }
    out += "\n";
    for (Index p = 0; p < e.n_paths; ++p) {
        for (Index t = 0; t < e.n_times(); ++t) {
            out += fmt17(e.grid[t]);
            out += ",";
            out += std::to_string(p);
            for (Index k = 0; k < e.dim; ++k) {
                out += ",";
                out += fmt17(e(p, t, k));
            }
            out += "\n";
        }
    }
    return out;
}

}  // namespace contcoint
