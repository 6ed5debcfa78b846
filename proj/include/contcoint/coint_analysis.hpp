#pragma once

// Cointegration verdicts for a (factor model, pricing system) pair.
//
// The analytic route checks P^T c against the stationary block. Otherwise a
// nonzero deterministic trend in c^T P X rules cointegration out, and the
// remaining cases go to an empirical test: the empirical characteristic
// functions of c^T P X at two large times are compared, with a pooled
// bootstrap threshold under the hypothesis that both laws agree.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "contcoint/factor_models.hpp"
#include "contcoint/pricing_system.hpp"
#include "contcoint/simulation.hpp"

namespace contcoint {

enum class CointVerdict { cointegrated_analytic, cointegrated_empirical, not_cointegrated, inconclusive };

inline std::string to_string(CointVerdict v) {
    switch (v) {
        case CointVerdict::cointegrated_analytic:
            return "cointegrated_analytic";
        case CointVerdict::cointegrated_empirical:
            return "cointegrated_empirical";
        case CointVerdict::not_cointegrated:
            return "not_cointegrated";
        case CointVerdict::inconclusive:
            return "inconclusive";
    }
    return "unknown";
}

inline constexpr int kDefaultBootstrap = 500;
inline constexpr double kDefaultLevel = 0.99;
inline constexpr double kInconclusiveSlack = 1.2;
inline constexpr Index kMinEmpiricalPaths = 1000;
inline constexpr double kDriftTol = 1e-9;

/// +-{0.1, 0.2, ..., 3.0}.
inline std::vector<double> default_z_grid() {
    std::vector<double> z;
    for (int k = 30; k >= 1; --k) {
        z.push_back(-0.1 * k);
    }
    for (int k = 1; k <= 30; ++k) {
        z.push_back(0.1 * k);
    }
    return z;
}

struct CfTestResult {
    double d = 0.0;
    double d_star = 0.0;
    bool stationary = false;
    double t1 = 0.0;
    double t2 = 0.0;
    Index n_paths = 0;
    int n_boot = 0;
    double level = kDefaultLevel;
    std::vector<double> z_grid;
    std::vector<Complex> cf1;
    std::vector<Complex> cf2;
};

namespace detail {

inline void check_z_grid(const std::vector<double>& z) {
    if (z.empty()) {
        throw ParameterError("z grid is empty");
    }
    for (double v : z) {
        if (!std::isfinite(v)) {
            throw DomainError("z grid has non-finite entries");
        }
        const bool mirrored = std::any_of(z.begin(), z.end(), [&](double w) {
            return std::abs(w + v) <= 1e-12 * std::max(1.0, std::abs(v));
        });
        if (!mirrored) {
            throw ParameterError("z grid is not symmetric around 0 (missing " + fmt17(-v) + ")");
        }
    }
}

inline std::vector<Complex> empirical_cf(const std::vector<double>& y, const std::vector<double>& z) {
    std::vector<Complex> out;
    out.reserve(z.size());
    for (double zz : z) {
        double re = 0.0, im = 0.0;
        for (double v : y) {
            re += std::cos(zz * v);
            im += std::sin(zz * v);
        }
        out.emplace_back(re / static_cast<double>(y.size()), im / static_cast<double>(y.size()));
    }
    return out;
}

}  // namespace detail

/// Two-sample CF distance D = max_z |phi_a(z) - phi_b(z)| with a pooled
/// bootstrap threshold D* at `level`. Passes (stationary = true) iff D <= D*.
inline CfTestResult cf_two_sample_test(const std::vector<double>& a, const std::vector<double>& b,
                                       const std::vector<double>& z_grid, int n_boot,
                                       std::uint64_t seed, double level = kDefaultLevel,
                                       int workers = 1) {
    detail::check_z_grid(z_grid);
    if (a.size() < 2 || b.size() < 2) {
        throw InsufficientSampleError("cf test: need at least two samples per time");
    }
    if (n_boot < 10) {
        throw ParameterError("cf test: need at least 10 bootstrap resamples");
    }
    if (!(level > 0.0 && level < 1.0)) {
        throw ParameterError("cf test: level must lie in (0, 1)");
    }
    CfTestResult r;
    r.z_grid = z_grid;
    r.n_boot = n_boot;
    r.level = level;
    r.cf1 = detail::empirical_cf(a, z_grid);
    r.cf2 = detail::empirical_cf(b, z_grid);
    for (std::size_t i = 0; i < z_grid.size(); ++i) {
        r.d = std::max(r.d, std::abs(r.cf1[i] - r.cf2[i]));
    }

    // |phi(-z) - psi(-z)| = |phi(z) - psi(z)| for real samples, so only |z| is needed.
    std::vector<double> zs;
    for (double v : z_grid) {
        const double av = std::abs(v);
        if (std::none_of(zs.begin(), zs.end(), [&](double w) { return std::abs(w - av) <= 1e-12; })) {
            zs.push_back(av);
        }
    }
    const Index n1 = static_cast<Index>(a.size());
    const Index n2 = static_cast<Index>(b.size());
    const Index n = n1 + n2;
    const Index nz = static_cast<Index>(zs.size());
    Matrix cosm(n, nz), sinm(n, nz);
    for (Index i = 0; i < n; ++i) {
        const double y = i < n1 ? a[static_cast<std::size_t>(i)] : b[static_cast<std::size_t>(i - n1)];
        for (Index j = 0; j < nz; ++j) {
            cosm(i, j) = std::cos(zs[static_cast<std::size_t>(j)] * y);
            sinm(i, j) = std::sin(zs[static_cast<std::size_t>(j)] * y);
        }
    }
    std::vector<double> stats(static_cast<std::size_t>(n_boot));
    const Index chunk = std::max<Index>(1, 4000000 / n);
    const Index n_chunks = (n_boot + chunk - 1) / chunk;
    parallel_ranges(n_chunks, workers, [&](Index lo, Index hi) {
        for (Index c = lo; c < hi; ++c) {
            const Index b0 = c * chunk;
            const Index rows = std::min<Index>(chunk, n_boot - b0);
            Matrix w = Matrix::Zero(rows, n);
            for (Index r_ = 0; r_ < rows; ++r_) {
                Rng rng = substream(seed, static_cast<std::uint64_t>(b0 + r_), 0xcf);
                std::uniform_int_distribution<Index> pick(0, n - 1);
                for (Index k = 0; k < n1; ++k) {
                    w(r_, pick(rng)) += 1.0 / static_cast<double>(n1);
                }
                for (Index k = 0; k < n2; ++k) {
                    w(r_, pick(rng)) -= 1.0 / static_cast<double>(n2);
                }
            }
            const Matrix re = w * cosm;
            const Matrix im = w * sinm;
            for (Index r_ = 0; r_ < rows; ++r_) {
                double dmax = 0.0;
                for (Index j = 0; j < nz; ++j) {
                    dmax = std::max(dmax, std::hypot(re(r_, j), im(r_, j)));
                }
                stats[static_cast<std::size_t>(b0 + r_)] = dmax;
            }
        }
    });
    std::sort(stats.begin(), stats.end());
    const auto k = static_cast<std::size_t>(
        std::clamp<double>(std::ceil(level * n_boot) - 1.0, 0.0, n_boot - 1.0));
    r.d_star = stats[k];
    r.stationary = r.d <= r.d_star;
    return r;
}

struct EmpiricalOptions {
    std::optional<double> t1;
    std::optional<double> t2;
    std::vector<double> z_grid = default_z_grid();
    Index n_paths = 2000;
    std::uint64_t seed = 0;
    int n_boot = kDefaultBootstrap;
    double level = kDefaultLevel;
    int workers = 1;
};

/// Default large times: 8 and 16 relaxation times of the model.
inline std::pair<double, double> default_test_times(const CompositeModel& model) {
    const double tau = relaxation_time(model);
    return {8.0 * tau, 16.0 * tau};
}

/// Second independent path set for the later time.
inline constexpr std::uint64_t kSecondSampleOffset = 1ULL << 40;

inline CfTestResult empirical_cf_convergence(const CompositeModel& model, const PricingSystem& sys,
                                             double t1, double t2, const std::vector<double>& z_grid,
                                             Index n_paths, std::uint64_t seed, int n_boot = kDefaultBootstrap,
                                             double level = kDefaultLevel, int workers = 1) {
    if (n_paths < kMinEmpiricalPaths) {
        throw InsufficientSampleError("empirical cf test: n_paths=" + std::to_string(n_paths) +
                                      " below the minimum of " + std::to_string(kMinEmpiricalPaths));
    }
    if (!(t1 > 0.0) || !(t2 > t1) || !std::isfinite(t2)) {
        throw ParameterError("empirical cf test: need 0 < t1 < t2");
    }
    if (!sys.c) {
        throw PreconditionError("empirical cf test: no cointegration vector c");
    }
    if (sys.p.cols() != factor_dim(model)) {
        throw DimensionError("empirical cf test: P has " + std::to_string(sys.p.cols()) +
                             " columns but the model has dimension " + std::to_string(factor_dim(model)));
    }
    if (sys.c->size() != sys.p.rows()) {
        throw DimensionError("empirical cf test: c has length " + std::to_string(sys.c->size()) +
                             " but P has " + std::to_string(sys.p.rows()) + " rows");
    }
    for (const auto& b : model.blocks) {
        if (const auto* ls = std::get_if<LsKernel>(&b); ls && !ls->two_sided && t1 < ls->burn_in) {
            throw ParameterError("empirical cf test: t1 is inside the burn-in horizon");
        }
    }
    detail::check_z_grid(z_grid);
    const Vector a = sys.p.transpose() * *sys.c;
    SimOptions o1;
    o1.workers = workers;
    SimOptions o2 = o1;
    o2.path_offset = kSecondSampleOffset;
    const auto e1 = simulate(model, TimeGrid{t1}, n_paths, seed, o1);
    const auto e2 = simulate(model, TimeGrid{t2}, n_paths, seed, o2);
    CfTestResult r = cf_two_sample_test(e1.project(0, a), e2.project(0, a), z_grid, n_boot,
                                        seed ^ 0x9e3779b97f4a7c15ULL, level, workers);
    r.t1 = t1;
    r.t2 = t2;
    r.n_paths = n_paths;
    return r;
}

inline CfTestResult empirical_cf_convergence(const CompositeModel& model, const PricingSystem& sys,
                                             const EmpiricalOptions& opt) {
    const auto [d1, d2] = default_test_times(model);
    return empirical_cf_convergence(model, sys, opt.t1.value_or(d1), opt.t2.value_or(d2), opt.z_grid,
                                    opt.n_paths, opt.seed, opt.n_boot, opt.level, opt.workers);
}

/// The first m coordinates of a composite model as a model of their own.
/// A multivariate OU block may be cut when its first coordinates do not
/// depend on the rest; any other straddling block is rejected.
inline CompositeModel leading_block(const CompositeModel& model, Index m) {
    CompositeModel out;
    Index off = 0;
    for (const auto& b : model.blocks) {
        if (off >= m) {
            break;
        }
        const Index k = factor_dim(b);
        if (off + k <= m) {
            out.blocks.push_back(b);
        } else {
            const Index keep = m - off;
            const auto* ou = std::get_if<MultivariateOU>(&b);
            if (!ou || !ou->c.topRightCorner(keep, k - keep).isZero(0.0)) {
                throw PreconditionError("stationary block of size m=" + std::to_string(m) +
                                        " cuts through a " + model_tag(b) +
                                        " block whose leading coordinates depend on the rest");
            }
            MultivariateOU sub;
            sub.mu = ou->mu.head(keep);
            sub.c = ou->c.topLeftCorner(keep, keep);
            sub.sigma = ou->sigma.topRows(keep);
            sub.driver = ou->driver;
            sub.x0 = ou->x0.head(keep);
            sub.start = ou->start;
            out.blocks.push_back(FactorModel{sub});
        }
        off += k;
    }
    return out;
}

struct CointReport {
    CointVerdict verdict = CointVerdict::not_cointegrated;
    Vector image;           // P^T c
    bool in_cx_m = false;   // P^T c in C_X^m
    Vector residual;        // (P^T c)_j, j > m
    bool block_stationary = false;
    std::string block_reason;
    std::optional<double> drift_loading;
    bool in_declared_span = false;
    std::optional<CfTestResult> cf;
    std::vector<double> z_grid;
    std::string note;
};

struct ClassifyOptions {
    EmpiricalOptions empirical;
    bool run_empirical = true;
};

inline CointReport classify(const CompositeModel& model, const PricingSystem& sys,
                            const ClassifyOptions& opt = {}) {
    validate(model);
    validate(sys);
    if (!sys.m) {
        throw PreconditionError("classify: stationary block size m is not declared");
    }
    if (!sys.c) {
        throw PreconditionError("classify: no cointegration vector c");
    }
    if (sys.n() != factor_dim(model)) {
        throw DimensionError("classify: P has " + std::to_string(sys.n()) +
                             " columns but the model has dimension " + std::to_string(factor_dim(model)));
    }
    const Index m = *sys.m;
    CointReport r;
    r.z_grid = opt.empirical.z_grid;
    r.image = sys.p.transpose() * *sys.c;
    const auto pair = is_coint_pair(sys.p, *sys.c, m);
    r.in_cx_m = pair.yes;
    r.residual = pair.residual;
    if (m == 0) {
        r.block_stationary = true;
        r.block_reason = "empty_block";
    } else {
        const auto v = classify_stationary(leading_block(model, m));
        r.block_stationary = v.stationary();
        r.block_reason = v.reason;
    }
    const auto space = CointSpaceBasis::standard(sys.n(), m, sys.extra_stationary);
    r.in_declared_span = space.contains(r.image);
    if (r.in_cx_m && r.block_stationary) {
        r.verdict = CointVerdict::cointegrated_analytic;
        r.note = "analytic: P^T c loads only the stationary block";
        return r;
    }
    r.drift_loading = drift_loading(model, r.image);
    const double drift_scale = kDriftTol * std::max(1.0, r.image.norm());
    if (!r.drift_loading || std::abs(*r.drift_loading) > drift_scale) {
        r.verdict = CointVerdict::not_cointegrated;
        r.note = r.drift_loading ? "deterministic trend in c^T S" : "mean diverges";
        return r;
    }
    if (!opt.run_empirical) {
        r.verdict = CointVerdict::inconclusive;
        r.note = "empirical test disabled";
        return r;
    }
    r.cf = empirical_cf_convergence(model, sys, opt.empirical);
    if (r.cf->stationary) {
        r.verdict = CointVerdict::cointegrated_empirical;
        r.note = "empirical cf stable between t1 and t2; continuity of the limit at z=0 is not verified";
    } else if (r.in_declared_span && r.cf->d <= kInconclusiveSlack * r.cf->d_star) {
        r.verdict = CointVerdict::inconclusive;
        r.note = "declared stationary direction failed the bootstrap narrowly";
    } else {
        r.verdict = CointVerdict::not_cointegrated;
        r.note = "empirical cf differs between t1 and t2";
    }
    return r;
}

struct LimitingLaw {
    double mean = 0.0;
    double variance = 0.0;
    bool gaussian = true;
};

/// Law of c^T P X(infinity) for an analytically cointegrated system. For
/// jump drivers only the first two moments are reported (gaussian = false).
inline LimitingLaw limiting_law(const CompositeModel& model, const PricingSystem& sys) {
    ClassifyOptions opt;
    opt.run_empirical = false;
    const auto rep = classify(model, sys, opt);
    if (rep.verdict != CointVerdict::cointegrated_analytic) {
        throw PreconditionError("limiting_law: system is not analytically cointegrated");
    }
    const Index m = *sys.m;
    LimitingLaw law;
    if (m == 0) {
        return law;
    }
    const Vector am = rep.image.head(m);
    const CompositeModel block = leading_block(model, m);
    Index off = 0;
    for (const auto& b : block.blocks) {
        const Index k = factor_dim(b);
        const Vector ab = am.segment(off, k);
        off += k;
        std::visit(
            [&](const auto& x) {
                using T = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<T, DriftedBM>) {
                    law.mean += ab.dot(x.x0);
                } else if constexpr (std::is_same_v<T, MultivariateOU> || std::is_same_v<T, Carma>) {
                    MultivariateOU ou;
                    Vector w = ab;
                    if constexpr (std::is_same_v<T, Carma>) {
                        ou = carma_as_ou(x);
                        w = ab(0) * x.b;
                    } else {
                        ou = x;
                    }
                    const GaussianLaw g = ou_stationary_law(ou);
                    law.mean += w.dot(g.mean);
                    law.variance += w.dot(g.covariance * w);
                    law.gaussian = law.gaussian && ou.driver.is_brownian();
                } else {
                    law.variance += ab.dot(ls_stationary_cov(x) * ab);
                    law.gaussian = law.gaussian && x.driver.is_brownian();
                }
            },
            b);
    }
    return law;
}

/// CSV of the empirical characteristic functions: `t,z,re,im`.
inline std::string cf_csv(const CfTestResult& r) {
    std::string out = "t,z,re,im\n";
    for (int which = 0; which < 2; ++which) {
        const auto& cf = which == 0 ? r.cf1 : r.cf2;
        const double t = which == 0 ? r.t1 : r.t2;
        for (std::size_t i = 0; i < r.z_grid.size(); ++i) {
            out += fmt17(t) + "," + fmt17(r.z_grid[i]) + "," + fmt17(cf[i].real()) + "," +
                   fmt17(cf[i].imag()) + "\n";
        }
    }
    return out;
}

}  // namespace contcoint
