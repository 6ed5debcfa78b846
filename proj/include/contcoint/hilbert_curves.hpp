#pragma once

// Forward curves as elements of the Filipovic space H_w on a finite grid.
//
// The weight is w(x) = exp(alpha_w x). Inner products use five-point
// finite-difference derivatives and Hermite-corrected trapezoid quadrature up
// to the last grid point. The shift semigroup resamples with monotone cubic
// (PCHIP) interpolation and extends curves flat beyond the grid.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "contcoint/coint_analysis.hpp"
#include "contcoint/factor_models.hpp"
#include "contcoint/io.hpp"
#include "contcoint/simulation.hpp"

namespace contcoint {

struct WeightSpec {
    double alpha = 0.1;

    double operator()(double x) const { return std::exp(alpha * x); }

    void validate() const {
        if (!(alpha > 0.0) || !std::isfinite(alpha)) {
            throw ParameterError("weight: alpha_w must be positive and finite");
        }
    }

    bool operator==(const WeightSpec& o) const { return alpha == o.alpha; }
};

struct CurveGrid {
    std::vector<double> x;
    Vector values;
    WeightSpec weight;

    Index size() const noexcept { return values.size(); }
    double x_max() const { return x.back(); }
};

inline constexpr Index kDefaultCurvePoints = 201;

inline void validate_grid(const std::vector<double>& x) {
    if (x.size() < 3) {
        throw ParameterError("curve grid: need at least three points");
    }
    if (x.front() != 0.0) {
        throw ParameterError("curve grid: must start at 0");
    }
    for (std::size_t i = 1; i < x.size(); ++i) {
        if (!(x[i] > x[i - 1]) || !std::isfinite(x[i])) {
            throw ParameterError("curve grid: points must be finite and increasing");
        }
    }
}

inline std::vector<double> uniform_grid(double x_max, Index n = kDefaultCurvePoints) {
    if (n < 3 || !(x_max > 0.0)) {
        throw ParameterError("uniform grid: need n >= 3 and x_max > 0");
    }
    std::vector<double> x(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        x[static_cast<std::size_t>(i)] = x_max * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    x.back() = x_max;
    return x;
}

/// Grid whose spacing grows geometrically by `ratio` per cell.
inline std::vector<double> geometric_grid(double x_max, Index n = kDefaultCurvePoints, double ratio = 1.02) {
    if (n < 3 || !(x_max > 0.0) || !(ratio >= 1.0)) {
        throw ParameterError("geometric grid: need n >= 3, x_max > 0 and ratio >= 1");
    }
    if (ratio == 1.0) {
        return uniform_grid(x_max, n);
    }
    std::vector<double> x(static_cast<std::size_t>(n));
    const double total = (std::pow(ratio, static_cast<double>(n - 1)) - 1.0) / (ratio - 1.0);
    const double h0 = x_max / total;
    double acc = 0.0;
    double h = h0;
    for (Index i = 0; i < n; ++i) {
        x[static_cast<std::size_t>(i)] = acc;
        acc += h;
        h *= ratio;
    }
    x.back() = x_max;
    return x;
}

inline CurveGrid make_curve(const std::vector<double>& x, const std::function<double(double)>& f,
                            WeightSpec weight = {}) {
    validate_grid(x);
    weight.validate();
    CurveGrid c{x, Vector(static_cast<Index>(x.size())), weight};
    for (std::size_t i = 0; i < x.size(); ++i) {
        c.values(static_cast<Index>(i)) = f(x[i]);
    }
    if (!c.values.allFinite()) {
        throw DomainError("curve: non-finite values");
    }
    return c;
}

inline CurveGrid constant_curve(const std::vector<double>& x, double v, WeightSpec weight = {}) {
    return make_curve(x, [v](double) { return v; }, weight);
}

namespace detail {

inline void require_same_grid(const CurveGrid& f, const CurveGrid& g, const char* what) {
    if (f.x != g.x || f.values.size() != g.values.size()) {
        throw DimensionError(std::string(what) + ": curves live on different grids (" +
                             std::to_string(f.x.size()) + " vs " + std::to_string(g.x.size()) + " points)");
    }
    if (!(f.weight == g.weight)) {
        throw ParameterError(std::string(what) + ": curves carry different weights");
    }
}

/// Monotone cubic Hermite slopes (Fritsch-Carlson).
inline std::vector<double> pchip_slopes(const std::vector<double>& x, const Vector& y) {
    const std::size_t n = x.size();
    std::vector<double> h(n - 1), del(n - 1), d(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        h[i] = x[i + 1] - x[i];
        del[i] = (y(static_cast<Index>(i + 1)) - y(static_cast<Index>(i))) / h[i];
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (del[i - 1] * del[i] > 0.0) {
            const double w1 = 2.0 * h[i] + h[i - 1];
            const double w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
        }
    }
    auto end_slope = [](double h0, double h1, double d0, double d1) {
        double s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if (s * d0 <= 0.0) {
            s = 0.0;
        } else if (d0 * d1 <= 0.0 && std::abs(s) > std::abs(3.0 * d0)) {
            s = 3.0 * d0;
        }
        return s;
    };
    if (n == 2) {
        d[0] = d[1] = del[0];
    } else {
        d[0] = end_slope(h[0], h[1], del[0], del[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    }
    return d;
}

inline double pchip_eval(const std::vector<double>& x, const Vector& y, const std::vector<double>& d,
                         double xq) {
    if (xq <= x.front()) {
        return y(0);
    }
    if (xq >= x.back()) {
        return y(static_cast<Index>(x.size() - 1));
    }
    const auto it = std::upper_bound(x.begin(), x.end(), xq);
    const std::size_t i = static_cast<std::size_t>(it - x.begin()) - 1;
    const double h = x[i + 1] - x[i];
    const double s = (xq - x[i]) / h;
    const double y0 = y(static_cast<Index>(i));
    const double y1 = y(static_cast<Index>(i + 1));
    const double h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    const double h10 = s * (1.0 - s) * (1.0 - s);
    const double h01 = s * s * (3.0 - 2.0 * s);
    const double h11 = s * s * (s - 1.0);
    return h00 * y0 + h10 * h * d[i] + h01 * y1 + h11 * h * d[i + 1];
}

/// Index of a node equal to xq up to rounding, or -1.
inline long snap_node(const std::vector<double>& x, double xq) {
    const auto it = std::lower_bound(x.begin(), x.end(), xq - 1e-9 * (x[1] - x[0]));
    if (it != x.end() && std::abs(*it - xq) <= 1e-9 * std::max(1.0, std::abs(xq)) * (x[1] - x[0])) {
        return static_cast<long>(it - x.begin());
    }
    return -1;
}

/// First-derivative weights at x0 for the stencil z (Fornberg).
inline std::vector<double> fd_weights(double x0, const double* z, std::size_t m) {
    std::vector<double> c0(m, 0.0), c1(m, 0.0);
    double c_prev = 1.0;
    c0[0] = 1.0;
    for (std::size_t i = 1; i < m; ++i) {
        double c2 = 1.0;
        for (std::size_t j = 0; j < i; ++j) {
            const double c3 = z[i] - z[j];
            c2 *= c3;
            if (j == i - 1) {
                c1[i] = c_prev * (c0[i - 1] - (z[i - 1] - x0) * c1[i - 1]) / c2;
                c0[i] = -c_prev * (z[i - 1] - x0) * c0[i - 1] / c2;
            }
            c1[j] = ((z[i] - x0) * c1[j] - c0[j]) / c3;
            c0[j] = (z[i] - x0) * c0[j] / c3;
        }
        c_prev = c2;
    }
    return c1;
}

/// Finite-difference derivative on a possibly non-uniform grid: five-point
/// stencils (centred inside, one-sided at the ends), three points on tiny grids.
inline Vector derivative(const std::vector<double>& x, const Vector& y) {
    const std::size_t n = x.size();
    const std::size_t m = n >= 5 ? 5 : 3;
    Vector d(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t lo = i >= m / 2 ? i - m / 2 : 0;
        lo = std::min(lo, n - m);
        const auto w = fd_weights(x[i], &x[lo], m);
        double acc = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            acc += w[k] * y(static_cast<Index>(lo + k));
        }
        d(static_cast<Index>(i)) = acc;
    }
    return d;
}

/// int_0^{X_max} of nodal values g by cubic Hermite panels (trapezoid plus
/// end-slope correction on each cell).
inline double hermite_integral(const std::vector<double>& x, const Vector& g) {
    const Vector dg = derivative(x, g);
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        const auto a = static_cast<Index>(i);
        const double h = x[i + 1] - x[i];
        acc += 0.5 * h * (g(a) + g(a + 1)) + h * h / 12.0 * (dg(a) - dg(a + 1));
    }
    return acc;
}

}  // namespace detail

/// Value of the curve at xq by PCHIP; flat beyond the grid.
inline double evaluate(const CurveGrid& f, double xq) {
    const long node = detail::snap_node(f.x, xq);
    if (node >= 0) {
        return f.values(node);
    }
    return detail::pchip_eval(f.x, f.values, detail::pchip_slopes(f.x, f.values), xq);
}

/// (f, g)_w = f(0) g(0) + int_0^{X_max} w f' g' dx.
inline double filipovic_inner(const CurveGrid& f, const CurveGrid& g) {
    detail::require_same_grid(f, g, "filipovic_inner");
    const Vector df = detail::derivative(f.x, f.values);
    const Vector dg = detail::derivative(g.x, g.values);
    Vector integrand(f.size());
    for (Index i = 0; i < f.size(); ++i) {
        integrand(i) = f.weight(f.x[static_cast<std::size_t>(i)]) * df(i) * dg(i);
    }
    const double integral = detail::hermite_integral(f.x, integrand);
    return f.values(0) * g.values(0) + integral;
}

inline double filipovic_norm(const CurveGrid& f) { return std::sqrt(std::max(0.0, filipovic_inner(f, f))); }

/// (S(t) f)(x) = f(x + t), flat beyond X_max. Nodes that land on grid nodes
/// are copied exactly, so grid-aligned shifts compose without error.
inline CurveGrid shift_semigroup(const CurveGrid& f, double t) {
    if (!(t >= 0.0) || !std::isfinite(t)) {
        throw DomainError("shift_semigroup: t must be finite and nonnegative");
    }
    if (t == 0.0) {
        return f;
    }
    CurveGrid out = f;
    const auto d = detail::pchip_slopes(f.x, f.values);
    const double last = f.values(f.size() - 1);
    for (std::size_t i = 0; i < f.x.size(); ++i) {
        const double xq = f.x[i] + t;
        double v;
        if (xq >= f.x.back()) {
            v = last;
        } else if (const long node = detail::snap_node(f.x, xq); node >= 0) {
            v = f.values(node);
        } else {
            v = detail::pchip_eval(f.x, f.values, d, xq);
        }
        out.values(static_cast<Index>(i)) = v;
    }
    return out;
}

/// Analytic and empirical Banach-algebra constants of H_w.
struct BanachConstant {
    double analytic = 0.0;      // sqrt(5 + 4 / alpha_w)
    double empirical_max = 0.0; // max |fg|_w / (|f|_w |g|_w) over a corpus
};

/// sup |f|_inf / |f|_w <= sqrt(1 + 1/alpha_w) =: K, hence
/// |fg|_w^2 <= (1 + 4 K^2) |f|_w^2 |g|_w^2. Rescaling the norm by
/// c = sqrt(5 + 4/alpha_w) makes H_w a Banach algebra.
inline double banach_algebra_bound(const WeightSpec& w) {
    w.validate();
    return std::sqrt(5.0 + 4.0 / w.alpha);
}

inline BanachConstant banach_algebra_constant(const std::vector<CurveGrid>& corpus) {
    if (corpus.empty()) {
        throw ParameterError("banach constant: empty corpus");
    }
    BanachConstant bc;
    bc.analytic = banach_algebra_bound(corpus.front().weight);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        for (std::size_t j = i; j < corpus.size(); ++j) {
            CurveGrid prod = corpus[i];
            prod.values = corpus[i].values.cwiseProduct(corpus[j].values);
            const double den = filipovic_norm(corpus[i]) * filipovic_norm(corpus[j]);
            if (den > 0.0) {
                bc.empirical_max = std::max(bc.empirical_max, filipovic_norm(prod) / den);
            }
        }
    }
    return bc;
}

/// Curve-valued Monte Carlo sample: values[((path * n_times) + t) * n_x + i].
struct CurveEnsemble {
    TimeGrid grid;
    std::vector<double> x;
    WeightSpec weight;
    Index n_paths = 0;
    std::uint64_t seed = 0;
    std::vector<double> values;
    std::string label;

    Index n_x() const { return static_cast<Index>(x.size()); }
    Index n_times() const { return grid.size(); }

    double operator()(Index path, Index t, Index i) const {
        return values[static_cast<std::size_t>((path * n_times() + t) * n_x() + i)];
    }

    CurveGrid curve(Index path, Index t) const {
        CurveGrid c{x, Vector(n_x()), weight};
        for (Index i = 0; i < n_x(); ++i) {
            c.values(i) = (*this)(path, t, i);
        }
        return c;
    }

    /// Value at grid node i across paths.
    std::vector<double> at_node(Index t, Index i) const {
        std::vector<double> out(static_cast<std::size_t>(n_paths));
        for (Index p = 0; p < n_paths; ++p) {
            out[static_cast<std::size_t>(p)] = (*this)(p, t, i);
        }
        return out;
    }
};

inline std::string curve_ensemble_csv(const CurveEnsemble& e) {
    std::string out = "t,path,x,value\n";
    for (Index p = 0; p < e.n_paths; ++p) {
        for (Index t = 0; t < e.n_times(); ++t) {
            const std::string prefix = fmt17(e.grid[t]) + "," + std::to_string(p) + ",";
            for (Index i = 0; i < e.n_x(); ++i) {
                out += prefix;
                out += fmt17(e.x[static_cast<std::size_t>(i)]);
                out += ",";
                out += fmt17(e(p, t, i));
                out += "\n";
            }
        }
    }
    return out;
}

inline std::string curve_csv(const CurveGrid& c) {
    std::string out = "x,value\n";
    for (Index i = 0; i < c.size(); ++i) {
        out += fmt17(c.x[static_cast<std::size_t>(i)]) + "," + fmt17(c.values(i)) + "\n";
    }
    return out;
}

/// Sidecar metadata for a curve CSV: weight and grid description.
inline std::string curve_metadata(const std::vector<double>& x, const WeightSpec& w,
                                  const std::string& label = "") {
    std::string out;
    if (!label.empty()) {
        out += "label: " + label + "\n";
    }
    out += "weight: exp(alpha_w x)\n";
    out += "alpha_w: " + fmt17(w.alpha) + "\n";
    out += "x_points: " + std::to_string(x.size()) + "\n";
    out += "x_min: " + fmt17(x.front()) + "\n";
    out += "x_max: " + fmt17(x.back()) + "\n";
    out += "x_first_step: " + fmt17(x[1] - x[0]) + "\n";
    out += "x_last_step: " + fmt17(x[x.size() - 1] - x[x.size() - 2]) + "\n";
    return out;
}

namespace detail {

inline double uniform_step(const std::vector<double>& x, const char* what) {
    const double h = (x.back() - x.front()) / static_cast<double>(x.size() - 1);
    for (std::size_t i = 1; i < x.size(); ++i) {
        if (std::abs((x[i] - x[i - 1]) - h) > 1e-9 * h) {
            throw PreconditionError(std::string(what) + ": needs a uniform maturity grid");
        }
    }
    return h;
}

inline std::vector<long> aligned_steps(const TimeGrid& grid, double h, const char* what) {
    std::vector<long> k;
    for (double t : grid.points) {
        const double r = t / h;
        const long n = std::lround(r);
        if (std::abs(r - static_cast<double>(n)) > 1e-9 * std::max(1.0, r)) {
            throw ResolutionError(std::string(what) + ": time " + fmt17(t) +
                                  " is not a multiple of the step " + fmt17(h));
        }
        k.push_back(n);
    }
    return k;
}

}  // namespace detail

/// Mild solution of dg = dg/dx dt + sum_j vol_j dL_j on a uniform maturity
/// grid. Each step of length h (the grid spacing) shifts the curve by one
/// node and adds the noise weighted by S(h/2) vol_j; jumps enter at their
/// exact times.
inline CurveEnsemble simulate_spread_ou(const CurveGrid& g0, const std::vector<CurveGrid>& vols,
                                        const DriverSpec& driver, const TimeGrid& grid, Index n_paths,
                                        std::uint64_t seed, const SimOptions& opt = {}) {
    validate_grid(g0.x);
    grid.validate();
    if (static_cast<Index>(vols.size()) != driver.dim()) {
        throw DimensionError("simulate_spread_ou: " + std::to_string(vols.size()) +
                             " vol curves but the driver has dimension " + std::to_string(driver.dim()));
    }
    for (const auto& v : vols) {
        detail::require_same_grid(g0, v, "simulate_spread_ou");
    }
    if (n_paths < 1) {
        throw ParameterError("simulate_spread_ou: n_paths must be positive");
    }
    const double h = detail::uniform_step(g0.x, "simulate_spread_ou");
    const auto record = detail::aligned_steps(grid, h, "simulate_spread_ou");
    const Index nx = g0.size();
    const Index k = driver.dim();
    Matrix half(nx, k);
    for (Index j = 0; j < k; ++j) {
        const auto& v = vols[static_cast<std::size_t>(j)];
        const auto d = detail::pchip_slopes(v.x, v.values);
        for (Index i = 0; i < nx; ++i) {
            half(i, j) = detail::pchip_eval(v.x, v.values, d, v.x[static_cast<std::size_t>(i)] + 0.5 * h);
        }
    }
    const Matrix diff_factor = psd_factor(driver.diffusion());
    Matrix jump_factor;
    Vector comp = Vector::Zero(k);
    if (!driver.is_brownian()) {
        jump_factor = psd_factor(driver.jump_cov());
        comp = -driver.rate() * h * driver.jump_mean();
    }
    CurveEnsemble e;
    e.grid = grid;
    e.x = g0.x;
    e.weight = g0.weight;
    e.n_paths = n_paths;
    e.seed = seed;
    e.label = "spread";
    const Index nt = grid.size();
    e.values.assign(static_cast<std::size_t>(n_paths * nt * nx), 0.0);
    const double sqrt_h = std::sqrt(h);
    parallel_ranges(n_paths, opt.workers, [&](Index lo, Index hi) {
        Vector g(nx), next(nx);
        for (Index p = lo; p < hi; ++p) {
            Rng rng = substream(seed, static_cast<std::uint64_t>(p) + opt.path_offset, 0x5b);
            g = g0.values;
            long step = 0;
            for (Index ti = 0; ti < nt; ++ti) {
                const long target = record[static_cast<std::size_t>(ti)];
                for (; step < target; ++step) {
                    next.head(nx - 1) = g.tail(nx - 1);
                    next(nx - 1) = g(nx - 1);
                    Vector dl = diff_factor * (sqrt_h * standard_normals(rng, k)) + comp;
                    next.noalias() += half * dl;
                    if (!driver.is_brownian()) {
                        std::poisson_distribution<long> pois(driver.rate() * h);
                        std::uniform_real_distribution<double> unif(0.0, h);
                        const long nj = pois(rng);
                        for (long q = 0; q < nj; ++q) {
                            const double lag = h - unif(rng);
                            const Vector jump = driver.jump_mean() + jump_factor * standard_normals(rng, k);
                            for (Index j = 0; j < k; ++j) {
                                next += jump(j) * shift_semigroup(vols[static_cast<std::size_t>(j)], lag).values;
                            }
                        }
                    }
                    g.swap(next);
                }
                std::copy(g.data(), g.data() + nx,
                          e.values.begin() + static_cast<std::ptrdiff_t>((p * nt + ti) * nx));
            }
        }
    });
    for (double v : e.values) {
        if (!std::isfinite(v)) {
            throw NumericError("simulate_spread_ou: non-finite values");
        }
    }
    return e;
}

/// X_k(t, x) = h_k(t, x) + int_0^t g_k(t + x - s) dU_k(s) for k = 1, 2 and a
/// scalar Levy factor X_3 = L, the latter stored as constant curves.
struct ThreeFactorSpec {
    std::vector<double> x_grid;
    WeightSpec weight;
    std::function<double(double, double)> h1 = [](double, double) { return 0.0; };
    std::function<double(double, double)> h2 = [](double, double) { return 0.0; };
    std::function<double(double)> g1;
    std::function<double(double)> g2;
    DriverSpec u = DriverSpec::standard_brownian(2);
    DriverSpec l = DriverSpec::standard_brownian(1);
    double substep = 0.01;
    /// Largest admitted value of int_0^T |g_k(s + .)|_w^2 ds.
    double integrability_bound = 1e8;
};

struct ThreeFactorEnsemble {
    CurveEnsemble x1;
    CurveEnsemble x2;
    CurveEnsemble x3;
};

/// int_0^t |g(s + .)|_w^2 ds by trapezoid on the substep lattice.
inline double kernel_norm_integral(const std::function<double(double)>& g, const std::vector<double>& x,
                                   const WeightSpec& w, double t, double h) {
    const long n = std::max(1L, std::lround(t / h));
    const double dt = t / static_cast<double>(n);
    double acc = 0.0;
    for (long i = 0; i <= n; ++i) {
        const double s = dt * static_cast<double>(i);
        const CurveGrid c = make_curve(x, [&](double xx) { return g(s + xx); }, w);
        const double v = filipovic_inner(c, c);
        acc += (i == 0 || i == n ? 0.5 : 1.0) * v * dt;
    }
    return acc;
}

inline ThreeFactorEnsemble three_factor_curves(const ThreeFactorSpec& spec, const TimeGrid& grid,
                                               Index n_paths, std::uint64_t seed, const SimOptions& opt = {}) {
    validate_grid(spec.x_grid);
    spec.weight.validate();
    grid.validate();
    if (spec.u.dim() != 2 || spec.l.dim() != 1) {
        throw DimensionError("three_factor_curves: U must be 2-dimensional and L scalar, got " +
                             std::to_string(spec.u.dim()) + " and " + std::to_string(spec.l.dim()));
    }
    if (!(spec.substep > 0.0)) {
        throw ParameterError("three_factor_curves: substep must be positive");
    }
    if (n_paths < 1) {
        throw ParameterError("three_factor_curves: n_paths must be positive");
    }
    const auto record = detail::aligned_steps(grid, spec.substep, "three_factor_curves");
    const double t_max = grid.points.back();
    std::array<std::function<double(double)>, 2> g{spec.g1, spec.g2};
    for (int k = 0; k < 2; ++k) {
        if (!g[static_cast<std::size_t>(k)]) {
            g[static_cast<std::size_t>(k)] = [](double) { return 0.0; };
        }
        const double norm = kernel_norm_integral(g[static_cast<std::size_t>(k)], spec.x_grid, spec.weight,
                                                 t_max, std::max(spec.substep, t_max / 400.0));
        if (!std::isfinite(norm) || norm > spec.integrability_bound) {
            throw PreconditionError("three_factor_curves: int_0^T |g_" + std::to_string(k + 1) +
                                    "(s + .)|_w^2 ds is not finite on the horizon");
        }
    }
    const Index nx = static_cast<Index>(spec.x_grid.size());
    const Index nt = grid.size();
    const long cells = record.back();
    const double h = spec.substep;

    // Kernel matrices per record time: K_k[ti](j, i) = g_k(t - (j + 1/2) h + x_i).
    std::array<std::vector<Matrix>, 2> kern;
    for (int k = 0; k < 2; ++k) {
        for (Index ti = 0; ti < nt; ++ti) {
            const long kk = record[static_cast<std::size_t>(ti)];
            const double t = static_cast<double>(kk) * h;
            Matrix m(std::max<long>(kk, 0), nx);
            for (long j = 0; j < kk; ++j) {
                for (Index i = 0; i < nx; ++i) {
                    m(j, i) = g[static_cast<std::size_t>(k)](t - (static_cast<double>(j) + 0.5) * h +
                                                             spec.x_grid[static_cast<std::size_t>(i)]);
                }
            }
            kern[static_cast<std::size_t>(k)].push_back(std::move(m));
        }
    }

    auto make_ensemble = [&](const std::string& label) {
        CurveEnsemble e;
        e.grid = grid;
        e.x = spec.x_grid;
        e.weight = spec.weight;
        e.n_paths = n_paths;
        e.seed = seed;
        e.label = label;
        e.values.assign(static_cast<std::size_t>(n_paths * nt * nx), 0.0);
        return e;
    };
    ThreeFactorEnsemble out{make_ensemble("X1"), make_ensemble("X2"), make_ensemble("X3")};
    std::array<CurveEnsemble*, 2> targets{&out.x1, &out.x2};

    const Matrix u_factor = psd_factor(spec.u.diffusion());
    const Matrix u_jump = spec.u.is_brownian() ? Matrix() : psd_factor(spec.u.jump_cov());
    const Vector u_comp = spec.u.is_brownian() ? Vector::Zero(2) : Vector(-spec.u.rate() * h * spec.u.jump_mean());
    const double l_sd = std::sqrt(spec.l.diffusion()(0, 0) * h);
    const Index chunk = 256;
    const Index n_chunks = (n_paths + chunk - 1) / chunk;

    parallel_ranges(n_chunks, opt.workers, [&](Index c_lo, Index c_hi) {
        for (Index c = c_lo; c < c_hi; ++c) {
            const Index p0 = c * chunk;
            const Index rows = std::min(chunk, n_paths - p0);
            std::array<Matrix, 2> noise{Matrix(rows, std::max<long>(cells, 0)),
                                        Matrix(rows, std::max<long>(cells, 0))};
            struct Jump {
                Index row;
                double time;
                Vector size;
            };
            std::vector<Jump> jumps;
            for (Index r = 0; r < rows; ++r) {
                const auto path = static_cast<std::uint64_t>(p0 + r) + opt.path_offset;
                Rng rng = substream(seed, path, 0x3f1);
                for (long j = 0; j < cells; ++j) {
                    const Vector du = u_factor * (std::sqrt(h) * standard_normals(rng, 2)) + u_comp;
                    noise[0](r, j) = du(0);
                    noise[1](r, j) = du(1);
                }
                if (!spec.u.is_brownian()) {
                    std::poisson_distribution<long> pois(spec.u.rate() * t_max);
                    std::uniform_real_distribution<double> unif(0.0, t_max);
                    const long nj = pois(rng);
                    for (long q = 0; q < nj; ++q) {
                        const double tau = unif(rng);
                        jumps.push_back({r, tau, spec.u.jump_mean() + u_jump * standard_normals(rng, 2)});
                    }
                }
                // X3 = L on its own stream
                Rng lr = substream(seed, path, 0x3f3);
                std::normal_distribution<double> nd;
                double level = 0.0;
                long step = 0;
                for (Index ti = 0; ti < nt; ++ti) {
                    const long kk = record[static_cast<std::size_t>(ti)];
                    for (; step < kk; ++step) {
                        level += l_sd * nd(lr);
                        if (!spec.l.is_brownian()) {
                            level -= spec.l.rate() * h * spec.l.jump_mean()(0);
                            std::poisson_distribution<long> pois(spec.l.rate() * h);
                            const long nj = pois(lr);
                            for (long q = 0; q < nj; ++q) {
                                level += spec.l.jump_mean()(0) + std::sqrt(spec.l.jump_cov()(0, 0)) * nd(lr);
                            }
                        }
                    }
                    const auto off = static_cast<std::size_t>(((p0 + r) * nt + ti) * nx);
                    std::fill(out.x3.values.begin() + static_cast<std::ptrdiff_t>(off),
                              out.x3.values.begin() + static_cast<std::ptrdiff_t>(off + nx), level);
                }
            }
            for (int k = 0; k < 2; ++k) {
                for (Index ti = 0; ti < nt; ++ti) {
                    const long kk = record[static_cast<std::size_t>(ti)];
                    const double t = static_cast<double>(kk) * h;
                    Matrix vals = Matrix::Zero(rows, nx);
                    if (kk > 0) {
                        vals.noalias() = noise[static_cast<std::size_t>(k)].leftCols(kk) *
                                         kern[static_cast<std::size_t>(k)][static_cast<std::size_t>(ti)];
                    }
                    for (const auto& jp : jumps) {
                        if (jp.time < t) {
                            for (Index i = 0; i < nx; ++i) {
                                vals(jp.row, i) += jp.size(k) * g[static_cast<std::size_t>(k)](
                                                                    t - jp.time + spec.x_grid[static_cast<std::size_t>(i)]);
                            }
                        }
                    }
                    const auto& hk = k == 0 ? spec.h1 : spec.h2;
                    for (Index r = 0; r < rows; ++r) {
                        const auto off = static_cast<std::size_t>(((p0 + r) * nt + ti) * nx);
                        for (Index i = 0; i < nx; ++i) {
                            targets[static_cast<std::size_t>(k)]->values[off + static_cast<std::size_t>(i)] =
                                hk(t, spec.x_grid[static_cast<std::size_t>(i)]) + vals(r, i);
                        }
                    }
                }
            }
        }
    });
    return out;
}

/// Cumulant of <h, X_k(t)>_w at z:
///   i z (h, h_k(t))_w + int_0^t psi_{U_k}(z (h, g_k(s + .))_w) ds.
inline Complex lss_cumulant(const ThreeFactorSpec& spec, int k, double t, const CurveGrid& test, double z) {
    if (k != 1 && k != 2) {
        throw ParameterError("lss_cumulant: factor index must be 1 or 2");
    }
    if (test.x != spec.x_grid) {
        throw DimensionError("lss_cumulant: test function lives on a different grid");
    }
    const auto& hk = k == 1 ? spec.h1 : spec.h2;
    const auto& gk = k == 1 ? spec.g1 : spec.g2;
    const CurveGrid level = make_curve(spec.x_grid, [&](double x) { return hk(t, x); }, spec.weight);
    CurveGrid test_w = test;
    test_w.weight = spec.weight;
    const double drift = filipovic_inner(test_w, level);
    const Vector e = Vector::Unit(2, k - 1);
    auto f = [&](double s) -> Complex {
        if (!gk) {
            return Complex{};
        }
        const CurveGrid c = make_curve(spec.x_grid, [&](double x) { return gk(s + x); }, spec.weight);
        return spec.u.char_exponent(z * filipovic_inner(test_w, c) * e);
    };
    const auto r = adaptive_simpson<Complex>(f, 0.0, t, 1e-10, Complex{}, 16);
    return Complex{0.0, z * drift} + r.value;
}

/// One block of a cointegration operator acting on one curve.
struct CurveBlock {
    enum class Kind { scalar_weight, evaluation, integral_mean };
    Kind kind = Kind::scalar_weight;
    double weight = 1.0;
    double at = 0.0;  // maturity for evaluation blocks

    static CurveBlock scalar(double w) { return {Kind::scalar_weight, w, 0.0}; }
    static CurveBlock eval(double x, double w = 1.0) { return {Kind::evaluation, w, x}; }
    static CurveBlock integral(double w = 1.0) { return {Kind::integral_mean, w, 0.0}; }
};

struct BlockCurveOperator {
    std::vector<CurveBlock> blocks;
};

using CurveOrScalar = std::variant<CurveGrid, double>;

inline double integral_mean(const CurveGrid& f) {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < f.x.size(); ++i) {
        acc += 0.5 * (f.x[i + 1] - f.x[i]) *
               (f.values(static_cast<Index>(i)) + f.values(static_cast<Index>(i + 1)));
    }
    return acc / f.x_max();
}

/// Sum_i C_i f_i. Scalar-weight blocks give a curve; evaluation and integral
/// blocks give a number. Mixing the two kinds is rejected.
inline CurveOrScalar apply_coint_operator(const BlockCurveOperator& op, const std::vector<CurveGrid>& curves) {
    if (op.blocks.size() != curves.size()) {
        throw DimensionError("apply_coint_operator: " + std::to_string(op.blocks.size()) + " blocks but " +
                             std::to_string(curves.size()) + " curves");
    }
    if (curves.empty()) {
        throw ParameterError("apply_coint_operator: no curves");
    }
    for (const auto& c : curves) {
        detail::require_same_grid(curves.front(), c, "apply_coint_operator");
    }
    const bool all_scalar = std::all_of(op.blocks.begin(), op.blocks.end(),
                                        [](const CurveBlock& b) { return b.kind == CurveBlock::Kind::scalar_weight; });
    const bool all_functional = std::none_of(op.blocks.begin(), op.blocks.end(),
                                             [](const CurveBlock& b) { return b.kind == CurveBlock::Kind::scalar_weight; });
    if (all_scalar) {
        CurveGrid out = curves.front();
        out.values.setZero();
        for (std::size_t i = 0; i < curves.size(); ++i) {
            out.values += op.blocks[i].weight * curves[i].values;
        }
        return out;
    }
    if (!all_functional) {
        throw ParameterError("apply_coint_operator: blocks mix curve-valued and scalar-valued operators");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& b = op.blocks[i];
        if (b.kind == CurveBlock::Kind::evaluation) {
            if (b.at < 0.0 || b.at > curves[i].x_max()) {
                throw RangeError("apply_coint_operator: evaluation at " + fmt17(b.at) +
                                 " outside [0, " + fmt17(curves[i].x_max()) + "]");
            }
            acc += b.weight * evaluate(curves[i], b.at);
        } else {
            acc += b.weight * integral_mean(curves[i]);
        }
    }
    return acc;
}

/// Elements of a product of Filipovic spaces; R is represented by constant
/// curves (whose norm is the absolute value of the constant).
using CurveTuple = std::vector<CurveGrid>;

inline double tuple_inner(const CurveTuple& a, const CurveTuple& b) {
    if (a.size() != b.size()) {
        throw DimensionError("tuple inner product: " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()) + " components");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += filipovic_inner(a[i], b[i]);
    }
    return acc;
}

inline CurveTuple tuple_axpy(double alpha, const CurveTuple& x, CurveTuple y) {
    if (x.size() != y.size()) {
        throw DimensionError("tuple axpy: component counts differ");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i].values += alpha * x[i].values;
    }
    return y;
}

inline CurveTuple tuple_zero(const CurveTuple& like) {
    CurveTuple z = like;
    for (auto& c : z) {
        c.values.setZero();
    }
    return z;
}

/// Finite-rank operator given by an orthonormal basis of ker(T)^perp and the
/// images T(basis_j).
struct FiniteRankOperator {
    std::vector<CurveTuple> basis;
    std::vector<CurveTuple> images;
};

inline constexpr double kOrthonormalTol = 1e-8;

inline void check_orthonormal(const std::vector<CurveTuple>& basis, const char* what) {
    for (std::size_t i = 0; i < basis.size(); ++i) {
        for (std::size_t j = i; j < basis.size(); ++j) {
            const double v = tuple_inner(basis[i], basis[j]);
            const double want = i == j ? 1.0 : 0.0;
            if (std::abs(v - want) > kOrthonormalTol) {
                throw PreconditionError(std::string(what) + ": basis is not orthonormal (entry " +
                                        std::to_string(i) + "," + std::to_string(j) + " = " + fmt17(v) + ")");
            }
        }
    }
}

inline CurveTuple apply_finite_rank(const FiniteRankOperator& op, const CurveTuple& x) {
    if (op.basis.size() != op.images.size() || op.images.empty()) {
        throw DimensionError("finite-rank operator: basis and image counts differ or are empty");
    }
    CurveTuple out = tuple_zero(op.images.front());
    for (std::size_t j = 0; j < op.basis.size(); ++j) {
        out = tuple_axpy(tuple_inner(x, op.basis[j]), op.images[j], std::move(out));
    }
    return out;
}

/// Orthonormalises a list of tuples (modified Gram-Schmidt).
inline std::vector<CurveTuple> gram_schmidt(std::vector<CurveTuple> v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const double proj = tuple_inner(v[i], v[j]);
            v[i] = tuple_axpy(-proj, v[j], std::move(v[i]));
        }
        const double n = std::sqrt(tuple_inner(v[i], v[i]));
        if (!(n > 1e-12)) {
            throw NumericError("gram_schmidt: linearly dependent input");
        }
        for (auto& c : v[i]) {
            c.values /= n;
        }
    }
    return v;
}

struct FdrResult {
    Matrix pbar;            // d x n, pbar(i, j) = <P f_j, h_i>
    Vector x_vec;           // <X_t, f_j>
    std::vector<CurveTuple> c_images;  // C h_i
};

inline FdrResult fdr_reduce(const FiniteRankOperator& p_op, const FiniteRankOperator& c_op, const CurveTuple& x_t) {
    if (p_op.basis.size() != p_op.images.size() || c_op.basis.size() != c_op.images.size()) {
        throw DimensionError("fdr_reduce: basis and image counts differ");
    }
    check_orthonormal(p_op.basis, "fdr_reduce (factor basis)");
    check_orthonormal(c_op.basis, "fdr_reduce (price basis)");
    const Index n = static_cast<Index>(p_op.basis.size());
    const Index d = static_cast<Index>(c_op.basis.size());
    FdrResult r;
    r.pbar.resize(d, n);
    r.x_vec.resize(n);
    for (Index j = 0; j < n; ++j) {
        r.x_vec(j) = tuple_inner(x_t, p_op.basis[static_cast<std::size_t>(j)]);
        for (Index i = 0; i < d; ++i) {
            r.pbar(i, j) = tuple_inner(p_op.images[static_cast<std::size_t>(j)], c_op.basis[static_cast<std::size_t>(i)]);
        }
    }
    r.c_images = c_op.images;
    return r;
}

/// sum_ij x_j pbar_ij (C h_i).
inline CurveTuple fdr_reconstruct(const FdrResult& r) {
    if (r.c_images.empty()) {
        throw ParameterError("fdr_reconstruct: no images");
    }
    CurveTuple out = tuple_zero(r.c_images.front());
    const Vector coef = r.pbar * r.x_vec;
    for (Index i = 0; i < coef.size(); ++i) {
        out = tuple_axpy(coef(i), r.c_images[static_cast<std::size_t>(i)], std::move(out));
    }
    return out;
}

}  // namespace contcoint
