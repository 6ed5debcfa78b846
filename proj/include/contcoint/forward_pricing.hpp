#pragma once

// Forward prices under affine and exponential-affine factor dynamics, in the
// Musiela parametrisation f(t, x) = F(t, t + x).

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "contcoint/factor_models.hpp"
#include "contcoint/io.hpp"
#include "contcoint/pricing_system.hpp"

namespace contcoint {

/// E[X(T) | F_t] = A(t, T) X(t) + a(t, T).
struct AffineKernel {
    std::function<Matrix(double, double)> a_mat;
    std::function<Vector(double, double)> a_vec;
    bool homogeneous = true;
    Index n = 0;

    Matrix A(double t, double big_t) const { return a_mat(t, big_t); }
    Vector a(double t, double big_t) const { return a_vec(t, big_t); }
    Matrix A(double tau) const { return a_mat(0.0, tau); }
    Vector a(double tau) const { return a_vec(0.0, tau); }

    /// Homogeneous kernel from functions of tau = T - t.
    static AffineKernel homogeneous_from(Index n, std::function<Matrix(double)> a_of_tau,
                                         std::function<Vector(double)> v_of_tau) {
        AffineKernel k;
        k.n = n;
        k.homogeneous = true;
        k.a_mat = [f = std::move(a_of_tau)](double t, double big_t) { return f(big_t - t); };
        k.a_vec = [f = std::move(v_of_tau)](double t, double big_t) { return f(big_t - t); };
        return k;
    }
};

/// Linear drift, mean reversion and instantaneous covariance of a stack of
/// OU-type blocks (drifted BM or multivariate OU).
struct OuParts {
    Matrix c;
    Vector mu;
    Matrix q;
    bool brownian = true;
};

inline OuParts ou_parts(const CompositeModel& model) {
    const Index n = factor_dim(model);
    OuParts parts{Matrix::Zero(n, n), Vector::Zero(n), Matrix::Zero(n, n), true};
    Index off = 0;
    for (const auto& b : model.blocks) {
        const Index k = factor_dim(b);
        const MultivariateOU* ou = std::get_if<MultivariateOU>(&b);
        MultivariateOU tmp;
        if (const auto* bm = std::get_if<DriftedBM>(&b)) {
            tmp = drifted_bm_as_ou(*bm);
            ou = &tmp;
        }
        if (!ou) {
            throw UnsupportedError("affine kernel: " + model_tag(b) +
                                   " blocks have no factor-level affine kernel");
        }
        parts.c.block(off, off, k, k) = ou->c;
        parts.mu.segment(off, k) = ou->mu;
        parts.q.block(off, off, k, k) = ou->sigma * ou->driver.covariance() * ou->sigma.transpose();
        parts.brownian = parts.brownian && ou->driver.is_brownian();
        off += k;
    }
    return parts;
}

/// A(tau) = e^{C tau}, a(tau) = int_0^tau e^{Cs} mu ds. With a time-dependent
/// drift mu(s) the kernel is non-homogeneous and
/// a(t, T) = int_t^T e^{C(T-s)} mu(s) ds by quadrature.
inline AffineKernel affine_kernel_ou(const Matrix& c, const Vector& mu,
                                     std::optional<std::function<Vector(double)>> mu_t = std::nullopt) {
    detail::require_square(c, "affine_kernel_ou");
    if (mu.size() != c.rows()) {
        throw DimensionError("affine_kernel_ou: C is " + detail::shape(c) + " but mu has length " +
                             std::to_string(mu.size()));
    }
    AffineKernel k;
    k.n = c.rows();
    k.a_mat = [c](double t, double big_t) { return mat_exp(c, big_t - t); };
    if (!mu_t) {
        k.homogeneous = true;
        k.a_vec = [c, mu](double t, double big_t) { return integrate_mat_exp(c, mu, big_t - t); };
    } else {
        k.homogeneous = false;
        const Index n = c.rows();
        k.a_vec = [c, n, f = *mu_t](double t, double big_t) -> Vector {
            auto g = [&](double s) -> Vector {
                const Vector m = f(s);
                if (m.size() != n) {
                    throw DimensionError("affine_kernel_ou: mu(t) has length " +
                                         std::to_string(m.size()) + " but the state has dimension " +
                                         std::to_string(n));
                }
                return mat_exp(c, big_t - s) * m;
            };
            return adaptive_simpson<Vector>(g, t, big_t, kMatExpQuadratureTol, Vector::Zero(n)).value;
        };
    }
    return k;
}

inline AffineKernel affine_kernel_ou(const MultivariateOU& m,
                                     std::optional<std::function<Vector(double)>> mu_t = std::nullopt) {
    validate(FactorModel{m});
    return affine_kernel_ou(m.c, m.mu, std::move(mu_t));
}

inline AffineKernel affine_kernel_ou(const CompositeModel& m) {
    validate(m);
    const OuParts parts = ou_parts(m);
    return affine_kernel_ou(parts.c, parts.mu);
}

struct ForwardCurve {
    std::vector<double> x_grid;
    Matrix values;  // d x |x_grid|
    double t = 0.0;
};

namespace detail {

inline void check_x_grid(const std::vector<double>& xs) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] >= 0.0) || !std::isfinite(xs[i])) {
            throw DomainError("forward curve: maturities must be finite and nonnegative");
        }
        if (i > 0 && !(xs[i] > xs[i - 1])) {
            throw ParameterError("forward curve: maturities must be increasing");
        }
    }
}

inline void check_kernel_dims(const Matrix& p, const AffineKernel& k, const Vector& x_t) {
    if (p.cols() != k.n) {
        throw DimensionError("forward: P has " + std::to_string(p.cols()) +
                             " columns but the kernel has dimension " + std::to_string(k.n));
    }
    if (x_t.size() != k.n) {
        throw DimensionError("forward: X_t has length " + std::to_string(x_t.size()) +
                             " but the kernel has dimension " + std::to_string(k.n));
    }
}

}  // namespace detail

/// f(t, x) = P A(t, t+x) X_t + P a(t, t+x) for each x.
inline ForwardCurve forward_curve_affine(const PricingSystem& sys, const AffineKernel& kernel,
                                         const Vector& x_t, const std::vector<double>& x_grid,
                                         double t = 0.0) {
    detail::check_kernel_dims(sys.p, kernel, x_t);
    detail::check_x_grid(x_grid);
    ForwardCurve fc;
    fc.x_grid = x_grid;
    fc.t = t;
    fc.values.resize(sys.d(), static_cast<Index>(x_grid.size()));
    for (std::size_t i = 0; i < x_grid.size(); ++i) {
        const double big_t = t + x_grid[i];
        fc.values.col(static_cast<Index>(i)) =
            sys.p * (kernel.A(t, big_t) * x_t) + sys.p * kernel.a(t, big_t);
    }
    if (!fc.values.allFinite()) {
        throw NumericError("forward curve: non-finite values");
    }
    return fc;
}

/// f(t, x) - P a(t, t+x) = P A(t, t+x) X_t.
inline ForwardCurve detrended_curve(const PricingSystem& sys, const AffineKernel& kernel,
                                    const Vector& x_t, const std::vector<double>& x_grid, double t = 0.0) {
    detail::check_kernel_dims(sys.p, kernel, x_t);
    detail::check_x_grid(x_grid);
    ForwardCurve fc;
    fc.x_grid = x_grid;
    fc.t = t;
    fc.values.resize(sys.d(), static_cast<Index>(x_grid.size()));
    for (std::size_t i = 0; i < x_grid.size(); ++i) {
        fc.values.col(static_cast<Index>(i)) = sys.p * (kernel.A(t, t + x_grid[i]) * x_t);
    }
    return fc;
}

enum class ForwardVerdict { yes, no, not_applicable };

inline std::string to_string(ForwardVerdict v) {
    switch (v) {
        case ForwardVerdict::yes:
            return "yes";
        case ForwardVerdict::no:
            return "no";
        case ForwardVerdict::not_applicable:
            return "not_applicable";
    }
    return "unknown";
}

/// Cointegration of the rolled-over forwards at fixed x: c^T P A(x) must not
/// load the coordinates m+1..n.
inline ForwardVerdict forward_coint_check(const PricingSystem& sys, const AffineKernel& kernel, double x) {
    if (!kernel.homogeneous) {
        return ForwardVerdict::not_applicable;
    }
    if (!sys.c || !sys.m) {
        throw PreconditionError("forward_coint_check: c and m must be declared");
    }
    if (sys.p.cols() != kernel.n) {
        throw DimensionError("forward_coint_check: P has " + std::to_string(sys.p.cols()) +
                             " columns but the kernel has dimension " + std::to_string(kernel.n));
    }
    require_system_dims(sys.p, *sys.c, *sys.m, "forward_coint_check");
    const Vector load = kernel.A(x).transpose() * (sys.p.transpose() * *sys.c);
    const Vector tail = load.tail(sys.n() - *sys.m);
    return (tail.size() == 0 || tail.lpNorm<Eigen::Infinity>() <= kZeroTol) ? ForwardVerdict::yes
                                                                          : ForwardVerdict::no;
}

/// E[exp(z^T X(T)) | F_t] = exp(alpha(tau; z)^T X(t) + a(tau; z)).
struct ExpAffineKernel {
    Matrix c;
    Vector mu;
    Matrix q;  // Sigma Cov(W) Sigma^T

    Vector alpha(double tau, const Vector& z) const { return mat_exp(c, tau).transpose() * z; }

    /// int_0^tau z^T e^{Cs} mu + 1/2 z^T e^{Cs} Q e^{C^T s} z ds by adaptive
    /// Simpson (abs tol 1e-10).
    double a_scalar(double tau, const Vector& z) const {
        check(z);
        if (tau == 0.0) {
            return 0.0;
        }
        const auto r = adaptive_simpson(
            [&](double s) {
                const Vector w = mat_exp(c, s).transpose() * z;
                return w.dot(mu) + 0.5 * w.dot(q * w);
            },
            0.0, tau, 1e-10);
        return r.value;
    }

    /// The same integral in closed form (matrix-exponential integrals).
    double a_scalar_closed(double tau, const Vector& z) const {
        check(z);
        return z.dot(integrate_mat_exp(c, mu, tau)) + 0.5 * z.dot(transition_covariance(c, q, tau) * z);
    }

    void check(const Vector& z) const {
        if (z.size() != c.rows()) {
            throw DimensionError("exp-affine kernel: z has length " + std::to_string(z.size()) +
                                 " but the state has dimension " + std::to_string(c.rows()));
        }
    }
};

/// Exponential-affine kernel of an OU system dX = (mu + C X) dt + Sigma dW
/// with Cov(W(1)) = w_cov.
inline ExpAffineKernel exp_affine_kernel_ou(const Matrix& c, const Vector& mu, const Matrix& sigma,
                                           const Matrix& w_cov) {
    detail::require_square(c, "exp_affine_kernel_ou");
    if (mu.size() != c.rows() || sigma.rows() != c.rows() || sigma.cols() != w_cov.rows() ||
        w_cov.rows() != w_cov.cols()) {
        throw DimensionError("exp_affine_kernel_ou: C is " + detail::shape(c) + ", sigma is " +
                             detail::shape(sigma) + ", W covariance is " + detail::shape(w_cov));
    }
    return ExpAffineKernel{c, mu, sigma * w_cov * sigma.transpose()};
}

inline ExpAffineKernel exp_affine_kernel_ou(const MultivariateOU& m) {
    validate(FactorModel{m});
    if (!m.driver.is_brownian()) {
        throw UnsupportedError("exp_affine_kernel_ou: needs a Brownian driver; use ls_forward_log for jumps");
    }
    return exp_affine_kernel_ou(m.c, m.mu, m.sigma, m.driver.covariance());
}

inline ExpAffineKernel exp_affine_kernel_ou(const CompositeModel& m) {
    validate(m);
    const OuParts parts = ou_parts(m);
    if (!parts.brownian) {
        throw UnsupportedError("exp_affine_kernel_ou: needs Brownian drivers; use ls_forward_log for jumps");
    }
    return ExpAffineKernel{parts.c, parts.mu, parts.q};
}

struct GeometricForward {
    Vector log_forward;
    Vector forward;  // may overflow to inf; log_forward stays finite
};

/// F_i = exp(alpha(x; P^T e_i)^T X_t + a(x; P^T e_i)) for ln S = P X.
inline GeometricForward geometric_forward(const PricingSystem& sys, const ExpAffineKernel& k,
                                          const Vector& x_t, double x) {
    if (sys.p.cols() != k.c.rows() || x_t.size() != k.c.rows()) {
        throw DimensionError("geometric_forward: P has " + std::to_string(sys.p.cols()) +
                             " columns, X_t has length " + std::to_string(x_t.size()) +
                             ", kernel dimension " + std::to_string(k.c.rows()));
    }
    if (!(x >= 0.0) || !std::isfinite(x)) {
        throw DomainError("geometric_forward: time to maturity must be finite and nonnegative");
    }
    GeometricForward g;
    g.log_forward.resize(sys.d());
    for (Index i = 0; i < sys.d(); ++i) {
        const Vector z = sys.p.row(i).transpose();
        g.log_forward(i) = k.alpha(x, z).dot(x_t) + k.a_scalar(x, z);
    }
    if (!g.log_forward.allFinite()) {
        throw DomainError("geometric_forward: non-finite log-forward");
    }
    g.forward = g.log_forward.array().exp();
    return g;
}

/// Drift h(x) of the log-forwards when ln S = P^m X^m + P_hat X_hat with X^m
/// an LS process driven by L and X_hat a Levy process independent of L:
///   h_i(x) = int_0^x kappa_L(G(s)^T P^m^T e_i) ds + x kappa_U(P_hat^T e_i).
inline Vector ls_forward_drift(const Matrix& p_m, const Matrix& p_hat, const LsKernel& ls,
                               const std::optional<DriverSpec>& tail_driver, double x,
                               bool independent) {
    if (!independent) {
        throw PreconditionError("ls_forward: independence of the LS driver and the Levy block must be declared");
    }
    validate(FactorModel{ls});
    if (p_m.cols() != ls.out_dim) {
        throw DimensionError("ls_forward: P^m has " + std::to_string(p_m.cols()) +
                             " columns but the LS block has dimension " + std::to_string(ls.out_dim));
    }
    const Index tail_dim = tail_driver ? tail_driver->dim() : 0;
    if (p_hat.cols() != tail_dim || (p_hat.cols() > 0 && p_hat.rows() != p_m.rows())) {
        throw DimensionError("ls_forward: P_hat is " + detail::shape(p_hat) +
                             " but the Levy block has dimension " + std::to_string(tail_dim));
    }
    if (!(x >= 0.0) || !std::isfinite(x)) {
        throw DomainError("ls_forward: time to maturity must be finite and nonnegative");
    }
    const Index d = p_m.rows();
    Vector h(d);
    for (Index i = 0; i < d; ++i) {
        const Vector row = p_m.row(i).transpose();
        const auto r = adaptive_simpson(
            [&](double s) { return ls.driver.laplace_exponent(ls.kernel(s).transpose() * row); }, 0.0,
            x, 1e-12);
        double hi = r.value;
        if (tail_dim > 0) {
            hi += x * tail_driver->laplace_exponent(p_hat.row(i).transpose());
        }
        h(i) = hi;
    }
    if (!h.allFinite()) {
        throw DomainError("ls_forward: exponential moment is not finite");
    }
    return h;
}

struct LsForward {
    Vector log_forward;
    Vector h;
};

/// ln f(t, x) = P^m X~^m(t, x) + P_hat X_hat(t) + h(x), given the realised
/// field value X~^m(t, x) and the Levy block X_hat(t).
inline LsForward ls_forward_log(const Matrix& p_m, const Matrix& p_hat, const LsKernel& ls,
                                const std::optional<DriverSpec>& tail_driver, double x,
                                const Vector& field_value, const Vector& x_hat, bool independent) {
    LsForward out;
    out.h = ls_forward_drift(p_m, p_hat, ls, tail_driver, x, independent);
    if (field_value.size() != ls.out_dim || x_hat.size() != p_hat.cols()) {
        throw DimensionError("ls_forward: realised state has lengths " + std::to_string(field_value.size()) +
                             "/" + std::to_string(x_hat.size()) + " but expected " +
                             std::to_string(ls.out_dim) + "/" + std::to_string(p_hat.cols()));
    }
    out.log_forward = p_m * field_value + out.h;
    if (p_hat.cols() > 0) {
        out.log_forward += p_hat * x_hat;
    }
    return out;
}

/// CSV with header `x,f1..fd`.
inline std::string forward_csv(const ForwardCurve& fc) {
    std::string out = "x";
    for (Index i = 0; i < fc.values.rows(); ++i) {
        out += ",f" + std::to_string(i + 1);
    }
    out += "\n";
    for (std::size_t j = 0; j < fc.x_grid.size(); ++j) {
        out += fmt17(fc.x_grid[j]);
        for (Index i = 0; i < fc.values.rows(); ++i) {
            out += "," + fmt17(fc.values(i, static_cast<Index>(j)));
        }
        out += "\n";
    }
    return out;
}

}  // namespace contcoint
