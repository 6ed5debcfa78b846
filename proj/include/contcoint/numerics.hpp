#pragma once

// Dense small-matrix kernels and quadrature shared by the rest of the library.
//
// Everything here is pure: inputs are taken by const reference and nothing is
// cached across calls, so the functions may be called concurrently.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "contcoint/errors.hpp"

namespace contcoint {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Largest matrix order accepted by the dense kernels.
inline constexpr Index kMaxOrder = 32;

struct SpectrumSummary {
    std::vector<double> real_parts;
    double max_real_part = 0.0;
};

namespace detail {

inline std::string shape(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

inline void require_square(const Matrix& m, const char* what) {
    if (m.rows() != m.cols()) {
        throw DimensionError(std::string(what) + ": expected a square matrix, got " + shape(m));
    }
}

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) {
        throw DomainError(std::string(what) + ": non-finite entries");
    }
}

inline void require_order(const Matrix& m, const char* what) {
    if (m.rows() > kMaxOrder) {
        throw DimensionError(std::string(what) + ": order " + std::to_string(m.rows()) +
                             " exceeds the dense limit " + std::to_string(kMaxOrder));
    }
}

template <class T>
double quad_norm(const T& v) {
    if constexpr (std::is_arithmetic_v<T>) {
        return std::abs(v);
    } else if constexpr (std::is_same_v<T, std::complex<double>>) {
        return std::abs(v);
    } else {
        return v.size() == 0 ? 0.0 : v.template lpNorm<Eigen::Infinity>();
    }
}

}  // namespace detail

/// Result of an adaptive quadrature: value plus the accumulated Richardson
/// error estimate. `converged` is false when some panel hit the depth limit
/// with its local error above tolerance.
template <class T>
struct QuadResult {
    T value;
    double error_estimate = 0.0;
    bool converged = true;
};

namespace detail {

template <class T, class F>
void simpson_panel(F& f, double a, double b, const T& fa, const T& fm, const T& fb, const T& whole,
                   double tol, int depth, QuadResult<T>& acc) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const T flm = f(lm);
    const T frm = f(rm);
    const T left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const T right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const T both = left + right;
    const double err = quad_norm<T>(both - whole);
    // Also stop once the difference is at rounding level of the panel value.
    const bool at_rounding = err <= 64.0 * std::numeric_limits<double>::epsilon() * quad_norm<T>(both);
    if (err <= 15.0 * tol || at_rounding || depth <= 0) {
        if (depth <= 0 && err > 15.0 * tol) {
            acc.converged = false;
        }
        acc.value = acc.value + both + (both - whole) / 15.0;
        acc.error_estimate += err / 15.0;
        return;
    }
    simpson_panel<T>(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, acc);
    simpson_panel<T>(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, acc);
}

}  // namespace detail

/// Adaptive Simpson quadrature of f over [a, b] with absolute tolerance
/// `abs_tol`. T may be double, std::complex<double> or an Eigen vector; `zero`
/// fixes the shape of the accumulator. The interval is first split into
/// `panels` equal pieces so that narrow features near one end are not missed
/// by the initial five-point sample.
template <class T, class F>
QuadResult<T> adaptive_simpson(F&& f, double a, double b, double abs_tol, T zero, int panels = 8,
                               int max_depth = 30) {
    QuadResult<T> acc{zero, 0.0, true};
    if (!(b > a)) {
        return acc;
    }
    const double width = (b - a) / panels;
    const double panel_tol = abs_tol / panels;
    for (int k = 0; k < panels; ++k) {
        const double lo = a + k * width;
        const double hi = (k + 1 == panels) ? b : lo + width;
        const T flo = f(lo);
        const T fmid = f(0.5 * (lo + hi));
        const T fhi = f(hi);
        const T whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        detail::simpson_panel<T>(f, lo, hi, flo, fmid, fhi, whole, panel_tol, max_depth, acc);
    }
    return acc;
}

/// Scalar convenience overload.
template <class F>
QuadResult<double> adaptive_simpson(F&& f, double a, double b, double abs_tol) {
    return adaptive_simpson<double>(std::forward<F>(f), a, b, abs_tol, 0.0);
}

/// e^{M tau} by scaling and squaring with a degree-13 Pade approximant.
inline Matrix mat_exp(const Matrix& m, double tau) {
    detail::require_square(m, "mat_exp");
    detail::require_finite(m, "mat_exp");
    if (!std::isfinite(tau)) {
        throw DomainError("mat_exp: non-finite time argument");
    }
    if (m.rows() == 0) {
        return m;
    }
    if (tau == 0.0) {
        return Matrix::Identity(m.rows(), m.cols());
    }
    Matrix scaled = m * tau;
    Matrix out = scaled.exp();
    if (!out.allFinite()) {
        throw NumericError("mat_exp: overflow in matrix exponential");
    }
    return out;
}

/// Real parts of all eigenvalues, via Hessenberg reduction and the shifted
/// QR iteration of the real Schur form.
inline SpectrumSummary eig_real_parts(const Matrix& m) {
    detail::require_square(m, "eig_real_parts");
    detail::require_finite(m, "eig_real_parts");
    detail::require_order(m, "eig_real_parts");
    SpectrumSummary out;
    if (m.rows() == 0) {
        out.max_real_part = -std::numeric_limits<double>::infinity();
        return out;
    }
    Eigen::RealSchur<Matrix> schur(m, /*computeU=*/true);
    if (schur.info() != Eigen::Success) {
        const Matrix& t = schur.matrixT();
        double residual = 0.0;
        for (Index i = 1; i < t.rows(); ++i) {
            residual = std::max(residual, std::abs(t(i, i - 1)));
        }
        std::ostringstream os;
        os << "eig_real_parts: QR iteration did not converge (largest subdiagonal " << residual << ")";
        throw NumericError(os.str());
    }
    const Matrix& t = schur.matrixT();
    const Index n = t.rows();
    out.real_parts.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n;) {
        if (i + 1 < n && t(i + 1, i) != 0.0) {
            // 2x2 block carrying a complex pair; both share the real part.
            const double re = 0.5 * (t(i, i) + t(i + 1, i + 1));
            out.real_parts.push_back(re);
            out.real_parts.push_back(re);
            i += 2;
        } else {
            out.real_parts.push_back(t(i, i));
            i += 1;
        }
    }
    out.max_real_part = *std::max_element(out.real_parts.begin(), out.real_parts.end());
    return out;
}

/// Reciprocal 2-norm condition number sigma_min / sigma_max (0 when singular).
inline double reciprocal_condition(const Matrix& m) {
    detail::require_square(m, "reciprocal_condition");
    if (m.rows() == 0) {
        return 1.0;
    }
    if (m.isZero(0.0)) {
        return 0.0;
    }
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    const double rc = s(s.size() - 1) / s(0);
    return std::isfinite(rc) ? rc : 0.0;
}

/// Solves C V + V C^T + Q = 0 for the stationary covariance V of
/// dX = C X dt + dW with instantaneous covariance Q.
inline Matrix lyapunov_stationary_cov(const Matrix& c, const Matrix& q) {
    detail::require_square(c, "lyapunov_stationary_cov");
    detail::require_square(q, "lyapunov_stationary_cov");
    detail::require_finite(c, "lyapunov_stationary_cov");
    detail::require_finite(q, "lyapunov_stationary_cov");
    detail::require_order(c, "lyapunov_stationary_cov");
    if (c.rows() != q.rows()) {
        throw DimensionError("lyapunov_stationary_cov: C is " + detail::shape(c) + " but Q is " +
                             detail::shape(q));
    }
    const Index n = c.rows();
    if (n == 0) {
        return Matrix(0, 0);
    }
    const auto spectrum = eig_real_parts(c);
    if (!(spectrum.max_real_part < 0.0)) {
        std::ostringstream os;
        os << "lyapunov_stationary_cov: C is not stable (max real part " << spectrum.max_real_part
           << ")";
        throw StabilityError(os.str());
    }
    const Matrix id = Matrix::Identity(n, n);
    const Matrix kron = Eigen::kroneckerProduct(id, c) + Eigen::kroneckerProduct(c, id);
    const Vector rhs = -Eigen::Map<const Vector>(q.data(), n * n);
    Eigen::FullPivLU<Matrix> lu(kron);
    const Vector sol = lu.solve(rhs);
    Matrix v = Eigen::Map<const Matrix>(sol.data(), n, n);
    v = 0.5 * (v + v.transpose()).eval();

    const double qnorm = q.lpNorm<Eigen::Infinity>();
    const double residual = (c * v + v * c.transpose() + q).lpNorm<Eigen::Infinity>();
    if (residual > 1e-9 * std::max(qnorm, std::numeric_limits<double>::min())) {
        if (!(qnorm == 0.0 && residual == 0.0)) {
            std::ostringstream os;
            os << "lyapunov_stationary_cov: residual " << residual << " above tolerance";
            throw NumericError(os.str());
        }
    }
    return v;
}

/// Threshold on the reciprocal condition number below which the closed form
/// C^{-1}(e^{C tau} - I) mu is abandoned for quadrature.
inline constexpr double kInvertibilityGate = 1e-10;
inline constexpr double kMatExpQuadratureTol = 1e-10;

/// Adaptive-quadrature route for int_0^tau e^{Cs} mu ds.
inline Vector integrate_mat_exp_quadrature(const Matrix& c, const Vector& mu, double tau) {
    auto integrand = [&](double s) -> Vector { return mat_exp(c, s) * mu; };
    return adaptive_simpson<Vector>(integrand, 0.0, tau, kMatExpQuadratureTol,
                                    Vector::Zero(mu.size()))
        .value;
}

/// int_0^tau e^{Cs} mu ds. Uses C^{-1}(e^{C tau} - I) mu when C is well
/// conditioned, adaptive Simpson otherwise (e.g. a drifted Brownian block).
inline Vector integrate_mat_exp(const Matrix& c, const Vector& mu, double tau) {
    detail::require_square(c, "integrate_mat_exp");
    detail::require_finite(c, "integrate_mat_exp");
    if (c.rows() != mu.size()) {
        throw DimensionError("integrate_mat_exp: C is " + detail::shape(c) + " but mu has length " +
                             std::to_string(mu.size()));
    }
    if (!mu.allFinite() || !std::isfinite(tau) || tau < 0.0) {
        throw DomainError("integrate_mat_exp: non-finite input or negative tau");
    }
    if (tau == 0.0 || mu.size() == 0) {
        return Vector::Zero(mu.size());
    }
    if (reciprocal_condition(c) > kInvertibilityGate) {
        const Matrix e = mat_exp(c, tau) - Matrix::Identity(c.rows(), c.cols());
        return c.partialPivLu().solve(e * mu);
    }
    return integrate_mat_exp_quadrature(c, mu, tau);
}

/// Covariance int_0^tau e^{Cs} Q e^{C^T s} ds of the exact OU transition over
/// a step tau, computed with Van Loan's block exponential.
inline Matrix transition_covariance(const Matrix& c, const Matrix& q, double tau) {
    detail::require_square(c, "transition_covariance");
    if (c.rows() != q.rows() || q.rows() != q.cols()) {
        throw DimensionError("transition_covariance: C is " + detail::shape(c) + " but Q is " +
                             detail::shape(q));
    }
    const Index n = c.rows();
    if (n == 0 || tau == 0.0) {
        return Matrix::Zero(n, n);
    }
    // Van Loan on a short step, then V(2s) = V(s) + e^{Cs} V(s) e^{C^T s}.
    // The e^{-C^T s} block overflows for long horizons, so it is never
    // formed over the full interval.
    const double norm = c.cwiseAbs().rowwise().sum().maxCoeff();
    int doublings = 0;
    double step = tau;
    while (norm * step > 0.5 && doublings < 60) {
        step *= 0.5;
        ++doublings;
    }
    Matrix block = Matrix::Zero(2 * n, 2 * n);
    block.topLeftCorner(n, n) = c;
    block.topRightCorner(n, n) = q;
    block.bottomRightCorner(n, n) = -c.transpose();
    const Matrix e = mat_exp(block, step);
    Matrix f = e.topLeftCorner(n, n);
    // e = [[F, G], [0, F^{-T}]] with G = int_0^s e^{C(s-u)} Q e^{-C^T u} du.
    Matrix v = e.topRightCorner(n, n) * f.transpose();
    v = 0.5 * (v + v.transpose());
    for (int k = 0; k < doublings; ++k) {
        v = v + f * v * f.transpose();
        v = 0.5 * (v + v.transpose());
        f = f * f;
    }
    if (!v.allFinite()) {
        throw NumericError("transition_covariance: overflow");
    }
    return v;
}

/// Symmetric square-root factor L with L L^T = V for a PSD matrix (tiny
/// negative eigenvalues from round-off are clipped to zero).
inline Matrix psd_factor(const Matrix& v) {
    detail::require_square(v, "psd_factor");
    if (v.rows() == 0) {
        return v;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (v + v.transpose()));
    const Vector lambda = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lambda.asDiagonal();
}

}  // namespace contcoint
