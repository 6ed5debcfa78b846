#pragma once

// Linear algebra of pricing matrices S = P X and cointegration vectors.

#include <optional>
#include <string>
#include <vector>

#include "contcoint/numerics.hpp"

namespace contcoint {

inline constexpr double kZeroTol = 1e-12;
inline constexpr double kRankRelTol = 1e-12;
inline constexpr double kExactSolveTol = 1e-10;

struct PricingSystem {
    Matrix p;               // d x n
    std::optional<Vector> c;
    std::optional<Index> m;  // stationary block size
    /// Directions in factor space declared stationary on top of e_1..e_m.
    std::vector<Vector> extra_stationary;

    Index d() const noexcept { return p.rows(); }
    Index n() const noexcept { return p.cols(); }
};

struct MinimalityReport {
    bool minimal = true;
    std::vector<Index> zero_columns;  // zero-based
};

inline MinimalityReport check_minimal(const Matrix& p) {
    MinimalityReport r;
    for (Index j = 0; j < p.cols(); ++j) {
        if (!(p.col(j).lpNorm<Eigen::Infinity>() > kZeroTol)) {
            r.minimal = false;
            r.zero_columns.push_back(j);
        }
    }
    return r;
}

inline Index check_rank(const Matrix& p) {
    if (p.size() == 0) {
        return 0;
    }
    Eigen::JacobiSVD<Matrix> svd(p);
    const auto& s = svd.singularValues();
    const double thresh =
        static_cast<double>(std::max(p.rows(), p.cols())) * s(0) * kRankRelTol;
    Index r = 0;
    for (Index i = 0; i < s.size(); ++i) {
        if (s(i) > thresh) {
            ++r;
        }
    }
    return r;
}

/// Orthonormal basis of ker(P), one vector per column; empty when trivial.
inline Matrix kernel_basis(const Matrix& p) {
    const Index n = p.cols();
    if (p.rows() == 0) {
        return Matrix::Identity(n, n);
    }
    Eigen::JacobiSVD<Matrix> svd(p, Eigen::ComputeFullV);
    const Index r = check_rank(p);
    return svd.matrixV().rightCols(n - r);
}

struct CointPairReport {
    bool yes = false;
    Vector residual;  // (P^T c)_j for j > m
};

inline void require_system_dims(const Matrix& p, const Vector& c, Index m, const char* what) {
    if (c.size() != p.rows()) {
        throw DimensionError(std::string(what) + ": c has length " + std::to_string(c.size()) +
                             " but P has " + std::to_string(p.rows()) + " rows");
    }
    if (m < 0 || m > p.cols()) {
        throw DimensionError(std::string(what) + ": m=" + std::to_string(m) +
                             " outside [0, n] with n=" + std::to_string(p.cols()));
    }
}

inline CointPairReport is_coint_pair(const Matrix& p, const Vector& c, Index m) {
    require_system_dims(p, c, m, "is_coint_pair");
    const Vector a = p.transpose() * c;
    CointPairReport r;
    r.residual = a.tail(p.cols() - m);
    r.yes = r.residual.size() == 0 || r.residual.lpNorm<Eigen::Infinity>() <= kZeroTol;
    return r;
}

struct SolveReport {
    Vector c;
    double residual_norm = 0.0;
    bool exact = false;
};

/// Least-squares solve of P^T c = a. Exact when the residual is within
/// 1e-10 ||a||; otherwise the system has no solution.
inline SolveReport solve_for_c(const Matrix& p, const Vector& a) {
    if (a.size() != p.cols()) {
        throw DimensionError("solve_for_c: a has length " + std::to_string(a.size()) +
                             " but P has " + std::to_string(p.cols()) + " columns");
    }
    if (check_rank(p) != p.rows()) {
        throw PreconditionError("solve_for_c: P is rank deficient");
    }
    SolveReport r;
    const Matrix pt = p.transpose();
    r.c = pt.colPivHouseholderQr().solve(a);
    r.residual_norm = (pt * r.c - a).norm();
    r.exact = r.residual_norm <= kExactSolveTol * a.norm();
    return r;
}

/// Basis of C_X^m, optionally augmented with declared extra directions.
struct CointSpaceBasis {
    Index n = 0;
    Index m = 0;
    std::vector<Vector> basis;

    static CointSpaceBasis standard(Index n, Index m, const std::vector<Vector>& extra = {}) {
        if (m < 0 || m > n) {
            throw DimensionError("coint space: m=" + std::to_string(m) + " outside [0, " +
                                 std::to_string(n) + "]");
        }
        CointSpaceBasis b;
        b.n = n;
        b.m = m;
        for (Index i = 0; i < m; ++i) {
            b.basis.push_back(Vector::Unit(n, i));
        }
        for (const auto& e : extra) {
            if (e.size() != n) {
                throw DimensionError("coint space: extra direction has length " +
                                     std::to_string(e.size()) + " but n=" + std::to_string(n));
            }
            b.basis.push_back(e);
        }
        return b;
    }

    Matrix as_matrix() const {
        Matrix out(n, static_cast<Index>(basis.size()));
        for (std::size_t i = 0; i < basis.size(); ++i) {
            out.col(static_cast<Index>(i)) = basis[i];
        }
        return out;
    }

    /// Whether v lies in the span, up to a relative residual of 1e-10.
    bool contains(const Vector& v) const {
        if (v.size() != n) {
            throw DimensionError("coint space: vector has length " + std::to_string(v.size()) +
                                 " but n=" + std::to_string(n));
        }
        if (v.lpNorm<Eigen::Infinity>() <= kZeroTol) {
            return true;
        }
        if (basis.empty()) {
            return false;
        }
        const Matrix b = as_matrix();
        const Vector coef = b.colPivHouseholderQr().solve(v);
        return (b * coef - v).norm() <= kExactSolveTol * std::max(1.0, v.norm());
    }
};

/// Validates the structural invariants of a pricing system: d <= n, full row
/// rank and minimality.
inline void validate(const PricingSystem& sys) {
    if (sys.d() > sys.n()) {
        throw DimensionError("pricing system: d=" + std::to_string(sys.d()) + " exceeds n=" +
                             std::to_string(sys.n()));
    }
    if (!sys.p.allFinite()) {
        throw DomainError("pricing system: non-finite entries in P");
    }
    if (check_rank(sys.p) != sys.d()) {
        throw PreconditionError("pricing system: P does not have full row rank");
    }
    const auto mr = check_minimal(sys.p);
    if (!mr.minimal) {
        throw PreconditionError("pricing system: P has a zero column at index " +
                                std::to_string(mr.zero_columns.front() + 1));
    }
    if (sys.c && sys.c->size() != sys.d()) {
        throw DimensionError("pricing system: c has length " + std::to_string(sys.c->size()) +
                             " but P has " + std::to_string(sys.d()) + " rows");
    }
    if (sys.m && (*sys.m < 0 || *sys.m > sys.n())) {
        throw DimensionError("pricing system: m=" + std::to_string(*sys.m) + " outside [0, " +
                             std::to_string(sys.n()) + "]");
    }
}

}  // namespace contcoint
