#pragma once

// Factor-process definitions and their analytic laws.
//
// A factor model is one of four kinds: drifted Brownian motion, multivariate
// Ornstein-Uhlenbeck, CARMA(p,q), or a Levy-stationary kernel process
// X(t) = int_{-inf}^t G(t-s) dL(s). Composite models stack independent blocks
// so that a stationary block (first m coordinates) can sit next to
// non-stationary ones.

#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "contcoint/numerics.hpp"

namespace contcoint {

using Complex = std::complex<double>;

enum class DriverKind { brownian, compound_poisson_normal };

/// Zero-mean square-integrable Levy driver. The compound-Poisson variant has
/// Gaussian jumps N(jump_mean, jump_cov) arriving at `rate` and is compensated
/// by -rate*jump_mean*t; it may carry an extra Brownian part.
class DriverSpec {
public:
    static DriverSpec brownian(Matrix covariance) {
        DriverSpec d;
        d.kind_ = DriverKind::brownian;
        d.diffusion_ = std::move(covariance);
        d.validate();
        return d;
    }

    static DriverSpec standard_brownian(Index dim) { return brownian(Matrix::Identity(dim, dim)); }

    static DriverSpec compound_poisson(double rate, Vector jump_mean, Matrix jump_cov,
                                       std::optional<Matrix> diffusion = std::nullopt) {
        DriverSpec d;
        d.kind_ = DriverKind::compound_poisson_normal;
        d.rate_ = rate;
        d.jump_mean_ = std::move(jump_mean);
        d.jump_cov_ = std::move(jump_cov);
        const Index k = d.jump_mean_.size();
        d.diffusion_ = diffusion ? std::move(*diffusion) : Matrix::Zero(k, k);
        d.validate();
        return d;
    }

    DriverKind kind() const noexcept { return kind_; }
    bool is_brownian() const noexcept { return kind_ == DriverKind::brownian; }
    Index dim() const noexcept { return diffusion_.rows(); }
    double rate() const noexcept { return rate_; }
    const Vector& jump_mean() const noexcept { return jump_mean_; }
    const Matrix& jump_cov() const noexcept { return jump_cov_; }
    /// Covariance rate of the continuous (Brownian) part.
    const Matrix& diffusion() const noexcept { return diffusion_; }

    /// Second-moment rate Cov(L(1)) including jumps.
    Matrix covariance() const {
        Matrix out = diffusion_;
        if (kind_ == DriverKind::compound_poisson_normal) {
            out += rate_ * (jump_cov_ + jump_mean_ * jump_mean_.transpose());
        }
        return out;
    }

    /// Characteristic exponent psi(u) = log E exp(i u^T L(1)).
    Complex char_exponent(const Vector& u) const {
        const double quad = u.dot(diffusion_ * u);
        Complex out{-0.5 * quad, 0.0};
        if (kind_ == DriverKind::compound_poisson_normal) {
            const double um = u.dot(jump_mean_);
            const double us = u.dot(jump_cov_ * u);
            const Complex phi = std::exp(Complex{-0.5 * us, um});
            out += rate_ * (phi - 1.0 - Complex{0.0, um});
        }
        return out;
    }

    /// Laplace exponent kappa(u) = log E exp(u^T L(1)) at real arguments.
    /// Finite for every u for both driver kinds.
    double laplace_exponent(const Vector& u) const {
        double out = 0.5 * u.dot(diffusion_ * u);
        if (kind_ == DriverKind::compound_poisson_normal) {
            const double um = u.dot(jump_mean_);
            const double us = u.dot(jump_cov_ * u);
            out += rate_ * (std::exp(um + 0.5 * us) - 1.0 - um);
        }
        if (!std::isfinite(out)) {
            throw DomainError("laplace_exponent: exponential moment overflows");
        }
        return out;
    }

    std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        os << (is_brownian() ? "brownian" : "compound_poisson") << "(dim=" << dim();
        os << ",diff=" << flat(diffusion_);
        if (!is_brownian()) {
            os << ",rate=" << rate_ << ",jm=" << flat(jump_mean_) << ",jc=" << flat(jump_cov_);
        }
        os << ")";
        return os.str();
    }

    static std::string flat(const Matrix& m) {
        std::ostringstream os;
        os.precision(17);
        os << "[";
        for (Index i = 0; i < m.rows(); ++i) {
            for (Index j = 0; j < m.cols(); ++j) {
                os << (i || j ? "," : "") << m(i, j);
            }
        }
        os << "]";
        return os.str();
    }

private:
    void validate() const {
        const Index k = diffusion_.rows();
        if (diffusion_.cols() != k) {
            throw DimensionError("driver: diffusion covariance must be square");
        }
        if (!diffusion_.allFinite()) {
            throw DomainError("driver: non-finite covariance");
        }
        if (!diffusion_.isApprox(diffusion_.transpose(), 1e-12) && !diffusion_.isZero()) {
            throw ParameterError("driver: covariance is not symmetric");
        }
        if (k > 0) {
            Eigen::SelfAdjointEigenSolver<Matrix> es(diffusion_);
            if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, diffusion_.norm())) {
                throw ParameterError("driver: covariance is not positive semidefinite");
            }
        }
        if (kind_ == DriverKind::compound_poisson_normal) {
            if (!(rate_ > 0.0) || !std::isfinite(rate_)) {
                throw ParameterError("driver: jump rate must be positive");
            }
            if (jump_mean_.size() != k || jump_cov_.rows() != k || jump_cov_.cols() != k) {
                throw DimensionError("driver: jump mean/covariance dimensions disagree");
            }
            Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (jump_cov_ + jump_cov_.transpose()));
            if (k > 0 && es.eigenvalues().minCoeff() < -1e-12) {
                throw ParameterError("driver: jump covariance is not positive semidefinite");
            }
        }
    }

    DriverKind kind_ = DriverKind::brownian;
    double rate_ = 0.0;
    Vector jump_mean_;
    Matrix jump_cov_;
    Matrix diffusion_;
};

/// How the process is started. `fixed` starts at the deterministic x0;
/// `stationary` draws X(0) from the stationary law (two-sided process).
enum class StartKind { fixed, stationary };

/// X(t) = x0 + mu t + Sigma L(t).
struct DriftedBM {
    Vector mu;
    Matrix sigma;  // n x k loading
    DriverSpec driver = DriverSpec::standard_brownian(1);
    Vector x0;
};

/// dX = (mu + C X) dt + Sigma dL.
struct MultivariateOU {
    Vector mu;
    Matrix c;
    Matrix sigma;  // n x k loading
    DriverSpec driver = DriverSpec::standard_brownian(1);
    Vector x0;
    StartKind start = StartKind::fixed;
};

/// Z = b^T Y with dY = A Y dt + e_p dL, A the companion matrix of alpha.
struct Carma {
    int p = 1;
    int q = 0;
    std::vector<double> alpha;  // alpha_1..alpha_p
    Vector b;                   // full length-p vector (b_0..b_q, 0, ..., 0)
    DriverSpec driver = DriverSpec::standard_brownian(1);
    Vector y0;  // initial state of Y
};

/// X(t) = int_{t-T}^{t} G(t-s) dL(s) with T = burn_in (two-sided), or the same
/// integral restricted to s >= 0 (one-sided). The kernel is m x k.
struct LsKernel {
    std::function<Matrix(double)> kernel;
    Index out_dim = 1;
    Index noise_dim = 1;
    DriverSpec driver = DriverSpec::standard_brownian(1);
    /// Declared bound on int_0^inf ||G(u)||_F^2 du.
    double kernel_l2_bound = std::numeric_limits<double>::infinity();
    /// Truncation horizon for the (-inf, t] integral.
    double burn_in = 20.0;
    /// Declared bound on int_{burn_in}^inf ||G||_F^2; must not exceed 1e-12.
    double tail_bound = 0.0;
    /// Lipschitz bound on G, used to gate the simulation subgrid.
    double lipschitz = 1.0;
    /// Simulation subgrid step.
    double substep = 0.01;
    bool two_sided = true;
    /// Name used in model digests; the kernel itself cannot be serialised.
    std::string label = "ls_kernel";
};

using FactorModel = std::variant<DriftedBM, MultivariateOU, Carma, LsKernel>;

/// Independent blocks stacked in order.
struct CompositeModel {
    std::vector<FactorModel> blocks;

    CompositeModel() = default;
    CompositeModel(FactorModel single) { blocks.push_back(std::move(single)); }  // NOLINT
    explicit CompositeModel(std::vector<FactorModel> b) : blocks(std::move(b)) {}
};

struct GaussianLaw {
    Vector mean;
    Matrix covariance;
};

enum class StationaryStatus { stationary, non_stationary };

struct StationaryVerdict {
    StationaryStatus status = StationaryStatus::non_stationary;
    std::optional<GaussianLaw> law;
    std::string reason;

    bool stationary() const noexcept { return status == StationaryStatus::stationary; }
};

struct CarmaStateSpace {
    Matrix a;
    Vector b;
    Vector e_p;
};

/// Tolerances used by the factor-model layer.
inline constexpr double kCumulantQuadTol = 1e-11;
inline constexpr double kMaxKernelTail = 1e-12;

/// Companion-matrix state space of a CARMA(p,q) process. `b_head` holds
/// (b_0, ..., b_q) and must end in 1; an empty list means b = e_1 (CAR(p)).
inline CarmaStateSpace build_carma_state_space(int p, int q, const std::vector<double>& alpha,
                                               const std::vector<double>& b_head) {
    if (p < 1) {
        throw ParameterError("carma: p must be at least 1");
    }
    if (q < 0 || q >= p) {
        throw ParameterError("carma: need 0 <= q < p, got p=" + std::to_string(p) +
                             " q=" + std::to_string(q));
    }
    if (static_cast<int>(alpha.size()) != p) {
        throw DimensionError("carma: alpha has length " + std::to_string(alpha.size()) +
                             " but p=" + std::to_string(p));
    }
    for (double a : alpha) {
        if (!std::isfinite(a) || a < 0.0) {
            throw ParameterError("carma: alpha coefficients must be finite and nonnegative");
        }
    }
    std::vector<double> head = b_head;
    if (head.empty() && q == 0) {
        head = {1.0};
    }
    if (static_cast<int>(head.size()) != q + 1) {
        throw DimensionError("carma: b has length " + std::to_string(head.size()) + " but q+1=" +
                             std::to_string(q + 1));
    }
    if (head.back() != 1.0) {
        throw ParameterError("carma: b_q must equal 1");
    }
    CarmaStateSpace out;
    out.a = Matrix::Zero(p, p);
    for (int i = 0; i + 1 < p; ++i) {
        out.a(i, i + 1) = 1.0;
    }
    for (int j = 0; j < p; ++j) {
        // last row: (-alpha_p, ..., -alpha_1)
        out.a(p - 1, j) = -alpha[static_cast<std::size_t>(p - 1 - j)];
    }
    out.b = Vector::Zero(p);
    for (int i = 0; i <= q; ++i) {
        out.b(i) = head[static_cast<std::size_t>(i)];
    }
    out.e_p = Vector::Zero(p);
    out.e_p(p - 1) = 1.0;
    return out;
}

inline Carma make_carma(int p, int q, std::vector<double> alpha, const std::vector<double>& b_head,
                        DriverSpec driver = DriverSpec::standard_brownian(1),
                        std::optional<Vector> y0 = std::nullopt) {
    const auto ss = build_carma_state_space(p, q, alpha, b_head);
    if (driver.dim() != 1) {
        throw DimensionError("carma: driver must be scalar");
    }
    Carma m;
    m.p = p;
    m.q = q;
    m.alpha = std::move(alpha);
    m.b = ss.b;
    m.driver = std::move(driver);
    m.y0 = y0 ? *y0 : Vector::Zero(p);
    if (m.y0.size() != p) {
        throw DimensionError("carma: y0 has length " + std::to_string(m.y0.size()) +
                             " but p=" + std::to_string(p));
    }
    return m;
}

/// The state-space (OU) form of a CARMA process: dY = A Y dt + e_p dL.
inline MultivariateOU carma_as_ou(const Carma& m) {
    std::vector<double> head(m.b.data(), m.b.data() + m.q + 1);
    const auto ss = build_carma_state_space(m.p, m.q, m.alpha, head);
    MultivariateOU ou;
    ou.mu = Vector::Zero(m.p);
    ou.c = ss.a;
    ou.sigma = ss.e_p;
    ou.driver = m.driver;
    ou.x0 = m.y0;
    return ou;
}

/// Integrated CARMA process X(t) = int_0^t Z(s) ds, a non-stationary factor,
/// as an OU system on the state (Y, X): the last coordinate is X.
inline MultivariateOU integrated_carma(const Carma& m) {
    const MultivariateOU inner = carma_as_ou(m);
    const Index p = m.p;
    MultivariateOU ou;
    ou.mu = Vector::Zero(p + 1);
    ou.c = Matrix::Zero(p + 1, p + 1);
    ou.c.topLeftCorner(p, p) = inner.c;
    ou.c.block(p, 0, 1, p) = m.b.transpose();
    ou.sigma = Matrix::Zero(p + 1, 1);
    ou.sigma.topRows(p) = inner.sigma;
    ou.driver = m.driver;
    ou.x0 = Vector::Zero(p + 1);
    ou.x0.head(p) = m.y0;
    return ou;
}

/// Drifted BM written as an OU with C = 0.
inline MultivariateOU drifted_bm_as_ou(const DriftedBM& m) {
    MultivariateOU ou;
    ou.mu = m.mu;
    ou.c = Matrix::Zero(m.mu.size(), m.mu.size());
    ou.sigma = m.sigma;
    ou.driver = m.driver;
    ou.x0 = m.x0;
    return ou;
}

/// Dimension of the observable factor vector of a block.
inline Index factor_dim(const FactorModel& model) {
    return std::visit(
        [](const auto& m) -> Index {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, DriftedBM>) {
                return m.mu.size();
            } else if constexpr (std::is_same_v<T, MultivariateOU>) {
                return m.mu.size();
            } else if constexpr (std::is_same_v<T, Carma>) {
                return 1;
            } else {
                return m.out_dim;
            }
        },
        model);
}

inline Index factor_dim(const CompositeModel& model) {
    Index n = 0;
    for (const auto& b : model.blocks) {
        n += factor_dim(b);
    }
    return n;
}

inline std::string model_tag(const FactorModel& model) {
    static constexpr const char* tags[] = {"drifted_bm", "mv_ou", "carma", "ls_kernel"};
    return tags[model.index()];
}

namespace detail {

inline void check_ou_shapes(const Vector& mu, const Matrix& c, const Matrix& sigma,
                            const DriverSpec& driver, const Vector& x0, const char* what) {
    const Index n = mu.size();
    if (c.rows() != n || c.cols() != n) {
        throw DimensionError(std::string(what) + ": C is " + shape(c) + " but mu has length " +
                             std::to_string(n));
    }
    if (sigma.rows() != n) {
        throw DimensionError(std::string(what) + ": sigma has " + std::to_string(sigma.rows()) +
                             " rows but the state has dimension " + std::to_string(n));
    }
    if (sigma.cols() != driver.dim()) {
        throw DimensionError(std::string(what) + ": sigma has " + std::to_string(sigma.cols()) +
                             " columns but the driver has dimension " +
                             std::to_string(driver.dim()));
    }
    if (x0.size() != n) {
        throw DimensionError(std::string(what) + ": x0 has length " + std::to_string(x0.size()) +
                             " but the state has dimension " + std::to_string(n));
    }
    if (!mu.allFinite() || !c.allFinite() || !sigma.allFinite() || !x0.allFinite()) {
        throw DomainError(std::string(what) + ": non-finite parameters");
    }
}

}  // namespace detail

/// Checks the well-formedness invariants of a block; throws on violation.
inline void validate(const FactorModel& model) {
    std::visit(
        [](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, DriftedBM>) {
                detail::check_ou_shapes(m.mu, Matrix::Zero(m.mu.size(), m.mu.size()), m.sigma,
                                        m.driver, m.x0, "drifted_bm");
            } else if constexpr (std::is_same_v<T, MultivariateOU>) {
                detail::check_ou_shapes(m.mu, m.c, m.sigma, m.driver, m.x0, "mv_ou");
                if (m.mu.size() > kMaxOrder) {
                    throw DimensionError("mv_ou: state dimension exceeds the dense limit");
                }
                if (m.start == StartKind::stationary && !m.driver.is_brownian()) {
                    throw UnsupportedError("mv_ou: stationary start requires a Brownian driver");
                }
            } else if constexpr (std::is_same_v<T, Carma>) {
                std::vector<double> head(m.b.data(), m.b.data() + std::min<Index>(m.q + 1, m.b.size()));
                build_carma_state_space(m.p, m.q, m.alpha, head);
                if (m.b.size() != m.p) {
                    throw DimensionError("carma: b must have length p");
                }
                for (Index i = m.q + 1; i < m.p; ++i) {
                    if (m.b(i) != 0.0) {
                        throw ParameterError("carma: b must vanish above index q");
                    }
                }
                if (m.driver.dim() != 1) {
                    throw DimensionError("carma: driver must be scalar");
                }
                if (m.y0.size() != m.p) {
                    throw DimensionError("carma: y0 has length " + std::to_string(m.y0.size()) +
                                         " but p=" + std::to_string(m.p));
                }
            } else {
                if (!m.kernel) {
                    throw ParameterError("ls_kernel: no kernel function");
                }
                if (m.driver.dim() != m.noise_dim) {
                    throw DimensionError("ls_kernel: driver dimension " +
                                         std::to_string(m.driver.dim()) + " but kernel has " +
                                         std::to_string(m.noise_dim) + " columns");
                }
                const Matrix g0 = m.kernel(0.0);
                if (g0.rows() != m.out_dim || g0.cols() != m.noise_dim) {
                    throw DimensionError("ls_kernel: kernel returns " + detail::shape(g0) +
                                         " but declared " + std::to_string(m.out_dim) + "x" +
                                         std::to_string(m.noise_dim));
                }
                if (!(m.burn_in > 0.0) || !std::isfinite(m.burn_in)) {
                    throw ParameterError("ls_kernel: burn_in must be positive and finite");
                }
                if (!(m.tail_bound >= 0.0) || m.tail_bound > kMaxKernelTail) {
                    throw ParameterError("ls_kernel: declared tail bound exceeds 1e-12");
                }
                if (!(m.substep > 0.0)) {
                    throw ParameterError("ls_kernel: substep must be positive");
                }
            }
        },
        model);
}

inline void validate(const CompositeModel& model) {
    for (const auto& b : model.blocks) {
        validate(b);
    }
}

/// Numerically measured int_{from}^{to} ||G(u)||_F^2 du.
inline double kernel_l2_mass(const LsKernel& m, double from, double to) {
    auto f = [&](double u) { return m.kernel(u).squaredNorm(); };
    return adaptive_simpson(f, from, to, 1e-14).value;
}

/// Checks that the kernel mass beyond the burn-in horizon is within the
/// declared tail bound (measured over [T, 4T]).
inline void check_kernel_truncation(const LsKernel& m) {
    const double tail = kernel_l2_mass(m, m.burn_in, 4.0 * m.burn_in);
    if (tail > std::max(m.tail_bound, 0.0) + kMaxKernelTail) {
        std::ostringstream os;
        os << "ls_kernel: kernel mass beyond burn-in is " << tail << ", above the declared bound";
        throw ParameterError(os.str());
    }
}

/// Stationary law of a stable OU: mean -C^{-1} mu, covariance from the
/// Lyapunov equation with Q = Sigma Cov(L) Sigma^T.
inline GaussianLaw ou_stationary_law(const MultivariateOU& m) {
    const Matrix q = m.sigma * m.driver.covariance() * m.sigma.transpose();
    GaussianLaw law;
    law.covariance = lyapunov_stationary_cov(m.c, q);
    law.mean = -m.c.partialPivLu().solve(m.mu);
    return law;
}

/// Covariance int_0^T G(u) Cov(L) G(u)^T du of an LS block.
inline Matrix ls_stationary_cov(const LsKernel& m) {
    const Matrix cov_l = m.driver.covariance();
    auto f = [&](double u) -> Vector {
        const Matrix g = m.kernel(u);
        const Matrix v = g * cov_l * g.transpose();
        return Eigen::Map<const Vector>(v.data(), v.size());
    };
    const auto r = adaptive_simpson<Vector>(f, 0.0, m.burn_in, kCumulantQuadTol,
                                            Vector::Zero(m.out_dim * m.out_dim), 16);
    Matrix v = Eigen::Map<const Matrix>(r.value.data(), m.out_dim, m.out_dim);
    return 0.5 * (v + v.transpose());
}

inline StationaryVerdict classify_stationary(const FactorModel& model) {
    validate(model);
    return std::visit(
        [](const auto& m) -> StationaryVerdict {
            using T = std::decay_t<decltype(m)>;
            StationaryVerdict v;
            if constexpr (std::is_same_v<T, DriftedBM>) {
                const bool no_drift = m.mu.isZero(0.0);
                const bool no_noise = m.sigma.isZero(0.0);
                if (no_drift && no_noise) {
                    v.status = StationaryStatus::stationary;
                    v.reason = "degenerate_constant";
                    v.law = GaussianLaw{m.x0, Matrix::Zero(m.x0.size(), m.x0.size())};
                } else {
                    v.reason = no_drift ? "diffusion_present" : "drift_present";
                }
            } else if constexpr (std::is_same_v<T, MultivariateOU> || std::is_same_v<T, Carma>) {
                const MultivariateOU ou = [&] {
                    if constexpr (std::is_same_v<T, Carma>) {
                        return carma_as_ou(m);
                    } else {
                        return m;
                    }
                }();
                const auto spec = eig_real_parts(ou.c);
                if (!(spec.max_real_part < 0.0)) {
                    v.reason = "eigenvalue_nonnegative";
                    return v;
                }
                v.status = StationaryStatus::stationary;
                v.reason = "stable_spectrum";
                if (ou.driver.is_brownian()) {
                    GaussianLaw law = ou_stationary_law(ou);
                    if constexpr (std::is_same_v<T, Carma>) {
                        GaussianLaw z;
                        z.mean = Vector::Constant(1, m.b.dot(law.mean));
                        z.covariance = Matrix::Constant(1, 1, m.b.dot(law.covariance * m.b));
                        v.law = z;
                    } else {
                        v.law = law;
                    }
                }
            } else {
                if (!std::isfinite(m.kernel_l2_bound)) {
                    v.reason = "kernel_not_square_integrable";
                    return v;
                }
                v.status = StationaryStatus::stationary;
                v.reason = "kernel_square_integrable";
                if (m.driver.is_brownian()) {
                    v.law = GaussianLaw{Vector::Zero(m.out_dim), ls_stationary_cov(m)};
                }
            }
            return v;
        },
        model);
}

/// Stationarity of a composite: every block must be stationary; the law is
/// the block-diagonal product when every block has one.
inline StationaryVerdict classify_stationary(const CompositeModel& model) {
    StationaryVerdict out;
    out.status = StationaryStatus::stationary;
    out.reason = "all_blocks_stationary";
    const Index n = factor_dim(model);
    GaussianLaw law{Vector::Zero(n), Matrix::Zero(n, n)};
    bool have_law = true;
    Index off = 0;
    for (const auto& b : model.blocks) {
        const auto v = classify_stationary(b);
        const Index k = factor_dim(b);
        if (!v.stationary()) {
            return v;
        }
        if (v.law) {
            law.mean.segment(off, k) = v.law->mean;
            law.covariance.block(off, off, k, k) = v.law->covariance;
        } else {
            have_law = false;
        }
        off += k;
    }
    if (have_law) {
        out.law = law;
    }
    return out;
}

namespace detail {

// Log-characteristic function of X(t) for an OU block started at x0:
//   i z^T (e^{Ct} x0 + a(t)) + int_0^t psi(Sigma^T e^{C^T s} z) ds.
inline Complex ou_cumulant(const MultivariateOU& m, double t, const Vector& z) {
    if (m.start == StartKind::stationary) {
        const GaussianLaw law = ou_stationary_law(m);
        return Complex{-0.5 * z.dot(law.covariance * z), z.dot(law.mean)};
    }
    const Vector mean = mat_exp(m.c, t) * m.x0 + integrate_mat_exp(m.c, m.mu, t);
    if (m.driver.is_brownian()) {
        const Matrix q = m.sigma * m.driver.diffusion() * m.sigma.transpose();
        const Matrix v = transition_covariance(m.c, q, t);
        return Complex{-0.5 * z.dot(v * z), z.dot(mean)};
    }
    auto f = [&](double s) -> Complex {
        const Vector u = m.sigma.transpose() * (mat_exp(m.c.transpose(), s) * z);
        return m.driver.char_exponent(u);
    };
    const auto r = adaptive_simpson<Complex>(f, 0.0, t, kCumulantQuadTol, Complex{}, 16);
    if (!r.converged) {
        throw NumericError("cumulant: quadrature did not converge");
    }
    return Complex{0.0, z.dot(mean)} + r.value;
}

}  // namespace detail

/// Log-characteristic exponent log E exp(i z^T X(t)).
inline Complex cumulant(const FactorModel& model, double t, const Vector& z) {
    validate(model);
    if (z.size() != factor_dim(model)) {
        throw DimensionError("cumulant: z has length " + std::to_string(z.size()) +
                             " but the model has dimension " + std::to_string(factor_dim(model)));
    }
    if (!(t >= 0.0) || !std::isfinite(t)) {
        throw DomainError("cumulant: time must be finite and nonnegative");
    }
    return std::visit(
        [&](const auto& m) -> Complex {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, DriftedBM>) {
                const Vector mean = m.x0 + m.mu * t;
                return Complex{0.0, z.dot(mean)} + t * m.driver.char_exponent(m.sigma.transpose() * z);
            } else if constexpr (std::is_same_v<T, MultivariateOU>) {
                return detail::ou_cumulant(m, t, z);
            } else if constexpr (std::is_same_v<T, Carma>) {
                return detail::ou_cumulant(carma_as_ou(m), t, z(0) * m.b);
            } else {
                const double upper = m.two_sided ? m.burn_in : std::min(t, m.burn_in);
                auto f = [&](double s) -> Complex {
                    return m.driver.char_exponent(m.kernel(s).transpose() * z);
                };
                const auto r = adaptive_simpson<Complex>(f, 0.0, upper, kCumulantQuadTol, Complex{}, 32);
                if (!r.converged) {
                    throw NumericError("cumulant: quadrature did not converge");
                }
                return r.value;
            }
        },
        model);
}

inline Complex cumulant(const CompositeModel& model, double t, const Vector& z) {
    if (z.size() != factor_dim(model)) {
        throw DimensionError("cumulant: z has length " + std::to_string(z.size()) +
                             " but the model has dimension " + std::to_string(factor_dim(model)));
    }
    Complex out{};
    Index off = 0;
    for (const auto& b : model.blocks) {
        const Index k = factor_dim(b);
        out += cumulant(b, t, z.segment(off, k));
        off += k;
    }
    return out;
}

/// Deterministic mean E X(t) of a block.
inline Vector mean_at(const FactorModel& model, double t) {
    return std::visit(
        [&](const auto& m) -> Vector {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, DriftedBM>) {
                return m.x0 + m.mu * t;
            } else if constexpr (std::is_same_v<T, MultivariateOU>) {
                if (m.start == StartKind::stationary) {
                    return ou_stationary_law(m).mean;
                }
                return mat_exp(m.c, t) * m.x0 + integrate_mat_exp(m.c, m.mu, t);
            } else if constexpr (std::is_same_v<T, Carma>) {
                const MultivariateOU ou = carma_as_ou(m);
                return Vector::Constant(1, m.b.dot(mat_exp(ou.c, t) * ou.x0));
            } else {
                return Vector::Zero(m.out_dim);
            }
        },
        model);
}

/// Inverse of the slowest nonzero relaxation rate of the linear parts; used
/// to choose "large" times when a caller does not supply them.
inline double relaxation_time(const CompositeModel& model) {
    double slowest = std::numeric_limits<double>::infinity();
    double horizon = 0.0;
    for (const auto& b : model.blocks) {
        std::visit(
            [&](const auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, MultivariateOU> || std::is_same_v<T, Carma>) {
                    Matrix c;
                    if constexpr (std::is_same_v<T, Carma>) {
                        c = carma_as_ou(m).c;
                    } else {
                        c = m.c;
                    }
                    for (double re : eig_real_parts(c).real_parts) {
                        if (re < -1e-12) {
                            slowest = std::min(slowest, -re);
                        }
                    }
                } else if constexpr (std::is_same_v<T, LsKernel>) {
                    horizon = std::max(horizon, m.burn_in);
                }
            },
            b);
    }
    double tau = std::isfinite(slowest) ? 1.0 / slowest : 1.0;
    return std::max(tau, horizon / 8.0);
}

/// Slope d/dt E[a^T X(t)] at a large time (50 relaxation times). A nonzero
/// value means a^T X carries a deterministic trend. Returns nullopt when the
/// mean is not finite (explosive dynamics).
inline std::optional<double> drift_loading(const CompositeModel& model, const Vector& a) {
    if (a.size() != factor_dim(model)) {
        throw DimensionError("drift_loading: direction has length " + std::to_string(a.size()) +
                             " but the model has dimension " + std::to_string(factor_dim(model)));
    }
    const double t = 50.0 * relaxation_time(model);
    double slope = 0.0;
    Index off = 0;
    for (const auto& b : model.blocks) {
        const Index k = factor_dim(b);
        const Vector ab = a.segment(off, k);
        off += k;
        if (ab.isZero(0.0)) {
            continue;
        }
        double s = 0.0;
        bool finite = true;
        std::visit(
            [&](const auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, DriftedBM>) {
                    s = ab.dot(m.mu);
                } else if constexpr (std::is_same_v<T, MultivariateOU>) {
                    try {
                        const Vector mean = mat_exp(m.c, t) * m.x0 + integrate_mat_exp(m.c, m.mu, t);
                        s = ab.dot(m.c * mean + m.mu);
                    } catch (const NumericError&) {
                        finite = false;
                    }
                    finite = finite && std::isfinite(s);
                }
            },
            b);
        if (!finite) {
            return std::nullopt;
        }
        slope += s;
    }
    return slope;
}

/// Canonical text description used for model digests.
inline std::string describe(const FactorModel& model) {
    std::ostringstream os;
    os.precision(17);
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, DriftedBM>) {
                os << "drifted_bm{mu=" << DriverSpec::flat(m.mu) << ",sigma=" << DriverSpec::flat(m.sigma)
                   << ",x0=" << DriverSpec::flat(m.x0) << "," << m.driver.describe() << "}";
            } else if constexpr (std::is_same_v<T, MultivariateOU>) {
                os << "mv_ou{mu=" << DriverSpec::flat(m.mu) << ",C=" << DriverSpec::flat(m.c)
                   << ",sigma=" << DriverSpec::flat(m.sigma) << ",x0=" << DriverSpec::flat(m.x0)
                   << ",start=" << (m.start == StartKind::fixed ? "fixed" : "stationary") << ","
                   << m.driver.describe() << "}";
            } else if constexpr (std::is_same_v<T, Carma>) {
                os << "carma{p=" << m.p << ",q=" << m.q << ",alpha=[";
                for (std::size_t i = 0; i < m.alpha.size(); ++i) {
                    os << (i ? "," : "") << m.alpha[i];
                }
                os << "],b=" << DriverSpec::flat(m.b) << ",y0=" << DriverSpec::flat(m.y0) << ","
                   << m.driver.describe() << "}";
            } else {
                os << "ls_kernel{label=" << m.label << ",m=" << m.out_dim << ",k=" << m.noise_dim
                   << ",burn_in=" << m.burn_in << ",substep=" << m.substep
                   << ",two_sided=" << m.two_sided << "," << m.driver.describe() << "}";
            }
        },
        model);
    return os.str();
}

inline std::string describe(const CompositeModel& model) {
    std::string out = "composite[";
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        out += (i ? ";" : "") + describe(model.blocks[i]);
    }
    return out + "]";
}

/// 64-bit FNV-1a digest of the canonical description, as 16 hex digits.
inline std::string model_digest(const CompositeModel& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : describe(model)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[h & 0xF];
        h >>= 4;
    }
    return out;
}

}  // namespace contcoint
