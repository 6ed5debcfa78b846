#include <gtest/gtest.h>

#include "contcoint/forward_pricing.hpp"
#include "contcoint/simulation.hpp"
#include "fixtures.hpp"

using namespace contcoint;
using namespace fixtures;

namespace {

PricingSystem two_market_system(Vector c) { return PricingSystem{two_market_p(), std::move(c), 2, {}}; }

}  // namespace

TEST(AffineKernel, ZeroMaturity) {
    const auto k = affine_kernel_ou(two_market());
    EXPECT_EQ(k.A(0.0), Matrix::Identity(3, 3));
    EXPECT_EQ(k.a(0.0), Vector::Zero(3));
    EXPECT_TRUE(k.homogeneous);
}

TEST(AffineKernel, BlockStructure) {
    const auto k = affine_kernel_ou(two_market(0.3, 0.2));
    const Matrix a = k.A(2.0);
    EXPECT_EQ(a(0, 2), 0.0);
    EXPECT_EQ(a(1, 2), 0.0);
    EXPECT_NEAR(a(2, 2), 1.0, 1e-15);
    EXPECT_NEAR(k.a(2.0)(2), 0.6, 1e-10);
    EXPECT_NEAR(a(0, 0), std::exp(-2.0), 1e-15);
}

TEST(AffineKernel, ScalarClosedForm) {
    const auto k = affine_kernel_ou(Matrix::Constant(1, 1, -2.0), Vector::Ones(1));
    EXPECT_NEAR(k.A(1.0)(0, 0), std::exp(-2.0), 1e-15);
    EXPECT_NEAR(k.a(1.0)(0), (1.0 - std::exp(-2.0)) / 2.0, 1e-14);
}

TEST(AffineKernel, TimeDependentDrift) {
    const MultivariateOU m = two_market(0.0, 0.2);
    const auto k = affine_kernel_ou(m, [](double s) { return Vector(Eigen::Vector3d(0, 0, std::sin(s))); });
    EXPECT_FALSE(k.homogeneous);
    EXPECT_NEAR(k.a(1.0, 3.0)(2), std::cos(1.0) - std::cos(3.0), 1e-9);
    const auto sys = two_market_system(Eigen::Vector2d(1, -1));
    EXPECT_EQ(forward_coint_check(sys, k, 1.0), ForwardVerdict::not_applicable);
    const Vector xt(Eigen::Vector3d(0.2, -0.1, 1.0));
    const auto f = forward_curve_affine(sys, k, xt, {0.0, 1.0, 2.0}, 1.0);
    const auto fbar = detrended_curve(sys, k, xt, {0.0, 1.0, 2.0}, 1.0);
    for (int j = 0; j < 3; ++j) {
        const Vector direct = sys.p * (k.A(1.0, 1.0 + j) * xt);
        EXPECT_LT((fbar.values.col(j) - direct).norm(), 1e-14);
        EXPECT_LT((f.values.col(j) - fbar.values.col(j) - sys.p * k.a(1.0, 1.0 + j)).norm(), 1e-12);
    }
    EXPECT_EQ(Vector(fbar.values.col(0)), Vector(sys.p * xt));
}

TEST(ForwardCurve, SpotConsistency) {
    const auto sys = two_market_system(Eigen::Vector2d(1, -1));
    const auto k = affine_kernel_ou(two_market());
    const Vector xt(Eigen::Vector3d(1.0, -1.0, 2.0));
    const auto f = forward_curve_affine(sys, k, xt, {0.0, 0.5, 2.0});
    EXPECT_EQ(Vector(f.values.col(0)), Vector(sys.p * xt));
    // closed form at x = 2 for the block kernel
    const double x = 2.0;
    const double f1 = std::exp(-x) * 1.0 + 2.0 + 0.3 * x;
    const double f2 = -std::exp(-2.0 * x) + 2.0 + 0.3 * x;
    EXPECT_NEAR(f.values(0, 2), f1, 1e-12);
    EXPECT_NEAR(f.values(1, 2), f2, 1e-12);
}

TEST(ForwardCurve, MartingaleFactors) {
    PricingSystem sys{Matrix::Identity(2, 2), std::nullopt, std::nullopt, {}};
    const auto k = affine_kernel_ou(Matrix::Zero(2, 2), Vector::Zero(2));
    const Vector xt(Eigen::Vector2d(1.5, -0.5));
    const auto f = forward_curve_affine(sys, k, xt, {0.0, 1.0, 7.0});
    for (int j = 0; j < 3; ++j) {
        EXPECT_LT((f.values.col(j) - xt).norm(), 1e-12);
    }
}

TEST(ForwardCurve, MonteCarloConditionalExpectation) {
    const auto sys = two_market_system(Eigen::Vector2d(1, -1));
    MultivariateOU m = two_market();
    m.x0 = Eigen::Vector3d(1.0, -1.0, 2.0);
    const auto k = affine_kernel_ou(m);
    const Index n = 20000;
    const auto e = simulate(FactorModel{m}, TimeGrid{1.0}, n, 77);
    const auto mo = ensemble_moments(e, 0);
    const auto f = forward_curve_affine(sys, k, m.x0, {1.0});
    const Vector mc = sys.p * mo.mean;
    const Matrix cov = sys.p * mo.cov * sys.p.transpose();
    for (Index i = 0; i < 2; ++i) {
        EXPECT_NEAR(f.values(i, 0), mc(i), 3.5 * std::sqrt(cov(i, i) / n));
    }
}

TEST(ForwardCoint, BlockKernelAndMixing) {
    const auto sys = two_market_system(Eigen::Vector2d(1, -1));
    const auto k = affine_kernel_ou(two_market());
    for (double x : {0.0, 0.5, 1.0, 10.0}) {
        EXPECT_EQ(forward_coint_check(sys, k, x), ForwardVerdict::yes);
    }
    const auto mixing = AffineKernel::homogeneous_from(
        3,
        [](double x) {
            Matrix a = Matrix::Identity(3, 3);
            a(0, 2) = x;
            return a;
        },
        [](double) { return Vector(Vector::Zero(3)); });
    EXPECT_EQ(forward_coint_check(sys, mixing, 0.0), ForwardVerdict::yes);
    EXPECT_EQ(forward_coint_check(sys, mixing, 0.5), ForwardVerdict::no);
    const auto bad = two_market_system(Eigen::Vector2d(1, 1));
    EXPECT_EQ(forward_coint_check(bad, k, 0.0), is_coint_pair(bad.p, *bad.c, 2).yes ? ForwardVerdict::yes
                                                                                     : ForwardVerdict::no);
}

TEST(ForwardCurve, MartingaleInTime) {
    // F(t, T) = P A(T - t) X(t) + P a(T - t) has constant mean in t
    const auto sys = two_market_system(Eigen::Vector2d(1, -1));
    MultivariateOU m = two_market();
    m.x0 = Eigen::Vector3d(0.5, 0.2, 1.0);
    const auto k = affine_kernel_ou(m);
    const double big_t = 3.0;
    const Index n = 20000;
    const auto e = simulate(FactorModel{m}, TimeGrid{0.5, 2.0}, n, 5);
    std::vector<Vector> means;
    std::vector<Vector> ses;
    for (Index ti = 0; ti < 2; ++ti) {
        const double t = e.grid[ti];
        const Matrix a = sys.p * k.A(big_t - t);
        const Vector b = sys.p * k.a(big_t - t);
        Vector s1 = Vector::Zero(2), s2 = Vector::Zero(2);
        for (Index p = 0; p < n; ++p) {
            const Vector f = a * e.state(p, ti) + b;
            s1 += f;
            s2 += f.cwiseProduct(f);
        }
        const Vector mean = s1 / n;
        means.push_back(mean);
        ses.push_back(((s2 / n - mean.cwiseProduct(mean)) / n).cwiseSqrt());
    }
    for (Index i = 0; i < 2; ++i) {
        EXPECT_NEAR(means[0](i), means[1](i), 3.0 * std::hypot(ses[0](i), ses[1](i)));
    }
}

TEST(ExpAffine, ZeroMaturityAndZeroDirection) {
    const auto k = exp_affine_kernel_ou(two_market());
    const Vector z(Eigen::Vector3d(1.0, -2.0, 0.5));
    EXPECT_EQ(k.alpha(0.0, z), z);
    EXPECT_EQ(k.a_scalar(0.0, z), 0.0);
    EXPECT_EQ(k.alpha(3.0, Vector::Zero(3)), Vector::Zero(3));
    EXPECT_EQ(k.a_scalar(3.0, Vector::Zero(3)), 0.0);
}

TEST(ExpAffine, ScalarLongMaturity) {
    const auto k = exp_affine_kernel_ou(Matrix::Constant(1, 1, -1.0), Vector::Zero(1),
                                        Matrix::Ones(1, 1), Matrix::Ones(1, 1));
    // 1/2 int_0^inf e^{-2s} ds
    EXPECT_NEAR(k.a_scalar(40.0, Vector::Ones(1)), 0.25, 1e-10);
}

TEST(ExpAffine, QuadratureMatchesClosedForm) {
    const auto k = exp_affine_kernel_ou(two_market(0.3, 0.2));
    for (double tau : {0.1, 1.0, 5.0}) {
        for (const Vector& z : {Vector(Eigen::Vector3d(1, 0, 1)), Vector(Eigen::Vector3d(0, 1, 1)),
                                Vector(Eigen::Vector3d(-1, 2, 0.5))}) {
            EXPECT_NEAR(k.a_scalar(tau, z), k.a_scalar_closed(tau, z), 1e-9);
        }
    }
}

TEST(ExpAffine, NonBrownianRejected) {
    MultivariateOU m = scalar_ou(1.0, 1.0);
    m.driver = DriverSpec::compound_poisson(1.0, Vector::Zero(1), Matrix::Ones(1, 1));
    EXPECT_THROW(exp_affine_kernel_ou(m), UnsupportedError);
}

TEST(GeometricForward, SpotConsistencyAndLogCointegration) {
    const auto sys = two_market_system(Eigen::Vector2d(1, -1));
    const auto k = exp_affine_kernel_ou(two_market());
    const Vector xt(Eigen::Vector3d(0.3, -0.2, 1.1));
    const auto g0 = geometric_forward(sys, k, xt, 0.0);
    EXPECT_EQ(g0.log_forward, Vector(sys.p * xt));
    // c^T ln f loads only the stationary block: alpha(x, P^T c) has zero third entry
    for (double x : {0.5, 2.0}) {
        const Vector w = k.alpha(x, sys.p.transpose() * *sys.c);
        EXPECT_LE(std::abs(w(2)), 1e-14);
        const auto g = geometric_forward(sys, k, xt, x);
        Vector shifted = xt;
        shifted(2) += 5.0;
        const auto gs = geometric_forward(sys, k, shifted, x);
        EXPECT_NEAR(sys.c->dot(g.log_forward), sys.c->dot(gs.log_forward), 1e-12);
    }
}

TEST(GeometricForward, SmallVolatilityLimit) {
    MultivariateOU m = two_market(0.3, 0.2);
    m.sigma *= 1e-6;
    const auto sys = two_market_system(Eigen::Vector2d(1, -1));
    const auto kg = exp_affine_kernel_ou(m);
    const auto ka = affine_kernel_ou(m);
    const Vector xt(Eigen::Vector3d(0.3, -0.2, 1.1));
    const auto g = geometric_forward(sys, kg, xt, 1.5);
    const auto f = forward_curve_affine(sys, ka, xt, {1.5});
    EXPECT_LT((g.log_forward - f.values.col(0)).norm(), 1e-9);
}

TEST(LsForward, GaussianDrift) {
    const LsKernel ls = exp_kernel();
    for (double x : {0.0, 0.1, 1.0, 5.0}) {
        const Vector h = ls_forward_drift(Matrix::Ones(1, 1), Matrix(1, 0), ls, std::nullopt, x, true);
        EXPECT_NEAR(h(0), (1.0 - std::exp(-2.0 * x)) / 4.0, 1e-10);
    }
}

TEST(LsForward, JumpDriverAndLevyBlock) {
    const auto drv = DriverSpec::compound_poisson(1.5, Vector::Constant(1, 0.2), Matrix::Constant(1, 1, 0.1));
    const LsKernel ls = exp_kernel(drv);
    const auto tail = DriverSpec::brownian(Matrix::Constant(1, 1, 0.04));
    Matrix pm(2, 1), ph(2, 1);
    pm << 1.0, 2.0;
    ph << 1.0, 1.0;
    const double x = 1.3;
    const Vector h = ls_forward_drift(pm, ph, ls, tail, x, true);
    for (Index i = 0; i < 2; ++i) {
        // composite Simpson, 4000 panels
        const int n = 4000;
        double s = 0.0;
        for (int j = 0; j <= n; ++j) {
            const double w = (j == 0 || j == n) ? 1.0 : (j % 2 ? 4.0 : 2.0);
            s += w * drv.laplace_exponent(Vector::Constant(1, pm(i, 0) * std::exp(-j * x / n)));
        }
        s *= x / n / 3.0;
        EXPECT_NEAR(h(i), s + x * 0.5 * 0.04, 1e-10);
    }
    const auto lf = ls_forward_log(pm, ph, ls, tail, 0.0, Vector::Constant(1, 0.7), Vector::Constant(1, -0.1), true);
    EXPECT_NEAR(lf.log_forward(0), 0.7 - 0.1, 1e-15);
    EXPECT_NEAR(lf.log_forward(1), 1.4 - 0.1, 1e-15);
    EXPECT_THROW(ls_forward_drift(pm, ph, ls, tail, x, false), PreconditionError);
}

TEST(LsForward, CointegratedSpread) {
    const LsKernel ls = exp_kernel();
    Matrix pm(2, 1), ph(2, 1);
    pm << 1.0, -1.0;
    ph << 1.0, 1.0;
    const Vector c(Eigen::Vector2d(1, 1));
    // P_hat^T c = 2 is not zero: choose c = (1, -1) so that the Levy block cancels
    const Vector c2(Eigen::Vector2d(1, -1));
    const auto tail = DriverSpec::standard_brownian(1);
    const auto a = ls_forward_log(pm, ph, ls, tail, 1.0, Vector::Constant(1, 0.4), Vector::Constant(1, 3.0), true);
    const auto b = ls_forward_log(pm, ph, ls, tail, 1.0, Vector::Constant(1, 0.4), Vector::Constant(1, -8.0), true);
    EXPECT_NEAR(c2.dot(a.log_forward), c2.dot(b.log_forward), 1e-12);
    EXPECT_NEAR(c2.dot(a.log_forward), 2.0 * 0.4 + c2.dot(a.h), 1e-12);
    EXPECT_GT(std::abs(c.dot(a.log_forward) - c.dot(b.log_forward)), 1.0);
}

TEST(ForwardCsv, Layout) {
    const auto sys = two_market_system(Eigen::Vector2d(1, -1));
    const auto f = forward_curve_affine(sys, affine_kernel_ou(two_market()), Vector::Zero(3), {0.0, 1.0});
    const std::string csv = forward_csv(f);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "x,f1,f2");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
