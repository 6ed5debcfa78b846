#include <gtest/gtest.h>

#include "contcoint/factor_models.hpp"

using namespace contcoint;

namespace {

MultivariateOU two_market_ou() {
    MultivariateOU m;
    m.mu = Vector::Zero(2);
    m.c = Eigen::Vector2d(-1.0, -2.0).asDiagonal();
    Matrix corr(2, 2);
    corr << 1.0, 0.5, 0.5, 1.0;
    m.sigma = Eigen::Vector2d(1.0, 2.0).asDiagonal();
    m.driver = DriverSpec::brownian(corr);
    m.x0 = Vector::Zero(2);
    return m;
}

MultivariateOU scalar_ou(double alpha, double eta) {
    MultivariateOU m;
    m.mu = Vector::Zero(1);
    m.c = Matrix::Constant(1, 1, -alpha);
    m.sigma = Matrix::Constant(1, 1, eta);
    m.driver = DriverSpec::standard_brownian(1);
    m.x0 = Vector::Zero(1);
    return m;
}

LsKernel exp_kernel(DriverSpec driver = DriverSpec::standard_brownian(1)) {
    LsKernel k;
    k.kernel = [](double u) { return Matrix::Constant(1, 1, std::exp(-u)); };
    k.driver = std::move(driver);
    k.kernel_l2_bound = 0.5;
    k.burn_in = 16.0;
    k.tail_bound = 1e-14;
    return k;
}

}  // namespace

TEST(CarmaStateSpace, Car1) {
    const auto ss = build_carma_state_space(1, 0, {2.0}, {1.0});
    EXPECT_EQ(ss.a(0, 0), -2.0);
    EXPECT_EQ(ss.b(0), 1.0);
    EXPECT_EQ(ss.e_p(0), 1.0);
}

TEST(CarmaStateSpace, Car2CompanionPattern) {
    const auto ss = build_carma_state_space(2, 0, {3.0, 2.0}, {1.0});
    Matrix want(2, 2);
    want << 0, 1, -2, -3;
    EXPECT_EQ(ss.a, want);
    EXPECT_EQ(ss.b, Eigen::Vector2d(1.0, 0.0));
}

TEST(CarmaStateSpace, Carma31) {
    const auto ss = build_carma_state_space(3, 1, {1.0, 1.0, 1.0}, {0.5, 1.0});
    Matrix want(3, 3);
    want << 0, 1, 0, 0, 0, 1, -1, -1, -1;
    EXPECT_EQ(ss.a, want);
    EXPECT_EQ(ss.b, Eigen::Vector3d(0.5, 1.0, 0.0));
}

TEST(CarmaStateSpace, Errors) {
    EXPECT_THROW(build_carma_state_space(2, 2, {1.0, 1.0}, {0.0, 0.0, 1.0}), ParameterError);
    EXPECT_THROW(build_carma_state_space(2, 0, {-1.0, 1.0}, {1.0}), ParameterError);
    EXPECT_THROW(build_carma_state_space(2, 0, {1.0}, {1.0}), DimensionError);
    EXPECT_THROW(build_carma_state_space(2, 1, {1.0, 1.0}, {1.0, 0.5}), ParameterError);
}

TEST(ClassifyStationary, TwoMarketOu) {
    const auto v = classify_stationary(FactorModel{two_market_ou()});
    ASSERT_TRUE(v.stationary());
    ASSERT_TRUE(v.law.has_value());
    EXPECT_NEAR(v.law->covariance(0, 0), 0.5, 1e-12);
    EXPECT_NEAR(v.law->covariance(0, 1), 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(v.law->covariance(1, 1), 1.0, 1e-12);
    EXPECT_LT(v.law->mean.norm(), 1e-15);
}

TEST(ClassifyStationary, DriftedBm) {
    DriftedBM bm{Vector::Constant(1, 0.1), Matrix::Constant(1, 1, 0.2),
                 DriverSpec::standard_brownian(1), Vector::Zero(1)};
    const auto v = classify_stationary(FactorModel{bm});
    EXPECT_FALSE(v.stationary());
    EXPECT_EQ(v.reason, "drift_present");
    bm.mu.setZero();
    bm.sigma.setZero();
    const auto d = classify_stationary(FactorModel{bm});
    EXPECT_TRUE(d.stationary());
    EXPECT_EQ(d.law->covariance(0, 0), 0.0);
}

TEST(ClassifyStationary, CarmaOnImaginaryAxis) {
    const Carma m = make_carma(2, 0, {0.0, 1.0}, {1.0});
    const auto v = classify_stationary(FactorModel{m});
    EXPECT_FALSE(v.stationary());
    EXPECT_EQ(v.reason, "eigenvalue_nonnegative");
    EXPECT_THROW(make_carma(2, 0, {-1.0, 1.0}, {1.0}), ParameterError);
}

TEST(ClassifyStationary, MeanOfOuWithDrift) {
    MultivariateOU m = scalar_ou(2.0, 1.0);
    m.mu(0) = 1.0;
    const auto v = classify_stationary(FactorModel{m});
    EXPECT_NEAR(v.law->mean(0), 0.5, 1e-14);
}

TEST(Cumulant, Examples) {
    DriftedBM bm{Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 1.0),
                 DriverSpec::standard_brownian(1), Vector::Zero(1)};
    const Complex c1 = cumulant(FactorModel{bm}, 2.0, Vector::Ones(1));
    EXPECT_NEAR(c1.real(), -1.0, 1e-14);
    EXPECT_NEAR(c1.imag(), 2.0, 1e-14);

    const Complex c2 = cumulant(FactorModel{scalar_ou(1.0, std::sqrt(2.0))}, 60.0, Vector::Ones(1));
    EXPECT_NEAR(c2.real(), -0.5, 1e-12);
    EXPECT_NEAR(c2.imag(), 0.0, 1e-14);

    const Complex c3 = cumulant(FactorModel{exp_kernel()}, 5.0, Vector::Ones(1));
    EXPECT_NEAR(c3.real(), -0.25, 1e-10);
}

TEST(Cumulant, Car1EquivalentToOu) {
    const Carma car = make_carma(1, 0, {1.7}, {1.0}, DriverSpec::standard_brownian(1),
                                 Vector::Constant(1, 0.3));
    MultivariateOU ou = scalar_ou(1.7, 1.0);
    ou.x0(0) = 0.3;
    const auto vc = classify_stationary(FactorModel{car});
    const auto vo = classify_stationary(FactorModel{ou});
    EXPECT_NEAR(vc.law->covariance(0, 0), vo.law->covariance(0, 0), 1e-10);
    EXPECT_NEAR(vc.law->mean(0), vo.law->mean(0), 1e-10);
    for (double t : {0.1, 1.0, 4.0}) {
        for (double z : {-2.0, 0.5, 3.0}) {
            const Complex a = cumulant(FactorModel{car}, t, Vector::Constant(1, z));
            const Complex b = cumulant(FactorModel{ou}, t, Vector::Constant(1, z));
            EXPECT_LT(std::abs(a - b), 1e-10);
        }
    }
}

TEST(Cumulant, Car1EquivalenceWithJumps) {
    const auto drv = DriverSpec::compound_poisson(2.0, Vector::Constant(1, 0.3),
                                                  Matrix::Constant(1, 1, 0.1));
    const Carma car = make_carma(1, 0, {0.8}, {1.0}, drv);
    MultivariateOU ou = scalar_ou(0.8, 1.0);
    ou.driver = drv;
    const Complex a = cumulant(FactorModel{car}, 2.0, Vector::Constant(1, 1.3));
    const Complex b = cumulant(FactorModel{ou}, 2.0, Vector::Constant(1, 1.3));
    EXPECT_LT(std::abs(a - b), 1e-10);
}

TEST(Cumulant, CompoundPoissonOuMatchesBruteQuadrature) {
    const auto drv = DriverSpec::compound_poisson(1.5, Vector::Constant(1, 0.4),
                                                  Matrix::Constant(1, 1, 0.2));
    MultivariateOU ou = scalar_ou(1.0, 1.0);
    ou.driver = drv;
    const double t = 3.0, z = 0.9;
    // composite Simpson with 20000 panels on psi(z e^{-s})
    const int n = 20000;
    const double h = t / n;
    Complex sum{};
    for (int i = 0; i <= n; ++i) {
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        sum += w * drv.char_exponent(Vector::Constant(1, z * std::exp(-i * h)));
    }
    sum *= h / 3.0;
    EXPECT_LT(std::abs(cumulant(FactorModel{ou}, t, Vector::Constant(1, z)) - sum), 1e-10);
}

TEST(Cumulant, LsStrictStationarity) {
    const auto drv = DriverSpec::compound_poisson(1.0, Vector::Constant(1, 0.5),
                                                  Matrix::Constant(1, 1, 0.25),
                                                  Matrix::Constant(1, 1, 0.3));
    const FactorModel m{exp_kernel(drv)};
    for (double z : {-1.5, 0.3, 2.0}) {
        const Complex a = cumulant(m, 20.0, Vector::Constant(1, z));
        for (double tau : {0.5, 3.0, 50.0}) {
            EXPECT_LT(std::abs(cumulant(m, 20.0 + tau, Vector::Constant(1, z)) - a), 1e-8);
        }
    }
}

TEST(Cumulant, StationaryCovIsTransitionLimit) {
    const MultivariateOU m = two_market_ou();
    const Matrix v = classify_stationary(FactorModel{m}).law->covariance;
    const double t = 40.0;  // 40 / |max real eigenvalue|
    const Matrix q = m.sigma * m.driver.covariance() * m.sigma.transpose();
    auto f = [&](double s) -> Vector {
        const Matrix e = mat_exp(m.c, s);
        const Matrix w = e * q * e.transpose();
        return Eigen::Map<const Vector>(w.data(), 4);
    };
    const auto r = adaptive_simpson<Vector>(f, 0.0, t, 1e-12, Vector::Zero(4), 32);
    const Matrix vt = Eigen::Map<const Matrix>(r.value.data(), 2, 2);
    EXPECT_LT((vt - v).norm() / v.norm(), 1e-6);
}

TEST(Driver, LaplaceAndCharExponents) {
    const auto drv = DriverSpec::compound_poisson(2.0, Vector::Constant(1, 0.3),
                                                  Matrix::Constant(1, 1, 0.1),
                                                  Matrix::Constant(1, 1, 0.5));
    const double u = 0.7;
    const double want = 0.5 * 0.5 * u * u + 2.0 * (std::exp(0.3 * u + 0.05 * u * u) - 1.0 - 0.3 * u);
    EXPECT_NEAR(drv.laplace_exponent(Vector::Constant(1, u)), want, 1e-14);
    // E L(1) = 0: derivative of psi at 0 vanishes
    const double h = 1e-6;
    const Complex d = (drv.char_exponent(Vector::Constant(1, h)) -
                       drv.char_exponent(Vector::Constant(1, -h))) / (2.0 * h);
    EXPECT_LT(std::abs(d), 1e-8);
    EXPECT_NEAR(drv.covariance()(0, 0), 0.5 + 2.0 * (0.1 + 0.09), 1e-14);
}

TEST(Driver, Validation) {
    Matrix bad(2, 2);
    bad << 1, 2, 2, 1;
    EXPECT_THROW(DriverSpec::brownian(bad), ParameterError);
    EXPECT_THROW(DriverSpec::compound_poisson(-1.0, Vector::Zero(1), Matrix::Ones(1, 1)),
                 ParameterError);
}

TEST(Validate, ShapesNamed) {
    MultivariateOU m = two_market_ou();
    m.sigma = Matrix::Identity(3, 2);
    try {
        validate(FactorModel{m});
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
    }
}

TEST(LsKernel, TailBoundEnforced) {
    LsKernel k = exp_kernel();
    k.burn_in = 3.0;
    EXPECT_THROW(check_kernel_truncation(k), ParameterError);
    k.burn_in = 16.0;
    EXPECT_NO_THROW(check_kernel_truncation(k));
}

TEST(IntegratedCarma, IsNonStationary) {
    const Carma car = make_carma(2, 0, {3.0, 2.0}, {1.0});
    const auto ic = integrated_carma(car);
    EXPECT_FALSE(classify_stationary(FactorModel{ic}).stationary());
}

TEST(Digest, StableAndSensitive) {
    const CompositeModel a{FactorModel{two_market_ou()}};
    MultivariateOU other = two_market_ou();
    other.c(0, 0) = -1.5;
    const CompositeModel b{FactorModel{other}};
    EXPECT_EQ(model_digest(a), model_digest(a));
    EXPECT_NE(model_digest(a), model_digest(b));
    EXPECT_EQ(model_digest(a).size(), 16u);
}
