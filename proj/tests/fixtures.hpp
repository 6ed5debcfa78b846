#pragma once

// Reference models shared by the unit and acceptance tests.

#include "contcoint/factor_models.hpp"
#include "contcoint/pricing_system.hpp"

namespace fixtures {

using namespace contcoint;

/// Two mean-reverting spreads plus a common drifted Brownian factor:
/// C = diag(-1, -2, 0), mu = (0, 0, mu3), Sigma = diag(1, 2, sigma3),
/// driver correlation 0.5 between the first two coordinates.
inline MultivariateOU two_market(double mu3 = 0.3, double sigma3 = 0.2) {
    MultivariateOU m;
    m.mu = Eigen::Vector3d(0.0, 0.0, mu3);
    m.c = Eigen::Vector3d(-1.0, -2.0, 0.0).asDiagonal();
    m.sigma = Eigen::Vector3d(1.0, 2.0, sigma3).asDiagonal();
    Matrix corr(3, 3);
    corr << 1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0;
    m.driver = DriverSpec::brownian(corr);
    m.x0 = Vector::Zero(3);
    return m;
}

/// The stationary 2x2 block of two_market().
inline MultivariateOU two_market_spreads() {
    MultivariateOU m;
    m.mu = Vector::Zero(2);
    m.c = Eigen::Vector2d(-1.0, -2.0).asDiagonal();
    m.sigma = Eigen::Vector2d(1.0, 2.0).asDiagonal();
    Matrix corr(2, 2);
    corr << 1.0, 0.5, 0.5, 1.0;
    m.driver = DriverSpec::brownian(corr);
    m.x0 = Vector::Zero(2);
    return m;
}

inline Matrix two_market_p() {
    Matrix p(2, 3);
    p << 1, 0, 1, 0, 1, 1;
    return p;
}

inline MultivariateOU scalar_ou(double alpha, double eta, double x0 = 0.0) {
    MultivariateOU m;
    m.mu = Vector::Zero(1);
    m.c = Matrix::Constant(1, 1, -alpha);
    m.sigma = Matrix::Constant(1, 1, eta);
    m.driver = DriverSpec::standard_brownian(1);
    m.x0 = Vector::Constant(1, x0);
    return m;
}

inline DriftedBM drifted_bm(double mu, double sigma) {
    return DriftedBM{Vector::Constant(1, mu), Matrix::Constant(1, 1, sigma),
                     DriverSpec::standard_brownian(1), Vector::Zero(1)};
}

inline LsKernel exp_kernel(DriverSpec driver = DriverSpec::standard_brownian(1)) {
    LsKernel k;
    k.kernel = [](double u) { return Matrix::Constant(1, 1, std::exp(-u)); };
    k.driver = std::move(driver);
    k.kernel_l2_bound = 0.5;
    k.burn_in = 16.0;
    k.tail_bound = 1e-14;
    k.lipschitz = 1.0;
    k.substep = 0.01;
    k.label = "exp(-u)";
    return k;
}

}  // namespace fixtures
