#include <gtest/gtest.h>

#include <random>

#include "contcoint/hilbert_curves.hpp"

using namespace contcoint;

namespace {

WeightSpec weight(double a) {
    WeightSpec w;
    w.alpha = a;
    return w;
}

std::vector<CurveGrid> random_corpus(const std::vector<double>& x, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coef(-2.0, 2.0), rate(0.2, 3.0), freq(0.1, 2.0);
    std::vector<CurveGrid> out;
    for (int i = 0; i < n; ++i) {
        const double a0 = coef(rng), a1 = coef(rng), a2 = coef(rng), s = coef(rng);
        const double b1 = rate(rng), b2 = rate(rng), om = freq(rng);
        out.push_back(make_curve(x, [=](double y) {
            return a0 + a1 * std::exp(-b1 * y) + a2 * std::exp(-b2 * y) + s * std::sin(om * y) * std::exp(-0.2 * y);
        }));
    }
    return out;
}

}  // namespace

TEST(Filipovic, ExponentialNormConverges) {
    const double exact = 1.0 + 1.0 / 1.5;
    double prev = 1.0;
    for (Index n : {101, 201, 401}) {
        const auto f = make_curve(uniform_grid(40.0, n), [](double x) { return std::exp(-x); }, weight(0.5));
        const double err = std::abs(filipovic_inner(f, f) - exact) / exact;
        EXPECT_LT(err, prev);
        prev = err;
    }
    EXPECT_LT(prev, 1e-3);
    const auto g = make_curve(geometric_grid(40.0), [](double x) { return std::exp(-x); }, weight(0.5));
    EXPECT_NEAR(filipovic_inner(g, g), exact, 1e-3 * exact);
}

TEST(Filipovic, InnerProductProperties) {
    const auto x = geometric_grid(20.0);
    const auto c = random_corpus(x, 3, 1);
    EXPECT_DOUBLE_EQ(filipovic_inner(c[0], c[1]), filipovic_inner(c[1], c[0]));
    CurveGrid sum = c[0];
    sum.values = 2.0 * c[0].values + c[1].values;
    EXPECT_NEAR(filipovic_inner(sum, c[2]), 2.0 * filipovic_inner(c[0], c[2]) + filipovic_inner(c[1], c[2]),
                1e-12);
    EXPECT_DOUBLE_EQ(filipovic_norm(constant_curve(x, -3.0)), 3.0);
    const auto other = make_curve(uniform_grid(20.0, 51), [](double) { return 1.0; });
    EXPECT_THROW(filipovic_inner(c[0], other), DimensionError);
}

TEST(Filipovic, GridValidation) {
    EXPECT_THROW(make_curve({0.0, 1.0}, [](double) { return 0.0; }), ParameterError);
    EXPECT_THROW(make_curve({0.1, 1.0, 2.0}, [](double) { return 0.0; }), ParameterError);
    EXPECT_THROW(make_curve({0.0, 2.0, 1.0}, [](double) { return 0.0; }), ParameterError);
    EXPECT_THROW(make_curve(uniform_grid(1.0, 5), [](double) { return 0.0; }, weight(0.0)), ParameterError);
    EXPECT_THROW(make_curve(uniform_grid(1.0, 5), [](double x) { return 1.0 / x; }), DomainError);
}

TEST(Shift, LinearCurveFlatBeyondGrid) {
    const auto f = make_curve(uniform_grid(10.0, 101), [](double x) { return x; });
    const auto s = shift_semigroup(f, 1.0);
    for (Index i = 0; i < s.size(); ++i) {
        EXPECT_NEAR(s.values(i), std::min(f.x[static_cast<std::size_t>(i)] + 1.0, 10.0), 1e-12);
    }
    EXPECT_THROW(shift_semigroup(f, -1.0), DomainError);
}

TEST(Shift, SemigroupOnAlignedShifts) {
    const auto x = uniform_grid(10.0, 101);
    const auto f = random_corpus(x, 1, 5).front();
    const auto a = shift_semigroup(shift_semigroup(f, 2.0), 1.0);
    const auto b = shift_semigroup(f, 3.0);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(shift_semigroup(f, 0.0).values, f.values);
}

TEST(Shift, InterpolatedShiftIsAccurate) {
    const auto f = make_curve(uniform_grid(20.0, 201), [](double x) { return std::exp(-x); });
    const auto s = shift_semigroup(f, 0.05);
    for (Index i = 0; i < 150; ++i) {
        EXPECT_NEAR(s.values(i), std::exp(-f.x[static_cast<std::size_t>(i)] - 0.05), 5e-5);
    }
}

TEST(Shift, ContractsTowardsFlatLimit) {
    const auto f = make_curve(uniform_grid(30.0, 301), [](double x) { return 1.0 - std::exp(-x); });
    const double flat = f.values(f.size() - 1);
    double prev = 1e300;
    for (double t : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
        CurveGrid d = shift_semigroup(f, t);
        d.values.array() -= flat;
        const double n = filipovic_norm(d);
        EXPECT_LE(n, prev);
        prev = n;
    }
}

TEST(Banach, AnalyticBoundHoldsOnCorpus) {
    const auto corpus = random_corpus(geometric_grid(30.0), 100, 9);
    const auto bc = banach_algebra_constant(corpus);
    EXPECT_NEAR(bc.analytic, std::sqrt(45.0), 1e-12);
    EXPECT_GT(bc.empirical_max, 0.0);
    EXPECT_LE(bc.empirical_max, bc.analytic);
    // with the rescaled norm ||f|| = c |f|_w the algebra inequality holds
    const double c = bc.analytic;
    for (std::size_t i = 0; i + 1 < corpus.size(); ++i) {
        CurveGrid prod = corpus[i];
        prod.values = corpus[i].values.cwiseProduct(corpus[i + 1].values);
        EXPECT_LE(c * filipovic_norm(prod), c * filipovic_norm(corpus[i]) * c * filipovic_norm(corpus[i + 1]));
    }
}

TEST(SpreadOu, StationaryVarianceAtZero) {
    const auto x = uniform_grid(20.0, 201);
    const auto g0 = constant_curve(x, 0.0);
    const auto vol = make_curve(x, [](double y) { return std::exp(-y); });
    const auto e = simulate_spread_ou(g0, {vol}, DriverSpec::standard_brownian(1), TimeGrid{0.0, 1.0, 10.0}, 4000, 3);
    const auto v = e.at_node(2, 0);
    double m = 0.0, s2 = 0.0;
    for (double a : v) m += a;
    m /= static_cast<double>(v.size());
    for (double a : v) s2 += (a - m) * (a - m);
    s2 /= static_cast<double>(v.size() - 1);
    const double se = 0.5 * std::sqrt(2.0 / static_cast<double>(v.size()));
    EXPECT_NEAR(s2, 0.5, 3.0 * se);
    for (double a : e.at_node(0, 0)) {
        EXPECT_EQ(a, 0.0);
    }
}

TEST(SpreadOu, DeterministicAcrossWorkers) {
    const auto x = uniform_grid(5.0, 51);
    const auto g0 = make_curve(x, [](double y) { return 0.1 * y; });
    const auto vol = make_curve(x, [](double y) { return std::exp(-y); });
    const auto drv = DriverSpec::compound_poisson(3.0, Vector::Constant(1, 0.2), Matrix::Constant(1, 1, 0.05));
    SimOptions one, four;
    four.workers = 4;
    const auto a = simulate_spread_ou(g0, {vol}, drv, TimeGrid{0.0, 0.5, 1.0}, 50, 8, one);
    const auto b = simulate_spread_ou(g0, {vol}, drv, TimeGrid{0.0, 0.5, 1.0}, 50, 8, four);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(curve_ensemble_csv(a).substr(0, 15), "t,path,x,value\n");
}

TEST(SpreadOu, Preconditions) {
    const auto xg = geometric_grid(5.0, 51);
    const auto g0 = constant_curve(xg, 0.0);
    EXPECT_THROW(simulate_spread_ou(g0, {g0}, DriverSpec::standard_brownian(1), TimeGrid{0.0, 1.0}, 5, 1),
                 PreconditionError);
    const auto xu = uniform_grid(5.0, 51);
    const auto u0 = constant_curve(xu, 0.0);
    EXPECT_THROW(simulate_spread_ou(u0, {u0}, DriverSpec::standard_brownian(1), TimeGrid{0.0, 0.05}, 5, 1),
                 ResolutionError);
    EXPECT_THROW(simulate_spread_ou(u0, {u0}, DriverSpec::standard_brownian(2), TimeGrid{0.0, 1.0}, 5, 1),
                 DimensionError);
}

namespace {

ThreeFactorSpec exp_spec() {
    ThreeFactorSpec s;
    s.x_grid = uniform_grid(10.0, 51);
    s.h1 = [](double t, double x) { return 0.1 * t + 0.05 * x; };
    s.h2 = [](double t, double) { return 0.1 * t; };
    s.g1 = [](double u) { return std::exp(-u); };
    s.g2 = [](double u) { return 0.5 * std::exp(-2.0 * u); };
    Matrix cov(2, 2);
    cov << 1.0, 0.3, 0.3, 1.0;
    s.u = DriverSpec::brownian(cov);
    return s;
}

}  // namespace

TEST(ThreeFactor, MomentsMatchKernel) {
    const auto spec = exp_spec();
    const auto e = three_factor_curves(spec, TimeGrid{0.0, 2.0}, 4000, 11);
    const auto v = e.x1.at_node(1, 0);
    double m = 0.0, s2 = 0.0;
    for (double a : v) m += a;
    m /= static_cast<double>(v.size());
    for (double a : v) s2 += (a - m) * (a - m);
    s2 /= static_cast<double>(v.size() - 1);
    const double var = 0.5 * (1.0 - std::exp(-4.0));
    EXPECT_NEAR(m, 0.2, 4.0 * std::sqrt(var / 4000.0));
    EXPECT_NEAR(s2, var, 4.0 * var * std::sqrt(2.0 / 4000.0));
    // X3 is constant in maturity
    EXPECT_EQ(e.x3(7, 1, 0), e.x3(7, 1, 50));
    EXPECT_EQ(e.x1(0, 0, 10), 0.05 * spec.x_grid[10]);
}

TEST(ThreeFactor, CumulantMatchesGaussianFormula) {
    const auto spec = exp_spec();
    const auto one = constant_curve(spec.x_grid, 1.0, spec.weight);
    const double z = 0.7, t = 2.0;
    const Complex k = lss_cumulant(spec, 1, t, one, z);
    const double var = 0.5 * (1.0 - std::exp(-2.0 * t));
    EXPECT_NEAR(k.real(), -0.5 * z * z * var, 1e-6);
    EXPECT_NEAR(k.imag(), z * 0.1 * t, 1e-9);
    EXPECT_THROW(lss_cumulant(spec, 3, t, one, z), ParameterError);
}

TEST(ThreeFactor, EmpiricalCfMatchesCumulant) {
    const auto spec = exp_spec();
    const auto e = three_factor_curves(spec, TimeGrid{1.0}, 6000, 12);
    const auto one = constant_curve(spec.x_grid, 1.0, spec.weight);
    const auto v = e.x2.at_node(0, 0);
    for (double z : {0.5, 1.5}) {
        Complex acc{};
        for (double a : v) acc += std::exp(Complex{0.0, z * a});
        acc /= static_cast<double>(v.size());
        const Complex want = std::exp(lss_cumulant(spec, 2, 1.0, one, z));
        EXPECT_LT(std::abs(acc - want), 4.0 / std::sqrt(6000.0));
    }
}

TEST(ThreeFactor, RejectsNonIntegrableKernel) {
    auto spec = exp_spec();
    spec.g1 = [](double u) { return std::exp(2.0 * u); };
    EXPECT_THROW(three_factor_curves(spec, TimeGrid{0.0, 10.0}, 10, 1), PreconditionError);
    auto bad = exp_spec();
    bad.u = DriverSpec::standard_brownian(3);
    EXPECT_THROW(three_factor_curves(bad, TimeGrid{1.0}, 10, 1), DimensionError);
    EXPECT_THROW(three_factor_curves(exp_spec(), TimeGrid{0.005}, 10, 1), ResolutionError);
}

TEST(CointOperator, BlocksAndErrors) {
    const auto x = uniform_grid(10.0, 101);
    const auto f = make_curve(x, [](double y) { return y; });
    const auto g = constant_curve(x, 2.0);
    const auto diff = std::get<CurveGrid>(apply_coint_operator({{CurveBlock::scalar(1.0), CurveBlock::scalar(-1.0)}}, {f, g}));
    EXPECT_DOUBLE_EQ(diff.values(30), 1.0);
    const double ev = std::get<double>(apply_coint_operator({{CurveBlock::eval(2.5), CurveBlock::integral(-1.0)}}, {f, g}));
    EXPECT_NEAR(ev, 0.5, 1e-12);
    EXPECT_NEAR(integral_mean(f), 5.0, 1e-12);
    EXPECT_THROW(apply_coint_operator({{CurveBlock::eval(11.0), CurveBlock::eval(0.0)}}, {f, g}), RangeError);
    EXPECT_THROW(apply_coint_operator({{CurveBlock::eval(1.0), CurveBlock::scalar(1.0)}}, {f, g}), ParameterError);
    EXPECT_THROW(apply_coint_operator({{CurveBlock::scalar(1.0)}}, {f, g}), DimensionError);
}

TEST(Fdr, RankOneProjectorAndDelta) {
    const auto x = geometric_grid(20.0);
    const auto f1 = gram_schmidt({{make_curve(x, [](double y) { return 1.0 + std::exp(-y); })}}).front();
    const CurveTuple h1{constant_curve(x, 1.0)};
    FiniteRankOperator p{{f1}, {f1}};
    FiniteRankOperator c{{h1}, {CurveTuple{constant_curve(x, 1.0)}}};
    const CurveTuple xt{make_curve(x, [](double y) { return std::cos(y) * std::exp(-y); })};
    const auto r = fdr_reduce(p, c, xt);
    ASSERT_EQ(r.pbar.rows(), 1);
    ASSERT_EQ(r.pbar.cols(), 1);
    EXPECT_NEAR(r.pbar(0, 0), f1[0].values(0), 1e-14);
    const auto rec = fdr_reconstruct(r);
    const auto direct = apply_finite_rank(c, apply_finite_rank(p, xt));
    EXPECT_NEAR(rec[0].values(0), direct[0].values(0), 1e-12);
}

TEST(Fdr, IdentityOnFactorSubspace) {
    const auto x = geometric_grid(20.0);
    const auto basis = gram_schmidt({{make_curve(x, [](double y) { return std::exp(-y); })},
                                     {make_curve(x, [](double y) { return std::exp(-0.3 * y); })},
                                     {constant_curve(x, 1.0)}});
    FiniteRankOperator p{basis, basis};
    FiniteRankOperator c{basis, basis};
    const auto r = fdr_reduce(p, c, basis[1]);
    EXPECT_LT((r.pbar - Matrix::Identity(3, 3)).norm(), 1e-10);
    EXPECT_NEAR(r.x_vec(1), 1.0, 1e-10);
}

TEST(Fdr, RandomRankTwoReconstruction) {
    const auto x = geometric_grid(20.0);
    const auto corpus = random_corpus(x, 8, 21);
    const auto fb = gram_schmidt({{corpus[0], corpus[1]}, {corpus[2], corpus[3]}});
    const auto hb = gram_schmidt({{corpus[4]}, {corpus[5]}});
    FiniteRankOperator p{fb, {{corpus[6]}, {corpus[7]}}};
    FiniteRankOperator c{hb, {{corpus[1]}, {corpus[2]}}};
    const CurveTuple xt{corpus[3], corpus[5]};
    const auto rec = fdr_reconstruct(fdr_reduce(p, c, xt));
    const auto direct = apply_finite_rank(c, apply_finite_rank(p, xt));
    CurveTuple diff = tuple_axpy(-1.0, direct, rec);
    EXPECT_LT(std::sqrt(tuple_inner(diff, diff)), 1e-10 * std::max(1.0, std::sqrt(tuple_inner(direct, direct))));
}

TEST(Fdr, RejectsNonOrthonormalBasis) {
    const auto x = geometric_grid(20.0);
    FiniteRankOperator p{{{constant_curve(x, 2.0)}}, {{constant_curve(x, 1.0)}}};
    FiniteRankOperator c{{{constant_curve(x, 1.0)}}, {{constant_curve(x, 1.0)}}};
    EXPECT_THROW(fdr_reduce(p, c, {constant_curve(x, 1.0)}), PreconditionError);
}
