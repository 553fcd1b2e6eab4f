#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "emme/rates.hpp"

using namespace emme;

namespace {

BathSpectrum fig2_spectrum(std::size_t v0 = 400, std::size_t v1 = 600) {
    return build_spectrum(BathSpec{{{0.0, 0.5, v0}, {1.0, 0.5, v1}}, SpectrumKind::regular, 0});
}

CouplingSpec rmt_spec(std::uint64_t seed, double lambda = 3e-3) {
    CouplingSpec c;
    c.lambda = lambda;
    c.variance = 1.0;
    c.seed = seed;
    return c;
}

// (1/pi) int_0^T sin^2 x / x^2 exp(-2 i xi x) dx, panel-wise Gauss-Kronrod.
cplx breve_h_oracle(double xi, double T = 1e4) {
    using boost::math::quadrature::gauss_kronrod;
    auto re = [&](double x) { return x == 0.0 ? 1.0 : std::pow(std::sin(x) / x, 2) * std::cos(2.0 * xi * x); };
    auto im = [&](double x) { return x == 0.0 ? 0.0 : -std::pow(std::sin(x) / x, 2) * std::sin(2.0 * xi * x); };
    double sr = 0.0, si = 0.0;
    const double panel = kPi / std::max(1.0, 2.0 * std::abs(xi));
    for (double a = 0.0; a < T; a += panel) {
        const double b = std::min(T, a + panel);
        sr += gauss_kronrod<double, 31>::integrate(re, a, b, 0, 0);
        si += gauss_kronrod<double, 31>::integrate(im, a, b, 0, 0);
    }
    return {sr / kPi, si / kPi};
}

double zeta_oracle(double t, double delta) {
    using boost::math::quadrature::gauss_kronrod;
    auto f = [&](double tau) {
        const double x = 0.5 * delta * tau;
        return x == 0.0 ? 1.0 : std::pow(std::sin(x) / x, 2);
    };
    return delta / kPi * gauss_kronrod<double, 61>::integrate(f, 0.0, t, 15, 1e-14);
}

double xi_oracle(double t, double delta) {
    using boost::math::quadrature::gauss_kronrod;
    return gauss_kronrod<double, 31>::integrate([&](double s) { return zeta_oracle(s, delta); }, 0.0, t, 10, 1e-12);
}

}  // namespace

TEST(BreveH, ClosedFormValues) {
    EXPECT_NEAR(breve_h(0.0).real(), 0.5, 1e-15);
    EXPECT_EQ(breve_h(0.0).imag(), 0.0);
    EXPECT_NEAR(breve_h(2.0).real(), 0.0, 1e-15);
    EXPECT_NEAR(breve_h(2.0).imag(), -0.0832775, 1e-6);
    EXPECT_NEAR(std::abs(breve_h(1e6)), 0.0, 1e-5);
    EXPECT_EQ(breve_h(1.5).real(), 0.0);
    EXPECT_EQ(breve_h(3.0).real(), 0.0);
    EXPECT_NEAR(breve_h(-0.7).imag(), -breve_h(0.7).imag(), 1e-16);
    EXPECT_TRUE(std::isfinite(breve_h(1.0).imag()));
}

TEST(BreveH, MatchesDirectQuadrature) {
    for (double xi : {0.0, 0.25, 0.5, 0.99, 1.5, 3.0}) {
        const cplx a = breve_h(xi);
        const cplx b = breve_h_oracle(xi);
        EXPECT_NEAR(a.real(), b.real(), 1e-4) << "xi = " << xi;
        EXPECT_NEAR(a.imag(), b.imag(), 1e-4) << "xi = " << xi;
    }
}

TEST(Envelope, ZetaAndXiLimits) {
    EXPECT_EQ(zeta(0.0, 0.5), 0.0);
    EXPECT_EQ(xi_integral(0.0, 0.5), 0.0);
    EXPECT_NEAR(zeta(1e6, 0.5), 1.0, 1e-5);
    EXPECT_LE(zeta(1e6, 0.5), 1.0);
}

TEST(Envelope, ZetaMatchesQuadrature) {
    for (double t : {1e-4, 0.01, 1.0, 3.7, 10.0, 50.0, 200.0})
        EXPECT_NEAR(zeta(t, 0.5), zeta_oracle(t, 0.5), 1e-10) << "t = " << t;
}

TEST(Envelope, XiMatchesQuadrature) {
    for (double t : {1e-3, 0.5, 1.9, 2.1, 10.0, 40.0})
        EXPECT_NEAR(xi_integral(t, 0.5), xi_oracle(t, 0.5), 1e-9 * std::max(1.0, t)) << "t = " << t;
}

TEST(Envelope, MonotoneAndConvex) {
    double prev_z = 0.0, prev_x = 0.0, prev_slope = 0.0;
    for (int i = 1; i <= 4000; ++i) {
        const double t = 0.05 * i;
        const double z = zeta(t, 0.5), x = xi_integral(t, 0.5);
        EXPECT_GE(z, prev_z - 1e-15);
        EXPECT_LE(z, 1.0);
        const double slope = (x - prev_x) / 0.05;
        EXPECT_GE(slope, prev_slope - 1e-9);
        prev_z = z;
        prev_x = x;
        prev_slope = slope;
    }
}

TEST(Envelope, XiDeficitGrowsLogarithmically) {
    const double delta = 0.5;
    const double t1 = 1e4, t2 = 1e6;
    const double d1 = t1 - xi_integral(t1, delta);
    const double d2 = t2 - xi_integral(t2, delta);
    EXPECT_NEAR((d2 - d1) / std::log(t2 / t1), 2.0 / (kPi * delta), 1e-4);
    EXPECT_NEAR(xi_integral(t2, delta) / t2, 1.0, 1e-4);
}

TEST(GammaRmt, Fig2Value) {
    const WindowLayout layout{{0.0, 1.0}, {400.0, 600.0}, 0.5};
    EXPECT_NEAR(gamma_rmt(rmt_spec(0), layout, 0, 1), 27.14336053, 1e-7);
    EXPECT_EQ(gamma_rmt(rmt_spec(0), layout, 0, 1), gamma_rmt(rmt_spec(0), layout, 1, 0));
    EXPECT_EQ(gamma_rmt(rmt_spec(0, 0.0), layout, 0, 1), 0.0);
    EXPECT_EQ(gamma_rmt(rmt_spec(0), layout, 1, 1), 0.0);
}

TEST(GammaHeuristic, ZeroCouplingAndDeterministicMean) {
    const auto s = fig2_spectrum(6, 9);
    CouplingSpec c = rmt_spec(0, 0.01);
    c.variance = 0.0;
    EXPECT_EQ(gamma_heuristic(sample_coupling(c, s), 0, 1)(0, 0), cplx(0.0));
    c.block_mean = Matrix::Zero(2, 2);
    c.block_mean(0, 1) = cplx(0.6, 0.8);
    c.block_mean(1, 0) = cplx(0.6, -0.8);
    const double expected = 2.0 * kPi * 1e-4 / 0.5 * 54.0;
    EXPECT_NEAR(gamma_heuristic(sample_coupling(c, s), 0, 1)(0, 0).real(), expected, 1e-12);
}

TEST(GammaHeuristic, CloseToRmtOnFig2) {
    const auto s = fig2_spectrum();
    const auto g = gamma_heuristic(sample_coupling(rmt_spec(17), s), 0, 1)(0, 0);
    EXPECT_NEAR(g.real(), 27.1434, 0.03 * 27.1434);
    EXPECT_NEAR(g.imag(), 0.0, 1e-12);
}

TEST(Correlation, ZeroTauIsTraceAndSingleLevelNeverDecays) {
    const auto s = fig2_spectrum(20, 30);
    const auto r = sample_coupling(rmt_spec(4, 0.05), s);
    const auto c = correlation_exact(r, 0, 1, {0.0, 1.0, 2.0});
    const double expected = 0.05 * 0.05 * r.block(0, 0, 1).cwiseAbs2().sum() / 30.0;
    EXPECT_NEAR(c.values[0](0, 0).real(), expected, 1e-14);
    EXPECT_NEAR(c.values[0](0, 0).imag(), 0.0, 1e-14);

    const auto s1 = fig2_spectrum(1, 1);
    const auto r1 = sample_coupling(rmt_spec(4, 0.05), s1);
    const auto tau = default_tau_grid(0.5, 2.0);
    const auto c1 = correlation_exact(r1, 0, 1, tau);
    for (const auto& v : c1.values) EXPECT_NEAR(std::abs(v(0, 0)), std::abs(c1.values[0](0, 0)), 1e-14);
    EXPECT_FALSE(c1.decay_time.has_value());
    EXPECT_THROW(gamma_quadrature(c1, 1.0, 0.5), NumericalError);
}

TEST(Correlation, EnvelopeMatchesRandomMatrixAverage) {
    const auto s = fig2_spectrum();
    const auto r = sample_coupling(rmt_spec(8), s);
    std::vector<double> tau;
    for (int i = 0; i <= 40; ++i) tau.push_back(0.5 * i);
    const auto c = correlation_exact(r, 0, 1, tau);
    const double c0 = std::abs(c.values[0](0, 0));
    for (std::size_t i = 1; i < tau.size(); ++i) {
        const double x = 0.25 * tau[i];
        const double env = std::pow(std::sin(x) / x, 2);
        EXPECT_NEAR(std::abs(c.values[i](0, 0)) / c0, env, 0.02) << "tau = " << tau[i];
    }
    ASSERT_TRUE(c.decay_time.has_value());
}

TEST(GammaQuadrature, ResonantMatchesRmtAndOffResonantIsSuppressed) {
    const auto s = fig2_spectrum();
    const auto r = sample_coupling(rmt_spec(21), s);
    const double rmt = 27.14336053;
    const auto tau = default_tau_grid(0.5, 4.0);
    const auto c = correlation_exact(r, 0, 1, tau);
    // Gamma(E, E'; omega) peaks at E' = E + omega: here E = 0, E' = 1.
    const auto res = gamma_quadrature(c, 1.0, 0.5);
    EXPECT_NEAR(res.gamma(0, 0).real(), rmt, 0.05 * rmt);
    for (double omega : {2.0, -0.5, 2.5}) {
        const auto off = gamma_quadrature(c, omega, 0.5);
        EXPECT_LT(std::abs(off.gamma(0, 0).real()), 1e-3 * res.gamma(0, 0).real()) << "omega = " << omega;
    }
}

TEST(GammaQuadrature, ZeroCorrelationGivesZero) {
    const auto s = fig2_spectrum(5, 5);
    const auto r = sample_coupling(rmt_spec(1, 0.0), s);
    const auto c = correlation_exact(r, 0, 1, default_tau_grid(0.5, 2.0));
    EXPECT_EQ(gamma_quadrature(c, 1.0, 0.5).Gamma.norm(), 0.0);
}

TEST(GammaEth, SubstitutionsAndInterpolation) {
    const WindowLayout layout{{0.0, 1.0, 2.0}, {100.0, 100.0, 100.0}, 0.5};
    EthProfile zero{{[](double, double) { return cplx(0.0); }}, {}};
    EXPECT_EQ(gamma_eth(zero, 0.01, layout, 0, 1)(0, 0), cplx(0.0));
    EthProfile one{{[](double, double) { return cplx(1.0); }}, {}};
    EXPECT_NEAR(gamma_eth(one, 0.01, layout, 0, 1)(0, 0).real(), 2.0 * kPi * 1e-4 / 0.5 * 100.0, 1e-12);

    const WindowLayout grow{{0.0, 1.0}, {100.0, 400.0}, 0.5};
    EXPECT_NEAR(interpolate_volume(grow, 0.5), 200.0, 1e-9);
    EXPECT_THROW(interpolate_volume(grow, 1.5), ConfigError);
}

TEST(GammaEth, CoarseGrainedProfileEqualsHeuristic) {
    const auto s = build_spectrum(BathSpec{{{0.0, 0.5, 40}, {1.0, 0.5, 60}, {2.0, 0.5, 90}}, SpectrumKind::regular, 0});
    const auto r = sample_coupling(rmt_spec(2, 0.02), s);
    const auto layout = WindowLayout::from(s);
    // |f(Ebar, E - E')|^2 = V_Ebar tr[B Pi_E B Pi_E'] / (V_E V_E').
    auto f = [&](double ebar, double omega) -> cplx {
        const double e = ebar + 0.5 * omega, ep = ebar - 0.5 * omega;
        const auto w = layout.resolve(e), wp = layout.resolve(ep);
        if (!w || !wp || *w == *wp) return 0.0;
        const double t = r.block(0, *w, *wp).cwiseAbs2().sum();
        return std::sqrt(interpolate_volume(layout, ebar) * t / (layout.volumes[*w] * layout.volumes[*wp]));
    };
    EthProfile p{{f}, {}};
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) {
            if (a == b) continue;
            EXPECT_NEAR(gamma_eth(p, 0.02, layout, a, b)(0, 0).real(), gamma_heuristic(r, a, b)(0, 0).real(), 1e-10);
        }
}

TEST(GammaEth, ProfileValidation) {
    EthProfile good{{[](double, double w) { return cplx(std::exp(-w * w), 0.1 * w * std::exp(-w * w)); }}, {}};
    EXPECT_NO_THROW(validate(good, {0.0, 1.0}, {0.0, 0.5, 1.0, 3.0}));
    EthProfile asym{{[](double, double w) { return cplx(0.0, std::exp(-w * w)); }}, {}};
    EXPECT_THROW(validate(asym, {0.0}, {0.0, 0.5}), ConfigError);
    EthProfile growing{{[](double, double w) { return cplx(w * w); }}, {}};
    EXPECT_THROW(validate(growing, {0.0}, {0.0, 2.0}), ConfigError);
}

TEST(RateTable, SymmetryAndResonanceLookup) {
    const WindowLayout layout{{0.0, 1.0, 2.0}, {100.0, 200.0, 400.0}, 0.5};
    const auto t = rate_table_rmt({rmt_spec(0)}, layout);
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(t.at(a, b), t.at(b, a).transpose());
    EXPECT_EQ(layout.resolve(1.2).value(), 1u);
    EXPECT_EQ(layout.resolve(1.25).value(), 1u);
    EXPECT_FALSE(layout.resolve(2.3).has_value());
    EXPECT_THROW(t.at(5, 0), ConfigError);
}

TEST(RateTable, MultiOperatorPositiveSemidefinite) {
    const auto s = fig2_spectrum(30, 50);
    CouplingSpec a = rmt_spec(1, 0.02), b = rmt_spec(2, 0.02);
    b.variance = 0.5;
    a.block_mean = Matrix::Zero(2, 2);
    a.block_mean(0, 1) = cplx(0.2, 0.1);
    a.block_mean(1, 0) = cplx(0.2, -0.1);
    const auto r = sample_coupling(std::vector<CouplingSpec>{a, b}, s);
    const auto heur = rate_table_heuristic(r);
    const auto rmt = rate_table_rmt({a, b}, WindowLayout::from(s));
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (const auto* table : {&heur, &rmt})
        for (const auto& [key, g] : table->entries()) {
            EXPECT_LE((g - g.adjoint()).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + g.norm()));
            for (int i = 0; i < 100; ++i) {
                Vector w(2);
                w << cplx(n(rng), n(rng)), cplx(n(rng), n(rng));
                EXPECT_GE((w.adjoint() * g * w)(0, 0).real(), -1e-12 * g.norm());
            }
        }
}

TEST(TransitionRates, SpinAndSymmetry) {
    const WindowLayout layout{{0.0, 1.0, 2.0}, {100.0, 200.0, 400.0}, 0.5};
    const auto t = rate_table_rmt({rmt_spec(0)}, layout);
    Matrix sx(2, 2);
    sx << 0, 1, 1, 0;
    RealVector levels(2);
    levels << 0.0, 1.0;
    const auto w = transition_rates(t, {sx}, levels);
    ASSERT_FALSE(w.empty());
    for (const auto& tr : w) {
        EXPECT_EQ(tr.value, t.scalar(tr.to, tr.from));
        bool found = false;
        for (const auto& back : w)
            if (back.k == tr.q && back.q == tr.k && back.to == tr.from && back.from == tr.to) {
                EXPECT_EQ(back.value, tr.value);
                found = true;
            }
        EXPECT_TRUE(found);
    }
    Matrix sz(2, 2);
    sz << 1, 0, 0, -1;
    for (const auto& tr : transition_rates(t, {sz}, levels)) EXPECT_EQ(tr.value, 0.0);
}

TEST(LambShift, ZeroCoefficientsAndDiagonalForSpin) {
    const WindowLayout layout{{0.0, 1.0, 2.0}, {100.0, 200.0, 400.0}, 0.5};
    Matrix sx(2, 2);
    sx << 0, 1, 1, 0;
    RealVector levels(2);
    levels << 0.0, 1.0;
    const auto comps = s_omega_decomposition(sx, levels);
    LambCoefficient zero = [](std::size_t, std::size_t, double) { return Matrix(Matrix::Zero(1, 1)); };
    EXPECT_EQ(lamb_shift(zero, comps, layout, 1).norm(), 0.0);
    const auto a = rmt_lamb_coefficients({rmt_spec(0)}, layout);
    for (std::size_t w = 0; w < 3; ++w) {
        const Matrix h = lamb_shift(a, comps, layout, w);
        EXPECT_EQ(std::abs(h(0, 1)), 0.0);
        EXPECT_EQ(std::abs(h(1, 0)), 0.0);
        EXPECT_NEAR(h(0, 0).imag(), 0.0, 1e-15);
    }
    EXPECT_GT(lamb_shift(a, comps, layout, 1).norm(), 0.0);
}
