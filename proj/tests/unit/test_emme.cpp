#include <gtest/gtest.h>

#include "emme/emme.hpp"

using namespace emme;

namespace {

Matrix sigma_x() {
    Matrix s(2, 2);
    s << 0, 1, 1, 0;
    return s;
}

RealVector spin_levels(double gap = 1.0) {
    RealVector l(2);
    l << 0.0, gap;
    return l;
}

CouplingSpec rmt(double lambda = 3e-3) {
    CouplingSpec c;
    c.lambda = lambda;
    c.variance = 1.0;
    return c;
}

EmmeModel spin_model(const WindowLayout& layout, double lambda = 3e-3) {
    EmmeModel m;
    m.system.levels = spin_levels();
    m.system.couplings = {{sigma_x()}};
    m.baths.push_back({rate_table_rmt({rmt(lambda)}, layout), std::nullopt, {}});
    return m;
}

std::vector<double> grid(double t1, double dt) {
    std::vector<double> g;
    for (int i = 0; i * dt <= t1 + 1e-12; ++i) g.push_back(i * dt);
    return g;
}

const WindowLayout kFig2{{0.0, 1.0}, {400.0, 600.0}, 0.5};
const WindowLayout kThree{{0.0, 1.0, 2.0}, {100.0, 200.0, 400.0}, 0.5};

}  // namespace

TEST(SOmega, SpinDecomposition) {
    const auto comps = s_omega_decomposition(sigma_x(), spin_levels());
    ASSERT_EQ(comps.size(), 2u);
    EXPECT_DOUBLE_EQ(comps[0].omega, -1.0);
    EXPECT_DOUBLE_EQ(comps[1].omega, 1.0);
    // S_{+1} = |0><1| lowers the system by one quantum.
    EXPECT_EQ(comps[1].ops[0](0, 1), cplx(1.0));
    EXPECT_EQ(comps[1].ops[0](1, 0), cplx(0.0));
    EXPECT_EQ(comps[0].ops[0](1, 0), cplx(1.0));
    EXPECT_EQ(comps[0].ops[0].adjoint(), comps[1].ops[0]);
}

TEST(SOmega, DiagonalAndReconstruction) {
    Matrix d(2, 2);
    d << 1, 0, 0, -1;
    const auto comps = s_omega_decomposition(d, spin_levels());
    ASSERT_EQ(comps.size(), 1u);
    EXPECT_EQ(comps[0].omega, 0.0);

    Matrix s(3, 3);
    s << 0.1, cplx(0.2, 0.3), 0.5, cplx(0.2, -0.3), -0.4, 0.7, 0.5, 0.7, 0.9;
    RealVector l(3);
    l << 0.0, 1.0, 3.0;
    Matrix sum = Matrix::Zero(3, 3);
    for (const auto& fc : s_omega_decomposition(s, l)) sum += fc.ops[0];
    EXPECT_EQ(sum, s);
}

TEST(Generator, ZeroRatesKeepPopulations) {
    auto m = spin_model(kFig2, 0.0);
    ConditionedState init = product_state(2, 1, {0});
    init.blocks[{0}](0, 1) = 0.1;
    init.blocks[{0}](1, 0) = 0.1;
    init.blocks[{0}](0, 0) = 0.2;
    init.blocks[{0}](1, 1) = 0.8;
    const auto traj = evolve(m, init, grid(10.0, 1.0));
    for (const auto& s : traj.samples) {
        EXPECT_NEAR(s.populations.at({0})(1), 0.8, 1e-12);
        EXPECT_NEAR(s.populations.at({0})(0), 0.2, 1e-12);
    }
}

TEST(Generator, DiagonalEqualsRateEquation) {
    auto m = spin_model(kThree, 0.01);
    const auto keys = std::vector<BlockKey>{{0}, {1}, {2}};
    EmmeGenerator gen(m.system.levels, m.system.couplings, m.baths, keys);
    ConditionedState s;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const auto& k : keys) {
        Matrix b(2, 2);
        b << u(rng), cplx(0.01, 0.02), cplx(0.01, -0.02), u(rng);
        s.blocks[k] = b;
    }
    const auto d = gen.apply(s);
    BathRates br{kThree, transition_rates(m.baths[0].rates, {sigma_x()}, m.system.levels)};
    const auto dp = population_rate_equation(s.populations(), {br});
    for (const auto& k : keys)
        for (int i = 0; i < 2; ++i) EXPECT_NEAR(d.blocks.at(k)(i, i).real(), dp.at(k)(i), 1e-12);
}

TEST(Evolve, MarkovMatchesAnalyticOracle) {
    auto m = spin_model(kFig2);
    const auto init = product_state(2, 1, {0});
    const auto t = grid(100.0, 0.5);
    EvolveOptions opt;
    const auto num = evolve(m, init, t, opt);
    const auto ana = analytic_spin_trajectory(m.system.levels, m.baths[0].rates, init.populations(), t,
                                              Envelope::markov);
    double err = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i)
        for (const auto& [k, p] : num.samples[i].populations)
            err = std::max(err, (p - ana.samples[i].populations.at(k)).cwiseAbs().maxCoeff());
    EXPECT_LE(err, 1e-6);
    EXPECT_NEAR(num.samples.back().populations.at({0})(1), 0.4, 1e-4);
}

TEST(Evolve, RedfieldMatchesAnalyticOracle) {
    auto m = spin_model(kFig2);
    const auto init = product_state(2, 1, {0});
    const auto t = grid(100.0, 0.5);
    EvolveOptions opt;
    opt.generator.envelope = Envelope::redfield;
    const auto num = evolve(m, init, t, opt);
    const auto ana = analytic_spin_trajectory(m.system.levels, m.baths[0].rates, init.populations(), t,
                                              Envelope::redfield);
    double err = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i)
        for (const auto& [k, p] : num.samples[i].populations)
            err = std::max(err, (p - ana.samples[i].populations.at(k)).cwiseAbs().maxCoeff());
    EXPECT_LE(err, 1e-6);
}

TEST(Evolve, ConservationAndPositivity) {
    auto m = spin_model(kThree, 0.01);
    ConditionedState init;
    init.blocks[{0}] = Matrix::Zero(2, 2);
    init.blocks[{0}](1, 1) = 0.5;
    init.blocks[{1}] = Matrix::Zero(2, 2);
    init.blocks[{1}](1, 1) = 0.3;
    init.blocks[{1}](0, 0) = 0.2;
    init.blocks[{1}](0, 1) = 0.1;
    init.blocks[{1}](1, 0) = 0.1;
    const auto traj = evolve(m, init, grid(200.0, 1.0));
    const auto p0 = shell_probability(traj.samples.front().populations, m.system.levels, traj.centers);
    for (const auto& s : traj.samples) {
        EXPECT_NEAR(total_probability(s.populations), 1.0, 1e-8);
        const auto p = shell_probability(s.populations, m.system.levels, traj.centers);
        for (const auto& [e, pr] : p0.values) EXPECT_NEAR(p.at(e), pr, 1e-8);
        ConditionedState cs;
        cs.blocks = s.blocks;
        EXPECT_GE(cs.min_eigenvalue(), -1e-10);
    }
}

TEST(Evolve, QuenchRebuildsGeneratorAndKeepsState) {
    auto m = spin_model(kThree, 3e-3);
    RealVector two(2);
    two << 0.0, 2.0;
    m.system.protocol = {{0.0, spin_levels()}, {5.0, two}};
    const auto traj = evolve(m, product_state(2, 1, {0}), grid(10.0, 0.5));
    // After the quench the gap is 2: (eps_1, 0) couples to (eps_0, 2).
    EXPECT_GT(traj.samples.back().populations.at({2})(0), 0.0);
    EXPECT_NEAR(total_probability(traj.samples.back().populations), 1.0, 1e-10);
}

TEST(Evolve, RejectsBadGrid) {
    auto m = spin_model(kFig2);
    EXPECT_THROW(evolve(m, product_state(2, 1, {0}), {0.0, 1.0, 1.0}), ConfigError);
    EXPECT_THROW(evolve(m, product_state(2, 1, {0}), {}), ConfigError);
}

TEST(Equilibrium, Fig2Values) {
    ShellDistribution shell{{{1.0, 1.0}}};
    const auto eq = equilibrium_state(shell, spin_levels(), {kFig2});
    EXPECT_NEAR(eq.at({0})(1), 0.4, 1e-15);
    EXPECT_NEAR(eq.at({1})(0), 0.6, 1e-15);
    const WindowLayout swapped{{0.0, 1.0}, {600.0, 400.0}, 0.5};
    EXPECT_NEAR(equilibrium_state(shell, spin_levels(), {swapped}).at({0})(1), 0.6, 1e-15);
    const WindowLayout equal{{0.0, 1.0}, {300.0, 300.0}, 0.5};
    EXPECT_NEAR(equilibrium_state(shell, spin_levels(), {equal}).at({0})(1), 0.5, 1e-15);
    ShellDistribution empty_shell{{{7.0, 1.0}}};
    EXPECT_THROW(equilibrium_state(empty_shell, spin_levels(), {kFig2}), ConfigError);
}

TEST(Equilibrium, StationaryUnderRateEquation) {
    auto m = spin_model(kThree, 0.01);
    ShellDistribution shells{{{1.0, 0.3}, {2.0, 0.5}, {3.0, 0.2}}};
    const auto eq = equilibrium_state(shells, m.system.levels, {kThree});
    BathRates br{kThree, transition_rates(m.baths[0].rates, {sigma_x()}, m.system.levels)};
    const auto dp = population_rate_equation(eq, {br});
    const double gamma = m.baths[0].rates.scalar(0, 1);
    for (const auto& [k, v] : dp) EXPECT_LE(v.cwiseAbs().maxCoeff(), 1e-12 * gamma);
}

TEST(Equilibrium, LocalDetailedBalance) {
    auto m = spin_model(kThree, 0.01);
    const auto w = transition_rates(m.baths[0].rates, {sigma_x()}, m.system.levels);
    for (const auto& a : w)
        for (const auto& b : w)
            if (b.k == a.q && b.q == a.k && b.to == a.from && b.from == a.to && a.value > 0.0) {
                const double ratio = (a.value / kThree.volumes[a.from]) / (b.value / kThree.volumes[b.from]);
                EXPECT_DOUBLE_EQ(ratio, kThree.volumes[a.to] / kThree.volumes[a.from]);
            }
}

TEST(Analytic, LimitsAndRelaxationExponent) {
    const double gamma = 27.14336053;
    const SpinPair p0{1.0, 0.0};
    const auto at0 = analytic_spin_solution(400, 600, gamma, p0, 0.0);
    EXPECT_EQ(at0.excited, 1.0);
    const auto inf = analytic_spin_solution(400, 600, gamma, p0, 1e6);
    EXPECT_NEAR(inf.excited / inf.ground, 400.0 / 600.0, 1e-12);
    const double two_gbar = gamma * (1.0 / 400 + 1.0 / 600);
    EXPECT_NEAR(two_gbar, 0.1131, 1e-4);
    const auto mid = analytic_spin_solution(400, 600, gamma, p0, 3.0);
    EXPECT_NEAR(mid.excited - 0.4, 0.6 * std::exp(-two_gbar * 3.0), 1e-14);
}

TEST(MicrocanonicalTemperature, SignsAndInfinity) {
    const auto t = microcanonical_temperature(kFig2, 0);
    EXPECT_NEAR(t.value(), 1.0 / std::log(1.5), 1e-12);
    EXPECT_NEAR(t.value(), 2.466, 1e-3);
    const WindowLayout swapped{{0.0, 1.0}, {600.0, 400.0}, 0.5};
    EXPECT_NEAR(microcanonical_temperature(swapped, 0).value(), -1.0 / std::log(1.5), 1e-12);
    const WindowLayout equal{{0.0, 1.0}, {300.0, 300.0}, 0.5};
    EXPECT_EQ(microcanonical_temperature(equal, 0).kind(), Temperature::Kind::infinite);
    EXPECT_THROW(microcanonical_temperature(WindowLayout{{0.0}, {10.0}, 0.5}, 0), ConfigError);
}

TEST(MultiBath, ZeroSecondBathReproducesSingleBath) {
    const WindowLayout l1 = kThree;
    const WindowLayout l2{{0.0, 1.0}, {30.0, 50.0}, 0.5};
    auto single = spin_model(l1, 0.01);
    EmmeModel two = single;
    two.system.couplings.push_back({sigma_x()});
    two.baths.push_back({rate_table_rmt({rmt(0.01)}, l2).scaled(0.0), std::nullopt, {}});
    const auto t = grid(50.0, 1.0);
    const auto a = evolve(single, product_state(2, 1, {0}), t);
    const auto b = evolve(two, product_state(2, 1, {0, 0}), t);
    double err = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i)
        for (const auto& [k, p] : a.samples[i].populations)
            err = std::max(err, (p - b.samples[i].populations.at({k[0], 0})).cwiseAbs().maxCoeff());
    EXPECT_LE(err, 1e-12);
}

TEST(MultiBath, ShellConservedAndSteadyStateMatchesVolumes) {
    const WindowLayout l1{{0.0, 1.0, 2.0}, {20.0, 40.0, 80.0}, 0.5};
    const WindowLayout l2{{0.0, 1.0, 2.0}, {30.0, 45.0, 60.0}, 0.5};
    EmmeModel m;
    m.system.levels = spin_levels();
    m.system.couplings = {{sigma_x()}, {sigma_x()}};
    m.baths.push_back({rate_table_rmt({rmt(0.01)}, l1), std::nullopt, {}});
    m.baths.push_back({rate_table_rmt({rmt(0.01)}, l2), std::nullopt, {}});
    const auto init = product_state(2, 1, {0, 0});
    const auto traj = evolve(m, init, grid(3000.0, 50.0));
    const auto p0 = shell_probability(init.populations(), m.system.levels, traj.centers);
    const auto& last = traj.samples.back().populations;
    const auto p1 = shell_probability(last, m.system.levels, traj.centers);
    for (const auto& [e, pr] : p0.values) EXPECT_NEAR(p1.at(e), pr, 1e-8);
    const auto eq = equilibrium_state(p0, m.system.levels, {l1, l2});
    for (const auto& [k, v] : eq) EXPECT_LE((v - last.at(k)).cwiseAbs().maxCoeff(), 1e-6) << detail::key_string(k);
}

TEST(GainIndex, PrintedMultiBathIndexBreaksShellConservation) {
    auto m = spin_model(kThree, 0.01);
    const std::vector<BlockKey> keys{{0}, {1}, {2}};
    GeneratorOptions printed;
    printed.gain_index = GainIndex::printed_multibath;
    EmmeGenerator good(m.system.levels, m.system.couplings, m.baths, keys);
    EmmeGenerator bad(m.system.levels, m.system.couplings, m.baths, keys, printed);
    ConditionedState s = product_state(2, 1, {0});
    s.blocks[{1}] = Matrix::Zero(2, 2);
    s.blocks[{2}] = Matrix::Zero(2, 2);
    s.blocks[{1}](1, 1) = 0.0;
    auto shell_rate = [&](const EmmeGenerator& g) {
        const auto d = g.apply(s);
        return shell_probability(d.populations(), m.system.levels, {kThree.centers});
    };
    for (const auto& [e, r] : shell_rate(good).values) EXPECT_NEAR(r, 0.0, 1e-15);
    double worst = 0.0;
    for (const auto& [e, r] : shell_rate(bad).values) worst = std::max(worst, std::abs(r));
    EXPECT_GT(worst, 1e-6);
}

TEST(Generator, RedfieldEnvelopeVanishesAtZeroAndApproachesMarkov) {
    auto m = spin_model(kFig2);
    const std::vector<BlockKey> keys{{0}, {1}};
    GeneratorOptions red;
    red.envelope = Envelope::redfield;
    EmmeGenerator rf(m.system.levels, m.system.couplings, m.baths, keys, red);
    EmmeGenerator mk(m.system.levels, m.system.couplings, m.baths, keys);
    ConditionedState s = product_state(2, 1, {0});
    s.blocks[{1}] = Matrix::Zero(2, 2);
    s.time = 0.0;
    EXPECT_NEAR(rf.apply(s).blocks.at({0})(1, 1).real(), 0.0, 1e-15);
    s.time = 1e4;
    const double a = rf.apply(s).blocks.at({0})(1, 1).real();
    const double b = mk.apply(s).blocks.at({0})(1, 1).real();
    EXPECT_NEAR(a, b, (1.0 - zeta(1e4, 0.5)) * std::abs(b) + 1e-15);
}
