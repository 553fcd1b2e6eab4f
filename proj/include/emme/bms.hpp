// bms.hpp: Born-Markov-secular comparison equation for the reduced system with a fixed
// Gibbs reference bath

#pragma once

#include <cmath>
#include <vector>

#include "emme/emme.hpp"
#include "emme/thermo.hpp"

namespace emme {

/// Secular rates r(omega): downward (omega > 0) gamma0, upward gamma0 exp(-omega/T_can).
/// For negative temperatures the roles are normalized so the larger rate is gamma0.
struct BmsRates {
    Temperature t_can{Temperature::infinite()};
    double gamma0{0.0};

    double rate(double omega) const {
        if (omega == 0.0) return gamma0;
        const double w = std::abs(omega);
        const bool down = omega > 0.0;
        switch (t_can.kind()) {
            case Temperature::Kind::infinite: return gamma0;
            case Temperature::Kind::zero_positive: return down ? gamma0 : 0.0;
            case Temperature::Kind::zero_negative: return down ? 0.0 : gamma0;
            case Temperature::Kind::finite: break;
        }
        const double b = t_can.beta();
        if (b >= 0.0) return down ? gamma0 : gamma0 * std::exp(-b * w);
        return down ? gamma0 * std::exp(b * w) : gamma0;
    }
};

/// T_can from the initial bath marginal via the effective-temperature solver.
inline Temperature choose_reference_temperature(const RealVector& p_bath, const std::vector<double>& centers,
                                                const std::vector<double>& volumes) {
    return effective_temperature(p_bath, centers, volumes);
}

/// gamma(E_lower, E_upper) / V_upper, summed over the operator diagonal.
inline double bms_reference_rate(const RateTable& table, std::size_t lower, std::size_t upper) {
    return table.at(lower, upper).trace().real() / table.volume(upper);
}

class BmsGenerator {
public:
    BmsGenerator(const RealVector& levels, const std::vector<std::vector<Matrix>>& ops, const std::vector<BmsRates>& rates)
        : h_(levels.cast<cplx>().asDiagonal()) {
        if (ops.size() != rates.size()) throw ConfigError("one set of reference rates is needed per bath");
        const Eigen::Index d = levels.size();
        k_ = Matrix::Zero(d, d);
        for (std::size_t nu = 0; nu < ops.size(); ++nu)
            for (const auto& comp : s_omega_decomposition(ops[nu], levels)) {
                const double r = rates[nu].rate(comp.omega);
                if (r == 0.0) continue;
                for (const auto& s : comp.ops) {
                    jumps_.push_back({std::sqrt(r) * s});
                    k_ += 0.5 * r * s.adjoint() * s;
                }
            }
    }

    Eigen::Index dimension() const noexcept { return h_.rows(); }

    Matrix apply(const Matrix& rho) const {
        const Matrix m = kI * h_ + k_;
        Matrix out = -m * rho - rho * m.adjoint();
        for (const auto& l : jumps_) out += l * rho * l.adjoint();
        return out;
    }

private:
    Matrix h_;
    Matrix k_;
    std::vector<Matrix> jumps_;
};

/// Gibbs populations at T_can: the stationary state of the secular equation.
inline RealVector bms_stationary(const RealVector& levels, const Temperature& t) {
    const Eigen::Index d = levels.size();
    RealVector p = RealVector::Zero(d);
    switch (t.kind()) {
        case Temperature::Kind::infinite: return RealVector::Constant(d, 1.0 / static_cast<double>(d));
        case Temperature::Kind::zero_positive:
        case Temperature::Kind::zero_negative: {
            Eigen::Index i = 0;
            if (t.kind() == Temperature::Kind::zero_positive) levels.minCoeff(&i);
            else levels.maxCoeff(&i);
            p(i) = 1.0;
            return p;
        }
        case Temperature::Kind::finite: break;
    }
    const double shift = (-t.beta() * levels.array()).maxCoeff();
    for (Eigen::Index k = 0; k < d; ++k) p(k) = std::exp(-t.beta() * levels(k) - shift);
    return p / p.sum();
}

/// Reduced dynamics; samples carry one block under the empty key.
inline Trajectory evolve_bms(const SystemSpec& system, const std::vector<BmsRates>& rates, const Matrix& rho0,
                             const std::vector<double>& t_grid, const EvolveOptions& opt = {}) {
    system.validate();
    if (t_grid.empty()) throw ConfigError("empty time grid");
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        if (!(t_grid[i] > t_grid[i - 1])) throw ConfigError("time grid must be strictly increasing");
    namespace ode = boost::numeric::odeint;

    Trajectory traj;
    traj.solver = "bms";
    Matrix rho = rho0;
    const Eigen::Index d = rho.rows();
    auto record = [&](double t) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -opt.positivity_tol)
            throw NumericalError("reduced state lost positivity at t = " + std::to_string(t));
        TrajectorySample s;
        s.t = t;
        s.populations[BlockKey{}] = rho.diagonal().real();
        s.blocks[BlockKey{}] = rho;
        traj.samples.push_back(std::move(s));
    };
    auto run = [&](const BmsGenerator& gen, double t0, double t1) {
        if (!(t1 > t0)) return;
        std::vector<Matrix> buf{rho}, in(1), out(1);
        detail::OdeState x;
        detail::pack(buf, x);
        auto rhs = [&](const detail::OdeState& y, detail::OdeState& dy, double) {
            detail::unpack(y, in, d);
            out[0] = gen.apply(in[0]);
            detail::pack(out, dy);
        };
        auto stepper = ode::make_controlled(opt.abs_tol, opt.rel_tol, ode::runge_kutta_dopri5<detail::OdeState>());
        ode::integrate_adaptive(stepper, rhs, x, t0, t1, std::min(opt.initial_step, t1 - t0));
        detail::unpack(x, buf, d);
        rho = buf[0];
    };

    record(t_grid.front());
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        double t = t_grid[i - 1];
        std::vector<double> cuts = system.quench_times(t, t_grid[i]);
        cuts.push_back(t_grid[i]);
        for (double c : cuts) {
            run(BmsGenerator(system.levels_at(t), system.couplings, rates), t, c);
            t = c;
        }
        record(t_grid[i]);
    }
    return traj;
}

}  // namespace emme
