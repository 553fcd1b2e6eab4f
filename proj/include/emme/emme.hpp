// emme.hpp: Extended microcanonical master equation: conditioned state, Markov-secular
// and finite-time Redfield generators, integration, rate equations and equilibrium states

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "emme/rates.hpp"
#include "emme/system.hpp"
#include "emme/trajectory.hpp"

namespace emme {

/// rho_S(E) for every modeled bath-energy vector E.
struct ConditionedState {
    std::map<BlockKey, Matrix> blocks;
    double time{0.0};

    double trace() const {
        double s = 0.0;
        for (const auto& [key, m] : blocks) s += m.trace().real();
        return s;
    }

    Populations populations() const {
        Populations p;
        for (const auto& [key, m] : blocks) p[key] = m.diagonal().real();
        return p;
    }

    /// Smallest eigenvalue over all blocks.
    double min_eigenvalue() const {
        double lo = std::numeric_limits<double>::infinity();
        for (const auto& [key, m] : blocks) {
            Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.adjoint()), Eigen::EigenvaluesOnly);
            lo = std::min(lo, es.eigenvalues().minCoeff());
        }
        return lo;
    }
};

/// |k><k| (x) Pi_E / norm: one block with a single populated level.
inline ConditionedState product_state(Eigen::Index d, Eigen::Index level, const BlockKey& key) {
    ConditionedState s;
    Matrix m = Matrix::Zero(d, d);
    m(level, level) = 1.0;
    s.blocks[key] = m;
    return s;
}

/// Everything the generator needs from one bath.
struct EmmeBath {
    RateTable rates;
    std::optional<LambCoefficient> lamb;  // used when lamb shift is enabled
    std::vector<Matrix> level_shift;      // deltaHbar(E) per window; empty means zero
};

enum class Envelope { markov, redfield };

/// Which block feeds the gain term. `energy_conserving` takes rho_S(E - omega e_nu) with
/// gamma(E_nu, E_nu - omega)/V_{E_nu - omega}. `printed_multibath` takes rho_S(E + omega e_nu)
/// with the same rate, kept only to demonstrate that it breaks shell conservation.
enum class GainIndex { energy_conserving, printed_multibath };

struct GeneratorOptions {
    Envelope envelope{Envelope::markov};
    bool lamb_shift{false};
    GainIndex gain_index{GainIndex::energy_conserving};
};

/// Closure of `seeds` under all jumps E_nu -> E_nu + omega that land on a modeled window.
inline std::set<BlockKey> reachable_blocks(const std::set<BlockKey>& seeds, const std::vector<WindowLayout>& layouts,
                                           const std::vector<std::vector<double>>& omegas_per_bath) {
    std::set<BlockKey> out = seeds;
    std::vector<BlockKey> stack(seeds.begin(), seeds.end());
    while (!stack.empty()) {
        const BlockKey key = stack.back();
        stack.pop_back();
        for (std::size_t nu = 0; nu < layouts.size(); ++nu)
            for (double w : omegas_per_bath[nu]) {
                const auto to = layouts[nu].resolve(layouts[nu].centers[static_cast<std::size_t>(key[nu])] + w);
                if (!to) continue;
                BlockKey next = key;
                next[nu] = static_cast<int>(*to);
                if (out.insert(next).second) stack.push_back(next);
            }
    }
    return out;
}

/// EMME generator for a fixed set of levels. Blocks are indexed by position in `keys()`.
class EmmeGenerator {
public:
    EmmeGenerator(const RealVector& levels, const std::vector<std::vector<Matrix>>& ops, std::vector<EmmeBath> baths,
                  std::vector<BlockKey> keys, GeneratorOptions opt = {})
        : levels_(levels), baths_(std::move(baths)), keys_(std::move(keys)), opt_(opt) {
        if (ops.size() != baths_.size()) throw ConfigError("one coupling-operator set per bath is required");
        const Eigen::Index d = levels.size();
        for (std::size_t i = 0; i < keys_.size(); ++i) index_[keys_[i]] = i;
        hamiltonian_.assign(keys_.size(), diagonal_hamiltonian(levels));
        loss_.assign(keys_.size(), Matrix::Zero(d, d));
        gains_.resize(keys_.size());

        for (std::size_t nu = 0; nu < baths_.size(); ++nu) {
            const auto& bath = baths_[nu];
            const auto& layout = bath.rates.layout();
            if (ops[nu].size() != bath.rates.operator_count())
                throw ConfigError("bath " + std::to_string(nu) + ": operator count does not match its rate table");
            const auto comps = s_omega_decomposition(ops[nu], levels);
            std::map<std::size_t, Matrix> lamb_cache;

            for (std::size_t b = 0; b < keys_.size(); ++b) {
                const auto src_w = static_cast<std::size_t>(keys_[b][nu]);
                if (src_w >= layout.size()) throw ConfigError("block key outside the window range of bath " +
                                                              std::to_string(nu));
                if (!bath.level_shift.empty()) hamiltonian_[b] += bath.level_shift.at(src_w);
                if (opt_.lamb_shift && bath.lamb) {
                    auto it = lamb_cache.find(src_w);
                    if (it == lamb_cache.end())
                        it = lamb_cache.emplace(src_w, lamb_shift(*bath.lamb, comps, layout, src_w)).first;
                    hamiltonian_[b] += it->second;
                }
                const double v_src = layout.volumes[src_w];
                for (const auto& fc : comps) {
                    const auto dst_w = layout.resolve(layout.centers[src_w] + fc.omega);
                    if (!dst_w) continue;
                    const Matrix& g = bath.rates.at(*dst_w, src_w);
                    if (g.isZero(0.0)) continue;
                    add_loss(b, g, fc, v_src);
                    if (opt_.gain_index == GainIndex::energy_conserving) {
                        BlockKey dst = keys_[b];
                        dst[nu] = static_cast<int>(*dst_w);
                        auto it = index_.find(dst);
                        if (it == index_.end())
                            throw ConfigError("reachable block " + detail::key_string(dst) + " is not modeled");
                        add_gain(it->second, b, g, fc, v_src);
                    }
                }
                if (opt_.gain_index == GainIndex::printed_multibath) {
                    // Target b, source b + omega e_nu, rate window b - omega.
                    for (const auto& fc : comps) {
                        const auto rate_w = layout.resolve(layout.centers[src_w] - fc.omega);
                        const auto feed_w = layout.resolve(layout.centers[src_w] + fc.omega);
                        if (!rate_w || !feed_w) continue;
                        BlockKey feed = keys_[b];
                        feed[nu] = static_cast<int>(*feed_w);
                        auto it = index_.find(feed);
                        if (it == index_.end()) continue;
                        const Matrix& g = bath.rates.at(src_w, *rate_w);
                        if (g.isZero(0.0)) continue;
                        add_gain(b, it->second, g, fc, layout.volumes[*rate_w]);
                    }
                }
            }
        }
    }

    const std::vector<BlockKey>& keys() const noexcept { return keys_; }
    Eigen::Index dimension() const noexcept { return levels_.size(); }
    std::optional<std::size_t> index(const BlockKey& k) const {
        auto it = index_.find(k);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Rate multiplier at time t.
    double envelope(double t) const {
        if (opt_.envelope == Envelope::markov) return 1.0;
        return zeta(t, baths_.empty() ? 1.0 : baths_.front().rates.delta());
    }

    /// d rho / dt for rho given as one matrix per key, in key order.
    void apply(const std::vector<Matrix>& rho, std::vector<Matrix>& out, double t) const {
        const double z = envelope(t);
        out.resize(rho.size());
        for (std::size_t b = 0; b < rho.size(); ++b) {
            const Matrix m = kI * hamiltonian_[b] + z * loss_[b];
            out[b] = -(m * rho[b]) - rho[b] * m.adjoint();
            for (const auto& gt : gains_[b]) out[b] += (z * gt.coef) * gt.a * rho[gt.source] * gt.b.adjoint();
        }
    }

    ConditionedState apply(const ConditionedState& s) const {
        std::vector<Matrix> rho(keys_.size(), Matrix::Zero(dimension(), dimension()));
        for (const auto& [key, m] : s.blocks) {
            auto it = index_.find(key);
            if (it == index_.end()) throw ConfigError("state block " + detail::key_string(key) + " is not modeled");
            rho[it->second] = m;
        }
        std::vector<Matrix> d;
        apply(rho, d, s.time);
        ConditionedState out;
        out.time = s.time;
        for (std::size_t b = 0; b < keys_.size(); ++b) out.blocks[keys_[b]] = d[b];
        return out;
    }

    const Matrix& effective_hamiltonian(std::size_t b) const { return hamiltonian_.at(b); }

private:
    struct GainTerm {
        std::size_t source;
        cplx coef;
        Matrix a;
        Matrix b;
    };

    void add_loss(std::size_t block, const Matrix& g, const FrequencyComponent& fc, double v) {
        for (std::size_t al = 0; al < fc.ops.size(); ++al)
            for (std::size_t ap = 0; ap < fc.ops.size(); ++ap) {
                const cplx c = g(static_cast<Eigen::Index>(al), static_cast<Eigen::Index>(ap));
                if (c != 0.0) loss_[block] += c / (2.0 * v) * fc.ops[ap].adjoint() * fc.ops[al];
            }
    }

    void add_gain(std::size_t target, std::size_t source, const Matrix& g, const FrequencyComponent& fc, double v) {
        for (std::size_t al = 0; al < fc.ops.size(); ++al)
            for (std::size_t ap = 0; ap < fc.ops.size(); ++ap) {
                const cplx c = g(static_cast<Eigen::Index>(al), static_cast<Eigen::Index>(ap));
                if (c != 0.0) gains_[target].push_back({source, c / v, fc.ops[al], fc.ops[ap]});
            }
    }

    RealVector levels_;
    std::vector<EmmeBath> baths_;
    std::vector<BlockKey> keys_;
    GeneratorOptions opt_;
    std::map<BlockKey, std::size_t> index_;
    std::vector<Matrix> hamiltonian_;
    std::vector<Matrix> loss_;
    std::vector<std::vector<GainTerm>> gains_;
};

// ---------------------------------------------------------------------------
// Integration

struct EvolveOptions {
    GeneratorOptions generator;
    double abs_tol{1e-12};
    double rel_tol{1e-10};
    double positivity_tol{1e-10};
    double initial_step{1e-2};
};

namespace detail {

using OdeState = std::vector<double>;

inline void pack(const std::vector<Matrix>& rho, OdeState& x) {
    std::size_t n = 0;
    for (const auto& m : rho) n += 2 * static_cast<std::size_t>(m.size());
    x.resize(n);
    std::size_t i = 0;
    for (const auto& m : rho)
        for (Eigen::Index j = 0; j < m.size(); ++j) {
            x[i++] = m.data()[j].real();
            x[i++] = m.data()[j].imag();
        }
}

inline void unpack(const OdeState& x, std::vector<Matrix>& rho, Eigen::Index d) {
    std::size_t i = 0;
    for (auto& m : rho) {
        m.resize(d, d);
        for (Eigen::Index j = 0; j < m.size(); ++j, i += 2) m.data()[j] = cplx(x[i], x[i + 1]);
    }
}

}  // namespace detail

/// Integrate rho from t0 to t1 under a fixed generator with adaptive Dormand-Prince 5(4).
inline void integrate(const EmmeGenerator& gen, std::vector<Matrix>& rho, double t0, double t1,
                      const EvolveOptions& opt) {
    if (!(t1 > t0)) return;
    namespace ode = boost::numeric::odeint;
    const Eigen::Index d = gen.dimension();
    detail::OdeState x;
    detail::pack(rho, x);
    std::vector<Matrix> buf_in(rho.size()), buf_out;
    auto rhs = [&](const detail::OdeState& y, detail::OdeState& dy, double t) {
        detail::unpack(y, buf_in, d);
        gen.apply(buf_in, buf_out, t);
        detail::pack(buf_out, dy);
    };
    auto stepper = ode::make_controlled(opt.abs_tol, opt.rel_tol, ode::runge_kutta_dopri5<detail::OdeState>());
    ode::integrate_adaptive(stepper, rhs, x, t0, t1, std::min(opt.initial_step, t1 - t0));
    detail::unpack(x, rho, d);
}

/// Bath models plus coupling operators that fully define an EMME scenario.
struct EmmeModel {
    SystemSpec system;
    std::vector<EmmeBath> baths;

    std::vector<WindowLayout> layouts() const {
        std::vector<WindowLayout> out;
        for (const auto& b : baths) out.push_back(b.rates.layout());
        return out;
    }
};

/// Blocks reachable from the initial state under every protocol segment.
inline std::vector<BlockKey> modeled_blocks(const EmmeModel& model, const ConditionedState& initial) {
    std::set<BlockKey> seeds;
    for (const auto& [key, m] : initial.blocks) seeds.insert(key);
    std::vector<RealVector> segment_levels{model.system.levels};
    for (const auto& seg : model.system.protocol) segment_levels.push_back(seg.levels);
    std::vector<std::vector<double>> omegas(model.baths.size());
    for (const auto& lv : segment_levels)
        for (std::size_t nu = 0; nu < model.baths.size(); ++nu)
            for (const auto& fc : s_omega_decomposition(model.system.couplings.at(nu), lv))
                omegas[nu].push_back(fc.omega);
    const auto set = reachable_blocks(seeds, model.layouts(), omegas);
    return {set.begin(), set.end()};
}

inline EmmeGenerator make_generator(const EmmeModel& model, const RealVector& levels, std::vector<BlockKey> keys,
                                    const GeneratorOptions& opt) {
    return EmmeGenerator(levels, model.system.couplings, model.baths, std::move(keys), opt);
}

/// Time-ordered integration over `t_grid`; levels switch at protocol boundaries, the
/// state is carried across unchanged. No renormalization or positivity projection.
inline Trajectory evolve(const EmmeModel& model, const ConditionedState& initial, const std::vector<double>& t_grid,
                         const EvolveOptions& opt = {}) {
    model.system.validate();
    if (t_grid.empty()) throw ConfigError("empty time grid");
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        if (!(t_grid[i] > t_grid[i - 1])) throw ConfigError("time grid must be strictly increasing");

    const auto keys = modeled_blocks(model, initial);
    const Eigen::Index d = model.system.dimension();
    std::vector<Matrix> rho(keys.size(), Matrix::Zero(d, d));
    for (std::size_t i = 0; i < keys.size(); ++i) {
        auto it = initial.blocks.find(keys[i]);
        if (it != initial.blocks.end()) rho[i] = it->second;
    }

    Trajectory traj;
    traj.solver = opt.generator.envelope == Envelope::markov ? "emme-markov" : "emme-redfield";
    for (const auto& l : model.layouts()) {
        traj.centers.push_back(l.centers);
        traj.volumes.push_back(l.volumes);
    }

    auto record = [&](double t) {
        TrajectorySample s;
        s.t = t;
        ConditionedState cs;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            s.blocks[keys[i]] = rho[i];
            s.populations[keys[i]] = rho[i].diagonal().real();
            cs.blocks[keys[i]] = rho[i];
        }
        const double lo = cs.min_eigenvalue();
        if (lo < -opt.positivity_tol)
            throw NumericalError("block positivity violated at t = " + std::to_string(t) +
                                 " (min eigenvalue " + std::to_string(lo) + ", rel_tol " +
                                 std::to_string(opt.rel_tol) + ")");
        traj.samples.push_back(std::move(s));
    };

    double t = t_grid.front();
    auto levels = model.system.levels_at(t);
    auto gen = std::make_unique<EmmeGenerator>(make_generator(model, levels, keys, opt.generator));
    record(t);
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        const double target = t_grid[i];
        for (double tq : model.system.quench_times(t, target)) {
            integrate(*gen, rho, t, tq, opt);
            t = tq;
            levels = model.system.levels_at(t);
            gen = std::make_unique<EmmeGenerator>(make_generator(model, levels, keys, opt.generator));
        }
        integrate(*gen, rho, t, target, opt);
        t = target;
        const auto& now = model.system.levels_at(t);
        if (now != levels) {
            levels = now;
            gen = std::make_unique<EmmeGenerator>(make_generator(model, levels, keys, opt.generator));
        }
        record(t);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Population dynamics

/// Transition rates of one bath together with its layout.
struct BathRates {
    WindowLayout layout;
    std::vector<TransitionRate> rates;
};

/// Classical rate equation on (k, E): jump (q, E') -> (k, E) at W_{kq}(E,E')/V_{E'}, per bath.
inline Populations population_rate_equation(const Populations& p, const std::vector<BathRates>& baths) {
    Populations dp;
    for (const auto& [key, v] : p) dp[key] = RealVector::Zero(v.size());
    for (const auto& [key, v] : p) {
        for (std::size_t nu = 0; nu < baths.size(); ++nu) {
            const auto src_w = static_cast<std::size_t>(key.at(nu));
            const double vol = baths[nu].layout.volumes.at(src_w);
            for (const auto& tr : baths[nu].rates) {
                if (tr.from != src_w) continue;
                const double flow = tr.value / vol * v(tr.q);
                if (flow == 0.0) continue;
                BlockKey dst = key;
                dst[nu] = static_cast<int>(tr.to);
                auto it = dp.find(dst);
                if (it == dp.end()) it = dp.emplace(dst, RealVector::Zero(v.size())).first;
                dp[key](tr.q) -= flow;
                it->second(tr.k) += flow;
            }
        }
    }
    return dp;
}

/// Probability per total energy eps_k + sum_nu E_nu.
struct ShellDistribution {
    std::vector<std::pair<double, double>> values;  // (E_tot, P), sorted by energy

    double at(double e, double tol = 1e-9) const {
        for (const auto& [en, p] : values)
            if (std::abs(en - e) <= tol) return p;
        return 0.0;
    }
};

inline ShellDistribution shell_probability(const Populations& p, const RealVector& levels,
                                           const std::vector<std::vector<double>>& centers, double tol = 1e-9) {
    std::vector<std::pair<double, double>> raw;
    for (const auto& [key, v] : p) {
        double e_bath = 0.0;
        for (std::size_t nu = 0; nu < key.size(); ++nu) e_bath += centers.at(nu).at(static_cast<std::size_t>(key[nu]));
        for (Eigen::Index k = 0; k < v.size(); ++k) raw.emplace_back(levels(k) + e_bath, v(k));
    }
    std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    ShellDistribution out;
    for (const auto& [e, pr] : raw) {
        if (!out.values.empty() && std::abs(out.values.back().first - e) <= tol)
            out.values.back().second += pr;
        else
            out.values.emplace_back(e, pr);
    }
    return out;
}

/// p_eq(eps_k, E) = P(E_tot) V_E / sum over all (q, E') in the shell of V_E', with V_E the
/// product of window volumes over baths.
inline Populations equilibrium_state(const ShellDistribution& shells, const RealVector& levels,
                                     const std::vector<WindowLayout>& layouts, double tol = 1e-9) {
    std::vector<BlockKey> all{{}};
    for (const auto& l : layouts) {
        std::vector<BlockKey> next;
        for (const auto& k : all)
            for (std::size_t w = 0; w < l.size(); ++w) {
                BlockKey n = k;
                n.push_back(static_cast<int>(w));
                next.push_back(n);
            }
        all = std::move(next);
    }
    Populations out;
    for (const auto& [e_tot, prob] : shells.values) {
        if (prob <= 0.0) continue;
        std::vector<std::pair<BlockKey, Eigen::Index>> members;
        double vsum = 0.0;
        for (const auto& key : all) {
            double e = 0.0, v = 1.0;
            for (std::size_t nu = 0; nu < layouts.size(); ++nu) {
                e += layouts[nu].centers[static_cast<std::size_t>(key[nu])];
                v *= layouts[nu].volumes[static_cast<std::size_t>(key[nu])];
            }
            for (Eigen::Index k = 0; k < levels.size(); ++k)
                if (std::abs(levels(k) + e - e_tot) <= tol) {
                    members.emplace_back(key, k);
                    vsum += v;
                }
        }
        if (!(vsum > 0.0))
            throw ConfigError("energy shell " + std::to_string(e_tot) + " has positive weight but no volume");
        for (const auto& [key, k] : members) {
            double v = 1.0;
            for (std::size_t nu = 0; nu < layouts.size(); ++nu)
                v *= layouts[nu].volumes[static_cast<std::size_t>(key[nu])];
            auto it = out.find(key);
            if (it == out.end()) it = out.emplace(key, RealVector::Zero(levels.size())).first;
            it->second(k) += prob * v / vsum;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Two-level oracle and microcanonical temperature

struct SpinPair {
    double excited;  // p(eps_1, E)
    double ground;   // p(eps_0, E + gap)
};

/// Exact solution of the spin shell {(eps_1, E), (eps_0, E + gap)}:
/// p(t) = p0 + (1 - exp(-2 gbar Xi)) / (2 gbar) Lambda p0 with 2 gbar = gamma (1/V_E + 1/V_{E+gap}).
inline SpinPair analytic_spin_solution(double v_e, double v_e_gap, double gamma, SpinPair p0, double xi) {
    const double two_gbar = gamma * (1.0 / v_e + 1.0 / v_e_gap);
    if (two_gbar == 0.0) return p0;
    const double f = -std::expm1(-two_gbar * xi) / two_gbar;
    const double flow = gamma * (p0.ground / v_e_gap - p0.excited / v_e);
    return {p0.excited + f * flow, p0.ground - f * flow};
}

/// Closed-form spin trajectory on a single bath; Xi(t) = t (Markov) or int zeta (Redfield).
inline Trajectory analytic_spin_trajectory(const RealVector& levels, const RateTable& rates,
                                           const Populations& initial, const std::vector<double>& t_grid,
                                           Envelope envelope) {
    if (levels.size() != 2) throw ConfigError("analytic oracle requires a two-level system");
    const auto& layout = rates.layout();
    const double gap = levels(1) - levels(0);
    Trajectory traj;
    traj.solver = "analytic";
    traj.centers = {layout.centers};
    traj.volumes = {layout.volumes};
    const double t0 = t_grid.empty() ? 0.0 : t_grid.front();
    for (double t : t_grid) {
        const double xi = envelope == Envelope::markov ? t - t0 : xi_integral(t, layout.delta) - xi_integral(t0, layout.delta);
        TrajectorySample s;
        s.t = t;
        for (std::size_t w = 0; w < layout.size(); ++w) s.populations[{static_cast<int>(w)}] = RealVector::Zero(2);
        for (std::size_t w = 0; w < layout.size(); ++w) {
            const BlockKey ke{static_cast<int>(w)};
            const double p_exc = population(initial, 1, ke);
            const auto up = layout.resolve(layout.centers[w] + gap);
            if (!up) {
                s.populations[ke](1) += p_exc;
                continue;
            }
            const BlockKey kg{static_cast<int>(*up)};
            const SpinPair r = analytic_spin_solution(layout.volumes[w], layout.volumes[*up], rates.scalar(*up, w),
                                                      {p_exc, population(initial, 0, kg)}, xi);
            s.populations[ke](1) += r.excited;
            s.populations[kg](0) += r.ground;
        }
        // Ground states with no excited partner below them are frozen.
        for (std::size_t w = 0; w < layout.size(); ++w) {
            const auto down = layout.resolve(layout.centers[w] - gap);
            if (!down) s.populations[{static_cast<int>(w)}](0) += population(initial, 0, {static_cast<int>(w)});
        }
        traj.samples.push_back(std::move(s));
    }
    return traj;
}

/// T_mic(E) from a centered (one-sided at the edges) difference of log V_E.
inline Temperature microcanonical_temperature(const WindowLayout& layout, std::size_t window) {
    if (layout.size() < 2) throw ConfigError("microcanonical temperature needs at least two windows");
    const std::size_t lo = window == 0 ? 0 : window - 1;
    const std::size_t hi = window + 1 < layout.size() ? window + 1 : window;
    const double ds = std::log(layout.volumes[hi]) - std::log(layout.volumes[lo]);
    const double de = layout.centers[hi] - layout.centers[lo];
    return Temperature::from_beta(ds / de);
}

}  // namespace emme
