// thermo.hpp: Thermodynamic ledger on coarse-grained trajectories: energies, work and heat,
// observational entropies, entropy production, effective temperatures and the Clausius chain

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "emme/system.hpp"
#include "emme/trajectory.hpp"

namespace emme {

namespace detail {

/// Marginal over bath `nu` (nu < 0: joint key) of a population map, together with volumes.
struct Marginal {
    std::vector<double> p, volume, energy;
};

inline Marginal bath_marginal(const Populations& pop, const Trajectory& layout, int nu) {
    std::map<BlockKey, std::size_t> index;
    Marginal m;
    for (const auto& [key, v] : pop) {
        const BlockKey k = nu < 0 ? key : BlockKey{key.at(static_cast<std::size_t>(nu))};
        auto it = index.find(k);
        if (it == index.end()) {
            it = index.emplace(k, m.p.size()).first;
            m.p.push_back(0.0);
            if (nu < 0) {
                m.volume.push_back(layout.joint_volume(key));
                m.energy.push_back(layout.total_bath_energy(key));
            } else {
                const auto w = static_cast<std::size_t>(k[0]);
                m.volume.push_back(layout.volumes.at(static_cast<std::size_t>(nu)).at(w));
                m.energy.push_back(layout.centers.at(static_cast<std::size_t>(nu)).at(w));
            }
        }
        m.p[it->second] += v.sum();
    }
    return m;
}

inline RealVector system_marginal(const Populations& pop) {
    RealVector ps;
    for (const auto& [key, v] : pop) {
        if (ps.size() == 0) ps = RealVector::Zero(v.size());
        ps += v;
    }
    return ps;
}

}  // namespace detail

// ---------------------------------------------------------------- entropies

struct EntropyTerms {
    double s_obs{0.0};
    double s_sys{0.0};               // S_obs^S
    double s_bath{0.0};              // S_obs^B over joint bath keys
    std::vector<double> s_bath_each; // per bath marginal
    double i_cg{0.0};
};

/// S_obs = sum p (-log p + log V_E), with the system and bath marginal versions.
inline double observational_entropy(const Populations& pop, const Trajectory& layout) {
    double s = 0.0;
    for (const auto& [key, v] : pop) {
        const double vol = layout.joint_volume(key);
        for (Eigen::Index k = 0; k < v.size(); ++k)
            if (v(k) > 0.0) s += v(k) * (-std::log(v(k)) + std::log(vol));
    }
    return s;
}

/// I_cg = sum p log[p / (p(eps_k) p(E))].
inline double mutual_information_cg(const Populations& pop) {
    const RealVector ps = detail::system_marginal(pop);
    double i = 0.0;
    for (const auto& [key, v] : pop) {
        const double pe = v.sum();
        for (Eigen::Index k = 0; k < v.size(); ++k)
            if (v(k) > 0.0) i += v(k) * std::log(v(k) / (ps(k) * pe));
    }
    return i;
}

inline EntropyTerms entropy_terms(const Populations& pop, const Trajectory& layout) {
    EntropyTerms e;
    e.s_obs = observational_entropy(pop, layout);
    const RealVector ps = detail::system_marginal(pop);
    for (Eigen::Index k = 0; k < ps.size(); ++k) e.s_sys -= detail::xlogx(ps(k));
    auto bath_entropy = [](const detail::Marginal& m) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.p.size(); ++i)
            if (m.p[i] > 0.0) s += m.p[i] * (-std::log(m.p[i]) + std::log(m.volume[i]));
        return s;
    };
    e.s_bath = bath_entropy(detail::bath_marginal(pop, layout, -1));
    for (std::size_t nu = 0; nu < layout.bath_count(); ++nu)
        e.s_bath_each.push_back(bath_entropy(detail::bath_marginal(pop, layout, static_cast<int>(nu))));
    e.i_cg = mutual_information_cg(pop);
    return e;
}

/// dS_obs/dt from the population derivative: sum pdot (-log p + log V). +inf where p = 0 and pdot > 0.
inline double entropy_production_rate(const Populations& pop, const Populations& dpop, const Trajectory& layout) {
    double s = 0.0;
    for (const auto& [key, v] : pop) {
        const auto it = dpop.find(key);
        if (it == dpop.end()) continue;
        const double vol = layout.joint_volume(key);
        for (Eigen::Index k = 0; k < v.size(); ++k) {
            const double dp = it->second(k);
            if (dp == 0.0) continue;
            if (v(k) <= 0.0) {
                if (dp > 0.0) return std::numeric_limits<double>::infinity();
                continue;
            }
            s += dp * (-std::log(v(k)) + std::log(vol));
        }
    }
    return s;
}

/// D(p||q) = sum p log(p/q) over flat distributions.
inline double relative_entropy_cg(const RealVector& p, const RealVector& q) {
    if (p.size() != q.size()) throw ConfigError("relative entropy of distributions with different sizes");
    double d = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p(i) <= 0.0) continue;
        if (!(q(i) > 0.0))
            throw ConfigError("relative entropy undefined: q vanishes where p > 0 at index " + std::to_string(i));
        d += p(i) * std::log(p(i) / q(i));
    }
    return d;
}

// ---------------------------------------------------------------- temperatures

/// Canonical band ensemble p(E) ~ V_E exp(-beta E): log Z and mean energy.
struct CanonicalBands {
    std::vector<double> energy, volume;

    double log_z(double beta) const {
        double shift = -std::numeric_limits<double>::infinity();
        for (double e : energy) shift = std::max(shift, -beta * e);
        double z = 0.0;
        for (std::size_t i = 0; i < energy.size(); ++i) z += volume[i] * std::exp(-beta * energy[i] - shift);
        return shift + std::log(z);
    }

    double mean_energy(double beta) const {
        const double lz = log_z(beta);
        double u = 0.0;
        for (std::size_t i = 0; i < energy.size(); ++i) u += energy[i] * volume[i] * std::exp(-beta * energy[i] - lz);
        return u;
    }

    double e_min() const { return *std::min_element(energy.begin(), energy.end()); }
    double e_max() const { return *std::max_element(energy.begin(), energy.end()); }

    /// Smallest gap between distinct band energies.
    double spacing() const {
        std::vector<double> e = energy;
        std::sort(e.begin(), e.end());
        double g = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < e.size(); ++i)
            if (e[i] > e[i - 1]) g = std::min(g, e[i] - e[i - 1]);
        return g;
    }

    /// Canonical entropy log Z + beta U at the temperature matching U.
    double entropy_at(const Temperature& t) const {
        switch (t.kind()) {
            case Temperature::Kind::infinite: return log_z(0.0);
            case Temperature::Kind::zero_positive: return std::log(volume_at(e_min()));
            case Temperature::Kind::zero_negative: return std::log(volume_at(e_max()));
            case Temperature::Kind::finite: break;
        }
        return log_z(t.beta()) + t.beta() * mean_energy(t.beta());
    }

private:
    double volume_at(double e) const {
        double v = 0.0;
        for (std::size_t i = 0; i < energy.size(); ++i)
            if (energy[i] == e) v += volume[i];
        return v;
    }
};

inline CanonicalBands canonical_bands(const std::vector<double>& centers, const std::vector<double>& volumes) {
    CanonicalBands b;
    for (std::size_t i = 0; i < centers.size(); ++i)
        if (volumes.at(i) > 0.0) {
            b.energy.push_back(centers[i]);
            b.volume.push_back(volumes[i]);
        }
    std::set<double> distinct(b.energy.begin(), b.energy.end());
    if (distinct.size() < 2) throw ConfigError("effective temperature needs at least two windows with V > 0");
    return b;
}

/// T* solving U_can(beta) = U_B by bracketed root search on |beta| <= beta_scale / spacing.
inline Temperature effective_temperature(double u_b, const CanonicalBands& bands, double beta_scale = 50.0) {
    const double lo = bands.e_min(), hi = bands.e_max();
    const double tol = 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
    if (u_b < lo - tol || u_b > hi + tol)
        throw ConfigError("bath energy " + std::to_string(u_b) + " outside the spectrum range");
    if (u_b <= lo + tol) return Temperature::zero_positive();
    if (u_b >= hi - tol) return Temperature::zero_negative();
    const double mean = bands.mean_energy(0.0);
    if (std::abs(u_b - mean) <= tol) return Temperature::infinite();

    const double bmax = beta_scale / bands.spacing();
    auto f = [&](double beta) { return bands.mean_energy(beta) - u_b; };
    double a = 0.0, b = 0.0;
    if (u_b < mean) {
        b = bmax;
        if (f(b) > 0.0) return Temperature::zero_positive();
    } else {
        a = -bmax;
        if (f(a) < 0.0) return Temperature::zero_negative();
    }
    boost::math::tools::eps_tolerance<double> stop(50);
    std::uintmax_t iters = 200;
    const auto [x0, x1] = boost::math::tools::toms748_solve(f, a, b, stop, iters);
    return Temperature::from_beta(0.5 * (x0 + x1));
}

inline Temperature effective_temperature(const RealVector& p_bath, const std::vector<double>& centers,
                                         const std::vector<double>& volumes, double beta_scale = 50.0) {
    if (p_bath.size() != static_cast<Eigen::Index>(centers.size()))
        throw ConfigError("bath marginal and window list differ in size");
    double u = 0.0;
    for (Eigen::Index i = 0; i < p_bath.size(); ++i) u += p_bath(i) * centers[static_cast<std::size_t>(i)];
    return effective_temperature(u, canonical_bands(centers, volumes), beta_scale);
}

/// Gibbs state p_T(k, E) = V_E exp(-(eps_k + E)/T) / (Z_S Z_B) on the keys of `like`.
inline Populations gibbs_populations(const Populations& like, const RealVector& levels, const Trajectory& layout,
                                     double beta, double* log_zs = nullptr, double* log_zb = nullptr) {
    double zs = 0.0;
    for (Eigen::Index k = 0; k < levels.size(); ++k) zs += std::exp(-beta * levels(k));
    double zb = 0.0;
    for (const auto& [key, v] : like) zb += layout.joint_volume(key) * std::exp(-beta * layout.total_bath_energy(key));
    Populations out;
    for (const auto& [key, v] : like) {
        RealVector p(levels.size());
        for (Eigen::Index k = 0; k < levels.size(); ++k)
            p(k) = layout.joint_volume(key) * std::exp(-beta * (levels(k) + layout.total_bath_energy(key))) / (zs * zb);
        out[key] = p;
    }
    if (log_zs) *log_zs = std::log(zs);
    if (log_zb) *log_zb = std::log(zb);
    return out;
}

inline RealVector flatten(const Populations& p) {
    Eigen::Index n = 0;
    for (const auto& [key, v] : p) n += v.size();
    RealVector out(n);
    Eigen::Index i = 0;
    for (const auto& [key, v] : p) {
        out.segment(i, v.size()) = v;
        i += v.size();
    }
    return out;
}

// ---------------------------------------------------------------- ledger

struct ThermoRecord {
    double t{0.0};
    double u{0.0};
    double u_sys{0.0};
    std::vector<double> u_bath;
    double work{0.0};
    std::vector<double> heat;
    double first_law_residual{0.0};  // Delta U_S - W - sum Q
    double work_residual{0.0};       // Delta U - W
    double s_obs{0.0};
    double s_sys{0.0};
    double s_bath{0.0};
    double i_cg{0.0};
    std::vector<Temperature> t_eff;
    double entropy_production{std::numeric_limits<double>::quiet_NaN()};
    double lhs1{0.0};
    double lhs2{0.0};
    double delta_s_obs{0.0};
    double lhs1_trapezoid{std::numeric_limits<double>::quiet_NaN()};
};

struct ThermoLedger {
    std::vector<ThermoRecord> records;
    bool zero_temperature_start{false};
    bool interpolated_quench{false};
    double max_first_law_residual{0.0};
    double max_work_residual{0.0};
};

namespace detail {

inline Populations lerp(const Populations& a, const Populations& b, double s) {
    Populations out = a;
    for (auto& [key, v] : out) {
        auto it = b.find(key);
        v *= (1.0 - s);
        if (it != b.end()) v += s * it->second;
    }
    for (const auto& [key, v] : b)
        if (!a.count(key)) out[key] = s * v;
    return out;
}

inline double system_energy(const Populations& p, const RealVector& levels) {
    double u = 0.0;
    for (const auto& [key, v] : p) u += levels.head(v.size()).dot(v);
    return u;
}

}  // namespace detail

/// Full ledger. `dpop[i]`, when given, is dp/dt at sample i and feeds the entropy production rate.
/// Work is lumped at quench instants using the populations there (linear interpolation if the
/// instant falls between samples, flagged). The heat integral for lhs1 is exact in energy space.
inline ThermoLedger thermo_ledger(const Trajectory& traj, const SystemSpec& system,
                                  const std::vector<Populations>* dpop = nullptr, double beta_scale = 50.0) {
    ThermoLedger out;
    if (traj.samples.empty()) return out;
    const std::size_t nb = traj.bath_count();
    std::vector<std::optional<CanonicalBands>> bands(nb);
    for (std::size_t nu = 0; nu < nb; ++nu) {
        try {
            bands[nu] = canonical_bands(traj.centers[nu], traj.volumes[nu]);
        } catch (const ConfigError&) {
        }
    }

    auto bath_energies = [&](const Populations& p) {
        std::vector<double> u(nb, 0.0);
        for (std::size_t nu = 0; nu < nb; ++nu) {
            const auto m = detail::bath_marginal(p, traj, static_cast<int>(nu));
            for (std::size_t i = 0; i < m.p.size(); ++i) u[nu] += m.p[i] * m.energy[i];
        }
        return u;
    };

    const auto& s0 = traj.samples.front();
    const EntropyTerms e0 = entropy_terms(s0.populations, traj);
    std::vector<double> s_can0(nb, 0.0);
    std::vector<double> u_b0 = bath_energies(s0.populations);
    std::vector<Temperature> t0;
    for (std::size_t nu = 0; nu < nb; ++nu) {
        if (!bands[nu]) {
            t0.push_back(Temperature::infinite());
            continue;
        }
        t0.push_back(effective_temperature(u_b0[nu], *bands[nu], beta_scale));
        s_can0[nu] = bands[nu]->entropy_at(t0.back());
        if (!t0.back().is_finite() && t0.back().kind() != Temperature::Kind::infinite) out.zero_temperature_start = true;
    }

    double work = 0.0;
    std::vector<double> heat(nb, 0.0);
    std::vector<double> trap(nb, 0.0);
    std::vector<bool> trap_started(nb, false);
    double u0 = 0.0;
    double u_sys0 = 0.0;

    for (std::size_t i = 0; i < traj.samples.size(); ++i) {
        const auto& s = traj.samples[i];
        const RealVector& lv = system.levels_at(s.t);
        ThermoRecord r;
        r.t = s.t;
        r.u_bath = bath_energies(s.populations);
        r.u_sys = detail::system_energy(s.populations, lv);
        r.u = r.u_sys;
        for (double ub : r.u_bath) r.u += ub;

        if (i == 0) {
            u0 = r.u;
            u_sys0 = r.u_sys;
        } else {
            const auto& prev = traj.samples[i - 1];
            // quench instants in (t_prev, t], each with the populations at that instant
            std::vector<double> qs = system.quench_times(prev.t, s.t);
            for (const auto& seg : system.protocol)
                if (seg.start == s.t) qs.push_back(s.t);
            RealVector cur = system.levels_at(prev.t);
            for (double tq : qs) {
                const RealVector next = system.levels_at(tq);
                Populations pq;
                if (tq == s.t) {
                    pq = s.populations;
                } else {
                    pq = detail::lerp(prev.populations, s.populations, (tq - prev.t) / (s.t - prev.t));
                    out.interpolated_quench = true;
                }
                work += detail::system_energy(pq, next) - detail::system_energy(pq, cur);
                cur = next;
            }
            const auto ub_prev = bath_energies(prev.populations);
            for (std::size_t nu = 0; nu < nb; ++nu) heat[nu] -= r.u_bath[nu] - ub_prev[nu];
        }
        r.work = work;
        r.heat = heat;
        double qsum = 0.0;
        for (double q : heat) qsum += q;
        r.first_law_residual = (r.u_sys - u_sys0) - work - qsum;
        r.work_residual = (r.u - u0) - work;
        out.max_first_law_residual = std::max(out.max_first_law_residual, std::abs(r.first_law_residual));
        out.max_work_residual = std::max(out.max_work_residual, std::abs(r.work_residual));

        const EntropyTerms e = entropy_terms(s.populations, traj);
        r.s_obs = e.s_obs;
        r.s_sys = e.s_sys;
        r.s_bath = e.s_bath;
        r.i_cg = e.i_cg;
        r.delta_s_obs = e.s_obs - e0.s_obs;
        r.lhs2 = e.s_sys - e0.s_sys;
        r.lhs1 = e.s_sys - e0.s_sys;
        for (std::size_t nu = 0; nu < nb; ++nu) {
            r.lhs2 += e.s_bath_each[nu] - e0.s_bath_each[nu];
            if (!bands[nu]) {
                r.t_eff.push_back(Temperature::infinite());
                continue;
            }
            r.t_eff.push_back(effective_temperature(r.u_bath[nu], *bands[nu], beta_scale));
            r.lhs1 += bands[nu]->entropy_at(r.t_eff.back()) - s_can0[nu];
        }

        // trapezoid diagnostic: -int Qdot/T* = int beta dU_B from the first finite beta onwards
        if (i > 0) {
            const auto& prev_rec = out.records.back();
            for (std::size_t nu = 0; nu < nb; ++nu) {
                const auto& ta = prev_rec.t_eff[nu];
                const auto& tb = r.t_eff[nu];
                const bool fa = ta.is_finite() || ta.kind() == Temperature::Kind::infinite;
                const bool fb = tb.is_finite() || tb.kind() == Temperature::Kind::infinite;
                if (fa && fb) {
                    trap_started[nu] = true;
                    trap[nu] += 0.5 * (ta.beta() + tb.beta()) * (r.u_bath[nu] - prev_rec.u_bath[nu]);
                }
            }
        }
        bool any = false;
        double t_sum = e.s_sys - e0.s_sys;
        for (std::size_t nu = 0; nu < nb; ++nu) {
            if (trap_started[nu]) any = true;
            t_sum += trap[nu];
        }
        if (any) r.lhs1_trapezoid = t_sum;

        if (dpop && i < dpop->size()) r.entropy_production = entropy_production_rate(s.populations, (*dpop)[i], traj);
        out.records.push_back(std::move(r));
    }
    return out;
}

}  // namespace emme
