// rates.hpp: Microcanonical bath correlation functions and dissipation-rate tables
// (exact quadrature, heuristic, random-matrix and ETH routes), finite-time envelope,
// Lamb-shift coefficients and transition rates

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <gsl/gsl_sf_expint.h>

#include "emme/bathmodel.hpp"
#include "emme/system.hpp"

namespace emme {

enum class RateMethod { exact_quadrature, heuristic, rmt, eth };

inline std::string to_string(RateMethod m) {
    switch (m) {
        case RateMethod::exact_quadrature: return "exact-quadrature";
        case RateMethod::heuristic: return "heuristic";
        case RateMethod::rmt: return "rmt";
        case RateMethod::eth: return "eth";
    }
    return "unknown";
}

/// Coarse description of one bath: window centers, volumes and the common width.
struct WindowLayout {
    std::vector<double> centers;
    std::vector<double> volumes;
    double delta{0.5};

    std::size_t size() const noexcept { return centers.size(); }

    static WindowLayout from(const BathSpectrum& s) { return {s.centers(), s.volumes(), s.width()}; }

    /// Nearest window with |center - energy| <= delta/2.
    std::optional<std::size_t> resolve(double energy) const {
        std::optional<std::size_t> best;
        double best_dist = 0.5 * delta * (1.0 + 1e-9);
        for (std::size_t w = 0; w < centers.size(); ++w) {
            const double d = std::abs(centers[w] - energy);
            if (d <= best_dist) {
                best = w;
                best_dist = d;
            }
        }
        return best;
    }
};

/// gamma^{alpha alpha'}(E, E') per ordered window pair, stored as (to, from) = (E, E').
/// E is the bath window reached by a jump out of E'.
class RateTable {
public:
    RateTable() = default;
    RateTable(RateMethod method, WindowLayout layout, double lambda, std::size_t n_ops)
        : method_(method), layout_(std::move(layout)), lambda_(lambda), n_ops_(n_ops) {}

    RateMethod method() const noexcept { return method_; }
    const WindowLayout& layout() const noexcept { return layout_; }
    double delta() const noexcept { return layout_.delta; }
    double lambda() const noexcept { return lambda_; }
    double resonance_tol() const noexcept { return 0.5 * layout_.delta; }
    std::size_t operator_count() const noexcept { return n_ops_; }
    double volume(std::size_t w) const { return layout_.volumes.at(w); }

    void set(std::size_t to, std::size_t from, Matrix gamma) {
        if (gamma.rows() != static_cast<Eigen::Index>(n_ops_) || gamma.cols() != gamma.rows())
            throw ConfigError("rate entry has the wrong operator dimension");
        table_[{to, from}] = std::move(gamma);
    }

    bool has(std::size_t to, std::size_t from) const { return table_.count({to, from}) > 0; }

    const Matrix& at(std::size_t to, std::size_t from) const {
        auto it = table_.find({to, from});
        if (it == table_.end())
            throw ConfigError("missing rate entry for window pair (" + std::to_string(to) + ", " +
                              std::to_string(from) + ")");
        return it->second;
    }

    /// Single-operator convenience: gamma(E, E').
    double scalar(std::size_t to, std::size_t from) const { return at(to, from)(0, 0).real(); }

    const std::map<std::pair<std::size_t, std::size_t>, Matrix>& entries() const noexcept { return table_; }

    /// Scale every entry; used to build a zero-coupling bath for additivity checks.
    RateTable scaled(double factor) const {
        RateTable out = *this;
        for (auto& [key, g] : out.table_) g *= factor;
        return out;
    }

private:
    RateMethod method_{RateMethod::rmt};
    WindowLayout layout_;
    double lambda_{0.0};
    std::size_t n_ops_{1};
    std::map<std::pair<std::size_t, std::size_t>, Matrix> table_;
};

// ---------------------------------------------------------------------------
// Correlation functions

/// C^{alpha alpha'}(E, E'; -tau) sampled on a tau grid. `window` is E, `partner` is E'.
struct CorrelationFunction {
    std::vector<double> tau;
    std::vector<Matrix> values;
    std::size_t window{0};
    std::size_t partner{0};
    double partner_volume{1.0};
    double recurrence_time{0.0};
    std::optional<double> decay_time;
};

/// Direct double sum over microlevels, evaluated as one matrix product per operator pair.
inline CorrelationFunction correlation_exact(const BathRealization& r, std::size_t window, std::size_t partner,
                                             const std::vector<double>& tau) {
    const auto& s = r.spectrum;
    if (window >= s.size() || partner >= s.size()) throw ConfigError("unknown window in correlation_exact");
    const auto va = static_cast<Eigen::Index>(s.volume(window));
    const auto vb = static_cast<Eigen::Index>(s.volume(partner));
    const auto nt = static_cast<Eigen::Index>(tau.size());
    const std::size_t n_ops = r.operator_count();

    const auto& ea = s.window(window).levels;
    const auto& eb = s.window(partner).levels;
    Matrix phase_b(vb, nt);
    Matrix phase_a(nt, va);
    for (Eigen::Index t = 0; t < nt; ++t) {
        for (Eigen::Index j = 0; j < vb; ++j) phase_b(j, t) = std::exp(-kI * eb[j] * tau[t]);
        for (Eigen::Index i = 0; i < va; ++i) phase_a(t, i) = std::exp(kI * ea[i] * tau[t]);
    }

    CorrelationFunction c;
    c.tau = tau;
    c.window = window;
    c.partner = partner;
    c.partner_volume = static_cast<double>(vb);
    double vmin = std::numeric_limits<double>::infinity();
    for (double v : s.volumes()) vmin = std::min(vmin, v);
    c.recurrence_time = 2.0 * kPi * vmin / s.width();
    c.values.assign(tau.size(), Matrix::Zero(n_ops, n_ops));

    const double pref = r.lambda * r.lambda / static_cast<double>(vb);
    for (std::size_t a = 0; a < n_ops; ++a) {
        for (std::size_t ap = 0; ap < n_ops; ++ap) {
            const Matrix m = r.block(ap, window, partner).conjugate().cwiseProduct(r.block(a, window, partner));
            const Matrix mp = m * phase_b;  // va x nt
            for (Eigen::Index t = 0; t < nt; ++t)
                c.values[t](a, ap) = pref * (phase_a.row(t) * mp.col(t)).value();
        }
    }

    const double c0 = c.values.empty() ? 0.0 : c.values.front().norm();
    for (Eigen::Index t = 0; t < nt; ++t)
        if (c.values[t].norm() < 0.05 * c0) {
            c.decay_time = tau[t];
            break;
        }
    return c;
}

/// Uniform grid on [0, 5 * 2pi/delta] fine enough to resolve phases up to `max_frequency`.
inline std::vector<double> default_tau_grid(double delta, double max_frequency) {
    const double t_max = 5.0 * 2.0 * kPi / delta;
    const double dt = 2.0 * kPi / (24.0 * (std::abs(max_frequency) + delta + 1.0));
    const auto n = static_cast<std::size_t>(std::ceil(t_max / dt)) + 1;
    std::vector<double> tau(n);
    for (std::size_t i = 0; i < n; ++i) tau[i] = t_max * static_cast<double>(i) / static_cast<double>(n - 1);
    return tau;
}

struct QuadratureResult {
    Matrix Gamma;  // V_E' int_0^inf C e^{i omega tau}
    Matrix gamma;  // Gamma + Gamma^dagger
    Matrix lamb;   // (Gamma - Gamma^dagger) / 2i
    double tau_max{0.0};
};

/// One-sided Fourier transform by trapezoid quadrature with a cosine taper on the last 10%.
/// Truncated at min(5 * 2pi/delta, first recurrence, grid end).
inline QuadratureResult gamma_quadrature(const CorrelationFunction& c, double omega, double delta) {
    if (c.tau.size() < 2) throw ConfigError("correlation tau grid needs at least two points");
    const Eigen::Index n_ops = c.values.front().rows();
    QuadratureResult q;
    q.Gamma = Matrix::Zero(n_ops, n_ops);
    const bool vanishing = c.values.front().norm() == 0.0;
    if (!vanishing && !c.decay_time)
        throw NumericalError("bath correlation function does not decay on the sampled grid "
                             "(Markov approximation invalid for these windows)");

    double t_max = std::min(5.0 * 2.0 * kPi / delta, c.tau.back());
    if (c.recurrence_time > 0.0) t_max = std::min(t_max, c.recurrence_time);
    q.tau_max = t_max;
    const double taper_start = 0.9 * t_max;
    auto weight = [&](double t) {
        if (t <= taper_start) return 1.0;
        if (t >= t_max) return 0.0;
        return 0.5 * (1.0 + std::cos(kPi * (t - taper_start) / (t_max - taper_start)));
    };
    for (std::size_t i = 0; i + 1 < c.tau.size() && c.tau[i] < t_max; ++i) {
        const double t0 = c.tau[i];
        const double t1 = std::min(c.tau[i + 1], t_max);
        const double h = t1 - t0;
        q.Gamma += 0.5 * h * (weight(t0) * std::exp(kI * omega * t0) * c.values[i] +
                              weight(t1) * std::exp(kI * omega * t1) * c.values[i + 1]);
    }
    q.Gamma *= c.partner_volume;
    q.gamma = q.Gamma + q.Gamma.adjoint();
    q.lamb = (q.Gamma - q.Gamma.adjoint()) / (2.0 * kI);
    return q;
}

// ---------------------------------------------------------------------------
// Closed-form rate routes

/// (2 pi lambda^2 / delta) tr[B^{alpha'dagger} Pi_E B^alpha Pi_E'].
inline Matrix gamma_heuristic(const BathRealization& r, std::size_t window, std::size_t partner) {
    const std::size_t n = r.operator_count();
    Matrix g = Matrix::Zero(n, n);
    const double pref = 2.0 * kPi * r.lambda * r.lambda / r.spectrum.width();
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t ap = 0; ap < n; ++ap)
            g(a, ap) = pref * r.block(ap, window, partner).conjugate().cwiseProduct(r.block(a, window, partner)).sum();
    return g;
}

/// Ensemble-averaged (2 pi lambda^2 / delta) V_E V_E' (conj(b^{alpha'}) b^alpha + a^2 [alpha = alpha']).
inline Matrix gamma_rmt(const std::vector<CouplingSpec>& specs, const WindowLayout& layout, std::size_t window,
                        std::size_t partner) {
    if (window >= layout.size() || partner >= layout.size()) throw ConfigError("unknown window in gamma_rmt");
    const std::size_t n = specs.size();
    Matrix g = Matrix::Zero(n, n);
    if (window == partner) return g;
    const double lambda = specs.empty() ? 0.0 : specs.front().lambda;
    const double pref =
        2.0 * kPi * lambda * lambda / layout.delta * (layout.volumes[window] * layout.volumes[partner]);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t ap = 0; ap < n; ++ap) {
            cplx v = std::conj(block_mean_entry(specs[ap], window, partner)) *
                     block_mean_entry(specs[a], window, partner);
            if (a == ap) v += specs[a].variance;
            g(a, ap) = pref * v;
        }
    return g;
}

inline double gamma_rmt(const CouplingSpec& spec, const WindowLayout& layout, std::size_t window,
                        std::size_t partner) {
    return gamma_rmt(std::vector<CouplingSpec>{spec}, layout, window, partner)(0, 0).real();
}

/// ETH profile: one smooth f^alpha(Ebar, Omega) per operator plus R-number correlations.
struct EthProfile {
    std::vector<std::function<cplx(double, double)>> f;
    Matrix cross_correlation;  // empty: identity

    cplx correlation(std::size_t a, std::size_t ap) const {
        if (cross_correlation.size() == 0) return a == ap ? 1.0 : 0.0;
        return cross_correlation(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(ap));
    }
};

/// Checks f(E,-Omega) = conj f(E,Omega) and that |f| at the largest sampled |Omega|
/// does not exceed |f| at Omega = 0.
inline void validate(const EthProfile& p, const std::vector<double>& energies, const std::vector<double>& omegas) {
    if (p.f.empty()) throw ConfigError("ETH profile needs at least one f function");
    if (p.cross_correlation.size() != 0 &&
        (p.cross_correlation.rows() != static_cast<Eigen::Index>(p.f.size()) ||
         p.cross_correlation.cols() != p.cross_correlation.rows()))
        throw ConfigError("ETH cross-correlation table has the wrong dimension");
    double w_far = 0.0;
    for (double w : omegas) w_far = std::max(w_far, std::abs(w));
    for (const auto& f : p.f)
        for (double e : energies) {
            for (double w : omegas) {
                const cplx a = f(e, w);
                const cplx b = f(e, -w);
                if (std::abs(a - std::conj(b)) > 1e-10 * (1.0 + std::abs(a)))
                    throw ConfigError("ETH profile violates f(E,-Omega) = conj f(E,Omega)");
            }
            if (w_far > 0.0 && std::abs(f(e, w_far)) > std::abs(f(e, 0.0)) * (1.0 + 1e-12) + 1e-300)
                throw ConfigError("ETH profile does not decay with |Omega|");
        }
}

/// Log-linear interpolation of window volumes at an arbitrary energy inside the layout.
inline double interpolate_volume(const WindowLayout& layout, double energy) {
    const auto& c = layout.centers;
    if (c.empty() || energy < c.front() - 1e-12 || energy > c.back() + 1e-12)
        throw ConfigError("energy " + std::to_string(energy) + " outside the volume interpolation range");
    for (std::size_t w = 0; w < c.size(); ++w)
        if (std::abs(c[w] - energy) <= 1e-12) return layout.volumes[w];
    std::size_t hi = 1;
    while (c[hi] < energy) ++hi;
    const std::size_t lo = hi - 1;
    const double x = (energy - c[lo]) / (c[hi] - c[lo]);
    return std::exp((1.0 - x) * std::log(layout.volumes[lo]) + x * std::log(layout.volumes[hi]));
}

/// (2 pi lambda^2/delta) V_E V_E' F^{alpha alpha'}(Ebar, E - E') / V_Ebar.
inline Matrix gamma_eth(const EthProfile& p, double lambda, const WindowLayout& layout, std::size_t window,
                        std::size_t partner) {
    const std::size_t n = p.f.size();
    const double e = layout.centers.at(window);
    const double ep = layout.centers.at(partner);
    const double ebar = 0.5 * (e + ep);
    const double vbar = interpolate_volume(layout, ebar);
    const double pref =
        2.0 * kPi * lambda * lambda / layout.delta * layout.volumes[window] * layout.volumes[partner] / vbar;
    Matrix g(n, n);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t ap = 0; ap < n; ++ap)
            g(a, ap) = pref * std::conj(p.f[ap](ebar, e - ep)) * p.f[a](ebar, e - ep) * p.correlation(a, ap);
    return g;
}

// ---------------------------------------------------------------------------
// Rate tables. Only pairs with from < to are computed; the reverse entry is the
// transpose, which makes gamma(E', E) = gamma(E, E')^T hold exactly.

namespace detail {

template <class Fn>
RateTable fill_table(RateMethod m, const WindowLayout& layout, double lambda, std::size_t n_ops, Fn&& entry) {
    RateTable t(m, layout, lambda, n_ops);
    for (std::size_t to = 0; to < layout.size(); ++to) {
        t.set(to, to, Matrix::Zero(n_ops, n_ops));
        for (std::size_t from = 0; from < to; ++from) {
            Matrix g = entry(to, from);
            t.set(from, to, g.transpose());
            t.set(to, from, std::move(g));
        }
    }
    return t;
}

}  // namespace detail

inline RateTable rate_table_rmt(const std::vector<CouplingSpec>& specs, const WindowLayout& layout) {
    if (specs.empty()) throw ConfigError("rmt rates need at least one coupling spec");
    for (const auto& s : specs) validate(s, layout.size());
    return detail::fill_table(RateMethod::rmt, layout, specs.front().lambda, specs.size(),
                              [&](std::size_t to, std::size_t from) { return gamma_rmt(specs, layout, to, from); });
}

inline RateTable rate_table_heuristic(const BathRealization& r) {
    return detail::fill_table(RateMethod::heuristic, WindowLayout::from(r.spectrum), r.lambda, r.operator_count(),
                              [&](std::size_t to, std::size_t from) { return gamma_heuristic(r, to, from); });
}

inline RateTable rate_table_eth(const EthProfile& p, double lambda, const WindowLayout& layout) {
    return detail::fill_table(RateMethod::eth, layout, lambda, p.f.size(),
                              [&](std::size_t to, std::size_t from) { return gamma_eth(p, lambda, layout, to, from); });
}

/// gamma(E, E') = gamma(E, E'; omega = E' - E) from the sampled correlation function.
inline RateTable rate_table_quadrature(const BathRealization& r) {
    const auto layout = WindowLayout::from(r.spectrum);
    return detail::fill_table(RateMethod::exact_quadrature, layout, r.lambda, r.operator_count(),
                              [&](std::size_t to, std::size_t from) {
                                  const double omega = layout.centers[from] - layout.centers[to];
                                  const double spread = std::abs(omega);
                                  const auto tau = default_tau_grid(layout.delta, 2.0 * spread);
                                  return gamma_quadrature(correlation_exact(r, to, from, tau), omega, layout.delta)
                                      .gamma;
                              });
}

/// Diagnostic delta * tau_B for every window pair with a decaying correlation function.
inline std::map<std::pair<std::size_t, std::size_t>, double> decay_diagnostics(const BathRealization& r) {
    std::map<std::pair<std::size_t, std::size_t>, double> out;
    const auto layout = WindowLayout::from(r.spectrum);
    for (std::size_t a = 0; a < layout.size(); ++a)
        for (std::size_t b = 0; b < layout.size(); ++b) {
            if (a == b) continue;
            const auto tau = default_tau_grid(layout.delta, 2.0 * std::abs(layout.centers[a] - layout.centers[b]));
            const auto c = correlation_exact(r, a, b, tau);
            if (c.decay_time) out[{a, b}] = layout.delta * *c.decay_time;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Envelope and one-sided Fourier integrals

/// Laplace transform of the random-matrix correlation envelope at s = i xi delta,
/// normalized so that breve_h(0) = 1/2.
inline cplx breve_h(double xi) {
    const double x = std::abs(xi);
    const double re = std::max(0.0, 0.5 * (1.0 - x));
    if (x == 0.0) return {re, 0.0};
    const double one_minus = 1.0 - x;
    const double tail = one_minus == 0.0 ? 0.0 : one_minus * std::log(std::abs(one_minus));
    const double im = (2.0 * x * std::log(x) - (1.0 + x) * std::log1p(x) + tail) / (2.0 * kPi);
    return {re, xi > 0.0 ? im : -im};
}

/// zeta(t) = (delta/pi) int_0^t sin^2(delta tau/2)/(delta tau/2)^2 dtau.
inline double zeta(double t, double delta) {
    if (t <= 0.0) return 0.0;
    const double u = delta * t;
    if (u < 1e-3) return (u - u * u * u / 36.0) / kPi;
    const double s = std::sin(0.5 * u);
    return 2.0 / kPi * (gsl_sf_Si(u) - 2.0 * s * s / u);
}

namespace detail {

/// Cin(u) = int_0^u (1 - cos v)/v dv.
inline double cin(double u) {
    if (u <= 1.0) {
        double term = 1.0;
        double sum = 0.0;
        for (int k = 1; k < 30; ++k) {
            term *= -u * u / ((2.0 * k - 1.0) * (2.0 * k));
            const double add = -term / (2.0 * k);
            sum += add;
            if (std::abs(add) < 1e-18 * std::abs(sum)) break;
        }
        return sum;
    }
    constexpr double euler_gamma = 0.57721566490153286061;
    return euler_gamma + std::log(u) - gsl_sf_Ci(u);
}

}  // namespace detail

/// Xi(t) = int_0^t zeta.
inline double xi_integral(double t, double delta) {
    if (t <= 0.0) return 0.0;
    const double u = delta * t;
    if (u < 1e-3) return (0.5 * u * u - u * u * u * u / 144.0) / (kPi * delta);
    const double s = std::sin(0.5 * u);
    return 2.0 / (kPi * delta) * (u * gsl_sf_Si(u) - 2.0 * s * s - detail::cin(u));
}

// ---------------------------------------------------------------------------
// Lamb shift

/// A^{alpha alpha'}(E, E'; omega), Hermitian in the operator indices. Windows by index.
using LambCoefficient = std::function<Matrix(std::size_t window, std::size_t partner, double omega)>;

/// Random-matrix Lamb coefficients: gamma_rmt(E,E') Im breve_h((E' - E - omega)/delta).
inline LambCoefficient rmt_lamb_coefficients(const std::vector<CouplingSpec>& specs, const WindowLayout& layout) {
    return [specs, layout](std::size_t w, std::size_t p, double omega) {
        const double xi = (layout.centers.at(p) - layout.centers.at(w) - omega) / layout.delta;
        return Matrix(gamma_rmt(specs, layout, w, p) * breve_h(xi).imag());
    };
}

/// Quadrature Lamb coefficients; correlation functions are computed once per pair and cached.
inline LambCoefficient quadrature_lamb_coefficients(std::shared_ptr<const BathRealization> r) {
    auto cache = std::make_shared<std::map<std::pair<std::size_t, std::size_t>, CorrelationFunction>>();
    return [r, cache](std::size_t w, std::size_t p, double omega) {
        const double delta = r->spectrum.width();
        auto it = cache->find({w, p});
        if (it == cache->end()) {
            const double spread = std::abs(r->spectrum.window(w).center - r->spectrum.window(p).center);
            const auto tau = default_tau_grid(delta, spread + std::abs(omega) + 2.0);
            it = cache->emplace(std::make_pair(w, p), correlation_exact(*r, w, p, tau)).first;
        }
        if (it->second.values.front().norm() == 0.0)
            return Matrix(Matrix::Zero(r->operator_count(), r->operator_count()));
        return gamma_quadrature(it->second, omega, delta).lamb;
    };
}

/// H_LS(E) = -sum_{E', omega} sum_{alpha alpha'} A^{alpha alpha'}(E', E; -omega)/V_E S^{alpha'dagger}_omega S^alpha_omega.
inline Matrix lamb_shift(const LambCoefficient& A, const std::vector<FrequencyComponent>& comps,
                         const WindowLayout& layout, std::size_t window) {
    if (comps.empty()) return Matrix();
    const Eigen::Index d = comps.front().ops.front().rows();
    Matrix h = Matrix::Zero(d, d);
    const double v = layout.volumes.at(window);
    for (std::size_t other = 0; other < layout.size(); ++other) {
        for (const auto& fc : comps) {
            const Matrix a = A(other, window, -fc.omega);
            for (std::size_t al = 0; al < fc.ops.size(); ++al)
                for (std::size_t ap = 0; ap < fc.ops.size(); ++ap) {
                    const cplx coef = a(static_cast<Eigen::Index>(al), static_cast<Eigen::Index>(ap));
                    if (coef != 0.0) h -= coef / v * fc.ops[ap].adjoint() * fc.ops[al];
                }
        }
    }
    return h;
}

/// H'_S(E) = H_S + deltaHbar(E) + H_LS(E).
inline Matrix modified_hamiltonian(const RealVector& levels, const Matrix& level_shift, const Matrix& lamb) {
    Matrix h = diagonal_hamiltonian(levels);
    if (level_shift.size() != 0) h += level_shift;
    if (lamb.size() != 0) h += lamb;
    return h;
}

// ---------------------------------------------------------------------------
// Transition rates

/// W_{kq}(E, E'): rate numerator for the jump (eps_q, E') -> (eps_k, E).
struct TransitionRate {
    Eigen::Index k{0};
    Eigen::Index q{0};
    std::size_t to{0};
    std::size_t from{0};
    double value{0.0};
};

/// W_{kq}(E,E') = sum_{alpha alpha'} <q|S^{alpha'dagger}|k><k|S^alpha|q> gamma^{alpha alpha'}(E,E'),
/// with E resolved from E' + eps_q - eps_k by the resonance rule.
inline std::vector<TransitionRate> transition_rates(const RateTable& table, const std::vector<Matrix>& ops,
                                                    const RealVector& levels) {
    const auto& layout = table.layout();
    const Eigen::Index d = levels.size();
    if (ops.size() != table.operator_count())
        throw ConfigError("number of coupling operators does not match the rate table");
    double scale = 0.0;
    for (const auto& [key, g] : table.entries()) scale = std::max(scale, g.cwiseAbs().maxCoeff());
    std::vector<TransitionRate> out;
    for (Eigen::Index k = 0; k < d; ++k)
        for (Eigen::Index q = 0; q < d; ++q) {
            bool coupled = false;
            for (const auto& s : ops) coupled = coupled || std::abs(s(k, q)) > 0.0;
            if (!coupled) continue;
            for (std::size_t from = 0; from < layout.size(); ++from) {
                const auto to = layout.resolve(layout.centers[from] + levels(q) - levels(k));
                if (!to) continue;
                const Matrix& g = table.at(*to, from);
                cplx w = 0.0;
                for (std::size_t a = 0; a < ops.size(); ++a)
                    for (std::size_t ap = 0; ap < ops.size(); ++ap)
                        w += std::conj(ops[ap](k, q)) * ops[a](k, q) *
                             g(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(ap));
                if (w.real() < -1e-12 * scale)
                    throw NumericalError("negative transition rate W_" + std::to_string(k) + std::to_string(q) +
                                         " for windows (" + std::to_string(*to) + ", " + std::to_string(from) +
                                         "): rate matrix is not positive semidefinite");
                out.push_back({k, q, *to, from, w.real()});
            }
        }
    return out;
}

}  // namespace emme
