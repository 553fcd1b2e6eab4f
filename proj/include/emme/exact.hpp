// exact.hpp: Full system (x) bath benchmark: Hamiltonian assembly, pure-state ensembles,
// eigendecomposition propagation through quench protocols, coarse graining and mutual information

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "emme/bathmodel.hpp"
#include "emme/system.hpp"
#include "emme/trajectory.hpp"

namespace emme {

/// H = H_S (x) 1 + 1 (x) H_B + lambda sum_alpha S^alpha (x) B^alpha on the index k * d_B + i.
struct FullModel {
    Eigen::Index d_s{0};
    Eigen::Index d_b{0};
    Matrix hamiltonian;

    Eigen::Index dimension() const noexcept { return d_s * d_b; }
};

inline constexpr Eigen::Index kDefaultDimensionCap = 5000;

inline FullModel assemble(const RealVector& levels, const std::vector<Matrix>& ops, const BathRealization& bath,
                          Eigen::Index cap = kDefaultDimensionCap) {
    FullModel m;
    m.d_s = levels.size();
    m.d_b = static_cast<Eigen::Index>(bath.spectrum.dimension());
    const Eigen::Index n = m.dimension();
    if (n > cap)
        throw DimensionError("full Hilbert space dimension " + std::to_string(n) + " exceeds the cap " +
                             std::to_string(cap));
    if (ops.size() != bath.operator_count())
        throw ConfigError("number of system coupling operators does not match the bath realization");
    for (const auto& s : ops)
        if (s.rows() != m.d_s || s.cols() != m.d_s) throw ConfigError("coupling operator has the wrong dimension");

    const RealVector eb = bath.spectrum.energies();
    m.hamiltonian = Matrix::Zero(n, n);
    for (Eigen::Index k = 0; k < m.d_s; ++k)
        for (Eigen::Index i = 0; i < m.d_b; ++i) m.hamiltonian(k * m.d_b + i, k * m.d_b + i) = levels(k) + eb(i);
    for (std::size_t a = 0; a < ops.size(); ++a)
        for (Eigen::Index k = 0; k < m.d_s; ++k)
            for (Eigen::Index q = 0; q < m.d_s; ++q) {
                const cplx s = ops[a](k, q);
                if (s == 0.0) continue;
                m.hamiltonian.block(k * m.d_b, q * m.d_b, m.d_b, m.d_b) += (bath.lambda * s) * bath.couplings[a];
            }
    return m;
}

enum class EnsembleKind { basis, typicality };

/// Mixed state as weighted pure states; column j of `members` is member j.
struct FullEnsemble {
    EnsembleKind kind{EnsembleKind::basis};
    RealVector weights;
    Matrix members;

    Eigen::Index size() const noexcept { return members.cols(); }
};

struct InitialStateOptions {
    EnsembleKind kind{EnsembleKind::basis};
    bool half_filled{false};
    int members{20};  // typicality only
    std::uint64_t seed{0};
};

/// |psi_S> (x) (uniform mixture over the occupied microlevels of `window`). Half filling keeps
/// the lowest floor(V/2) levels.
inline FullEnsemble prepare_initial(const BathSpectrum& spectrum, std::size_t window, const Vector& system_state,
                                    const InitialStateOptions& opt) {
    if (window >= spectrum.size()) throw ConfigError("initial window does not exist");
    if (opt.kind == EnsembleKind::typicality && opt.members < 1)
        throw ConfigError("typicality ensemble needs at least one member");
    const Eigen::Index d_b = static_cast<Eigen::Index>(spectrum.dimension());
    const Eigen::Index d_s = system_state.size();
    const auto off = static_cast<Eigen::Index>(spectrum.offset(window));
    auto occupied = static_cast<Eigen::Index>(spectrum.volume(window));
    if (opt.half_filled) occupied = std::max<Eigen::Index>(1, occupied / 2);
    const Vector psi_s = system_state / system_state.norm();

    FullEnsemble e;
    e.kind = opt.kind;
    if (opt.kind == EnsembleKind::basis) {
        e.members = Matrix::Zero(d_s * d_b, occupied);
        for (Eigen::Index j = 0; j < occupied; ++j)
            for (Eigen::Index k = 0; k < d_s; ++k) e.members(k * d_b + off + j, j) = psi_s(k);
        e.weights = RealVector::Constant(occupied, 1.0 / static_cast<double>(occupied));
        return e;
    }
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    e.members = Matrix::Zero(d_s * d_b, opt.members);
    for (int j = 0; j < opt.members; ++j) {
        Vector c(occupied);
        for (Eigen::Index i = 0; i < occupied; ++i) c(i) = cplx(normal(rng), normal(rng));
        c /= c.norm();
        for (Eigen::Index k = 0; k < d_s; ++k)
            for (Eigen::Index i = 0; i < occupied; ++i) e.members(k * d_b + off + i, j) = psi_s(k) * c(i);
    }
    e.weights = RealVector::Constant(opt.members, 1.0 / opt.members);
    return e;
}

/// Eigendecomposition of H restricted to the connected components of its sparsity graph.
class SpectralPropagator {
public:
    struct Component {
        std::vector<Eigen::Index> indices;
        RealVector eigenvalues;
        Matrix vectors;
    };

    /// Only components that carry amplitude in `support` are diagonalized.
    SpectralPropagator(const Matrix& h, const Matrix& support) {
        const Eigen::Index n = h.rows();
        std::vector<Eigen::Index> parent(static_cast<std::size_t>(n));
        std::iota(parent.begin(), parent.end(), 0);
        std::function<Eigen::Index(Eigen::Index)> find = [&](Eigen::Index x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < j; ++i)
                if (h(i, j) != 0.0) {
                    const auto a = find(i), b = find(j);
                    if (a != b) parent[a] = b;
                }
        std::map<Eigen::Index, std::vector<Eigen::Index>> groups;
        for (Eigen::Index i = 0; i < n; ++i) groups[find(i)].push_back(i);
        for (auto& [root, idx] : groups) {
            double weight = 0.0;
            for (auto i : idx) weight += support.row(i).squaredNorm();
            if (weight == 0.0) continue;
            const auto m = static_cast<Eigen::Index>(idx.size());
            Matrix sub(m, m);
            for (Eigen::Index a = 0; a < m; ++a)
                for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = h(idx[a], idx[b]);
            Eigen::SelfAdjointEigenSolver<Matrix> es(sub);
            if (es.info() != Eigen::Success) throw NumericalError("Hamiltonian eigendecomposition failed");
            components_.push_back({std::move(idx), es.eigenvalues(), es.eigenvectors()});
        }
        included_.assign(static_cast<std::size_t>(n), false);
        for (const auto& c : components_)
            for (auto i : c.indices) included_[static_cast<std::size_t>(i)] = true;
    }

    /// True if every row of `psi` with amplitude lies in a diagonalized component.
    bool covers(const Matrix& psi) const {
        for (Eigen::Index i = 0; i < psi.rows(); ++i)
            if (!included_[static_cast<std::size_t>(i)] && psi.row(i).squaredNorm() != 0.0) return false;
        return true;
    }

    const std::vector<Component>& components() const noexcept { return components_; }

    /// Coefficients U^dagger psi per component.
    std::vector<Matrix> project(const Matrix& psi) const {
        std::vector<Matrix> out;
        for (const auto& c : components_) out.push_back(c.vectors.adjoint() * gather(c, psi));
        return out;
    }

    /// psi(t) = U exp(-i lambda t) U^dagger psi(0), given the projected coefficients.
    void evolve(const std::vector<Matrix>& coeff, double t, Matrix& psi) const {
        psi.setZero();
        for (std::size_t ci = 0; ci < components_.size(); ++ci) {
            const auto& c = components_[ci];
            Vector phase(c.eigenvalues.size());
            for (Eigen::Index i = 0; i < phase.size(); ++i) phase(i) = std::exp(-kI * c.eigenvalues(i) * t);
            const Matrix local = c.vectors * (phase.asDiagonal() * coeff[ci]);
            for (std::size_t a = 0; a < c.indices.size(); ++a) psi.row(c.indices[a]) = local.row(static_cast<Eigen::Index>(a));
        }
    }

private:
    static Matrix gather(const Component& c, const Matrix& psi) {
        Matrix out(static_cast<Eigen::Index>(c.indices.size()), psi.cols());
        for (std::size_t a = 0; a < c.indices.size(); ++a) out.row(static_cast<Eigen::Index>(a)) = psi.row(c.indices[a]);
        return out;
    }

    std::vector<Component> components_;
    std::vector<bool> included_;
};

using ExactObserver = std::function<void(double t, const Matrix& members, const RealVector& levels)>;

/// Evolve the ensemble through the protocol; `model_for(levels)` assembles H for each segment.
/// The observer sees every grid time, with the levels in force at that time.
inline void propagate(const FullEnsemble& initial, const SystemSpec& system,
                      const std::function<FullModel(const RealVector&)>& model_for,
                      const std::vector<double>& t_grid, const ExactObserver& observer) {
    if (t_grid.empty()) throw ConfigError("empty time grid");
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        if (!(t_grid[i] > t_grid[i - 1])) throw ConfigError("time grid must be strictly increasing");

    Matrix psi = initial.members;
    double t_ref = t_grid.front();
    RealVector levels = system.levels_at(t_ref);
    // protocols often return to earlier levels; reuse decompositions that cover the state
    std::map<std::vector<double>, std::shared_ptr<const SpectralPropagator>> cache;
    auto propagator_for = [&](const RealVector& lv, const Matrix& state) {
        std::vector<double> key(lv.data(), lv.data() + lv.size());
        auto it = cache.find(key);
        if (it != cache.end() && it->second->covers(state)) return it->second;
        auto p = std::make_shared<const SpectralPropagator>(model_for(lv).hamiltonian, state);
        cache[key] = p;
        return p;
    };
    auto prop = propagator_for(levels, psi);
    auto coeff = prop->project(psi);
    Matrix work(psi.rows(), psi.cols());

    auto restart = [&](double tq) {
        prop->evolve(coeff, tq - t_ref, work);
        psi = work;
        t_ref = tq;
        levels = system.levels_at(tq);
        prop = propagator_for(levels, psi);
        coeff = prop->project(psi);
    };

    observer(t_grid.front(), psi, levels);
    double t_prev = t_grid.front();
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        const double t = t_grid[i];
        for (double tq : system.quench_times(t_prev, t)) restart(tq);
        if (system.levels_at(t) != levels) restart(t);
        prop->evolve(coeff, t - t_ref, work);
        observer(t, work, levels);
        t_prev = t;
    }
}

/// p(eps_k, E) = tr[rho |k><k| (x) Pi_E] and rho_S(E) = tr_B[rho Pi_E], ensemble averaged.
inline void coarse_grain(const Matrix& members, const RealVector& weights, const BathSpectrum& spectrum,
                         Eigen::Index d_s, Populations& populations, std::map<BlockKey, Matrix>& blocks) {
    const auto d_b = static_cast<Eigen::Index>(spectrum.dimension());
    populations.clear();
    blocks.clear();
    for (std::size_t w = 0; w < spectrum.size(); ++w) {
        const auto off = static_cast<Eigen::Index>(spectrum.offset(w));
        const auto vol = static_cast<Eigen::Index>(spectrum.volume(w));
        Matrix rho = Matrix::Zero(d_s, d_s);
        for (Eigen::Index k = 0; k < d_s; ++k)
            for (Eigen::Index q = k; q < d_s; ++q) {
                cplx s = 0.0;
                for (Eigen::Index j = 0; j < members.cols(); ++j)
                    s += weights(j) * (members.col(j).segment(q * d_b + off, vol).adjoint() *
                                       members.col(j).segment(k * d_b + off, vol))(0, 0);
                rho(k, q) = s;
                rho(q, k) = std::conj(s);
            }
        const BlockKey key{static_cast<int>(w)};
        populations[key] = rho.diagonal().real();
        blocks[key] = rho;
    }
}

namespace detail {

inline double entropy_of_gram(const Matrix& g) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (g + g.adjoint()), Eigen::EigenvaluesOnly);
    double s = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) s -= xlogx(std::max(0.0, es.eigenvalues()(i)));
    return s;
}

inline Matrix weighted(const Matrix& members, const RealVector& weights) {
    return members * weights.cwiseSqrt().cast<cplx>().asDiagonal();
}

}  // namespace detail

/// S_vN of the ensemble mixture from its M x M Gram matrix.
inline double ensemble_entropy(const Matrix& members, const RealVector& weights) {
    const Matrix x = detail::weighted(members, weights);
    return detail::entropy_of_gram(x.adjoint() * x);
}

/// I = S(rho_S) + S(rho_B) - S(rho) with S(rho) supplied (constant under unitary evolution).
/// S(rho_B) uses the (d_S M) x (d_S M) Gram matrix, which shares the nonzero spectrum of rho_B.
inline double quantum_mutual_information(const Matrix& members, const RealVector& weights, Eigen::Index d_s,
                                         double total_entropy) {
    const Eigen::Index d_b = members.rows() / d_s;
    const Matrix x = detail::weighted(members, weights);
    const Eigen::Index m = x.cols();
    Matrix rho_s = Matrix::Zero(d_s, d_s);
    Matrix xb(d_b, d_s * m);
    for (Eigen::Index k = 0; k < d_s; ++k) xb.middleCols(k * m, m) = x.middleRows(k * d_b, d_b);
    for (Eigen::Index k = 0; k < d_s; ++k)
        for (Eigen::Index q = 0; q < d_s; ++q)
            rho_s(k, q) = (x.middleRows(q * d_b, d_b).adjoint() * x.middleRows(k * d_b, d_b)).trace();
    const double s_s = detail::entropy_of_gram(rho_s);
    const double s_b = detail::entropy_of_gram(xb.adjoint() * xb);
    return s_s + s_b - total_entropy;
}

struct ExactResult {
    Trajectory trajectory;
    std::vector<double> mutual_information;  // empty unless requested
    double max_norm_drift{0.0};
    double max_energy_drift{0.0};  // relative, within segments
};

struct ExactRunOptions {
    bool mutual_information{false};
    Eigen::Index dimension_cap{kDefaultDimensionCap};
};

/// Propagate, coarse-grain every sample and collect diagnostics.
inline ExactResult run_exact(const SystemSpec& system, const BathRealization& bath, const FullEnsemble& initial,
                             const std::vector<double>& t_grid, const ExactRunOptions& opt = {}) {
    system.validate();
    if (system.couplings.size() != 1) throw ConfigError("the exact benchmark supports a single bath");
    std::map<std::vector<double>, std::shared_ptr<FullModel>> cache;
    auto cached = [&](const RealVector& levels) -> const FullModel& {
        std::vector<double> key(levels.data(), levels.data() + levels.size());
        auto it = cache.find(key);
        if (it == cache.end())
            it = cache.emplace(key, std::make_shared<FullModel>(assemble(levels, system.couplings[0], bath, opt.dimension_cap))).first;
        return *it->second;
    };
    auto model_for = [&](const RealVector& levels) -> FullModel { return cached(levels); };

    ExactResult r;
    r.trajectory.solver = "exact";
    r.trajectory.centers = {bath.spectrum.centers()};
    r.trajectory.volumes = {bath.spectrum.volumes()};
    const double s_total = opt.mutual_information ? ensemble_entropy(initial.members, initial.weights) : 0.0;
    const Eigen::Index d_s = system.dimension();

    RealVector last_levels;
    double seg_energy = 0.0;
    std::size_t sample = 0;
    propagate(initial, system, model_for, t_grid, [&](double t, const Matrix& psi, const RealVector& levels) {
        TrajectorySample s;
        s.t = t;
        coarse_grain(psi, initial.weights, bath.spectrum, d_s, s.populations, s.blocks);
        for (Eigen::Index j = 0; j < psi.cols(); ++j)
            r.max_norm_drift = std::max(r.max_norm_drift, std::abs(psi.col(j).norm() - initial.members.col(j).norm()));
        // <H> is checked on a stride of samples and at segment boundaries
        const bool new_segment = !(last_levels.size() == levels.size() && last_levels == levels);
        if (new_segment || sample % 16 == 0 || t == t_grid.back()) {
            const Matrix hpsi = cached(levels).hamiltonian * psi;
            double e = 0.0;
            for (Eigen::Index j = 0; j < psi.cols(); ++j) e += initial.weights(j) * psi.col(j).dot(hpsi.col(j)).real();
            if (new_segment)
                seg_energy = e;
            else
                r.max_energy_drift = std::max(r.max_energy_drift, std::abs(e - seg_energy) / std::max(1.0, std::abs(seg_energy)));
        }
        ++sample;
        last_levels = levels;
        if (opt.mutual_information)
            r.mutual_information.push_back(quantum_mutual_information(psi, initial.weights, d_s, s_total));
        r.trajectory.samples.push_back(std::move(s));
    });
    return r;
}

}  // namespace emme
