// system.hpp: System Hamiltonian, coupling operators, Bohr-frequency decomposition
// and piecewise-constant driving protocols

#pragma once

#include <algorithm>
#include <vector>

#include "emme/common.hpp"

namespace emme {

/// S_omega for one Bohr frequency: ops[alpha] = sum <k|S^alpha|q> |k><q| over eps_q - eps_k = omega.
struct FrequencyComponent {
    double omega{0.0};
    std::vector<Matrix> ops;
};

/// Group the matrix elements of every S^alpha by omega = eps_q - eps_k.
/// Frequencies closer than `tol` are merged; output is sorted by omega.
inline std::vector<FrequencyComponent> s_omega_decomposition(const std::vector<Matrix>& ops,
                                                             const RealVector& levels,
                                                             double tol = 1e-9) {
    const auto d = levels.size();
    for (const auto& s : ops)
        if (s.rows() != d || s.cols() != d)
            throw ConfigError("coupling operator dimension does not match the number of levels");

    std::vector<double> omegas;
    for (Eigen::Index k = 0; k < d; ++k)
        for (Eigen::Index q = 0; q < d; ++q) {
            bool used = false;
            for (const auto& s : ops) used = used || std::abs(s(k, q)) > 0.0;
            if (used) omegas.push_back(levels(q) - levels(k));
        }
    std::sort(omegas.begin(), omegas.end());

    std::vector<FrequencyComponent> out;
    for (double w : omegas) {
        if (!out.empty() && std::abs(w - out.back().omega) <= tol) continue;
        FrequencyComponent fc;
        fc.omega = w;
        for (std::size_t a = 0; a < ops.size(); ++a) fc.ops.push_back(Matrix::Zero(d, d));
        out.push_back(std::move(fc));
    }
    for (Eigen::Index k = 0; k < d; ++k)
        for (Eigen::Index q = 0; q < d; ++q) {
            const double w = levels(q) - levels(k);
            auto it = std::find_if(out.begin(), out.end(),
                                   [&](const FrequencyComponent& fc) { return std::abs(fc.omega - w) <= tol; });
            if (it == out.end()) continue;
            for (std::size_t a = 0; a < ops.size(); ++a) it->ops[a](k, q) = ops[a](k, q);
        }
    return out;
}

inline std::vector<FrequencyComponent> s_omega_decomposition(const Matrix& op, const RealVector& levels,
                                                             double tol = 1e-9) {
    return s_omega_decomposition(std::vector<Matrix>{op}, levels, tol);
}

/// Levels eps_k(lambda_t) held from `start` until the next segment.
struct ProtocolSegment {
    double start{0.0};
    RealVector levels;
};

struct SystemSpec {
    RealVector levels;
    std::vector<std::vector<Matrix>> couplings;  // [bath][alpha] -> S^alpha_nu
    std::vector<ProtocolSegment> protocol;       // empty: static levels

    Eigen::Index dimension() const noexcept { return levels.size(); }
    std::size_t bath_count() const noexcept { return couplings.size(); }

    const RealVector& levels_at(double t) const {
        const RealVector* cur = &levels;
        for (const auto& seg : protocol)
            if (seg.start <= t) cur = &seg.levels;
        return *cur;
    }

    /// Segment start times after `t0` and strictly before `t1`.
    std::vector<double> quench_times(double t0, double t1) const {
        std::vector<double> out;
        for (const auto& seg : protocol)
            if (seg.start > t0 && seg.start < t1) out.push_back(seg.start);
        return out;
    }

    void validate() const {
        if (levels.size() < 1) throw ConfigError("system needs at least one level");
        for (std::size_t i = 0; i < protocol.size(); ++i) {
            if (protocol[i].levels.size() != levels.size())
                throw ConfigError("protocol segment has the wrong number of levels");
            if (i > 0 && !(protocol[i].start > protocol[i - 1].start))
                throw ConfigError("protocol segment boundaries must be strictly increasing");
        }
        for (const auto& bath : couplings) {
            if (bath.empty()) throw ConfigError("each bath needs at least one coupling operator");
            for (const auto& s : bath)
                if (s.rows() != levels.size() || s.cols() != levels.size())
                    throw ConfigError("coupling operator dimension does not match the number of levels");
        }
    }
};

inline Matrix diagonal_hamiltonian(const RealVector& levels) {
    return levels.cast<cplx>().asDiagonal();
}

}  // namespace emme
