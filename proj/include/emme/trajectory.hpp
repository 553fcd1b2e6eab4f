// trajectory.hpp: Solver-independent trajectory contract: time, populations p(eps_k, E)
// and conditioned blocks, plus the window layout they refer to

#pragma once

#include <map>
#include <string>
#include <vector>

#include "emme/common.hpp"

namespace emme {

struct TrajectorySample {
    double t{0.0};
    Populations populations;
    std::map<BlockKey, Matrix> blocks;  // empty for population-only solvers
};

struct Trajectory {
    std::string solver;
    std::vector<std::vector<double>> centers;  // [bath][window]
    std::vector<std::vector<double>> volumes;  // [bath][window]
    std::vector<TrajectorySample> samples;

    std::size_t bath_count() const noexcept { return centers.size(); }

    /// Bath energy of one block per bath.
    double bath_energy(const BlockKey& key, std::size_t bath) const {
        return centers.at(bath).at(static_cast<std::size_t>(key.at(bath)));
    }
    double total_bath_energy(const BlockKey& key) const {
        double e = 0.0;
        for (std::size_t b = 0; b < key.size(); ++b) e += bath_energy(key, b);
        return e;
    }
    double joint_volume(const BlockKey& key) const {
        double v = 1.0;
        for (std::size_t b = 0; b < key.size(); ++b) v *= volumes.at(b).at(static_cast<std::size_t>(key[b]));
        return v;
    }
};

inline double total_probability(const Populations& p) {
    double s = 0.0;
    for (const auto& [key, v] : p) s += v.sum();
    return s;
}

/// Population of one (k, E) entry, zero if the block is absent.
inline double population(const Populations& p, Eigen::Index k, const BlockKey& key) {
    auto it = p.find(key);
    return it == p.end() ? 0.0 : it->second(k);
}

}  // namespace emme
