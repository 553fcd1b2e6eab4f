// bathmodel.hpp: Coarse-grained finite baths: energy windows, microscopic spectra,
// microcanonical averages and random-matrix coupling operators

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "emme/common.hpp"

namespace emme {

enum class SpectrumKind { regular, random_uniform };

/// Layout of one window before its microlevels are generated.
struct WindowSpec {
    double center{0.0};
    double width{0.5};
    std::size_t volume{1};
};

/// Window [center - width/2, center + width/2) with its sorted microlevels.
struct EnergyWindow {
    double center{0.0};
    double width{0.5};
    std::vector<double> levels;

    std::size_t volume() const noexcept { return levels.size(); }
    double lower() const noexcept { return center - 0.5 * width; }
    double upper() const noexcept { return center + 0.5 * width; }
    bool contains(double e) const noexcept { return e >= lower() && e < upper(); }
    double density_of_states() const noexcept { return static_cast<double>(volume()) / width; }
};

struct BathSpec {
    std::vector<WindowSpec> windows;
    SpectrumKind spectrum_kind{SpectrumKind::regular};
    std::uint64_t seed{0};
};

/// Populated windows plus the flat microlevel indexing used by bath operators.
/// Level index = offset(window) + position inside the window.
class BathSpectrum {
public:
    BathSpectrum() = default;
    explicit BathSpectrum(std::vector<EnergyWindow> windows) : windows_(std::move(windows)) {
        offsets_.reserve(windows_.size() + 1);
        offsets_.push_back(0);
        for (const auto& w : windows_) offsets_.push_back(offsets_.back() + w.volume());
    }

    const std::vector<EnergyWindow>& windows() const noexcept { return windows_; }
    const EnergyWindow& window(std::size_t w) const { return windows_.at(w); }
    std::size_t size() const noexcept { return windows_.size(); }
    std::size_t dimension() const noexcept { return offsets_.empty() ? 0 : offsets_.back(); }
    std::size_t offset(std::size_t w) const { return offsets_.at(w); }
    std::size_t volume(std::size_t w) const { return windows_.at(w).volume(); }

    std::vector<double> centers() const {
        std::vector<double> c;
        for (const auto& w : windows_) c.push_back(w.center);
        return c;
    }
    std::vector<double> volumes() const {
        std::vector<double> v;
        for (const auto& w : windows_) v.push_back(static_cast<double>(w.volume()));
        return v;
    }

    /// H_B eigenvalues in flat level order.
    RealVector energies() const {
        RealVector e(static_cast<Eigen::Index>(dimension()));
        Eigen::Index n = 0;
        for (const auto& w : windows_)
            for (double level : w.levels) e(n++) = level;
        return e;
    }

    /// Common coarse-graining width; throws if the windows disagree.
    double width() const {
        if (windows_.empty()) throw ConfigError("bath has no energy windows");
        const double d = windows_.front().width;
        for (const auto& w : windows_)
            if (std::abs(w.width - d) > 1e-12 * std::abs(d))
                throw ConfigError("all windows of a bath must share the same width delta");
        return d;
    }

    /// Window whose center is nearest to `energy`, accepted within `tol`.
    std::optional<std::size_t> find_window(double energy, double tol) const {
        std::optional<std::size_t> best;
        double best_dist = tol;
        for (std::size_t w = 0; w < windows_.size(); ++w) {
            const double d = std::abs(windows_[w].center - energy);
            if (d <= best_dist + 1e-12 && (!best || d < best_dist)) {
                best = w;
                best_dist = d;
            }
        }
        return best;
    }

    std::size_t window_of_level(std::size_t level) const {
        auto it = std::upper_bound(offsets_.begin(), offsets_.end(), level);
        return static_cast<std::size_t>(std::distance(offsets_.begin(), it)) - 1;
    }

private:
    std::vector<EnergyWindow> windows_;
    std::vector<std::size_t> offsets_;
};

inline void validate(const BathSpec& spec) {
    if (spec.windows.empty()) throw ConfigError("bath spec has no windows");
    for (std::size_t i = 0; i < spec.windows.size(); ++i) {
        const auto& w = spec.windows[i];
        if (w.volume < 1) throw ConfigError("window volume must be >= 1");
        if (!(w.width > 0.0)) throw ConfigError("window width must be positive");
        if (i > 0) {
            const auto& prev = spec.windows[i - 1];
            if (!(w.center > prev.center))
                throw ConfigError("window centers must be strictly increasing");
            const double gap = (w.center - 0.5 * w.width) - (prev.center + 0.5 * prev.width);
            if (gap < -1e-12) throw ConfigError("energy windows overlap");
        }
    }
}

/// Populate every window with microlevels. Regular: E_i = center - delta/2 + i delta/V.
/// Random: V i.i.d. uniform samples in the window, sorted.
inline BathSpectrum build_spectrum(const BathSpec& spec) {
    validate(spec);
    std::mt19937_64 rng(spec.seed);
    std::vector<EnergyWindow> windows;
    windows.reserve(spec.windows.size());
    for (const auto& ws : spec.windows) {
        EnergyWindow w{ws.center, ws.width, {}};
        w.levels.resize(ws.volume);
        const double vol = static_cast<double>(ws.volume);
        if (spec.spectrum_kind == SpectrumKind::regular) {
            for (std::size_t i = 0; i < ws.volume; ++i)
                w.levels[i] = w.lower() + static_cast<double>(i) * ws.width / vol;
        } else {
            std::uniform_real_distribution<double> uni(w.lower(), w.upper());
            for (auto& e : w.levels) e = uni(rng);
            std::sort(w.levels.begin(), w.levels.end());
        }
        windows.push_back(std::move(w));
    }
    return BathSpectrum(std::move(windows));
}

/// Statistics of one random-matrix coupling operator B^alpha:
/// entries b(E,E') + c(E_i,E_j) between different windows.
struct CouplingSpec {
    double lambda{0.0};
    Matrix block_mean;  // b(E,E'), n_windows x n_windows; empty means zero
    double variance{1.0};
    std::uint64_t seed{0};
    std::size_t operator_label{0};
};

/// Sampled coupling operators on the bath microlevel basis.
struct BathRealization {
    BathSpectrum spectrum;
    double lambda{0.0};
    std::vector<Matrix> couplings;        // B^alpha, Hermitian, zero block diagonal
    std::vector<CouplingSpec> specs;      // statistics they were drawn from

    std::size_t operator_count() const noexcept { return couplings.size(); }

    /// Pi_E B Pi_E' block (rows in window `from`, columns in window `to`).
    auto block(std::size_t alpha, std::size_t from, std::size_t to) const {
        return couplings.at(alpha).block(
            static_cast<Eigen::Index>(spectrum.offset(from)),
            static_cast<Eigen::Index>(spectrum.offset(to)),
            static_cast<Eigen::Index>(spectrum.volume(from)),
            static_cast<Eigen::Index>(spectrum.volume(to)));
    }
};

inline cplx block_mean_entry(const CouplingSpec& spec, std::size_t from, std::size_t to) {
    if (spec.block_mean.size() == 0) return 0.0;
    return spec.block_mean(static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(to));
}

inline void validate(const CouplingSpec& spec, std::size_t n_windows) {
    if (spec.variance < 0.0) throw ConfigError("coupling variance a^2 must be non-negative");
    if (spec.block_mean.size() == 0) return;
    const auto n = static_cast<Eigen::Index>(n_windows);
    if (spec.block_mean.rows() != n || spec.block_mean.cols() != n)
        throw ConfigError("block_mean must be n_windows x n_windows");
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (std::abs(spec.block_mean(i, j) - std::conj(spec.block_mean(j, i))) > 1e-12)
                throw ConfigError("block_mean must satisfy b(E',E) = conj(b(E,E'))");
}

/// Draw one B: upper blocks sampled as b + c with c complex Gaussian
/// (real and imaginary parts each of variance a^2/2), lower blocks mirrored.
inline Matrix sample_coupling_matrix(const CouplingSpec& spec, const BathSpectrum& spectrum) {
    validate(spec, spectrum.size());
    const auto dim = static_cast<Eigen::Index>(spectrum.dimension());
    Matrix b = Matrix::Zero(dim, dim);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5 * spec.variance));
    const bool random = spec.variance > 0.0;
    for (std::size_t w = 0; w < spectrum.size(); ++w) {
        for (std::size_t v = w + 1; v < spectrum.size(); ++v) {
            const cplx mean = block_mean_entry(spec, w, v);
            const auto ow = static_cast<Eigen::Index>(spectrum.offset(w));
            const auto ov = static_cast<Eigen::Index>(spectrum.offset(v));
            for (std::size_t i = 0; i < spectrum.volume(w); ++i) {
                for (std::size_t j = 0; j < spectrum.volume(v); ++j) {
                    cplx entry = mean;
                    if (random) {
                        const double re = normal(rng);
                        const double im = normal(rng);
                        entry += cplx(re, im);
                    }
                    const auto r = ow + static_cast<Eigen::Index>(i);
                    const auto c = ov + static_cast<Eigen::Index>(j);
                    b(r, c) = entry;
                    b(c, r) = std::conj(entry);
                }
            }
        }
    }
    return b;
}

inline BathRealization sample_coupling(const std::vector<CouplingSpec>& specs, BathSpectrum spectrum) {
    if (specs.empty()) throw ConfigError("at least one coupling operator is required");
    BathRealization r;
    r.lambda = specs.front().lambda;
    for (const auto& s : specs)
        if (s.lambda != r.lambda)
            throw ConfigError("all coupling operators of one bath share the coupling energy lambda");
    for (const auto& s : specs) r.couplings.push_back(sample_coupling_matrix(s, spectrum));
    r.specs = specs;
    r.spectrum = std::move(spectrum);
    return r;
}

inline BathRealization sample_coupling(const CouplingSpec& spec, BathSpectrum spectrum) {
    return sample_coupling(std::vector<CouplingSpec>{spec}, std::move(spectrum));
}

/// <O>_E = tr[O Pi_E] / V_E.
inline cplx microcanonical_average(const Matrix& op, const BathSpectrum& spectrum, std::size_t window) {
    if (window >= spectrum.size())
        throw ConfigError("unknown window index " + std::to_string(window));
    const auto dim = static_cast<Eigen::Index>(spectrum.dimension());
    if (op.rows() != dim || op.cols() != dim)
        throw ConfigError("bath operator dimension does not match the spectrum");
    const auto off = static_cast<Eigen::Index>(spectrum.offset(window));
    const auto vol = static_cast<Eigen::Index>(spectrum.volume(window));
    return op.diagonal().segment(off, vol).sum() / static_cast<double>(vol);
}

struct InteractionSplit {
    std::vector<Matrix> level_shift;  // deltaH(E) = lambda <B_int>_E S, one per window
    Matrix coupling;                  // B = B_int - sum_E <B_int>_E Pi_E
};

/// H_int = lambda S (x) B_int = sum_E deltaH(E) (x) Pi_E + lambda S (x) B.
inline InteractionSplit split_interaction(const Matrix& b_int, const Matrix& system_op, double lambda,
                                          const BathSpectrum& spectrum) {
    InteractionSplit out;
    out.coupling = b_int;
    for (std::size_t w = 0; w < spectrum.size(); ++w) {
        const cplx avg = microcanonical_average(b_int, spectrum, w);
        out.level_shift.push_back(lambda * avg * system_op);
        const auto off = static_cast<Eigen::Index>(spectrum.offset(w));
        const auto vol = static_cast<Eigen::Index>(spectrum.volume(w));
        for (Eigen::Index i = 0; i < vol; ++i) out.coupling(off + i, off + i) -= avg;
    }
    return out;
}

}  // namespace emme
