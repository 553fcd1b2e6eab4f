// common.hpp: Shared aliases, error types and the temperature value type

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace emme {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using RealMatrix = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr cplx kI{0.0, 1.0};

// Invalid scenario, specification or table lookup. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Positivity, tolerance or consistency failure during a computation. CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Full Hilbert space larger than the configured cap. CLI exit code 4.
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Window index per bath; identifies one conditioned block rho_S(E).
using BlockKey = std::vector<int>;

/// Populations p(eps_k, E) keyed by bath-energy block, one entry per system level.
using Populations = std::map<BlockKey, RealVector>;

/// A temperature that may sit at one of its limits. Stored through the
/// inverse temperature so that T = infinity is an ordinary finite value.
class Temperature {
public:
    enum class Kind { finite, zero_positive, zero_negative, infinite };

    static Temperature from_beta(double beta) {
        if (beta == 0.0) return infinite();
        return Temperature{Kind::finite, beta};
    }
    static Temperature infinite() { return Temperature{Kind::infinite, 0.0}; }
    static Temperature zero_positive() {
        return Temperature{Kind::zero_positive, std::numeric_limits<double>::infinity()};
    }
    static Temperature zero_negative() {
        return Temperature{Kind::zero_negative, -std::numeric_limits<double>::infinity()};
    }

    Kind kind() const noexcept { return kind_; }
    double beta() const noexcept { return beta_; }
    bool is_finite() const noexcept { return kind_ == Kind::finite; }

    /// T itself: +0 / -0 for the zero markers, +inf for infinite temperature.
    double value() const noexcept {
        switch (kind_) {
            case Kind::zero_positive: return 0.0;
            case Kind::zero_negative: return -0.0;
            case Kind::infinite: return std::numeric_limits<double>::infinity();
            case Kind::finite: break;
        }
        return 1.0 / beta_;
    }

    std::string label() const {
        switch (kind_) {
            case Kind::zero_positive: return "0+";
            case Kind::zero_negative: return "0-";
            case Kind::infinite: return "inf";
            case Kind::finite: break;
        }
        return std::to_string(value());
    }

private:
    Temperature(Kind kind, double beta) : kind_(kind), beta_(beta) {}
    Kind kind_;
    double beta_;
};

namespace detail {

inline double xlogx(double x) noexcept { return x > 0.0 ? x * std::log(x) : 0.0; }

inline std::string key_string(const BlockKey& key) {
    std::string s = "(";
    for (std::size_t i = 0; i < key.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(key[i]);
    }
    return s + ")";
}

}  // namespace detail

}  // namespace emme
