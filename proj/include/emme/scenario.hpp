// scenario.hpp: Scenario configuration, named presets, solver dispatch and tabular output

#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "emme/bms.hpp"
#include "emme/exact.hpp"
#include "emme/thermo.hpp"

#ifndef EMME_VERSION
#define EMME_VERSION "unknown"
#endif

namespace emme {

using json = nlohmann::json;

inline const std::vector<std::string>& known_solvers() {
    static const std::vector<std::string> s{"exact", "emme-markov", "emme-redfield", "bms", "analytic"};
    return s;
}

struct BathConfig {
    BathSpec spec;
    std::vector<CouplingSpec> couplings;  // one per coupling operator
    std::string rates{"rmt"};             // rmt | heuristic | quadrature
};

struct ScenarioConfig {
    std::string name{"scenario"};
    std::optional<std::uint64_t> seed;
    SystemSpec system;
    std::vector<BathConfig> baths;
    int initial_level{0};
    BlockKey initial_window;
    bool half_filled{false};
    std::vector<std::string> solvers;
    double t0{0.0}, t1{1.0}, dt{0.1};
    EnsembleKind ensemble{EnsembleKind::typicality};
    int members{20};
    Eigen::Index dimension_cap{kDefaultDimensionCap};
    bool mutual_information{false};
    std::optional<Temperature> bms_temperature;
    Envelope analytic_envelope{Envelope::markov};
    bool lamb_shift{false};
    std::string out_dir{"out"};
    json source;  // the configuration as given
};

// ---------------------------------------------------------------- parsing

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix(seed ^ splitmix(stream)); }

inline cplx parse_scalar(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number())
        return {j[0].get<double>(), j[1].get<double>()};
    throw ConfigError("matrix entries must be numbers or [re, im] pairs");
}

inline Matrix parse_matrix(const json& j) {
    if (!j.is_array() || j.empty() || !j[0].is_array()) throw ConfigError("matrix must be a nested array");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (j[static_cast<std::size_t>(r)].size() != static_cast<std::size_t>(cols))
            throw ConfigError("matrix rows have different lengths");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = parse_scalar(j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
    }
    return m;
}

inline Matrix parse_operator(const json& j, Eigen::Index d) {
    if (j.is_string()) {
        if (d != 2) throw ConfigError("named operators are defined for two-level systems only");
        const auto name = j.get<std::string>();
        Matrix s = Matrix::Zero(2, 2);
        if (name == "sigma_x") s << 0, 1, 1, 0;
        else if (name == "sigma_y") s << 0, -kI, kI, 0;
        else if (name == "sigma_z") s << 1, 0, 0, -1;
        else throw ConfigError("unknown operator name '" + name + "'");
        return s;
    }
    Matrix m = parse_matrix(j);
    if (m.rows() != d || m.cols() != d) throw ConfigError("coupling operator has the wrong dimension");
    if ((m - m.adjoint()).cwiseAbs().maxCoeff() > 1e-12) throw ConfigError("coupling operator is not Hermitian");
    return m;
}

inline RealVector parse_levels(const json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.empty()) throw ConfigError("system needs at least one level");
    return Eigen::Map<const RealVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::optional<Temperature> parse_temperature(const json& j) {
    if (j.is_null()) return std::nullopt;
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return Temperature::infinite();
        if (s == "0+") return Temperature::zero_positive();
        if (s == "0-") return Temperature::zero_negative();
        throw ConfigError("temperature must be a number, \"inf\", \"0+\" or \"0-\"");
    }
    const double t = j.get<double>();
    if (t == 0.0) throw ConfigError("use \"0+\" or \"0-\" for zero temperature");
    return Temperature::from_beta(1.0 / t);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace detail

inline ScenarioConfig parse_config(const json& j) {
    try {
        ScenarioConfig c;
        c.source = j;
        c.name = detail::get_or<std::string>(j, "name", "scenario");
        if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();

        const auto& js = j.at("system");
        c.system.levels = detail::parse_levels(js.at("levels"));
        const Eigen::Index d = c.system.levels.size();
        if (js.contains("protocol"))
            for (const auto& seg : js.at("protocol"))
                c.system.protocol.push_back({seg.at("start").get<double>(), detail::parse_levels(seg.at("levels"))});

        const auto& jb = j.at("baths");
        if (!jb.is_array() || jb.empty()) throw ConfigError("at least one bath is required");
        for (const auto& b : jb) {
            BathConfig bc;
            for (const auto& w : b.at("windows"))
                bc.spec.windows.push_back({w.at("center").get<double>(), detail::get_or<double>(w, "width", 0.5),
                                           w.at("volume").get<std::size_t>()});
            const auto kind = detail::get_or<std::string>(b, "spectrum", "regular");
            if (kind == "regular") bc.spec.spectrum_kind = SpectrumKind::regular;
            else if (kind == "random") bc.spec.spectrum_kind = SpectrumKind::random_uniform;
            else throw ConfigError("spectrum must be \"regular\" or \"random\"");
            bc.rates = detail::get_or<std::string>(b, "rates", "rmt");
            if (bc.rates != "rmt" && bc.rates != "heuristic" && bc.rates != "quadrature")
                throw ConfigError("rates must be \"rmt\", \"heuristic\" or \"quadrature\"");
            const double lambda = b.at("lambda").get<double>();
            std::vector<Matrix> ops;
            const auto& jc = b.at("couplings");
            if (!jc.is_array() || jc.empty()) throw ConfigError("each bath needs at least one coupling");
            for (const auto& cj : jc) {
                CouplingSpec cs;
                cs.lambda = lambda;
                cs.variance = detail::get_or<double>(cj, "variance", 1.0);
                if (cj.contains("block_mean")) {
                    const Matrix bm = detail::parse_matrix(cj.at("block_mean"));
                    cs.block_mean = bm;
                }
                cs.operator_label = bc.couplings.size();
                bc.couplings.push_back(cs);
                ops.push_back(detail::parse_operator(cj.at("operator"), d));
            }
            c.system.couplings.push_back(ops);
            c.baths.push_back(bc);
        }

        const auto& ji = j.at("initial");
        c.initial_level = ji.at("level").get<int>();
        if (c.initial_level < 0 || c.initial_level >= d) throw ConfigError("initial level out of range");
        if (ji.at("window").is_number()) c.initial_window = {ji.at("window").get<int>()};
        else c.initial_window = ji.at("window").get<std::vector<int>>();
        if (c.initial_window.size() != c.baths.size())
            throw ConfigError("initial window needs one index per bath");
        for (std::size_t nu = 0; nu < c.baths.size(); ++nu)
            if (c.initial_window[nu] < 0 || static_cast<std::size_t>(c.initial_window[nu]) >= c.baths[nu].spec.windows.size())
                throw ConfigError("initial window index out of range");
        c.half_filled = detail::get_or<bool>(ji, "half_filled", false);

        c.solvers = j.at("solvers").get<std::vector<std::string>>();
        if (c.solvers.empty()) throw ConfigError("solver list is empty");
        for (const auto& s : c.solvers)
            if (std::find(known_solvers().begin(), known_solvers().end(), s) == known_solvers().end())
                throw ConfigError("unknown solver '" + s + "'");

        const auto& jt = j.at("time");
        c.t0 = detail::get_or<double>(jt, "t0", 0.0);
        c.t1 = jt.at("t1").get<double>();
        c.dt = jt.at("dt").get<double>();
        if (!(c.dt > 0.0) || !(c.t1 > c.t0)) throw ConfigError("time grid needs t1 > t0 and dt > 0");

        if (j.contains("exact")) {
            const auto& je = j.at("exact");
            const auto kind = detail::get_or<std::string>(je, "ensemble", "typicality");
            if (kind == "typicality") c.ensemble = EnsembleKind::typicality;
            else if (kind == "basis") c.ensemble = EnsembleKind::basis;
            else throw ConfigError("exact.ensemble must be \"typicality\" or \"basis\"");
            c.members = detail::get_or<int>(je, "members", 20);
            c.dimension_cap = detail::get_or<Eigen::Index>(je, "dimension_cap", kDefaultDimensionCap);
            c.mutual_information = detail::get_or<bool>(je, "mutual_information", false);
        }
        if (j.contains("bms")) c.bms_temperature = detail::parse_temperature(j.at("bms").value("temperature", json()));
        if (j.contains("analytic")) {
            const auto env = detail::get_or<std::string>(j.at("analytic"), "envelope", "markov");
            if (env == "markov") c.analytic_envelope = Envelope::markov;
            else if (env == "redfield") c.analytic_envelope = Envelope::redfield;
            else throw ConfigError("analytic.envelope must be \"markov\" or \"redfield\"");
        }
        c.lamb_shift = detail::get_or<bool>(j, "lamb_shift", false);
        if (j.contains("output")) c.out_dir = detail::get_or<std::string>(j.at("output"), "dir", c.out_dir);

        c.system.validate();
        for (const auto& b : c.baths) validate(b.spec);

        bool stochastic = false;
        for (const auto& b : c.baths)
            if (b.spec.spectrum_kind == SpectrumKind::random_uniform || b.rates != "rmt") stochastic = true;
        for (const auto& s : c.solvers)
            if (s == "exact") stochastic = true;
        if (stochastic && !c.seed) throw ConfigError("a seed is required: the scenario contains random elements");
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("configuration: ") + e.what());
    }
}

inline ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open configuration file " + path);
    try {
        return parse_config(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("configuration: ") + e.what());
    }
}

// ---------------------------------------------------------------- presets

namespace detail {

inline json spin_bath(const std::vector<std::pair<double, int>>& windows, const std::string& spectrum, double lambda) {
    json w = json::array();
    for (const auto& [c, v] : windows) w.push_back({{"center", c}, {"width", 0.5}, {"volume", v}});
    return {{"windows", w},
            {"spectrum", spectrum},
            {"lambda", lambda},
            {"rates", "rmt"},
            {"couplings", json::array({{{"operator", "sigma_x"}, {"variance", 1.0}}})}};
}

inline json fig2_preset(int row, int col) {
    const int v0 = row == 1 ? 400 : 600, v1 = row == 1 ? 600 : 400;
    json j;
    j["name"] = "fig2-row" + std::to_string(row) + "-col" + std::to_string(col);
    j["seed"] = 1;
    j["system"] = {{"levels", {0.0, 1.0}}};
    j["baths"] = json::array({spin_bath({{0.0, v0}, {1.0, v1}}, col == 1 ? "regular" : "random", 3e-3)});
    j["initial"] = {{"level", 1}, {"window", 0}, {"half_filled", col == 3}};
    j["solvers"] = {"exact", "emme-markov", "emme-redfield", "bms"};
    j["time"] = {{"t0", 0.0}, {"t1", 100.0}, {"dt", 0.5}};
    j["exact"] = {{"ensemble", "typicality"}, {"members", 20}};
    return j;
}

inline json quench_preset() {
    json j;
    j["name"] = "quench";
    j["seed"] = 1;
    json protocol = json::array();
    for (int k = 0; k < 4; ++k) protocol.push_back({{"start", 120.0 * k}, {"levels", {0.0, k % 2 == 0 ? 1.0 : 2.0}}});
    j["system"] = {{"levels", {0.0, 1.0}}, {"protocol", protocol}};
    j["baths"] = json::array({spin_bath({{0.0, 100}, {1.0, 200}, {2.0, 400}}, "regular", 3e-3)});
    j["initial"] = {{"level", 1}, {"window", 0}};
    j["solvers"] = {"exact", "emme-markov", "emme-redfield", "bms"};
    j["time"] = {{"t0", 0.0}, {"t1", 480.0}, {"dt", 1.0}};
    j["exact"] = {{"ensemble", "basis"}, {"mutual_information", true}};
    return j;
}

inline json appf_preset(double lambda, const std::string& tag, double horizon) {
    json j;
    j["name"] = "appF-lambda-" + tag;
    j["seed"] = 1;
    j["system"] = {{"levels", {0.0, 1.0}}};
    j["baths"] = json::array({spin_bath({{0.0, 20}, {1.0, 40}}, "regular", lambda)});
    j["initial"] = {{"level", 1}, {"window", 0}};
    j["solvers"] = {"exact", "emme-markov", "emme-redfield"};
    j["time"] = {{"t0", 0.0}, {"t1", horizon}, {"dt", horizon / 400.0}};
    j["exact"] = {{"ensemble", "basis"}};
    return j;
}

}  // namespace detail

/// Divide every window volume by `factor` (at least one level kept) and raise lambda by
/// sqrt(factor) so the relaxation rate 2 gamma_bar is unchanged.
inline json scale_volumes(json j, double factor) {
    if (!(factor > 0.0)) throw ConfigError("volume scale factor must be positive");
    for (auto& b : j.at("baths")) {
        for (auto& w : b.at("windows")) {
            const double v = w.at("volume").get<double>() / factor;
            w["volume"] = std::max<long>(1, std::lround(v));
        }
        b["lambda"] = b.at("lambda").get<double>() * std::sqrt(factor);
    }
    return j;
}

inline std::map<std::string, json> presets() {
    std::map<std::string, json> out;
    for (int row = 1; row <= 2; ++row)
        for (int col = 1; col <= 3; ++col) {
            auto p = detail::fig2_preset(row, col);
            out[p["name"]] = p;
        }
    out["quench"] = detail::quench_preset();
    out["appF-lambda-5e-4"] = detail::appf_preset(5e-4, "5e-4", 20000.0);
    out["appF-lambda-3e-3"] = detail::appf_preset(3e-3, "3e-3", 200.0);
    out["appF-lambda-1e-2"] = detail::appf_preset(1e-2, "1e-2", 100.0);
    std::vector<std::string> ci{"quench"};
    for (const auto& [name, p] : out)
        if (name.rfind("fig2", 0) == 0) ci.push_back(name);
    for (const auto& name : ci) {
        auto p = scale_volumes(out[name], 4.0);
        p["name"] = name + "-ci";
        out[name + "-ci"] = p;
    }
    return out;
}

inline json preset(const std::string& name) {
    const auto all = presets();
    auto it = all.find(name);
    if (it == all.end()) throw ConfigError("unknown preset '" + name + "'");
    return it->second;
}

// ---------------------------------------------------------------- running

/// Uniform grid on [t0, t1] with protocol boundaries inserted (or snapped onto nearby points).
inline std::vector<double> build_time_grid(const ScenarioConfig& c) {
    const auto n = static_cast<std::size_t>(std::floor((c.t1 - c.t0) / c.dt + 1e-9));
    std::vector<double> g;
    for (std::size_t i = 0; i <= n; ++i) g.push_back(c.t0 + static_cast<double>(i) * c.dt);
    for (const auto& seg : c.system.protocol) {
        if (!(seg.start > c.t0) || seg.start > c.t1) continue;
        auto it = std::lower_bound(g.begin(), g.end(), seg.start);
        if (it != g.end() && std::abs(*it - seg.start) <= 1e-9 * c.dt) *it = seg.start;
        else if (it != g.begin() && std::abs(*(it - 1) - seg.start) <= 1e-9 * c.dt) *(it - 1) = seg.start;
        else g.insert(it, seg.start);
    }
    return g;
}

struct RegimeReport {
    std::vector<std::string> warnings;
    bool flagged() const { return !warnings.empty(); }
};

/// Validity checks of the weak-coupling, large-bath description.
inline RegimeReport regime_report(const std::vector<RateTable>& tables, const SystemSpec& system) {
    RegimeReport r;
    for (std::size_t nu = 0; nu < tables.size(); ++nu) {
        const auto& t = tables[nu];
        const auto& l = t.layout();
        const std::string tag = "bath " + std::to_string(nu) + ": ";
        const double vmin = *std::min_element(l.volumes.begin(), l.volumes.end());
        if (vmin < 100.0)
            r.warnings.push_back(tag + "smallest window volume " + std::to_string(static_cast<long>(vmin)) +
                                 " < 100, finite-size recurrences expected");
        std::set<double> gaps;
        std::vector<RealVector> all{system.levels};
        for (const auto& seg : system.protocol) all.push_back(seg.levels);
        for (const auto& lv : all)
            for (Eigen::Index a = 0; a < lv.size(); ++a)
                for (Eigen::Index b = 0; b < lv.size(); ++b)
                    if (lv(b) > lv(a)) gaps.insert(lv(b) - lv(a));
        for (double gap : gaps)
            for (std::size_t w = 0; w < l.size(); ++w) {
                const auto up = l.resolve(l.centers[w] + gap);
                if (!up || !t.has(*up, w)) continue;
                const double g = t.at(*up, w).trace().real();
                if (g <= 0.0) continue;
                const double two_gbar = g * (1.0 / l.volumes[w] + 1.0 / l.volumes[*up]);
                const double spacing = l.delta / std::max(l.volumes[w], l.volumes[*up]);
                const std::string pair = "windows (" + std::to_string(w) + ", " + std::to_string(*up) + ")";
                if (two_gbar < 10.0 * spacing)
                    r.warnings.push_back(tag + pair + ": relaxation rate " + std::to_string(two_gbar) +
                                         " below 10 level spacings, discreteness of the bath resolved");
                if (two_gbar > 0.5 * l.delta)
                    r.warnings.push_back(tag + pair + ": relaxation rate " + std::to_string(two_gbar) +
                                         " above delta/2, weak-coupling description breaks down");
            }
    }
    return r;
}

struct SolverOutput {
    Trajectory trajectory;
    std::optional<ThermoLedger> ledger;
    std::vector<double> mutual_information;
    json diagnostics = json::object();
};

struct ScenarioResult {
    ScenarioConfig config;
    std::vector<double> t_grid;
    std::map<std::string, SolverOutput> outputs;
    RegimeReport regime;
    json metadata = json::object();
    std::map<std::string, double> seconds;  // wall time, kept out of the written files
};

namespace detail {

inline std::vector<Populations> emme_derivatives(const EmmeModel& model, const Trajectory& traj,
                                                 const GeneratorOptions& opt) {
    std::vector<Populations> out;
    if (traj.samples.empty()) return out;
    std::vector<BlockKey> keys;
    for (const auto& [k, m] : traj.samples.front().blocks) keys.push_back(k);
    std::map<std::vector<double>, std::shared_ptr<EmmeGenerator>> cache;
    std::vector<Matrix> rho(keys.size()), drho;
    for (const auto& s : traj.samples) {
        const RealVector& lv = model.system.levels_at(s.t);
        std::vector<double> lk(lv.data(), lv.data() + lv.size());
        auto it = cache.find(lk);
        if (it == cache.end())
            it = cache.emplace(lk, std::make_shared<EmmeGenerator>(make_generator(model, lv, keys, opt))).first;
        for (std::size_t i = 0; i < keys.size(); ++i) rho[i] = s.blocks.at(keys[i]);
        it->second->apply(rho, drho, s.t);
        Populations dp;
        for (std::size_t i = 0; i < keys.size(); ++i) dp[keys[i]] = drho[i].diagonal().real();
        out.push_back(std::move(dp));
    }
    return out;
}

/// Window reached from `w` by the largest system gap, upward if possible.
inline std::size_t reference_partner(const WindowLayout& l, std::size_t w, const RealVector& levels) {
    const double gap = levels.maxCoeff() - levels.minCoeff();
    if (auto up = l.resolve(l.centers[w] + gap)) return *up;
    if (auto down = l.resolve(l.centers[w] - gap)) return *down;
    throw ConfigError("no resonant partner window for the reference rate");
}

}  // namespace detail

inline ScenarioResult run_scenario(const ScenarioConfig& c) {
    using clock = std::chrono::steady_clock;
    ScenarioResult res;
    res.config = c;
    res.t_grid = build_time_grid(c);
    const std::uint64_t seed = c.seed.value_or(0);
    const std::size_t nb = c.baths.size();

    // bath realizations are only needed for the exact benchmark and sampled rate tables
    bool need_realization = std::find(c.solvers.begin(), c.solvers.end(), "exact") != c.solvers.end();
    for (const auto& b : c.baths)
        if (b.rates != "rmt") need_realization = true;

    std::vector<BathSpectrum> spectra;
    std::vector<std::shared_ptr<const BathRealization>> realizations(nb);
    std::vector<RateTable> tables;
    std::vector<std::optional<LambCoefficient>> lambs(nb);
    for (std::size_t nu = 0; nu < nb; ++nu) {
        BathSpec spec = c.baths[nu].spec;
        spec.seed = detail::derive_seed(seed, 2 * nu);
        spectra.push_back(build_spectrum(spec));
        if (need_realization) {
            auto couplings = c.baths[nu].couplings;
            for (std::size_t a = 0; a < couplings.size(); ++a)
                couplings[a].seed = detail::derive_seed(seed, 1000 + 100 * nu + a);
            realizations[nu] = std::make_shared<BathRealization>(sample_coupling(couplings, spectra[nu]));
        }
        const auto layout = WindowLayout::from(spectra[nu]);
        const auto& method = c.baths[nu].rates;
        if (method == "rmt") {
            tables.push_back(rate_table_rmt(c.baths[nu].couplings, layout));
            lambs[nu] = rmt_lamb_coefficients(c.baths[nu].couplings, layout);
        } else if (method == "heuristic") {
            tables.push_back(rate_table_heuristic(*realizations[nu]));
            lambs[nu] = quadrature_lamb_coefficients(realizations[nu]);
        } else {
            tables.push_back(rate_table_quadrature(*realizations[nu]));
            lambs[nu] = quadrature_lamb_coefficients(realizations[nu]);
        }
    }
    res.regime = regime_report(tables, c.system);

    EmmeModel model;
    model.system = c.system;
    for (std::size_t nu = 0; nu < nb; ++nu) model.baths.push_back({tables[nu], lambs[nu], {}});
    const Eigen::Index d = c.system.dimension();
    const ConditionedState initial = product_state(d, c.initial_level, c.initial_window);

    for (const auto& solver : c.solvers) {
        const auto start = clock::now();
        SolverOutput out;
        if (solver == "emme-markov" || solver == "emme-redfield") {
            EvolveOptions opt;
            opt.generator.envelope = solver == "emme-markov" ? Envelope::markov : Envelope::redfield;
            opt.generator.lamb_shift = c.lamb_shift;
            out.trajectory = evolve(model, initial, res.t_grid, opt);
            const auto dp = detail::emme_derivatives(model, out.trajectory, opt.generator);
            out.ledger = thermo_ledger(out.trajectory, c.system, &dp);
            out.diagnostics["abs_tol"] = opt.abs_tol;
            out.diagnostics["rel_tol"] = opt.rel_tol;
        } else if (solver == "analytic") {
            if (nb != 1 || !c.system.protocol.empty())
                throw ConfigError("the analytic oracle covers a single bath with static levels");
            out.trajectory = analytic_spin_trajectory(c.system.levels, tables[0], initial.populations(), res.t_grid,
                                                      c.analytic_envelope);
            out.ledger = thermo_ledger(out.trajectory, c.system);
        } else if (solver == "exact") {
            if (nb != 1) throw ConfigError("the exact benchmark supports a single bath");
            InitialStateOptions io;
            io.kind = c.ensemble;
            io.half_filled = c.half_filled;
            io.members = c.members;
            io.seed = detail::derive_seed(seed, 7);
            Vector psi = Vector::Zero(d);
            psi(c.initial_level) = 1.0;
            const auto ensemble = prepare_initial(spectra[0], static_cast<std::size_t>(c.initial_window[0]), psi, io);
            ExactRunOptions ro;
            ro.mutual_information = c.mutual_information;
            ro.dimension_cap = c.dimension_cap;
            auto r = run_exact(c.system, *realizations[0], ensemble, res.t_grid, ro);
            out.trajectory = std::move(r.trajectory);
            out.mutual_information = std::move(r.mutual_information);
            out.ledger = thermo_ledger(out.trajectory, c.system);
            out.diagnostics["ensemble"] = c.ensemble == EnsembleKind::basis ? "basis" : "typicality";
            out.diagnostics["members"] = ensemble.size();
            out.diagnostics["max_norm_drift"] = r.max_norm_drift;
            out.diagnostics["max_energy_drift"] = r.max_energy_drift;
            if (c.ensemble == EnsembleKind::typicality)
                out.diagnostics["typicality_error"] =
                    1.0 / std::sqrt(static_cast<double>(ensemble.size()) *
                                    static_cast<double>(spectra[0].volume(static_cast<std::size_t>(c.initial_window[0]))));
            if (!out.mutual_information.empty()) {
                double worst = std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < out.mutual_information.size(); ++i)
                    worst = std::min(worst, out.mutual_information[i] - out.ledger->records[i].i_cg);
                out.diagnostics["min_I_minus_Icg"] = worst;
            }
        } else if (solver == "bms") {
            std::vector<BmsRates> rates;
            for (std::size_t nu = 0; nu < nb; ++nu) {
                const auto& l = tables[nu].layout();
                const auto w0 = static_cast<std::size_t>(c.initial_window[nu]);
                const auto partner = detail::reference_partner(l, w0, c.system.levels);
                Temperature t = Temperature::infinite();
                if (c.bms_temperature) {
                    t = *c.bms_temperature;
                } else {
                    RealVector pb = RealVector::Zero(static_cast<Eigen::Index>(l.size()));
                    pb(static_cast<Eigen::Index>(w0)) = 1.0;
                    t = choose_reference_temperature(pb, l.centers, l.volumes);
                }
                rates.push_back({t, bms_reference_rate(tables[nu], std::min(w0, partner), std::max(w0, partner))});
                out.diagnostics["T_can"].push_back(t.label());
                out.diagnostics["gamma0"].push_back(rates.back().gamma0);
            }
            Matrix rho0 = Matrix::Zero(d, d);
            rho0(c.initial_level, c.initial_level) = 1.0;
            out.trajectory = evolve_bms(c.system, rates, rho0, res.t_grid);
        }
        res.seconds[solver] = std::chrono::duration<double>(clock::now() - start).count();
        if (out.ledger) {
            out.diagnostics["max_first_law_residual"] = out.ledger->max_first_law_residual;
            out.diagnostics["max_work_residual"] = out.ledger->max_work_residual;
            out.diagnostics["zero_temperature_start"] = out.ledger->zero_temperature_start;
            out.diagnostics["interpolated_quench"] = out.ledger->interpolated_quench;
        }
        res.outputs[solver] = std::move(out);
    }

    json& m = res.metadata;
    m["name"] = c.name;
    m["version"] = EMME_VERSION;
    m["seed"] = c.seed ? json(*c.seed) : json();
    m["config"] = c.source;
    m["time_grid"] = {{"t0", res.t_grid.front()}, {"t1", res.t_grid.back()}, {"points", res.t_grid.size()}};
    m["regime_warning"] = res.regime.flagged();
    m["regime_warnings"] = res.regime.warnings;
    m["rate_method"] = json::array();
    for (const auto& t : tables) m["rate_method"].push_back(to_string(t.method()));
    for (const auto& [name, o] : res.outputs) m["solvers"][name] = o.diagnostics;
    bool zero_start = false;
    for (const auto& [name, o] : res.outputs)
        if (o.ledger && o.ledger->zero_temperature_start) zero_start = true;
    if (zero_start)
        m["clausius_caveat"] =
            "the bath starts at zero effective temperature, outside the thermal-bath assumption of the Clausius chain";
    return res;
}

// ---------------------------------------------------------------- output

namespace detail {

inline std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string center_label(double c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", c);
    return buf;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline Table solver_table(const SolverOutput& o) {
    Table t;
    const auto& traj = o.trajectory;
    t.header.push_back("t");
    std::vector<std::pair<BlockKey, Eigen::Index>> cols;
    if (traj.samples.empty()) return t;
    for (const auto& [key, v] : traj.samples.front().populations)
        for (Eigen::Index k = 0; k < v.size(); ++k) cols.push_back({key, k});
    std::sort(cols.begin(), cols.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    for (const auto& [key, k] : cols) {
        std::string name = "p_k" + std::to_string(k);
        if (!key.empty()) {
            name += "_E";
            for (std::size_t nu = 0; nu < key.size(); ++nu) {
                if (nu) name += "_";
                name += center_label(traj.bath_energy(key, nu));
            }
        }
        t.header.push_back(name);
    }
    const std::size_t nb = traj.bath_count();
    auto suffix = [nb](const std::string& base, std::size_t nu) {
        return nb == 1 ? base : base + "_" + std::to_string(nu);
    };
    if (o.ledger) {
        for (const char* h : {"U", "U_S"}) t.header.push_back(h);
        for (std::size_t nu = 0; nu < nb; ++nu) t.header.push_back(suffix("U_B", nu));
        t.header.push_back("W");
        for (std::size_t nu = 0; nu < nb; ++nu) t.header.push_back(suffix("Q", nu));
        for (const char* h : {"S_obs", "S_obs_S", "S_obs_B", "I_cg"}) t.header.push_back(h);
        for (std::size_t nu = 0; nu < nb; ++nu) t.header.push_back(suffix("T_eff", nu));
        for (const char* h : {"sigma_dot", "clausius_lhs1", "clausius_lhs2", "dS_obs", "clausius_lhs1_trapezoid",
                              "first_law_residual"})
            t.header.push_back(h);
    }
    if (!o.mutual_information.empty()) t.header.push_back("I");

    for (std::size_t i = 0; i < traj.samples.size(); ++i) {
        const auto& s = traj.samples[i];
        std::vector<std::string> row{num(s.t)};
        for (const auto& [key, k] : cols) row.push_back(num(population(s.populations, k, key)));
        if (o.ledger) {
            const auto& r = o.ledger->records[i];
            row.push_back(num(r.u));
            row.push_back(num(r.u_sys));
            for (double u : r.u_bath) row.push_back(num(u));
            row.push_back(num(r.work));
            for (double q : r.heat) row.push_back(num(q));
            for (double x : {r.s_obs, r.s_sys, r.s_bath, r.i_cg}) row.push_back(num(x));
            for (const auto& te : r.t_eff) row.push_back(te.is_finite() ? num(te.value()) : te.label());
            for (double x : {r.entropy_production, r.lhs1, r.lhs2, r.delta_s_obs, r.lhs1_trapezoid, r.first_law_residual})
                row.push_back(num(x));
        }
        if (!o.mutual_information.empty()) row.push_back(num(o.mutual_information[i]));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline void write_table(const Table& t, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path.string());
    for (std::size_t i = 0; i < t.header.size(); ++i) f << (i ? "," : "") << t.header[i];
    f << "\n";
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) f << (i ? "," : "") << r[i];
        f << "\n";
    }
}

}  // namespace detail

/// One CSV per solver, a joined CSV keyed by t, and metadata.json.
inline void write_outputs(const ScenarioResult& res, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    detail::Table joined;
    joined.header.push_back("t");
    for (double t : res.t_grid) joined.rows.push_back({detail::num(t)});
    for (const auto& solver : res.config.solvers) {
        const auto& o = res.outputs.at(solver);
        const auto table = detail::solver_table(o);
        detail::write_table(table, dir / (solver + ".csv"));
        if (table.rows.size() != joined.rows.size()) throw NumericalError("solver " + solver + " is off the shared grid");
        for (std::size_t c = 1; c < table.header.size(); ++c) {
            joined.header.push_back(solver + ":" + table.header[c]);
            for (std::size_t i = 0; i < table.rows.size(); ++i) joined.rows[i].push_back(table.rows[i][c]);
        }
    }
    detail::write_table(joined, dir / "joined.csv");
    std::ofstream meta(dir / "metadata.json");
    meta << res.metadata.dump(2) << "\n";
}

}  // namespace emme
