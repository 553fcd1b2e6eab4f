// Command-line scenario runner.

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"

#include "emme/scenario.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int run(const emme::ScenarioConfig& config, const std::string& out_dir) {
    const auto result = emme::run_scenario(config);
    const std::string dir = out_dir.empty() ? config.out_dir : out_dir;
    emme::write_outputs(result, dir);
    for (const auto& [solver, secs] : result.seconds) std::cerr << solver << ": " << secs << " s\n";
    for (const auto& w : result.regime.warnings) std::cerr << "regime warning: " << w << "\n";
    std::cerr << "wrote " << dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Finite-bath open quantum system simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    auto* run_cmd = app.add_subcommand("run", "Run a scenario from a JSON configuration file");
    run_cmd->add_option("config", config_path, "Configuration file")->required();
    run_cmd->add_option("--out", out_dir, "Output directory");

    std::string preset_name, solvers;
    std::optional<std::uint64_t> seed;
    double scale = 1.0;
    auto* preset_cmd = app.add_subcommand("preset", "Run a named preset");
    preset_cmd->add_option("name", preset_name, "Preset name")->required();
    preset_cmd->add_option("--out", out_dir, "Output directory");
    preset_cmd->add_option("--seed", seed, "Random seed");
    preset_cmd->add_option("--solvers", solvers, "Comma-separated solver list");
    preset_cmd->add_option("--scale-volumes", scale, "Divide window volumes by this factor");

    app.add_subcommand("list-presets", "List preset names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (const char* env = std::getenv("EMME_THREADS")) {
        const int n = std::atoi(env);
        if (n < 1) {
            std::cerr << "error: EMME_THREADS must be a positive integer\n";
            return 2;
        }
        Eigen::setNbThreads(n);
    }

    try {
        if (app.got_subcommand("list-presets")) {
            for (const auto& [name, p] : emme::presets()) std::cout << name << "\n";
            return 0;
        }
        if (app.got_subcommand("run")) return run(emme::load_config(config_path), out_dir);

        auto j = emme::preset(preset_name);
        if (seed) j["seed"] = *seed;
        if (!solvers.empty()) j["solvers"] = split_list(solvers);
        if (scale != 1.0) j = emme::scale_volumes(j, scale);
        if (out_dir.empty()) out_dir = "out/" + preset_name;
        return run(emme::parse_config(j), out_dir);
    } catch (const emme::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const emme::DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return 4;
    } catch (const emme::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    }
}
