// metapatch: analyze, census, continue, simulate.
// Exit codes: 0 success, 2 configuration error, 3 numerical failure (partial artifacts written).

#include "metapatch/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace metapatch;

namespace {

struct Args {
    std::string config;
    std::string out = ".";
    std::string preset;
    std::vector<double> alpha;
    bool exhaustive = false;
};

// write to a temporary name and rename, so readers never see a partial file
void write_atomically(const fs::path& file, const std::string& contents)
{
    const fs::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        out << contents;
    }
    fs::rename(tmp, file);
}

int run(const std::string& command, const Args& args)
{
    try {
        auto cfg = load_config(args.config);
        if (!args.preset.empty()) {
            cfg.network_preset = args.preset;
            cfg.network_name = args.preset;
            cfg.edges.clear();
        }
        if (!args.alpha.empty()) {
            for (double a : args.alpha) {
                if (!(a >= 0.0)) {
                    throw ConfigError("--alpha: values must be nonnegative");
                }
            }
            cfg.alpha_grid = args.alpha;
        }
        CommandResult result;
        if (command == "analyze") {
            result = cmd_analyze(cfg);
        }
        else if (command == "census") {
            result = cmd_census(cfg, args.exhaustive);
        }
        else if (command == "continue") {
            result = cmd_continue(cfg);
        }
        else {
            result = cmd_simulate(cfg);
        }
        fs::create_directories(args.out);
        for (const auto& [name, contents] : result.artifacts) {
            write_atomically(fs::path(args.out) / name, contents);
        }
        const std::string report = dump_report(result.report);
        write_atomically(fs::path(args.out) / (command + "_report.json"), report);
        std::cout << report;
        if (result.numerical_failure) {
            std::cerr << "metapatch: numerical failure in some items, see the report\n";
            return 3;
        }
        return 0;
    }
    catch (const ConfigError& e) {
        std::cerr << "metapatch: " << e.what() << "\n";
        return 2;
    }
    catch (const NumericalError& e) {
        std::cerr << "metapatch: numerical failure: " << e.what() << "\n";
        return 3;
    }
    catch (const DomainError& e) {
        std::cerr << "metapatch: " << e.what() << "\n";
        return 2;
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Equilibria, persistence and dynamics of multi-region epidemic models"};
    app.require_subcommand(1);
    Args args;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"analyze", "Reproduction numbers, equilibria and stability of each patch"},
        {"census", "Persistence verdict of every equilibrium pattern"},
        {"continue", "Continue equilibrium patterns along the travel parameter"},
        {"simulate", "Integrate the initial sets and classify where they end"}};
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", args.config, "Experiment JSON")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", args.out, "Output directory")->capture_default_str();
        sub->add_option("--preset", args.preset, "Override the network with a named preset");
        sub->add_option("--alpha", args.alpha, "Override the alpha grid (comma separated)")->delimiter(',');
        sub->add_flag("--exhaustive-networks", args.exhaustive, "census: scan all three-region digraphs");
    }
    try {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    for (const auto& [name, help] : commands) {
        if (app.got_subcommand(name)) {
            return run(name, args);
        }
    }
    return 2;
}
