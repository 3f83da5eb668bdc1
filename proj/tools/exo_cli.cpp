// exo: command-line driver for the simulation and learning pipeline.

#include "exo/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kDependency = 3, kDivergence = 4 };

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    int jobs = 1;
};

int run(const std::string& command, const Options& opt) {
    exo::ExperimentConfig cfg = opt.config.empty() ? exo::ExperimentConfig{} : exo::load_config(opt.config);
    if (opt.seed) cfg.seed = *opt.seed;
    exo::fs::create_directories(opt.out);
    const exo::Pipeline p(cfg, opt.out, opt.jobs);
    if (command == "gen-data") p.gen_data();
    else if (command == "train-vae") p.train_vae();
    else if (command == "train-translator") p.train_translator();
    else if (command == "hil") p.hil();
    else if (command == "translate") p.translate();
    else if (command == "eval") p.eval();
    else if (command == "report") p.report(std::cout);
    else if (command == "show-config") std::cout << cfg.to_json().dump(2) << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Exoskeleton assistance simulation: data generation, detector and translator training, HIL optimization"};
    app.require_subcommand(1, 1);
    Options opt;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen-data", "simulate the subject population and the walking bouts"},
        {"train-vae", "train the anomaly detectors (one per modality)"},
        {"train-translator", "fit walking-to-task translators"},
        {"hil", "run the HIL weight optimization for the configured subjects"},
        {"translate", "map optimized walking weights to the other tasks"},
        {"eval", "AUC, LOOCV and HIL summary tables"},
        {"report", "summary table from the eval outputs"},
        {"show-config", "print the effective configuration"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", opt.seed, "master seed (overrides the config)");
        sub->add_option("--out", opt.out, "output directory")->capture_default_str();
        sub->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, opt);
    } catch (const exo::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const exo::DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << '\n';
        return kDependency;
    } catch (const exo::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return kDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}
