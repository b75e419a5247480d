#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "cdm/errors.hpp"
#include "cdm/metrics.hpp"
#include "cdm/pipeline.hpp"

namespace {

struct CliState {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string action;
    bool no_inversion = false;
};

cdm::Pipeline make_pipeline(const CliState& cli) {
    cdm::Config cfg = cdm::Config::parse_file(cli.config_path);
    for (const auto& o : cli.overrides) cfg.set_override(o);
    return cdm::Pipeline(std::move(cfg));
}

void print_ablation(const cdm::MetricReport& without, const cdm::MetricReport& with) {
    std::cout << "--- without inversion ---\n" << cdm::report_text(without);
    std::cout << "--- with inversion ---\n" << cdm::report_text(with);
    std::cout << "--- deltas (with - without) ---\n";
    std::cout << "  frechet:   " << without.aggregate.frechet << " -> " << with.aggregate.frechet
              << " (" << with.aggregate.frechet - without.aggregate.frechet << ")\n";
    std::cout << "  diversity: " << without.aggregate.diversity << " -> "
              << with.aggregate.diversity << " ("
              << with.aggregate.diversity - without.aggregate.diversity << ")\n";
}

int dispatch(const CliState& cli) {
    cdm::Pipeline pipe = make_pipeline(cli);
    const std::string& a = cli.action;
    if (a == "synth-data") {
        std::cout << pipe.cmd_synth_data() << "\n";
    } else if (a == "train-extractor") {
        std::cout << pipe.cmd_train_extractor() << "\n";
    } else if (a == "train-ae") {
        std::cout << pipe.cmd_train_ae() << "\n";
    } else if (a == "stats") {
        std::cout << pipe.cmd_stats() << "\n";
    } else if (a == "train-ldm") {
        std::cout << pipe.cmd_train_ldm() << "\n";
    } else if (a == "calibrate") {
        std::cout << pipe.cmd_calibrate() << "\n";
    } else if (a == "invert") {
        std::cout << pipe.cmd_invert() << "\n";
    } else if (a == "generate") {
        std::cout << pipe.cmd_generate(!cli.no_inversion) << "\n";
    } else if (a == "evaluate") {
        std::cout << cdm::report_text(pipe.cmd_evaluate(!cli.no_inversion));
    } else if (a == "run-experiment") {
        std::cout << cdm::report_text(pipe.cmd_run_experiment());
    } else if (a == "ablate-inversion") {
        auto [without, with] = pipe.cmd_ablate_inversion();
        print_ablation(without, with);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cdm-forge: few-shot conditional distribution modelling pipeline"};
    app.require_subcommand(1);

    CliState cli;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth-data", "Generate the synthetic dataset"},
        {"train-extractor", "Train the feature extractor on seen classes"},
        {"train-ae", "Train (or materialize) the latent autoencoder"},
        {"stats", "Fit per-seen-class feature statistics"},
        {"train-ldm", "Train the conditional denoiser"},
        {"calibrate", "Calibrate unseen-class distributions from K supports"},
        {"invert", "Refine unseen-class distributions through the frozen denoiser"},
        {"generate", "Sample data for each unseen class"},
        {"evaluate", "Score generated samples against held-out queries"},
        {"run-experiment", "Run every stage end-to-end and report metrics"},
        {"ablate-inversion", "Compare generation with and without inversion"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", cli.config_path, "Run configuration file")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--set", cli.overrides, "Override a config entry (key=value)");
        if (name == "generate" || name == "evaluate") {
            sub->add_flag("--no-inversion", cli.no_inversion,
                          "Use calibrated (un-inverted) distributions");
        }
        sub->callback([&cli, name = name] { cli.action = name; });
    }

    CLI11_PARSE(app, argc, argv);

    try {
        return dispatch(cli);
    } catch (const cdm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const cdm::DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << "\n";
        return 3;
    } catch (const cdm::NonFiniteError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const cdm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
