#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "skjump/skjump.hpp"

namespace {

skjump::ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw skjump::config_error("cannot open config file '" + path + "'");
    skjump::ExperimentConfig cfg = skjump::parse_config(is);
    skjump::validate_config(cfg);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"skjump: coupled simulation of a jump diffusion and its small-mass limit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, threads_arg;
    std::uint64_t seed_override = 0;

    auto* run = app.add_subcommand("run", "run an experiment and write CSV results");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    auto* seed_opt = run->add_option("--seed", seed_override, "override the config seed");
    auto* threads_opt =
        run->add_option("--threads", threads_arg, "worker threads (number or 'auto')");

    auto* validate = app.add_subcommand("validate", "check a config and print its hash");
    validate->add_option("--config", config_path, "experiment config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        skjump::ExperimentConfig cfg = load_config(config_path);

        if (validate->parsed()) {
            std::cout << skjump::canonical_config(cfg);
            std::cout << "config_hash=" << skjump::config_hash(cfg) << "\n";
            if (cfg.experiment == skjump::ExperimentKind::kolmogorov_rate) {
                skjump::NoiseFloorPlan plan = skjump::plan_noise_floor(cfg.epsilons, cfg.n_paths);
                if (!plan.ok) {
                    std::cerr << "noise floor violated: need n_paths >= "
                              << plan.required_n_paths << "\n";
                    return 3;
                }
                std::cout << "noise_floor=ok\n";
            }
            return 0;
        }

        if (*seed_opt) cfg.seed = seed_override;
        if (*threads_opt) {
            if (threads_arg == "auto") cfg.threads.reset();
            else cfg.threads = static_cast<unsigned>(std::stoul(threads_arg));
        }

        skjump::ResultBundle bundle = skjump::run_experiment(cfg, out_dir);
        for (const auto& f : bundle.files) std::cout << f << "\n";
        std::cout << "manifest=" << bundle.manifest_path << "\n";
        if (bundle.total_aborts > 0) {
            std::cerr << bundle.total_aborts << " path(s) aborted on non-finite values\n";
            return 4;
        }
        return 0;
    } catch (const skjump::noise_floor_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const skjump::config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
