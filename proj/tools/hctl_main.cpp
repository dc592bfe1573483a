#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <string>

#include "hctl/harness.hpp"

namespace {

int run(const std::string& task, const std::string& config_path, const std::string& out_dir,
        std::uint64_t seed, bool seed_set, int threads) {
    hctl::ExperimentConfig cfg;
    try {
        if (!config_path.empty()) cfg = hctl::ExperimentConfig::from_file(config_path);
        cfg.task = task;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (seed_set) cfg.master_seed = seed;
        if (threads > 0) cfg.threads = threads;
        if (const char* env = std::getenv("HCTL_THREADS")) {
            const int n = std::atoi(env);
            if (n > 0) cfg.threads = n;
        }
    } catch (const hctl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    return hctl::run_task(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hctl: conditional sampling laboratory for flow-matching models"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    int threads = 0;

    int exit_code = 0;
    for (const std::string task : {"train", "toy-fig", "sweep", "gibbs-oracle", "locality", "ablate"}) {
        auto* sub = app.add_subcommand(task);
        sub->add_option("--config", config_path, "JSON experiment configuration");
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        auto* seed_opt = sub->add_option("--seed", seed, "master seed (overrides config)");
        sub->add_option("--threads", threads, "worker threads (overrides config)");
        sub->callback([&, task, seed_opt] {
            exit_code = run(task, config_path, out_dir, seed, seed_opt->count() > 0, threads);
        });
    }

    CLI11_PARSE(app, argc, argv);
    return exit_code;
}
