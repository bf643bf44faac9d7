#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "valbound/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Double-sided value bounds, clipping and composition experiments"};
    app.require_subcommand(1);

    std::string config;
    std::string output;
    std::vector<std::uint64_t> seeds;

    for (const char* name : {"solve", "bounds", "clip", "compose-check", "dqn", "compare"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--output", output, "output directory (overrides output_dir)");
        sub->add_option("--seeds", seeds, "comma-separated seeds (overrides seeds)")->delimiter(',');
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string task = app.get_subcommands().front()->get_name();
    std::optional<std::filesystem::path> out_dir;
    if (!output.empty()) out_dir = output;
    std::optional<std::vector<std::uint64_t>> seed_list;
    if (!seeds.empty()) seed_list = seeds;
    return valbound::run(config, task, out_dir, seed_list, std::cout, std::cerr);
}
