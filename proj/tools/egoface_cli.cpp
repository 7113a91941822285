#include "egoface/cli/commands.hpp"
#include "egoface/cli/config.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>

using namespace egoface;

int main(int argc, char** argv)
{
    CLI::App app{"egoface: egocentric face capture and reenactment pipeline"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    cli::CommandOptions options;
    app.add_option("--config", config_path, "JSON run configuration (defaults when omitted)");
    app.add_option("--seed", seed, "global seed, overrides the config");
    app.add_option("--out", out, "output directory, overrides paths.out");

    for (const auto& name : cli::command_names()) {
        CLI::App* sub = app.add_subcommand(name);
        if (name == "bench" || name == "demo") {
            sub->add_option("--components", options.components, "comma list of timing components");
        }
        if (name == "train-exp2vreal" || name == "reenact" || name == "eval-mse") {
            sub->add_option("--variant", options.variant, "full | optimized (| both for training and eval-mse)");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    std::exception_ptr error;
    try {
        cli::RunConfig cfg = config_path.empty() ? cli::config_from_json(nlohmann::json::object())
                                                 : cli::parse_config(config_path);
        if (seed) {
            cfg.seed = *seed;
        }
        if (!out.empty()) {
            cfg.out = out;
        }
        if (command == "demo" && !options.components.empty()) {
            cfg.eval.bench_components = options.components;
        }
        cli::run(command, cfg, options, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "egoface " << command << ": " << e.what() << "\n";
        error = std::current_exception();
    }
    return cli::exit_code(error);
}
