#include <CLI11.hpp>
#include <exception>
#include <iostream>

#include "driftforge/cli.hpp"

using namespace driftforge;

int main(int argc, char** argv) {
    CLI::App app{"driftforge: drift-aware continuous learning for binary classification"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    cli::CliOptions opts;
    std::uint64_t seed_flag = 0;
    bool out_given = false, seed_given = false;

    auto add_common = [&](CLI::App* sub, bool with_jobs) {
        sub->add_option("--config", opts.config_path, "JSON config (or a manifest.json)")
            ->required();
        sub->add_option("--out", opts.out_dir, "output directory")
            ->each([&](const std::string&) { out_given = true; });
        sub->add_option("--seed", seed_flag, "seed override")
            ->each([&](const std::string&) { seed_given = true; });
        if (with_jobs) sub->add_option("--jobs", opts.jobs, "parallel tuning candidates");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic drift stream");
    add_common(synth, false);
    CLI::App* run = app.add_subcommand("run", "run one active-learning experiment");
    add_common(run, false);
    CLI::App* tune = app.add_subcommand("tune", "two-round hyperparameter tuning");
    add_common(tune, true);
    CLI::App* exp = app.add_subcommand("export-embeddings", "dump encoder embeddings as CSV");
    add_common(exp, false);
    CLI::App* report = app.add_subcommand("report", "render a summary.json as text");
    report->add_option("--config", opts.config_path, "summary.json path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (seed_given) opts.seed_override = seed_flag;
        cli::apply_env_overrides(opts, seed_given, out_given);
        if (synth->parsed()) return cli::cmd_synth(opts);
        if (run->parsed()) return cli::cmd_run(opts);
        if (tune->parsed()) return cli::cmd_tune(opts);
        if (exp->parsed()) return cli::cmd_export_embeddings(opts);
        if (report->parsed()) return cli::cmd_report(opts);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}
