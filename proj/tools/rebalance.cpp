// rebalance: diagnose, adjust and report survey weights from CSV files.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rebalance/rebalance.hpp"

namespace {

using rebalance::RunConfig;

void add_common(CLI::App* cmd, RunConfig& cfg, std::string& weight_col) {
    cmd->add_option("--sample", cfg.sample_path, "Sample CSV")->required();
    cmd->add_option("--target", cfg.target_path, "Target population CSV")->required();
    cmd->add_option("--id", cfg.id_col, "Id column")->capture_default_str();
    cmd->add_option("--design-weight", weight_col, "Design weight column present in the inputs");
    cmd->add_option("--outcomes", cfg.outcome_cols, "Outcome columns")->delimiter(',');
    cmd->add_option("--alpha", cfg.alpha, "CI level")->capture_default_str();
    cmd->add_flag("--plots", cfg.plots, "Include plot data in the report");
    cmd->add_option("--config", cfg.config_path, "JSON config with transforms and penalty factors");
    cmd->add_option("--out", cfg.out_dir, "Output directory")->required();
}

void add_method(CLI::App* cmd, RunConfig& cfg, std::string& method) {
    cmd->add_option("--method", method, "ipw | cbps | rake | poststratify")
        ->check(CLI::IsMember({"ipw", "cbps", "rake", "poststratify"}))
        ->capture_default_str();
    cmd->add_option("--formula", cfg.formula, "Model formula, e.g. 'gender + age_group*income'");
    cmd->add_option("--max-de", cfg.max_de, "Upper bound on the design effect (ipw)");
    cmd->add_option("--margins", cfg.margins, "Raking variables, in raking order")->delimiter(',');
    cmd->add_option("--strata", cfg.strata, "Post-stratification variables")->delimiter(',');
    cmd->add_option("--trim-cap", cfg.trim_cap, "Trim weights above this multiple of the mean")->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "Seed for cross-validation folds")->capture_default_str();
    cmd->add_option("--folds", cfg.folds, "Cross-validation folds")->capture_default_str();
}

int fail(const rebalance::CommandError& e) {
    std::cerr << e.structured() << "\n";
    return e.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Survey weighting: diagnose bias, fit weights, report on them"};
    app.require_subcommand(1);
    app.set_version_flag("--version", rebalance::kToolVersion);

    RunConfig cfg;
    std::string method = "ipw";
    std::string weight_col;

    auto* diagnose = app.add_subcommand("diagnose", "Balance of the unadjusted sample against the target");
    add_common(diagnose, cfg, weight_col);

    auto* adjust = app.add_subcommand("adjust", "Fit weights and write weights.csv and report.json");
    add_common(adjust, cfg, weight_col);
    add_method(adjust, cfg, method);

    auto* report = app.add_subcommand("report", "Evaluate an existing weights file");
    add_common(report, cfg, weight_col);
    report->add_option("--weights", cfg.weights_path, "Weights CSV with columns id,weight")->required();

    rebalance::SimulationConfig sim;
    std::string sim_out;
    auto* simulate = app.add_subcommand("simulate", "Write the simulated sample.csv and target.csv");
    simulate->add_option("--seed", sim.seed, "Generator seed")->capture_default_str();
    simulate->add_option("--sample-n", sim.sample_n, "Sample size")->capture_default_str();
    simulate->add_option("--target-n", sim.target_n, "Target size")->capture_default_str();
    simulate->add_option("--out", sim_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (!weight_col.empty()) cfg.weight_col = weight_col;
        if (simulate->parsed()) {
            auto tables = rebalance::simulate_survey(sim);
            std::filesystem::create_directories(sim_out);
            std::ofstream(std::filesystem::path(sim_out) / "sample.csv", std::ios::binary)
                << rebalance::write_csv(tables.sample);
            std::ofstream(std::filesystem::path(sim_out) / "target.csv", std::ios::binary)
                << rebalance::write_csv(tables.target);
            return 0;
        }
        try {
            cfg.method = rebalance::parse_method(method);
            rebalance::apply_config_file(cfg);
        } catch (const rebalance::Error& e) {
            throw rebalance::CommandError(e, rebalance::kExitInput);
        }
        if (diagnose->parsed()) {
            auto doc = rebalance::cmd_diagnose(cfg);
            rebalance::write_outputs(cfg, doc);
        } else if (adjust->parsed()) {
            auto out = rebalance::cmd_adjust(cfg);
            rebalance::write_outputs(cfg, out.report, &out);
            const auto& s = out.report["summary"];
            std::printf("Covar ASMD reduction: %.1f%%, mean ASMD %.3f -> %.3f", s["asmd_reduction_pct"].get<double>(),
                        s["mean_asmd_before"].get<double>(), s["mean_asmd_after"].get<double>());
            if (!s["deviance_explained"].is_null())
                std::printf(", deviance explained %.3f", s["deviance_explained"].get<double>());
            std::printf("\n");
        } else if (report->parsed()) {
            auto doc = rebalance::cmd_report(cfg);
            rebalance::write_outputs(cfg, doc);
        }
    } catch (const rebalance::CommandError& e) {
        return fail(e);
    } catch (const rebalance::Error& e) {
        return fail(rebalance::CommandError(e, 1));
    } catch (const std::exception& e) {
        std::cerr << "{\"error\":\"Internal\",\"message\":" << nlohmann::json(e.what()).dump() << "}\n";
        return 1;
    }
    return 0;
}
