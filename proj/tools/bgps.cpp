#include "bgps/cli.hpp"
#include "bgps/error.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

void add_common(CLI::App & cmd, std::uint64_t & seed, int & parallelism, std::string & sidecar_url) {
    cmd.add_option("--seed", seed, "Seed for search and evaluation");
    cmd.add_option("--parallelism", parallelism, "Worker threads")->check(CLI::PositiveNumber);
    cmd.add_option("--sidecar-url", sidecar_url, "Sidecar base URL (overrides BGPS_SIDECAR_URL)");
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{"Bias-guided prompt search"};
    app.require_subcommand(1);

    bgps::cli::Overrides o;
    std::uint64_t seed = 0;
    int parallelism = 0;
    std::string sidecar_url;
    std::string out;
    std::string config;

    auto * search = app.add_subcommand("search", "Run num_prompts searches and write prompts.jsonl");
    search->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    search->add_option("--out", out, "Output directory (overrides output_dir)");
    add_common(*search, seed, parallelism, sidecar_url);

    std::string run_dir;
    auto * eval = app.add_subcommand("eval", "Generate, classify and score the prompts of a run");
    eval->add_option("run_dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    add_common(*eval, seed, parallelism, sidecar_url);

    std::string baseline;
    bgps::cli::AnalyzeOptions analyze_opts;
    auto * analyze = app.add_subcommand("analyze", "Word statistics and histograms of an evaluated run");
    analyze->add_option("run_dir", run_dir, "Evaluated run directory")->required()->check(CLI::ExistingDirectory);
    analyze->add_option("--baseline", baseline, "Baseline run directory")->check(CLI::ExistingDirectory);
    analyze->add_option("--top-n", analyze_opts.top_n, "Words in the word-cloud export");
    analyze->add_option("--min-frequency", analyze_opts.min_frequency, "Minimum word frequency for the word cloud");
    analyze->add_option("--bins", analyze_opts.bins, "Histogram bins")->check(CLI::PositiveNumber);

    std::vector<double> lambdas;
    auto * sweep = app.add_subcommand("sweep", "Search and evaluate once per lambda; write tradeoff.csv");
    sweep->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sweep->add_option("--lambda", lambdas, "Lambda values, comma separated or repeated")->delimiter(',');
    sweep->add_option("--out", out, "Output directory (overrides output_dir)");
    add_common(*sweep, seed, parallelism, sidecar_url);

    std::string fixture = "all";
    std::string freeze;
    auto * oracle = app.add_subcommand("oracle-check", "Compare exhaustive search with brute force on fixtures");
    oracle->add_option("fixture", fixture, "Fixture name, fixture file, or \"all\"");
    oracle->add_option("--freeze", freeze, "Record passing results as the expectation, tagged with this commit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    for (auto * cmd : {search, eval, sweep}) {
        if (cmd->parsed()) {
            if (cmd->count("--seed") > 0) {
                o.seed = seed;
            }
            if (cmd->count("--parallelism") > 0) {
                o.parallelism = parallelism;
            }
            if (cmd->count("--sidecar-url") > 0) {
                o.sidecar_url = sidecar_url;
            }
            if (cmd != eval && cmd->count("--out") > 0) {
                o.out = out;
            }
        }
    }

    try {
        if (search->parsed()) {
            const auto dir = bgps::cli::cmd_search(config, o);
            std::cout << "prompts written to " << (dir / "prompts.jsonl").string() << '\n';
        } else if (eval->parsed()) {
            const auto report = bgps::cli::cmd_eval(run_dir, o);
            std::cout << "evaluated " << report.per_prompt.size() << " prompts (" << report.failed_prompts
                      << " failed); report in " << run_dir << "/report.md\n";
        } else if (analyze->parsed()) {
            std::optional<std::filesystem::path> base;
            if (!baseline.empty()) {
                base = baseline;
            }
            const auto result = bgps::cli::cmd_analyze(run_dir, base, analyze_opts);
            std::cout << "analysis of " << result["stats"].size() << " words written to " << run_dir
                      << "/analysis.json\n";
        } else if (sweep->parsed()) {
            const auto rows = bgps::cli::cmd_sweep(config, lambdas, o);
            for (const auto & r : rows) {
                std::printf("lambda=%-8s target=%.4f +- %.4f  ppl=%.3f  p_target=%.4f\n",
                            bgps::cli::format_lambda(r.lambda).c_str(), r.target_proportion.mean,
                            r.target_proportion.halfwidth, r.perplexity.mean, r.mean_target_prob);
            }
        } else if (oracle->parsed()) {
            std::optional<std::string> commit;
            if (!freeze.empty()) {
                commit = freeze;
            }
            bool all_passed = true;
            for (const auto & c : bgps::cli::cmd_oracle_check(fixture, commit)) {
                std::printf("%s %s (%.3f s)\n", c.passed ? "PASS" : "FAIL", c.fixture.c_str(), c.seconds);
                for (const auto & d : c.diffs) {
                    std::printf("  %s\n", d.c_str());
                }
                all_passed = all_passed && c.passed;
            }
            return all_passed ? 0 : kExitRuntime;
        }
    } catch (const bgps::ConfigError & e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const bgps::UnknownFixture & e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
