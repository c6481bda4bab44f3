#pragma once

#include "bgps/analysis.hpp"
#include "bgps/core.hpp"
#include "bgps/eval.hpp"
#include "bgps/scorers.hpp"
#include "bgps/search.hpp"
#include "bgps/sidecar_client.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bgps::cli {

namespace fs = std::filesystem;

struct BackendConfig {
    std::string kind = "synthetic";  // synthetic | sidecar
    std::string fixture;             // synthetic: fixture name or path to a fixture file
    std::string url;                 // sidecar: empty means $BGPS_SIDECAR_URL
    std::string bearer_token_env;    // sidecar: env var holding the bearer token
    sidecar::ClientOptions client;
    sidecar::GenerationParams generation;
    double no_face_rate = 0.0;       // synthetic labeler only
};

struct EvalLmConfig {
    std::string kind = "search";  // search | uniform | smoothed | fixture | sidecar | none
    double mix = 0.1;             // smoothed: weight of the uniform component
    std::string fixture;          // fixture: name or path
    std::string url;              // sidecar
};

struct EvalConfig {
    int images_per_prompt = 10;
    std::uint64_t seed = 0;
    EvalLmConfig eval_lm;
    std::vector<std::string> lexicon;  // resolved terms
    int parallelism = 1;
};

struct RunConfig {
    SearchConfig search;
    AttributeSpec attribute;
    PromptTemplate prompt_template;
    BackendConfig backend;
    EvalConfig eval;
    int num_prompts = 100;
    std::string output_dir = "runs/latest";
};

// Command-line overrides applied after the file is parsed.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> parallelism;
    std::optional<std::string> sidecar_url;
    std::optional<std::string> out;
};

// Strict parse; any problem raises ConfigError with the field path.
// "template" accepts {"preset": name} (user prompt "{target}" is replaced by
// the target class name) or explicit texts; "lexicon" in "eval" accepts a
// shipped lexicon name or a list of terms.
RunConfig parse_run_config(const nlohmann::json & j);
RunConfig load_run_config(const fs::path & path);
void apply_overrides(RunConfig & cfg, const Overrides & o);

// Fully resolved form; parse_run_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig & cfg);

PromptTemplate load_preset(const std::string & name, const AttributeSpec & attribute);
std::vector<std::string> preset_names();
std::vector<std::string> load_lexicon(const std::string & name);

// Scorers realized from a backend selection.
struct Backend {
    std::shared_ptr<const LanguageModel> lm;
    std::shared_ptr<const BiasScorer> scorer;
    std::shared_ptr<const ImageLabeler> labeler;
    std::shared_ptr<const LanguageModel> eval_lm;  // null when perplexity is disabled
};

Backend make_backend(const RunConfig & cfg);

struct PromptRecord {
    int index = 0;
    std::uint64_t seed = 0;
    std::string prompt;  // model prefix plus continuation
    std::vector<TokenId> token_ids;
    double lm_logprob = 0.0;
    double cls_logprob = 0.0;
    double joint = 0.0;
    bool finished = false;
    bool degenerate = false;
};

nlohmann::json to_json(const PromptRecord & r);
PromptRecord prompt_record_from_json(const nlohmann::json & j);

// Complete lines of a JSONL file; a torn trailing line is cut off the file.
std::vector<nlohmann::json> read_jsonl_resumable(const fs::path & path);

// Search seed of prompt i.
std::uint64_t prompt_search_seed(std::uint64_t seed, int index);

// Writes <out>/config.json, <out>/runs/NNNN/{header.json,steps.jsonl} and
// <out>/prompts.jsonl. Resumes an interrupted run with the same config.
fs::path cmd_search(const RunConfig & cfg);
fs::path cmd_search(const fs::path & config_path, const Overrides & o = {});

// Reads <run>/config.json and prompts.jsonl; writes eval.jsonl, report.csv
// and report.md.
eval::EvalReport cmd_eval(const fs::path & run_dir, const Overrides & o = {});

struct AnalyzeOptions {
    std::size_t top_n = 50;
    std::size_t min_frequency = 1;
    int bins = 10;
};

// Word statistics of <run> (needs eval.jsonl) against the prompts of
// <baseline> (none: empty baseline). Writes analysis.json, wordcloud.csv
// and histogram.csv into <run>.
nlohmann::json cmd_analyze(const fs::path & run_dir, const std::optional<fs::path> & baseline_dir,
                           const AnalyzeOptions & options = {});

struct TradeoffRow {
    double lambda = 0.0;
    eval::Interval target_proportion;
    eval::Interval perplexity;
    double mean_target_prob = 0.0;  // bias-scorer estimate of the best prompts
};

// One search + eval per lambda under <out>/lambda_<value>/, then tradeoff.csv.
std::vector<TradeoffRow> cmd_sweep(const RunConfig & cfg, const std::vector<double> & lambdas);
std::vector<TradeoffRow> cmd_sweep(const fs::path & config_path, const std::vector<double> & lambdas,
                                   const Overrides & o = {});

struct OracleCheck {
    std::string fixture;
    bool passed = false;
    double seconds = 0.0;
    std::vector<std::string> diffs;
};

// Exhaustive search vs brute force and vs the fixture's frozen expectation.
// `fixture` is a shipped name, a path to a fixture file, or "all".
// With `freeze_commit` set, passing fixtures get their expectation rewritten.
std::vector<OracleCheck> cmd_oracle_check(const std::string & fixture,
                                          const std::optional<std::string> & freeze_commit = std::nullopt);

std::string format_lambda(double lambda);

}  // namespace bgps::cli
