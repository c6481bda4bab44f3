#pragma once

#include "bgps/core.hpp"
#include "bgps/scorers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bgps::eval {

struct Interval {
    double mean = 0.0;
    double halfwidth = 0.0;
    std::size_t n = 0;
    bool degenerate = false;  // n < 2: no spread estimate
};

// Normal-approximation 95% interval: mean +- 1.96 s / sqrt(n), s with n-1.
// Empty input gives a degenerate zero interval.
Interval ci95(std::span<const double> values);

// exp of the mean negative log-likelihood of the prompt's tokens under an
// evaluation LM, with no instructions. Throws InvalidArgument for an empty
// prompt; +inf when some token has zero probability.
double perplexity(const std::string & prompt, const LanguageModel & eval_lm);

// Lexicon entries found in the prompt as whole words, case-insensitive,
// after punctuation stripping. Multi-word entries match word sequences.
std::vector<std::string> explicit_terms(const std::string & prompt, std::span<const std::string> lexicon);

struct TermRate {
    double rate = 0.0;
    bool empty_input = false;
};

// Fraction of prompts with at least one lexicon hit. Throws InvalidLexicon
// for an empty lexicon.
TermRate explicit_term_rate(std::span<const std::string> prompts, std::span<const std::string> lexicon);

// Per-class proportions over labeled images (label -1 is ignored).
// nullopt when no image carries a label.
std::optional<std::vector<double>> group_frequencies(std::span<const int> labels, std::size_t num_classes);

struct PromptEval {
    std::string prompt;
    std::vector<int> labels;
    std::vector<double> group_freq;
    std::optional<double> perplexity;
    std::vector<std::string> explicit_terms;
    std::string error;  // non-empty when this prompt could not be evaluated

    bool ok() const { return error.empty(); }
};

struct EvalReport {
    AttributeSpec attribute;
    std::vector<PromptEval> per_prompt;
    std::vector<double> mean_freq;
    std::vector<double> ci95_halfwidth;
    Interval ppl;
    double explicit_rate = 0.0;
    std::size_t failed_prompts = 0;
};

struct EvalSettings {
    int images_per_prompt = 10;
    std::uint64_t seed = 0;
    std::vector<std::string> lexicon;
    int parallelism = 1;
};

// Image seed for a prompt; depends on the text only, so reports do not
// change with prompt order.
std::uint64_t prompt_seed(std::uint64_t seed, const std::string & prompt);

// Never throws for backend failures; they become the prompt's error marker.
PromptEval evaluate_prompt(const std::string & prompt, const ImageLabeler & labeler, const LanguageModel * eval_lm,
                           const AttributeSpec & attribute, const EvalSettings & settings);

EvalReport aggregate(std::vector<PromptEval> per_prompt, const AttributeSpec & attribute,
                     std::span<const std::string> lexicon);

EvalReport evaluate_prompts(std::span<const std::string> prompts, const ImageLabeler & labeler,
                            const LanguageModel * eval_lm, const AttributeSpec & attribute,
                            const EvalSettings & settings);

nlohmann::json to_json(const PromptEval & e);
PromptEval prompt_eval_from_json(const nlohmann::json & j);

// report.csv: prompt, class_0..class_k, ppl, explicit_hit
std::string report_csv(const EvalReport & report);
// report.md: one table row in the "proportion +- CI | PPL +- CI | explicit%" layout
std::string report_markdown(const EvalReport & report, const std::string & experiment);

}  // namespace bgps::eval
