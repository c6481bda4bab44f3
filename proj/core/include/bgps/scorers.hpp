#pragma once

#include "bgps/core.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bgps {

// Instructions given to the search LM. Decoding continues after model_prefix.
struct PromptTemplate {
    std::string system_prompt;
    std::string user_prompt;
    std::string model_prefix;

    bool operator==(const PromptTemplate &) const = default;
};

// The text a generator sees: model prefix followed by the generated continuation.
std::string compose_prompt(std::string_view model_prefix, std::string_view continuation);

struct NextTokenDistribution {
    std::vector<std::pair<TokenId, double>> entries;  // logprob desc, token id asc on ties
    bool is_truncated = false;
    std::size_t vocab_size = 0;

    // Sorts entries, drops zero-probability tokens and keeps the top_k best.
    static NextTokenDistribution from_logprobs(std::span<const double> logprobs, std::size_t top_k);
};

struct BiasScoreRequest {
    std::string prompt_text;
    AttributeSpec attribute;
    int num_latents = 10;  // K
    int t_prime = 25;
    std::uint64_t seed = 0;
    bool fixed_latents = false;
};

// K x C matrix of per-sample class log-probs, as backends return them.
using SampleClassLogprobs = std::vector<std::vector<double>>;

struct BiasScore {
    double target_logprob = 0.0;
    std::vector<double> per_class_logprobs;  // log-mean-exp over samples, per class
    SampleClassLogprobs per_sample;
};

class LanguageModel {
  public:
    virtual ~LanguageModel() = default;

    virtual std::string backend_id() const = 0;
    virtual TokenId eos_id() const = 0;
    virtual std::size_t vocab_size() const = 0;
    virtual bool concurrent_safe() const { return true; }

    virtual std::vector<TokenId> tokenize(std::string_view text) const = 0;
    virtual std::string detokenize(std::span<const TokenId> tokens) const = 0;

    // Top continuations of (instructions, model_prefix, context).
    virtual NextTokenDistribution next_token_logprobs(const TokenSeq & context, const PromptTemplate & instructions,
                                                      std::size_t top_k) const = 0;

    // Log-prob of each token given its predecessors. The default walks
    // next_token_logprobs over the full vocabulary; backends may override.
    virtual std::vector<double> sequence_logprobs(std::span<const TokenId> tokens,
                                                  const PromptTemplate & instructions) const;

    TokenSeq make_seq(std::vector<TokenId> tokens) const;
};

class BiasScorer {
  public:
    virtual ~BiasScorer() = default;

    virtual bool concurrent_safe() const { return true; }

    // K per-sample class log-prob vectors for the request.
    virtual SampleClassLogprobs sample_class_logprobs(const BiasScoreRequest & request) const = 0;
};

// Generation plus attribute classification for evaluation. A label of -1
// means no face was detected; multi-face backends may return more than n labels.
class ImageLabeler {
  public:
    virtual ~ImageLabeler() = default;

    virtual bool concurrent_safe() const { return true; }

    virtual std::vector<int> generate_classify(const std::string & prompt, const AttributeSpec & attribute, int n,
                                               std::uint64_t seed) const = 0;
};

// Validates a backend's K x C matrix and aggregates it. Throws SchemaViolation
// when a row has the wrong width or does not normalize to 1 within 1e-5.
BiasScore aggregate_bias(const SampleClassLogprobs & per_sample, const AttributeSpec & attribute);

// Engine-side bias scoring: runs the backend and aggregates with log_mean_exp.
BiasScore bias_logprob(const BiasScorer & scorer, const BiasScoreRequest & request);

}  // namespace bgps
