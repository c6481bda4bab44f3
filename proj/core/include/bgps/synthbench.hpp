#pragma once

#include "bgps/core.hpp"
#include "bgps/scorers.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bgps::synth {

// Tabular n-gram language model. Contexts are looked up by their longest
// suffix (at most `order` tokens) present in the table; the empty context
// must be present. Instructions and model prefix are ignored.
class ToyLM : public LanguageModel {
  public:
    using Table = std::map<std::vector<TokenId>, std::vector<double>>;

    ToyLM(std::vector<std::string> vocab, const std::string & eos_token, int order, Table table,
          std::string backend_id = "toy", std::size_t context_window = 4096);

    // Uniform over `vocab_size` tokens (t0 .. t{V-2} plus eos).
    static ToyLM uniform(std::size_t vocab_size, std::string backend_id = "toy-uniform");

    // Every row mixed with the uniform distribution: (1 - mix) * p + mix / V.
    static ToyLM smoothed(const ToyLM & base, double mix, std::string backend_id = "toy-smoothed");

    std::string backend_id() const override { return backend_id_; }
    TokenId eos_id() const override { return eos_; }
    std::size_t vocab_size() const override { return vocab_.size(); }

    std::vector<TokenId> tokenize(std::string_view text) const override;
    std::string detokenize(std::span<const TokenId> tokens) const override;
    NextTokenDistribution next_token_logprobs(const TokenSeq & context, const PromptTemplate & instructions,
                                              std::size_t top_k) const override;
    std::vector<double> sequence_logprobs(std::span<const TokenId> tokens,
                                          const PromptTemplate & instructions) const override;

    // Row of next-token probabilities for a context.
    const std::vector<double> & row(std::span<const TokenId> context) const;
    double prob(std::span<const TokenId> context, TokenId next) const { return row(context).at(next); }

    const std::vector<std::string> & vocab() const noexcept { return vocab_; }
    const Table & table() const noexcept { return table_; }
    int order() const noexcept { return order_; }

  private:
    void validate() const;

    std::vector<std::string> vocab_;
    std::map<std::string, TokenId, std::less<>> index_;
    TokenId eos_;
    int order_;
    Table table_;
    std::string backend_id_;
    std::size_t context_window_;
};

// Synthetic attribute classifier. For sample k the favored class gets logit
// sum(word_weights over prompt words) + sigma * noise_k, every other class 0.
// Noise is keyed by (seed, k, prompt hash), or (seed, k) with fixed_latents.
class ToyBiasScorer : public BiasScorer {
  public:
    ToyBiasScorer(std::map<std::string, double> word_weights, double noise_sigma, int class_count,
                  int favored_class = 0, std::string attribute_name = {});

    SampleClassLogprobs sample_class_logprobs(const BiasScoreRequest & request) const override;

    // Log-softmax class vector for one latent sample.
    std::vector<double> sample_logprobs(const std::string & prompt, std::uint64_t seed, std::uint64_t sample,
                                        bool fixed_latents) const;

    double weight_sum(const std::string & prompt) const;

    const std::map<std::string, double> & word_weights() const noexcept { return word_weights_; }
    double noise_sigma() const noexcept { return noise_sigma_; }
    int class_count() const noexcept { return class_count_; }
    int favored_class() const noexcept { return favored_class_; }
    const std::string & attribute_name() const noexcept { return attribute_name_; }

  private:
    void check_attribute(const AttributeSpec & attribute) const;

    std::map<std::string, double> word_weights_;
    double noise_sigma_;
    int class_count_;
    int favored_class_;
    std::string attribute_name_;
};

// Draws each image's label from one ToyBiasScorer sample. `no_face_rate`
// of the images come back unlabeled (-1).
class ToyImageLabeler : public ImageLabeler {
  public:
    explicit ToyImageLabeler(ToyBiasScorer scorer, double no_face_rate = 0.0);

    std::vector<int> generate_classify(const std::string & prompt, const AttributeSpec & attribute, int n,
                                       std::uint64_t seed) const override;

  private:
    ToyBiasScorer scorer_;
    double no_face_rate_;
};

struct OracleResult {
    Beam best;
    std::size_t enumerated = 0;
};

// Every outcome run_search can return: eos-terminated sequences with at least
// min_len tokens before eos and at most max_len tokens in total, plus
// unterminated sequences of exactly max_len tokens. Zero-probability
// sequences are skipped. Scores use the same latent seeds as the search.
// Throws OracleTooLarge when |vocab|^max_len exceeds 1e6 and InvalidArgument
// when the scorer is noisy without fixed_latents.
std::vector<Beam> enumerate_outcomes(const ToyLM & lm, const ToyBiasScorer & scorer, const AttributeSpec & attribute,
                                     const SearchConfig & cfg, const PromptTemplate & tmpl = {});

OracleResult brute_force_argmax(const ToyLM & lm, const ToyBiasScorer & scorer, const AttributeSpec & attribute,
                                const SearchConfig & cfg, const PromptTemplate & tmpl = {});

struct FixtureExpectation {
    std::string text;
    std::vector<TokenId> token_ids;
    double joint = 0.0;
    std::string oracle_commit;
};

struct Fixture {
    std::string name;
    ToyLM lm;
    ToyBiasScorer scorer;
    AttributeSpec attribute;
    SearchConfig search;  // objective settings: lambda, lengths, K, seed, latents
    std::optional<FixtureExpectation> expected;
};

// Search settings wide enough that beam search visits every outcome.
SearchConfig exhaustive_config(const Fixture & fixture);

Fixture parse_fixture(const nlohmann::json & j);
nlohmann::json fixture_to_json(const Fixture & fixture);
Fixture load_fixture(const std::filesystem::path & path);

// Named fixture from the data directory; throws UnknownFixture.
Fixture make_fixture(const std::string & name);
std::vector<std::string> fixture_names();

}  // namespace bgps::synth
