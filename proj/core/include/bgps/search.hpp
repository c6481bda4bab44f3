#pragma once

#include "bgps/core.hpp"
#include "bgps/error.hpp"
#include "bgps/rng.hpp"
#include "bgps/scorers.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bgps {

struct CandidateRecord {
    std::string text;  // the prompt the bias scorer saw
    std::vector<TokenId> token_ids;
    std::size_t parent = 0;
    double lm_logprob = 0.0;
    double cls_logprob = 0.0;
    double joint = 0.0;
};

struct StepRecord {
    int step = 0;
    int beam_budget = 0;         // B at the start of the step
    std::size_t pool_size = 0;   // candidates proposed by the LM before sampling
    std::vector<CandidateRecord> candidates;  // the sampled, scored candidates
    std::vector<std::size_t> kept;            // indices into candidates, best first
    std::vector<std::size_t> finished;        // subset of kept ending in eos
    std::uint64_t rng_draws = 0;
    bool eos_unmasked = false;  // min_len masking left nothing and was lifted
};

struct SearchLedger {
    SearchConfig config;
    AttributeSpec attribute;
    PromptTemplate prompt_template;
    std::string lm_backend;
    std::vector<StepRecord> steps;
    bool degenerate = false;
};

struct SearchResult {
    Beam best;
    std::vector<Beam> finished;
    std::vector<Beam> final_active;
    SearchLedger ledger;
};

// Raised when a scorer fails mid-run; carries the ledger up to the failing step.
class SearchAborted : public Error {
  public:
    SearchAborted(const std::string & what, SearchLedger partial) : Error(what), ledger_(std::move(partial)) {}

    const SearchLedger & ledger() const noexcept { return ledger_; }

  private:
    SearchLedger ledger_;
};

// Seed handed to the bias scorer for a candidate. With fixed_latents every
// candidate of a step shares one latent set.
std::uint64_t latent_seed(const SearchConfig & cfg, int step, std::size_t candidate_index);

// Prompt text scored for a token sequence: the model prefix plus the
// detokenized continuation, without a trailing eos.
std::string scored_prompt_text(const LanguageModel & lm, const PromptTemplate & tmpl, std::span<const TokenId> tokens);

// Per unfinished beam, the best `per_beam` continuations by LM log-prob,
// pooled in beam order. eos is masked while a beam is shorter than min_len.
std::vector<Beam> expand_beams(std::span<const Beam> beams, const LanguageModel & lm, const PromptTemplate & tmpl,
                               const SearchConfig & cfg, std::size_t per_beam, bool mask_eos = true);

// expand_beams with per_beam = E * E'.
std::vector<Beam> expand_step(std::span<const Beam> beams, const LanguageModel & lm, const PromptTemplate & tmpl,
                              const SearchConfig & cfg);

// n draws without replacement, weight proportional to exp(lm_logprob / tau),
// renormalized after every draw. Deterministic mode takes the top n by the
// tie-break key. Returned indices are ascending.
std::vector<std::size_t> sample_candidate_indices(std::span<const Beam> candidates, std::size_t n, double tau,
                                                  bool deterministic, CounterRng & rng);

std::vector<Beam> sample_candidates(std::span<const Beam> candidates, std::size_t n, double tau, bool deterministic,
                                    CounterRng & rng);

// Indices of the top b beams by the tie-break key, best first.
std::vector<std::size_t> prune_indices(std::span<const Beam> scored, std::size_t b);

std::vector<Beam> prune(std::span<const Beam> scored, std::size_t b);

SearchResult run_search(const SearchConfig & cfg, const AttributeSpec & attribute, const LanguageModel & lm,
                        const BiasScorer & bias, const PromptTemplate & tmpl);

}  // namespace bgps
