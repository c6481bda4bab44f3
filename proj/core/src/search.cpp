#include "bgps/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <optional>
#include <thread>

namespace bgps {

namespace {

constexpr std::uint64_t kFixedLatentTag = 0x4c4154454e54ULL;

// First-token proposals come from the untempered distribution.
constexpr double kFirstStepTemperature = 1.0;

struct ScoredCandidate {
    double cls_logprob = 0.0;
    double joint = 0.0;
};

double objective(double lm_logprob, double cls_logprob, double lambda) {
    // a target probability of exactly zero rules the candidate out
    if (cls_logprob == kNegInf) {
        return lambda > 0.0 ? kNegInf : lm_logprob;
    }
    return joint_score(lm_logprob, cls_logprob, lambda);
}

class StepScorer {
  public:
    StepScorer(const SearchConfig & cfg, const AttributeSpec & attribute, const BiasScorer & bias)
        : cfg_(cfg), attribute_(attribute), bias_(bias) {}

    std::vector<ScoredCandidate> score(int step, const std::vector<Beam> & candidates,
                                       const std::vector<std::string> & texts) const {
        std::vector<ScoredCandidate> out(candidates.size());
        std::vector<std::exception_ptr> errors(candidates.size());

        auto score_one = [&](std::size_t i) {
            try {
                BiasScoreRequest req;
                req.prompt_text = texts[i];
                req.attribute = attribute_;
                req.num_latents = cfg_.num_latents;
                req.t_prime = cfg_.t_prime;
                req.seed = latent_seed(cfg_, step, i);
                req.fixed_latents = cfg_.fixed_latents;
                const BiasScore s = bias_logprob(bias_, req);
                out[i].cls_logprob = s.target_logprob;
                out[i].joint = objective(candidates[i].lm_logprob, s.target_logprob, cfg_.lambda);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        };

        const std::size_t workers =
            bias_.concurrent_safe() ? std::min<std::size_t>(cfg_.parallelism, candidates.size()) : 1;
        if (workers <= 1) {
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                score_one(i);
            }
        } else {
            std::atomic<std::size_t> next{0};
            std::vector<std::jthread> pool;
            pool.reserve(workers);
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&] {
                    for (std::size_t i = next++; i < candidates.size(); i = next++) {
                        score_one(i);
                    }
                });
            }
        }

        // report the lowest-index failure so the error is scheduling independent
        for (auto & e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
        return out;
    }

  private:
    const SearchConfig & cfg_;
    const AttributeSpec & attribute_;
    const BiasScorer & bias_;
};

std::string error_message(const std::exception_ptr & e) {
    try {
        std::rethrow_exception(e);
    } catch (const std::exception & ex) {
        return ex.what();
    } catch (...) {
        return "unknown error";
    }
}

}  // namespace

std::uint64_t latent_seed(const SearchConfig & cfg, int step, std::size_t candidate_index) {
    if (cfg.fixed_latents) {
        return derive_seed(cfg.seed ^ kFixedLatentTag, static_cast<std::uint64_t>(step));
    }
    return derive_seed(cfg.seed, static_cast<std::uint64_t>(step), candidate_index + 1);
}

std::string scored_prompt_text(const LanguageModel & lm, const PromptTemplate & tmpl,
                               std::span<const TokenId> tokens) {
    if (!tokens.empty() && tokens.back() == lm.eos_id()) {
        tokens = tokens.first(tokens.size() - 1);
    }
    return compose_prompt(tmpl.model_prefix, lm.detokenize(tokens));
}

std::vector<Beam> expand_beams(std::span<const Beam> beams, const LanguageModel & lm, const PromptTemplate & tmpl,
                               const SearchConfig & cfg, std::size_t per_beam, bool mask_eos) {
    const TokenId eos = lm.eos_id();
    std::vector<Beam> pool;
    for (std::size_t b = 0; b < beams.size(); ++b) {
        const Beam & parent = beams[b];
        if (parent.finished) {
            throw InvalidArgument("expand_beams: finished beams are never expanded");
        }
        const bool suppress_eos = mask_eos && parent.seq.size() < static_cast<std::size_t>(cfg.min_len);
        const auto dist = lm.next_token_logprobs(parent.seq, tmpl, per_beam + (suppress_eos ? 1 : 0));
        std::size_t taken = 0;
        for (const auto & [tok, lp] : dist.entries) {
            if (taken == per_beam) {
                break;
            }
            if (lp == kNegInf || (suppress_eos && tok == eos)) {
                continue;
            }
            std::vector<TokenId> tokens = parent.seq.token_ids;
            tokens.push_back(tok);
            Beam cand;
            cand.seq = lm.make_seq(std::move(tokens));
            cand.lm_logprob = parent.lm_logprob + lp;
            cand.parent_index = b;
            cand.step_born = parent.step_born + 1;
            cand.finished = false;
            pool.push_back(std::move(cand));
            ++taken;
        }
    }
    return pool;
}

std::vector<Beam> expand_step(std::span<const Beam> beams, const LanguageModel & lm, const PromptTemplate & tmpl,
                              const SearchConfig & cfg) {
    const auto per_beam = static_cast<std::size_t>(cfg.expand) * static_cast<std::size_t>(cfg.extra_expand);
    return expand_beams(beams, lm, tmpl, cfg, per_beam);
}

std::vector<std::size_t> sample_candidate_indices(std::span<const Beam> candidates, std::size_t n, double tau,
                                                  bool deterministic, CounterRng & rng) {
    std::vector<std::size_t> idx(candidates.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (candidates.size() <= n) {
        return idx;
    }
    if (deterministic) {
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return candidate_precedes(candidates[a], candidates[b]); });
        idx.resize(n);
        std::sort(idx.begin(), idx.end());
        return idx;
    }
    if (!(tau > 0.0)) {
        throw InvalidArgument("sample_candidates: temperature must be > 0");
    }

    std::vector<double> logw(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        logw[i] = candidates[i].lm_logprob / tau;
    }
    std::vector<std::size_t> remaining = idx;
    std::vector<std::size_t> chosen;
    chosen.reserve(n);
    std::vector<double> w(candidates.size());
    while (chosen.size() < n) {
        double hi = kNegInf;
        for (std::size_t i : remaining) {
            hi = std::max(hi, logw[i]);
        }
        double total = 0.0;
        for (std::size_t i : remaining) {
            w[i] = hi == kNegInf ? 1.0 : std::exp(logw[i] - hi);
            total += w[i];
        }
        const double u = rng.next_double() * total;
        std::size_t pick = remaining.size() - 1;
        double acc = 0.0;
        for (std::size_t j = 0; j < remaining.size(); ++j) {
            acc += w[remaining[j]];
            if (u < acc) {
                pick = j;
                break;
            }
        }
        chosen.push_back(remaining[pick]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

std::vector<Beam> sample_candidates(std::span<const Beam> candidates, std::size_t n, double tau, bool deterministic,
                                    CounterRng & rng) {
    std::vector<Beam> out;
    for (std::size_t i : sample_candidate_indices(candidates, n, tau, deterministic, rng)) {
        out.push_back(candidates[i]);
    }
    return out;
}

std::vector<std::size_t> prune_indices(std::span<const Beam> scored, std::size_t b) {
    std::vector<std::size_t> idx(scored.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t x, std::size_t y) { return beam_precedes(scored[x], scored[y]); });
    idx.resize(std::min(b, idx.size()));
    return idx;
}

std::vector<Beam> prune(std::span<const Beam> scored, std::size_t b) {
    std::vector<Beam> out;
    for (std::size_t i : prune_indices(scored, b)) {
        out.push_back(scored[i]);
    }
    return out;
}

SearchResult run_search(const SearchConfig & cfg, const AttributeSpec & attribute, const LanguageModel & lm,
                        const BiasScorer & bias, const PromptTemplate & tmpl) {
    cfg.validate();
    attribute.validate();

    SearchResult result;
    SearchLedger & ledger = result.ledger;
    ledger.config = cfg;
    ledger.attribute = attribute;
    ledger.prompt_template = tmpl;
    ledger.lm_backend = lm.backend_id();

    const TokenId eos = lm.eos_id();
    const StepScorer scorer(cfg, attribute, bias);
    CounterRng rng(cfg.seed, 0);

    Beam root;
    root.seq.backend_id = lm.backend_id();
    std::vector<Beam> active{root};
    int budget = cfg.beam_size;

    for (int step = 1; step <= cfg.max_len && budget > 0 && !active.empty(); ++step) {
        StepRecord rec;
        rec.step = step;
        rec.beam_budget = budget;

        const std::size_t per_beam = step == 1
                                         ? lm.vocab_size()
                                         : static_cast<std::size_t>(cfg.expand) * static_cast<std::size_t>(cfg.extra_expand);
        std::vector<Beam> pool;
        try {
            pool = expand_beams(active, lm, tmpl, cfg, per_beam);
            if (pool.empty()) {
                // the LM only continues with eos before min_len is reached
                pool = expand_beams(active, lm, tmpl, cfg, per_beam, false);
                rec.eos_unmasked = !pool.empty();
                ledger.degenerate = ledger.degenerate || rec.eos_unmasked;
            }
        } catch (const std::exception & e) {
            throw SearchAborted(std::string("language model failed at step ") + std::to_string(step) + ": " +
                                    e.what(),
                                ledger);
        }

        // nothing to score for an empty prompt
        std::vector<std::string> texts;
        {
            std::vector<Beam> kept_pool;
            for (auto & cand : pool) {
                cand.step_born = step;
                std::string text = scored_prompt_text(lm, tmpl, cand.seq.token_ids);
                if (!text.empty()) {
                    kept_pool.push_back(std::move(cand));
                }
            }
            pool = std::move(kept_pool);
        }
        rec.pool_size = pool.size();
        if (pool.empty()) {
            ledger.degenerate = true;
            ledger.steps.push_back(std::move(rec));
            break;
        }

        const std::size_t n = static_cast<std::size_t>(budget) * static_cast<std::size_t>(cfg.expand);
        const double tau = step == 1 ? kFirstStepTemperature : cfg.temperature;
        const std::uint64_t draws_before = rng.draws();
        std::vector<Beam> sampled = sample_candidates(pool, n, tau, cfg.deterministic_mode, rng);
        rec.rng_draws = rng.draws() - draws_before;

        texts.reserve(sampled.size());
        for (const auto & cand : sampled) {
            texts.push_back(scored_prompt_text(lm, tmpl, cand.seq.token_ids));
        }

        std::vector<ScoredCandidate> scores;
        try {
            scores = scorer.score(step, sampled, texts);
        } catch (...) {
            ledger.steps.push_back(rec);
            throw SearchAborted("bias scorer failed at step " + std::to_string(step) + ": " +
                                    error_message(std::current_exception()),
                                ledger);
        }

        rec.candidates.reserve(sampled.size());
        for (std::size_t i = 0; i < sampled.size(); ++i) {
            sampled[i].cls_logprob = scores[i].cls_logprob;
            sampled[i].joint_score = scores[i].joint;
            sampled[i].finished = sampled[i].seq.last() == eos;
            rec.candidates.push_back(CandidateRecord{texts[i], sampled[i].seq.token_ids, sampled[i].parent_index,
                                                     sampled[i].lm_logprob, sampled[i].cls_logprob,
                                                     sampled[i].joint_score});
        }

        rec.kept = prune_indices(sampled, static_cast<std::size_t>(budget));
        std::vector<Beam> next_active;
        for (std::size_t i : rec.kept) {
            if (sampled[i].finished) {
                rec.finished.push_back(i);
                result.finished.push_back(sampled[i]);
            } else {
                next_active.push_back(sampled[i]);
            }
        }
        budget -= static_cast<int>(rec.finished.size());
        active = std::move(next_active);
        ledger.steps.push_back(std::move(rec));
    }

    if (!(active.size() == 1 && active.front().seq.empty())) {
        result.final_active = active;
    }

    std::vector<Beam> all = result.finished;
    all.insert(all.end(), result.final_active.begin(), result.final_active.end());
    if (all.empty()) {
        throw SearchAborted("language model proposed no scorable continuation", ledger);
    }
    result.best = all[prune_indices(all, 1).front()];
    return result;
}

}  // namespace bgps
