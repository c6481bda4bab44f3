#include "bgps/scorers.hpp"

#include "bgps/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace bgps {

std::string compose_prompt(std::string_view model_prefix, std::string_view continuation) {
    if (model_prefix.empty()) {
        return std::string(continuation);
    }
    if (continuation.empty()) {
        return std::string(model_prefix);
    }
    std::string out(model_prefix);
    const bool joined = std::isspace(static_cast<unsigned char>(model_prefix.back())) ||
                        std::isspace(static_cast<unsigned char>(continuation.front()));
    if (!joined) {
        out += ' ';
    }
    out += continuation;
    return out;
}

NextTokenDistribution NextTokenDistribution::from_logprobs(std::span<const double> logprobs, std::size_t top_k) {
    NextTokenDistribution dist;
    dist.vocab_size = logprobs.size();
    std::vector<std::pair<TokenId, double>> support;
    for (std::size_t i = 0; i < logprobs.size(); ++i) {
        if (logprobs[i] > kNegInf) {
            support.emplace_back(static_cast<TokenId>(i), logprobs[i]);
        }
    }
    std::stable_sort(support.begin(), support.end(), [](const auto & a, const auto & b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (support.size() > top_k) {
        support.resize(top_k);
        dist.is_truncated = true;
    }
    dist.entries = std::move(support);
    return dist;
}

std::vector<double> LanguageModel::sequence_logprobs(std::span<const TokenId> tokens,
                                                     const PromptTemplate & instructions) const {
    std::vector<double> out;
    out.reserve(tokens.size());
    TokenSeq context;
    context.backend_id = backend_id();
    for (TokenId tok : tokens) {
        const auto dist = next_token_logprobs(context, instructions, vocab_size());
        double lp = kNegInf;
        for (const auto & [id, logprob] : dist.entries) {
            if (id == tok) {
                lp = logprob;
                break;
            }
        }
        out.push_back(lp);
        context.token_ids.push_back(tok);
    }
    return out;
}

TokenSeq LanguageModel::make_seq(std::vector<TokenId> tokens) const {
    TokenSeq seq;
    seq.surface_text = detokenize(tokens);
    seq.token_ids = std::move(tokens);
    seq.backend_id = backend_id();
    return seq;
}

BiasScore aggregate_bias(const SampleClassLogprobs & per_sample, const AttributeSpec & attribute) {
    if (per_sample.empty()) {
        throw SchemaViolation("per_sample", "no samples returned");
    }
    const std::size_t classes = attribute.class_names.size();
    for (std::size_t k = 0; k < per_sample.size(); ++k) {
        const auto & row = per_sample[k];
        const std::string path = "per_sample[" + std::to_string(k) + "]";
        if (row.size() != classes) {
            throw SchemaViolation(path, "expected " + std::to_string(classes) + " classes, got " +
                                            std::to_string(row.size()));
        }
        for (double v : row) {
            if (std::isnan(v) || v > 1e-12) {
                throw SchemaViolation(path, "log-probs must lie in [-inf, 0]");
            }
        }
        const double total = std::accumulate(row.begin(), row.end(), 0.0,
                                             [](double acc, double lp) { return acc + std::exp(lp); });
        if (std::abs(total - 1.0) > 1e-5) {
            throw SchemaViolation(path, "class probabilities sum to " + std::to_string(total));
        }
    }

    BiasScore score;
    score.per_sample = per_sample;
    score.per_class_logprobs.resize(classes);
    std::vector<double> column(per_sample.size());
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t k = 0; k < per_sample.size(); ++k) {
            column[k] = std::min(per_sample[k][c], 0.0);
        }
        score.per_class_logprobs[c] = log_mean_exp(column);
    }
    score.target_logprob = score.per_class_logprobs[attribute.target_class];
    return score;
}

BiasScore bias_logprob(const BiasScorer & scorer, const BiasScoreRequest & request) {
    if (request.prompt_text.empty()) {
        throw InvalidArgument("bias_logprob: prompt_text must be non-empty");
    }
    if (request.num_latents < 1) {
        throw InvalidArgument("bias_logprob: num_latents must be >= 1");
    }
    auto per_sample = scorer.sample_class_logprobs(request);
    if (per_sample.size() != static_cast<std::size_t>(request.num_latents)) {
        throw SchemaViolation("per_sample", "expected " + std::to_string(request.num_latents) + " samples, got " +
                                                std::to_string(per_sample.size()));
    }
    return aggregate_bias(per_sample, request.attribute);
}

}  // namespace bgps
