#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace bgps {

using TokenId = std::int32_t;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// A prompt under construction. token_ids are the generated tokens only; the
// template's model prefix is never part of them.
struct TokenSeq {
    std::vector<TokenId> token_ids;
    std::string surface_text;
    std::string backend_id;

    bool empty() const noexcept { return token_ids.empty(); }
    std::size_t size() const noexcept { return token_ids.size(); }
    TokenId last() const noexcept { return token_ids.empty() ? -1 : token_ids.back(); }

    bool operator==(const TokenSeq &) const = default;
};

struct Beam {
    TokenSeq seq;
    double lm_logprob = 0.0;   // cumulative over all generated tokens
    double cls_logprob = 0.0;  // bias log-prob of the full partial prompt, <= 0
    double joint_score = 0.0;  // lm_logprob + lambda * cls_logprob
    bool finished = false;
    std::size_t parent_index = 0;
    int step_born = 0;
};

struct SearchConfig {
    double lambda = 10.0;
    int num_latents = 10;  // K
    int beam_size = 10;    // B
    int expand = 10;       // E
    int extra_expand = 2;  // E'
    double temperature = 10.0;
    int max_len = 20;
    int min_len = 1;
    std::uint64_t seed = 0;
    bool deterministic_mode = false;
    bool fixed_latents = false;
    int t_prime = 25;
    int parallelism = 1;  // concurrent bias requests per step

    // Throws InvalidArgument naming the first bad field.
    void validate() const;
};

struct AttributeSpec {
    std::string attribute_name;
    std::vector<std::string> class_names;
    std::size_t target_class = 0;

    void validate() const;
    const std::string & target_name() const { return class_names.at(target_class); }
};

// lm_logprob + lambda * cls_logprob. Throws InvalidScore on non-finite input,
// a positive cls_logprob or a negative lambda.
double joint_score(double lm_logprob, double cls_logprob, double lambda);

// log(mean(exp(v))) with max-shifting. All entries -inf gives -inf.
// Throws InvalidScore on empty input or NaN/+inf entries.
double log_mean_exp(std::span<const double> logvals);

// log(sum(exp(v))), same conventions as log_mean_exp.
double log_sum_exp(std::span<const double> logvals);

// Ranking used for pruning and final selection:
// joint_score desc, last token id asc, parent_index asc, token ids lexicographic asc.
bool beam_precedes(const Beam & a, const Beam & b);

// Same key on the LM prior alone; used when selecting candidates deterministically.
bool candidate_precedes(const Beam & a, const Beam & b);

}  // namespace bgps
