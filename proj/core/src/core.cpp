#include "bgps/core.hpp"

#include "bgps/error.hpp"

#include <algorithm>
#include <cmath>

namespace bgps {

namespace {

void require(bool cond, const char * field, const char * what) {
    if (!cond) {
        throw InvalidArgument(std::string(field) + ": " + what);
    }
}

void check_logvals(std::span<const double> logvals) {
    if (logvals.empty()) {
        throw InvalidScore("log-mean-exp of an empty list");
    }
    for (double v : logvals) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
            throw InvalidScore("log-mean-exp input must be finite or -inf");
        }
    }
}

// returns (max, log sum exp(v - max)); max is -inf when every entry is -inf
std::pair<double, double> shifted_log_sum(std::span<const double> logvals) {
    const double hi = *std::max_element(logvals.begin(), logvals.end());
    if (hi == kNegInf) {
        return {kNegInf, 0.0};
    }
    double sum = 0.0;
    for (double v : logvals) {
        sum += std::exp(v - hi);
    }
    return {hi, std::log(sum)};
}

template <typename Key>
bool tie_break(const Beam & a, const Beam & b, Key key) {
    const double ka = key(a);
    const double kb = key(b);
    if (ka != kb) {
        return ka > kb;
    }
    if (a.seq.last() != b.seq.last()) {
        return a.seq.last() < b.seq.last();
    }
    if (a.parent_index != b.parent_index) {
        return a.parent_index < b.parent_index;
    }
    return a.seq.token_ids < b.seq.token_ids;
}

}  // namespace

void SearchConfig::validate() const {
    require(std::isfinite(lambda) && lambda >= 0.0, "lambda", "must be finite and >= 0");
    require(num_latents >= 1, "num_latents", "must be >= 1");
    require(beam_size >= 1, "beam_size", "must be >= 1");
    require(expand >= 1, "expand", "must be >= 1");
    require(extra_expand >= 1, "extra_expand", "must be >= 1");
    require(deterministic_mode || (std::isfinite(temperature) && temperature > 0.0), "temperature",
            "must be > 0 unless deterministic_mode is set");
    require(min_len >= 0, "min_len", "must be >= 0");
    require(max_len >= 1, "max_len", "must be >= 1");
    require(min_len <= max_len, "min_len", "must not exceed max_len");
    require(t_prime >= 1, "t_prime", "must be >= 1");
    require(parallelism >= 1, "parallelism", "must be >= 1");
}

void AttributeSpec::validate() const {
    require(!attribute_name.empty(), "attribute_name", "must be non-empty");
    require(class_names.size() >= 2, "class_names", "needs at least two classes");
    require(target_class < class_names.size(), "target_class", "out of range");
}

double joint_score(double lm_logprob, double cls_logprob, double lambda) {
    if (!std::isfinite(lm_logprob) || !std::isfinite(cls_logprob) || !std::isfinite(lambda)) {
        throw InvalidScore("joint_score needs finite inputs");
    }
    if (cls_logprob > 0.0) {
        throw InvalidScore("cls_logprob must be <= 0");
    }
    if (lambda < 0.0) {
        throw InvalidScore("lambda must be >= 0");
    }
    return lm_logprob + lambda * cls_logprob;
}

double log_sum_exp(std::span<const double> logvals) {
    check_logvals(logvals);
    const auto [hi, rest] = shifted_log_sum(logvals);
    return hi == kNegInf ? kNegInf : hi + rest;
}

double log_mean_exp(std::span<const double> logvals) {
    check_logvals(logvals);
    if (logvals.size() == 1) {
        return logvals[0];
    }
    const auto [hi, rest] = shifted_log_sum(logvals);
    if (hi == kNegInf) {
        return kNegInf;
    }
    // rest lies in [0, log K]; clamp so rounding can never leave [max - log K, max]
    const double log_k = std::log(static_cast<double>(logvals.size()));
    return hi + std::clamp(rest - log_k, -log_k, 0.0);
}

bool beam_precedes(const Beam & a, const Beam & b) {
    return tie_break(a, b, [](const Beam & x) { return x.joint_score; });
}

bool candidate_precedes(const Beam & a, const Beam & b) {
    return tie_break(a, b, [](const Beam & x) { return x.lm_logprob; });
}

}  // namespace bgps
