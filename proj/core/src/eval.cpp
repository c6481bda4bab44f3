#include "bgps/eval.hpp"

#include "bgps/error.hpp"
#include "bgps/rng.hpp"
#include "bgps/text.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace bgps::eval {

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::vector<std::vector<std::string>> split_lexicon(std::span<const std::string> lexicon) {
    std::vector<std::vector<std::string>> out;
    for (const auto & entry : lexicon) {
        auto ws = text::words(entry);
        if (!ws.empty()) {
            out.push_back(std::move(ws));
        }
    }
    return out;
}

}  // namespace

Interval ci95(std::span<const double> values) {
    Interval r;
    r.n = values.size();
    if (values.empty()) {
        r.degenerate = true;
        return r;
    }
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    r.mean = sum / static_cast<double>(values.size());
    if (values.size() < 2) {
        r.degenerate = true;
        return r;
    }
    double ss = 0.0;
    for (double v : values) {
        ss += (v - r.mean) * (v - r.mean);
    }
    const double s = std::sqrt(ss / static_cast<double>(values.size() - 1));
    r.halfwidth = 1.96 * s / std::sqrt(static_cast<double>(values.size()));
    return r;
}

double perplexity(const std::string & prompt, const LanguageModel & eval_lm) {
    const auto tokens = eval_lm.tokenize(prompt);
    if (tokens.empty()) {
        throw InvalidArgument("perplexity of an empty prompt");
    }
    const auto lps = eval_lm.sequence_logprobs(tokens, PromptTemplate{});
    double nll = 0.0;
    for (double lp : lps) {
        if (lp == kNegInf) {
            return std::numeric_limits<double>::infinity();
        }
        nll -= lp;
    }
    return std::exp(nll / static_cast<double>(lps.size()));
}

std::vector<std::string> explicit_terms(const std::string & prompt, std::span<const std::string> lexicon) {
    const auto ws = text::words(prompt);
    std::vector<std::string> hits;
    const auto entries = split_lexicon(lexicon);
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const auto & needle = entries[e];
        if (needle.size() > ws.size()) {
            continue;
        }
        for (std::size_t i = 0; i + needle.size() <= ws.size(); ++i) {
            if (std::equal(needle.begin(), needle.end(), ws.begin() + static_cast<std::ptrdiff_t>(i))) {
                std::string joined;
                for (const auto & w : needle) {
                    joined += (joined.empty() ? "" : " ") + w;
                }
                if (std::find(hits.begin(), hits.end(), joined) == hits.end()) {
                    hits.push_back(joined);
                }
                break;
            }
        }
    }
    return hits;
}

TermRate explicit_term_rate(std::span<const std::string> prompts, std::span<const std::string> lexicon) {
    if (split_lexicon(lexicon).empty()) {
        throw InvalidLexicon("explicit-term lexicon is empty");
    }
    TermRate r;
    if (prompts.empty()) {
        r.empty_input = true;
        return r;
    }
    std::size_t hit = 0;
    for (const auto & p : prompts) {
        if (!explicit_terms(p, lexicon).empty()) {
            ++hit;
        }
    }
    r.rate = static_cast<double>(hit) / static_cast<double>(prompts.size());
    return r;
}

std::optional<std::vector<double>> group_frequencies(std::span<const int> labels, std::size_t num_classes) {
    std::vector<double> counts(num_classes, 0.0);
    std::size_t labeled = 0;
    for (int l : labels) {
        if (l < 0) {
            continue;
        }
        if (static_cast<std::size_t>(l) >= num_classes) {
            throw InvalidArgument("label " + std::to_string(l) + " outside the attribute classes");
        }
        counts[static_cast<std::size_t>(l)] += 1.0;
        ++labeled;
    }
    if (labeled == 0) {
        return std::nullopt;
    }
    for (double & c : counts) {
        c /= static_cast<double>(labeled);
    }
    return counts;
}

std::uint64_t prompt_seed(std::uint64_t seed, const std::string & prompt) {
    return derive_seed(seed, fnv1a64(prompt));
}

PromptEval evaluate_prompt(const std::string & prompt, const ImageLabeler & labeler, const LanguageModel * eval_lm,
                           const AttributeSpec & attribute, const EvalSettings & settings) {
    PromptEval e;
    e.prompt = prompt;
    try {
        if (settings.images_per_prompt < 1) {
            throw InvalidArgument("images_per_prompt must be >= 1");
        }
        e.labels = labeler.generate_classify(prompt, attribute, settings.images_per_prompt,
                                             prompt_seed(settings.seed, prompt));
        auto freq = group_frequencies(e.labels, attribute.class_names.size());
        if (!freq) {
            e.error = "no face detected in any image";
        } else {
            e.group_freq = std::move(*freq);
        }
        if (eval_lm != nullptr) {
            e.perplexity = perplexity(prompt, *eval_lm);
        }
        if (!settings.lexicon.empty()) {
            e.explicit_terms = explicit_terms(prompt, settings.lexicon);
        }
    } catch (const std::exception & ex) {
        e.error = ex.what();
    }
    return e;
}

EvalReport aggregate(std::vector<PromptEval> per_prompt, const AttributeSpec & attribute,
                     std::span<const std::string> lexicon) {
    EvalReport r;
    r.attribute = attribute;
    r.per_prompt = std::move(per_prompt);
    const std::size_t classes = attribute.class_names.size();

    std::vector<std::vector<double>> columns(classes);
    std::vector<double> ppls;
    std::vector<std::string> prompts;
    for (const auto & e : r.per_prompt) {
        if (!e.ok()) {
            ++r.failed_prompts;
            continue;
        }
        for (std::size_t c = 0; c < classes; ++c) {
            columns[c].push_back(e.group_freq.at(c));
        }
        if (e.perplexity && std::isfinite(*e.perplexity)) {
            ppls.push_back(*e.perplexity);
        }
        prompts.push_back(e.prompt);
    }
    for (std::size_t c = 0; c < classes; ++c) {
        const auto ci = ci95(columns[c]);
        r.mean_freq.push_back(ci.mean);
        r.ci95_halfwidth.push_back(ci.halfwidth);
    }
    r.ppl = ci95(ppls);
    if (!lexicon.empty()) {
        r.explicit_rate = explicit_term_rate(prompts, lexicon).rate;
    }
    return r;
}

EvalReport evaluate_prompts(std::span<const std::string> prompts, const ImageLabeler & labeler,
                            const LanguageModel * eval_lm, const AttributeSpec & attribute,
                            const EvalSettings & settings) {
    std::vector<PromptEval> out(prompts.size());
    const bool parallel_ok = labeler.concurrent_safe() && (eval_lm == nullptr || eval_lm->concurrent_safe());
    const std::size_t workers =
        parallel_ok ? std::min<std::size_t>(static_cast<std::size_t>(std::max(settings.parallelism, 1)),
                                            prompts.size())
                    : 1;
    if (workers <= 1) {
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            out[i] = evaluate_prompt(prompts[i], labeler, eval_lm, attribute, settings);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < prompts.size(); i = next++) {
                    out[i] = evaluate_prompt(prompts[i], labeler, eval_lm, attribute, settings);
                }
            });
        }
    }
    return aggregate(std::move(out), attribute, settings.lexicon);
}

nlohmann::json to_json(const PromptEval & e) {
    nlohmann::json j{{"prompt", e.prompt},
                     {"labels", e.labels},
                     {"group_freq", e.group_freq},
                     {"explicit_terms", e.explicit_terms}};
    if (e.perplexity) {
        j["perplexity"] = std::isfinite(*e.perplexity) ? nlohmann::json(*e.perplexity) : nlohmann::json("inf");
    } else {
        j["perplexity"] = nullptr;
    }
    if (!e.ok()) {
        j["error"] = e.error;
    }
    return j;
}

PromptEval prompt_eval_from_json(const nlohmann::json & j) {
    PromptEval e;
    e.prompt = j.at("prompt").get<std::string>();
    e.labels = j.at("labels").get<std::vector<int>>();
    e.group_freq = j.at("group_freq").get<std::vector<double>>();
    e.explicit_terms = j.value("explicit_terms", std::vector<std::string>{});
    if (const auto it = j.find("perplexity"); it != j.end() && !it->is_null()) {
        e.perplexity = it->is_string() ? std::numeric_limits<double>::infinity() : it->get<double>();
    }
    e.error = j.value("error", std::string{});
    return e;
}

std::string report_csv(const EvalReport & report) {
    std::ostringstream out;
    out << "prompt";
    for (std::size_t c = 0; c < report.attribute.class_names.size(); ++c) {
        out << ",class_" << c;
    }
    out << ",ppl,explicit_hit\r\n";
    for (const auto & e : report.per_prompt) {
        out << text::csv_field(e.prompt);
        for (std::size_t c = 0; c < report.attribute.class_names.size(); ++c) {
            out << ',';
            if (e.ok()) {
                out << e.group_freq.at(c);
            }
        }
        out << ',';
        if (e.perplexity) {
            out << *e.perplexity;
        }
        out << ',' << (e.explicit_terms.empty() ? 0 : 1) << "\r\n";
    }
    return out.str();
}

std::string report_markdown(const EvalReport & report, const std::string & experiment) {
    std::ostringstream out;
    out << "| Experiment |";
    for (const auto & name : report.attribute.class_names) {
        out << ' ' << name << " |";
    }
    out << " PPL | Explicit% |\n|---|";
    for (std::size_t c = 0; c < report.attribute.class_names.size(); ++c) {
        out << "---|";
    }
    out << "---|---|\n| " << experiment << " |";
    for (std::size_t c = 0; c < report.attribute.class_names.size(); ++c) {
        out << ' ' << fixed(report.mean_freq.at(c), 2) << " ± " << fixed(report.ci95_halfwidth.at(c), 2) << " |";
    }
    if (report.ppl.n > 0) {
        out << ' ' << fixed(report.ppl.mean, 0) << " ± " << fixed(report.ppl.halfwidth, 0) << " |";
    } else {
        out << " n/a |";
    }
    out << ' ' << fixed(100.0 * report.explicit_rate, 0) << " |\n";
    out << "\n" << report.per_prompt.size() << " prompts, " << report.failed_prompts << " failed.\n";
    return out.str();
}

}  // namespace bgps::eval
