#include "bgps/analysis.hpp"

#include "bgps/error.hpp"
#include "bgps/text.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bgps::analysis {

std::string_view to_string(Category c) {
    switch (c) {
        case Category::injected: return "injected";
        case Category::deleted: return "deleted";
        case Category::dampened: return "dampened";
        case Category::augmented: return "augmented";
        case Category::unchanged: return "unchanged";
    }
    return "unknown";
}

WordCounts word_frequencies(std::span<const std::string> prompts, const StopWords & stop_words) {
    WordCounts counts;
    for (const auto & p : prompts) {
        for (auto & w : text::words(p)) {
            if (!stop_words.count(w)) {
                ++counts[std::move(w)];
            }
        }
    }
    return counts;
}

WordCounts word_frequencies(std::span<const std::string> prompts) {
    return word_frequencies(prompts, text::default_stop_words());
}

Category categorize(std::size_t f_base, std::size_t f_bgps) {
    if (f_base == 0 && f_bgps == 0) {
        throw InvalidArgument("categorize: word absent from both prompt sets");
    }
    if (f_base == 0) {
        return Category::injected;
    }
    if (f_bgps == 0) {
        return Category::deleted;
    }
    if (f_bgps < f_base) {
        return Category::dampened;
    }
    if (f_bgps > f_base) {
        return Category::augmented;
    }
    return Category::unchanged;
}

std::map<std::string, Category> categorize_words(const WordCounts & base, const WordCounts & bgps) {
    std::map<std::string, Category> out;
    auto count = [](const WordCounts & m, const std::string & w) -> std::size_t {
        auto it = m.find(w);
        return it == m.end() ? 0 : it->second;
    };
    for (const auto * side : {&base, &bgps}) {
        for (const auto & [w, n] : *side) {
            if (n > 0 && !out.count(w)) {
                out.emplace(w, categorize(count(base, w), count(bgps, w)));
            }
        }
    }
    return out;
}

std::vector<WordBiasStats> word_bias_stats(std::span<const PromptScore> scores, const WordCounts & baseline,
                                           const StopWords & stop_words) {
    std::vector<std::set<std::string>> present(scores.size());
    std::vector<std::string> prompts;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!(scores[i].target_prob >= 0.0 && scores[i].target_prob <= 1.0)) {
            throw InvalidArgument("word_bias_stats: target_prob outside [0, 1]");
        }
        for (auto & w : text::words(scores[i].prompt)) {
            if (!stop_words.count(w)) {
                present[i].insert(std::move(w));
            }
        }
        prompts.push_back(scores[i].prompt);
    }
    const WordCounts freq = word_frequencies(prompts, stop_words);

    std::vector<WordBiasStats> out;
    out.reserve(freq.size());
    for (const auto & [word, f] : freq) {
        double in_sum = 0.0, out_sum = 0.0;
        std::size_t in_n = 0, out_n = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (present[i].count(word)) {
                in_sum += scores[i].target_prob;
                ++in_n;
            } else {
                out_sum += scores[i].target_prob;
                ++out_n;
            }
        }
        WordBiasStats s;
        s.word = word;
        s.f_bgps = f;
        auto base_it = baseline.find(word);
        s.f_base = base_it == baseline.end() ? 0 : base_it->second;
        s.category = categorize(s.f_base, s.f_bgps);
        s.p_w = in_sum / static_cast<double>(in_n);
        if (out_n > 0) {
            s.p_notw = out_sum / static_cast<double>(out_n);
            s.delta = s.p_w - *s.p_notw;
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<WordBiasStats> word_bias_stats(std::span<const PromptScore> scores, const WordCounts & baseline) {
    return word_bias_stats(scores, baseline, text::default_stop_words());
}

std::vector<std::size_t> proportion_histogram(std::span<const double> values, int bins) {
    if (bins < 1) {
        throw InvalidArgument("proportion_histogram: bins must be >= 1");
    }
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (double v : values) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw InvalidArgument("proportion_histogram: value outside [0, 1]");
        }
        auto b = static_cast<std::size_t>(std::floor(v * bins));
        ++counts[std::min(b, counts.size() - 1)];
    }
    return counts;
}

std::vector<WordcloudRecord> export_wordcloud_data(std::span<const WordBiasStats> stats, std::size_t top_n,
                                                   std::size_t min_frequency) {
    std::vector<const WordBiasStats *> eligible;
    for (const auto & s : stats) {
        if (s.f_bgps >= min_frequency && s.f_bgps > 0) {
            eligible.push_back(&s);
        }
    }
    std::sort(eligible.begin(), eligible.end(), [](const WordBiasStats * a, const WordBiasStats * b) {
        if (a->delta.has_value() != b->delta.has_value()) {
            return a->delta.has_value();
        }
        if (a->delta && *a->delta != *b->delta) {
            return *a->delta > *b->delta;
        }
        return a->word < b->word;
    });
    eligible.resize(std::min(top_n, eligible.size()));
    std::vector<WordcloudRecord> out;
    for (const auto * s : eligible) {
        out.push_back({s->word, s->f_bgps, s->delta});
    }
    return out;
}

std::map<Category, std::size_t> category_summary(const std::map<std::string, Category> & categories) {
    std::map<Category, std::size_t> out{{Category::injected, 0},
                                        {Category::deleted, 0},
                                        {Category::dampened, 0},
                                        {Category::augmented, 0},
                                        {Category::unchanged, 0}};
    for (const auto & [w, c] : categories) {
        ++out[c];
    }
    return out;
}

nlohmann::json to_json(const WordBiasStats & s) {
    nlohmann::json j{{"word", s.word},
                     {"f_base", s.f_base},
                     {"f_bgps", s.f_bgps},
                     {"category", to_string(s.category)},
                     {"p_w", s.p_w}};
    j["p_notw"] = s.p_notw ? nlohmann::json(*s.p_notw) : nlohmann::json(nullptr);
    j["delta"] = s.delta ? nlohmann::json(*s.delta) : nlohmann::json(nullptr);
    j["delta_undefined"] = !s.delta.has_value();
    return j;
}

std::string wordcloud_csv(std::span<const WordcloudRecord> records) {
    std::ostringstream out;
    out.precision(17);
    out << "word,size,shade\r\n";
    for (const auto & r : records) {
        out << text::csv_field(r.word) << ',' << r.size << ',';
        if (r.shade) {
            out << *r.shade;
        }
        out << "\r\n";
    }
    return out.str();
}

}  // namespace bgps::analysis
