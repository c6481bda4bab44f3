#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bgps::analysis {

using WordCounts = std::map<std::string, std::size_t>;
using StopWords = std::set<std::string, std::less<>>;

enum class Category { injected, deleted, dampened, augmented, unchanged };

std::string_view to_string(Category c);

// Lowercased, punctuation-stripped, whitespace-split word counts with stop
// words removed.
WordCounts word_frequencies(std::span<const std::string> prompts, const StopWords & stop_words);
WordCounts word_frequencies(std::span<const std::string> prompts);

// One category per word seen in either set:
//   injected   base = 0, bgps > 0      deleted    base > 0, bgps = 0
//   dampened   0 < bgps < base         augmented  0 < base < bgps
//   unchanged  base = bgps > 0
std::map<std::string, Category> categorize_words(const WordCounts & base, const WordCounts & bgps);
Category categorize(std::size_t f_base, std::size_t f_bgps);

struct PromptScore {
    std::string prompt;
    double target_prob = 0.0;  // realized target-class frequency from eval
};

struct WordBiasStats {
    std::string word;
    std::size_t f_base = 0;
    std::size_t f_bgps = 0;
    Category category = Category::injected;
    double p_w = 0.0;                 // mean target_prob over prompts containing the word
    std::optional<double> p_notw;     // same over the complement; nullopt when it is empty
    std::optional<double> delta;      // p_w - p_notw
};

// Statistics for every word of the scored prompts. f_bgps counts occurrences
// in the scored prompts; f_base comes from `baseline`.
std::vector<WordBiasStats> word_bias_stats(std::span<const PromptScore> scores, const WordCounts & baseline,
                                           const StopWords & stop_words);
std::vector<WordBiasStats> word_bias_stats(std::span<const PromptScore> scores, const WordCounts & baseline = {});

// Equal-width bins on [0, 1]; the last bin is closed on the right.
// Throws InvalidArgument for bins < 1 or values outside [0, 1].
std::vector<std::size_t> proportion_histogram(std::span<const double> values, int bins);

struct WordcloudRecord {
    std::string word;
    std::size_t size = 0;        // f_bgps
    std::optional<double> shade; // delta
};

// Top `top_n` words with f_bgps >= min_frequency by delta descending, ties
// broken lexicographically; words with undefined delta rank last.
std::vector<WordcloudRecord> export_wordcloud_data(std::span<const WordBiasStats> stats, std::size_t top_n,
                                                   std::size_t min_frequency = 1);

std::map<Category, std::size_t> category_summary(const std::map<std::string, Category> & categories);

nlohmann::json to_json(const WordBiasStats & s);
std::string wordcloud_csv(std::span<const WordcloudRecord> records);

}  // namespace bgps::analysis
