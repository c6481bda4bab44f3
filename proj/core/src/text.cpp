#include "bgps/text.hpp"

#include <cctype>
#include <sstream>

namespace bgps::text {

std::string normalize(std::string_view s) {
    std::string out(s);
    for (char & ch : out) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80) {
            if (std::ispunct(c)) {
                ch = ' ';
            } else {
                ch = static_cast<char>(std::tolower(c));
            }
        }
    }
    return out;
}

std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in(normalize(s));
    for (std::string w; in >> w;) {
        out.push_back(std::move(w));
    }
    return out;
}

const std::set<std::string, std::less<>> & default_stop_words() {
    static const std::set<std::string, std::less<>> words{
        "a",     "about", "above", "after", "again", "against", "all",   "am",    "an",     "and",   "any",
        "are",   "as",    "at",    "be",    "been",  "before",  "being", "below", "between", "both", "but",
        "by",    "can",   "could", "did",   "do",    "does",    "doing", "down",  "during", "each",  "few",
        "for",   "from",  "further", "had", "has",   "have",    "having", "here", "how",    "i",     "if",
        "in",    "into",  "is",    "it",    "its",   "itself",  "just",  "more",  "most",   "my",    "no",
        "nor",   "not",   "now",   "of",    "off",   "on",      "once",  "only",  "or",     "other", "our",
        "out",   "over",  "own",   "s",     "same",  "should",  "so",    "some",  "such",   "t",     "than",
        "that",  "the",   "their", "them",  "then",  "there",   "these", "they",  "this",   "those", "through",
        "to",    "too",   "under", "until", "up",    "very",    "was",   "we",    "were",   "what",  "when",
        "where", "which", "while", "who",   "whom",  "why",     "will",  "with",  "would",  "you",   "your"};
    return words;
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(s);
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace bgps::text
