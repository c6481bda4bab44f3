#include "bgps/error.hpp"
#include "bgps/eval.hpp"
#include "bgps/synthbench.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace bgps;

namespace {

AttributeSpec gender() { return {"gender", {"male", "female"}, 0}; }

class ConstantLabeler : public ImageLabeler {
  public:
    explicit ConstantLabeler(int label) : label_(label) {}
    std::vector<int> generate_classify(const std::string & prompt, const AttributeSpec &, int n,
                                       std::uint64_t) const override {
        if (prompt == "boom") {
            throw ScorerUnavailable("generator offline");
        }
        return std::vector<int>(static_cast<std::size_t>(n), label_);
    }

  private:
    int label_;
};

// label sequence given per prompt
class ScriptedLabeler : public ImageLabeler {
  public:
    std::map<std::string, std::vector<int>> script;
    std::vector<int> generate_classify(const std::string & prompt, const AttributeSpec &, int,
                                       std::uint64_t) const override {
        return script.at(prompt);
    }
};

const std::vector<std::string> kGendered{"man", "men", "male", "boy", "he", "him", "his", "woman",
                                         "women", "female", "girl", "she", "her", "hers", "gentleman", "lady"};

}  // namespace

TEST(Ci95, Examples) {
    const std::vector<double> same{0.5, 0.5};
    auto r = eval::ci95(same);
    EXPECT_EQ(r.mean, 0.5);
    EXPECT_EQ(r.halfwidth, 0.0);

    const std::vector<double> split{1.0, 0.0};
    r = eval::ci95(split);
    EXPECT_EQ(r.mean, 0.5);
    // s = sqrt(0.5) with the n-1 denominator
    EXPECT_NEAR(r.halfwidth, 1.96 * std::sqrt(0.5) / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(r.halfwidth, 0.980, 5e-4);

    const std::vector<double> constant(100, 0.92);
    r = eval::ci95(constant);
    EXPECT_NEAR(r.mean, 0.92, 1e-14);
    EXPECT_NEAR(r.halfwidth, 0.0, 1e-15);
}

TEST(Ci95, DegenerateCases) {
    const std::vector<double> one{0.3};
    auto r = eval::ci95(one);
    EXPECT_EQ(r.mean, 0.3);
    EXPECT_EQ(r.halfwidth, 0.0);
    EXPECT_TRUE(r.degenerate);
    r = eval::ci95(std::vector<double>{});
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.n, 0u);
}

TEST(Ci95, PermutationInvariant) {
    std::vector<double> v{0.1, 0.9, 0.4, 0.4, 0.75, 0.0};
    const auto ref = eval::ci95(v);
    std::mt19937 gen(3);
    for (int i = 0; i < 20; ++i) {
        std::shuffle(v.begin(), v.end(), gen);
        const auto r = eval::ci95(v);
        EXPECT_NEAR(r.mean, ref.mean, 1e-15);
        EXPECT_NEAR(r.halfwidth, ref.halfwidth, 1e-15);
    }
}

TEST(Perplexity, UniformGivesVocabularySize) {
    for (std::size_t v : {2u, 10u, 50u}) {
        const auto lm = synth::ToyLM::uniform(v);
        const std::vector<std::string> prompts =
            v == 2 ? std::vector<std::string>{"t0", "t0 t0 t0"}
                   : std::vector<std::string>{"t0", "t0 t0 t1", "t1 t0 t0 t0 t0 t0 t0 t1 t0"};
        for (const auto & p : prompts) {
            EXPECT_DOUBLE_EQ(eval::perplexity(p, lm), static_cast<double>(v)) << v << " " << p;
        }
    }
}

TEST(Perplexity, SingleTokenAtInverseE) {
    const double p = std::exp(-1.0);
    synth::ToyLM::Table t{{{}, {p, 1.0 - p}}};
    const synth::ToyLM lm({"a", "</s>"}, "</s>", 0, t);
    EXPECT_NEAR(eval::perplexity("a", lm), std::numbers::e, 1e-12);
}

TEST(Perplexity, GeometricMeanOfInverseProbabilities) {
    synth::ToyLM::Table t;
    t[{}] = {0.5, 0.25, 0.25};
    t[{0}] = {0.1, 0.6, 0.3};
    const synth::ToyLM lm({"a", "b", "</s>"}, "</s>", 1, t);
    EXPECT_NEAR(eval::perplexity("a b", lm), std::sqrt(1.0 / (0.5 * 0.6)), 1e-12);
}

TEST(Perplexity, ZeroProbabilityIsInfinite) {
    synth::ToyLM::Table t;
    t[{}] = {0.5, 0.25, 0.25};
    t[{0}] = {0.0, 0.5, 0.5};
    const synth::ToyLM lm({"a", "b", "</s>"}, "</s>", 1, t);
    EXPECT_EQ(eval::perplexity("a a", lm), std::numeric_limits<double>::infinity());
}

TEST(Perplexity, EmptyPromptRejected) {
    const auto lm = synth::ToyLM::uniform(3);
    EXPECT_THROW(eval::perplexity("", lm), InvalidArgument);
}

TEST(ExplicitTerms, Examples) {
    const std::vector<std::string> lex{"man", "woman", "he", "she"};
    const std::vector<std::string> two{"a nurse", "a man working"};
    EXPECT_DOUBLE_EQ(eval::explicit_term_rate(two, lex).rate, 0.5);
    const auto empty = eval::explicit_term_rate(std::vector<std::string>{}, lex);
    EXPECT_EQ(empty.rate, 0.0);
    EXPECT_TRUE(empty.empty_input);
    const std::vector<std::string> both{"he said she left"};
    EXPECT_DOUBLE_EQ(eval::explicit_term_rate(both, lex).rate, 1.0);
}

TEST(ExplicitTerms, WholeWordsOnly) {
    const std::vector<std::string> lex{"man", "he"};
    EXPECT_TRUE(eval::explicit_terms("A chairman, then the chef", lex).empty());
    EXPECT_EQ(eval::explicit_terms("The MAN! He...", lex), (std::vector<std::string>{"man", "he"}));
}

TEST(ExplicitTerms, MultiWordEntries) {
    const std::vector<std::string> lex{"young lady"};
    EXPECT_EQ(eval::explicit_terms("a Young, lady", lex), (std::vector<std::string>{"young lady"}));
    EXPECT_TRUE(eval::explicit_terms("a lady young", lex).empty());
}

TEST(ExplicitTerms, EmptyLexicon) {
    const std::vector<std::string> prompts{"a man"};
    EXPECT_THROW(eval::explicit_term_rate(prompts, std::vector<std::string>{}), InvalidLexicon);
    EXPECT_THROW(eval::explicit_term_rate(prompts, std::vector<std::string>{" "}), InvalidLexicon);
}

TEST(ExplicitTerms, SupersetLexiconNeverLowersRate) {
    const std::vector<std::string> prompts{"a nurse", "his desk", "a girl reading", "a doctor", "the lady"};
    std::vector<std::string> lex;
    double prev = 0.0;
    for (const auto & term : kGendered) {
        lex.push_back(term);
        const double r = eval::explicit_term_rate(prompts, lex).rate;
        EXPECT_GE(r, prev);
        prev = r;
    }
    EXPECT_DOUBLE_EQ(prev, 0.6);
}

TEST(GroupFrequencies, IgnoresUnlabeled) {
    const std::vector<int> labels{0, 1, -1, 1};
    const auto f = eval::group_frequencies(labels, 2);
    ASSERT_TRUE(f);
    EXPECT_NEAR((*f)[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR((*f)[1], 2.0 / 3.0, 1e-15);
    EXPECT_FALSE(eval::group_frequencies(std::vector<int>{-1, -1}, 2));
    EXPECT_THROW(eval::group_frequencies(std::vector<int>{2}, 2), InvalidArgument);
}

TEST(EvaluatePrompts, AllOneClass) {
    const ConstantLabeler lab(0);
    const std::vector<std::string> prompts{"a", "b", "c"};
    const auto r = eval::evaluate_prompts(prompts, lab, nullptr, gender(), {});
    EXPECT_EQ(r.mean_freq, (std::vector<double>{1.0, 0.0}));
    EXPECT_EQ(r.ci95_halfwidth, (std::vector<double>{0.0, 0.0}));
    for (const auto & e : r.per_prompt) {
        EXPECT_EQ(e.labels.size(), 10u);
    }
}

TEST(EvaluatePrompts, TwoOppositePrompts) {
    ScriptedLabeler lab;
    lab.script["p"] = std::vector<int>(10, 0);
    lab.script["q"] = std::vector<int>(10, 1);
    const std::vector<std::string> prompts{"p", "q"};
    const auto r = eval::evaluate_prompts(prompts, lab, nullptr, gender(), {});
    EXPECT_EQ(r.mean_freq[0], 0.5);
    EXPECT_NEAR(r.ci95_halfwidth[0], 0.980, 5e-4);
}

TEST(EvaluatePrompts, BackendFailureMarksThePrompt) {
    const ConstantLabeler lab(1);
    const std::vector<std::string> prompts{"ok", "boom", "fine"};
    const auto r = eval::evaluate_prompts(prompts, lab, nullptr, gender(), {});
    ASSERT_EQ(r.per_prompt.size(), 3u);
    EXPECT_FALSE(r.per_prompt[1].ok());
    EXPECT_NE(r.per_prompt[1].error.find("offline"), std::string::npos);
    EXPECT_EQ(r.failed_prompts, 1u);
    EXPECT_EQ(r.mean_freq, (std::vector<double>{0.0, 1.0}));
}

TEST(EvaluatePrompts, MeanFreqInvariants) {
    const auto f = synth::make_fixture("biased4");
    const synth::ToyImageLabeler lab(f.scorer);
    const std::vector<std::string> prompts{"a", "w", "a b", "w w", "b"};
    eval::EvalSettings s;
    s.seed = 21;
    const auto r = eval::evaluate_prompts(prompts, lab, nullptr, f.attribute, s);
    EXPECT_NEAR(r.mean_freq[0] + r.mean_freq[1], 1.0, 1e-9);
    // appending a prompt that sits exactly at the mean keeps the mean
    auto per = r.per_prompt;
    eval::PromptEval at_mean;
    at_mean.prompt = "mean";
    at_mean.labels = {0};
    at_mean.group_freq = r.mean_freq;
    per.push_back(at_mean);
    const auto r2 = eval::aggregate(per, f.attribute, {});
    EXPECT_NEAR(r2.mean_freq[0], r.mean_freq[0], 1e-9);
    EXPECT_NEAR(r2.mean_freq[1], r.mean_freq[1], 1e-9);
}

TEST(EvaluatePrompts, IndependentOfOrderAndParallelism) {
    const auto f = synth::make_fixture("biased4");
    const synth::ToyImageLabeler lab(f.scorer);
    const auto eval_lm = synth::ToyLM::smoothed(f.lm, 0.1);
    std::vector<std::string> prompts{"a", "w", "a b", "w w", "b", "a w b"};
    eval::EvalSettings s;
    s.seed = 4;
    s.lexicon = {"w"};
    const auto ref = eval::evaluate_prompts(prompts, lab, &eval_lm, f.attribute, s);
    std::reverse(prompts.begin(), prompts.end());
    s.parallelism = 3;
    const auto rev = eval::evaluate_prompts(prompts, lab, &eval_lm, f.attribute, s);
    EXPECT_NEAR(ref.mean_freq[0], rev.mean_freq[0], 1e-12);
    EXPECT_NEAR(ref.ppl.mean, rev.ppl.mean, 1e-12);
    EXPECT_NEAR(ref.explicit_rate, rev.explicit_rate, 1e-15);
    EXPECT_DOUBLE_EQ(ref.explicit_rate, 0.5);
    EXPECT_EQ(ref.per_prompt[1].labels, rev.per_prompt[4].labels);
}

TEST(Reports, PromptEvalJsonRoundTrip) {
    eval::PromptEval e;
    e.prompt = "a \"quoted\" prompt";
    e.labels = {0, 1, -1};
    e.group_freq = {0.5, 0.5};
    e.perplexity = 12.5;
    e.explicit_terms = {"he"};
    const auto back = eval::prompt_eval_from_json(eval::to_json(e));
    EXPECT_EQ(back.prompt, e.prompt);
    EXPECT_EQ(back.labels, e.labels);
    EXPECT_EQ(back.group_freq, e.group_freq);
    EXPECT_EQ(back.perplexity, e.perplexity);
    EXPECT_EQ(back.explicit_terms, e.explicit_terms);
    e.perplexity = std::numeric_limits<double>::infinity();
    e.error = "x";
    const auto inf = eval::prompt_eval_from_json(eval::to_json(e));
    EXPECT_EQ(*inf.perplexity, std::numeric_limits<double>::infinity());
    EXPECT_EQ(inf.error, "x");
}

TEST(Reports, CsvAndMarkdownLayout) {
    ScriptedLabeler lab;
    lab.script["a man, smiling"] = {0, 0, 0, 1};
    lab.script["a nurse"] = {0, 1, 1, 1};
    const std::vector<std::string> prompts{"a man, smiling", "a nurse"};
    eval::EvalSettings s;
    s.lexicon = kGendered;
    const auto r = eval::evaluate_prompts(prompts, lab, nullptr, gender(), s);
    const auto csv = eval::report_csv(r);
    EXPECT_EQ(csv, "prompt,class_0,class_1,ppl,explicit_hit\r\n"
                   "\"a man, smiling\",0.75,0.25,,1\r\n"
                   "a nurse,0.25,0.75,,0\r\n");
    const auto md = eval::report_markdown(r, "lambda=10, target=male");
    EXPECT_NE(md.find("| Experiment | male | female | PPL | Explicit% |"), std::string::npos);
    EXPECT_NE(md.find("| lambda=10, target=male | 0.50 ± 0.49 | 0.50 ± 0.49 | n/a | 50 |"), std::string::npos) << md;
}

TEST(Reports, PromptSeedDependsOnTextOnly) {
    EXPECT_EQ(eval::prompt_seed(3, "a nurse"), eval::prompt_seed(3, "a nurse"));
    EXPECT_NE(eval::prompt_seed(3, "a nurse"), eval::prompt_seed(3, "a doctor"));
    EXPECT_NE(eval::prompt_seed(3, "a nurse"), eval::prompt_seed(4, "a nurse"));
}
