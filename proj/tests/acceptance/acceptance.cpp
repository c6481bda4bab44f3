// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include "bgps/analysis.hpp"
#include "bgps/cli.hpp"
#include "bgps/core.hpp"
#include "bgps/eval.hpp"
#include "bgps/json_io.hpp"
#include "bgps/search.hpp"
#include "bgps/synthbench.hpp"

#include "reference.hpp"

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace bgps;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool ok = true;
    std::string detail;

    void fail(const std::string & why) {
        if (ok) {
            detail = why;
        }
        ok = false;
    }
};

AttributeSpec two_class() { return {"synthetic", {"target", "other"}, 0}; }

Outcome oracle_equivalence() {
    Outcome out;
    const auto t0 = Clock::now();
    for (const auto & name : synth::fixture_names()) {
        const auto f = synth::make_fixture(name);
        if (f.lm.vocab_size() > 5 || f.search.max_len > 4) {
            out.fail(name + " exceeds the oracle size bound");
            continue;
        }
        const auto cfg = synth::exhaustive_config(f);
        const auto r = run_search(cfg, f.attribute, f.lm, f.scorer, {});
        const auto o = synth::brute_force_argmax(f.lm, f.scorer, f.attribute, cfg);
        if (r.best.seq.token_ids != o.best.seq.token_ids) {
            out.fail(name + ": sequence differs from brute force");
        } else if (!(std::abs(r.best.joint_score - o.best.joint_score) <= 1e-12)) {
            out.fail(name + ": J differs from brute force");
        }
    }
    const double secs = seconds_since(t0);
    if (secs >= 5.0) {
        out.fail("took " + std::to_string(secs) + " s");
    }
    if (out.ok) {
        out.detail = std::to_string(synth::fixture_names().size()) + " fixtures in " + std::to_string(secs) + " s";
    }
    return out;
}

Outcome lambda_zero_reduction() {
    Outcome out;
    std::mt19937_64 gen(20240);
    const synth::ToyBiasScorer scorer({{"w0", 2.0}, {"w1", -1.0}}, 0.0, 2);
    for (int trial = 0; trial < 20; ++trial) {
        const auto lm = bgps::testing::random_toy_lm(gen, 2 + trial % 4, 1 + trial % 3);
        SearchConfig cfg;
        cfg.lambda = 0.0;
        cfg.deterministic_mode = true;
        cfg.beam_size = 1 + trial % 5;
        cfg.expand = 1 + trial % 3;
        cfg.extra_expand = 1 + trial % 2;
        cfg.max_len = 2 + trial % 5;
        cfg.num_latents = 2;
        const auto r = run_search(cfg, two_class(), lm, scorer, {});
        const auto ref = bgps::testing::reference_lm_beam(lm, cfg);
        if (r.best.seq.token_ids != ref.tokens) {
            out.fail("trial " + std::to_string(trial) + ": sequence differs from reference beam search");
        }
    }
    if (out.ok) {
        out.detail = "20 random LMs";
    }
    return out;
}

// Independent estimate of the target-class probability of a prompt: mean
// softmax probability over 256 noise draws unrelated to the search latents.
double target_probability(const synth::ToyBiasScorer & scorer, const std::string & prompt, std::size_t target) {
    double sum = 0.0;
    constexpr int kDraws = 256;
    for (int s = 0; s < kDraws; ++s) {
        sum += std::exp(scorer.sample_logprobs(prompt, 0xace, static_cast<std::uint64_t>(s), true).at(target));
    }
    return sum / kDraws;
}

Outcome lambda_monotonicity() {
    Outcome out;
    const auto t0 = Clock::now();
    const auto f = synth::make_fixture("biased4");
    std::vector<double> means;
    for (double lambda : {0.0, 10.0, 100.0}) {
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            SearchConfig cfg = f.search;
            cfg.lambda = lambda;
            cfg.deterministic_mode = false;
            cfg.beam_size = 3;
            cfg.expand = 2;
            cfg.extra_expand = 2;
            cfg.seed = seed;
            const auto r = run_search(cfg, f.attribute, f.lm, f.scorer, {});
            const auto text = scored_prompt_text(f.lm, {}, r.best.seq.token_ids);
            total += target_probability(f.scorer, text, f.attribute.target_class);
        }
        means.push_back(total / 50.0);
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "mean target prob %.4f, %.4f, %.4f", means[0], means[1], means[2]);
    if (!(means[0] <= means[1] && means[1] <= means[2])) {
        out.fail(std::string("not non-decreasing: ") + buf);
    }
    const double secs = seconds_since(t0);
    if (secs >= 60.0) {
        out.fail("took " + std::to_string(secs) + " s");
    }
    if (out.ok) {
        out.detail = buf;
    }
    return out;
}

using Big = boost::multiprecision::cpp_dec_float_50;

double lme_reference(const std::vector<double> & v) {
    Big sum = 0;
    for (double x : v) {
        sum += boost::multiprecision::exp(Big(x));
    }
    return static_cast<double>(boost::multiprecision::log(sum / Big(static_cast<int>(v.size()))));
}

Outcome numerical_stability() {
    Outcome out;
    std::mt19937_64 gen(7);
    std::uniform_int_distribution<int> size(1, 32);
    std::uniform_real_distribution<double> deep(-700.0, -600.0), wide(-700.0, 0.0);
    double worst = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<double> v(static_cast<std::size_t>(size(gen)));
        for (auto & x : v) {
            x = trial % 2 ? deep(gen) : wide(gen);
        }
        const double got = log_mean_exp(v);
        const double mx = *std::max_element(v.begin(), v.end());
        const double k = static_cast<double>(v.size());
        if (!(got <= mx + 1e-12 && got >= mx - std::log(k) - 1e-12)) {
            out.fail("sandwich bound broken on trial " + std::to_string(trial));
        }
        if (trial < 2000) {
            const double err = std::abs(got - lme_reference(v));
            worst = std::max(worst, err);
            if (!(err <= 1e-9)) {
                out.fail("differs from the 50-digit oracle by " + std::to_string(err));
            }
        }
    }
    if (out.ok) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "1e4 vectors, worst oracle error %.3g", worst);
        out.detail = buf;
    }
    return out;
}

Outcome eos_bookkeeping() {
    Outcome out;
    std::mt19937_64 gen(99);
    for (int trial = 0; trial < 1000 && out.ok; ++trial) {
        const auto lm = bgps::testing::random_toy_lm(gen, 2 + trial % 3, 1 + trial % 2);
        const synth::ToyBiasScorer scorer({{"w0", 1.0}, {"w1", -0.5}}, 0.4, 2);
        SearchConfig cfg;
        cfg.beam_size = 2 + trial % 4;
        cfg.expand = 1 + trial % 3;
        cfg.extra_expand = 2;
        cfg.max_len = 3 + trial % 4;
        cfg.min_len = 1 + trial % 2;
        cfg.num_latents = 3;
        cfg.temperature = 1.0 + trial % 5;
        cfg.fixed_latents = trial % 3 == 0;
        cfg.seed = static_cast<std::uint64_t>(trial);
        const auto r = run_search(cfg, two_class(), lm, scorer, {});
        const auto where = "trial " + std::to_string(trial) + ": ";
        std::vector<std::vector<TokenId>> active{{}};
        int budget = cfg.beam_size;
        std::size_t finished_total = 0;
        for (const auto & s : r.ledger.steps) {
            if (s.beam_budget != budget) {
                out.fail(where + "beam budget not decremented by finished beams");
                break;
            }
            for (const auto & c : s.candidates) {
                if (c.parent >= active.size()) {
                    out.fail(where + "candidate parent out of range");
                    break;
                }
                const auto & p = active[c.parent];
                if (c.token_ids.size() != p.size() + 1 || !std::equal(p.begin(), p.end(), c.token_ids.begin()) ||
                    (!p.empty() && p.back() == lm.eos_id())) {
                    out.fail(where + "a finished or unknown beam was expanded");
                    break;
                }
            }
            if (s.kept.size() > static_cast<std::size_t>(budget)) {
                out.fail(where + "kept more beams than the budget");
            }
            std::vector<std::vector<TokenId>> next;
            std::size_t newly = 0;
            for (std::size_t k : s.kept) {
                if (s.candidates.at(k).token_ids.back() == lm.eos_id()) {
                    ++newly;
                } else {
                    next.push_back(s.candidates[k].token_ids);
                }
            }
            if (newly != s.finished.size()) {
                out.fail(where + "finished list disagrees with kept eos beams");
            }
            budget -= static_cast<int>(newly);
            finished_total += newly;
            active = std::move(next);
        }
        if (finished_total != r.finished.size()) {
            out.fail(where + "finished count mismatch");
        }
        double best = kNegInf;
        for (const auto * set : {&r.finished, &r.final_active}) {
            for (const auto & b : *set) {
                best = std::max(best, b.joint_score);
            }
        }
        if (r.best.joint_score != best) {
            out.fail(where + "best is not the argmax over finished and final active beams");
        }
    }
    if (out.ok) {
        out.detail = "1000 random runs";
    }
    return out;
}

Outcome eval_statistics() {
    Outcome out;
    const std::vector<double> pair{1.0, 0.0};
    const auto ci = eval::ci95(pair);
    if (std::abs(ci.mean - 0.5) > 1e-15 || std::abs(ci.halfwidth - 0.980) > 0.001) {
        out.fail("ci95([1,0]) = " + std::to_string(ci.mean) + " +- " + std::to_string(ci.halfwidth));
    }
    for (std::size_t v : {2u, 10u, 50u}) {
        const auto lm = synth::ToyLM::uniform(v);
        std::string prompt;
        for (std::size_t i = 0; i < 7; ++i) {
            prompt += (i ? " t" : "t") + std::to_string(i % (v - 1));
        }
        const double ppl = eval::perplexity(prompt, lm);
        // log(1/V) is itself rounded, so "exactly" means within a few ulps
        if (!(std::abs(ppl - static_cast<double>(v)) <= 4.0 * std::numeric_limits<double>::epsilon() * v)) {
            out.fail("uniform V=" + std::to_string(v) + " perplexity " + std::to_string(ppl));
        }
    }
    std::mt19937_64 gen(5);
    const std::vector<std::string> words{"man",   "woman", "nurse", "his",  "lady",  "desk", "doctor",
                                         "girl",  "red",   "she",   "boy",  "calm",  "hers", "office"};
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1), len(0, 5), count(1, 12);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::string> prompts(count(gen));
        for (auto & p : prompts) {
            for (std::size_t k = len(gen); k > 0; --k) {
                p += (p.empty() ? "" : " ") + words[pick(gen)];
            }
        }
        std::vector<std::string> small, large;
        for (const auto & w : words) {
            if (gen() % 3 == 0) {
                small.push_back(w);
                large.push_back(w);
            } else if (gen() % 2 == 0) {
                large.push_back(w);
            }
        }
        if (eval::explicit_term_rate(prompts, large).rate < eval::explicit_term_rate(prompts, small).rate) {
            out.fail("explicit-term rate dropped under a lexicon superset on trial " + std::to_string(trial));
        }
    }
    if (out.ok) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "ci95([1,0]) = 0.5 +- %.4f", ci.halfwidth);
        out.detail = buf;
    }
    return out;
}

std::set<std::string> word_set(const std::string & s) {
    std::set<std::string> out;
    std::string cur;
    for (char ch : s + " ") {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.insert(cur);
            cur.clear();
        }
    }
    return out;
}

Outcome analysis_correctness() {
    Outcome out;
    std::mt19937_64 gen(31);
    const std::vector<std::string> words{"nurse", "doctor", "smiling", "office", "red",  "tall",
                                         "calm",  "desk",   "coat",    "park",   "city", "book"};
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1), len(1, 5), count(1, 20);
    std::uniform_real_distribution<double> prob(0.0, 1.0);
    const analysis::StopWords none;
    auto random_prompts = [&] {
        std::vector<std::string> ps(count(gen));
        for (auto & p : ps) {
            for (std::size_t k = len(gen); k > 0; --k) {
                p += (p.empty() ? "" : ", ") + words[pick(gen)];
            }
        }
        return ps;
    };
    for (int trial = 0; trial < 200 && out.ok; ++trial) {
        const auto base = random_prompts();
        const auto ours = random_prompts();
        const auto fb = analysis::word_frequencies(base, none);
        const auto fo = analysis::word_frequencies(ours, none);
        std::set<std::string> observed;
        for (const auto * ps : {&base, &ours}) {
            for (const auto & p : *ps) {
                const auto ws = word_set(p);
                observed.insert(ws.begin(), ws.end());
            }
        }
        const auto cats = analysis::categorize_words(fb, fo);
        std::set<std::string> categorized;
        for (const auto & [w, c] : cats) {
            categorized.insert(w);
        }
        if (categorized != observed) {
            out.fail("categories do not partition the observed vocabulary on trial " + std::to_string(trial));
        }

        std::vector<analysis::PromptScore> scores;
        std::vector<double> probs;
        for (const auto & p : ours) {
            scores.push_back({p, prob(gen)});
            probs.push_back(scores.back().target_prob);
        }
        for (const auto & s : analysis::word_bias_stats(scores, fb, none)) {
            double in = 0, outside = 0;
            int nin = 0, nout = 0;
            for (const auto & ps : scores) {
                if (word_set(ps.prompt).count(s.word)) {
                    in += ps.target_prob, ++nin;
                } else {
                    outside += ps.target_prob, ++nout;
                }
            }
            const bool defined = nout > 0;
            if (s.delta.has_value() != defined ||
                (defined && !(std::abs(*s.delta - (in / nin - outside / nout)) <= 1e-12))) {
                out.fail("delta of '" + s.word + "' differs from brute force on trial " + std::to_string(trial));
            }
        }
        const int bins = 1 + trial % 12;
        std::size_t total = 0;
        for (auto c : analysis::proportion_histogram(probs, bins)) {
            total += c;
        }
        if (total != ours.size()) {
            out.fail("histogram counts do not sum to the prompt count on trial " + std::to_string(trial));
        }
    }
    if (out.ok) {
        out.detail = "200 random prompt-set pairs";
    }
    return out;
}

std::string slurp(const fs::path & p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism() {
    Outcome out;
    const auto root = fs::temp_directory_path() / "bgps_acceptance_determinism";
    fs::remove_all(root);
    auto cfg = cli::load_run_config(data_dir() / "configs" / "synthetic_biased4.json");
    cfg.num_prompts = 5;
    cfg.output_dir = (root / "a").string();
    const auto a = cli::cmd_search(cfg);
    cfg.output_dir = (root / "b").string();
    const auto b = cli::cmd_search(cfg);
    const auto pa = slurp(a / "prompts.jsonl");
    if (pa.empty() || pa != slurp(b / "prompts.jsonl")) {
        out.fail("prompts.jsonl differs between runs");
    }
    std::size_t files = 0;
    for (const auto & e : fs::directory_iterator(a / "runs")) {
        const auto rel = fs::relative(e.path(), a);
        const auto sa = slurp(a / rel / "steps.jsonl");
        if (sa.empty() || sa != slurp(b / rel / "steps.jsonl")) {
            out.fail(rel.string() + "/steps.jsonl differs between runs");
        }
        ++files;
    }
    if (files != 5) {
        out.fail("expected 5 run ledgers, found " + std::to_string(files));
    }
    fs::remove_all(root);
    if (out.ok) {
        out.detail = "prompts.jsonl and 5 steps.jsonl byte-identical";
    }
    return out;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"oracle equivalence", oracle_equivalence},   {"lambda=0 reduction", lambda_zero_reduction},
        {"lambda monotonicity", lambda_monotonicity}, {"numerical stability", numerical_stability},
        {"eos bookkeeping", eos_bookkeeping},         {"eval statistics", eval_statistics},
        {"analysis correctness", analysis_correctness}, {"determinism", determinism},
    };
    int failures = 0;
    for (const auto & [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception & e) {
            o.fail(std::string("threw: ") + e.what());
        }
        std::printf("%s %s: %s\n", o.ok ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        failures += o.ok ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
