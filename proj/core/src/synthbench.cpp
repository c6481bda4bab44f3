#include "bgps/synthbench.hpp"

#include "bgps/error.hpp"
#include "bgps/json_io.hpp"
#include "bgps/rng.hpp"
#include "bgps/search.hpp"
#include "detail/json_reader.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace bgps::synth {

namespace {

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    for (std::string w; in >> w;) {
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<double> log_softmax(const std::vector<double> & logits) {
    const double hi = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) {
        sum += std::exp(l - hi);
    }
    const double lse = hi + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::min(logits[i] - lse, 0.0);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ToyLM

ToyLM::ToyLM(std::vector<std::string> vocab, const std::string & eos_token, int order, Table table,
             std::string backend_id, std::size_t context_window)
    : vocab_(std::move(vocab)),
      eos_(-1),
      order_(order),
      table_(std::move(table)),
      backend_id_(std::move(backend_id)),
      context_window_(context_window) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        if (!index_.emplace(vocab_[i], static_cast<TokenId>(i)).second) {
            throw InvalidArgument("ToyLM: duplicate token '" + vocab_[i] + "'");
        }
        if (vocab_[i] == eos_token) {
            eos_ = static_cast<TokenId>(i);
        }
    }
    validate();
}

void ToyLM::validate() const {
    if (eos_ < 0) {
        throw InvalidArgument("ToyLM: eos token missing from vocabulary");
    }
    if (order_ < 0) {
        throw InvalidArgument("ToyLM: order must be >= 0");
    }
    if (!table_.count({})) {
        throw InvalidArgument("ToyLM: table needs the empty context");
    }
    for (const auto & [ctx, probs] : table_) {
        if (ctx.size() > static_cast<std::size_t>(order_)) {
            throw InvalidArgument("ToyLM: context longer than the model order");
        }
        if (probs.size() != vocab_.size()) {
            throw InvalidArgument("ToyLM: row width differs from vocabulary size");
        }
        double sum = 0.0;
        for (double p : probs) {
            if (!(p >= 0.0)) {
                throw InvalidArgument("ToyLM: negative probability");
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw InvalidArgument("ToyLM: row does not sum to 1");
        }
    }

    // eos must be reachable from every context
    auto resolve = [&](std::vector<TokenId> ctx) {
        if (ctx.size() > static_cast<std::size_t>(order_)) {
            ctx.erase(ctx.begin(), ctx.end() - order_);
        }
        while (!table_.count(ctx)) {
            ctx.erase(ctx.begin());
        }
        return ctx;
    };
    std::set<std::vector<TokenId>> terminating;
    bool grew = true;
    while (grew) {
        grew = false;
        for (const auto & [ctx, probs] : table_) {
            if (terminating.count(ctx)) {
                continue;
            }
            bool ok = probs[eos_] > 0.0;
            for (std::size_t t = 0; !ok && t < probs.size(); ++t) {
                if (probs[t] > 0.0 && static_cast<TokenId>(t) != eos_) {
                    auto next = ctx;
                    next.push_back(static_cast<TokenId>(t));
                    ok = terminating.count(resolve(next)) > 0;
                }
            }
            if (ok) {
                terminating.insert(ctx);
                grew = true;
            }
        }
    }
    if (terminating.size() != table_.size()) {
        throw InvalidArgument("ToyLM: eos is unreachable from some context");
    }
}

ToyLM ToyLM::uniform(std::size_t vocab_size, std::string backend_id) {
    if (vocab_size < 2) {
        throw InvalidArgument("ToyLM::uniform needs at least two tokens");
    }
    std::vector<std::string> vocab;
    for (std::size_t i = 0; i + 1 < vocab_size; ++i) {
        vocab.push_back("t" + std::to_string(i));
    }
    vocab.emplace_back("</s>");
    Table table{{{}, std::vector<double>(vocab_size, 1.0 / static_cast<double>(vocab_size))}};
    return ToyLM(std::move(vocab), "</s>", 0, std::move(table), std::move(backend_id));
}

ToyLM ToyLM::smoothed(const ToyLM & base, double mix, std::string backend_id) {
    if (!(mix > 0.0 && mix <= 1.0)) {
        throw InvalidArgument("ToyLM::smoothed: mix must lie in (0, 1]");
    }
    const double u = 1.0 / static_cast<double>(base.vocab_size());
    Table table = base.table_;
    for (auto & [ctx, probs] : table) {
        for (double & p : probs) {
            p = (1.0 - mix) * p + mix * u;
        }
    }
    return ToyLM(base.vocab_, base.vocab_.at(base.eos_), base.order_, std::move(table), std::move(backend_id),
                 base.context_window_);
}

std::vector<TokenId> ToyLM::tokenize(std::string_view text) const {
    std::vector<TokenId> out;
    for (const auto & w : split_words(text)) {
        auto it = index_.find(w);
        if (it == index_.end()) {
            throw UnknownToken(backend_id_ + ": unknown token '" + w + "'");
        }
        out.push_back(it->second);
    }
    return out;
}

std::string ToyLM::detokenize(std::span<const TokenId> tokens) const {
    std::string out;
    for (TokenId t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= vocab_.size()) {
            throw UnknownToken(backend_id_ + ": token id out of range");
        }
        if (!out.empty()) {
            out += ' ';
        }
        out += vocab_[t];
    }
    return out;
}

const std::vector<double> & ToyLM::row(std::span<const TokenId> context) const {
    const std::size_t n = std::min(context.size(), static_cast<std::size_t>(order_));
    for (std::size_t len = n + 1; len-- > 0;) {
        std::vector<TokenId> key(context.end() - static_cast<std::ptrdiff_t>(len), context.end());
        if (auto it = table_.find(key); it != table_.end()) {
            return it->second;
        }
    }
    return table_.at({});
}

NextTokenDistribution ToyLM::next_token_logprobs(const TokenSeq & context, const PromptTemplate &,
                                                 std::size_t top_k) const {
    if (top_k < 1) {
        throw InvalidArgument("next_token_logprobs: top_k must be >= 1");
    }
    if (context.size() > context_window_) {
        throw ContextOverflow(backend_id_ + ": context of " + std::to_string(context.size()) +
                              " tokens exceeds the window");
    }
    const auto & probs = row(context.token_ids);
    std::vector<double> lps(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        lps[i] = probs[i] > 0.0 ? std::log(probs[i]) : kNegInf;
    }
    return NextTokenDistribution::from_logprobs(lps, top_k);
}

std::vector<double> ToyLM::sequence_logprobs(std::span<const TokenId> tokens, const PromptTemplate &) const {
    if (tokens.size() > context_window_) {
        throw ContextOverflow(backend_id_ + ": sequence exceeds the window");
    }
    std::vector<double> out;
    out.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const double p = prob(tokens.first(i), tokens[i]);
        out.push_back(p > 0.0 ? std::log(p) : kNegInf);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ToyBiasScorer

ToyBiasScorer::ToyBiasScorer(std::map<std::string, double> word_weights, double noise_sigma, int class_count,
                             int favored_class, std::string attribute_name)
    : word_weights_(std::move(word_weights)),
      noise_sigma_(noise_sigma),
      class_count_(class_count),
      favored_class_(favored_class),
      attribute_name_(std::move(attribute_name)) {
    if (class_count_ < 2 || favored_class_ < 0 || favored_class_ >= class_count_) {
        throw InvalidArgument("ToyBiasScorer: bad class layout");
    }
    if (!(noise_sigma_ >= 0.0)) {
        throw InvalidArgument("ToyBiasScorer: sigma must be >= 0");
    }
}

double ToyBiasScorer::weight_sum(const std::string & prompt) const {
    double sum = 0.0;
    for (const auto & w : split_words(prompt)) {
        if (auto it = word_weights_.find(w); it != word_weights_.end()) {
            sum += it->second;
        }
    }
    return sum;
}

std::vector<double> ToyBiasScorer::sample_logprobs(const std::string & prompt, std::uint64_t seed,
                                                   std::uint64_t sample, bool fixed_latents) const {
    double logit = weight_sum(prompt);
    if (noise_sigma_ > 0.0) {
        const std::uint64_t prompt_key = fixed_latents ? 0 : fnv1a64(prompt);
        logit += noise_sigma_ * counter_normal(seed, sample, prompt_key);
    }
    std::vector<double> logits(static_cast<std::size_t>(class_count_), 0.0);
    logits[static_cast<std::size_t>(favored_class_)] = logit;
    return log_softmax(logits);
}

void ToyBiasScorer::check_attribute(const AttributeSpec & attribute) const {
    if ((!attribute_name_.empty() && attribute.attribute_name != attribute_name_) ||
        attribute.class_names.size() != static_cast<std::size_t>(class_count_)) {
        throw UnknownAttribute("toy scorer does not model attribute '" + attribute.attribute_name + "' with " +
                               std::to_string(attribute.class_names.size()) + " classes");
    }
}

SampleClassLogprobs ToyBiasScorer::sample_class_logprobs(const BiasScoreRequest & request) const {
    check_attribute(request.attribute);
    SampleClassLogprobs out;
    out.reserve(static_cast<std::size_t>(request.num_latents));
    for (int k = 0; k < request.num_latents; ++k) {
        out.push_back(sample_logprobs(request.prompt_text, request.seed, static_cast<std::uint64_t>(k),
                                      request.fixed_latents));
    }
    return out;
}

// ---------------------------------------------------------------------------
// ToyImageLabeler

ToyImageLabeler::ToyImageLabeler(ToyBiasScorer scorer, double no_face_rate)
    : scorer_(std::move(scorer)), no_face_rate_(no_face_rate) {}

std::vector<int> ToyImageLabeler::generate_classify(const std::string & prompt, const AttributeSpec & attribute,
                                                    int n, std::uint64_t seed) const {
    if (attribute.class_names.size() != static_cast<std::size_t>(scorer_.class_count())) {
        throw UnknownAttribute("toy labeler: class count mismatch");
    }
    const std::uint64_t key = fnv1a64(prompt);
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::uint64_t image_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        if (no_face_rate_ > 0.0 && counter_uniform(image_seed, 1, key) < no_face_rate_) {
            labels.push_back(-1);
            continue;
        }
        const auto lps = scorer_.sample_logprobs(prompt, image_seed, 0, false);
        const double u = counter_uniform(image_seed, 2, key);
        double acc = 0.0;
        int label = static_cast<int>(lps.size()) - 1;
        for (std::size_t c = 0; c < lps.size(); ++c) {
            acc += std::exp(lps[c]);
            if (u < acc) {
                label = static_cast<int>(c);
                break;
            }
        }
        labels.push_back(label);
    }
    return labels;
}

// ---------------------------------------------------------------------------
// brute-force oracle

std::vector<Beam> enumerate_outcomes(const ToyLM & lm, const ToyBiasScorer & scorer, const AttributeSpec & attribute,
                                     const SearchConfig & cfg, const PromptTemplate & tmpl) {
    const double space = std::pow(static_cast<double>(lm.vocab_size()), cfg.max_len);
    if (space > 1e6) {
        throw OracleTooLarge("oracle space |V|^max_len = " + std::to_string(space) + " exceeds 1e6");
    }
    if (scorer.noise_sigma() > 0.0 && !cfg.fixed_latents) {
        throw InvalidArgument("oracle needs a noiseless scorer or fixed_latents");
    }

    const TokenId eos = lm.eos_id();
    std::vector<Beam> outcomes;

    auto score = [&](std::vector<TokenId> tokens, double lm_logprob, bool finished) {
        std::vector<TokenId> content = tokens;
        if (finished) {
            content.pop_back();
        }
        const std::string text = compose_prompt(tmpl.model_prefix, lm.detokenize(content));
        if (text.empty()) {
            return;
        }
        BiasScoreRequest req;
        req.prompt_text = text;
        req.attribute = attribute;
        req.num_latents = cfg.num_latents;
        req.t_prime = cfg.t_prime;
        req.seed = latent_seed(cfg, static_cast<int>(tokens.size()), 0);
        req.fixed_latents = cfg.fixed_latents;
        const double cls = bias_logprob(scorer, req).target_logprob;

        Beam b;
        b.seq.token_ids = std::move(tokens);
        b.seq.surface_text = lm.detokenize(b.seq.token_ids);
        b.seq.backend_id = lm.backend_id();
        b.lm_logprob = lm_logprob;
        b.cls_logprob = cls;
        b.joint_score = cls == kNegInf ? (cfg.lambda > 0.0 ? kNegInf : lm_logprob)
                                       : joint_score(lm_logprob, cls, cfg.lambda);
        b.finished = finished;
        b.step_born = static_cast<int>(b.seq.token_ids.size());
        outcomes.push_back(std::move(b));
    };

    // depth-first over content prefixes
    std::vector<std::pair<std::vector<TokenId>, double>> stack{{{}, 0.0}};
    while (!stack.empty()) {
        auto [prefix, lp] = std::move(stack.back());
        stack.pop_back();
        const auto & probs = lm.row(prefix);
        const std::size_t depth = prefix.size();
        if (depth + 1 > static_cast<std::size_t>(cfg.max_len)) {
            continue;
        }
        for (std::size_t t = 0; t < probs.size(); ++t) {
            if (probs[t] <= 0.0) {
                continue;
            }
            auto next = prefix;
            next.push_back(static_cast<TokenId>(t));
            const double next_lp = lp + std::log(probs[t]);
            if (static_cast<TokenId>(t) == eos) {
                if (depth >= static_cast<std::size_t>(cfg.min_len)) {
                    score(std::move(next), next_lp, true);
                }
            } else if (next.size() == static_cast<std::size_t>(cfg.max_len)) {
                score(std::move(next), next_lp, false);
            } else {
                stack.emplace_back(std::move(next), next_lp);
            }
        }
    }
    return outcomes;
}

OracleResult brute_force_argmax(const ToyLM & lm, const ToyBiasScorer & scorer, const AttributeSpec & attribute,
                                const SearchConfig & cfg, const PromptTemplate & tmpl) {
    auto outcomes = enumerate_outcomes(lm, scorer, attribute, cfg, tmpl);
    if (outcomes.empty()) {
        throw InvalidArgument("oracle: the LM has no outcome within the length bounds");
    }
    OracleResult r;
    r.enumerated = outcomes.size();
    r.best = *std::min_element(outcomes.begin(), outcomes.end(), beam_precedes);
    return r;
}

// ---------------------------------------------------------------------------
// fixtures

SearchConfig exhaustive_config(const Fixture & fixture) {
    SearchConfig cfg = fixture.search;
    const auto v = static_cast<double>(fixture.lm.vocab_size());
    double outcomes = 0.0;
    for (int d = 1; d <= cfg.max_len; ++d) {
        outcomes += std::pow(v, d);
    }
    cfg.beam_size = static_cast<int>(outcomes) + 1;
    cfg.expand = static_cast<int>(fixture.lm.vocab_size());
    cfg.extra_expand = 1;
    cfg.deterministic_mode = true;
    return cfg;
}

Fixture parse_fixture(const nlohmann::json & j) {
    detail::ObjectReader r(j, "");
    std::string name;
    int version = 1;
    std::vector<std::string> vocab;
    std::string eos = "</s>";
    int order = 1;
    std::map<std::string, double> weights;
    double sigma = 0.0;
    int class_count = 2;
    int favored = 0;
    r.req("name", name);
    r.opt("version", version);
    r.req("vocab", vocab);
    r.opt("eos", eos);
    r.req("order", order);
    r.opt("sigma", sigma);
    r.opt("class_count", class_count);
    r.opt("favored_class", favored);

    ToyLM::Table table;
    const auto * tj = r.get("table");
    if (tj == nullptr || !tj->is_object()) {
        throw ConfigError("table", "expected an object of context -> probabilities");
    }
    std::map<std::string, TokenId> index;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        index[vocab[i]] = static_cast<TokenId>(i);
    }
    for (auto it = tj->begin(); it != tj->end(); ++it) {
        std::vector<TokenId> ctx;
        for (const auto & w : split_words(it.key())) {
            auto found = index.find(w);
            if (found == index.end()) {
                throw ConfigError("table." + it.key(), "context uses a token outside the vocabulary");
            }
            ctx.push_back(found->second);
        }
        table[ctx] = detail::ObjectReader::convert<std::vector<double>>(it.value(), "table." + it.key());
    }

    if (const auto * wj = r.get("word_weights")) {
        if (!wj->is_object()) {
            throw ConfigError("word_weights", "expected an object");
        }
        for (auto it = wj->begin(); it != wj->end(); ++it) {
            weights[it.key()] = detail::ObjectReader::convert<double>(it.value(), "word_weights." + it.key());
        }
    }

    AttributeSpec attribute{"synthetic", {"target", "other"}, 0};
    if (const auto * aj = r.get("attribute")) {
        attribute = attribute_from_json(*aj, "attribute");
    }
    SearchConfig search;
    search.deterministic_mode = true;
    if (const auto * sj = r.get("search")) {
        search = search_config_from_json(*sj, "search");
    }

    std::optional<FixtureExpectation> expected;
    if (const auto * ej = r.get("expected"); ej != nullptr && !ej->is_null()) {
        detail::ObjectReader er(*ej, "expected");
        FixtureExpectation e;
        er.req("text", e.text);
        if (const auto * ids = er.get("token_ids")) {
            e.token_ids = ids->get<std::vector<TokenId>>();
        }
        er.req("J", e.joint);
        er.opt("oracle_commit", e.oracle_commit);
        er.finish();
        expected = std::move(e);
    }
    r.finish();

    try {
        Fixture f{name,
                  ToyLM(std::move(vocab), eos, order, std::move(table), "toy:" + name),
                  ToyBiasScorer(std::move(weights), sigma, class_count, favored, attribute.attribute_name),
                  attribute,
                  search,
                  std::move(expected)};
        (void)version;
        return f;
    } catch (const InvalidArgument & e) {
        throw ConfigError(name, e.what());
    }
}

nlohmann::json fixture_to_json(const Fixture & f) {
    nlohmann::json table = nlohmann::json::object();
    for (const auto & [ctx, probs] : f.lm.table()) {
        table[f.lm.detokenize(ctx)] = probs;
    }
    auto search = to_json(f.search);
    nlohmann::json j{{"name", f.name},
                     {"version", 1},
                     {"vocab", f.lm.vocab()},
                     {"eos", f.lm.vocab().at(f.lm.eos_id())},
                     {"order", f.lm.order()},
                     {"table", table},
                     {"word_weights", f.scorer.word_weights()},
                     {"sigma", f.scorer.noise_sigma()},
                     {"class_count", f.scorer.class_count()},
                     {"favored_class", f.scorer.favored_class()},
                     {"attribute", to_json(f.attribute)},
                     {"search", search}};
    if (f.expected) {
        j["expected"] = {{"text", f.expected->text},
                         {"token_ids", f.expected->token_ids},
                         {"J", f.expected->joint},
                         {"oracle_commit", f.expected->oracle_commit}};
    }
    return j;
}

Fixture load_fixture(const std::filesystem::path & path) { return parse_fixture(read_json_file(path)); }

std::vector<std::string> fixture_names() {
    std::vector<std::string> names;
    std::error_code ec;
    for (const auto & entry : std::filesystem::directory_iterator(data_dir() / "fixtures", ec)) {
        if (entry.path().extension() == ".json") {
            names.push_back(entry.path().stem().string());
        }
    }
    std::sort(names.begin(), names.end());
    return names;
}

Fixture make_fixture(const std::string & name) {
    const auto path = data_dir() / "fixtures" / (name + ".json");
    std::error_code ec;
    if (name.empty() || name.find('/') != std::string::npos || !std::filesystem::is_regular_file(path, ec)) {
        throw UnknownFixture("unknown fixture '" + name + "'");
    }
    return load_fixture(path);
}

}  // namespace bgps::synth
