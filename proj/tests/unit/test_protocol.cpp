// The wire protocol's golden transcript: every exchange under
// protocol/fixtures must match what the stub produces today, decode through
// the client parsers, and replay into the same results as in-process scoring.
#include "bgps/error.hpp"
#include "bgps/json_io.hpp"
#include "bgps/sidecar_client.hpp"
#include "bgps/synthbench.hpp"

#include "goldens.hpp"

#include <gtest/gtest.h>

using namespace bgps;
using namespace bgps::testing;

namespace {

std::vector<Golden> shipped() { return load_goldens(BGPS_PROTOCOL_FIXTURES); }

const Golden & find(const std::vector<Golden> & all, const std::string & suffix) {
    for (const auto & g : all) {
        if (g.name.size() >= suffix.size() && g.name.compare(g.name.size() - suffix.size(), suffix.size(), suffix) == 0 &&
            g.name[g.name.size() - suffix.size() - 1] == '_') {
            return g;
        }
    }
    throw std::runtime_error("no golden named *_" + suffix);
}

}  // namespace

TEST(Goldens, ShippedTranscriptIsCurrent) {
    const auto disk = shipped();
    const auto now = record_goldens();
    ASSERT_EQ(disk.size(), now.size()) << "regenerate with record_goldens protocol/fixtures";
    for (std::size_t i = 0; i < now.size(); ++i) {
        EXPECT_EQ(canonical_dump(golden_to_json(disk[i])), canonical_dump(golden_to_json(now[i]))) << now[i].name;
    }
}

TEST(Goldens, EveryEndpointIsCovered) {
    std::set<std::string> paths;
    for (const auto & g : shipped()) {
        paths.insert(g.exchange.path);
    }
    for (const char * p : {"/v1/capabilities", "/v1/tokenize", "/v1/next_token_logprobs", "/v1/bias_logprob",
                           "/v1/generate", "/v1/classify", "/v1/pez"}) {
        EXPECT_TRUE(paths.count(p)) << p;
    }
}

TEST(Goldens, RequestsComeFromClientBuilders) {
    const auto all = shipped();
    EXPECT_EQ(find(all, "bias_logprob").exchange.request, sidecar::bias_request_payload(golden_bias_request(4)));
    EXPECT_EQ(find(all, "pez").exchange.request, sidecar::pez_payload(golden_pez_request(3)));
    EXPECT_EQ(find(all, "generate").exchange.request,
              sidecar::generate_payload(kGoldenPrompt, kGoldenImages, kGoldenImageSeed, {}));
    const auto & bias = find(all, "bias_logprob").exchange.request;
    for (const char * k : {"prompt", "attribute", "target_class", "k", "t_prime", "seed", "fixed_latents"}) {
        EXPECT_TRUE(bias.contains(k)) << k;
    }
    const auto & next = find(all, "next_token_root").exchange.request;
    for (const char * k : {"token_ids", "system_prompt", "user_prompt", "model_prefix", "top_k"}) {
        EXPECT_TRUE(next.contains(k)) << k;
    }
}

TEST(Goldens, ResponsesDecode) {
    const auto all = shipped();
    const auto f = synth::make_fixture("biased4");
    const auto info = sidecar::parse_capabilities(find(all, "capabilities").exchange.response);
    EXPECT_EQ(info.protocol, sidecar::kProtocolVersion);
    EXPECT_EQ(info.vocab_size, f.lm.vocab_size());

    const auto root = sidecar::parse_next_token(find(all, "next_token_root").exchange.response, 4);
    EXPECT_FALSE(root.is_truncated);
    std::vector<double> lps;
    for (const auto & e : root.entries) {
        lps.push_back(e.second);
    }
    EXPECT_NEAR(log_sum_exp(lps), 0.0, 1e-6);
    EXPECT_TRUE(sidecar::parse_next_token(find(all, "next_token_truncated").exchange.response, 2).is_truncated);

    const auto rows = sidecar::parse_bias(find(all, "bias_logprob").exchange.response, golden_bias_request(4));
    EXPECT_EQ(rows.size(), 4u);
    EXPECT_EQ(sidecar::parse_bias(find(all, "bias_logprob_k1").exchange.response, golden_bias_request(1)).size(), 1u);
    EXPECT_EQ(find(all, "bias_logprob_unknown_attribute").exchange.status, 404);

    const auto labels = sidecar::parse_labels(find(all, "classify").exchange.response, f.attribute);
    EXPECT_EQ(labels.size(), static_cast<std::size_t>(kGoldenImages));

    const auto pez = sidecar::parse_pez(find(all, "pez").exchange.response);
    EXPECT_EQ(pez.loss_trace.size(), 3u);
    const auto pez0 = sidecar::parse_pez(find(all, "pez_zero_iters").exchange.response);
    EXPECT_EQ(pez0.prompt, "a");
    EXPECT_TRUE(pez0.loss_trace.empty());
}

TEST(Goldens, ReplayMatchesInProcessScoring) {
    const auto f = synth::make_fixture("biased4");
    StubSidecar stub(f);
    std::vector<Exchange> transcript;
    for (const auto & g : shipped()) {
        transcript.push_back(g.exchange);
    }
    stub.replay(transcript);
    const auto ep = sidecar::SidecarEndpoint::connect(stub.url());

    const auto remote = ep.remote_bias_logprob(golden_bias_request(4));
    const auto local = bias_logprob(f.scorer, golden_bias_request(4));
    EXPECT_EQ(remote.per_sample, local.per_sample);
    EXPECT_EQ(remote.target_logprob, local.target_logprob);

    const PromptTemplate tmpl{"", "Describe a person.", ""};
    const auto d = ep.remote_next_token_logprobs(TokenSeq{}, tmpl, 4);
    EXPECT_EQ(d.entries, f.lm.next_token_logprobs(TokenSeq{}, tmpl, 4).entries);

    const synth::ToyImageLabeler lab(f.scorer);
    EXPECT_EQ(ep.remote_generate_classify(kGoldenPrompt, f.attribute, kGoldenImages, kGoldenImageSeed, {}),
              lab.generate_classify(kGoldenPrompt, f.attribute, kGoldenImages, kGoldenImageSeed));

    EXPECT_EQ(ep.tokenize(kGoldenPrompt), f.lm.tokenize(kGoldenPrompt));
    EXPECT_EQ(ep.detokenize(std::vector<TokenId>{0, 2}), "a w");

    // a request outside the transcript is not silently answered
    auto other = golden_bias_request(4);
    other.seed = 12;
    EXPECT_THROW(ep.remote_bias_logprob(other), ServerError);
}

TEST(Goldens, JsonRoundTrip) {
    for (const auto & g : record_goldens()) {
        EXPECT_EQ(golden_to_json(golden_from_json(golden_to_json(g))), golden_to_json(g));
    }
}
