#include "goldens.hpp"

#include "bgps/json_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace bgps::testing {

using nlohmann::json;

BiasScoreRequest golden_bias_request(int k) {
    const auto f = synth::make_fixture("biased4");
    return BiasScoreRequest{kGoldenPrompt, f.attribute, k, 25, 11, true};
}

sidecar::PezRequest golden_pez_request(int iters) {
    const auto f = synth::make_fixture("biased4");
    sidecar::PezRequest r;
    r.init_prompt = "a";
    r.k_tokens = 2;
    r.attribute = f.attribute;
    r.iters = iters;
    r.seed = 0;
    return r;
}

std::vector<Golden> record_goldens() {
    StubSidecar stub(synth::make_fixture("biased4"));
    std::vector<Golden> out;
    auto add = [&](const std::string & name, const std::string & method, const std::string & path, json request) {
        out.push_back({name, stub.handle(method, path, request)});
    };
    const PromptTemplate tmpl{"", "Describe a person.", ""};

    add("capabilities", "GET", "/v1/capabilities", nullptr);
    add("tokenize", "POST", "/v1/tokenize", json{{"text", kGoldenPrompt}});
    add("detokenize", "POST", "/v1/tokenize", json{{"token_ids", {0, 2}}});
    add("next_token_root", "POST", "/v1/next_token_logprobs", sidecar::next_token_payload(TokenSeq{}, tmpl, 4));
    add("next_token_truncated", "POST", "/v1/next_token_logprobs",
        sidecar::next_token_payload(TokenSeq{{0}, "", ""}, tmpl, 2));
    add("bias_logprob", "POST", "/v1/bias_logprob", sidecar::bias_request_payload(golden_bias_request(4)));
    add("bias_logprob_k1", "POST", "/v1/bias_logprob", sidecar::bias_request_payload(golden_bias_request(1)));
    auto unknown = sidecar::bias_request_payload(golden_bias_request(4));
    unknown["attribute"] = "race";
    add("bias_logprob_unknown_attribute", "POST", "/v1/bias_logprob", unknown);
    add("generate", "POST", "/v1/generate",
        sidecar::generate_payload(kGoldenPrompt, kGoldenImages, kGoldenImageSeed, sidecar::GenerationParams{}));
    add("classify", "POST", "/v1/classify",
        json{{"images", out.back().exchange.response.at("images")}, {"attribute", "gender"}, {"multi_face", false}});
    add("pez", "POST", "/v1/pez", sidecar::pez_payload(golden_pez_request(3)));
    add("pez_zero_iters", "POST", "/v1/pez", sidecar::pez_payload(golden_pez_request(0)));

    for (std::size_t i = 0; i < out.size(); ++i) {
        char prefix[8];
        std::snprintf(prefix, sizeof(prefix), "%02zu_", i + 1);
        out[i].name = prefix + out[i].name;
    }
    return out;
}

json golden_to_json(const Golden & g) {
    return json{{"name", g.name},
                {"method", g.exchange.method},
                {"path", g.exchange.path},
                {"request", g.exchange.request},
                {"status", g.exchange.status},
                {"response", g.exchange.response}};
}

Golden golden_from_json(const json & j) {
    Golden g;
    g.name = j.at("name").get<std::string>();
    g.exchange.method = j.at("method").get<std::string>();
    g.exchange.path = j.at("path").get<std::string>();
    g.exchange.request = j.at("request");
    g.exchange.status = j.at("status").get<int>();
    g.exchange.response = j.at("response");
    return g;
}

std::vector<Golden> load_goldens(const std::filesystem::path & dir) {
    std::vector<std::filesystem::path> files;
    for (const auto & e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() == ".json") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Golden> out;
    for (const auto & p : files) {
        out.push_back(golden_from_json(read_json_file(p)));
    }
    return out;
}

void write_goldens(const std::filesystem::path & dir, const std::vector<Golden> & goldens) {
    std::filesystem::create_directories(dir);
    for (const auto & g : goldens) {
        std::ofstream out(dir / (g.name + ".json"), std::ios::binary | std::ios::trunc);
        out << golden_to_json(g).dump(2) << '\n';
    }
}

}  // namespace bgps::testing
