#pragma once

#include "bgps/core.hpp"
#include "bgps/scorers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace bgps::sidecar {

inline constexpr int kProtocolVersion = 1;
inline constexpr const char * kProtocolHeader = "X-BGPS-Protocol";

// Capability names as advertised by GET /v1/capabilities.
namespace capability {
inline constexpr const char * logits = "logits";
inline constexpr const char * bias_score = "bias_score";
inline constexpr const char * generate = "generate";
inline constexpr const char * classify = "classify";
inline constexpr const char * pez = "pez";
inline constexpr const char * multi_face = "multi_face";
}  // namespace capability

struct ClientOptions {
    int timeout_ms = 60000;
    int max_retries = 3;
    int backoff_ms = 100;  // doubled after every failed attempt
    bool cache = true;
    int max_in_flight = 8;
    std::string bearer_token;
};

struct GenerationParams {
    int steps = 50;          // T
    double guidance = 7.5;   // classifier-free guidance scale
    std::string scheduler = "ddim";
    int width = 512;
    int height = 512;

    // Throws InvalidArgument when a paired bias request denoises past `steps`.
    void validate(int t_prime) const;
};

struct ServerInfo {
    int protocol = 0;
    std::set<std::string> capabilities;
    std::string backend_id;
    std::size_t vocab_size = 0;
    TokenId eos_id = -1;
};

struct CallRecord {
    std::string path;
    std::uint64_t payload_hash = 0;
    bool cache_hit = false;
    int attempts = 0;
};

struct PezRequest {
    std::string init_prompt;
    int k_tokens = 4;
    int insert_position = -1;  // -1 places the learnable tokens before the final token
    AttributeSpec attribute;
    int iters = 500;
    std::uint64_t seed = 0;
};

struct PezResult {
    std::string prompt;
    std::vector<double> loss_trace;  // best-so-far loss per iteration
    bool converged = false;
};

// Wire payloads, exposed for the golden-fixture tests.
nlohmann::json bias_request_payload(const BiasScoreRequest & request);
nlohmann::json next_token_payload(const TokenSeq & context, const PromptTemplate & instructions, std::size_t top_k);
nlohmann::json generate_payload(const std::string & prompt, int n, std::uint64_t seed, const GenerationParams & params);
nlohmann::json pez_payload(const PezRequest & request);

// Response decoders; each raises SchemaViolation with the offending field path.
ServerInfo parse_capabilities(const nlohmann::json & j);
NextTokenDistribution parse_next_token(const nlohmann::json & j, std::size_t top_k);
SampleClassLogprobs parse_bias(const nlohmann::json & j, const BiasScoreRequest & request);
std::vector<int> parse_labels(const nlohmann::json & j, const AttributeSpec & attribute);
PezResult parse_pez(const nlohmann::json & j);

// $BGPS_SIDECAR_URL or http://127.0.0.1:8765
std::string default_base_url();

// A connected sidecar. Copies share the connection state and cache.
class SidecarEndpoint {
  public:
    // GET /v1/capabilities. Throws Unreachable or ProtocolVersionMismatch.
    static SidecarEndpoint connect(const std::string & base_url, ClientOptions options = {});

    const std::string & base_url() const;
    const ServerInfo & info() const;
    bool has(const std::string & cap) const;
    // Throws UnknownCapability when the server did not advertise `cap`.
    void require(const std::string & cap) const;

    // POST with caching and retries; `cap` is checked client-side first.
    nlohmann::json post(const std::string & path, const nlohmann::json & payload, const std::string & cap) const;

    std::vector<TokenId> tokenize(const std::string & text) const;
    std::string detokenize(std::span<const TokenId> tokens) const;
    NextTokenDistribution remote_next_token_logprobs(const TokenSeq & context, const PromptTemplate & instructions,
                                                     std::size_t top_k) const;
    SampleClassLogprobs remote_sample_class_logprobs(const BiasScoreRequest & request) const;
    BiasScore remote_bias_logprob(const BiasScoreRequest & request) const;
    std::vector<int> remote_generate_classify(const std::string & prompt, const AttributeSpec & attribute, int n,
                                              std::uint64_t seed, const GenerationParams & params) const;
    PezResult remote_pez(const PezRequest & request) const;

    std::vector<CallRecord> call_log() const;
    void set_cache_enabled(bool enabled) const;

  private:
    struct State;
    explicit SidecarEndpoint(std::shared_ptr<State> state);
    std::shared_ptr<State> state_;
};

class RemoteLanguageModel : public LanguageModel {
  public:
    explicit RemoteLanguageModel(SidecarEndpoint endpoint);

    std::string backend_id() const override;
    TokenId eos_id() const override;
    std::size_t vocab_size() const override;
    std::vector<TokenId> tokenize(std::string_view text) const override;
    std::string detokenize(std::span<const TokenId> tokens) const override;
    NextTokenDistribution next_token_logprobs(const TokenSeq & context, const PromptTemplate & instructions,
                                              std::size_t top_k) const override;

  private:
    SidecarEndpoint endpoint_;
};

class RemoteBiasScorer : public BiasScorer {
  public:
    explicit RemoteBiasScorer(SidecarEndpoint endpoint);
    SampleClassLogprobs sample_class_logprobs(const BiasScoreRequest & request) const override;

  private:
    SidecarEndpoint endpoint_;
};

class RemoteImageLabeler : public ImageLabeler {
  public:
    RemoteImageLabeler(SidecarEndpoint endpoint, GenerationParams params = {});
    std::vector<int> generate_classify(const std::string & prompt, const AttributeSpec & attribute, int n,
                                       std::uint64_t seed) const override;

  private:
    SidecarEndpoint endpoint_;
    GenerationParams params_;
};

}  // namespace bgps::sidecar
