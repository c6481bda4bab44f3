#include "bgps/sidecar_client.hpp"

#include "bgps/error.hpp"
#include "bgps/json_io.hpp"
#include "bgps/rng.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <map>
#include <mutex>
#include <semaphore>
#include <thread>

namespace bgps::sidecar {

using nlohmann::json;

namespace {

std::string idx_path(const std::string & base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

const json & field(const json & j, const std::string & key, const std::string & path) {
    if (!j.is_object()) {
        throw SchemaViolation(path.empty() ? "$" : path, "expected an object");
    }
    auto it = j.find(key);
    if (it == j.end()) {
        throw SchemaViolation(path.empty() ? key : path + "." + key, "missing field");
    }
    return *it;
}

const json & array_field(const json & j, const std::string & key) {
    const json & v = field(j, key, "");
    if (!v.is_array()) {
        throw SchemaViolation(key, "expected an array");
    }
    return v;
}

std::int64_t int_value(const json & v, const std::string & path) {
    if (!v.is_number_integer()) {
        throw SchemaViolation(path, "expected an integer");
    }
    return v.get<std::int64_t>();
}

bool transient_status(int status) { return status == 429 || status == 502 || status == 503 || status == 504; }

}  // namespace

void GenerationParams::validate(int t_prime) const {
    if (steps < 1 || t_prime > steps) {
        throw InvalidArgument("generation steps (" + std::to_string(steps) + ") must cover t_prime (" +
                              std::to_string(t_prime) + ")");
    }
}

json bias_request_payload(const BiasScoreRequest & r) {
    return json{{"prompt", r.prompt_text},
                {"attribute", r.attribute.attribute_name},
                {"target_class", r.attribute.target_class},
                {"k", r.num_latents},
                {"t_prime", r.t_prime},
                {"seed", r.seed},
                {"fixed_latents", r.fixed_latents}};
}

json next_token_payload(const TokenSeq & context, const PromptTemplate & instructions, std::size_t top_k) {
    return json{{"token_ids", context.token_ids},
                {"system_prompt", instructions.system_prompt},
                {"user_prompt", instructions.user_prompt},
                {"model_prefix", instructions.model_prefix},
                {"top_k", top_k}};
}

json generate_payload(const std::string & prompt, int n, std::uint64_t seed, const GenerationParams & p) {
    return json{{"prompt", prompt},
                {"n", n},
                {"seed", seed},
                {"params",
                 {{"steps", p.steps},
                  {"guidance", p.guidance},
                  {"scheduler", p.scheduler},
                  {"width", p.width},
                  {"height", p.height}}}};
}

json pez_payload(const PezRequest & r) {
    return json{{"init_prompt", r.init_prompt},
                {"k_tokens", r.k_tokens},
                {"insert_position", r.insert_position},
                {"attribute", r.attribute.attribute_name},
                {"target_class", r.attribute.target_class},
                {"iters", r.iters},
                {"seed", r.seed}};
}

ServerInfo parse_capabilities(const json & j) {
    ServerInfo info;
    info.protocol = static_cast<int>(int_value(field(j, "protocol", ""), "protocol"));
    const json & caps = array_field(j, "capabilities");
    for (std::size_t i = 0; i < caps.size(); ++i) {
        if (!caps[i].is_string()) {
            throw SchemaViolation(idx_path("capabilities", i), "expected a string");
        }
        info.capabilities.insert(caps[i].get<std::string>());
    }
    if (j.contains("backend_id")) {
        if (!j["backend_id"].is_string()) {
            throw SchemaViolation("backend_id", "expected a string");
        }
        info.backend_id = j["backend_id"].get<std::string>();
    }
    if (info.capabilities.count(capability::logits)) {
        info.vocab_size = static_cast<std::size_t>(int_value(field(j, "vocab_size", ""), "vocab_size"));
        info.eos_id = static_cast<TokenId>(int_value(field(j, "eos_id", ""), "eos_id"));
        if (info.vocab_size == 0 || info.eos_id < 0 || static_cast<std::size_t>(info.eos_id) >= info.vocab_size) {
            throw SchemaViolation("eos_id", "outside the vocabulary");
        }
    }
    return info;
}

NextTokenDistribution parse_next_token(const json & j, std::size_t top_k) {
    NextTokenDistribution d;
    d.vocab_size = static_cast<std::size_t>(int_value(field(j, "vocab_size", ""), "vocab_size"));
    const json & trunc = field(j, "is_truncated", "");
    if (!trunc.is_boolean()) {
        throw SchemaViolation("is_truncated", "expected a boolean");
    }
    d.is_truncated = trunc.get<bool>();
    const json & entries = array_field(j, "entries");
    if (entries.size() > top_k) {
        throw SchemaViolation("entries", "more than top_k entries");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::string path = idx_path("entries", i);
        const json & e = entries[i];
        if (!e.is_array() || e.size() != 2) {
            throw SchemaViolation(path, "expected [token_id, logprob]");
        }
        const auto id = int_value(e[0], path + "[0]");
        if (id < 0 || static_cast<std::size_t>(id) >= d.vocab_size) {
            throw SchemaViolation(path + "[0]", "token id outside the vocabulary");
        }
        const double lp = decode_logprob(e[1], path + "[1]");
        if (std::isnan(lp) || lp > 1e-12) {
            throw SchemaViolation(path + "[1]", "log-prob must be <= 0");
        }
        if (!d.entries.empty() && lp > d.entries.back().second) {
            throw SchemaViolation(path + "[1]", "entries not sorted by log-prob");
        }
        d.entries.emplace_back(static_cast<TokenId>(id), std::min(lp, 0.0));
    }
    return d;
}

SampleClassLogprobs parse_bias(const json & j, const BiasScoreRequest & request) {
    const json & rows = array_field(j, "per_sample");
    if (rows.size() != static_cast<std::size_t>(request.num_latents)) {
        throw SchemaViolation("per_sample", "expected " + std::to_string(request.num_latents) + " samples");
    }
    if (j.contains("class_names") &&
        j["class_names"] != json(request.attribute.class_names)) {
        throw SchemaViolation("class_names", "server class order differs from the attribute spec");
    }
    SampleClassLogprobs out;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::string path = idx_path("per_sample", k);
        if (!rows[k].is_array()) {
            throw SchemaViolation(path, "expected an array");
        }
        std::vector<double> row;
        for (std::size_t c = 0; c < rows[k].size(); ++c) {
            row.push_back(decode_logprob(rows[k][c], idx_path(path, c)));
        }
        out.push_back(std::move(row));
    }
    // width and normalization checks carry the per_sample[k] path
    (void)aggregate_bias(out, request.attribute);
    return out;
}

std::vector<int> parse_labels(const json & j, const AttributeSpec & attribute) {
    const json & labels = array_field(j, "labels");
    std::vector<int> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto & l = labels[i];
        if (l.is_string() && l.get<std::string>() == "none") {
            out.push_back(-1);
            continue;
        }
        const auto v = int_value(l, idx_path("labels", i));
        if (v < 0 || static_cast<std::size_t>(v) >= attribute.class_names.size()) {
            throw SchemaViolation(idx_path("labels", i), "label outside the attribute classes");
        }
        out.push_back(static_cast<int>(v));
    }
    return out;
}

PezResult parse_pez(const json & j) {
    PezResult r;
    const json & prompt = field(j, "prompt", "");
    if (!prompt.is_string()) {
        throw SchemaViolation("prompt", "expected a string");
    }
    r.prompt = prompt.get<std::string>();
    const json & trace = array_field(j, "loss_trace");
    for (std::size_t i = 0; i < trace.size(); ++i) {
        if (!trace[i].is_number()) {
            throw SchemaViolation(idx_path("loss_trace", i), "expected a number");
        }
        r.loss_trace.push_back(trace[i].get<double>());
    }
    const json & conv = field(j, "converged", "");
    if (!conv.is_boolean()) {
        throw SchemaViolation("converged", "expected a boolean");
    }
    r.converged = conv.get<bool>();
    return r;
}

std::string default_base_url() {
    if (const char * env = std::getenv("BGPS_SIDECAR_URL"); env != nullptr && *env != '\0') {
        return env;
    }
    return "http://127.0.0.1:8765";
}

// ---------------------------------------------------------------------------

struct SidecarEndpoint::State {
    std::string base_url;
    ClientOptions options;
    ServerInfo info;

    std::counting_semaphore<1024> in_flight;
    mutable std::mutex mutex;  // guards cache, log and cache_enabled
    std::map<std::string, json> cache;
    std::vector<CallRecord> log;
    bool cache_enabled;

    State(std::string url, ClientOptions opts)
        : base_url(std::move(url)),
          options(std::move(opts)),
          in_flight(std::clamp(options.max_in_flight, 1, 1024)),
          cache_enabled(options.cache) {}

    httplib::Headers headers() const {
        httplib::Headers h{{kProtocolHeader, std::to_string(kProtocolVersion)}};
        if (!options.bearer_token.empty()) {
            h.emplace("Authorization", "Bearer " + options.bearer_token);
        }
        return h;
    }

    std::unique_ptr<httplib::Client> client() const {
        auto c = std::make_unique<httplib::Client>(base_url);
        const auto timeout = std::chrono::milliseconds(options.timeout_ms);
        c->set_connection_timeout(timeout);
        c->set_read_timeout(timeout);
        c->set_write_timeout(timeout);
        c->set_keep_alive(false);
        return c;
    }

    // One request with retries. Returns the parsed body and the attempt count.
    std::pair<json, int> send(const std::string & method, const std::string & path, const std::string & body) {
        in_flight.acquire();
        struct Release {
            std::counting_semaphore<1024> & s;
            ~Release() { s.release(); }
        } release{in_flight};

        int backoff = std::max(options.backoff_ms, 0);
        std::string last_error;
        bool last_was_timeout = false;
        bool last_was_connect = false;
        int last_status = 0;
        for (int attempt = 1; attempt <= options.max_retries + 1; ++attempt) {
            auto c = client();
            httplib::Result res = method == "GET" ? c->Get(path, headers())
                                                  : c->Post(path, headers(), body, "application/json");
            if (!res) {
                const auto err = res.error();
                last_was_timeout = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
                last_was_connect = err == httplib::Error::Connection;
                last_status = 0;
                last_error = httplib::to_string(err);
            } else if (res->status >= 200 && res->status < 300) {
                if (auto h = res->get_header_value(kProtocolHeader);
                    !h.empty() && h != std::to_string(kProtocolVersion)) {
                    throw ProtocolVersionMismatch("sidecar speaks protocol " + h + ", client speaks " +
                                                  std::to_string(kProtocolVersion));
                }
                try {
                    return {json::parse(res->body), attempt};
                } catch (const json::parse_error & e) {
                    throw SchemaViolation("$", std::string("response is not JSON: ") + e.what());
                }
            } else {
                last_status = res->status;
                last_was_timeout = last_was_connect = false;
                last_error = res->body;
                try {
                    const auto j = json::parse(res->body);
                    if (j.is_object() && j.contains("error") && j["error"].is_string()) {
                        last_error = j["error"].get<std::string>();
                    }
                } catch (const json::parse_error &) {
                }
                if (!transient_status(res->status)) {
                    throw ServerError(res->status, last_error);
                }
            }
            if (attempt <= options.max_retries) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff *= 2;
            }
        }
        if (last_status != 0) {
            throw ServerError(last_status, last_error);
        }
        if (last_was_timeout) {
            throw Timeout(method + " " + base_url + path + " timed out");
        }
        if (last_was_connect) {
            throw Unreachable("cannot reach sidecar at " + base_url + ": " + last_error);
        }
        throw Unreachable(method + " " + base_url + path + " failed: " + last_error);
    }
};

SidecarEndpoint::SidecarEndpoint(std::shared_ptr<State> state) : state_(std::move(state)) {}

SidecarEndpoint SidecarEndpoint::connect(const std::string & base_url, ClientOptions options) {
    auto state = std::make_shared<State>(base_url, std::move(options));
    json caps;
    try {
        caps = state->send("GET", "/v1/capabilities", "").first;
    } catch (const ServerError & e) {
        throw Unreachable("capability probe failed: " + std::string(e.what()));
    }
    state->info = parse_capabilities(caps);
    if (state->info.protocol != kProtocolVersion) {
        throw ProtocolVersionMismatch("sidecar speaks protocol " + std::to_string(state->info.protocol) +
                                      ", client speaks " + std::to_string(kProtocolVersion));
    }
    return SidecarEndpoint(std::move(state));
}

const std::string & SidecarEndpoint::base_url() const { return state_->base_url; }
const ServerInfo & SidecarEndpoint::info() const { return state_->info; }
bool SidecarEndpoint::has(const std::string & cap) const { return state_->info.capabilities.count(cap) > 0; }

void SidecarEndpoint::require(const std::string & cap) const {
    if (!has(cap)) {
        throw UnknownCapability("sidecar at " + state_->base_url + " does not advertise '" + cap + "'");
    }
}

json SidecarEndpoint::post(const std::string & path, const json & payload, const std::string & cap) const {
    require(cap);
    const std::string body = canonical_dump(payload);
    const std::string key = state_->base_url + path + "\n" + body;
    const std::uint64_t hash = fnv1a64(key);
    {
        std::lock_guard lock(state_->mutex);
        if (state_->cache_enabled) {
            if (auto it = state_->cache.find(key); it != state_->cache.end()) {
                state_->log.push_back({path, hash, true, 0});
                return it->second;
            }
        }
    }
    auto [response, attempts] = state_->send("POST", path, body);
    std::lock_guard lock(state_->mutex);
    state_->log.push_back({path, hash, false, attempts});
    if (state_->cache_enabled) {
        state_->cache.emplace(key, response);
    }
    return response;
}

std::vector<TokenId> SidecarEndpoint::tokenize(const std::string & text) const {
    const json r = post("/v1/tokenize", json{{"text", text}}, capability::logits);
    const json & ids = array_field(r, "token_ids");
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out.push_back(static_cast<TokenId>(int_value(ids[i], idx_path("token_ids", i))));
    }
    return out;
}

std::string SidecarEndpoint::detokenize(std::span<const TokenId> tokens) const {
    const json r = post("/v1/tokenize", json{{"token_ids", std::vector<TokenId>(tokens.begin(), tokens.end())}},
                        capability::logits);
    const json & t = field(r, "text", "");
    if (!t.is_string()) {
        throw SchemaViolation("text", "expected a string");
    }
    return t.get<std::string>();
}

NextTokenDistribution SidecarEndpoint::remote_next_token_logprobs(const TokenSeq & context,
                                                                  const PromptTemplate & instructions,
                                                                  std::size_t top_k) const {
    if (top_k < 1) {
        throw InvalidArgument("next_token_logprobs: top_k must be >= 1");
    }
    return parse_next_token(post("/v1/next_token_logprobs", next_token_payload(context, instructions, top_k),
                                 capability::logits),
                            top_k);
}

SampleClassLogprobs SidecarEndpoint::remote_sample_class_logprobs(const BiasScoreRequest & request) const {
    return parse_bias(post("/v1/bias_logprob", bias_request_payload(request), capability::bias_score), request);
}

BiasScore SidecarEndpoint::remote_bias_logprob(const BiasScoreRequest & request) const {
    if (request.prompt_text.empty()) {
        throw InvalidArgument("bias_logprob: prompt_text must be non-empty");
    }
    return aggregate_bias(remote_sample_class_logprobs(request), request.attribute);
}

std::vector<int> SidecarEndpoint::remote_generate_classify(const std::string & prompt,
                                                           const AttributeSpec & attribute, int n,
                                                           std::uint64_t seed,
                                                           const GenerationParams & params) const {
    require(capability::classify);
    const json gen = post("/v1/generate", generate_payload(prompt, n, seed, params), capability::generate);
    const json & images = array_field(gen, "images");
    if (images.size() != static_cast<std::size_t>(n)) {
        throw SchemaViolation("images", "expected " + std::to_string(n) + " images");
    }
    const json cls = post("/v1/classify",
                          json{{"images", images},
                               {"attribute", attribute.attribute_name},
                               {"multi_face", has(capability::multi_face)}},
                          capability::classify);
    return parse_labels(cls, attribute);
}

PezResult SidecarEndpoint::remote_pez(const PezRequest & request) const {
    return parse_pez(post("/v1/pez", pez_payload(request), capability::pez));
}

std::vector<CallRecord> SidecarEndpoint::call_log() const {
    std::lock_guard lock(state_->mutex);
    return state_->log;
}

void SidecarEndpoint::set_cache_enabled(bool enabled) const {
    std::lock_guard lock(state_->mutex);
    state_->cache_enabled = enabled;
}

// ---------------------------------------------------------------------------

RemoteLanguageModel::RemoteLanguageModel(SidecarEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    endpoint_.require(capability::logits);
}

std::string RemoteLanguageModel::backend_id() const { return endpoint_.info().backend_id; }
TokenId RemoteLanguageModel::eos_id() const { return endpoint_.info().eos_id; }
std::size_t RemoteLanguageModel::vocab_size() const { return endpoint_.info().vocab_size; }

std::vector<TokenId> RemoteLanguageModel::tokenize(std::string_view text) const {
    return endpoint_.tokenize(std::string(text));
}

std::string RemoteLanguageModel::detokenize(std::span<const TokenId> tokens) const {
    return endpoint_.detokenize(tokens);
}

NextTokenDistribution RemoteLanguageModel::next_token_logprobs(const TokenSeq & context,
                                                               const PromptTemplate & instructions,
                                                               std::size_t top_k) const {
    return endpoint_.remote_next_token_logprobs(context, instructions, top_k);
}

RemoteBiasScorer::RemoteBiasScorer(SidecarEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    endpoint_.require(capability::bias_score);
}

SampleClassLogprobs RemoteBiasScorer::sample_class_logprobs(const BiasScoreRequest & request) const {
    return endpoint_.remote_sample_class_logprobs(request);
}

RemoteImageLabeler::RemoteImageLabeler(SidecarEndpoint endpoint, GenerationParams params)
    : endpoint_(std::move(endpoint)), params_(std::move(params)) {
    endpoint_.require(capability::generate);
    endpoint_.require(capability::classify);
}

std::vector<int> RemoteImageLabeler::generate_classify(const std::string & prompt, const AttributeSpec & attribute,
                                                       int n, std::uint64_t seed) const {
    return endpoint_.remote_generate_classify(prompt, attribute, n, seed, params_);
}

}  // namespace bgps::sidecar
