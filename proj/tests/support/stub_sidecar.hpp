#pragma once

#include "bgps/synthbench.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace bgps::testing {

struct Exchange {
    std::string method;
    std::string path;
    nlohmann::json request;   // null for GET
    int status = 200;
    nlohmann::json response;
};

struct StubOptions {
    std::set<std::string> capabilities{"logits", "bias_score", "generate", "classify", "pez"};
    int protocol = 1;
    std::string backend_id = "stub";
    int fail_first = 0;            // answer this many POSTs with 503 first
    int delay_ms = 0;              // sleep before answering every POST
    bool corrupt_bias = false;     // per_sample rows that do not sum to 1
    std::string required_token;    // expected bearer token, empty for none
};

// In-process HTTP sidecar serving a synthetic fixture over the wire protocol.
class StubSidecar {
  public:
    explicit StubSidecar(synth::Fixture fixture, StubOptions options = {});
    ~StubSidecar();

    StubSidecar(const StubSidecar &) = delete;
    StubSidecar & operator=(const StubSidecar &) = delete;

    std::string url() const;
    int port() const { return port_; }

    // Serve recorded responses keyed by (path, canonical request) instead of
    // computing them; unmatched requests get 404.
    void replay(const std::vector<Exchange> & transcript);

    std::vector<Exchange> transcript() const;
    int post_count() const { return posts_; }
    void clear();

    // Handlers without HTTP, for golden generation.
    Exchange handle(const std::string & method, const std::string & path, const nlohmann::json & request);

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
    std::atomic<int> posts_{0};
};

}  // namespace bgps::testing
