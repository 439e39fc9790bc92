#pragma once

#include <chrono>
#include <json.hpp>
#include <string>

#include "cedh/backend.hpp"

namespace cedh {

struct HttpBackendConfig {
    std::string base_url;  // e.g. http://127.0.0.1:8080
    std::string model_id;
    std::string token_env = "CEDH_API_TOKEN";
    bool reports_memory = false;  // server exposes GET /v1/memory
    bool tokenize = false;        // server exposes POST /tokenize
    bool logprobs = true;         // server returns logprobs on /v1/completions
    int top_logprobs = 20;
    int max_attempts = 3;
    std::chrono::milliseconds backoff{250};  // doubled after each failed attempt
    std::chrono::milliseconds timeout{30000};
};

/// Client for a completion server speaking the legacy OpenAI-style
/// /v1/completions protocol. Wire format is documented in docs/protocol.md.
class HttpCompletionBackend final : public Backend {
public:
    explicit HttpCompletionBackend(HttpBackendConfig config);

    Completion complete(const std::string& prompt, const SamplingPolicy& policy) override;
    LabelLogprobs label_logits(const std::string& prompt) override;
    bool supports_logprobs() const override { return config_.logprobs; }
    MemoryProbe probe_memory() override;
    std::optional<TokenCounter> token_counter() const override;
    const BackendDescriptor& descriptor() const override { return descriptor_; }

    // Request bodies, exposed so tests can pin the wire format.
    nlohmann::json completion_request(const std::string& prompt, const SamplingPolicy& policy,
                                      int logprobs) const;

private:
    nlohmann::json post_json(const std::string& path, const nlohmann::json& body) const;
    std::optional<std::vector<long long>> tokenize(const std::string& text) const;
    std::optional<LabelLogprobs> first_token_logprobs(const nlohmann::json& reply) const;
    double joint_label_logprob(const std::string& prompt, std::string_view label) const;
    bool labels_are_single_tokens() const;

    HttpBackendConfig config_;
    BackendDescriptor descriptor_;
};

}  // namespace cedh
