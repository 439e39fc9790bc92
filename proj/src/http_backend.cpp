#include "cedh/http_backend.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <thread>

namespace cedh {

namespace {

// Strips ASCII whitespace plus the leading-space markers that BPE ("Ġ") and
// SentencePiece ("▁") vocabularies put on token strings.
std::string trim(std::string_view s) {
    static constexpr std::string_view kMarkers[] = {" ", "\t", "\n", "\r", "\xC4\xA0", "\xE2\x96\x81"};
    for (bool stripped = true; stripped && !s.empty();) {
        stripped = false;
        for (auto m : kMarkers)
            if (s.substr(0, m.size()) == m) {
                s.remove_prefix(m.size());
                stripped = true;
            }
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\n' || s.back() == '\r'))
        s.remove_suffix(1);
    return std::string(s);
}

double log_add(double a, double b) {
    if (std::isinf(a) && a < 0) return b;
    if (std::isinf(b) && b < 0) return a;
    const double hi = std::max(a, b);
    return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

}  // namespace

HttpCompletionBackend::HttpCompletionBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw ConfigError("http backend needs a base URL");
    if (config_.max_attempts < 1) throw ConfigError("http backend max_attempts must be >= 1");
    descriptor_.kind = BackendKind::HttpCompletion;
    descriptor_.model_id = config_.model_id;
    descriptor_.endpoint = config_.base_url;
    descriptor_.token_env = config_.token_env;
    descriptor_.reports_memory = config_.reports_memory;
}

nlohmann::json HttpCompletionBackend::completion_request(const std::string& prompt,
                                                         const SamplingPolicy& policy,
                                                         int logprobs) const {
    nlohmann::json body;
    body["model"] = config_.model_id;
    body["prompt"] = prompt;
    body["max_tokens"] = policy.max_new_tokens;
    if (policy.mode == DecodeMode::Greedy) {
        body["temperature"] = 0.0;
        body["top_p"] = 1.0;
    } else {
        body["temperature"] = policy.temperature;
        body["top_p"] = policy.nucleus_p;
    }
    body["seed"] = policy.seed;
    if (logprobs > 0) body["logprobs"] = logprobs;
    return body;
}

nlohmann::json HttpCompletionBackend::post_json(const std::string& path,
                                                const nlohmann::json& body) const {
    httplib::Headers headers;
    if (!config_.token_env.empty())
        if (const char* token = std::getenv(config_.token_env.c_str()); token && *token)
            headers.emplace("Authorization", std::string("Bearer ") + token);

    const std::string payload = body.dump();
    auto backoff = config_.backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        httplib::Client client(config_.base_url);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        auto res = body.is_null() ? client.Get(path, headers)
                                  : client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
        } else if (res->status >= 500 || res->status == 429) {
            last_error = "server returned HTTP " + std::to_string(res->status);
        } else if (res->status >= 400) {
            throw ProtocolError(path + " returned HTTP " + std::to_string(res->status) + ": " +
                                res->body.substr(0, 200));
        } else {
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::parse_error&) {
                throw ProtocolError(path + " returned a body that is not JSON");
            }
        }
        if (attempt < config_.max_attempts) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
    throw TransportError(config_.base_url + path + ": " + last_error + " after " +
                         std::to_string(config_.max_attempts) + " attempts");
}

Completion HttpCompletionBackend::complete(const std::string& prompt, const SamplingPolicy& policy) {
    policy.validate();
    auto reply = post_json("/v1/completions", completion_request(prompt, policy, 0));
    try {
        Completion c;
        c.text = reply.at("choices").at(0).at("text").get<std::string>();
        return c;
    } catch (const nlohmann::json::exception&) {
        throw ProtocolError("completion reply lacks choices[0].text");
    }
}

std::optional<LabelLogprobs> HttpCompletionBackend::first_token_logprobs(
    const nlohmann::json& reply) const {
    const nlohmann::json* top = nullptr;
    try {
        const auto& lp = reply.at("choices").at(0).at("logprobs");
        if (lp.is_null()) return std::nullopt;
        top = &lp.at("top_logprobs").at(0);
    } catch (const nlohmann::json::exception&) {
        throw CapabilityError("server did not return log-probabilities; use vote-only mode");
    }
    if (!top->is_object()) throw ProtocolError("top_logprobs[0] is not an object");
    const double neg_inf = -std::numeric_limits<double>::infinity();
    double err = neg_inf, not_ = neg_inf;
    for (auto it = top->begin(); it != top->end(); ++it) {
        if (!it.value().is_number()) continue;
        std::string tok = trim(it.key());
        if (tok == "ERR") err = log_add(err, it.value().get<double>());
        if (tok == "NOT") not_ = log_add(not_, it.value().get<double>());
    }
    if (std::isinf(err) || std::isinf(not_)) return std::nullopt;
    return renormalize_logprobs(err, not_);
}

double HttpCompletionBackend::joint_label_logprob(const std::string& prompt,
                                                  std::string_view label) const {
    nlohmann::json body;
    body["model"] = config_.model_id;
    body["prompt"] = prompt + " " + std::string(label);
    body["max_tokens"] = 0;
    body["echo"] = true;
    body["logprobs"] = 1;
    body["temperature"] = 0.0;
    auto reply = post_json("/v1/completions", body);
    try {
        const auto& lp = reply.at("choices").at(0).at("logprobs");
        const auto& offsets = lp.at("text_offset");
        const auto& values = lp.at("token_logprobs");
        double total = 0.0;
        bool any = false;
        for (std::size_t i = 0; i < offsets.size() && i < values.size(); ++i) {
            if (offsets[i].get<std::size_t>() < prompt.size() || values[i].is_null()) continue;
            total += values[i].get<double>();
            any = true;
        }
        if (!any) throw ProtocolError("echo reply has no tokens after the prompt");
        return total;
    } catch (const nlohmann::json::exception&) {
        throw CapabilityError("server cannot score label continuations (echo + logprobs)");
    }
}

std::optional<std::vector<long long>> HttpCompletionBackend::tokenize(const std::string& text) const {
    if (!config_.tokenize) return std::nullopt;
    auto reply = post_json("/tokenize", nlohmann::json{{"content", text}});
    try {
        return reply.at("tokens").get<std::vector<long long>>();
    } catch (const nlohmann::json::exception&) {
        throw ProtocolError("tokenize reply lacks a tokens array");
    }
}

bool HttpCompletionBackend::labels_are_single_tokens() const {
    auto err = tokenize(" ERR");
    auto not_ = tokenize(" NOT");
    if (!err || !not_) return true;  // unknown; decided from top_logprobs
    return err->size() == 1 && not_->size() == 1 && err->front() != not_->front();
}

LabelLogprobs HttpCompletionBackend::label_logits(const std::string& prompt) {
    if (!config_.logprobs)
        throw CapabilityError("backend '" + config_.model_id +
                              "' is configured without log-probabilities; use vote-only mode");
    if (labels_are_single_tokens()) {
        SamplingPolicy greedy;
        greedy.max_new_tokens = 1;
        auto reply = post_json("/v1/completions", completion_request(prompt, greedy, config_.top_logprobs));
        if (auto lp = first_token_logprobs(reply)) return *lp;
    }
    return renormalize_logprobs(joint_label_logprob(prompt, "ERR"), joint_label_logprob(prompt, "NOT"));
}

MemoryProbe HttpCompletionBackend::probe_memory() {
    if (config_.reports_memory) {
        try {
            auto reply = post_json("/v1/memory", nullptr);
            if (reply.contains("peak_memory_bytes") && reply["peak_memory_bytes"].is_number_unsigned())
                return {reply["peak_memory_bytes"].get<std::uint64_t>(), MemorySource::BackendReported};
        } catch (const BackendError&) {
        }
    }
    return process_memory_probe();
}

std::optional<TokenCounter> HttpCompletionBackend::token_counter() const {
    if (!config_.tokenize) return std::nullopt;
    return TokenCounter([this](std::string_view text) {
        return tokenize(std::string(text))->size();
    });
}

}  // namespace cedh
