#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "cedh/prompting.hpp"

namespace cedh {

enum class DecodeMode { Greedy, Sampled };

struct SamplingPolicy {
    DecodeMode mode = DecodeMode::Greedy;
    double temperature = 0.2;  // ignored when greedy
    double nucleus_p = 0.9;    // ignored when greedy
    int max_new_tokens = 2;
    std::uint64_t seed = 0;

    static SamplingPolicy greedy() { return {}; }
    static SamplingPolicy sampled(std::uint64_t seed, double temperature = 0.2,
                                  double nucleus_p = 0.9) {
        return {DecodeMode::Sampled, temperature, nucleus_p, 2, seed};
    }
    void validate() const;
};

struct LabelLogprobs {
    double err = 0.0;
    double not_ = 0.0;

    bool operator==(const LabelLogprobs&) const = default;
};

struct Completion {
    std::string text;
    std::optional<LabelLogprobs> label_logprobs;
};

enum class MemorySource { BackendReported, ProcessRss, Unsupported };
std::string_view to_string(MemorySource s);

struct MemoryProbe {
    std::optional<std::uint64_t> bytes;
    MemorySource source = MemorySource::Unsupported;
};

enum class BackendKind { HttpCompletion, ScriptedMock, ParametricMock };
std::string_view to_string(BackendKind k);
BackendKind parse_backend_kind(std::string_view s);

struct BackendDescriptor {
    BackendKind kind = BackendKind::ScriptedMock;
    std::string model_id;
    std::string endpoint;   // base URL for http-completion, script path for mocks
    std::string token_env;  // name of the env var holding the bearer token
    bool reports_memory = false;
};

class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Connection-level failure. Worth retrying.
class TransportError : public BackendError {
public:
    using BackendError::BackendError;
};

// The backend answered, but not with something we can parse.
class ProtocolError : public BackendError {
public:
    using BackendError::BackendError;
};

// The backend cannot do what was asked (e.g. no log-probabilities).
class CapabilityError : public BackendError {
public:
    using BackendError::BackendError;
};

/// A text-completion engine. Implementations must accept concurrent calls.
class Backend {
public:
    virtual ~Backend() = default;

    virtual Completion complete(const std::string& prompt, const SamplingPolicy& policy) = 0;

    /// First-token log-probabilities of ERR vs NOT, renormalized over the two
    /// candidates so exp(err) + exp(not_) == 1. Throws CapabilityError when
    /// the backend exposes no log-probabilities.
    virtual LabelLogprobs label_logits(const std::string& prompt) = 0;

    virtual bool supports_logprobs() const = 0;

    /// Peak memory as reported by the engine if possible; otherwise this
    /// process's resident-set peak.
    virtual MemoryProbe probe_memory() = 0;

    /// Backend-side token estimator, when the engine exposes one.
    virtual std::optional<TokenCounter> token_counter() const { return std::nullopt; }

    virtual const BackendDescriptor& descriptor() const = 0;
};

/// Renormalizes raw candidate probabilities (or unnormalized weights) into a
/// two-way log-distribution.
LabelLogprobs renormalize_probs(double p_err, double p_not);
LabelLogprobs renormalize_logprobs(double logp_err, double logp_not);

// Harness-side fallback used by backends with no engine memory stats.
MemoryProbe process_memory_probe();

}  // namespace cedh
