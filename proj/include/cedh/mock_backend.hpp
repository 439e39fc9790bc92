#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cedh/backend.hpp"

namespace cedh {

// Caps the number of calls executing at once. A limit of 0 means unlimited;
// a limit of 1 turns the backend into a strictly serial server.
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(std::size_t limit) : limit_(limit) {}
    void acquire();
    void release();

private:
    std::size_t limit_;
    std::size_t in_flight_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
};

enum class MockMemory { ProcessRss, Backend, None };

/// Deterministic lookup table keyed by sha256_hex(prompt).
///
/// Each key maps to a response list that is cycled per prompt: the n-th call
/// with a given prompt returns responses[n % size]. Prompts with no entry use
/// `default_responses`. Because the cycle position is per prompt, two fresh
/// mocks fed the same call sequence produce the same completions.
struct MockScript {
    std::map<std::string, std::vector<std::string>> responses;
    std::vector<std::string> default_responses;
    // Raw candidate probabilities (p_err, p_not); renormalized on read.
    std::map<std::string, std::pair<double, double>> label_probs;
    std::optional<std::pair<double, double>> default_label_probs;
    bool logprobs = true;
    double delay_ms = 0.0;
    std::size_t max_concurrency = 0;
    MockMemory memory = MockMemory::ProcessRss;
    std::uint64_t backend_memory_bytes = 0;
    // Every call with global ordinal >= fail_from_call throws TransportError.
    std::optional<std::size_t> fail_from_call;

    static MockScript from_json_file(const std::filesystem::path& path);
    static MockScript from_json_text(std::string_view text);
    std::string to_json_text() const;
};

class ScriptedMockBackend final : public Backend {
public:
    explicit ScriptedMockBackend(MockScript script, std::string model_id = "scripted-mock");

    Completion complete(const std::string& prompt, const SamplingPolicy& policy) override;
    LabelLogprobs label_logits(const std::string& prompt) override;
    bool supports_logprobs() const override { return script_.logprobs; }
    MemoryProbe probe_memory() override;
    const BackendDescriptor& descriptor() const override { return descriptor_; }

    std::size_t calls() const { return calls_.load(); }

private:
    void enter_call();
    void simulate_service_time() const;

    MockScript script_;
    BackendDescriptor descriptor_;
    ConcurrencyGate gate_;
    std::atomic<std::size_t> calls_{0};
    std::mutex cursor_mu_;
    std::map<std::string, std::size_t> cursor_;
};

/// Decides by a logistic rule on a numeric feature planted in the query
/// translation as the marker "[[x=<number>]]" (x = 0 when absent):
///
///   logit(p_err) = slope * x + intercept
///
/// Greedy decoding answers ERR iff the logit is positive. Sampled decoding
/// applies temperature and nucleus truncation to the two-label distribution
/// and draws with a generator seeded from (policy.seed, prompt).
class ParametricMockBackend final : public Backend {
public:
    struct Params {
        double slope = 0.0;
        double intercept = 0.0;
        double delay_ms = 0.0;
        bool logprobs = true;
        std::size_t max_concurrency = 0;
    };

    explicit ParametricMockBackend(Params params, std::string model_id = "parametric-mock");

    // Parameters for a constant P(ERR) regardless of the pair.
    static Params constant(double p_err);

    Completion complete(const std::string& prompt, const SamplingPolicy& policy) override;
    LabelLogprobs label_logits(const std::string& prompt) override;
    bool supports_logprobs() const override { return params_.logprobs; }
    MemoryProbe probe_memory() override { return process_memory_probe(); }
    const BackendDescriptor& descriptor() const override { return descriptor_; }

    const Params& params() const { return params_; }

    // Value of the planted marker in the prompt's query translation.
    static double extract_feature(std::string_view prompt);
    static std::string plant_feature(std::string_view target, double x);

private:
    double err_logit(std::string_view prompt) const;

    Params params_;
    BackendDescriptor descriptor_;
    ConcurrencyGate gate_;
};

}  // namespace cedh
