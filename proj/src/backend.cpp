#include "cedh/backend.hpp"

#include <cmath>

#include "cedh/util.hpp"

namespace cedh {

void SamplingPolicy::validate() const {
    if (max_new_tokens < 1 || max_new_tokens > 2)
        throw ConfigError("max_new_tokens must be 1 or 2, got " + std::to_string(max_new_tokens));
    if (mode == DecodeMode::Sampled) {
        if (!(temperature > 0.0)) throw ConfigError("sampling temperature must be positive");
        if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) throw ConfigError("nucleus p must be in (0, 1]");
    }
}

std::string_view to_string(MemorySource s) {
    switch (s) {
        case MemorySource::BackendReported: return "backend-reported";
        case MemorySource::ProcessRss: return "process-rss";
        case MemorySource::Unsupported: return "unsupported";
    }
    return "unsupported";
}

std::string_view to_string(BackendKind k) {
    switch (k) {
        case BackendKind::HttpCompletion: return "http-completion";
        case BackendKind::ScriptedMock: return "scripted-mock";
        case BackendKind::ParametricMock: return "parametric-mock";
    }
    return "?";
}

BackendKind parse_backend_kind(std::string_view s) {
    if (s == "http-completion") return BackendKind::HttpCompletion;
    if (s == "scripted-mock") return BackendKind::ScriptedMock;
    if (s == "parametric-mock") return BackendKind::ParametricMock;
    throw ConfigError("unknown backend kind '" + std::string(s) + "'");
}

LabelLogprobs renormalize_probs(double p_err, double p_not) {
    if (!(p_err >= 0.0) || !(p_not >= 0.0) || !(p_err + p_not > 0.0) || !std::isfinite(p_err + p_not))
        throw ProtocolError("label probabilities must be non-negative with a positive sum");
    const double total = p_err + p_not;
    return {std::log(p_err / total), std::log(p_not / total)};
}

LabelLogprobs renormalize_logprobs(double logp_err, double logp_not) {
    if (std::isnan(logp_err) || std::isnan(logp_not) || (std::isinf(logp_err) && std::isinf(logp_not)))
        throw ProtocolError("label log-probabilities are not usable");
    const double hi = std::max(logp_err, logp_not);
    const double lse = hi + std::log(std::exp(logp_err - hi) + std::exp(logp_not - hi));
    return {logp_err - lse, logp_not - lse};
}

MemoryProbe process_memory_probe() {
    if (auto rss = process_peak_rss_bytes()) return {rss, MemorySource::ProcessRss};
    return {std::nullopt, MemorySource::Unsupported};
}

}  // namespace cedh
