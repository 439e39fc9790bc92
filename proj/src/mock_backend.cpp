#include "cedh/mock_backend.hpp"

#include <chrono>
#include <cmath>
#include <json.hpp>
#include <random>
#include <thread>

#include "cedh/util.hpp"

namespace cedh {

void ConcurrencyGate::acquire() {
    if (limit_ == 0) return;
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < limit_; });
    ++in_flight_;
}

void ConcurrencyGate::release() {
    if (limit_ == 0) return;
    {
        std::lock_guard lock(mu_);
        --in_flight_;
    }
    cv_.notify_one();
}

namespace {

struct GateGuard {
    explicit GateGuard(ConcurrencyGate& g) : gate(g) { gate.acquire(); }
    ~GateGuard() { gate.release(); }
    ConcurrencyGate& gate;
};

void sleep_ms(double ms) {
    if (ms > 0.0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

MockMemory parse_mock_memory(const std::string& s) {
    if (s == "process-rss") return MockMemory::ProcessRss;
    if (s == "backend") return MockMemory::Backend;
    if (s == "none") return MockMemory::None;
    throw ConfigError("mock script: unknown memory mode '" + s + "'");
}

std::string_view mock_memory_name(MockMemory m) {
    switch (m) {
        case MockMemory::ProcessRss: return "process-rss";
        case MockMemory::Backend: return "backend";
        case MockMemory::None: return "none";
    }
    return "none";
}

double log_sigmoid(double z) {
    return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

}  // namespace

MockScript MockScript::from_json_file(const std::filesystem::path& path) {
    try {
        return from_json_text(read_file(path));
    } catch (const DataError& e) {
        throw ConfigError(std::string("mock script: ") + e.what());
    }
}

MockScript MockScript::from_json_text(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("mock script is not valid JSON: ") + e.what());
    }
    MockScript s;
    try {
        if (j.contains("responses"))
            s.responses = j["responses"].get<std::map<std::string, std::vector<std::string>>>();
        if (j.contains("default"))
            s.default_responses = j["default"].get<std::vector<std::string>>();
        if (j.contains("label_probs"))
            s.label_probs = j["label_probs"].get<std::map<std::string, std::pair<double, double>>>();
        if (j.contains("default_label_probs") && !j["default_label_probs"].is_null())
            s.default_label_probs = j["default_label_probs"].get<std::pair<double, double>>();
        s.logprobs = j.value("logprobs", true);
        s.delay_ms = j.value("delay_ms", 0.0);
        s.max_concurrency = j.value("max_concurrency", std::size_t{0});
        s.memory = parse_mock_memory(j.value("memory", std::string("process-rss")));
        s.backend_memory_bytes = j.value("backend_memory_bytes", std::uint64_t{0});
        if (j.contains("fail_from_call") && !j["fail_from_call"].is_null())
            s.fail_from_call = j["fail_from_call"].get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mock script has a malformed field: ") + e.what());
    }
    return s;
}

std::string MockScript::to_json_text() const {
    nlohmann::ordered_json j;
    j["responses"] = responses;
    j["default"] = default_responses;
    j["label_probs"] = label_probs;
    j["default_label_probs"] = default_label_probs ? nlohmann::ordered_json(*default_label_probs)
                                                   : nlohmann::ordered_json(nullptr);
    j["logprobs"] = logprobs;
    j["delay_ms"] = delay_ms;
    j["max_concurrency"] = max_concurrency;
    j["memory"] = mock_memory_name(memory);
    j["backend_memory_bytes"] = backend_memory_bytes;
    j["fail_from_call"] = fail_from_call ? nlohmann::ordered_json(*fail_from_call)
                                         : nlohmann::ordered_json(nullptr);
    return j.dump(2) + '\n';
}

ScriptedMockBackend::ScriptedMockBackend(MockScript script, std::string model_id)
    : script_(std::move(script)), gate_(script_.max_concurrency) {
    descriptor_.kind = BackendKind::ScriptedMock;
    descriptor_.model_id = std::move(model_id);
    descriptor_.reports_memory = script_.memory == MockMemory::Backend;
}

void ScriptedMockBackend::enter_call() {
    const std::size_t ordinal = calls_.fetch_add(1);
    if (script_.fail_from_call && ordinal >= *script_.fail_from_call)
        throw TransportError("scripted transport failure on call " + std::to_string(ordinal));
}

void ScriptedMockBackend::simulate_service_time() const { sleep_ms(script_.delay_ms); }

Completion ScriptedMockBackend::complete(const std::string& prompt, const SamplingPolicy& policy) {
    policy.validate();
    GateGuard guard(gate_);
    enter_call();
    simulate_service_time();

    const std::string key = sha256_hex(prompt);
    auto it = script_.responses.find(key);
    const auto& list = it != script_.responses.end() ? it->second : script_.default_responses;
    if (list.empty()) throw ProtocolError("scripted mock has no response for prompt " + key);
    std::size_t pos;
    {
        std::lock_guard lock(cursor_mu_);
        pos = cursor_[key]++;
    }
    Completion c;
    c.text = list[pos % list.size()];
    return c;
}

LabelLogprobs ScriptedMockBackend::label_logits(const std::string& prompt) {
    if (!script_.logprobs)
        throw CapabilityError("backend '" + descriptor_.model_id +
                              "' does not expose log-probabilities; use vote-only mode");
    GateGuard guard(gate_);
    enter_call();
    simulate_service_time();
    const std::string key = sha256_hex(prompt);
    auto it = script_.label_probs.find(key);
    if (it != script_.label_probs.end()) return renormalize_probs(it->second.first, it->second.second);
    if (script_.default_label_probs)
        return renormalize_probs(script_.default_label_probs->first, script_.default_label_probs->second);
    throw ProtocolError("scripted mock has no label probabilities for prompt " + key);
}

MemoryProbe ScriptedMockBackend::probe_memory() {
    switch (script_.memory) {
        case MockMemory::Backend: return {script_.backend_memory_bytes, MemorySource::BackendReported};
        case MockMemory::ProcessRss: return process_memory_probe();
        case MockMemory::None: return {std::nullopt, MemorySource::Unsupported};
    }
    return {};
}

ParametricMockBackend::ParametricMockBackend(Params params, std::string model_id)
    : params_(params), gate_(params.max_concurrency) {
    descriptor_.kind = BackendKind::ParametricMock;
    descriptor_.model_id = std::move(model_id);
}

ParametricMockBackend::Params ParametricMockBackend::constant(double p_err) {
    Params p;
    p.intercept = std::log(p_err) - std::log1p(-p_err);
    return p;
}

double ParametricMockBackend::extract_feature(std::string_view prompt) {
    // Only the query block counts: exemplars precede it.
    const std::string_view tag = "\nTranslation: ";
    std::size_t at = prompt.rfind(tag);
    if (at == std::string_view::npos) return 0.0;
    std::string_view line = prompt.substr(at + tag.size());
    line = line.substr(0, line.find('\n'));
    std::size_t open = line.find("[[x=");
    if (open == std::string_view::npos) return 0.0;
    std::size_t close = line.find("]]", open);
    if (close == std::string_view::npos) return 0.0;
    return std::stod(std::string(line.substr(open + 4, close - open - 4)));
}

std::string ParametricMockBackend::plant_feature(std::string_view target, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, " [[x=%.17g]]", x);
    return std::string(target) + buf;
}

double ParametricMockBackend::err_logit(std::string_view prompt) const {
    return params_.slope * extract_feature(prompt) + params_.intercept;
}

Completion ParametricMockBackend::complete(const std::string& prompt, const SamplingPolicy& policy) {
    policy.validate();
    GateGuard guard(gate_);
    sleep_ms(params_.delay_ms);
    const double z = err_logit(prompt);
    Completion c;
    c.label_logprobs = LabelLogprobs{log_sigmoid(z), log_sigmoid(-z)};
    if (policy.mode == DecodeMode::Greedy) {
        c.text = z > 0 ? "ERR" : "NOT";
        return c;
    }
    // Temperature: q ~ p^(1/T), i.e. the logit scales by 1/T.
    const double q_err = std::exp(log_sigmoid(z / policy.temperature));
    const double q_not = 1.0 - q_err;
    // Nucleus: keep the smallest high-probability prefix reaching p.
    double keep_err = q_err, keep_not = q_not;
    if (std::max(q_err, q_not) >= policy.nucleus_p) {
        if (q_err >= q_not)
            keep_not = 0.0;
        else
            keep_err = 0.0;
    }
    std::mt19937_64 rng(mix_seed(policy.seed, prompt));
    const double u = uniform_unit(rng) * (keep_err + keep_not);
    c.text = u < keep_err ? "ERR" : "NOT";
    return c;
}

LabelLogprobs ParametricMockBackend::label_logits(const std::string& prompt) {
    if (!params_.logprobs)
        throw CapabilityError("backend '" + descriptor_.model_id +
                              "' does not expose log-probabilities; use vote-only mode");
    GateGuard guard(gate_);
    sleep_ms(params_.delay_ms);
    const double z = err_logit(prompt);
    return {log_sigmoid(z), log_sigmoid(-z)};
}

}  // namespace cedh
