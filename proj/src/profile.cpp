#include "cedh/profile.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <json.hpp>
#include <mutex>
#include <numeric>
#include <thread>

namespace cedh {

namespace {

using Clock = std::chrono::steady_clock;
static_assert(Clock::is_steady);

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

// Forwards to another backend and remembers when the first reply arrived.
class FirstReplyClock final : public Backend {
public:
    explicit FirstReplyClock(Backend& inner) : inner_(inner) {}

    Completion complete(const std::string& prompt, const SamplingPolicy& policy) override {
        auto c = inner_.complete(prompt, policy);
        mark();
        return c;
    }
    LabelLogprobs label_logits(const std::string& prompt) override {
        auto l = inner_.label_logits(prompt);
        mark();
        return l;
    }
    bool supports_logprobs() const override { return inner_.supports_logprobs(); }
    MemoryProbe probe_memory() override { return inner_.probe_memory(); }
    std::optional<TokenCounter> token_counter() const override { return inner_.token_counter(); }
    const BackendDescriptor& descriptor() const override { return inner_.descriptor(); }

    std::optional<Clock::time_point> first_reply() const { return first_; }

private:
    void mark() {
        if (!first_) first_ = Clock::now();
    }
    Backend& inner_;
    std::optional<Clock::time_point> first_;
};

Backend& backend_of(const Pipeline& p) {
    if (p.backend == nullptr || !p.build_prompt || !p.decide)
        throw ConfigError("profiling pipeline is incomplete");
    return *p.backend;
}

// Runs one wave of concurrent pipeline calls; rethrows the first failure.
void run_wave(const Pipeline& pipeline, std::span<const Pair> pairs, std::size_t offset, std::size_t batch) {
    Backend& backend = backend_of(pipeline);
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> workers;
    workers.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const Pair& pair = pairs[(offset + i) % pairs.size()];
        workers.emplace_back([&, &pair = pair] {
            try {
                pipeline.run(pair, backend);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    if (failure) std::rethrow_exception(failure);
}

template <typename F>
auto abort_on_failure(F&& f) {
    try {
        return f();
    } catch (const BackendError& e) {
        throw ProfileAborted(std::string("measurement aborted: ") + e.what());
    }
}

nlohmann::ordered_json optional_bytes(const std::optional<std::uint64_t>& b) {
    return b ? nlohmann::ordered_json(*b) : nlohmann::ordered_json(nullptr);
}

MemorySource parse_memory_source(const std::string& s) {
    if (s == "backend-reported") return MemorySource::BackendReported;
    if (s == "process-rss") return MemorySource::ProcessRss;
    return MemorySource::Unsupported;
}

}  // namespace

double arithmetic_mean(std::span<const double> values) {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

LatencyStats measure_latency(const Pipeline& pipeline, const Pair& pair, std::size_t repeats,
                             std::size_t warmup) {
    if (repeats == 0) throw ConfigError("latency needs at least one repeat");
    Backend& backend = backend_of(pipeline);
    LatencyStats stats;
    stats.repeats = repeats;
    stats.warmup_runs = warmup;
    abort_on_failure([&] {
        for (std::size_t i = 0; i < warmup; ++i) pipeline.run(pair, backend);
        for (std::size_t i = 0; i < repeats; ++i) {
            FirstReplyClock clock(backend);
            const auto start = Clock::now();
            pipeline.run(pair, clock);
            const auto end = Clock::now();
            stats.samples_ms.push_back(ms_between(start, end));
            stats.first_attempt_ms.push_back(ms_between(start, clock.first_reply().value_or(end)));
        }
        return 0;
    });
    stats.mean_ms = arithmetic_mean(stats.samples_ms);
    stats.first_attempt_mean_ms = arithmetic_mean(stats.first_attempt_ms);
    if (stats.samples_ms.size() > 1 && stats.mean_ms > 0.0) {
        double ss = 0.0;
        for (double x : stats.samples_ms) ss += (x - stats.mean_ms) * (x - stats.mean_ms);
        stats.cv = std::sqrt(ss / static_cast<double>(stats.samples_ms.size() - 1)) / stats.mean_ms;
    }
    return stats;
}

ThroughputStats measure_throughput(const Pipeline& pipeline, std::span<const Pair> pairs,
                                   std::size_t batch, std::size_t repeats, PeakMemory* memory) {
    if (batch == 0) throw ConfigError("batch size must be positive");
    if (pairs.size() < batch)
        throw ConfigError("throughput needs at least one full batch of " + std::to_string(batch) +
                          " pairs, got " + std::to_string(pairs.size()));
    if (repeats == 0) throw ConfigError("throughput needs at least one repeat");
    Backend& backend = backend_of(pipeline);

    ThroughputStats stats;
    stats.batch = batch;
    stats.waves = std::max(kMinWaves, (pairs.size() + batch - 1) / batch);
    abort_on_failure([&] {
        pipeline.run(pairs[0], backend);  // warm the connection
        const auto t0 = Clock::now();
        pipeline.run(pairs[0], backend);
        stats.reference_latency_ms = ms_between(t0, Clock::now());

        for (std::size_t r = 0; r < repeats; ++r) {
            const auto start = Clock::now();
            for (std::size_t w = 0; w < stats.waves; ++w) run_wave(pipeline, pairs, w * batch, batch);
            const double seconds = ms_between(start, Clock::now()) / 1000.0;
            stats.per_repeat_sps.push_back(static_cast<double>(stats.waves * batch) / seconds);
            if (memory) {
                MemoryProbe probe = backend.probe_memory();
                if (probe.bytes && (!memory->bytes || *probe.bytes > *memory->bytes)) {
                    memory->bytes = probe.bytes;
                    memory->source = probe.source;
                } else if (!memory->bytes) {
                    memory->source = probe.source;
                }
            }
        }
        return 0;
    });
    stats.mean_sps = arithmetic_mean(stats.per_repeat_sps);
    stats.effective_concurrency = stats.mean_sps * stats.reference_latency_ms / 1000.0;
    stats.serialized = stats.effective_concurrency < 1.5;
    return stats;
}

PeakMemory measure_peak_memory(const Pipeline& pipeline, std::span<const Pair> pairs, std::size_t batch) {
    Backend& backend = backend_of(pipeline);
    if (!pairs.empty()) abort_on_failure([&] {
        run_wave(pipeline, pairs, 0, batch);
        return 0;
    });
    MemoryProbe probe = backend.probe_memory();
    return {probe.bytes, probe.source};
}

std::string ProfileReport::to_json_text() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    j["model"] = model;
    j["mode"] = mode;
    j["hardware"] = hardware;
    j["latency_ms"] = {{"mean", latency.mean_ms},
                       {"per_repeat", latency.samples_ms},
                       {"cv", latency.cv},
                       {"first_attempt_mean", latency.first_attempt_mean_ms},
                       {"first_attempt_per_repeat", latency.first_attempt_ms},
                       {"repeats", latency.repeats},
                       {"warmup_runs", latency.warmup_runs}};
    j["throughput_sps"] = {{"mean", throughput.mean_sps},
                           {"per_repeat", throughput.per_repeat_sps},
                           {"batch", throughput.batch},
                           {"waves", throughput.waves},
                           {"reference_latency_ms", throughput.reference_latency_ms},
                           {"effective_concurrency", throughput.effective_concurrency},
                           {"serialized_backend", throughput.serialized}};
    j["peak_memory_bytes"] = optional_bytes(memory.bytes);
    j["peak_memory_source"] = to_string(memory.source);
    j["manifest_hash"] = manifest_hash;
    return j.dump(2) + '\n';
}

ProfileReport ProfileReport::from_json_text(std::string_view text) {
    try {
        auto j = nlohmann::json::parse(text);
        ProfileReport r;
        r.dataset = j.at("dataset").get<std::string>();
        r.model = j.at("model").get<std::string>();
        r.mode = j.at("mode").get<std::string>();
        r.hardware = j.value("hardware", std::string());
        const auto& l = j.at("latency_ms");
        r.latency.mean_ms = l.at("mean").get<double>();
        r.latency.samples_ms = l.at("per_repeat").get<std::vector<double>>();
        r.latency.cv = l.value("cv", 0.0);
        r.latency.first_attempt_mean_ms = l.value("first_attempt_mean", 0.0);
        r.latency.first_attempt_ms = l.value("first_attempt_per_repeat", std::vector<double>{});
        r.latency.repeats = l.value("repeats", r.latency.samples_ms.size());
        r.latency.warmup_runs = l.value("warmup_runs", std::size_t{0});
        const auto& t = j.at("throughput_sps");
        r.throughput.mean_sps = t.at("mean").get<double>();
        r.throughput.per_repeat_sps = t.at("per_repeat").get<std::vector<double>>();
        r.throughput.batch = t.value("batch", kProfileBatch);
        r.throughput.waves = t.value("waves", std::size_t{0});
        r.throughput.reference_latency_ms = t.value("reference_latency_ms", 0.0);
        r.throughput.effective_concurrency = t.value("effective_concurrency", 0.0);
        r.throughput.serialized = t.value("serialized_backend", false);
        if (!j.at("peak_memory_bytes").is_null()) r.memory.bytes = j["peak_memory_bytes"].get<std::uint64_t>();
        r.memory.source = parse_memory_source(j.value("peak_memory_source", std::string("unsupported")));
        r.manifest_hash = j.value("manifest_hash", std::string());
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed profile report: ") + e.what());
    }
}

}  // namespace cedh
