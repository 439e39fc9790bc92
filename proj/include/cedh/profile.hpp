#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cedh/backend.hpp"
#include "cedh/decide.hpp"

namespace cedh {

/// Everything timed for one pair: prompt construction, backend call(s) and
/// label parsing.
struct Pipeline {
    std::function<Prompt(const Pair&)> build_prompt;
    std::function<Decision(const Pair&, const Prompt&, Backend&)> decide;
    Backend* backend = nullptr;

    Decision run(const Pair& pair, Backend& via) const { return decide(pair, build_prompt(pair), via); }
};

class ProfileAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LatencyStats {
    std::size_t repeats = 0;
    std::size_t warmup_runs = 0;
    std::vector<double> samples_ms;  // end to end, re-asks included
    double mean_ms = 0.0;
    double cv = 0.0;                 // sample stddev / mean
    std::vector<double> first_attempt_ms;  // up to the first backend reply
    double first_attempt_mean_ms = 0.0;
};

struct ThroughputStats {
    std::size_t batch = 16;
    std::size_t waves = 0;
    std::vector<double> per_repeat_sps;
    double mean_sps = 0.0;
    double reference_latency_ms = 0.0;  // one request alone
    double effective_concurrency = 0.0;  // mean_sps * reference latency
    bool serialized = false;
};

struct PeakMemory {
    std::optional<std::uint64_t> bytes;
    MemorySource source = MemorySource::Unsupported;
};

inline constexpr std::size_t kProfileRepeats = 3;
inline constexpr std::size_t kProfileWarmups = 2;
inline constexpr std::size_t kProfileBatch = 16;
inline constexpr std::size_t kMinWaves = 3;

double arithmetic_mean(std::span<const double> values);

/// Runs `warmup` untimed passes, then `repeats` timed passes over one pair.
/// Any backend failure aborts the measurement (ProfileAborted).
LatencyStats measure_latency(const Pipeline& pipeline, const Pair& pair,
                             std::size_t repeats = kProfileRepeats,
                             std::size_t warmup = kProfileWarmups);

/// Waves of `batch` concurrent pipeline runs, at least kMinWaves waves per
/// repeat, cycling through `pairs`. Throws ConfigError for fewer than `batch`
/// pairs. Peak memory is probed at the end of every repeat when `memory` is
/// given.
ThroughputStats measure_throughput(const Pipeline& pipeline, std::span<const Pair> pairs,
                                   std::size_t batch = kProfileBatch,
                                   std::size_t repeats = kProfileRepeats,
                                   PeakMemory* memory = nullptr);

/// One batch-sized wave followed by a backend memory probe.
PeakMemory measure_peak_memory(const Pipeline& pipeline, std::span<const Pair> pairs,
                               std::size_t batch = kProfileBatch);

struct ProfileReport {
    std::string dataset;
    std::string model;
    std::string mode;
    std::string hardware;
    LatencyStats latency;
    ThroughputStats throughput;
    PeakMemory memory;
    std::string manifest_hash;

    std::string to_json_text() const;
    static ProfileReport from_json_text(std::string_view text);
};

}  // namespace cedh
