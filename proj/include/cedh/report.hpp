#pragma once

#include <filesystem>
#include <json.hpp>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cedh/backend.hpp"
#include "cedh/metrics.hpp"

namespace cedh {

struct ResultsTable {
    std::string markdown;
    std::string csv;
};

/// One markdown table per dataset with a row per (model, mode). The best value
/// in each of the MCC, F1-ERR and F1-NOT columns is bold; exact ties are all
/// bold. Display rounds to 2 decimals; the CSV twin keeps full precision.
ResultsTable render_results_table(std::span<const MetricsReport> reports);

std::string format_display(double v);  // 2 decimals
std::string format_full(double v);     // round-trippable

struct FrontierPoint {
    std::string label;
    double latency_ms = 0.0;
    double mcc = 0.0;

    bool operator==(const FrontierPoint&) const = default;
};

// True when `a` is at least as fast and as accurate as `b` and strictly
// better in one of the two.
bool dominates(const FrontierPoint& a, const FrontierPoint& b);

/// Non-dominated points, stably ordered by latency.
std::vector<FrontierPoint> pareto_frontier(std::span<const FrontierPoint> points);

std::string frontier_csv(std::span<const FrontierPoint> all, std::span<const FrontierPoint> frontier);

struct DatasetFingerprint {
    std::string name;
    std::string path;
    std::string sha256;
};

inline constexpr std::string_view kCodeVersion = "cedh 0.1.0";

struct RunManifest {
    nlohmann::ordered_json config;
    std::map<std::string, std::uint64_t> seeds;
    std::vector<DatasetFingerprint> datasets;
    BackendDescriptor backend;
    std::string code_version{kCodeVersion};
    std::string created_at;  // excluded from the hash

    // sha256 over everything except created_at.
    std::string hash() const;
    std::string to_json_text() const;
};

/// Writes the manifest. Refuses (ConfigError) when any dataset lacks a
/// content hash. Returns the manifest hash.
std::string emit_manifest(const RunManifest& manifest, const std::filesystem::path& path);

/// Throws ConfigError if the manifest on disk no longer hashes to `expected`.
void verify_manifest(const std::filesystem::path& path, const std::string& expected);

std::string utc_timestamp();

// <dataset>__<model>__<mode>.<ext>
std::string output_name(std::string_view dataset, std::string_view model, std::string_view mode,
                        std::string_view ext);

}  // namespace cedh
