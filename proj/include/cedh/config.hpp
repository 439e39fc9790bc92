#pragma once

#include <filesystem>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cedh/corpus.hpp"
#include "cedh/decide.hpp"
#include "cedh/http_backend.hpp"
#include "cedh/mock_backend.hpp"

namespace cedh {

struct DatasetSpec {
    std::string name;
    std::filesystem::path path;
    DatasetFormat format = DatasetFormat::Tsv;
    LabelScheme scheme = LabelScheme::Native;
};

struct BackendConfig {
    BackendKind kind = BackendKind::ScriptedMock;
    std::string model_id;
    std::filesystem::path script;  // scripted-mock
    ParametricMockBackend::Params parametric;
    HttpBackendConfig http;
};

struct Seeds {
    std::uint64_t data = 13;
    std::uint64_t exemplar = 17;
    std::uint64_t vote = 23;
    std::uint64_t bootstrap = 29;
};

struct ProfileConfig {
    std::size_t repeats = 3;
    std::size_t warmup = 2;
    std::size_t batch = 16;
    std::string hardware;
};

/// Everything a run needs. Defaults:
/// k = 12, m = 3, T = 0.2, p = 0.9, 10k bootstrap resamples, 1,024-token cap.
struct RunConfig {
    std::string model;  // display name; defaults to the backend model id
    std::vector<DatasetSpec> train;
    std::vector<DatasetSpec> dev;
    std::optional<DatasetSpec> heldout;

    DecisionMode mode = DecisionMode::ZeroShot;
    std::size_t k = 12;
    int m = 3;
    double temperature = 0.2;
    double nucleus_p = 0.9;
    bool vote_with_exemplars = true;

    bool calibration = false;
    double heldout_fraction = 0.1;
    std::filesystem::path calibration_path;  // default <output_dir>/calibration.json

    std::size_t token_limit = 1024;
    BackendConfig backend;
    std::size_t concurrency = 4;
    Seeds seeds;
    std::size_t resamples = 10000;
    std::filesystem::path output_dir = "runs";
    ProfileConfig profile;
    bool strict = false;

    // Resolved configuration used as the manifest snapshot. Output locations
    // are left out: they do not change what a run computes.
    nlohmann::ordered_json snapshot() const;
};

/// Relative paths in `j` are resolved against `base_dir`. Throws ConfigError.
RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path, const nlohmann::json& overrides = {});

std::unique_ptr<Backend> make_backend(const BackendConfig& config);

}  // namespace cedh
