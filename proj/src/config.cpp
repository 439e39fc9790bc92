#include "cedh/config.hpp"

#include <set>

#include "cedh/util.hpp"

namespace cedh {

namespace {

using nlohmann::json;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base.empty()) return base / path;
    return path;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key) || j[key].is_null()) return fallback;
    return j[key].get<T>();
}

DatasetSpec parse_dataset_spec(const json& j, const std::filesystem::path& base) {
    if (!j.is_object()) throw ConfigError("dataset entry must be an object");
    DatasetSpec d;
    if (!j.contains("path")) throw ConfigError("dataset entry needs a path");
    d.path = resolve(base, j["path"].get<std::string>());
    d.name = get_or<std::string>(j, "name", d.path.stem().string());
    d.format = parse_format(get_or<std::string>(j, "format", "tsv"));
    d.scheme = parse_scheme(get_or<std::string>(j, "scheme", "native"));
    return d;
}

nlohmann::ordered_json dataset_spec_json(const DatasetSpec& d) {
    return {{"name", d.name}, {"path", d.path.string()}, {"format", to_string(d.format)},
            {"scheme", to_string(d.scheme)}};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

}  // namespace

RunConfig parse_config(const json& j, const std::filesystem::path& base) {
    RunConfig c;
    try {
        check_keys(j,
                   {"model", "datasets", "mode", "few_shot", "vote", "calibration", "token_limit", "backend",
                    "concurrency", "seeds", "bootstrap", "output_dir", "profile", "strict"},
                   "config");
        if (j.contains("datasets")) {
            const auto& ds = j["datasets"];
            check_keys(ds, {"train", "dev", "heldout"}, "datasets");
            for (const auto& d : get_or<json>(ds, "train", json::array())) c.train.push_back(parse_dataset_spec(d, base));
            for (const auto& d : get_or<json>(ds, "dev", json::array())) c.dev.push_back(parse_dataset_spec(d, base));
            if (ds.contains("heldout") && !ds["heldout"].is_null()) c.heldout = parse_dataset_spec(ds["heldout"], base);
        }
        c.mode = parse_mode(get_or<std::string>(j, "mode", "zero-shot"));

        const json few = get_or<json>(j, "few_shot", json::object());
        c.k = get_or<std::size_t>(few, "k", c.k);
        const json vote = get_or<json>(j, "vote", json::object());
        c.m = get_or<int>(vote, "m", c.m);
        c.temperature = get_or<double>(vote, "temperature", c.temperature);
        c.nucleus_p = get_or<double>(vote, "top_p", c.nucleus_p);
        c.vote_with_exemplars = get_or<bool>(vote, "with_exemplars", c.vote_with_exemplars);

        const json cal = get_or<json>(j, "calibration", json::object());
        c.calibration = get_or<bool>(cal, "enabled", false);
        c.heldout_fraction = get_or<double>(cal, "heldout_fraction", c.heldout_fraction);

        c.token_limit = get_or<std::size_t>(j, "token_limit", c.token_limit);
        c.concurrency = get_or<std::size_t>(j, "concurrency", c.concurrency);
        c.output_dir = resolve(base, get_or<std::string>(j, "output_dir", "runs"));
        if (cal.contains("path"))
            c.calibration_path = resolve(base, cal["path"].get<std::string>());
        else
            c.calibration_path = c.output_dir / "calibration.json";

        const json b = get_or<json>(j, "backend", json::object());
        c.backend.kind = parse_backend_kind(get_or<std::string>(b, "kind", "scripted-mock"));
        c.backend.model_id = get_or<std::string>(b, "model_id", std::string(to_string(c.backend.kind)));
        if (b.contains("script")) c.backend.script = resolve(base, b["script"].get<std::string>());
        const json pm = get_or<json>(b, "parametric", json::object());
        c.backend.parametric.slope = get_or<double>(pm, "slope", 0.0);
        c.backend.parametric.intercept = get_or<double>(pm, "intercept", 0.0);
        c.backend.parametric.delay_ms = get_or<double>(pm, "delay_ms", 0.0);
        c.backend.parametric.logprobs = get_or<bool>(pm, "logprobs", true);
        c.backend.parametric.max_concurrency = get_or<std::size_t>(pm, "max_concurrency", 0);
        auto& http = c.backend.http;
        http.base_url = get_or<std::string>(b, "url", "");
        http.model_id = c.backend.model_id;
        http.token_env = get_or<std::string>(b, "token_env", http.token_env);
        http.reports_memory = get_or<bool>(b, "reports_memory", false);
        http.tokenize = get_or<bool>(b, "tokenize", false);
        http.logprobs = get_or<bool>(b, "logprobs", true);
        http.max_attempts = get_or<int>(b, "max_attempts", http.max_attempts);
        http.backoff = std::chrono::milliseconds(get_or<long>(b, "backoff_ms", 250));
        http.timeout = std::chrono::milliseconds(get_or<long>(b, "timeout_ms", 30000));

        const json s = get_or<json>(j, "seeds", json::object());
        c.seeds.data = get_or<std::uint64_t>(s, "data", c.seeds.data);
        c.seeds.exemplar = get_or<std::uint64_t>(s, "exemplar", c.seeds.exemplar);
        c.seeds.vote = get_or<std::uint64_t>(s, "vote", c.seeds.vote);
        c.seeds.bootstrap = get_or<std::uint64_t>(s, "bootstrap", c.seeds.bootstrap);
        c.resamples = get_or<std::size_t>(get_or<json>(j, "bootstrap", json::object()), "resamples", c.resamples);

        const json p = get_or<json>(j, "profile", json::object());
        c.profile.repeats = get_or<std::size_t>(p, "repeats", c.profile.repeats);
        c.profile.warmup = get_or<std::size_t>(p, "warmup", c.profile.warmup);
        c.profile.batch = get_or<std::size_t>(p, "batch", c.profile.batch);
        c.profile.hardware = get_or<std::string>(p, "hardware", "");
        c.strict = get_or<bool>(j, "strict", false);
        c.model = get_or<std::string>(j, "model", c.backend.model_id);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.m < 1) throw ConfigError("vote.m must be >= 1");
    if (c.k % 2 != 0) throw ConfigError("few_shot.k must be even");
    if (c.concurrency < 1) throw ConfigError("concurrency must be >= 1");
    if (c.resamples < 1) throw ConfigError("bootstrap.resamples must be >= 1");
    if (!(c.heldout_fraction > 0.0 && c.heldout_fraction < 1.0))
        throw ConfigError("calibration.heldout_fraction must be in (0, 1)");
    return c;
}

RunConfig load_config(const std::filesystem::path& path, const json& overrides) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!overrides.is_null()) j.merge_patch(overrides);
    return parse_config(j, path.parent_path());
}

nlohmann::ordered_json RunConfig::snapshot() const {
    nlohmann::ordered_json j;
    j["model"] = model;
    auto list = [](const std::vector<DatasetSpec>& v) {
        nlohmann::ordered_json a = nlohmann::ordered_json::array();
        for (const auto& d : v) a.push_back(dataset_spec_json(d));
        return a;
    };
    j["datasets"] = {{"train", list(train)},
                     {"dev", list(dev)},
                     {"heldout", heldout ? nlohmann::ordered_json(dataset_spec_json(*heldout))
                                         : nlohmann::ordered_json(nullptr)}};
    j["mode"] = to_string(mode);
    j["few_shot"] = {{"k", k}};
    j["vote"] = {{"m", m}, {"temperature", temperature}, {"top_p", nucleus_p}, {"with_exemplars", vote_with_exemplars}};
    j["calibration"] = {{"enabled", calibration}, {"heldout_fraction", heldout_fraction}};
    j["token_limit"] = token_limit;
    j["backend"] = {{"kind", to_string(backend.kind)},
                    {"model_id", backend.model_id},
                    {"script", backend.script.string()},
                    {"parametric",
                     {{"slope", backend.parametric.slope},
                      {"intercept", backend.parametric.intercept},
                      {"delay_ms", backend.parametric.delay_ms},
                      {"logprobs", backend.parametric.logprobs},
                      {"max_concurrency", backend.parametric.max_concurrency}}},
                    {"url", backend.http.base_url},
                    {"token_env", backend.http.token_env},
                    {"reports_memory", backend.http.reports_memory},
                    {"tokenize", backend.http.tokenize},
                    {"logprobs", backend.http.logprobs},
                    {"max_attempts", backend.http.max_attempts}};
    j["concurrency"] = concurrency;
    j["seeds"] = {{"data", seeds.data}, {"exemplar", seeds.exemplar}, {"vote", seeds.vote}, {"bootstrap", seeds.bootstrap}};
    j["bootstrap"] = {{"resamples", resamples}};
    j["profile"] = {{"repeats", profile.repeats}, {"warmup", profile.warmup}, {"batch", profile.batch},
                    {"hardware", profile.hardware}};
    j["strict"] = strict;
    return j;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
    switch (config.kind) {
        case BackendKind::ScriptedMock:
            if (config.script.empty()) throw ConfigError("scripted-mock backend needs backend.script");
            return std::make_unique<ScriptedMockBackend>(MockScript::from_json_file(config.script), config.model_id);
        case BackendKind::ParametricMock:
            return std::make_unique<ParametricMockBackend>(config.parametric, config.model_id);
        case BackendKind::HttpCompletion:
            return std::make_unique<HttpCompletionBackend>(config.http);
    }
    throw ConfigError("unsupported backend kind");
}

}  // namespace cedh
