#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "cedh/commands.hpp"

namespace {

struct CommonArgs {
    std::string config;
    std::optional<std::string> output_dir;
    std::optional<std::string> backend_url;
    std::optional<std::string> mode;
    std::optional<std::string> model;
    std::optional<std::uint64_t> seed_data, seed_exemplar, seed_vote, seed_bootstrap;
    std::optional<std::size_t> k, concurrency, resamples;
    std::optional<int> m;
    bool strict = false;
    bool calibrate = false;
};

nlohmann::json overrides(const CommonArgs& a) {
    nlohmann::json j = nlohmann::json::object();
    if (a.output_dir) j["output_dir"] = *a.output_dir;
    if (a.backend_url) j["backend"]["url"] = *a.backend_url;
    if (a.mode) j["mode"] = *a.mode;
    if (a.model) j["model"] = *a.model;
    if (a.seed_data) j["seeds"]["data"] = *a.seed_data;
    if (a.seed_exemplar) j["seeds"]["exemplar"] = *a.seed_exemplar;
    if (a.seed_vote) j["seeds"]["vote"] = *a.seed_vote;
    if (a.seed_bootstrap) j["seeds"]["bootstrap"] = *a.seed_bootstrap;
    if (a.k) j["few_shot"]["k"] = *a.k;
    if (a.m) j["vote"]["m"] = *a.m;
    if (a.concurrency) j["concurrency"] = *a.concurrency;
    if (a.resamples) j["bootstrap"]["resamples"] = *a.resamples;
    if (a.strict) j["strict"] = true;
    if (a.calibrate) j["calibration"]["enabled"] = true;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Critical error detection evaluation harness"};
    app.require_subcommand(1);
    CommonArgs args;

    using Command = int (*)(const cedh::RunConfig&, std::ostream&, std::ostream&);
    const std::pair<const char*, std::pair<const char*, Command>> commands[] = {
        {"ingest", {"Load datasets, print label counts, check train/dev leakage", cedh::cmd_ingest}},
        {"calibrate", {"Fit the label bias on held-out pairs", cedh::cmd_calibrate}},
        {"eval", {"Run decisions and metrics on every dev split", cedh::cmd_eval}},
        {"profile", {"Measure latency, throughput and peak memory", cedh::cmd_profile}},
        {"report", {"Render results tables and the latency/MCC frontier", cedh::cmd_report}},
        {"sft-export", {"Export fine-tuning records and hyperparameters", cedh::cmd_sft_export}},
    };
    std::vector<std::pair<CLI::App*, Command>> subs;
    for (const auto& [name, info] : commands) {
        CLI::App* sub = app.add_subcommand(name, info.first);
        sub->add_option("-c,--config", args.config, "Run configuration (JSON)")->required();
        sub->add_option("-o,--output-dir", args.output_dir, "Output directory");
        sub->add_option("--backend-url", args.backend_url, "Completion server base URL");
        sub->add_option("--mode", args.mode, "zero-shot | few-shot | vote | finetuned-eval");
        sub->add_option("--model", args.model, "Model display name");
        sub->add_option("--seed-data", args.seed_data);
        sub->add_option("--seed-exemplar", args.seed_exemplar);
        sub->add_option("--seed-vote", args.seed_vote);
        sub->add_option("--seed-bootstrap", args.seed_bootstrap);
        sub->add_option("-k,--shots", args.k, "Few-shot exemplars (even)");
        sub->add_option("-m,--votes", args.m, "Votes per pair");
        sub->add_option("--concurrency", args.concurrency, "Requests in flight");
        sub->add_option("--resamples", args.resamples, "Bootstrap resamples");
        sub->add_flag("--calibrated", args.calibrate, "Apply the fitted label bias");
        sub->add_flag("--strict", args.strict, "Fail on leakage");
        subs.emplace_back(sub, info.second);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? cedh::kExitOk : cedh::kExitUsage;
    }

    for (const auto& [sub, run] : subs) {
        if (!sub->parsed()) continue;
        return cedh::guarded(std::cerr, [&] {
            const auto config = cedh::load_config(args.config, overrides(args));
            return run(config, std::cout, std::cerr);
        });
    }
    return cedh::kExitUsage;
}
