#include "cedh/commands.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "cedh/metrics.hpp"
#include "cedh/profile.hpp"
#include "cedh/report.hpp"
#include "cedh/util.hpp"

namespace cedh {

namespace {

// Exclusive advisory lock on the output directory. Evaluation and profiling
// both take it, so they never overlap on one output directory.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir) {
        std::filesystem::create_directories(dir);
        const auto path = dir / ".cedh.lock";
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) throw ConfigError("cannot open lock file " + path.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw ConfigError("another eval or profile run holds " + path.string());
        }
    }
    ~RunLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    int fd_ = -1;
};

Dataset load_spec(const DatasetSpec& spec, Split split) {
    Dataset d = load_dataset(spec.path, spec.format, spec.scheme, split);
    d.name = spec.name;
    return d;
}

Dataset concat(const std::vector<Dataset>& parts, std::string name, Split split) {
    Dataset out{std::move(name), split, LabelScheme::Native, {}};
    for (const auto& d : parts) out.pairs.insert(out.pairs.end(), d.pairs.begin(), d.pairs.end());
    return out;
}

DatasetFingerprint fingerprint(const DatasetSpec& spec) {
    return {spec.name, spec.path.string(), sha256_hex(read_file(spec.path))};
}

struct HeldoutSplit {
    Dataset heldout;
    Dataset rest;
};

// Calibration data: the configured held-out file, or a seeded slice of the
// concatenated train splits.
HeldoutSplit split_heldout(const RunConfig& config, const std::vector<DatasetSpec>& train_specs) {
    std::vector<Dataset> train;
    for (const auto& s : train_specs) train.push_back(load_spec(s, Split::Train));
    Dataset all = concat(train, "train", Split::Train);
    if (config.heldout) return {load_spec(*config.heldout, Split::Dev), std::move(all)};
    if (all.pairs.empty()) throw ConfigError("calibration needs datasets.heldout or at least one train split");
    const auto order = seeded_permutation(all.pairs.size(), config.seeds.data);
    const auto n_heldout = static_cast<std::size_t>(
        std::ceil(config.heldout_fraction * static_cast<double>(all.pairs.size())));
    HeldoutSplit out{{"heldout", Split::Dev, LabelScheme::Native, {}}, {all.name, Split::Train, LabelScheme::Native, {}}};
    std::vector<bool> is_heldout(all.pairs.size(), false);
    for (std::size_t i = 0; i < n_heldout; ++i) is_heldout[order[i]] = true;
    for (std::size_t i = 0; i < all.pairs.size(); ++i)
        (is_heldout[i] ? out.heldout : out.rest).pairs.push_back(all.pairs[i]);
    return out;
}

bool uses_exemplars(const RunConfig& c) {
    if (c.k == 0) return false;
    return c.mode == DecisionMode::FewShot || (c.mode == DecisionMode::Vote && c.vote_with_exemplars);
}

std::vector<DatasetSpec> train_specs_for(const RunConfig& c, const std::string& dev_name) {
    std::vector<DatasetSpec> out;
    for (const auto& s : c.train)
        if (s.name == dev_name) out.push_back(s);
    return out;
}

TokenCounter counter_for(const Backend& backend) {
    if (auto c = backend.token_counter()) return *c;
    return fallback_token_count;
}

// Everything needed to turn a pair into a prompt and a decision.
struct EvalSetup {
    const RunConfig& config;
    std::optional<ExemplarPool> pool;
    TokenCounter counter;
    std::optional<CalibrationModel> calibration;

    Prompt prompt(const Pair& p) const {
        if (!pool) return build_zero_shot(p, {}, counter, config.token_limit);
        return build_few_shot(p, pool->select(p, config.k), {}, counter, config.token_limit);
    }

    Decision decide(const Pair& p, const Prompt& prompt, Backend& backend) const {
        DecideOptions opt;
        opt.mode = config.mode;
        opt.temperature = config.temperature;
        opt.nucleus_p = config.nucleus_p;
        opt.seed_base = mix_seed(config.seeds.vote, p.id);
        const CalibrationModel* cal = calibration ? &*calibration : nullptr;
        if (config.mode == DecisionMode::Vote) return vote(p, prompt, backend, config.m, opt, cal);
        return decide_greedy(p, prompt, backend, cal, opt);
    }
};

struct PreparedRun {
    Dataset dev;
    std::vector<DatasetFingerprint> fingerprints;
    std::optional<ExemplarPool> pool;
    std::optional<CalibrationModel> calibration;
    std::string calibration_sha;
};

PreparedRun prepare(const RunConfig& config, const DatasetSpec& dev_spec) {
    PreparedRun run;
    run.dev = load_spec(dev_spec, Split::Dev);
    run.fingerprints.push_back(fingerprint(dev_spec));
    if (uses_exemplars(config)) {
        auto specs = train_specs_for(config, dev_spec.name);
        if (specs.empty())
            throw ConfigError("mode " + std::string(to_string(config.mode)) + " needs a train split named '" +
                              dev_spec.name + "' for exemplars");
        for (const auto& s : specs) run.fingerprints.push_back(fingerprint(s));
        if (config.calibration) {
            // Keep calibration pairs out of the exemplar pool.
            auto split = split_heldout(config, specs);
            run.pool.emplace(split.rest, config.seeds.exemplar);
        } else {
            std::vector<Dataset> parts;
            for (const auto& s : specs) parts.push_back(load_spec(s, Split::Train));
            run.pool.emplace(concat(parts, dev_spec.name, Split::Train), config.seeds.exemplar);
        }
    }
    if (config.calibration) {
        if (!std::filesystem::exists(config.calibration_path))
            throw ConfigError("calibration enabled but " + config.calibration_path.string() +
                              " does not exist; run `cedh calibrate` first");
        const std::string text = read_file(config.calibration_path);
        run.calibration = CalibrationModel::from_json_text(text);
        run.calibration_sha = sha256_hex(text);
    }
    return run;
}

RunManifest make_manifest(const RunConfig& config, const std::string& dataset,
                          const std::vector<DatasetFingerprint>& fingerprints, const Backend& backend,
                          const std::string& calibration_sha) {
    RunManifest m;
    m.config = config.snapshot();
    m.config["run"] = {{"dataset", dataset}, {"calibration_sha256", calibration_sha}};
    m.seeds = {{"data", config.seeds.data},
               {"exemplar", config.seeds.exemplar},
               {"vote", config.seeds.vote},
               {"bootstrap", config.seeds.bootstrap}};
    m.datasets = fingerprints;
    m.backend = backend.descriptor();
    m.created_at = utc_timestamp();
    return m;
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::vector<std::filesystem::path> files_with_suffix(const std::filesystem::path& dir, std::string_view suffix) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::exists(dir)) return out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

int guarded(std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const BudgetError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const ExemplarError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const BackendError& e) {
        err << "backend error: " << e.what() << '\n';
        return kExitBackend;
    } catch (const ProfileAborted& e) {
        err << "backend error: " << e.what() << '\n';
        return kExitBackend;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

std::vector<Decision> run_decisions(const RunConfig& config, const Dataset& dev, const ExemplarPool* pool,
                                    Backend& backend, const CalibrationModel* calibration,
                                    const std::function<void(const Decision&)>& sink) {
    EvalSetup setup{config, pool ? std::optional<ExemplarPool>(*pool) : std::nullopt, counter_for(backend),
                    calibration ? std::optional<CalibrationModel>(*calibration) : std::nullopt};
    const std::size_t n = dev.pairs.size();
    std::vector<std::optional<Decision>> results(n);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr failure;
    std::mutex mu;
    std::size_t flushed = 0;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n || stop.load()) return;
            const Pair& pair = dev.pairs[i];
            Decision d;
            try {
                try {
                    d = setup.decide(pair, setup.prompt(pair), backend);
                } catch (const TransportError& e) {
                    d = Decision{};
                    d.pair_id = pair.id;
                    d.mode = config.mode;
                    d.error = e.what();
                }
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                stop = true;
                return;
            }
            std::lock_guard lock(mu);
            results[i] = std::move(d);
            while (flushed < n && results[flushed]) {
                if (sink) sink(*results[flushed]);
                ++flushed;
            }
        }
    };
    const std::size_t threads = std::min(config.concurrency, std::max<std::size_t>(n, 1));
    std::vector<std::thread> pool_threads;
    for (std::size_t t = 0; t < threads; ++t) pool_threads.emplace_back(worker);
    for (auto& t : pool_threads) t.join();
    if (failure) std::rethrow_exception(failure);

    std::vector<Decision> out;
    out.reserve(n);
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
}

std::vector<Decision> run_decisions(const RunConfig& config, const Dataset& dev, const Dataset* exemplar_train,
                                    Backend& backend, const CalibrationModel* calibration) {
    std::optional<ExemplarPool> pool;
    if (exemplar_train) pool.emplace(*exemplar_train, config.seeds.exemplar);
    return run_decisions(config, dev, pool ? &*pool : nullptr, backend, calibration, {});
}

int cmd_ingest(const RunConfig& config, std::ostream& out, std::ostream& err) {
    if (config.train.empty() && config.dev.empty()) throw ConfigError("no datasets configured");
    std::vector<Dataset> train, dev;
    nlohmann::ordered_json summary;
    summary["splits"] = nlohmann::ordered_json::array();
    out << std::left << std::setw(24) << "dataset" << std::setw(7) << "split" << std::right << std::setw(10)
        << "NOT" << std::setw(10) << "ERR" << std::setw(10) << "total" << '\n';
    auto show = [&](const Dataset& d, const DatasetSpec& spec) {
        const auto dist = split_stats(d);
        out << std::left << std::setw(24) << d.name << std::setw(7) << to_string(d.split) << std::right
            << std::setw(10) << dist.n_not << std::setw(10) << dist.n_err << std::setw(10) << dist.total() << '\n';
        summary["splits"].push_back({{"dataset", d.name},
                                     {"split", to_string(d.split)},
                                     {"path", spec.path.string()},
                                     {"sha256", sha256_hex(read_file(spec.path))},
                                     {"n_not", dist.n_not},
                                     {"n_err", dist.n_err}});
    };
    for (const auto& s : config.train) {
        train.push_back(load_spec(s, Split::Train));
        show(train.back(), s);
    }
    for (const auto& s : config.dev) {
        dev.push_back(load_spec(s, Split::Dev));
        show(dev.back(), s);
    }
    std::size_t total_leaks = 0;
    summary["leaks"] = nlohmann::ordered_json::array();
    for (const auto& t : train)
        for (const auto& d : dev) {
            auto report = check_leakage(t, d);
            for (const auto& leak : report.leaks) {
                out << "leak: " << t.name << "/train id=" << leak.train_id << " <-> " << d.name
                    << "/dev id=" << leak.dev_id << '\n';
                summary["leaks"].push_back({{"train", t.name}, {"train_id", leak.train_id},
                                            {"dev", d.name}, {"dev_id", leak.dev_id}});
            }
            total_leaks += report.leaks.size();
        }
    out << (total_leaks == 0 ? "leakage check: clean" : "leakage check: " + std::to_string(total_leaks) + " leaked pair(s)")
        << '\n';
    write_file(config.output_dir / "ingest_summary.json", summary.dump(2) + '\n');
    if (total_leaks > 0 && config.strict) {
        err << "strict: train/dev leakage detected\n";
        return kExitStrict;
    }
    return kExitOk;
}

int cmd_calibrate(const RunConfig& config, std::ostream& out, std::ostream&) {
    auto backend = make_backend(config.backend);
    if (!backend->supports_logprobs())
        throw CapabilityError("backend '" + backend->descriptor().model_id +
                              "' exposes no log-probabilities; calibration is unavailable (use vote-only mode)");
    auto split = split_heldout(config, config.train);
    const TokenCounter counter = counter_for(*backend);
    auto model = estimate_bias(
        split.heldout, [&](const Pair& p) { return build_zero_shot(p, {}, counter, config.token_limit); }, *backend);
    write_file(config.calibration_path, model.to_json_text());
    out << "beta=" << fixed(model.beta, 6) << " prior=" << fixed(model.fitted_prior)
        << " err_rate_before=" << fixed(model.uncalibrated_err_rate)
        << " err_rate_after=" << fixed(model.calibrated_err_rate) << " n=" << model.heldout_size
        << " iterations=" << model.iterations << '\n';
    out << "wrote " << config.calibration_path.string() << '\n';
    return kExitOk;
}

/// Mode name used in file names and tables; calibrated runs get a "+cal" suffix.
std::string run_label(const RunConfig& config) {
    std::string label(to_string(config.mode));
    if (config.calibration) label += "+cal";
    return label;
}

int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& err) {
    if (config.dev.empty()) throw ConfigError("eval needs at least one datasets.dev entry");
    RunLock lock(config.output_dir);
    auto backend = make_backend(config.backend);
    const std::string mode = run_label(config);
    int status = kExitOk;
    for (const auto& spec : config.dev) {
        PreparedRun run = prepare(config, spec);
        auto manifest = make_manifest(config, spec.name, run.fingerprints, *backend, run.calibration_sha);
        const auto manifest_path = config.output_dir / output_name(spec.name, config.model, mode, "manifest.json");
        const std::string hash = emit_manifest(manifest, manifest_path);

        const auto log_path = config.output_dir / output_name(spec.name, config.model, mode, "decisions.jsonl");
        std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
        if (!log) throw std::runtime_error("cannot write " + log_path.string());
        nlohmann::ordered_json header{{"manifest_hash", hash}, {"dataset", spec.name}, {"model", config.model}, {"mode", mode}};
        log << header.dump() << '\n';
        auto decisions = run_decisions(config, run.dev, run.pool ? &*run.pool : nullptr, *backend,
                                       run.calibration ? &*run.calibration : nullptr,
                                       [&](const Decision& d) { log << decision_to_json_line(d) << '\n'; });
        log.close();

        MetricsReport report = compute_metrics(decisions, run.dev.pairs, config.resamples, config.seeds.bootstrap);
        report.dataset = spec.name;
        report.model = config.model;
        report.mode = mode;
        report.manifest_hash = hash;
        write_file(config.output_dir / output_name(spec.name, config.model, mode, "metrics.json"), report.to_json_text());
        verify_manifest(manifest_path, hash);

        const auto failed = static_cast<std::size_t>(
            std::count_if(decisions.begin(), decisions.end(), [](const Decision& d) { return !d.error.empty(); }));
        out << spec.name << " " << config.model << " " << mode << ": n=" << report.n << " acc=" << fixed(report.accuracy)
            << " mcc=" << fixed(report.mcc) << " [" << fixed(report.ci_mcc.lo) << ", " << fixed(report.ci_mcc.hi)
            << "] f1_err=" << fixed(report.f1_err) << " [" << fixed(report.ci_f1_err.lo) << ", "
            << fixed(report.ci_f1_err.hi) << "] f1_not=" << fixed(report.f1_not) << " invalid=" << report.invalid
            << '\n';
        if (failed > 0) err << spec.name << ": " << failed << " pair(s) voided by transport failures\n";
        if (failed == decisions.size()) status = kExitBackend;
    }
    return status;
}

int cmd_profile(const RunConfig& config, std::ostream& out, std::ostream&) {
    if (config.dev.empty()) throw ConfigError("profile needs at least one datasets.dev entry");
    RunLock lock(config.output_dir);
    auto backend = make_backend(config.backend);
    const auto& spec = config.dev.front();
    PreparedRun run = prepare(config, spec);
    const std::string mode = run_label(config);
    auto manifest = make_manifest(config, spec.name, run.fingerprints, *backend, run.calibration_sha);
    const std::string hash =
        emit_manifest(manifest, config.output_dir / output_name(spec.name, config.model, mode, "profile.manifest.json"));

    EvalSetup setup{config, run.pool, counter_for(*backend), run.calibration};
    Pipeline pipeline;
    pipeline.build_prompt = [&](const Pair& p) { return setup.prompt(p); };
    pipeline.decide = [&](const Pair& p, const Prompt& pr, Backend& b) { return setup.decide(p, pr, b); };
    pipeline.backend = backend.get();

    ProfileReport report;
    report.dataset = spec.name;
    report.model = config.model;
    report.mode = mode;
    report.hardware = config.profile.hardware;
    report.manifest_hash = hash;
    report.latency = measure_latency(pipeline, run.dev.pairs.front(), config.profile.repeats, config.profile.warmup);
    report.throughput = measure_throughput(pipeline, run.dev.pairs, config.profile.batch, config.profile.repeats,
                                           &report.memory);
    write_file(config.output_dir / output_name(spec.name, config.model, mode, "profile.json"), report.to_json_text());
    out << spec.name << " " << config.model << " " << mode << ": latency_ms=" << fixed(report.latency.mean_ms, 2)
        << " throughput_sps=" << fixed(report.throughput.mean_sps, 2)
        << " peak_memory=" << (report.memory.bytes ? std::to_string(*report.memory.bytes) : std::string("null")) << " ("
        << to_string(report.memory.source) << ")" << (report.throughput.serialized ? " [serialized backend]" : "")
        << '\n';
    return kExitOk;
}

int cmd_report(const RunConfig& config, std::ostream& out, std::ostream&) {
    std::vector<MetricsReport> metrics;
    for (const auto& p : files_with_suffix(config.output_dir, ".metrics.json"))
        metrics.push_back(MetricsReport::from_json_text(read_file(p)));
    if (metrics.empty()) throw DataError("no *.metrics.json reports in " + config.output_dir.string());
    std::vector<ProfileReport> profiles;
    for (const auto& p : files_with_suffix(config.output_dir, ".profile.json"))
        profiles.push_back(ProfileReport::from_json_text(read_file(p)));

    auto table = render_results_table(metrics);
    std::string sources = "Sources (manifest hashes):\n\n";
    for (const auto& m : metrics)
        sources += "- " + output_name(m.dataset, m.model, m.mode, "metrics.json") + ": `" + m.manifest_hash + "`\n";
    write_file(config.output_dir / "results.md", table.markdown + sources);
    write_file(config.output_dir / "results.csv", table.csv);

    std::map<std::string, std::vector<FrontierPoint>> by_dataset;
    for (const auto& prof : profiles)
        for (const auto& m : metrics)
            if (m.dataset == prof.dataset && m.model == prof.model && m.mode == prof.mode)
                by_dataset[m.dataset].push_back({m.model + "/" + m.mode, prof.latency.mean_ms, m.mcc});
    std::string frontier = "dataset,label,latency_ms,mcc,on_frontier\n";
    for (const auto& [dataset, points] : by_dataset) {
        auto front = pareto_frontier(points);
        auto csv = frontier_csv(points, front);
        std::istringstream lines(csv);
        std::string line;
        std::getline(lines, line);  // header
        while (std::getline(lines, line)) frontier += dataset + ',' + line + '\n';
    }
    write_file(config.output_dir / "frontier.csv", frontier);
    out << table.markdown;
    out << "wrote results.md, results.csv, frontier.csv to " << config.output_dir.string() << '\n';
    return kExitOk;
}

int cmd_sft_export(const RunConfig& config, std::ostream& out, std::ostream&) {
    if (config.train.empty()) throw ConfigError("sft-export needs at least one datasets.train entry");
    std::vector<Dataset> parts;
    std::vector<DatasetFingerprint> prints;
    for (const auto& s : config.train) {
        parts.push_back(load_spec(s, Split::Train));
        prints.push_back(fingerprint(s));
    }
    Dataset train = concat(parts, "train", Split::Train);
    FewShotPolicy policy;
    policy.seed = config.seeds.data;
    policy.order = ExemplarOrder::ShufflePerEpoch;
    auto bundle = export_sft(train, {}, policy, {}, fallback_token_count, config.token_limit);

    RunManifest manifest;
    manifest.config = config.snapshot();
    manifest.seeds = {{"data", config.seeds.data}};
    manifest.datasets = prints;
    manifest.backend.model_id = config.model;
    manifest.created_at = utc_timestamp();
    const auto dir = config.output_dir / "sft";
    const std::string hash = emit_manifest(manifest, dir / "run_manifest.json");

    auto hyper = nlohmann::ordered_json::parse(sft_manifest_json(bundle.manifest));
    hyper["manifest_hash"] = hash;
    hyper["records"] = bundle.records.size();
    hyper["shuffle_seed"] = policy.seed;
    write_file(dir / "sft_records.jsonl", sft_records_jsonl(bundle));
    write_file(dir / "sft_manifest.json", hyper.dump(2) + '\n');
    out << "exported " << bundle.records.size() << " records (" << bundle.manifest.epochs << " epochs x "
        << train.pairs.size() << " pairs) to " << dir.string() << '\n';
    return kExitOk;
}

}  // namespace cedh
