#include "cedh/report.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <limits>

#include "cedh/util.hpp"

namespace cedh {

namespace {

struct Column {
    const char* name;
    double MetricsReport::*field;
};

constexpr Column kColumns[] = {
    {"MCC", &MetricsReport::mcc},
    {"F1-ERR", &MetricsReport::f1_err},
    {"F1-NOT", &MetricsReport::f1_not},
};

std::string sanitize(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c == '/' || c == '\\' || c == ' ' || c == ':') c = '_';
    return out;
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

nlohmann::ordered_json manifest_body(const RunManifest& m) {
    nlohmann::ordered_json j;
    j["code_version"] = m.code_version;
    j["config"] = m.config;
    j["seeds"] = m.seeds;
    nlohmann::ordered_json ds = nlohmann::ordered_json::array();
    for (const auto& d : m.datasets) ds.push_back({{"name", d.name}, {"path", d.path}, {"sha256", d.sha256}});
    j["datasets"] = ds;
    j["backend"] = {{"kind", to_string(m.backend.kind)},
                    {"model_id", m.backend.model_id},
                    {"endpoint", m.backend.endpoint},
                    {"token_env", m.backend.token_env},
                    {"reports_memory", m.backend.reports_memory}};
    return j;
}

}  // namespace

std::string format_display(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string format_full(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

ResultsTable render_results_table(std::span<const MetricsReport> reports) {
    ResultsTable out;
    out.csv = "dataset,model,mode,n,accuracy,mcc,ci_mcc_lo,ci_mcc_hi,f1_err,ci_f1_err_lo,ci_f1_err_hi,"
              "f1_not,best_mcc,best_f1_err,best_f1_not\n";
    std::vector<std::string> datasets;
    for (const auto& r : reports)
        if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end())
            datasets.push_back(r.dataset);

    for (const auto& dataset : datasets) {
        std::vector<const MetricsReport*> rows;
        for (const auto& r : reports)
            if (r.dataset == dataset) rows.push_back(&r);
        double best[3];
        for (int c = 0; c < 3; ++c) {
            best[c] = rows.front()->*kColumns[c].field;
            for (const auto* r : rows) best[c] = std::max(best[c], r->*kColumns[c].field);
        }
        out.markdown += "### " + dataset + "\n\n";
        out.markdown += "| Model | Mode | MCC | F1-ERR | F1-NOT | MCC 95% CI | n |\n";
        out.markdown += "|---|---|---|---|---|---|---|\n";
        for (const auto* r : rows) {
            out.markdown += "| " + r->model + " | " + r->mode + " |";
            bool is_best[3];
            for (int c = 0; c < 3; ++c) {
                const double v = r->*kColumns[c].field;
                is_best[c] = v == best[c];
                out.markdown += is_best[c] ? " **" + format_display(v) + "** |" : " " + format_display(v) + " |";
            }
            out.markdown += " [" + format_display(r->ci_mcc.lo) + ", " + format_display(r->ci_mcc.hi) +
                            "] | " + std::to_string(r->n) + " |\n";
            out.csv += csv_field(r->dataset) + ',' + csv_field(r->model) + ',' + csv_field(r->mode) + ',' +
                       std::to_string(r->n) + ',' + format_full(r->accuracy) + ',' + format_full(r->mcc) +
                       ',' + format_full(r->ci_mcc.lo) + ',' + format_full(r->ci_mcc.hi) + ',' +
                       format_full(r->f1_err) + ',' + format_full(r->ci_f1_err.lo) + ',' +
                       format_full(r->ci_f1_err.hi) + ',' + format_full(r->f1_not) + ',' +
                       (is_best[0] ? "1" : "0") + ',' + (is_best[1] ? "1" : "0") + ',' +
                       (is_best[2] ? "1" : "0") + '\n';
        }
        out.markdown += "\nBest per column in bold.\n\n";
    }
    return out;
}

bool dominates(const FrontierPoint& a, const FrontierPoint& b) {
    return a.latency_ms <= b.latency_ms && a.mcc >= b.mcc &&
           (a.latency_ms < b.latency_ms || a.mcc > b.mcc);
}

std::vector<FrontierPoint> pareto_frontier(std::span<const FrontierPoint> points) {
    std::vector<FrontierPoint> sorted(points.begin(), points.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.latency_ms < b.latency_ms; });
    // Sweep by latency: a point survives iff every strictly faster point has a
    // lower MCC and no equally fast point has a higher one.
    std::vector<FrontierPoint> out;
    double faster_best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        double group_best = sorted[i].mcc;
        for (; j < sorted.size() && sorted[j].latency_ms == sorted[i].latency_ms; ++j)
            group_best = std::max(group_best, sorted[j].mcc);
        for (std::size_t k = i; k < j; ++k)
            if (sorted[k].mcc == group_best && sorted[k].mcc > faster_best) out.push_back(sorted[k]);
        faster_best = std::max(faster_best, group_best);
        i = j;
    }
    return out;
}

std::string frontier_csv(std::span<const FrontierPoint> all, std::span<const FrontierPoint> frontier) {
    std::string out = "label,latency_ms,mcc,on_frontier\n";
    for (const auto& p : all) {
        const bool on = std::find(frontier.begin(), frontier.end(), p) != frontier.end();
        out += csv_field(p.label) + ',' + format_full(p.latency_ms) + ',' + format_full(p.mcc) + ',' +
               (on ? "1" : "0") + '\n';
    }
    return out;
}

std::string RunManifest::hash() const { return sha256_hex(manifest_body(*this).dump()); }

std::string RunManifest::to_json_text() const {
    auto j = manifest_body(*this);
    j["created_at"] = created_at;
    j["manifest_hash"] = hash();
    return j.dump(2) + '\n';
}

std::string emit_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
    if (manifest.datasets.empty()) throw ConfigError("manifest lists no datasets; refusing to start run");
    for (const auto& d : manifest.datasets)
        if (d.sha256.empty())
            throw ConfigError("dataset '" + d.name + "' has no content hash; refusing to start run");
    write_file(path, manifest.to_json_text());
    return manifest.hash();
}

void verify_manifest(const std::filesystem::path& path, const std::string& expected) {
    auto j = nlohmann::ordered_json::parse(read_file(path));
    std::string recorded = j.value("manifest_hash", std::string());
    j.erase("manifest_hash");
    j.erase("created_at");
    if (recorded != expected || sha256_hex(j.dump()) != expected)
        throw ConfigError("run manifest " + path.string() + " changed during the run");
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string output_name(std::string_view dataset, std::string_view model, std::string_view mode,
                        std::string_view ext) {
    return sanitize(dataset) + "__" + sanitize(model) + "__" + sanitize(mode) + "." + std::string(ext);
}

}  // namespace cedh
