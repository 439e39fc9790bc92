#include "cedh/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <random>
#include <unordered_map>

#include "cedh/util.hpp"

namespace cedh {

namespace {

// Cell codes for the confusion matrix.
enum Cell : std::uint8_t { kTp, kFp, kFn, kTn };

Cell cell_of(const Prediction& predicted, Label gold) {
    const Label p = predicted.value_or(opposite(gold));
    if (p == Label::Err) return gold == Label::Err ? kTp : kFp;
    return gold == Label::Err ? kFn : kTn;
}

ConfusionMatrix from_counts(const std::uint64_t (&counts)[4]) {
    return {counts[kTp], counts[kFp], counts[kFn], counts[kTn]};
}

double statistic_of(const ConfusionMatrix& cm, Statistic s) {
    return s == Statistic::Mcc ? mcc(cm) : f1(cm, Label::Err);
}

void check_aligned(std::size_t a, std::size_t b) {
    if (a != b)
        throw DataError("prediction/gold length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
}

nlohmann::ordered_json interval_json(const Interval& i) { return {i.lo, i.hi}; }

}  // namespace

ConfusionMatrix confusion(std::span<const Prediction> predicted, std::span<const Label> gold) {
    check_aligned(predicted.size(), gold.size());
    std::uint64_t counts[4] = {0, 0, 0, 0};
    for (std::size_t i = 0; i < gold.size(); ++i) ++counts[cell_of(predicted[i], gold[i])];
    return from_counts(counts);
}

ConfusionMatrix confusion(std::span<const Decision> decisions, std::span<const Pair> gold) {
    check_aligned(decisions.size(), gold.size());
    std::vector<Prediction> predicted;
    std::vector<Label> labels;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (decisions[i].pair_id != gold[i].id)
            throw DataError("decision id '" + decisions[i].pair_id + "' does not match gold id '" +
                            gold[i].id + "' at position " + std::to_string(i));
        if (!gold[i].gold) throw DataError("gold pair '" + gold[i].id + "' has no label");
        predicted.push_back(decisions[i].label);
        labels.push_back(*gold[i].gold);
    }
    return confusion(predicted, labels);
}

double accuracy(const ConfusionMatrix& cm) {
    const auto n = cm.total();
    return n == 0 ? 0.0 : static_cast<double>(cm.tp + cm.tn) / static_cast<double>(n);
}

double f1(const ConfusionMatrix& cm, Label positive) {
    const double tp = static_cast<double>(positive == Label::Err ? cm.tp : cm.tn);
    const double fp = static_cast<double>(positive == Label::Err ? cm.fp : cm.fn);
    const double fn = static_cast<double>(positive == Label::Err ? cm.fn : cm.fp);
    if (tp == 0.0) return 0.0;  // precision + recall = 0, or an empty denominator
    const double precision = tp / (tp + fp);
    const double recall = tp / (tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

double mcc(const ConfusionMatrix& cm) {
    const double tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp);
    const double fn = static_cast<double>(cm.fn), tn = static_cast<double>(cm.tn);
    const double a = tp + fp, b = tp + fn, c = tn + fp, d = tn + fn;
    if (a == 0.0 || b == 0.0 || c == 0.0 || d == 0.0) return 0.0;
    return std::clamp((tp * tn - fp * fn) / (std::sqrt(a * b) * std::sqrt(c * d)), -1.0, 1.0);
}

std::string_view to_string(Statistic s) { return s == Statistic::Mcc ? "mcc" : "f1_err"; }

std::vector<double> bootstrap_distribution(std::span<const Prediction> predicted,
                                           std::span<const Label> gold, Statistic statistic,
                                           std::size_t resamples, std::uint64_t seed) {
    check_aligned(predicted.size(), gold.size());
    const std::size_t n = gold.size();
    if (n < 2) throw DataError("bootstrap needs at least 2 pairs, got " + std::to_string(n));
    std::vector<Cell> cells(n);
    for (std::size_t i = 0; i < n; ++i) cells[i] = cell_of(predicted[i], gold[i]);

    std::vector<double> out(resamples);
    for (std::size_t b = 0; b < resamples; ++b) {
        std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(b)));
        std::uint64_t counts[4] = {0, 0, 0, 0};
        for (std::size_t i = 0; i < n; ++i) ++counts[cells[uniform_below(rng, n)]];
        out[b] = statistic_of(from_counts(counts), statistic);
    }
    return out;
}

double percentile(std::vector<double>& values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double rank = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

Interval bootstrap_ci(std::span<const Prediction> predicted, std::span<const Label> gold,
                      Statistic statistic, std::size_t resamples, std::uint64_t seed) {
    auto dist = bootstrap_distribution(predicted, gold, statistic, resamples, seed);
    return {percentile(dist, 0.025), percentile(dist, 0.975)};
}

double mcnemar_exact_p(std::uint64_t b, std::uint64_t c) {
    const std::uint64_t n = b + c;
    const std::uint64_t k = std::min(b, c);
    if (n == 0) return 1.0;
    double tail;
    if (n <= 62) {
        // Exact integer binomials along one row of Pascal's triangle.
        std::uint64_t coef = 1, sum = 0;
        for (std::uint64_t i = 0; i <= k; ++i) {
            sum += coef;
            coef = static_cast<std::uint64_t>(static_cast<unsigned __int128>(coef) * (n - i) / (i + 1));
        }
        tail = std::ldexp(static_cast<double>(sum), -static_cast<int>(n));
    } else {
        const double ln2 = std::log(2.0);
        double acc = -std::numeric_limits<double>::infinity();
        for (std::uint64_t i = 0; i <= k; ++i) {
            const double term = std::lgamma(static_cast<double>(n) + 1) -
                                std::lgamma(static_cast<double>(i) + 1) -
                                std::lgamma(static_cast<double>(n - i) + 1) - static_cast<double>(n) * ln2;
            const double hi = std::max(acc, term);
            acc = hi + std::log(std::exp(acc - hi) + std::exp(term - hi));
        }
        tail = std::exp(acc);
    }
    return std::min(1.0, 2.0 * tail);
}

McNemarResult mcnemar(std::span<const Prediction> a, std::span<const Prediction> b,
                      std::span<const Label> gold) {
    check_aligned(a.size(), gold.size());
    check_aligned(b.size(), gold.size());
    McNemarResult r;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const bool a_ok = a[i] == gold[i];
        const bool b_ok = b[i] == gold[i];
        if (a_ok && !b_ok) ++r.b;
        if (!a_ok && b_ok) ++r.c;
    }
    r.p_value = mcnemar_exact_p(r.b, r.c);
    return r;
}

CategoryBreakdown error_type_breakdown(std::span<const Prediction> predicted,
                                       std::span<const Pair> gold) {
    check_aligned(predicted.size(), gold.size());
    std::size_t n_gold[5] = {}, detected[5] = {};
    std::size_t false_alarms = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const Pair& g = gold[i];
        if (!g.gold) continue;
        const bool says_err = predicted[i].value_or(opposite(*g.gold)) == Label::Err;
        if (*g.gold == Label::Not) {
            false_alarms += says_err;
        } else if (g.category) {
            const auto c = static_cast<std::size_t>(*g.category);
            ++n_gold[c];
            detected[c] += says_err;
        }
    }
    CategoryBreakdown out;
    for (ErrorCategory cat : kAllCategories) {
        const auto c = static_cast<std::size_t>(cat);
        if (n_gold[c] == 0) continue;
        CategoryRow row{cat, n_gold[c], detected[c]};
        row.recall = static_cast<double>(detected[c]) / static_cast<double>(n_gold[c]);
        const std::size_t flagged = detected[c] + false_alarms;
        row.precision = flagged == 0 ? 0.0 : static_cast<double>(detected[c]) / static_cast<double>(flagged);
        if (cat == ErrorCategory::Tox) out.tox_precision = row.precision;
        out.rows.push_back(row);
    }
    if (out.rows.empty()) out.warnings.emplace_back("no categorized ERR pairs; breakdown is empty");
    return out;
}

std::string MetricsReport::to_json_text() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    j["model"] = model;
    j["mode"] = mode;
    j["n"] = n;
    j["confusion"] = {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}};
    j["accuracy"] = accuracy;
    j["f1_err"] = f1_err;
    j["f1_not"] = f1_not;
    j["mcc"] = mcc;
    j["ci_mcc"] = interval_json(ci_mcc);
    j["ci_f1_err"] = interval_json(ci_f1_err);
    j["bootstrap_resamples"] = resamples;
    j["bootstrap_seed"] = seed;
    j["invalid"] = invalid;
    j["manifest_hash"] = manifest_hash;
    if (breakdown) {
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (const auto& r : breakdown->rows)
            rows.push_back({{"category", to_string(r.category)},
                            {"n_gold", r.n_gold},
                            {"detected", r.detected},
                            {"recall", r.recall},
                            {"precision", r.precision}});
        j["error_types"] = {{"rows", rows},
                            {"tox_precision", breakdown->tox_precision
                                                  ? nlohmann::ordered_json(*breakdown->tox_precision)
                                                  : nlohmann::ordered_json(nullptr)},
                            {"warnings", breakdown->warnings}};
    }
    return j.dump(2) + '\n';
}

MetricsReport MetricsReport::from_json_text(std::string_view text) {
    try {
        auto j = nlohmann::json::parse(text);
        MetricsReport r;
        r.dataset = j.at("dataset").get<std::string>();
        r.model = j.at("model").get<std::string>();
        r.mode = j.at("mode").get<std::string>();
        r.n = j.at("n").get<std::size_t>();
        const auto& c = j.at("confusion");
        r.cm = {c.at("tp").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(),
                c.at("fn").get<std::uint64_t>(), c.at("tn").get<std::uint64_t>()};
        r.accuracy = j.at("accuracy").get<double>();
        r.f1_err = j.at("f1_err").get<double>();
        r.f1_not = j.at("f1_not").get<double>();
        r.mcc = j.at("mcc").get<double>();
        r.ci_mcc = {j.at("ci_mcc").at(0).get<double>(), j.at("ci_mcc").at(1).get<double>()};
        r.ci_f1_err = {j.at("ci_f1_err").at(0).get<double>(), j.at("ci_f1_err").at(1).get<double>()};
        r.resamples = j.at("bootstrap_resamples").get<std::size_t>();
        r.seed = j.at("bootstrap_seed").get<std::uint64_t>();
        r.invalid = j.value("invalid", std::size_t{0});
        r.manifest_hash = j.value("manifest_hash", std::string());
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed metrics report: ") + e.what());
    }
}

MetricsReport compute_metrics(std::span<const Decision> decisions, std::span<const Pair> gold,
                              std::size_t resamples, std::uint64_t seed) {
    MetricsReport r;
    r.cm = confusion(decisions, gold);
    r.n = gold.size();
    r.accuracy = accuracy(r.cm);
    r.f1_err = f1(r.cm, Label::Err);
    r.f1_not = f1(r.cm, Label::Not);
    r.mcc = mcc(r.cm);
    r.resamples = resamples;
    r.seed = seed;
    std::vector<Prediction> predicted;
    std::vector<Label> labels;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        predicted.push_back(decisions[i].label);
        labels.push_back(*gold[i].gold);
        r.invalid += !decisions[i].label.has_value();
    }
    r.ci_mcc = bootstrap_ci(predicted, labels, Statistic::Mcc, resamples, seed);
    r.ci_f1_err = bootstrap_ci(predicted, labels, Statistic::F1Err, resamples, seed);
    bool any_category = false;
    for (const auto& p : gold) any_category |= p.category.has_value();
    if (any_category) r.breakdown = error_type_breakdown(predicted, gold);
    return r;
}

}  // namespace cedh
