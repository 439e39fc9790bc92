#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cedh/decide.hpp"
#include "cedh/types.hpp"

namespace cedh {

// ERR is the positive class.
struct ConfusionMatrix {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Invalid predictions are scored as the label opposite to gold.
ConfusionMatrix confusion(std::span<const Prediction> predicted, std::span<const Label> gold);

/// Aligns decisions with gold pairs by id; throws DataError on any mismatch.
ConfusionMatrix confusion(std::span<const Decision> decisions, std::span<const Pair> gold);

double accuracy(const ConfusionMatrix& cm);
double f1(const ConfusionMatrix& cm, Label positive);
double mcc(const ConfusionMatrix& cm);  // 0 when any marginal is empty

enum class Statistic { Mcc, F1Err };
std::string_view to_string(Statistic s);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool operator==(const Interval&) const = default;
};

inline constexpr std::size_t kDefaultResamples = 10000;

/// The statistic over `resamples` bootstrap replicates. Replicate b draws its
/// indices from a generator seeded with mix_seed(seed, b), so the result does
/// not depend on the order replicates are computed in.
std::vector<double> bootstrap_distribution(std::span<const Prediction> predicted,
                                           std::span<const Label> gold, Statistic statistic,
                                           std::size_t resamples, std::uint64_t seed);

/// Percentile with linear interpolation between order statistics
/// (rank = q * (n - 1)). Sorts `values`.
double percentile(std::vector<double>& values, double q);

/// 95% percentile interval. Throws DataError when fewer than 2 pairs.
Interval bootstrap_ci(std::span<const Prediction> predicted, std::span<const Label> gold,
                      Statistic statistic, std::size_t resamples, std::uint64_t seed);

struct McNemarResult {
    std::uint64_t b = 0;  // A correct, B wrong
    std::uint64_t c = 0;  // A wrong, B correct
    double p_value = 1.0;
};

/// Two-sided exact binomial p for discordant counts b, c.
double mcnemar_exact_p(std::uint64_t b, std::uint64_t c);

McNemarResult mcnemar(std::span<const Prediction> a, std::span<const Prediction> b,
                      std::span<const Label> gold);

struct CategoryRow {
    ErrorCategory category{};
    std::size_t n_gold = 0;    // gold-ERR pairs with this category
    std::size_t detected = 0;  // of those, predicted ERR
    double recall = 0.0;
    // detected / (detected + false alarms on gold-NOT pairs)
    double precision = 0.0;
};

struct CategoryBreakdown {
    std::vector<CategoryRow> rows;  // categories with no gold pairs are omitted
    std::vector<std::string> warnings;
    std::optional<double> tox_precision;
};

CategoryBreakdown error_type_breakdown(std::span<const Prediction> predicted,
                                       std::span<const Pair> gold);

struct MetricsReport {
    std::string dataset;
    std::string model;
    std::string mode;
    std::size_t n = 0;
    ConfusionMatrix cm;
    double accuracy = 0.0;
    double f1_err = 0.0;
    double f1_not = 0.0;
    double mcc = 0.0;
    Interval ci_mcc;
    Interval ci_f1_err;
    std::size_t resamples = kDefaultResamples;
    std::uint64_t seed = 0;
    std::size_t invalid = 0;
    std::string manifest_hash;
    std::optional<CategoryBreakdown> breakdown;

    std::string to_json_text() const;
    static MetricsReport from_json_text(std::string_view text);
};

MetricsReport compute_metrics(std::span<const Decision> decisions, std::span<const Pair> gold,
                              std::size_t resamples, std::uint64_t seed);

}  // namespace cedh
