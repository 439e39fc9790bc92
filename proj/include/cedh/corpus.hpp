#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cedh/types.hpp"

namespace cedh {

enum class DatasetFormat { Tsv, Jsonl };
enum class LabelScheme { Native, OkBad };
enum class Split { Train, Dev };

DatasetFormat parse_format(std::string_view s);  // "tsv" | "jsonl"
LabelScheme parse_scheme(std::string_view s);    // "native" | "ok_bad"
Split parse_split(std::string_view s);           // "train" | "dev"
std::string_view to_string(DatasetFormat f);
std::string_view to_string(LabelScheme s);
std::string_view to_string(Split s);

// Loaded datasets are immutable after construction and safe to share
// across threads.
struct Dataset {
    std::string name;
    Split split = Split::Dev;
    LabelScheme label_scheme = LabelScheme::Native;
    std::vector<Pair> pairs;

    bool operator==(const Dataset&) const = default;
};

struct LabelDistribution {
    std::size_t n_not = 0;
    std::size_t n_err = 0;

    std::size_t total() const { return n_not + n_err; }
    bool operator==(const LabelDistribution&) const = default;
};

struct Leak {
    std::string train_id;
    std::string dev_id;
    std::string source;
    std::string target;
};

struct LeakReport {
    std::vector<Leak> leaks;
    bool clean() const { return leaks.empty(); }
};

/// NFC-normalizes `text`, trims ASCII whitespace at both ends and collapses
/// internal ASCII whitespace runs to a single space. Case, punctuation and
/// digits are untouched. Throws DataError on ill-formed UTF-8.
std::string normalize_text(std::string_view text);

std::pair<std::string, std::string> normalize_pair(std::string_view source,
                                                   std::string_view target);

/// OK/BAD under ok_bad, ERR/NOT verbatim under native. Anything else throws
/// DataError naming the token.
Label map_label(std::string_view token, LabelScheme scheme);

// Inverse mapping used when writing datasets back out.
std::string_view label_token(Label label, LabelScheme scheme);

Dataset parse_dataset(std::string_view bytes, DatasetFormat format, LabelScheme scheme,
                      std::string name = {}, Split split = Split::Dev);

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     LabelScheme scheme, Split split = Split::Dev);

// Writes in the dataset's own label scheme, so load(serialize(d)) == d.
std::string serialize_dataset(const Dataset& dataset, DatasetFormat format);

LeakReport check_leakage(const Dataset& train, const Dataset& dev);

LabelDistribution split_stats(const Dataset& dataset);

}  // namespace cedh
