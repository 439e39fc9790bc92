#include "cedh/corpus.hpp"

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>
#include <unicode/ustring.h>

#include <json.hpp>
#include <map>
#include <set>
#include <unordered_set>

#include "cedh/util.hpp"

namespace cedh {

namespace {

bool is_ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_ascii_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

std::vector<std::string_view> split_lines(std::string_view bytes) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < bytes.size()) {
        std::size_t nl = bytes.find('\n', start);
        if (nl == std::string_view::npos) nl = bytes.size();
        std::string_view line = bytes.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = nl + 1;
    }
    return lines;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

struct RawRow {
    std::size_t line;
    std::string id, source, target, label, category;
};

Pair make_pair_from_row(const RawRow& row, LabelScheme scheme) {
    auto where = [&] { return "line " + std::to_string(row.line); };
    Pair p;
    if (row.id.empty()) throw DataError(where() + ": empty id");
    p.id = row.id;
    try {
        auto [s, t] = normalize_pair(row.source, row.target);
        p.source = std::move(s);
        p.target = std::move(t);
    } catch (const DataError& e) {
        throw DataError(where() + ": " + e.what());
    }
    if (p.source.empty() || p.target.empty())
        throw DataError(where() + ": empty source or target after normalization");
    try {
        p.gold = map_label(row.label, scheme);
    } catch (const DataError& e) {
        throw DataError(where() + ": " + e.what());
    }
    if (!row.category.empty()) {
        p.category = category_from_string(row.category);
        if (!p.category) throw DataError(where() + ": unknown error category '" + row.category + "'");
        if (p.gold != Label::Err)
            throw DataError(where() + ": error category given for a non-ERR pair");
    }
    return p;
}

std::vector<RawRow> parse_tsv_rows(std::string_view bytes) {
    auto lines = split_lines(bytes);
    if (lines.empty()) throw DataError("no records");
    auto header = split_tabs(lines[0]);
    const bool has_category = header.size() == 5;
    const bool header_ok = (header.size() == 4 || has_category) && header[0] == "id" &&
                           header[1] == "source" && header[2] == "target" &&
                           header[3] == "label" && (!has_category || header[4] == "category");
    if (!header_ok)
        throw DataError("line 1: expected header id\\tsource\\ttarget\\tlabel[\\tcategory]");
    std::vector<RawRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto fields = split_tabs(lines[i]);
        if (fields.size() != header.size())
            throw DataError("line " + std::to_string(i + 1) + ": malformed row, expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        RawRow r{i + 1,
                 std::string(fields[0]),
                 std::string(fields[1]),
                 std::string(fields[2]),
                 std::string(fields[3]),
                 has_category ? std::string(fields[4]) : std::string()};
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<RawRow> parse_jsonl_rows(std::string_view bytes) {
    std::vector<RawRow> rows;
    auto lines = split_lines(bytes);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        if (lines[i].find_first_not_of(" \t") == std::string_view::npos) continue;
        auto where = "line " + std::to_string(line_no);
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::parse_error&) {
            throw DataError(where + ": malformed record (invalid JSON)");
        }
        if (!obj.is_object()) throw DataError(where + ": malformed record (not an object)");
        auto field = [&](const char* key, bool required) -> std::string {
            auto it = obj.find(key);
            if (it == obj.end() || it->is_null()) {
                if (required) throw DataError(where + ": malformed record, missing '" + key + "'");
                return {};
            }
            if (!it->is_string())
                throw DataError(where + ": malformed record, '" + key + "' is not a string");
            return it->get<std::string>();
        };
        rows.push_back(RawRow{line_no, field("id", true), field("source", true),
                              field("target", true), field("label", true),
                              field("category", false)});
    }
    return rows;
}

}  // namespace

DatasetFormat parse_format(std::string_view s) {
    if (s == "tsv") return DatasetFormat::Tsv;
    if (s == "jsonl") return DatasetFormat::Jsonl;
    throw ConfigError("unknown dataset format '" + std::string(s) + "' (expected tsv|jsonl)");
}

LabelScheme parse_scheme(std::string_view s) {
    if (s == "native") return LabelScheme::Native;
    if (s == "ok_bad") return LabelScheme::OkBad;
    throw ConfigError("unknown label scheme '" + std::string(s) + "' (expected native|ok_bad)");
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "dev") return Split::Dev;
    throw ConfigError("unknown split '" + std::string(s) + "' (expected train|dev)");
}

std::string_view to_string(DatasetFormat f) { return f == DatasetFormat::Tsv ? "tsv" : "jsonl"; }
std::string_view to_string(LabelScheme s) { return s == LabelScheme::Native ? "native" : "ok_bad"; }
std::string_view to_string(Split s) { return s == Split::Train ? "train" : "dev"; }

std::string normalize_text(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    std::vector<UChar> utf16(text.size() + 1);
    int32_t len = 0;
    u_strFromUTF8(utf16.data(), static_cast<int32_t>(utf16.size()), &len, text.data(),
                  static_cast<int32_t>(text.size()), &status);
    if (U_FAILURE(status)) throw DataError("invalid UTF-8 encoding");

    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
    icu::UnicodeString composed = nfc->normalize(icu::UnicodeString(utf16.data(), len), status);
    if (U_FAILURE(status)) throw DataError("Unicode normalization failed");

    std::string out;
    composed.toUTF8String(out);
    return collapse_whitespace(out);
}

std::pair<std::string, std::string> normalize_pair(std::string_view source,
                                                   std::string_view target) {
    return {normalize_text(source), normalize_text(target)};
}

Label map_label(std::string_view token, LabelScheme scheme) {
    if (scheme == LabelScheme::OkBad) {
        if (token == "OK") return Label::Not;
        if (token == "BAD") return Label::Err;
    } else if (auto l = label_from_string(token)) {
        return *l;
    }
    throw DataError("unknown label token '" + std::string(token) + "' for scheme " +
                    std::string(to_string(scheme)));
}

std::string_view label_token(Label label, LabelScheme scheme) {
    if (scheme == LabelScheme::OkBad) return label == Label::Err ? "BAD" : "OK";
    return to_string(label);
}

Dataset parse_dataset(std::string_view bytes, DatasetFormat format, LabelScheme scheme,
                      std::string name, Split split) {
    auto rows = format == DatasetFormat::Tsv ? parse_tsv_rows(bytes) : parse_jsonl_rows(bytes);
    if (rows.empty()) throw DataError("no records");
    Dataset ds{std::move(name), split, scheme, {}};
    ds.pairs.reserve(rows.size());
    std::unordered_set<std::string> seen;
    for (const auto& row : rows) {
        Pair p = make_pair_from_row(row, scheme);
        if (!seen.insert(p.id).second)
            throw DataError("line " + std::to_string(row.line) + ": duplicate id '" + p.id + "'");
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, LabelScheme scheme,
                     Split split) {
    if (!std::filesystem::exists(path)) throw DataError("dataset not found: " + path.string());
    try {
        return parse_dataset(read_file(path), format, scheme, path.stem().string(), split);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string serialize_dataset(const Dataset& dataset, DatasetFormat format) {
    std::string out;
    if (format == DatasetFormat::Tsv) {
        bool any_category = false;
        for (const auto& p : dataset.pairs) any_category |= p.category.has_value();
        out += any_category ? "id\tsource\ttarget\tlabel\tcategory\n" : "id\tsource\ttarget\tlabel\n";
        for (const auto& p : dataset.pairs) {
            out += p.id + '\t' + p.source + '\t' + p.target + '\t';
            out += label_token(*p.gold, dataset.label_scheme);
            if (any_category) {
                out += '\t';
                if (p.category) out += to_string(*p.category);
            }
            out += '\n';
        }
        return out;
    }
    for (const auto& p : dataset.pairs) {
        nlohmann::ordered_json j;
        j["id"] = p.id;
        j["source"] = p.source;
        j["target"] = p.target;
        j["label"] = label_token(*p.gold, dataset.label_scheme);
        if (p.category) j["category"] = to_string(*p.category);
        out += j.dump() + '\n';
    }
    return out;
}

LeakReport check_leakage(const Dataset& train, const Dataset& dev) {
    std::multimap<std::pair<std::string, std::string>, const Pair*> by_text;
    for (const auto& p : train.pairs) by_text.emplace(std::pair{p.source, p.target}, &p);
    LeakReport report;
    for (const auto& d : dev.pairs) {
        auto [lo, hi] = by_text.equal_range(std::pair{d.source, d.target});
        for (auto it = lo; it != hi; ++it)
            report.leaks.push_back(Leak{it->second->id, d.id, d.source, d.target});
    }
    return report;
}

LabelDistribution split_stats(const Dataset& dataset) {
    LabelDistribution dist;
    for (const auto& p : dataset.pairs) {
        if (p.gold == Label::Err)
            ++dist.n_err;
        else if (p.gold == Label::Not)
            ++dist.n_not;
    }
    return dist;
}

}  // namespace cedh
