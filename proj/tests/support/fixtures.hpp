#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "cedh/corpus.hpp"
#include "cedh/mock_backend.hpp"
#include "cedh/util.hpp"

namespace cedh::fixtures {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "cedh") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline const char* const kNouns[] = {"contract", "patient", "invoice", "bridge", "museum", "river",
                                     "election", "festival", "vaccine", "harbour", "library", "engine"};
inline const char* const kNomen[] = {"Vertrag", "Patient", "Rechnung", "Brücke", "Museum", "Fluss",
                                     "Wahl", "Festival", "Impfstoff", "Hafen", "Bibliothek", "Motor"};

// Pair with text unique to (prefix, i): no two generated pairs share a word 4-gram.
inline Pair make_pair(const std::string& prefix, std::size_t i, Label gold) {
    const std::size_t w = i % 12;
    Pair p;
    p.id = prefix + "-" + std::to_string(i);
    p.source = "Record " + prefix + std::to_string(i) + " notes that the " + kNouns[w] + " opened on day " +
               std::to_string(i % 28 + 1) + ".";
    p.target = "Eintrag " + prefix + std::to_string(i) + " vermerkt, dass der " + kNomen[w] +
               " am Tag " + std::to_string(i % 28 + 1) + " öffnete.";
    p.gold = gold;
    return p;
}

// n_not NOT pairs followed by n_err ERR pairs, then shuffled with `seed`.
inline Dataset make_dataset(const std::string& name, std::size_t n_not, std::size_t n_err, const std::string& prefix,
                            Split split = Split::Dev, std::uint64_t seed = 1) {
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < n_not; ++i) pairs.push_back(make_pair(prefix, i, Label::Not));
    for (std::size_t i = 0; i < n_err; ++i) pairs.push_back(make_pair(prefix, n_not + i, Label::Err));
    const auto order = seeded_permutation(pairs.size(), seed);
    Dataset d{name, split, LabelScheme::Native, {}};
    for (auto idx : order) d.pairs.push_back(pairs[idx]);
    return d;
}

inline std::filesystem::path write_dataset(const std::filesystem::path& path, const Dataset& d,
                                           DatasetFormat format = DatasetFormat::Tsv) {
    write_file(path, serialize_dataset(d, format));
    return path;
}

inline std::filesystem::path write_script(const std::filesystem::path& path, const MockScript& script) {
    write_file(path, script.to_json_text());
    return path;
}

inline std::filesystem::path write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    write_file(path, j.dump(2));
    return path;
}

}  // namespace cedh::fixtures
