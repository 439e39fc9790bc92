#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cedh {

// ERR is the positive class everywhere in the harness.
enum class Label : std::uint8_t { Err, Not };

// A model verdict. std::nullopt stands for Invalid (no compliant answer after re-asks).
using Prediction = std::optional<Label>;

enum class ErrorCategory : std::uint8_t { Num, Nam, Sen, Saf, Tox };

inline constexpr ErrorCategory kAllCategories[] = {ErrorCategory::Num, ErrorCategory::Nam,
                                                   ErrorCategory::Sen, ErrorCategory::Saf,
                                                   ErrorCategory::Tox};

std::string_view to_string(Label label);
std::string_view to_string(ErrorCategory category);
std::string prediction_string(const Prediction& p);  // "ERR", "NOT" or "Invalid"

Label opposite(Label label);

// Strict, case-sensitive inverses of to_string. Return nullopt for anything else.
std::optional<Label> label_from_string(std::string_view s);
std::optional<ErrorCategory> category_from_string(std::string_view s);

struct Pair {
    std::string id;
    std::string source;  // English
    std::string target;  // German
    std::optional<Label> gold;
    std::optional<ErrorCategory> category;

    bool operator==(const Pair&) const = default;
};

// Input data is unusable: malformed rows, unknown labels, bad encoding, missing files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Configuration or usage mistakes.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cedh
