#include "cedh/types.hpp"

namespace cedh {

std::string_view to_string(Label label) {
    return label == Label::Err ? "ERR" : "NOT";
}

std::string_view to_string(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::Num: return "NUM";
        case ErrorCategory::Nam: return "NAM";
        case ErrorCategory::Sen: return "SEN";
        case ErrorCategory::Saf: return "SAF";
        case ErrorCategory::Tox: return "TOX";
    }
    return "?";
}

std::string prediction_string(const Prediction& p) {
    return p ? std::string(to_string(*p)) : std::string("Invalid");
}

Label opposite(Label label) {
    return label == Label::Err ? Label::Not : Label::Err;
}

std::optional<Label> label_from_string(std::string_view s) {
    if (s == "ERR") return Label::Err;
    if (s == "NOT") return Label::Not;
    return std::nullopt;
}

std::optional<ErrorCategory> category_from_string(std::string_view s) {
    for (ErrorCategory c : kAllCategories)
        if (to_string(c) == s) return c;
    return std::nullopt;
}

}  // namespace cedh
