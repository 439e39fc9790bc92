#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cedh/backend.hpp"
#include "cedh/corpus.hpp"
#include "cedh/prompting.hpp"

namespace cedh {

enum class DecisionMode { ZeroShot, FewShot, Vote, FinetunedEval };
std::string_view to_string(DecisionMode m);
DecisionMode parse_mode(std::string_view s);

struct CalibrationModel {
    double beta = 0.0;           // added to the ERR log-probability
    double fitted_prior = 0.0;   // ERR rate of the held-out set
    std::size_t heldout_size = 0;
    std::string fit_method = "prior-matching-bisection";
    // Diagnostics.
    double uncalibrated_err_rate = 0.0;
    double calibrated_err_rate = 0.0;
    int iterations = 0;

    std::string to_json_text() const;
    static CalibrationModel from_json_text(std::string_view text);
};

struct Decision {
    std::string pair_id;
    Prediction label;
    std::vector<std::string> votes;  // every raw generation, re-asks included
    std::size_t n_err = 0;
    std::size_t n_not = 0;
    int retries_used = 0;  // backend generations issued (1 for a first-try answer)
    double beta_applied = 0.0;
    DecisionMode mode = DecisionMode::ZeroShot;
    std::optional<LabelLogprobs> logits;  // set when decided from calibrated logits
    std::string error;                    // transport failure that voided the pair

    bool operator==(const Decision&) const = default;
};

// One JSON object per line in the decision log.
std::string decision_to_json_line(const Decision& d);
Decision decision_from_json_line(std::string_view line);

struct DecideOptions {
    DecisionMode mode = DecisionMode::ZeroShot;
    int max_attempts = 3;      // first try plus re-asks
    int max_new_tokens = 2;
    double temperature = 0.2;  // re-asks and votes
    double nucleus_p = 0.9;
    std::uint64_t seed_base = 0;
};

/// Trims surrounding whitespace, then accepts exactly "ERR" or "NOT".
Prediction parse_label(std::string_view text);

LabelLogprobs apply_bias(LabelLogprobs logits, double beta);

// ERR iff logp_err > logp_not; ties go to NOT.
Label argmax(LabelLogprobs logits);

/// With calibration and log-probability support, decides from the biased
/// logits without generating. Otherwise: greedy completion, then up to
/// max_attempts - 1 sampled re-asks with fresh seeds while the answer does
/// not parse. Transport errors propagate.
Decision decide_greedy(const Pair& pair, const Prompt& prompt, Backend& backend,
                       const CalibrationModel* calibration, const DecideOptions& options);

/// m sampled votes (seed_base + i), each with its own re-ask budget. The
/// label is the mode of the valid votes; an even split goes to ERR.
Decision vote(const Pair& pair, const Prompt& prompt, Backend& backend, int m,
              const DecideOptions& options, const CalibrationModel* calibration = nullptr);

/// Recomputes a decision's label from its recorded votes or logits.
Prediction replay(const Decision& d);

/// Bisection over beta in [-10, 10] (at most 60 steps) until the share of
/// biased-ERR decisions is within 0.5 points of `prior`. Returns the closest
/// beta seen when the target cannot be hit exactly.
CalibrationModel fit_bias(std::span<const LabelLogprobs> logits, double prior);

using PromptBuilder = std::function<Prompt(const Pair&)>;

CalibrationModel estimate_bias(const Dataset& heldout, const PromptBuilder& build_prompt,
                               Backend& backend);

}  // namespace cedh
