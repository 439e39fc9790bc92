#include "cedh/decide.hpp"

#include <cmath>
#include <json.hpp>

#include "cedh/util.hpp"

namespace cedh {

namespace {

constexpr double kBetaLo = -10.0;
constexpr double kBetaHi = 10.0;
constexpr int kMaxBisectionSteps = 60;
constexpr double kPriorTolerance = 0.005;

void tally(Decision& d, Prediction p) {
    if (p == Label::Err) ++d.n_err;
    if (p == Label::Not) ++d.n_not;
}

Prediction mode_of(std::size_t n_err, std::size_t n_not) {
    if (n_err == 0 && n_not == 0) return std::nullopt;
    return n_err >= n_not ? Label::Err : Label::Not;
}

// One answer with re-asks: attempt 0 uses `first`, later attempts are sampled
// with seeds derived from `reask_seed`.
Prediction ask(Decision& d, const Prompt& prompt, Backend& backend, const SamplingPolicy& first,
               std::uint64_t reask_seed, const DecideOptions& opt) {
    for (int attempt = 0; attempt < opt.max_attempts; ++attempt) {
        SamplingPolicy policy = first;
        if (attempt > 0) {
            policy = SamplingPolicy::sampled(mix_seed(reask_seed, static_cast<std::uint64_t>(attempt)),
                                             opt.temperature, opt.nucleus_p);
        }
        policy.max_new_tokens = opt.max_new_tokens;
        Completion c = backend.complete(prompt.text, policy);
        ++d.retries_used;
        d.votes.push_back(c.text);
        if (Prediction p = parse_label(c.text)) return p;
    }
    return std::nullopt;
}

bool calibrated_path(const CalibrationModel* calibration, const Backend& backend) {
    return calibration != nullptr && backend.supports_logprobs();
}

}  // namespace

std::string_view to_string(DecisionMode m) {
    switch (m) {
        case DecisionMode::ZeroShot: return "zero-shot";
        case DecisionMode::FewShot: return "few-shot";
        case DecisionMode::Vote: return "vote";
        case DecisionMode::FinetunedEval: return "finetuned-eval";
    }
    return "?";
}

DecisionMode parse_mode(std::string_view s) {
    if (s == "zero-shot") return DecisionMode::ZeroShot;
    if (s == "few-shot") return DecisionMode::FewShot;
    if (s == "vote") return DecisionMode::Vote;
    if (s == "finetuned-eval") return DecisionMode::FinetunedEval;
    throw ConfigError("unknown mode '" + std::string(s) +
                      "' (expected zero-shot|few-shot|vote|finetuned-eval)");
}

std::string CalibrationModel::to_json_text() const {
    nlohmann::ordered_json j;
    j["beta"] = beta;
    j["fitted_prior"] = fitted_prior;
    j["heldout_size"] = heldout_size;
    j["fit_method"] = fit_method;
    j["diagnostics"] = {{"uncalibrated_err_rate", uncalibrated_err_rate},
                        {"calibrated_err_rate", calibrated_err_rate},
                        {"iterations", iterations}};
    return j.dump(2) + '\n';
}

CalibrationModel CalibrationModel::from_json_text(std::string_view text) {
    try {
        auto j = nlohmann::json::parse(text);
        CalibrationModel m;
        m.beta = j.at("beta").get<double>();
        m.fitted_prior = j.at("fitted_prior").get<double>();
        m.heldout_size = j.at("heldout_size").get<std::size_t>();
        m.fit_method = j.value("fit_method", m.fit_method);
        if (j.contains("diagnostics")) {
            const auto& d = j["diagnostics"];
            m.uncalibrated_err_rate = d.value("uncalibrated_err_rate", 0.0);
            m.calibrated_err_rate = d.value("calibrated_err_rate", 0.0);
            m.iterations = d.value("iterations", 0);
        }
        if (!std::isfinite(m.beta) || m.fitted_prior < 0.0 || m.fitted_prior > 1.0)
            throw ConfigError("calibration model out of range");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed calibration model: ") + e.what());
    }
}

std::string decision_to_json_line(const Decision& d) {
    nlohmann::ordered_json j;
    j["id"] = d.pair_id;
    j["label"] = prediction_string(d.label);
    j["votes"] = d.votes;
    j["tally"] = {{"ERR", d.n_err}, {"NOT", d.n_not}};
    j["retries_used"] = d.retries_used;
    j["beta_applied"] = d.beta_applied;
    j["mode"] = to_string(d.mode);
    if (d.logits)
        j["logits"] = {{"ERR", d.logits->err}, {"NOT", d.logits->not_}};
    else
        j["logits"] = nullptr;
    if (!d.error.empty()) j["error"] = d.error;
    return j.dump();
}

Decision decision_from_json_line(std::string_view line) {
    try {
        auto j = nlohmann::json::parse(line);
        Decision d;
        d.pair_id = j.at("id").get<std::string>();
        const auto label = j.at("label").get<std::string>();
        d.label = label_from_string(label);
        if (!d.label && label != "Invalid") throw DataError("decision log: bad label '" + label + "'");
        d.votes = j.at("votes").get<std::vector<std::string>>();
        d.n_err = j.at("tally").at("ERR").get<std::size_t>();
        d.n_not = j.at("tally").at("NOT").get<std::size_t>();
        d.retries_used = j.at("retries_used").get<int>();
        d.beta_applied = j.at("beta_applied").get<double>();
        d.mode = parse_mode(j.at("mode").get<std::string>());
        if (!j.at("logits").is_null())
            d.logits = LabelLogprobs{j["logits"].at("ERR").get<double>(), j["logits"].at("NOT").get<double>()};
        d.error = j.value("error", std::string());
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("decision log: malformed record: ") + e.what());
    }
}

Prediction parse_label(std::string_view text) {
    const auto ws = " \t\n\r\f\v";
    const auto b = text.find_first_not_of(ws);
    if (b == std::string_view::npos) return std::nullopt;
    const auto e = text.find_last_not_of(ws);
    return label_from_string(text.substr(b, e - b + 1));
}

LabelLogprobs apply_bias(LabelLogprobs logits, double beta) {
    return {logits.err + beta, logits.not_};
}

Label argmax(LabelLogprobs logits) {
    return logits.err > logits.not_ ? Label::Err : Label::Not;
}

Decision decide_greedy(const Pair& pair, const Prompt& prompt, Backend& backend,
                       const CalibrationModel* calibration, const DecideOptions& options) {
    Decision d;
    d.pair_id = pair.id;
    d.mode = options.mode;
    if (calibrated_path(calibration, backend)) {
        d.beta_applied = calibration->beta;
        d.logits = backend.label_logits(prompt.text);
        d.label = argmax(apply_bias(*d.logits, d.beta_applied));
        tally(d, d.label);
        return d;
    }
    SamplingPolicy first = SamplingPolicy::greedy();
    d.label = ask(d, prompt, backend, first, options.seed_base, options);
    tally(d, d.label);
    return d;
}

Decision vote(const Pair& pair, const Prompt& prompt, Backend& backend, int m,
              const DecideOptions& options, const CalibrationModel* calibration) {
    if (m < 1) throw ConfigError("vote count m must be >= 1");
    Decision d;
    d.pair_id = pair.id;
    d.mode = DecisionMode::Vote;
    const bool biased = calibrated_path(calibration, backend);
    if (biased) d.beta_applied = calibration->beta;
    for (int i = 0; i < m; ++i) {
        const std::uint64_t seed = options.seed_base + static_cast<std::uint64_t>(i);
        if (biased) {
            d.logits = backend.label_logits(prompt.text);
            Label l = argmax(apply_bias(*d.logits, d.beta_applied));
            d.votes.emplace_back(to_string(l));
            ++d.retries_used;
            tally(d, l);
            continue;
        }
        auto first = SamplingPolicy::sampled(seed, options.temperature, options.nucleus_p);
        tally(d, ask(d, prompt, backend, first, seed, options));
    }
    d.label = mode_of(d.n_err, d.n_not);
    return d;
}

Prediction replay(const Decision& d) {
    if (d.logits && d.mode != DecisionMode::Vote) return argmax(apply_bias(*d.logits, d.beta_applied));
    std::size_t n_err = 0, n_not = 0;
    for (const auto& v : d.votes) {
        Prediction p = parse_label(v);
        if (p == Label::Err) ++n_err;
        if (p == Label::Not) ++n_not;
    }
    return mode_of(n_err, n_not);
}

CalibrationModel fit_bias(std::span<const LabelLogprobs> logits, double prior) {
    if (logits.empty()) throw DataError("calibration needs a non-empty held-out set");
    if (prior <= 0.0 || prior >= 1.0)
        throw DataError("degenerate held-out prior: ERR rate is " + std::to_string(prior));
    auto err_rate = [&](double beta) {
        std::size_t n = 0;
        for (const auto& l : logits) n += argmax(apply_bias(l, beta)) == Label::Err;
        return static_cast<double>(n) / static_cast<double>(logits.size());
    };

    CalibrationModel model;
    model.fitted_prior = prior;
    model.heldout_size = logits.size();
    model.uncalibrated_err_rate = err_rate(0.0);

    double lo = kBetaLo, hi = kBetaHi;
    double best_beta = 0.0, best_rate = model.uncalibrated_err_rate;
    double best_gap = std::abs(best_rate - prior);
    for (int step = 1; step <= kMaxBisectionSteps; ++step) {
        const double mid = 0.5 * (lo + hi);
        const double rate = err_rate(mid);
        model.iterations = step;
        if (std::abs(rate - prior) < best_gap) {
            best_gap = std::abs(rate - prior);
            best_beta = mid;
            best_rate = rate;
        }
        if (best_gap <= kPriorTolerance) break;
        // The ERR rate is non-decreasing in beta.
        if (rate < prior)
            lo = mid;
        else
            hi = mid;
    }
    model.beta = best_beta;
    model.calibrated_err_rate = best_rate;
    return model;
}

CalibrationModel estimate_bias(const Dataset& heldout, const PromptBuilder& build_prompt,
                               Backend& backend) {
    if (!backend.supports_logprobs())
        throw CapabilityError("calibration needs log-probabilities, which backend '" +
                              backend.descriptor().model_id + "' does not expose");
    if (heldout.pairs.empty()) throw DataError("calibration needs a non-empty held-out set");
    std::vector<LabelLogprobs> logits;
    logits.reserve(heldout.pairs.size());
    std::size_t n_err = 0;
    for (const auto& p : heldout.pairs) {
        if (!p.gold) throw DataError("held-out pair '" + p.id + "' has no gold label");
        n_err += *p.gold == Label::Err;
        logits.push_back(backend.label_logits(build_prompt(p).text));
    }
    return fit_bias(logits, static_cast<double>(n_err) / static_cast<double>(heldout.pairs.size()));
}

}  // namespace cedh
