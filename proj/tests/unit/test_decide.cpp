#include <doctest.h>

#include <cmath>
#include <random>

#include "cedh/decide.hpp"
#include "cedh/mock_backend.hpp"
#include "cedh/util.hpp"
#include "fixtures.hpp"

using namespace cedh;

namespace {

Pair pair_with_feature(std::size_t i, double x, Label gold) {
    return {"p" + std::to_string(i), "Source " + std::to_string(i),
            ParametricMockBackend::plant_feature("Ziel " + std::to_string(i), x), gold, {}};
}

ScriptedMockBackend scripted(std::vector<std::string> responses) {
    MockScript s;
    s.default_responses = std::move(responses);
    return ScriptedMockBackend(s);
}

}  // namespace

TEST_CASE("parse_label is strict after trimming") {
    CHECK(parse_label("ERR") == Label::Err);
    CHECK(parse_label(" NOT\n") == Label::Not);
    CHECK(parse_label("\tERR ") == Label::Err);
    CHECK_FALSE(parse_label("err").has_value());
    CHECK_FALSE(parse_label("ERR.").has_value());
    CHECK_FALSE(parse_label("NOT ERR").has_value());
    CHECK_FALSE(parse_label("").has_value());
    CHECK_FALSE(parse_label("maybe").has_value());
}

TEST_CASE("mode names round-trip") {
    for (auto m : {DecisionMode::ZeroShot, DecisionMode::FewShot, DecisionMode::Vote, DecisionMode::FinetunedEval})
        CHECK(parse_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_mode("zero_shot"), ConfigError);
}

TEST_CASE("argmax ties go to NOT and bias shifts only ERR") {
    CHECK(argmax({-0.5, -0.5}) == Label::Not);
    CHECK(argmax({-0.4, -0.6}) == Label::Err);
    auto b = apply_bias({-1.0, -2.0}, 0.25);
    CHECK(b.err == -0.75);
    CHECK(b.not_ == -2.0);
}

TEST_CASE("greedy decision with a first-try answer") {
    auto b = scripted({"ERR"});
    Pair p = fixtures::make_pair("x", 0, Label::Err);
    auto d = decide_greedy(p, build_zero_shot(p), b, nullptr, {});
    CHECK(d.label == Label::Err);
    CHECK(d.retries_used == 1);
    CHECK(d.votes == std::vector<std::string>{"ERR"});
    CHECK(d.n_err == 1);
    CHECK(d.n_not == 0);
    CHECK(d.pair_id == p.id);
}

TEST_CASE("re-asks until a compliant answer") {
    auto b = scripted({"I think so", " NOT "});
    Pair p = fixtures::make_pair("x", 0, Label::Not);
    auto d = decide_greedy(p, build_zero_shot(p), b, nullptr, {});
    CHECK(d.label == Label::Not);
    CHECK(d.retries_used == 2);
    CHECK(d.votes.size() == 2);
}

TEST_CASE("non-compliant output three times is Invalid") {
    auto b = scripted({"maybe"});
    Pair p = fixtures::make_pair("x", 0, Label::Not);
    auto d = decide_greedy(p, build_zero_shot(p), b, nullptr, {});
    CHECK_FALSE(d.label.has_value());
    CHECK(d.retries_used == 3);
    CHECK(b.calls() == 3);
    CHECK(prediction_string(d.label) == "Invalid");
}

TEST_CASE("voting takes the mode with ties to ERR") {
    Pair p = fixtures::make_pair("x", 0, Label::Err);
    auto prompt = build_zero_shot(p);
    {
        auto b = scripted({"ERR", "ERR", "NOT"});
        auto d = vote(p, prompt, b, 3, {});
        CHECK(d.label == Label::Err);
        CHECK(d.n_err == 2);
        CHECK(d.n_not == 1);
        CHECK(d.mode == DecisionMode::Vote);
    }
    {
        auto b = scripted({"NOT", "ERR"});
        auto d = vote(p, prompt, b, 2, {});
        CHECK(d.label == Label::Err);
    }
    {
        auto b = scripted({"NOT", "junk", "junk", "junk", "NOT"});
        auto d = vote(p, prompt, b, 3, {});
        // vote 1: NOT; vote 2: three junk answers -> no vote; vote 3: NOT
        CHECK(d.label == Label::Not);
        CHECK(d.n_not == 2);
        CHECK(d.retries_used == 5);
    }
    {
        auto b = scripted({"?"});
        auto d = vote(p, prompt, b, 3, {});
        CHECK_FALSE(d.label.has_value());
        CHECK(d.retries_used == 9);
    }
    auto b = scripted({"ERR"});
    CHECK_THROWS_AS(vote(p, prompt, b, 0, {}), ConfigError);
}

TEST_CASE("vote i is sampled with seed_base + i") {
    ParametricMockBackend b(ParametricMockBackend::constant(0.5));
    Pair p = fixtures::make_pair("x", 0, Label::Err);
    auto prompt = build_zero_shot(p);
    DecideOptions opt;
    opt.seed_base = 1000;
    opt.temperature = 1.0;
    opt.nucleus_p = 1.0;
    auto d = vote(p, prompt, b, 5, opt);
    for (int i = 0; i < 5; ++i) {
        auto expected = b.complete(prompt.text, SamplingPolicy::sampled(1000 + i, 1.0, 1.0)).text;
        CHECK(d.votes[i] == expected);
    }
    CHECK(vote(p, prompt, b, 5, opt) == d);
}

TEST_CASE("calibrated decisions use biased logits without generating") {
    MockScript s;
    s.default_label_probs = std::make_pair(0.4, 0.6);
    s.default_responses = {"NOT"};
    ScriptedMockBackend b(s);
    Pair p = fixtures::make_pair("x", 0, Label::Err);
    CalibrationModel cal;
    cal.beta = 0.5;
    auto d = decide_greedy(p, build_zero_shot(p), b, &cal, {});
    CHECK(d.label == Label::Err);
    CHECK(d.beta_applied == 0.5);
    REQUIRE(d.logits.has_value());
    CHECK(replay(d) == d.label);
    cal.beta = 0.0;
    CHECK(decide_greedy(p, build_zero_shot(p), b, &cal, {}).label == Label::Not);
}

TEST_CASE("decision log lines round-trip") {
    Decision d;
    d.pair_id = "id\twith tab";
    d.label = std::nullopt;
    d.votes = {"maybe", "\"quoted\"", "ERR"};
    d.n_err = 1;
    d.retries_used = 3;
    d.beta_applied = 0.1234567890123;
    d.mode = DecisionMode::Vote;
    d.logits = LabelLogprobs{std::log(0.3), std::log(0.7)};
    d.error = "boom";
    CHECK(decision_from_json_line(decision_to_json_line(d)) == d);
    d.logits.reset();
    d.error.clear();
    d.label = Label::Not;
    CHECK(decision_from_json_line(decision_to_json_line(d)) == d);
    CHECK_THROWS_AS(decision_from_json_line("{\"id\":1}"), DataError);
}

TEST_CASE("property: replay reproduces every recorded label") {
    std::mt19937_64 rng(3);
    const char* answers[] = {"ERR", "NOT", "??", " ERR", "NOT."};
    for (int t = 0; t < 200; ++t) {
        std::vector<std::string> script;
        for (int i = 0; i < 6; ++i) script.push_back(answers[uniform_below(rng, 5)]);
        auto b = scripted(script);
        Pair p = fixtures::make_pair("x", t, Label::Err);
        const int m = 1 + static_cast<int>(uniform_below(rng, 5));
        auto d = vote(p, build_zero_shot(p), b, m, {});
        CHECK(replay(d) == d.label);
        CHECK(d.n_err + d.n_not <= static_cast<std::size_t>(m));
        CHECK(d.votes.size() == static_cast<std::size_t>(d.retries_used));
    }
}

TEST_CASE("fit_bias hits the prior on a planted logistic mock") {
    ParametricMockBackend b({10.0, -9.5, 0, true, 0});
    std::vector<LabelLogprobs> logits;
    for (int i = 0; i < 1000; ++i) {
        auto p = pair_with_feature(i, (i + 0.5) / 1000.0, Label::Not);
        logits.push_back(b.label_logits(build_zero_shot(p).text));
    }
    auto model = fit_bias(logits, 0.5);
    CHECK(model.uncalibrated_err_rate == doctest::Approx(0.05));
    CHECK(std::abs(model.calibrated_err_rate - 0.5) <= 0.005);
    CHECK(model.beta == doctest::Approx(4.5).epsilon(0.01));
    CHECK(model.iterations <= 60);
    CHECK(model.heldout_size == 1000);
    CHECK_THROWS_AS(fit_bias(logits, 0.0), DataError);
    CHECK_THROWS_AS(fit_bias(logits, 1.0), DataError);
    CHECK_THROWS_AS(fit_bias({}, 0.5), DataError);
}

TEST_CASE("oracle: bisection matches a dense beta grid") {
    std::mt19937_64 rng(11);
    std::vector<LabelLogprobs> logits;
    for (int i = 0; i < 400; ++i) {
        const double z = 6.0 * uniform_unit(rng) - 5.0;
        logits.push_back({-std::log1p(std::exp(-z)), -std::log1p(std::exp(z))});
    }
    auto rate = [&](double beta) {
        int n = 0;
        for (auto l : logits) n += argmax(apply_bias(l, beta)) == Label::Err;
        return n / 400.0;
    };
    for (double prior : {0.1, 0.3, 0.5, 0.8}) {
        double best_gap = 1.0;
        for (int g = 0; g <= 20000; ++g) best_gap = std::min(best_gap, std::abs(rate(-10.0 + g * 0.001) - prior));
        auto model = fit_bias(logits, prior);
        CHECK(model.calibrated_err_rate == rate(model.beta));
        CHECK(std::abs(model.calibrated_err_rate - prior) <= std::max(0.005, best_gap) + 1e-12);
    }
}

TEST_CASE("estimate_bias requires log-probabilities and gold labels") {
    auto heldout = fixtures::make_dataset("h", 5, 5, "h");
    MockScript s;
    s.logprobs = false;
    ScriptedMockBackend none(s);
    auto builder = [](const Pair& p) { return build_zero_shot(p); };
    CHECK_THROWS_AS(estimate_bias(heldout, builder, none), CapabilityError);
    ParametricMockBackend b(ParametricMockBackend::constant(0.3));
    heldout.pairs[0].gold.reset();
    CHECK_THROWS_AS(estimate_bias(heldout, builder, b), DataError);
}

TEST_CASE("calibration model JSON round trip") {
    CalibrationModel m;
    m.beta = 4.4921875;
    m.fitted_prior = 0.5;
    m.heldout_size = 1000;
    m.uncalibrated_err_rate = 0.05;
    m.calibrated_err_rate = 0.5;
    m.iterations = 9;
    auto back = CalibrationModel::from_json_text(m.to_json_text());
    CHECK(back.beta == m.beta);
    CHECK(back.heldout_size == 1000);
    CHECK(back.iterations == 9);
    CHECK(back.fit_method == "prior-matching-bisection");
    CHECK_THROWS_AS(CalibrationModel::from_json_text("{}"), ConfigError);
}
