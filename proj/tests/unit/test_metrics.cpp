#include <doctest.h>

#include <json.hpp>
#include <random>

#include "cedh/metrics.hpp"
#include "cedh/util.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cedh;

namespace {

ConfusionMatrix random_cm(std::mt19937_64& rng, std::uint64_t max) {
    ConfusionMatrix cm{uniform_below(rng, max + 1), uniform_below(rng, max + 1), uniform_below(rng, max + 1),
                       uniform_below(rng, max + 1)};
    // Plant zero cells regularly so degenerate marginals are exercised.
    for (auto* cell : {&cm.tp, &cm.fp, &cm.fn, &cm.tn})
        if (uniform_below(rng, 6) == 0) *cell = 0;
    return cm;
}

void expand(const ConfusionMatrix& cm, std::vector<Prediction>& pred, std::vector<Label>& gold) {
    std::vector<int> p, g;
    oracle::expand(cm, p, g);
    pred.clear();
    gold.clear();
    for (std::size_t i = 0; i < p.size(); ++i) {
        pred.push_back(p[i] ? Label::Err : Label::Not);
        gold.push_back(g[i] ? Label::Err : Label::Not);
    }
}

}  // namespace

TEST_CASE("confusion counts and Invalid scoring") {
    std::vector<Prediction> pred{Label::Err, Label::Err, Label::Not, Label::Not, std::nullopt, std::nullopt};
    std::vector<Label> gold{Label::Err, Label::Not, Label::Err, Label::Not, Label::Err, Label::Not};
    auto cm = confusion(pred, gold);
    CHECK(cm == ConfusionMatrix{1, 2, 2, 1});
    std::vector<Label> short_gold{Label::Err};
    CHECK_THROWS_AS(confusion(pred, short_gold), DataError);
}

TEST_CASE("confusion over decisions checks id alignment") {
    auto ds = fixtures::make_dataset("d", 2, 2, "d");
    std::vector<Decision> decisions;
    for (const auto& p : ds.pairs) {
        Decision d;
        d.pair_id = p.id;
        d.label = p.gold;
        decisions.push_back(d);
    }
    CHECK(confusion(decisions, ds.pairs) == ConfusionMatrix{2, 0, 0, 2});
    std::swap(decisions[0], decisions[1]);
    CHECK_THROWS_AS(confusion(decisions, ds.pairs), DataError);
}

TEST_CASE("MCC spot values") {
    CHECK(mcc({3, 1, 1, 5}) == doctest::Approx(0.5833333333).epsilon(1e-9));
    CHECK(mcc({5, 0, 0, 5}) == 1.0);
    CHECK(mcc({0, 5, 5, 0}) == -1.0);
    CHECK(mcc({0, 0, 300, 700}) == 0.0);
    CHECK(mcc({}) == 0.0);
    CHECK(f1({0, 0, 300, 700}, Label::Err) == 0.0);
    CHECK(f1({0, 0, 300, 700}, Label::Not) == doctest::Approx(2 * 0.7 / 1.7).epsilon(1e-12));
    CHECK(accuracy({0, 0, 300, 700}) == 0.7);
    CHECK(accuracy({}) == 0.0);
}

TEST_CASE("oracle: metrics equal brute-force evaluation on random matrices") {
    std::mt19937_64 rng(2024);
    for (int t = 0; t < 300; ++t) {
        auto cm = random_cm(rng, 2000);
        CHECK(std::abs(mcc(cm) - oracle::pearson_mcc(cm)) <= 1e-12);
        CHECK(std::abs(f1(cm, Label::Err) - oracle::counted_f1(cm, 1)) <= 1e-12);
        CHECK(std::abs(f1(cm, Label::Not) - oracle::counted_f1(cm, 0)) <= 1e-12);
        CHECK(std::abs(accuracy(cm) - oracle::counted_accuracy(cm)) <= 1e-12);
    }
}

TEST_CASE("property: metric ranges and symmetries") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 2000; ++t) {
        auto cm = random_cm(rng, 500);
        const double m = mcc(cm);
        CHECK(m >= -1.0);
        CHECK(m <= 1.0);
        // Swapping the positive class leaves MCC unchanged.
        CHECK(mcc({cm.tn, cm.fn, cm.fp, cm.tp}) == doctest::Approx(m).epsilon(1e-12));
        // Flipping every prediction negates it.
        CHECK(mcc({cm.fn, cm.tn, cm.tp, cm.fp}) == doctest::Approx(-m).epsilon(1e-12));
        CHECK(f1(cm, Label::Err) >= 0.0);
        CHECK(f1(cm, Label::Err) <= 1.0);
        CHECK(f1(cm, Label::Not) == f1({cm.tn, cm.fn, cm.fp, cm.tp}, Label::Err));
    }
}

TEST_CASE("percentile interpolation") {
    std::vector<double> v{4, 1, 3, 2};
    CHECK(percentile(v, 0.0) == 1.0);
    CHECK(percentile(v, 1.0) == 4.0);
    CHECK(percentile(v, 0.5) == 2.5);
    CHECK(percentile(v, 0.25) == doctest::Approx(1.75));
    std::vector<double> one{7};
    CHECK(percentile(one, 0.975) == 7.0);
}

TEST_CASE("bootstrap is seeded and order independent") {
    std::vector<Prediction> pred;
    std::vector<Label> gold;
    expand({30, 10, 15, 45}, pred, gold);
    auto a = bootstrap_ci(pred, gold, Statistic::Mcc, 2000, 7);
    auto b = bootstrap_ci(pred, gold, Statistic::Mcc, 2000, 7);
    auto c = bootstrap_ci(pred, gold, Statistic::Mcc, 2000, 8);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    CHECK(a.lo <= mcc({30, 10, 15, 45}));
    CHECK(a.hi >= mcc({30, 10, 15, 45}));
    // Replicate b depends only on (seed, b): a prefix run reproduces the prefix.
    auto full = bootstrap_distribution(pred, gold, Statistic::F1Err, 100, 3);
    auto prefix = bootstrap_distribution(pred, gold, Statistic::F1Err, 40, 3);
    CHECK(std::equal(prefix.begin(), prefix.end(), full.begin()));
}

TEST_CASE("bootstrap degeneracies") {
    std::vector<Prediction> pred;
    std::vector<Label> gold;
    expand({20, 0, 0, 30}, pred, gold);
    CHECK(bootstrap_ci(pred, gold, Statistic::Mcc, 500, 1) == Interval{1.0, 1.0});
    CHECK(bootstrap_ci(pred, gold, Statistic::F1Err, 500, 1) == Interval{1.0, 1.0});
    expand({0, 0, 30, 70}, pred, gold);
    CHECK(bootstrap_ci(pred, gold, Statistic::Mcc, 500, 1) == Interval{0.0, 0.0});
    std::vector<Prediction> p1{Label::Err};
    std::vector<Label> g1{Label::Err};
    CHECK_THROWS_AS(bootstrap_ci(p1, g1, Statistic::Mcc, 10, 1), DataError);
}

TEST_CASE("McNemar exact p") {
    CHECK(mcnemar_exact_p(8, 2) == doctest::Approx(0.109375).epsilon(1e-12));
    CHECK(mcnemar_exact_p(2, 8) == mcnemar_exact_p(8, 2));
    CHECK(mcnemar_exact_p(0, 0) == 1.0);
    CHECK(mcnemar_exact_p(5, 5) == 1.0);
    CHECK(mcnemar_exact_p(10, 0) == doctest::Approx(2.0 / 1024).epsilon(1e-12));
    for (std::uint64_t b = 0; b <= 30; ++b)
        for (std::uint64_t c = 0; b + c <= 30; ++c)
            CHECK(std::abs(mcnemar_exact_p(b, c) - oracle::enumerated_mcnemar(b, c)) <= 1e-12);
}

TEST_CASE("McNemar large counts stay close to the exact branch") {
    // n = 62 uses exact integers; n = 63 switches to log space.
    const double at62 = mcnemar_exact_p(25, 37);
    const double at63 = mcnemar_exact_p(25, 38);
    CHECK(at62 > at63);
    CHECK(std::abs(mcnemar_exact_p(30, 33) - oracle::enumerated_mcnemar(30, 33)) <= 1e-10);
    CHECK(std::abs(mcnemar_exact_p(100, 130) - oracle::enumerated_mcnemar(100, 130)) <= 1e-10);
    CHECK(mcnemar_exact_p(5000, 5000) == 1.0);
}

TEST_CASE("McNemar counts discordant pairs") {
    std::vector<Label> gold{Label::Err, Label::Err, Label::Not, Label::Not};
    std::vector<Prediction> a{Label::Err, Label::Err, Label::Not, Label::Err};
    std::vector<Prediction> b{Label::Not, std::nullopt, Label::Not, Label::Not};
    auto r = mcnemar(a, b, gold);
    CHECK(r.b == 2);
    CHECK(r.c == 1);
    CHECK(r.p_value == mcnemar_exact_p(2, 1));
}

TEST_CASE("error-type breakdown") {
    std::vector<Pair> gold;
    auto add = [&](Label g, std::optional<ErrorCategory> c) {
        gold.push_back({"p" + std::to_string(gold.size()), "s", "t", g, c});
    };
    add(Label::Err, ErrorCategory::Tox);
    add(Label::Err, ErrorCategory::Tox);
    add(Label::Err, ErrorCategory::Num);
    add(Label::Not, std::nullopt);
    add(Label::Not, std::nullopt);
    std::vector<Prediction> pred{Label::Err, Label::Not, Label::Err, Label::Err, Label::Not};
    auto br = error_type_breakdown(pred, gold);
    REQUIRE(br.rows.size() == 2);
    CHECK(br.rows[0].category == ErrorCategory::Num);
    CHECK(br.rows[0].recall == 1.0);
    CHECK(br.rows[1].category == ErrorCategory::Tox);
    CHECK(br.rows[1].n_gold == 2);
    CHECK(br.rows[1].detected == 1);
    CHECK(br.rows[1].recall == 0.5);
    CHECK(br.rows[1].precision == 0.5);
    CHECK(br.tox_precision == 0.5);
    CHECK(br.warnings.empty());
    for (auto& g : gold) g.category.reset();
    CHECK_FALSE(error_type_breakdown(pred, gold).warnings.empty());
}

TEST_CASE("compute_metrics and report JSON") {
    auto ds = fixtures::make_dataset("d", 70, 30, "d");
    std::vector<Decision> decisions;
    for (const auto& p : ds.pairs) {
        Decision d;
        d.pair_id = p.id;
        d.label = Label::Not;
        decisions.push_back(d);
    }
    decisions[0].label = std::nullopt;
    auto r = compute_metrics(decisions, ds.pairs, 200, 4);
    CHECK(r.n == 100);
    CHECK(r.invalid == 1);
    CHECK(r.cm.total() == 100);
    auto back = MetricsReport::from_json_text(r.to_json_text());
    CHECK(back.to_json_text() == r.to_json_text());
    CHECK(back.ci_mcc == r.ci_mcc);
    auto j = nlohmann::json::parse(r.to_json_text());
    CHECK(j["bootstrap_resamples"] == 200);
    CHECK(j["bootstrap_seed"] == 4);
}
