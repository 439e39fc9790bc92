#include <doctest.h>

#include <json.hpp>
#include <set>

#include "cedh/prompting.hpp"
#include "fixtures.hpp"

using namespace cedh;

namespace {

std::size_t count_of(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + 1)) ++n;
    return n;
}

// Each "Source: " block costs 50 tokens on top of a 450-token base, so the
// zero-shot prompt is 500 tokens and twelve exemplars bring it to 1100.
std::size_t fixed_cost_counter(std::string_view text) { return 450 + 50 * count_of(text, "Source: "); }

}  // namespace

TEST_CASE("instruction text is verbatim") {
    const std::string expected =
        "You are an EXPERT translation quality evaluator for EN\xE2\x86\x92"
        "DE Critical Error Detection.\n"
        "Classify each translation as ERR or NOT based on these CRITICAL errors:\n"
        "\xE2\x80\xA2 ERR: Major meaning changes, omissions, hallucinations, wrong entities, negation flips, "
        "toxic/safety issues, significant number/date errors.\n"
        "\xE2\x80\xA2 NOT: Minor style/grammar issues, acceptable paraphrasing, preserved meaning.\n"
        "IMPORTANT: Output ONLY ERR or NOT (no punctuation, no explanation).";
    CHECK(std::string(kCedInstruction) == expected);
}

TEST_CASE("zero-shot layout") {
    Pair p{"q1", "The bank is closed.", "Die Bank ist geschlossen.", Label::Not, {}};
    auto prompt = build_zero_shot(p);
    CHECK(prompt.text == std::string(kCedInstruction) +
                             "\n\nSource: The bank is closed.\nTranslation: Die Bank ist geschlossen.\nLabel:");
    CHECK(prompt.text.find("Output ONLY ERR or NOT") != std::string::npos);
    CHECK(prompt.exemplars.empty());
    CHECK(prompt.token_count == fallback_token_count(prompt.text));
    CHECK(prompt.query_id == "q1");
}

TEST_CASE("few-shot layout places exemplars before the query") {
    Pair q{"q", "Query source.", "Anfrage.", Label::Not, {}};
    ExemplarSet ex{{"e1", "S1", "T1", Label::Err}, {"n1", "S2", "T2", Label::Not}};
    auto prompt = build_few_shot(q, ex);
    CHECK(prompt.text == std::string(kCedInstruction) +
                             "\n\nSource: S1\nTranslation: T1\nLabel: ERR\n\n"
                             "Source: S2\nTranslation: T2\nLabel: NOT\n\n"
                             "Source: Query source.\nTranslation: Anfrage.\nLabel:");
    CHECK(prompt.exemplar_ids() == std::vector<std::string>{"e1", "n1"});
}

TEST_CASE("query never appears among its exemplars") {
    Pair q{"q", "x", "y", Label::Not, {}};
    CHECK_THROWS_AS(build_few_shot(q, {{"q", "x", "y", Label::Not}}), ExemplarError);
}

TEST_CASE("fallback token estimator") {
    CHECK(fallback_token_count("") == 0);
    CHECK(fallback_token_count("abcd") == 2);
    CHECK(fallback_token_count("a b") == 3);
    CHECK(fallback_token_count("  hello   world ") == 4 + 2);
}

TEST_CASE("overlap score") {
    CHECK(overlap_score("same text", "same text") == 1.0);
    CHECK(overlap_score("one two three four five", "One two three FOUR, six") == doctest::Approx(0.5));
    CHECK(overlap_score("a b c", "a b c d") == 0.0);
    CHECK(overlap_score("alpha beta gamma delta", "epsilon zeta eta theta") == 0.0);
    CHECK(overlaps("one two three four five", "one two three four six"));
    CHECK_FALSE(overlaps("one two three four five six seven", "one two three four x y z w v"));
}

TEST_CASE("balanced exemplar selection at k = 12") {
    auto train = fixtures::make_dataset("syn", 40, 40, "tr", Split::Train);
    ExemplarPool pool(train, 17);
    auto query = fixtures::make_pair("dv", 3, Label::Err);
    auto ex = pool.select(query, 12);
    REQUIRE(ex.size() == 12);
    std::size_t n_err = 0;
    for (std::size_t i = 0; i < ex.size(); ++i) {
        CHECK(ex[i].label == (i % 2 == 0 ? Label::Err : Label::Not));
        n_err += ex[i].label == Label::Err;
    }
    CHECK(n_err == 6);
    auto prompt = build_few_shot(query, ex);
    CHECK(count_of(prompt.text, "Label: ERR") == 6);
    CHECK(count_of(prompt.text, "Label: NOT") == 6);
    CHECK(prompt.token_count <= 1024);
}

TEST_CASE("exemplar selection is seeded") {
    auto train = fixtures::make_dataset("syn", 30, 30, "tr", Split::Train);
    auto query = fixtures::make_pair("dv", 0, Label::Err);
    auto a = ExemplarPool(train, 5).select(query, 12);
    auto b = ExemplarPool(train, 5).select(query, 12);
    auto c = ExemplarPool(train, 6).select(query, 12);
    auto ids = [](const ExemplarSet& s) {
        std::vector<std::string> v;
        for (const auto& e : s) v.push_back(e.id);
        return v;
    };
    CHECK(ids(a) == ids(b));
    CHECK(ids(a) != ids(c));
    FewShotPolicy policy;
    policy.seed = 5;
    CHECK(ids(select_exemplars(train, query, policy)) == ids(a));
}

TEST_CASE("selection skips the query itself and overlapping sources") {
    Dataset train{"t", Split::Train, LabelScheme::Native, {}};
    train.pairs.push_back({"q", "the query sentence itself here", "x", Label::Err, {}});
    train.pairs.push_back({"near", "the query sentence itself here again", "x", Label::Err, {}});
    train.pairs.push_back({"e1", "completely unrelated words in this one", "x", Label::Err, {}});
    train.pairs.push_back({"n1", "another distinct line of text entirely", "x", Label::Not, {}});
    Pair query{"q", "the query sentence itself here", "y", Label::Err, {}};
    auto ex = ExemplarPool(train, 1).select(query, 2);
    REQUIRE(ex.size() == 2);
    CHECK(ex[0].id == "e1");
    CHECK(ex[1].id == "n1");
    CHECK_THROWS_AS(ExemplarPool(train, 1).select(query, 4), ExemplarError);
}

TEST_CASE("insufficient candidates and odd k are errors") {
    auto train = fixtures::make_dataset("syn", 10, 3, "tr", Split::Train);
    auto query = fixtures::make_pair("dv", 0, Label::Err);
    try {
        ExemplarPool(train, 1).select(query, 12);
        FAIL("expected ExemplarError");
    } catch (const ExemplarError& e) {
        CHECK(std::string(e.what()).find("insufficient ERR candidates") != std::string::npos);
    }
    CHECK_THROWS_AS(ExemplarPool(train, 1).select(query, 3), ExemplarError);
}

TEST_CASE("budget drops exemplar pairs from the end until the prompt fits") {
    auto train = fixtures::make_dataset("syn", 20, 20, "tr", Split::Train);
    auto query = fixtures::make_pair("dv", 0, Label::Err);
    auto ex = ExemplarPool(train, 3).select(query, 12);
    auto full = build_few_shot(query, ex, {}, fixed_cost_counter, 2000);
    CHECK(full.token_count == 1100);
    auto cut = build_few_shot(query, ex, {}, fixed_cost_counter, 1024);
    CHECK(cut.token_count == 1000);
    REQUIRE(cut.exemplars.size() == 10);
    CHECK(std::equal(cut.exemplars.begin(), cut.exemplars.end(), ex.begin(),
                     [](const Exemplar& a, const Exemplar& b) { return a.id == b.id; }));
    CHECK(count_of(cut.text, "Label: ERR") == 5);
    CHECK(count_of(cut.text, "Label: NOT") == 5);
    auto tight = build_few_shot(query, ex, {}, fixed_cost_counter, 500);
    CHECK(tight.exemplars.empty());
    CHECK_THROWS_AS(build_few_shot(query, ex, {}, fixed_cost_counter, 499), BudgetError);
    CHECK_THROWS_AS(build_zero_shot(query, {}, fixed_cost_counter, 10), BudgetError);
}

TEST_CASE("property: selections stay balanced, disjoint from the query and within budget") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n_err = 6 + uniform_below(rng, 30);
        const std::size_t n_not = 6 + uniform_below(rng, 30);
        auto train = fixtures::make_dataset("syn", n_not, n_err, "tr", Split::Train, trial);
        const std::size_t k = 2 * (1 + uniform_below(rng, 6));
        // Query drawn from the train split itself to exercise exclusion.
        const Pair& query = train.pairs[uniform_below(rng, train.pairs.size())];
        auto ex = ExemplarPool(train, rng()).select(query, k);
        CHECK(ex.size() == k);
        std::set<std::string> ids;
        std::size_t errs = 0;
        for (const auto& e : ex) {
            CHECK(e.id != query.id);
            CHECK_FALSE(overlaps(e.source, query.source));
            ids.insert(e.id);
            errs += e.label == Label::Err;
        }
        CHECK(ids.size() == k);
        CHECK(errs == k / 2);
        auto prompt = build_few_shot(query, ex);
        CHECK(prompt.token_count <= kDefaultTokenLimit);
    }
}

TEST_CASE("SFT export shuffles each epoch deterministically") {
    auto train = fixtures::make_dataset("syn", 6, 4, "tr", Split::Train);
    FewShotPolicy policy;
    policy.seed = 13;
    policy.order = ExemplarOrder::ShufflePerEpoch;
    auto a = export_sft(train, {}, policy);
    auto b = export_sft(train, {}, policy);
    REQUIRE(a.records.size() == 20);
    CHECK(sft_records_jsonl(a) == sft_records_jsonl(b));
    std::vector<std::string> epoch0, epoch1;
    for (const auto& r : a.records) {
        (r.epoch == 0 ? epoch0 : epoch1).push_back(r.pair_id);
        auto it = std::find_if(train.pairs.begin(), train.pairs.end(), [&](const Pair& p) { return p.id == r.pair_id; });
        REQUIRE(it != train.pairs.end());
        CHECK(r.completion == *it->gold);
        CHECK(r.prompt == build_zero_shot(*it).text);
    }
    CHECK(epoch0.size() == 10);
    CHECK(std::is_permutation(epoch0.begin(), epoch0.end(), epoch1.begin(), epoch1.end()));
    CHECK(epoch0 != epoch1);

    auto line = sft_records_jsonl(a).substr(0, sft_records_jsonl(a).find('\n'));
    auto j = nlohmann::json::parse(line);
    CHECK(j["completion"].get<std::string>().size() == 3);
    CHECK(j.contains("prompt"));
}

TEST_CASE("SFT manifest carries the training hyperparameters") {
    auto j = nlohmann::json::parse(sft_manifest_json(SftManifest{}));
    CHECK(j["epochs"] == 2);
    CHECK(j["global_batch_size"] == 32);
    CHECK(j["micro_batch_size"] == 16);
    CHECK(j["gradient_accumulation_steps"] == 2);
    CHECK(j["optimizer"] == "AdamW (torch)");
    CHECK(j["adam_beta1"] == 0.9);
    CHECK(j["adam_beta2"] == 0.999);
    CHECK(j["learning_rate"] == 1e-4);
    CHECK(j["lr_schedule"] == "cosine");
    CHECK(j["warmup_ratio"] == 0.03);
    CHECK(j["weight_decay"] == 0.0);
    CHECK(j["save_steps"] == 1000);
    CHECK(j["logging_steps"] == 50);
    CHECK(j["precision"] == "bfloat16");
    CHECK(j["precision_fallback"] == "fp16");
    CHECK(j["best_checkpoint_metric"] == "dev MCC");
}
