#include "cedh/prompting.hpp"

#include <unicode/locid.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <json.hpp>
#include <set>

#include "cedh/util.hpp"

namespace cedh {

const std::string_view kCedInstruction =
    "You are an EXPERT translation quality evaluator for EN→DE Critical Error Detection.\n"
    "Classify each translation as ERR or NOT based on these CRITICAL errors:\n"
    "• ERR: Major meaning changes, omissions, hallucinations, wrong entities, negation "
    "flips, toxic/safety issues, significant number/date errors.\n"
    "• NOT: Minor style/grammar issues, acceptable paraphrasing, preserved meaning.\n"
    "IMPORTANT: Output ONLY ERR or NOT (no punctuation, no explanation).";

namespace {

std::vector<std::string> lowercase_words(std::string_view text) {
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(
        icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    u.toLower(icu::Locale::getRoot());
    std::vector<std::string> words;
    icu::UnicodeString current;
    auto flush = [&] {
        if (current.isEmpty()) return;
        std::string w;
        current.toUTF8String(w);
        words.push_back(std::move(w));
        current.remove();
    };
    for (int32_t i = 0; i < u.length();) {
        UChar32 c = u.char32At(i);
        if (u_isalnum(c))
            current.append(c);
        else
            flush();
        i += U16_LENGTH(c);
    }
    flush();
    return words;
}

std::set<std::string> four_grams(std::string_view text) {
    auto words = lowercase_words(text);
    std::set<std::string> grams;
    for (std::size_t i = 0; i + 4 <= words.size(); ++i)
        grams.insert(words[i] + ' ' + words[i + 1] + ' ' + words[i + 2] + ' ' + words[i + 3]);
    return grams;
}

void append_pair_block(std::string& out, const PromptTemplate& tmpl, std::string_view source,
                       std::string_view target) {
    out += tmpl.source_prefix;
    out += source;
    out += '\n';
    out += tmpl.translation_prefix;
    out += target;
    out += '\n';
    out += tmpl.label_prefix;
}

}  // namespace

std::size_t fallback_token_count(std::string_view text) {
    std::size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (!space && !in_word) ++words;
        in_word = !space;
    }
    return (text.size() + 3) / 4 + words;
}

std::vector<std::string> Prompt::exemplar_ids() const {
    std::vector<std::string> ids;
    ids.reserve(exemplars.size());
    for (const auto& e : exemplars) ids.push_back(e.id);
    return ids;
}

std::string render_prompt(const PromptTemplate& tmpl, std::string_view source,
                          std::string_view target, const ExemplarSet& exemplars) {
    std::string out = tmpl.instruction;
    out += "\n\n";
    for (const auto& e : exemplars) {
        append_pair_block(out, tmpl, e.source, e.target);
        out += ' ';
        out += to_string(e.label);
        out += "\n\n";
    }
    append_pair_block(out, tmpl, source, target);
    return out;
}

double overlap_score(std::string_view candidate_source, std::string_view query_source) {
    if (candidate_source == query_source) return 1.0;
    auto cand = four_grams(candidate_source);
    auto query = four_grams(query_source);
    if (cand.empty() || query.empty()) return 0.0;
    std::size_t shared = 0;
    for (const auto& g : cand) shared += query.count(g);
    return static_cast<double>(shared) / static_cast<double>(std::min(cand.size(), query.size()));
}

bool overlaps(std::string_view candidate_source, std::string_view query_source) {
    return overlap_score(candidate_source, query_source) >= kOverlapThreshold;
}

ExemplarPool::ExemplarPool(const Dataset& train, std::uint64_t seed) {
    for (std::size_t i : seeded_permutation(train.pairs.size(), seed)) {
        const Pair& p = train.pairs[i];
        if (!p.gold) continue;
        Exemplar e{p.id, p.source, p.target, *p.gold};
        (*p.gold == Label::Err ? err_ : not_).push_back(std::move(e));
    }
}

std::size_t ExemplarPool::size(Label label) const {
    return label == Label::Err ? err_.size() : not_.size();
}

ExemplarSet ExemplarPool::select(const Pair& query, std::size_t k) const {
    if (k % 2 != 0) throw ExemplarError("k must be even for balanced exemplars, got " + std::to_string(k));
    const std::size_t per_label = k / 2;
    auto pick = [&](const std::vector<Exemplar>& candidates, Label label) {
        std::vector<const Exemplar*> chosen;
        for (const auto& c : candidates) {
            if (chosen.size() == per_label) break;
            if (c.id == query.id || overlaps(c.source, query.source)) continue;
            chosen.push_back(&c);
        }
        if (chosen.size() < per_label)
            throw ExemplarError("insufficient " + std::string(to_string(label)) + " candidates: need " +
                                std::to_string(per_label) + ", found " +
                                std::to_string(chosen.size()));
        return chosen;
    };
    auto errs = pick(err_, Label::Err);
    auto nots = pick(not_, Label::Not);
    ExemplarSet out;
    out.reserve(k);
    for (std::size_t i = 0; i < per_label; ++i) {
        out.push_back(*errs[i]);
        out.push_back(*nots[i]);
    }
    return out;
}

ExemplarSet select_exemplars(const Dataset& train, const Pair& query, const FewShotPolicy& policy) {
    return ExemplarPool(train, policy.seed).select(query, policy.k);
}

Prompt build_zero_shot(const Pair& pair, const PromptTemplate& tmpl, const TokenCounter& counter,
                       std::size_t limit) {
    return build_few_shot(pair, {}, tmpl, counter, limit);
}

Prompt build_few_shot(const Pair& pair, const ExemplarSet& exemplars, const PromptTemplate& tmpl,
                      const TokenCounter& counter, std::size_t limit) {
    for (const auto& e : exemplars)
        if (e.id == pair.id)
            throw ExemplarError("exemplar set contains the query pair '" + pair.id + "'");
    Prompt p;
    p.query_id = pair.id;
    p.query_source = pair.source;
    p.query_target = pair.target;
    p.exemplars = exemplars;
    p.text = render_prompt(tmpl, pair.source, pair.target, p.exemplars);
    p.token_count = counter(p.text);
    return enforce_budget(std::move(p), limit, counter, tmpl);
}

Prompt enforce_budget(Prompt prompt, std::size_t limit, const TokenCounter& counter,
                      const PromptTemplate& tmpl) {
    while (prompt.token_count > limit) {
        auto& ex = prompt.exemplars;
        if (ex.empty())
            throw BudgetError("prompt for '" + prompt.query_id + "' needs " +
                              std::to_string(prompt.token_count) + " tokens, limit is " +
                              std::to_string(limit));
        for (Label label : {Label::Err, Label::Not}) {
            auto it = std::find_if(ex.rbegin(), ex.rend(),
                                   [&](const Exemplar& e) { return e.label == label; });
            if (it != ex.rend()) ex.erase(std::next(it).base());
        }
        prompt.text = render_prompt(tmpl, prompt.query_source, prompt.query_target, ex);
        prompt.token_count = counter(prompt.text);
    }
    return prompt;
}

SftBundle export_sft(const Dataset& train, const PromptTemplate& tmpl, const FewShotPolicy& policy,
                     const SftManifest& manifest, const TokenCounter& counter, std::size_t limit) {
    SftBundle bundle;
    bundle.manifest = manifest;
    std::vector<std::string> prompts;
    prompts.reserve(train.pairs.size());
    for (const auto& p : train.pairs) prompts.push_back(build_zero_shot(p, tmpl, counter, limit).text);

    for (int epoch = 0; epoch < manifest.epochs; ++epoch) {
        auto order = seeded_permutation(train.pairs.size(),
                                        mix_seed(policy.seed, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = 0; i < order.size(); ++i) {
            const Pair& p = train.pairs[order[i]];
            bundle.records.push_back(SftRecord{prompts[order[i]], *p.gold, epoch, i, p.id});
        }
    }
    return bundle;
}

std::string sft_records_jsonl(const SftBundle& bundle) {
    std::string out;
    for (const auto& r : bundle.records) {
        nlohmann::ordered_json j;
        j["prompt"] = r.prompt;
        j["completion"] = to_string(r.completion);
        j["epoch"] = r.epoch;
        j["index"] = r.index;
        j["id"] = r.pair_id;
        out += j.dump() + '\n';
    }
    return out;
}

std::string sft_manifest_json(const SftManifest& m) {
    nlohmann::ordered_json j;
    j["epochs"] = m.epochs;
    j["global_batch_size"] = m.global_batch_size;
    j["micro_batch_size"] = m.micro_batch_size;
    j["gradient_accumulation_steps"] = m.grad_accum_steps;
    j["optimizer"] = m.optimizer;
    j["adam_beta1"] = m.adam_beta1;
    j["adam_beta2"] = m.adam_beta2;
    j["learning_rate"] = m.learning_rate;
    j["lr_schedule"] = m.lr_schedule;
    j["warmup_ratio"] = m.warmup_ratio;
    j["weight_decay"] = m.weight_decay;
    j["save_steps"] = m.save_steps;
    j["logging_steps"] = m.log_steps;
    j["best_checkpoint_metric"] = m.best_checkpoint_metric;
    j["precision"] = m.precision;
    j["precision_fallback"] = m.precision_fallback;
    j["checkpoint"] = m.checkpoint;
    return j.dump(2) + '\n';
}

}  // namespace cedh
