#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cedh/corpus.hpp"
#include "cedh/types.hpp"

namespace cedh {

inline constexpr std::size_t kDefaultTokenLimit = 1024;

// Instruction block shared by every mode and backend.
extern const std::string_view kCedInstruction;

// Layout of a rendered prompt:
//
//   <instruction>\n\n
//   Source: <s>\nTranslation: <t>\nLabel: <ERR|NOT>\n\n     (one per exemplar)
//   Source: <s>\nTranslation: <t>\nLabel:
//
// The template is a value type so different layouts can be tested, but the
// harness only ever uses the default.
struct PromptTemplate {
    std::string instruction{kCedInstruction};
    std::string source_prefix = "Source: ";
    std::string translation_prefix = "Translation: ";
    std::string label_prefix = "Label:";
};

enum class ExemplarOrder { FixedForEval, ShufflePerEpoch };

struct FewShotPolicy {
    std::size_t k = 12;
    std::uint64_t seed = 0;
    ExemplarOrder order = ExemplarOrder::FixedForEval;
};

struct Exemplar {
    std::string id;
    std::string source;
    std::string target;
    Label label = Label::Not;
};

using ExemplarSet = std::vector<Exemplar>;

/// Token estimator. Backends that expose a tokenizer provide their own;
/// otherwise fallback_token_count is used.
using TokenCounter = std::function<std::size_t(std::string_view)>;

/// ceil(bytes / 4) + whitespace-separated word count. Approximate, and meant
/// to overestimate real subword tokenizers on ordinary text.
std::size_t fallback_token_count(std::string_view text);

struct Prompt {
    std::string text;
    std::size_t token_count = 0;
    std::string query_id;
    std::string query_source;
    std::string query_target;
    ExemplarSet exemplars;

    std::vector<std::string> exemplar_ids() const;
};

class BudgetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ExemplarError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string render_prompt(const PromptTemplate& tmpl, std::string_view source,
                          std::string_view target, const ExemplarSet& exemplars);

/// Shares of the query's lowercased word 4-grams found in `candidate`
/// (relative to the smaller 4-gram set); 1.0 for an exact source match.
double overlap_score(std::string_view candidate_source, std::string_view query_source);
inline constexpr double kOverlapThreshold = 0.5;
bool overlaps(std::string_view candidate_source, std::string_view query_source);

/// Query-independent candidate order drawn once per evaluation run from the
/// train split. Per-query selection walks this order and only skips
/// candidates that overlap the query.
class ExemplarPool {
public:
    ExemplarPool(const Dataset& train, std::uint64_t seed);

    ExemplarSet select(const Pair& query, std::size_t k) const;

    std::size_t size(Label label) const;

private:
    std::vector<Exemplar> err_;
    std::vector<Exemplar> not_;
};

ExemplarSet select_exemplars(const Dataset& train, const Pair& query,
                             const FewShotPolicy& policy);

Prompt build_zero_shot(const Pair& pair, const PromptTemplate& tmpl = {},
                       const TokenCounter& counter = fallback_token_count,
                       std::size_t limit = kDefaultTokenLimit);

Prompt build_few_shot(const Pair& pair, const ExemplarSet& exemplars,
                      const PromptTemplate& tmpl = {},
                      const TokenCounter& counter = fallback_token_count,
                      std::size_t limit = kDefaultTokenLimit);

/// Returns the prompt unchanged when token_count <= limit. Otherwise removes
/// the last ERR and the last NOT exemplar together until it fits. Throws
/// BudgetError when no exemplars remain and the prompt is still too long.
Prompt enforce_budget(Prompt prompt, std::size_t limit, const TokenCounter& counter,
                      const PromptTemplate& tmpl = {});

// Fine-tuning hyperparameters exported with an SFT bundle. Defaults are the
// values every backbone was trained with.
struct SftManifest {
    int epochs = 2;
    std::string optimizer = "AdamW (torch)";
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double learning_rate = 1e-4;
    std::string lr_schedule = "cosine";
    double warmup_ratio = 0.03;
    int global_batch_size = 32;
    int micro_batch_size = 16;
    int grad_accum_steps = 2;
    double weight_decay = 0.0;
    std::string precision = "bfloat16";
    std::string precision_fallback = "fp16";
    int save_steps = 1000;
    int log_steps = 50;
    std::string best_checkpoint_metric = "dev MCC";
    std::string checkpoint = "merged full weights";
};

struct SftRecord {
    std::string prompt;
    Label completion = Label::Not;
    int epoch = 0;
    std::size_t index = 0;  // position within the epoch
    std::string pair_id;
};

struct SftBundle {
    std::vector<SftRecord> records;
    SftManifest manifest;
};

/// Zero-shot prompts over `train`, one shuffled pass per epoch. Epoch e uses
/// the permutation seeded by mix_seed(policy.seed, e).
SftBundle export_sft(const Dataset& train, const PromptTemplate& tmpl, const FewShotPolicy& policy,
                     const SftManifest& manifest = {},
                     const TokenCounter& counter = fallback_token_count,
                     std::size_t limit = kDefaultTokenLimit);

std::string sft_records_jsonl(const SftBundle& bundle);
std::string sft_manifest_json(const SftManifest& manifest);

}  // namespace cedh
