// Deterministic toy-language generator: disjoint-vocabulary languages over a
// shared category system (noun / verb / modifier / function) with per-language
// word order, Zipf token frequencies, and two grammar-derived tasks
// (category tagging, agreement detection).
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ltsft/data.hpp"

namespace ltsft {

inline constexpr int kCatNoun = 0;
inline constexpr int kCatVerb = 1;
inline constexpr int kCatModifier = 2;
inline constexpr int kCatFunction = 3;
inline constexpr int kNumCats = 4;

enum class WordOrder : uint8_t { svo, sov, vso, ovs };
const char* word_order_name(WordOrder o);
WordOrder word_order_from_name(const std::string& s);

// One toy language. Sentences are [noun phrase] [verb group] [noun phrase]
// arranged per word order; a noun phrase is [function]? [modifier]{0..2} noun,
// a verb group is [function]? verb. Tokens are drawn per category under a
// Zipf(s) rank distribution over that category's vocabulary.
struct LanguageSpec {
  std::string tag;
  WordOrder order = WordOrder::svo;
  std::array<std::vector<int32_t>, kNumCats> vocab;  // by category, rank order
  double zipf_s = 1.2;
  uint64_t seed = 0;

  void validate() const;
  int32_t max_token() const;
};

// Sentence length bounds implied by the templates.
inline constexpr int64_t kMinSentenceLen = 3;
inline constexpr int64_t kMaxSentenceLen = 10;

enum class TaskKind : uint8_t { tagging, agreement };
const char* task_kind_name(TaskKind t);
TaskKind task_kind_from_name(const std::string& s);

// True iff the category sequence parses under the word-order template.
bool matches_template(const std::vector<int32_t>& cats, WordOrder order);

// Category of a token in this language, -1 if absent.
int32_t category_of(const LanguageSpec& spec, int32_t token);

// Unlabeled sentences; pure function of (spec, count), and a prefix of any
// longer corpus from the same spec.
Corpus generate_corpus(const LanguageSpec& spec, int64_t sentences);

// tagging: per-token labels = generating category. agreement: sequence label
// 1 = template obeyed, 0 = corrupted by a cross-category swap verified to
// break the template; labels Bernoulli(1/2) balanced.
Corpus generate_task_data(const LanguageSpec& spec, TaskKind task, int64_t examples);

// ------------------------------------------------------------------ suite ---

// Default transfer suite: n_source high-resource languages plus n_target
// low-resource ones, cycling through the four word orders, with
// anchors_per_cat tokens per category shared by every language.
struct SuiteConfig {
  int n_source = 4;
  int n_target = 4;
  int anchors_per_cat = 2;
  int exclusive_per_cat = 18;
  double zipf_s = 1.2;
  uint64_t seed = 11;

  int64_t pretrain_sentences = 400;     // per source language in the base mix
  double target_pretrain_share = 0.2;   // targets are under-represented
  int64_t lang_sft_sentences = 400;     // language-SFT corpus size
  int64_t lang_dev_sentences = 64;
  int64_t task_train_examples = 240;
  int64_t task_dev_examples = 64;
  int64_t task_eval_examples = 160;

  int64_t required_vocab() const;  // including pad + mask tokens
  void validate() const;
};

struct LanguageData {
  LanguageSpec spec;
  Corpus sft_corpus, sft_dev;            // masked-token adaptation data
  Corpus tag_train, tag_dev, tag_eval;   // category tagging
  Corpus agree_train, agree_dev, agree_eval;  // agreement detection
};

struct Suite {
  SuiteConfig cfg;
  std::vector<LanguageData> source, target;
  Corpus base_pretrain, base_dev;  // multilingual mix for the base model

  const LanguageData* find(const std::string& tag) const;  // nullptr if absent
};

LanguageSpec make_language_spec(const SuiteConfig& cfg, int index, bool is_target);
Suite build_suite(const SuiteConfig& cfg);

}  // namespace ltsft
