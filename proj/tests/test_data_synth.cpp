// Synthetic language generation and deterministic batching: grammar template
// parsing, Zipf unigram distributions, suite vocabulary structure, task label
// semantics, and the pure-in-step batch sources.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "ltsft/data.hpp"
#include "ltsft/synth.hpp"

using namespace ltsft;

namespace {

std::vector<int32_t> cats_of(const LanguageSpec& spec, const std::vector<int32_t>& ids) {
  std::vector<int32_t> cats;
  cats.reserve(ids.size());
  for (int32_t t : ids) cats.push_back(category_of(spec, t));
  return cats;
}

std::multiset<int32_t> id_multiset(const Batch& b) {
  std::multiset<int32_t> out;
  for (size_t p = 0; p < b.ids.size(); ++p)
    if (b.attn[p]) out.insert(b.ids[p]);
  return out;
}

SuiteConfig small_suite_cfg() {
  SuiteConfig cfg;
  cfg.pretrain_sentences = 40;
  cfg.lang_sft_sentences = 30;
  cfg.lang_dev_sentences = 10;
  cfg.task_train_examples = 24;
  cfg.task_dev_examples = 8;
  cfg.task_eval_examples = 12;
  return cfg;
}

}  // namespace

// ================================================================ grammar ===

TEST_CASE("name round-trips for word orders and tasks") {
  for (WordOrder o : {WordOrder::svo, WordOrder::sov, WordOrder::vso, WordOrder::ovs})
    CHECK(word_order_from_name(word_order_name(o)) == o);
  CHECK_THROWS_AS(word_order_from_name("vos"), Error);
  for (TaskKind t : {TaskKind::tagging, TaskKind::agreement})
    CHECK(task_kind_from_name(task_kind_name(t)) == t);
  CHECK_THROWS_AS(task_kind_from_name("parsing"), Error);
}

TEST_CASE("matches_template: hand-checked category strings") {
  const int32_t N = kCatNoun, V = kCatVerb, M = kCatModifier, F = kCatFunction;

  // Minimal grammatical sentences.
  CHECK(matches_template({N, V, N}, WordOrder::svo));
  CHECK(matches_template({N, N, V}, WordOrder::sov));
  CHECK(matches_template({V, N, N}, WordOrder::vso));
  CHECK(matches_template({N, V, N}, WordOrder::ovs));  // categories do not mark roles

  // Fully decorated groups: F M M N | F V | F M M N.
  CHECK(matches_template({F, M, M, N, F, V, F, M, M, N}, WordOrder::svo));
  CHECK(static_cast<int64_t>(10) == kMaxSentenceLen);
  CHECK(static_cast<int64_t>(3) == kMinSentenceLen);

  // Optional pieces.
  CHECK(matches_template({F, N, V, N}, WordOrder::svo));
  CHECK(matches_template({M, N, V, M, M, N}, WordOrder::svo));
  CHECK(matches_template({V, F, M, N, N}, WordOrder::vso));

  // Rejections.
  CHECK_FALSE(matches_template({N, V, N}, WordOrder::sov));       // verb not final
  CHECK_FALSE(matches_template({N, V, N}, WordOrder::vso));       // verb not initial
  CHECK_FALSE(matches_template({N, N, V}, WordOrder::svo));
  CHECK_FALSE(matches_template({N, V}, WordOrder::svo));          // missing second np
  CHECK_FALSE(matches_template({V}, WordOrder::svo));
  CHECK_FALSE(matches_template({}, WordOrder::svo));
  CHECK_FALSE(matches_template({N, V, N, F}, WordOrder::svo));    // trailing token
  CHECK_FALSE(matches_template({M, M, M, N, V, N}, WordOrder::svo));  // 3 modifiers
  CHECK_FALSE(matches_template({F, F, N, V, N}, WordOrder::svo));     // doubled function
  CHECK_FALSE(matches_template({N, M, V, N}, WordOrder::svo));        // modifier after noun
  CHECK_FALSE(matches_template({-1, V, N}, WordOrder::svo));          // unknown category
}

TEST_CASE("language spec validation") {
  SuiteConfig cfg;
  LanguageSpec ok = make_language_spec(cfg, 0, false);
  CHECK_NOTHROW(ok.validate());

  LanguageSpec bad = ok;
  bad.tag.clear();
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = ok;
  bad.zipf_s = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = ok;
  bad.vocab[0].clear();
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = ok;
  bad.vocab[0][0] = kPadToken;  // reserved id
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = ok;
  bad.vocab[1][0] = bad.vocab[0][0];  // same token in two categories
  CHECK_THROWS_AS(bad.validate(), Error);

  CHECK(category_of(ok, ok.vocab[kCatVerb][1]) == kCatVerb);
  CHECK(category_of(ok, 1 << 20) == -1);
}

// ============================================================== generation ===

TEST_CASE("generate_corpus: deterministic, prefix-stable, always grammatical") {
  const LanguageSpec spec = make_language_spec(SuiteConfig{}, 1, false);  // sov
  const Corpus a = generate_corpus(spec, 50);
  const Corpus b = generate_corpus(spec, 50);
  const Corpus big = generate_corpus(spec, 120);
  REQUIRE(a.size() == 50);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].ids == b[i].ids);
    CHECK(a[i].ids == big[i].ids);  // shorter corpus is a prefix of the longer
  }
  for (const Sentence& s : big) {
    const int64_t len = static_cast<int64_t>(s.ids.size());
    CHECK(len >= kMinSentenceLen);
    CHECK(len <= kMaxSentenceLen);
    CHECK(matches_template(cats_of(spec, s.ids), spec.order));
    CHECK(s.tags.empty());
    CHECK(s.label == -1);
  }
  CHECK_THROWS_AS(generate_corpus(spec, 0), Error);
}

TEST_CASE("unigram frequencies per category follow the zipf law") {
  const LanguageSpec spec = make_language_spec(SuiteConfig{}, 0, false);
  const Corpus corpus = generate_corpus(spec, 20000);

  // Token index within its category's rank order.
  std::map<int32_t, std::pair<int, size_t>> rank_of;  // token -> (cat, rank)
  for (int c = 0; c < kNumCats; ++c)
    for (size_t r = 0; r < spec.vocab[static_cast<size_t>(c)].size(); ++r)
      rank_of[spec.vocab[static_cast<size_t>(c)][r]] = {c, r};

  std::array<std::vector<int64_t>, kNumCats> counts;
  for (int c = 0; c < kNumCats; ++c) counts[static_cast<size_t>(c)].assign(spec.vocab[static_cast<size_t>(c)].size(), 0);
  std::array<int64_t, kNumCats> totals{};
  int64_t len_min = 1 << 20, len_max = 0;
  for (const Sentence& s : corpus) {
    len_min = std::min<int64_t>(len_min, static_cast<int64_t>(s.ids.size()));
    len_max = std::max<int64_t>(len_max, static_cast<int64_t>(s.ids.size()));
    for (int32_t t : s.ids) {
      const auto [c, r] = rank_of.at(t);
      ++counts[static_cast<size_t>(c)][r];
      ++totals[static_cast<size_t>(c)];
    }
  }
  // Both template extremes are reachable and reached.
  CHECK(len_min == kMinSentenceLen);
  CHECK(len_max == kMaxSentenceLen);

  for (int c = 0; c < kNumCats; ++c) {
    const size_t n = spec.vocab[static_cast<size_t>(c)].size();
    std::vector<double> w(n);
    double z = 0.0;
    for (size_t r = 0; r < n; ++r) z += (w[r] = 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_s));
    double chi2 = 0.0;
    for (size_t r = 0; r < n; ++r) {
      const double expect = static_cast<double>(totals[static_cast<size_t>(c)]) * w[r] / z;
      const double diff = static_cast<double>(counts[static_cast<size_t>(c)][r]) - expect;
      chi2 += diff * diff / expect;
    }
    // 19 degrees of freedom; the p = 0.001 cut sits near 43.8.
    CHECK(chi2 < 45.0);
    // Monotone head of the rank curve.
    CHECK(counts[static_cast<size_t>(c)][0] > counts[static_cast<size_t>(c)][5]);
    CHECK(counts[static_cast<size_t>(c)][5] > counts[static_cast<size_t>(c)][15]);
  }
}

TEST_CASE("tagging data labels every token with its generating category") {
  const LanguageSpec spec = make_language_spec(SuiteConfig{}, 2, false);  // vso
  const Corpus data = generate_task_data(spec, TaskKind::tagging, 300);
  REQUIRE(data.size() == 300);
  for (const Sentence& s : data) {
    REQUIRE(s.tags.size() == s.ids.size());
    CHECK(s.label == -1);
    CHECK(s.tags == cats_of(spec, s.ids));
    CHECK(matches_template(s.tags, spec.order));
  }
  // Same example index, same sentence, across repeated generation.
  const Corpus again = generate_task_data(spec, TaskKind::tagging, 300);
  CHECK(again[299].ids == data[299].ids);
}

TEST_CASE("agreement data: label equals template validity, near-even balance") {
  const LanguageSpec spec = make_language_spec(SuiteConfig{}, 3, false);  // ovs
  const Corpus data = generate_task_data(spec, TaskKind::agreement, 1500);
  int64_t pos = 0;
  for (const Sentence& s : data) {
    REQUIRE((s.label == 0 || s.label == 1));
    CHECK(s.tags.empty());
    const bool valid = matches_template(cats_of(spec, s.ids), spec.order);
    CHECK(valid == (s.label == 1));
    pos += s.label;
    const int64_t len = static_cast<int64_t>(s.ids.size());
    CHECK(len >= kMinSentenceLen);  // corruption swaps in place, length kept
    CHECK(len <= kMaxSentenceLen);
  }
  const double share = static_cast<double>(pos) / 1500.0;
  CHECK(share > 0.45);
  CHECK(share < 0.55);
}

// ==================================================================== suite ===

TEST_CASE("suite vocabulary: shared anchors, otherwise pairwise disjoint") {
  const SuiteConfig cfg = small_suite_cfg();
  // Hand count: pad + mask + categories * (anchors + languages * exclusives).
  CHECK(cfg.required_vocab() == 2 + 4 * (2 + 8 * 18));

  std::vector<LanguageSpec> specs;
  for (int i = 0; i < cfg.n_source; ++i) specs.push_back(make_language_spec(cfg, i, false));
  for (int i = 0; i < cfg.n_target; ++i) specs.push_back(make_language_spec(cfg, i, true));

  CHECK(specs[0].tag == "s0");
  CHECK(specs[4].tag == "t0");
  // Word orders cycle through the global language index.
  CHECK(specs[0].order == WordOrder::svo);
  CHECK(specs[1].order == WordOrder::sov);
  CHECK(specs[2].order == WordOrder::vso);
  CHECK(specs[3].order == WordOrder::ovs);
  CHECK(specs[4].order == WordOrder::svo);
  CHECK(specs[7].order == WordOrder::ovs);

  std::set<int32_t> anchors;
  for (int c = 0; c < kNumCats; ++c)
    for (int a = 0; a < cfg.anchors_per_cat; ++a)
      anchors.insert(kFirstContentToken + c * cfg.anchors_per_cat + a);

  std::vector<std::set<int32_t>> toks;
  for (const auto& s : specs) {
    std::set<int32_t> t;
    for (const auto& v : s.vocab) t.insert(v.begin(), v.end());
    CHECK(*t.begin() >= kFirstContentToken);
    CHECK(*t.rbegin() < cfg.required_vocab());
    for (int32_t a : anchors) CHECK(t.count(a) == 1);  // anchors in every language
    toks.push_back(std::move(t));
  }
  for (size_t i = 0; i < toks.size(); ++i)
    for (size_t j = i + 1; j < toks.size(); ++j) {
      std::vector<int32_t> inter;
      std::set_intersection(toks[i].begin(), toks[i].end(), toks[j].begin(), toks[j].end(),
                            std::back_inserter(inter));
      CHECK(std::set<int32_t>(inter.begin(), inter.end()) == anchors);
    }

  CHECK_THROWS_AS(make_language_spec(cfg, 4, false), Error);  // index out of range
  SuiteConfig bad = cfg;
  bad.n_source = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.target_pretrain_share = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.exclusive_per_cat = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("build_suite: split sizes and the under-represented pretrain mix") {
  const SuiteConfig cfg = small_suite_cfg();
  const Suite suite = build_suite(cfg);
  REQUIRE(suite.source.size() == 4);
  REQUIRE(suite.target.size() == 4);

  for (const auto& lang : {suite.source[0], suite.target[2]}) {
    CHECK(static_cast<int64_t>(lang.sft_corpus.size()) == cfg.lang_sft_sentences);
    CHECK(static_cast<int64_t>(lang.sft_dev.size()) == cfg.lang_dev_sentences);
    CHECK(static_cast<int64_t>(lang.tag_train.size()) == cfg.task_train_examples);
    CHECK(static_cast<int64_t>(lang.tag_dev.size()) == cfg.task_dev_examples);
    CHECK(static_cast<int64_t>(lang.tag_eval.size()) == cfg.task_eval_examples);
    CHECK(static_cast<int64_t>(lang.agree_train.size()) == cfg.task_train_examples);
    CHECK(static_cast<int64_t>(lang.agree_eval.size()) == cfg.task_eval_examples);
    // Distinct streams: adaptation text is not the task text.
    CHECK(lang.sft_corpus[0].ids != lang.tag_train[0].ids);
  }

  const int64_t target_n = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(cfg.target_pretrain_share * static_cast<double>(cfg.pretrain_sentences))));
  CHECK(static_cast<int64_t>(suite.base_pretrain.size()) == 4 * cfg.pretrain_sentences + 4 * target_n);
  CHECK(target_n < cfg.pretrain_sentences);  // targets under-represented

  CHECK(suite.find("s0") != nullptr);
  CHECK(suite.find("t3") != nullptr);
  CHECK(suite.find("t3")->spec.tag == "t3");
  CHECK(suite.find("zz") == nullptr);

  // Deterministic rebuild.
  const Suite again = build_suite(cfg);
  CHECK(again.base_pretrain.size() == suite.base_pretrain.size());
  for (size_t i : {size_t{0}, suite.base_pretrain.size() - 1})
    CHECK(again.base_pretrain[i].ids == suite.base_pretrain[i].ids);
}

// ================================================================= batching ===

namespace {

Corpus tiny_corpus() {
  Corpus c;
  c.push_back({{2, 3, 4}, {0, 1, 0}, 1});
  c.push_back({{5}, {2}, 0});
  c.push_back({{6, 7}, {3, 1}, 1});
  return c;
}

}  // namespace

TEST_CASE("make_batch: padding, attention, and per-kind targets") {
  const Corpus c = tiny_corpus();

  const Batch none = make_batch(c, {0, 1}, LabelKind::none, "aa");
  CHECK(none.rows == 2);
  CHECK(none.cols == 3);
  CHECK(none.lang == "aa");
  CHECK(none.ids == std::vector<int32_t>{2, 3, 4, 5, kPadToken, kPadToken});
  CHECK(none.attn == std::vector<uint8_t>{1, 1, 1, 1, 0, 0});
  CHECK(none.targets.empty());

  const Batch tok = make_batch(c, {0, 1}, LabelKind::token, "aa");
  CHECK(tok.targets == std::vector<int32_t>{0, 1, 0, 2, -1, -1});

  const Batch seq = make_batch(c, {2, 1}, LabelKind::sequence, "bb");
  CHECK(seq.cols == 2);
  CHECK(seq.targets == std::vector<int32_t>{1, 0});

  // Same row twice is allowed (sampling with replacement is the caller's business).
  const Batch dup = make_batch(c, {1, 1}, LabelKind::none, "aa");
  CHECK(dup.ids == std::vector<int32_t>{5, 5});

  CHECK_THROWS_AS(make_batch(c, {}, LabelKind::none, "aa"), Error);
  CHECK_THROWS_AS(make_batch(c, {3}, LabelKind::none, "aa"), Error);
  CHECK_THROWS_AS(make_batch(c, {-1}, LabelKind::none, "aa"), Error);

  Corpus bad_tags = c;
  bad_tags[0].tags.pop_back();
  CHECK_THROWS_AS(make_batch(bad_tags, {0}, LabelKind::token, "aa"), Error);

  Corpus no_label = c;
  no_label[0].label = -1;
  CHECK_THROWS_AS(make_batch(no_label, {0}, LabelKind::sequence, "aa"), Error);

  Corpus empty_sentence = c;
  empty_sentence[1].ids.clear();
  CHECK_THROWS_AS(make_batch(empty_sentence, {1}, LabelKind::none, "aa"), Error);
}

TEST_CASE("eval_batches walk the corpus in order with a short tail") {
  const LanguageSpec spec = make_language_spec(SuiteConfig{}, 0, false);
  const Corpus c = generate_corpus(spec, 10);
  const auto batches = eval_batches(c, 4, LabelKind::none, "s0");
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].rows == 4);
  CHECK(batches[1].rows == 4);
  CHECK(batches[2].rows == 2);
  // First row of the second chunk is corpus row 4.
  CHECK(batches[1].ids[0] == c[4].ids[0]);
  CHECK_THROWS_AS(eval_batches(c, 0, LabelKind::none, "s0"), Error);
  CHECK_THROWS_AS(eval_batches(Corpus{}, 4, LabelKind::none, "s0"), Error);
}

TEST_CASE("epoch-shuffled source: pure in step, full coverage per epoch") {
  Corpus c;
  for (int32_t i = 0; i < 12; ++i) c.push_back({{kFirstContentToken + i}, {}, -1});
  const EpochShuffleSource src(&c, 4, 99, LabelKind::none, "s0");

  std::multiset<int32_t> epoch0, epoch1, expect;
  for (const Sentence& s : c) expect.insert(s.ids[0]);
  std::vector<int32_t> order0, order1;
  for (int64_t step = 0; step < 3; ++step) {
    const Batch b = src.at(step);
    const Batch b2 = src.at(step);  // purity
    CHECK(b.ids == b2.ids);
    CHECK(b.lang == "s0");
    for (int32_t id : b.ids) {
      epoch0.insert(id);
      order0.push_back(id);
    }
  }
  for (int64_t step = 3; step < 6; ++step)
    for (int32_t id : src.at(step).ids) {
      epoch1.insert(id);
      order1.push_back(id);
    }
  CHECK(epoch0 == expect);  // every row exactly once per epoch
  CHECK(epoch1 == expect);
  CHECK(order0 != order1);  // reshuffled between epochs

  CHECK_THROWS_AS(EpochShuffleSource(&c, 0, 1, LabelKind::none, "x"), Error);
  Corpus empty;
  CHECK_THROWS_AS(EpochShuffleSource(&empty, 4, 1, LabelKind::none, "x"), Error);
  CHECK_THROWS_AS(src.at(-1), Error);
}

TEST_CASE("mlm source produces keyed corruption of the shuffled stream") {
  const LanguageSpec spec = make_language_spec(SuiteConfig{}, 0, false);
  const Corpus c = generate_corpus(spec, 32);
  const MlmSource src(&c, 8, 7, 0.15, 600, "s0");
  const Batch b = src.at(2);
  const Batch again = src.at(2);
  CHECK(b.ids == again.ids);
  CHECK(b.targets == again.targets);
  CHECK(b.label_kind == LabelKind::mlm);
  CHECK(b.targets.size() == b.ids.size());
  int64_t selected = 0;
  for (size_t p = 0; p < b.targets.size(); ++p) {
    if (b.targets[p] >= 0) {
      ++selected;
      CHECK(b.attn[p] == 1);  // only real positions are selected
    }
  }
  CHECK(selected > 0);
  CHECK(src.at(3).ids != b.ids);  // different step, different batch
  CHECK_THROWS_AS(MlmSource(&c, 8, 7, 0.0, 600, "s0"), Error);
}

TEST_CASE("multi-source schedule: monolingual batches, capped proportions") {
  const LanguageSpec sa = make_language_spec(SuiteConfig{}, 0, false);
  const LanguageSpec sb = make_language_spec(SuiteConfig{}, 1, false);
  const Corpus ca = generate_corpus(sa, 10);
  const Corpus cb = generate_corpus(sb, 7);
  std::map<std::string, const Corpus*> corpora{{"s0", &ca}, {"s1", &cb}};
  const MultiSourceSchedule sched(corpora, 4, 8, 3, LabelKind::none);

  // take(s0) = min(8, 10) = 8 -> 2 batches; take(s1) = min(8, 7) = 7 -> 2.
  REQUIRE(sched.batches_per_cycle() == 4);

  std::map<std::string, int64_t> rows_per_lang;
  std::map<std::string, std::set<std::multiset<int32_t>>> seen_rows;
  for (int64_t step = 0; step < sched.batches_per_cycle(); ++step) {
    const Batch b = sched.at(step);
    const Batch again = sched.at(step);
    CHECK(b.ids == again.ids);
    REQUIRE((b.lang == "s0" || b.lang == "s1"));
    rows_per_lang[b.lang] += b.rows;
    // Monolingual check: every token belongs to the batch language.
    const LanguageSpec& spec = b.lang == "s0" ? sa : sb;
    for (size_t p = 0; p < b.ids.size(); ++p)
      if (b.attn[p]) CHECK(category_of(spec, b.ids[p]) >= 0);
  }
  CHECK(rows_per_lang["s0"] == 8);  // capped
  CHECK(rows_per_lang["s1"] == 7);  // whole corpus, shorter than the cap

  // Next cycle draws a fresh per-language sample.
  const Batch c0 = sched.at(0);
  const Batch c1 = sched.at(sched.batches_per_cycle());
  CHECK((c0.lang != c1.lang || id_multiset(c0) != id_multiset(c1)));

  CHECK_THROWS_AS(MultiSourceSchedule({}, 4, 8, 3, LabelKind::none), Error);
  CHECK_THROWS_AS(MultiSourceSchedule(corpora, 0, 8, 3, LabelKind::none), Error);
  CHECK_THROWS_AS(MultiSourceSchedule(corpora, 4, 0, 3, LabelKind::none), Error);
  Corpus empty;
  std::map<std::string, const Corpus*> with_empty{{"s0", &ca}, {"zz", &empty}};
  CHECK_THROWS_AS(MultiSourceSchedule(with_empty, 4, 8, 3, LabelKind::none), Error);
}
