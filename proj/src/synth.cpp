#include "ltsft/synth.hpp"

#include <algorithm>
#include <cmath>

namespace ltsft {

const char* word_order_name(WordOrder o) {
  switch (o) {
    case WordOrder::svo: return "svo";
    case WordOrder::sov: return "sov";
    case WordOrder::vso: return "vso";
    case WordOrder::ovs: return "ovs";
  }
  return "?";
}

WordOrder word_order_from_name(const std::string& s) {
  if (s == "svo") return WordOrder::svo;
  if (s == "sov") return WordOrder::sov;
  if (s == "vso") return WordOrder::vso;
  if (s == "ovs") return WordOrder::ovs;
  fail(Errc::config, "unknown word order: " + s);
}

const char* task_kind_name(TaskKind t) { return t == TaskKind::tagging ? "tagging" : "agreement"; }

TaskKind task_kind_from_name(const std::string& s) {
  if (s == "tagging") return TaskKind::tagging;
  if (s == "agreement") return TaskKind::agreement;
  fail(Errc::config, "unknown task: " + s);
}

void LanguageSpec::validate() const {
  if (tag.empty()) fail(Errc::config, "language spec: empty tag");
  if (zipf_s < 0.0 || !std::isfinite(zipf_s)) fail(Errc::config, "language spec: bad zipf exponent");
  std::vector<int32_t> all;
  for (const auto& cat : vocab) {
    if (cat.empty()) fail(Errc::config, "language spec: empty category vocabulary");
    for (int32_t t : cat) {
      if (t < kFirstContentToken) fail(Errc::config, "language spec: token id collides with reserved ids");
      all.push_back(t);
    }
  }
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end())
    fail(Errc::config, "language spec: token assigned to more than one category");
}

int32_t LanguageSpec::max_token() const {
  int32_t m = 0;
  for (const auto& cat : vocab)
    for (int32_t t : cat) m = std::max(m, t);
  return m;
}

int32_t category_of(const LanguageSpec& spec, int32_t token) {
  for (int c = 0; c < kNumCats; ++c)
    if (std::find(spec.vocab[static_cast<size_t>(c)].begin(), spec.vocab[static_cast<size_t>(c)].end(), token) !=
        spec.vocab[static_cast<size_t>(c)].end())
      return c;
  return -1;
}

// ---------------------------------------------------------------- grammar ---

namespace {

// Greedy group parsers over the category string. The optional function slot
// is unambiguous: inside a noun phrase it can only be followed by
// modifiers/noun, inside a verb group only by the verb.
bool parse_np(const std::vector<int32_t>& cats, size_t& p) {
  if (p < cats.size() && cats[p] == kCatFunction) ++p;
  int mods = 0;
  while (p < cats.size() && cats[p] == kCatModifier && mods < 2) {
    ++p;
    ++mods;
  }
  if (p < cats.size() && cats[p] == kCatNoun) {
    ++p;
    return true;
  }
  return false;
}

bool parse_vg(const std::vector<int32_t>& cats, size_t& p) {
  if (p < cats.size() && cats[p] == kCatFunction) ++p;
  if (p < cats.size() && cats[p] == kCatVerb) {
    ++p;
    return true;
  }
  return false;
}

struct ZipfSampler {
  std::vector<double> cum;

  ZipfSampler(size_t n, double s) {
    cum.resize(n);
    double acc = 0.0;
    for (size_t r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), s);
      cum[r] = acc;
    }
  }

  size_t draw(Rng& rng) const {
    const double u = rng.next_unit() * cum.back();
    return static_cast<size_t>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
  }
};

struct SentenceBuilder {
  const LanguageSpec& spec;
  std::array<ZipfSampler, kNumCats> samplers;

  explicit SentenceBuilder(const LanguageSpec& s)
      : spec(s),
        samplers{ZipfSampler(s.vocab[0].size(), s.zipf_s), ZipfSampler(s.vocab[1].size(), s.zipf_s),
                 ZipfSampler(s.vocab[2].size(), s.zipf_s), ZipfSampler(s.vocab[3].size(), s.zipf_s)} {}

  int32_t draw_token(Rng& rng, int cat) const {
    const auto& v = spec.vocab[static_cast<size_t>(cat)];
    return v[samplers[static_cast<size_t>(cat)].draw(rng)];
  }

  void emit(Rng& rng, int cat, std::vector<int32_t>& ids, std::vector<int32_t>& cats) const {
    ids.push_back(draw_token(rng, cat));
    cats.push_back(cat);
  }

  void noun_phrase(Rng& rng, std::vector<int32_t>& ids, std::vector<int32_t>& cats) const {
    if (rng.next_unit() < 0.6) emit(rng, kCatFunction, ids, cats);
    const double u = rng.next_unit();
    const int mods = u < 0.5 ? 0 : (u < 0.85 ? 1 : 2);
    for (int i = 0; i < mods; ++i) emit(rng, kCatModifier, ids, cats);
    emit(rng, kCatNoun, ids, cats);
  }

  void verb_group(Rng& rng, std::vector<int32_t>& ids, std::vector<int32_t>& cats) const {
    if (rng.next_unit() < 0.3) emit(rng, kCatFunction, ids, cats);
    emit(rng, kCatVerb, ids, cats);
  }

  // Grammatical sentence plus its category string.
  void sentence(Rng& rng, std::vector<int32_t>& ids, std::vector<int32_t>& cats) const {
    std::vector<int32_t> si, sc, vi, vc, oi, oc;
    noun_phrase(rng, si, sc);
    verb_group(rng, vi, vc);
    noun_phrase(rng, oi, oc);
    auto append = [&](const std::vector<int32_t>& a, const std::vector<int32_t>& b) {
      ids.insert(ids.end(), a.begin(), a.end());
      cats.insert(cats.end(), b.begin(), b.end());
    };
    switch (spec.order) {
      case WordOrder::svo: append(si, sc); append(vi, vc); append(oi, oc); break;
      case WordOrder::sov: append(si, sc); append(oi, oc); append(vi, vc); break;
      case WordOrder::vso: append(vi, vc); append(si, sc); append(oi, oc); break;
      case WordOrder::ovs: append(oi, oc); append(vi, vc); append(si, sc); break;
    }
  }
};

}  // namespace

bool matches_template(const std::vector<int32_t>& cats, WordOrder order) {
  size_t p = 0;
  bool ok = true;
  switch (order) {
    case WordOrder::svo: ok = parse_np(cats, p) && parse_vg(cats, p) && parse_np(cats, p); break;
    case WordOrder::sov: ok = parse_np(cats, p) && parse_np(cats, p) && parse_vg(cats, p); break;
    case WordOrder::vso: ok = parse_vg(cats, p) && parse_np(cats, p) && parse_np(cats, p); break;
    case WordOrder::ovs: ok = parse_np(cats, p) && parse_vg(cats, p) && parse_np(cats, p); break;
  }
  return ok && p == cats.size();
}

Corpus generate_corpus(const LanguageSpec& spec, int64_t sentences) {
  spec.validate();
  if (sentences <= 0) fail(Errc::config, "generate_corpus: sentence count must be positive");
  SentenceBuilder builder(spec);
  Corpus out;
  out.reserve(static_cast<size_t>(sentences));
  for (int64_t i = 0; i < sentences; ++i) {
    Rng rng(derive_key(spec.seed, "corpus", static_cast<uint64_t>(i)));
    Sentence s;
    std::vector<int32_t> cats;
    builder.sentence(rng, s.ids, cats);
    out.push_back(std::move(s));
  }
  return out;
}

Corpus generate_task_data(const LanguageSpec& spec, TaskKind task, int64_t examples) {
  spec.validate();
  if (examples <= 0) fail(Errc::config, "generate_task_data: example count must be positive");
  SentenceBuilder builder(spec);
  Corpus out;
  out.reserve(static_cast<size_t>(examples));
  for (int64_t i = 0; i < examples; ++i) {
    Rng rng(derive_key(spec.seed, task_kind_name(task), static_cast<uint64_t>(i)));
    Sentence s;
    std::vector<int32_t> cats;
    builder.sentence(rng, s.ids, cats);
    if (task == TaskKind::tagging) {
      s.tags = cats;
    } else {
      s.label = rng.next_unit() < 0.5 ? 1 : 0;
      if (s.label == 0) {
        // Cross-category swap, rejected until the template breaks. Swapping
        // preserves the token multiset, so only order carries the label.
        const size_t n = s.ids.size();
        bool done = false;
        for (int attempt = 0; attempt < 64 && !done; ++attempt) {
          size_t a = static_cast<size_t>(rng.next_below(n));
          size_t b = static_cast<size_t>(rng.next_below(n));
          if (cats[a] == cats[b]) continue;
          std::swap(cats[a], cats[b]);
          if (!matches_template(cats, spec.order)) {
            std::swap(s.ids[a], s.ids[b]);
            done = true;
          } else {
            std::swap(cats[a], cats[b]);
          }
        }
        if (!done) {
          // Deterministic fallback: swapping the first noun with the verb
          // always breaks every template (the verb changes sides of it).
          size_t a = static_cast<size_t>(std::find(cats.begin(), cats.end(), kCatNoun) - cats.begin());
          size_t b = static_cast<size_t>(std::find(cats.begin(), cats.end(), kCatVerb) - cats.begin());
          std::swap(cats[a], cats[b]);
          std::swap(s.ids[a], s.ids[b]);
          if (matches_template(cats, spec.order)) fail(Errc::internal, "agreement corruption failed");
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------------ suite ---

int64_t SuiteConfig::required_vocab() const {
  return kFirstContentToken +
         static_cast<int64_t>(kNumCats) * (anchors_per_cat + static_cast<int64_t>(n_source + n_target) * exclusive_per_cat);
}

void SuiteConfig::validate() const {
  if (n_source < 1 || n_target < 1) fail(Errc::config, "suite: need at least one source and one target language");
  if (anchors_per_cat < 0 || exclusive_per_cat < 1) fail(Errc::config, "suite: bad vocabulary sizes");
  if (target_pretrain_share < 0.0 || target_pretrain_share > 1.0) fail(Errc::config, "suite: bad pretrain share");
  if (pretrain_sentences < 1 || lang_sft_sentences < 1 || lang_dev_sentences < 1 || task_train_examples < 1 ||
      task_dev_examples < 1 || task_eval_examples < 1)
    fail(Errc::config, "suite: corpus sizes must be positive");
}

LanguageSpec make_language_spec(const SuiteConfig& cfg, int index, bool is_target) {
  cfg.validate();
  const int count = is_target ? cfg.n_target : cfg.n_source;
  if (index < 0 || index >= count) fail(Errc::config, "suite: language index out of range");
  const int global = is_target ? cfg.n_source + index : index;

  LanguageSpec spec;
  spec.tag = (is_target ? "t" : "s") + std::to_string(index);
  spec.order = static_cast<WordOrder>(global % 4);
  spec.zipf_s = cfg.zipf_s;
  spec.seed = derive_key(cfg.seed, "lang", spec.tag);

  // Anchors occupy the lowest ids (and therefore the top Zipf ranks); each
  // language appends its own exclusive block.
  const int32_t anchor_base = kFirstContentToken;
  const int32_t excl_base = anchor_base + static_cast<int32_t>(kNumCats * cfg.anchors_per_cat);
  const int32_t lang_base = excl_base + static_cast<int32_t>(global * kNumCats * cfg.exclusive_per_cat);
  for (int c = 0; c < kNumCats; ++c) {
    auto& v = spec.vocab[static_cast<size_t>(c)];
    for (int a = 0; a < cfg.anchors_per_cat; ++a) v.push_back(anchor_base + static_cast<int32_t>(c * cfg.anchors_per_cat + a));
    for (int w = 0; w < cfg.exclusive_per_cat; ++w)
      v.push_back(lang_base + static_cast<int32_t>(c * cfg.exclusive_per_cat + w));
  }
  spec.validate();
  return spec;
}

namespace {

LanguageSpec reseed(LanguageSpec spec, const char* stream) {
  spec.seed = derive_key(spec.seed, stream);
  return spec;
}

LanguageData build_language(const SuiteConfig& cfg, int index, bool is_target) {
  LanguageData d;
  d.spec = make_language_spec(cfg, index, is_target);

  const LanguageSpec sft_spec = reseed(d.spec, "sft");
  Corpus sft = generate_corpus(sft_spec, cfg.lang_sft_sentences + cfg.lang_dev_sentences);
  d.sft_dev.assign(sft.begin() + cfg.lang_sft_sentences, sft.end());
  sft.resize(static_cast<size_t>(cfg.lang_sft_sentences));
  d.sft_corpus = std::move(sft);

  const int64_t total = cfg.task_train_examples + cfg.task_dev_examples + cfg.task_eval_examples;
  auto split3 = [&](Corpus all, Corpus& train, Corpus& dev, Corpus& eval) {
    train.assign(all.begin(), all.begin() + cfg.task_train_examples);
    dev.assign(all.begin() + cfg.task_train_examples, all.begin() + cfg.task_train_examples + cfg.task_dev_examples);
    eval.assign(all.begin() + cfg.task_train_examples + cfg.task_dev_examples, all.end());
  };
  split3(generate_task_data(reseed(d.spec, "tag"), TaskKind::tagging, total), d.tag_train, d.tag_dev, d.tag_eval);
  split3(generate_task_data(reseed(d.spec, "agree"), TaskKind::agreement, total), d.agree_train, d.agree_dev,
         d.agree_eval);
  return d;
}

}  // namespace

const LanguageData* Suite::find(const std::string& tag) const {
  for (const auto& d : source)
    if (d.spec.tag == tag) return &d;
  for (const auto& d : target)
    if (d.spec.tag == tag) return &d;
  return nullptr;
}

Suite build_suite(const SuiteConfig& cfg) {
  cfg.validate();
  Suite suite;
  suite.cfg = cfg;
  for (int i = 0; i < cfg.n_source; ++i) suite.source.push_back(build_language(cfg, i, false));
  for (int i = 0; i < cfg.n_target; ++i) suite.target.push_back(build_language(cfg, i, true));

  const int64_t dev_per_lang = std::max<int64_t>(8, cfg.lang_dev_sentences / 4);
  auto add_mix = [&](const LanguageSpec& spec, int64_t n) {
    const LanguageSpec pre = reseed(spec, "pretrain");
    Corpus c = generate_corpus(pre, n + dev_per_lang);
    suite.base_dev.insert(suite.base_dev.end(), c.begin() + n, c.end());
    suite.base_pretrain.insert(suite.base_pretrain.end(), c.begin(), c.begin() + n);
  };
  for (const auto& d : suite.source) add_mix(d.spec, cfg.pretrain_sentences);
  const int64_t target_n =
      std::max<int64_t>(1, static_cast<int64_t>(std::llround(cfg.target_pretrain_share *
                                                             static_cast<double>(cfg.pretrain_sentences))));
  for (const auto& d : suite.target) add_mix(d.spec, target_n);
  return suite;
}

}  // namespace ltsft
