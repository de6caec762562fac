#include "ltsft/data.hpp"

#include <algorithm>
#include <numeric>

namespace ltsft {

Batch make_batch(const Corpus& corpus, const std::vector<int64_t>& rows, LabelKind kind, const std::string& lang) {
  if (rows.empty()) fail(Errc::internal, "make_batch: empty row set");
  int64_t cols = 0;
  for (int64_t r : rows) {
    if (r < 0 || r >= static_cast<int64_t>(corpus.size())) fail(Errc::internal, "make_batch: row out of range");
    const Sentence& s = corpus[static_cast<size_t>(r)];
    if (s.ids.empty()) fail(Errc::config, "make_batch: empty sentence");
    cols = std::max(cols, static_cast<int64_t>(s.ids.size()));
  }

  Batch b;
  b.rows = static_cast<int64_t>(rows.size());
  b.cols = cols;
  b.label_kind = kind;
  b.lang = lang;
  b.ids.assign(static_cast<size_t>(b.rows * cols), kPadToken);
  b.attn.assign(static_cast<size_t>(b.rows * cols), 0);
  if (kind == LabelKind::token) b.targets.assign(static_cast<size_t>(b.rows * cols), -1);
  if (kind == LabelKind::sequence) b.targets.assign(static_cast<size_t>(b.rows), -1);

  for (int64_t r = 0; r < b.rows; ++r) {
    const Sentence& s = corpus[static_cast<size_t>(rows[static_cast<size_t>(r)])];
    const int64_t n = static_cast<int64_t>(s.ids.size());
    for (int64_t c = 0; c < n; ++c) {
      b.ids[static_cast<size_t>(r * cols + c)] = s.ids[static_cast<size_t>(c)];
      b.attn[static_cast<size_t>(r * cols + c)] = 1;
    }
    if (kind == LabelKind::token) {
      if (static_cast<int64_t>(s.tags.size()) != n) fail(Errc::config, "make_batch: tag/token length mismatch");
      for (int64_t c = 0; c < n; ++c) b.targets[static_cast<size_t>(r * cols + c)] = s.tags[static_cast<size_t>(c)];
    } else if (kind == LabelKind::sequence) {
      if (s.label < 0) fail(Errc::config, "make_batch: sentence lacks a sequence label");
      b.targets[static_cast<size_t>(r)] = s.label;
    }
  }
  return b;
}

std::vector<Batch> eval_batches(const Corpus& corpus, int64_t batch_size, LabelKind kind, const std::string& lang) {
  if (batch_size <= 0) fail(Errc::config, "eval_batches: batch size must be positive");
  if (corpus.empty()) fail(Errc::config, "eval_batches: empty corpus");
  std::vector<Batch> out;
  for (int64_t start = 0; start < static_cast<int64_t>(corpus.size()); start += batch_size) {
    const int64_t end = std::min<int64_t>(start + batch_size, static_cast<int64_t>(corpus.size()));
    std::vector<int64_t> rows(static_cast<size_t>(end - start));
    std::iota(rows.begin(), rows.end(), start);
    out.push_back(make_batch(corpus, rows, kind, lang));
  }
  return out;
}

EpochShuffleSource::EpochShuffleSource(const Corpus* corpus, int64_t batch_size, uint64_t seed, LabelKind kind,
                                       std::string lang)
    : corpus_(corpus), batch_size_(batch_size), seed_(seed), kind_(kind), lang_(std::move(lang)) {
  if (corpus_ == nullptr || corpus_->empty()) fail(Errc::config, "batch source: empty corpus");
  if (batch_size_ <= 0) fail(Errc::config, "batch source: batch size must be positive");
}

Batch EpochShuffleSource::at(int64_t step) const {
  if (step < 0) fail(Errc::internal, "batch source: negative step");
  const int64_t n = static_cast<int64_t>(corpus_->size());
  std::vector<int64_t> rows(static_cast<size_t>(batch_size_));
  std::vector<int64_t> perm;
  int64_t perm_epoch = -1;
  for (int64_t r = 0; r < batch_size_; ++r) {
    const int64_t g = step * batch_size_ + r;
    const int64_t epoch = g / n;
    if (epoch != perm_epoch) {
      perm.resize(static_cast<size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(derive_key(seed_, "epoch", static_cast<uint64_t>(epoch)));
      rng.shuffle(perm);
      perm_epoch = epoch;
    }
    rows[static_cast<size_t>(r)] = perm[static_cast<size_t>(g % n)];
  }
  return make_batch(*corpus_, rows, kind_, lang_);
}

MlmSource::MlmSource(const Corpus* corpus, int64_t batch_size, uint64_t seed, double mask_fraction, int64_t vocab,
                     std::string lang)
    : base_(corpus, batch_size, seed, LabelKind::none, std::move(lang)),
      seed_(seed),
      fraction_(mask_fraction),
      vocab_(vocab) {
  if (mask_fraction <= 0.0 || mask_fraction >= 1.0) fail(Errc::config, "mlm source: bad mask fraction");
}

Batch MlmSource::at(int64_t step) const {
  return mlm_corrupt(base_.at(step), fraction_, derive_key(seed_, "mlm", static_cast<uint64_t>(step)), vocab_);
}

MultiSourceSchedule::MultiSourceSchedule(std::map<std::string, const Corpus*> corpora, int64_t batch_size,
                                         int64_t per_lang_cap, uint64_t seed, LabelKind kind)
    : batch_size_(batch_size), per_lang_cap_(per_lang_cap), seed_(seed), kind_(kind) {
  if (corpora.empty()) fail(Errc::config, "multi-source: no corpora");
  if (batch_size_ <= 0) fail(Errc::config, "multi-source: batch size must be positive");
  if (per_lang_cap_ <= 0) fail(Errc::config, "multi-source: per-language cap must be positive");
  for (auto& [tag, c] : corpora) {
    if (c == nullptr || c->empty()) fail(Errc::config, "multi-source: empty corpus for " + tag);
    corpora_.emplace_back(tag, c);
  }
  for (auto& [tag, c] : corpora_) {
    const int64_t take = std::min<int64_t>(per_lang_cap_, static_cast<int64_t>(c->size()));
    batches_per_cycle_ += (take + batch_size_ - 1) / batch_size_;
  }
}

Batch MultiSourceSchedule::at(int64_t step) const {
  if (step < 0) fail(Errc::internal, "multi-source: negative step");
  const int64_t cycle = step / batches_per_cycle_;
  const int64_t pos = step % batches_per_cycle_;

  // Rebuild this cycle's plan: per language a fresh sample of row chunks,
  // then a shuffled interleaving of all (language, chunk) pairs.
  std::vector<std::pair<size_t, std::vector<int64_t>>> plan;  // (corpus idx, rows)
  for (size_t li = 0; li < corpora_.size(); ++li) {
    const Corpus& c = *corpora_[li].second;
    const int64_t n = static_cast<int64_t>(c.size());
    const int64_t take = std::min<int64_t>(per_lang_cap_, n);
    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_key(seed_, "ms", corpora_[li].first, static_cast<uint64_t>(cycle)));
    rng.shuffle(perm);
    for (int64_t start = 0; start < take; start += batch_size_) {
      const int64_t end = std::min<int64_t>(start + batch_size_, take);
      plan.emplace_back(li, std::vector<int64_t>(perm.begin() + start, perm.begin() + end));
    }
  }
  if (static_cast<int64_t>(plan.size()) != batches_per_cycle_) fail(Errc::internal, "multi-source: plan size drifted");
  std::vector<int64_t> order(plan.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_key(seed_, "order", static_cast<uint64_t>(cycle)));
  rng.shuffle(order);

  const auto& chosen = plan[static_cast<size_t>(order[static_cast<size_t>(pos)])];
  return make_batch(*corpora_[chosen.first].second, chosen.second, kind_, corpora_[chosen.first].first);
}

}  // namespace ltsft
