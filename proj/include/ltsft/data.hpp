// Deterministic batch construction: epoch-shuffled single-corpus sources,
// masked-token corruption, and the monolingual-batch multi-source schedule.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ltsft/model.hpp"
#include "ltsft/train.hpp"

namespace ltsft {

struct Sentence {
  std::vector<int32_t> ids;   // content tokens, no padding
  std::vector<int32_t> tags;  // per-token labels (token tasks) or empty
  int32_t label = -1;         // sequence label (sequence tasks) or -1
};

using Corpus = std::vector<Sentence>;

// Pad a batch of sentences to the longest row. kind selects which labels are
// carried: none (targets empty), token (tags, -1 at padding), sequence
// (per-row label). mlm batches come from mlm_corrupt instead.
Batch make_batch(const Corpus& corpus, const std::vector<int64_t>& rows, LabelKind kind, const std::string& lang);

// Corpus order, fixed-size chunks (last one short). For evaluation.
std::vector<Batch> eval_batches(const Corpus& corpus, int64_t batch_size, LabelKind kind, const std::string& lang);

// Rows follow a per-epoch permutation keyed by (seed, "epoch", epoch); the
// global row stream g = step*batch_size + r spans epoch boundaries, so at()
// is a pure function of step.
class EpochShuffleSource : public BatchSource {
 public:
  EpochShuffleSource(const Corpus* corpus, int64_t batch_size, uint64_t seed, LabelKind kind, std::string lang);

  Batch at(int64_t step) const override;

 private:
  const Corpus* corpus_;
  int64_t batch_size_;
  uint64_t seed_;
  LabelKind kind_;
  std::string lang_;
};

// Epoch-shuffled stream of clean sentences corrupted for masked-token
// prediction; the corruption key is (seed, "mlm", step).
class MlmSource : public BatchSource {
 public:
  MlmSource(const Corpus* corpus, int64_t batch_size, uint64_t seed, double mask_fraction, int64_t vocab,
            std::string lang);

  Batch at(int64_t step) const override;

 private:
  EpochShuffleSource base_;
  uint64_t seed_;
  double fraction_;
  int64_t vocab_;
};

// Monolingual batches drawn from several language corpora. Each cycle takes
// up to `per_lang_cap` freshly shuffled sentences per language, chunks them
// into batches, and interleaves the batch order under a per-cycle shuffle.
// Every batch carries its language tag for overlay lookup.
class MultiSourceSchedule : public BatchSource {
 public:
  MultiSourceSchedule(std::map<std::string, const Corpus*> corpora, int64_t batch_size, int64_t per_lang_cap,
                      uint64_t seed, LabelKind kind);

  Batch at(int64_t step) const override;
  int64_t batches_per_cycle() const { return batches_per_cycle_; }

 private:
  std::vector<std::pair<std::string, const Corpus*>> corpora_;  // sorted by tag
  int64_t batch_size_;
  int64_t per_lang_cap_;
  uint64_t seed_;
  LabelKind kind_;
  int64_t batches_per_cycle_ = 0;
};

}  // namespace ltsft
