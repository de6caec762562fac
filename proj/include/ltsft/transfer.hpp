// Cross-lingual transfer protocol: language SFTs via masked-token modelling,
// task SFTs trained on top of the source-language SFT (removed afterwards),
// additive composition, zero-shot evaluation, and multi-source training.
#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ltsft/data.hpp"
#include "ltsft/synth.hpp"
#include "ltsft/train.hpp"

namespace ltsft {

struct LanguageArtifact {
  std::string tag;
  SparseDiff diff;  // carries its selection mask
  double phase1_final_loss = 0.0;
  double phase2_final_loss = 0.0;
};

struct TaskArtifact {
  std::string tag;  // task name
  TaskKind kind = TaskKind::tagging;
  HeadSpec hspec;
  std::vector<std::string> sources;
  SparseDiff diff;
  ParameterSnapshot head;
  // Metric of the composed source model (theta0 + task diff + source language
  // diff) on the source dev set; replayable exactly from the artifacts.
  double source_dev_metric = 0.0;
  double phase1_final_loss = 0.0;
  double phase2_final_loss = 0.0;
};

HeadSpec head_for_task(TaskKind kind);
LabelKind label_kind_for_task(TaskKind kind);

// Deterministic masked-token dev loss: each dev batch is corrupted once under
// (key, "dev", batch index); the result is the target-weighted mean loss.
double mlm_dev_loss(const TrainableModel& model, const ParameterSnapshot& body, const Corpus& dev,
                    double mask_fraction, int64_t vocab, int64_t batch_size, uint64_t key);

struct MetricReport {
  double accuracy = 0.0;  // fraction in [0,1]
  double span_f1 = 0.0;   // percentage in [0,100]; tagging only
  int64_t examples = 0;   // labeled positions (tagging) or sequences
};

// Span F1 (percentage) over contiguous equal-label runs, excluding `outside`
// and ignored (-1) positions. Rows are aligned gold/predicted label
// sequences; a span matches on (row, start, end, label) exactly.
double span_f1(const std::vector<std::vector<int32_t>>& gold, const std::vector<std::vector<int32_t>>& pred,
               int32_t outside);

MetricReport evaluate(const TrainableModel& model, const ParameterSnapshot& body, const HeadSpec& hspec,
                      const ParameterSnapshot& head, const Corpus& data, TaskKind kind, int64_t batch_size,
                      const std::string& lang);

// LT-SFT with the masked-token objective on the language corpus; cfg carries
// the L1 anchor strength (language default 0.1).
LanguageArtifact train_language_sft(const TrainableModel& model, const ParameterSnapshot& theta0,
                                    const Corpus& corpus, const Corpus& dev, const TrainConfig& cfg,
                                    const MaskStrategy& strategy, double budget, int64_t vocab,
                                    const std::string& tag, std::ostream* log = nullptr);

// LT-SFT on the task data with the source-language SFT applied first; the
// emitted diff is relative to (theta0 + source diff), i.e. the language SFT
// is removed again. source_lang may be null (train on plain theta0).
TaskArtifact train_task_sft(const TrainableModel& model, const ParameterSnapshot& theta0,
                            const LanguageArtifact* source_lang, const Corpus& train, const Corpus& dev,
                            TaskKind kind, const TrainConfig& cfg, const MaskStrategy& strategy, double budget,
                            const std::string& source_tag, std::ostream* log = nullptr);

// Multi-source task SFT: monolingual batches under a per-language example
// cap; each batch's language SFT is overlaid for that step only, and the
// emitted diff is relative to plain theta0.
TaskArtifact train_task_sft_multi(const TrainableModel& model, const ParameterSnapshot& theta0,
                                  const std::vector<const LanguageArtifact*>& langs,
                                  const std::map<std::string, const Corpus*>& train_by_lang, TaskKind kind,
                                  const TrainConfig& cfg, const MaskStrategy& strategy, double budget,
                                  int64_t per_lang_cap, std::ostream* log = nullptr);

// theta0 + task diff (+ target language diff). target == nullptr is the
// task-adaptation-only configuration.
ParameterSnapshot zero_shot_apply(const ParameterSnapshot& theta0, const TaskArtifact& task,
                                  const LanguageArtifact* target);

}  // namespace ltsft
