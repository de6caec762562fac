#include "ltsft/transfer.hpp"

#include <algorithm>
#include <cmath>

namespace ltsft {

HeadSpec head_for_task(TaskKind kind) {
  if (kind == TaskKind::tagging) return HeadSpec{HeadKind::token_cls, kNumCats};
  return HeadSpec{HeadKind::seq_cls, 2};
}

LabelKind label_kind_for_task(TaskKind kind) {
  return kind == TaskKind::tagging ? LabelKind::token : LabelKind::sequence;
}

double mlm_dev_loss(const TrainableModel& model, const ParameterSnapshot& body, const Corpus& dev,
                    double mask_fraction, int64_t vocab, int64_t batch_size, uint64_t key) {
  const std::vector<Batch> clean = eval_batches(dev, batch_size, LabelKind::none, "");
  double total = 0.0;
  int64_t count = 0;
  const HeadSpec none{};
  const ParameterSnapshot no_head;
  for (size_t b = 0; b < clean.size(); ++b) {
    Batch corrupted = mlm_corrupt(clean[b], mask_fraction, derive_key(key, "dev", static_cast<uint64_t>(b)), vocab);
    int64_t n = 0;
    for (int32_t t : corrupted.targets)
      if (t >= 0) ++n;
    if (n == 0) continue;
    total += model.eval_loss(body, none, no_head, corrupted) * static_cast<double>(n);
    count += n;
  }
  if (count == 0) fail(Errc::config, "mlm_dev_loss: corruption selected no positions");
  return total / static_cast<double>(count);
}

// ----------------------------------------------------------------- metrics ---

namespace {

struct Span {
  int64_t row, start, end;  // [start, end)
  int32_t label;

  bool operator==(const Span& o) const {
    return row == o.row && start == o.start && end == o.end && label == o.label;
  }
  bool operator<(const Span& o) const {
    if (row != o.row) return row < o.row;
    if (start != o.start) return start < o.start;
    if (end != o.end) return end < o.end;
    return label < o.label;
  }
};

std::vector<Span> collect_spans(const std::vector<std::vector<int32_t>>& rows, int32_t outside) {
  std::vector<Span> spans;
  for (size_t r = 0; r < rows.size(); ++r) {
    const auto& labels = rows[r];
    int64_t start = -1;
    int32_t cur = -1;
    auto flush = [&](int64_t end) {
      if (start >= 0) spans.push_back({static_cast<int64_t>(r), start, end, cur});
      start = -1;
      cur = -1;
    };
    for (size_t i = 0; i < labels.size(); ++i) {
      const int32_t l = labels[i];
      if (l < 0 || l == outside) {
        flush(static_cast<int64_t>(i));
      } else if (l != cur) {
        flush(static_cast<int64_t>(i));
        start = static_cast<int64_t>(i);
        cur = l;
      }
    }
    flush(static_cast<int64_t>(labels.size()));
  }
  return spans;
}

}  // namespace

double span_f1(const std::vector<std::vector<int32_t>>& gold, const std::vector<std::vector<int32_t>>& pred,
               int32_t outside) {
  if (gold.size() != pred.size()) fail(Errc::internal, "span_f1: row count mismatch");
  for (size_t r = 0; r < gold.size(); ++r)
    if (gold[r].size() != pred[r].size()) fail(Errc::internal, "span_f1: row length mismatch");
  std::vector<Span> g = collect_spans(gold, outside);
  std::vector<Span> p = collect_spans(pred, outside);
  std::sort(g.begin(), g.end());
  std::sort(p.begin(), p.end());
  std::vector<Span> inter;
  std::set_intersection(g.begin(), g.end(), p.begin(), p.end(), std::back_inserter(inter));
  const double matches = static_cast<double>(inter.size());
  if (g.empty() && p.empty()) return 100.0;
  if (g.empty() || p.empty() || matches == 0.0) return 0.0;
  const double precision = matches / static_cast<double>(p.size());
  const double recall = matches / static_cast<double>(g.size());
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

MetricReport evaluate(const TrainableModel& model, const ParameterSnapshot& body, const HeadSpec& hspec,
                      const ParameterSnapshot& head, const Corpus& data, TaskKind kind, int64_t batch_size,
                      const std::string& lang) {
  const LabelKind lk = label_kind_for_task(kind);
  const int32_t classes = head_for_task(kind).classes;
  MetricReport rep;
  int64_t correct = 0;
  std::vector<std::vector<int32_t>> gold_rows, pred_rows;
  for (const Batch& batch : eval_batches(data, batch_size, lk, lang)) {
    const std::vector<int32_t> preds = model.predict(body, hspec, head, batch);
    if (preds.size() != batch.targets.size()) fail(Errc::internal, "evaluate: prediction shape mismatch");
    for (size_t i = 0; i < batch.targets.size(); ++i) {
      const int32_t g = batch.targets[i];
      if (g < 0) continue;
      if (g >= classes) fail(Errc::config, "evaluate: label out of range");
      ++rep.examples;
      if (preds[i] == g) ++correct;
    }
    if (kind == TaskKind::tagging) {
      for (int64_t r = 0; r < batch.rows; ++r) {
        const auto* gp = batch.targets.data() + r * batch.cols;
        const auto* pp = preds.data() + r * batch.cols;
        gold_rows.emplace_back(gp, gp + batch.cols);
        pred_rows.emplace_back(pp, pp + batch.cols);
      }
    }
  }
  if (rep.examples == 0) fail(Errc::config, "evaluate: no labeled positions");
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.examples);
  if (kind == TaskKind::tagging) rep.span_f1 = span_f1(gold_rows, pred_rows, kCatFunction);
  return rep;
}

// ---------------------------------------------------------------- training ---

LanguageArtifact train_language_sft(const TrainableModel& model, const ParameterSnapshot& theta0,
                                    const Corpus& corpus, const Corpus& dev, const TrainConfig& cfg,
                                    const MaskStrategy& strategy, double budget, int64_t vocab,
                                    const std::string& tag, std::ostream* log) {
  if (corpus.empty()) fail(Errc::config, "language sft: empty corpus");
  MlmSource source(&corpus, cfg.batch_size, cfg.seed, cfg.mlm_mask_fraction, vocab, tag);
  const HeadSpec none{};

  DevScoreFn dev_fn;
  const DevScoreFn* dev_ptr = nullptr;
  if (!dev.empty() && cfg.checkpoint == CheckpointSelect::best_on_dev) {
    dev_fn = [&](const ParameterSnapshot& body, const ParameterSnapshot&) {
      return -mlm_dev_loss(model, body, dev, cfg.mlm_mask_fraction, vocab, cfg.batch_size, cfg.seed);
    };
    dev_ptr = &dev_fn;
  }

  LtSftResult res = lt_sft(model, none, source, theta0, cfg, strategy, budget, nullptr, dev_ptr, log);
  return LanguageArtifact{tag, std::move(res.diff), res.phase1_final_loss, res.phase2_final_loss};
}

TaskArtifact train_task_sft(const TrainableModel& model, const ParameterSnapshot& theta0,
                            const LanguageArtifact* source_lang, const Corpus& train, const Corpus& dev,
                            TaskKind kind, const TrainConfig& cfg, const MaskStrategy& strategy, double budget,
                            const std::string& source_tag, std::ostream* log) {
  if (train.empty()) fail(Errc::config, "task sft: empty training data");
  const HeadSpec hspec = head_for_task(kind);
  const LabelKind lk = label_kind_for_task(kind);

  ParameterSnapshot base =
      source_lang != nullptr ? apply_diffs(theta0, {&source_lang->diff}) : theta0;
  EpochShuffleSource source(&train, cfg.batch_size, cfg.seed, lk, source_tag);

  DevScoreFn dev_fn;
  const DevScoreFn* dev_ptr = nullptr;
  if (!dev.empty() && cfg.checkpoint == CheckpointSelect::best_on_dev) {
    dev_fn = [&](const ParameterSnapshot& body, const ParameterSnapshot& head) {
      return evaluate(model, body, hspec, head, dev, kind, cfg.batch_size, source_tag).accuracy;
    };
    dev_ptr = &dev_fn;
  }

  LtSftResult res = lt_sft(model, hspec, source, base, cfg, strategy, budget, nullptr, dev_ptr, log);

  TaskArtifact art;
  art.tag = task_kind_name(kind);
  art.kind = kind;
  art.hspec = hspec;
  if (source_lang != nullptr) art.sources.push_back(source_lang->tag);
  art.diff = std::move(res.diff);
  art.head = std::move(res.head);
  art.phase1_final_loss = res.phase1_final_loss;
  art.phase2_final_loss = res.phase2_final_loss;
  if (!dev.empty()) {
    std::vector<const SparseDiff*> parts{&art.diff};
    if (source_lang != nullptr) parts.push_back(&source_lang->diff);
    ParameterSnapshot composed = apply_diffs(theta0, parts);
    art.source_dev_metric = evaluate(model, composed, hspec, art.head, dev, kind, cfg.batch_size, source_tag).accuracy;
  }
  return art;
}

TaskArtifact train_task_sft_multi(const TrainableModel& model, const ParameterSnapshot& theta0,
                                  const std::vector<const LanguageArtifact*>& langs,
                                  const std::map<std::string, const Corpus*>& train_by_lang, TaskKind kind,
                                  const TrainConfig& cfg, const MaskStrategy& strategy, double budget,
                                  int64_t per_lang_cap, std::ostream* log) {
  if (langs.empty()) fail(Errc::config, "multi-source: no language artifacts");
  std::map<std::string, const SparseDiff*> overlay_by_tag;
  for (const LanguageArtifact* a : langs) {
    if (a == nullptr) fail(Errc::internal, "multi-source: null language artifact");
    if (!overlay_by_tag.emplace(a->tag, &a->diff).second)
      fail(Errc::config, "multi-source: duplicate language tag " + a->tag);
    if (train_by_lang.find(a->tag) == train_by_lang.end())
      fail(Errc::config, "multi-source: no training data for " + a->tag);
  }
  if (train_by_lang.size() != overlay_by_tag.size())
    fail(Errc::config, "multi-source: training data for an undeclared language");

  const HeadSpec hspec = head_for_task(kind);
  MultiSourceSchedule schedule(train_by_lang, cfg.batch_size, per_lang_cap, cfg.seed, label_kind_for_task(kind));
  OverlayFn overlay = [&](const Batch& batch) -> const SparseDiff* {
    auto it = overlay_by_tag.find(batch.lang);
    if (it == overlay_by_tag.end()) fail(Errc::internal, "multi-source: batch from unknown language " + batch.lang);
    return it->second;
  };

  LtSftResult res = lt_sft(model, hspec, schedule, theta0, cfg, strategy, budget, &overlay, nullptr, log);

  TaskArtifact art;
  art.tag = task_kind_name(kind);
  art.kind = kind;
  art.hspec = hspec;
  for (const auto& [tag, diff] : overlay_by_tag) art.sources.push_back(tag);
  art.diff = std::move(res.diff);
  art.head = std::move(res.head);
  art.phase1_final_loss = res.phase1_final_loss;
  art.phase2_final_loss = res.phase2_final_loss;
  return art;
}

ParameterSnapshot zero_shot_apply(const ParameterSnapshot& theta0, const TaskArtifact& task,
                                  const LanguageArtifact* target) {
  std::vector<const SparseDiff*> parts{&task.diff};
  if (target != nullptr) parts.push_back(&target->diff);
  return apply_diffs(theta0, parts);
}

}  // namespace ltsft
