// Two-phase sparse fine-tuning engine: full fine-tune, select a budgeted
// mask over the most-changed parameters, rewind, retrain with the update
// restricted to the mask, and emit the sparse difference vector.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ltsft/diff.hpp"
#include "ltsft/model.hpp"

namespace ltsft {

enum class MaskKind : uint8_t { lottery_ticket_topk, random_k, bias_only };

const char* mask_kind_name(MaskKind k);
MaskKind mask_kind_from_name(const std::string& s);

struct MaskStrategy {
  MaskKind kind = MaskKind::lottery_ticket_topk;
  GroupPolicy policy = GroupPolicy::standard();
  uint64_t seed = 0;  // random_k sampling seed
};

enum class OptimizerKind : uint8_t { adamw, sgd };
enum class CheckpointSelect : uint8_t { final_step, best_on_dev };

struct TrainConfig {
  int64_t phase1_steps = 30;
  int64_t phase2_steps = 100;
  int64_t batch_size = 8;
  double lr0 = 5e-4;        // linearly decayed to 0 across each phase
  double lambda_l1 = 0.0;   // L1 anchor toward the phase start point
  double dropout = 0.1;
  double mlm_mask_fraction = 0.15;
  uint64_t seed = 1;
  uint64_t head_seed = 1;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  CheckpointSelect checkpoint = CheckpointSelect::final_step;
  int64_t eval_every = 0;  // 0 = only at the end (when a dev scorer is given)

  void validate() const;
};

// Resolve a count-or-fraction budget: values <= 1.0 are fractions of the
// maskable population (1.0 = all of it), values > 1.0 are absolute counts.
int64_t resolve_budget(double budget, int64_t maskable);

// L1 anchor J(theta) = (lambda/N) * sum_i |theta_i - anchor_i| with
// subgradient sign(0) := 0. Returns the penalty and per-tensor gradients.
std::pair<double, std::vector<std::vector<float>>> l1_anchor(const ParameterSnapshot& theta,
                                                             const ParameterSnapshot& anchor, double lambda);

// Top-K |theta1 - theta0| selection (ties broken toward the smaller flat
// index), uniform random-K, or every bias parameter. Only group-policy
// maskable tensors participate; K must not exceed the maskable population.
// bias_only ignores K and takes the whole bias group.
Mask select_mask(const ParameterSnapshot& theta0, const ParameterSnapshot& theta1, const ParameterLayout& layout,
                 const MaskStrategy& strategy, int64_t k);

// Per-tensor trainable coordinate sets.
class ActiveSet {
 public:
  enum class Mode : uint8_t { none, all, list };

  static ActiveSet from_policy(const ParameterLayout& layout, const GroupPolicy& policy);
  static ActiveSet from_mask(const Mask& mask);

  size_t tensor_count() const { return modes_.size(); }
  Mode mode(size_t t) const { return modes_[t]; }
  const std::vector<uint32_t>& list(size_t t) const { return lists_[t]; }
  int64_t active_count(const ParameterLayout& layout) const;

 private:
  std::vector<Mode> modes_;
  std::vector<std::vector<uint32_t>> lists_;
};

// Deterministic batch provider: at(step) must be a pure function of step.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual Batch at(int64_t step) const = 0;
};

// Optional per-batch overlay: a sparse diff temporarily added to the working
// parameters for the forward/backward pass (multi-source task training).
using OverlayFn = std::function<const SparseDiff*(const Batch&)>;

// Dev scorer for best-on-dev checkpointing; higher is better.
using DevScoreFn = std::function<double(const ParameterSnapshot& body, const ParameterSnapshot& head)>;

struct PhaseResult {
  ParameterSnapshot body;
  ParameterSnapshot head;
  double final_loss = 0.0;
  int64_t chosen_step = 0;
  std::vector<std::pair<int64_t, double>> dev_curve;
};

// One training phase: fresh optimizer state, fresh head (head_seed), learning
// rate lr0*(1 - t/steps), update restricted to `active` body coordinates
// (the head always trains fully). Throws Errc::numeric on divergence.
PhaseResult train_phase(const TrainableModel& model, const HeadSpec& hspec, const ParameterSnapshot& start,
                        const ActiveSet& active, const BatchSource& data, const TrainConfig& cfg, int64_t steps,
                        const OverlayFn* overlay = nullptr, const DevScoreFn* dev = nullptr,
                        std::ostream* log = nullptr);

// Phase 1: full fine-tuning of all policy-maskable parameters (plus head).
PhaseResult phase1_full_finetune(const TrainableModel& model, const HeadSpec& hspec, const ParameterSnapshot& theta0,
                                 const GroupPolicy& policy, const BatchSource& data, const TrainConfig& cfg,
                                 const OverlayFn* overlay = nullptr, const DevScoreFn* dev = nullptr,
                                 std::ostream* log = nullptr);

// Phase 2: rewind to theta0 and retrain only masked coordinates.
// Returns the sparse difference of the result against theta0.
struct Phase2Result {
  SparseDiff diff;
  ParameterSnapshot head;
  double final_loss = 0.0;
  PhaseResult phase;
};
Phase2Result phase2_masked_finetune(const TrainableModel& model, const HeadSpec& hspec,
                                    const ParameterSnapshot& theta0, const Mask& mask, const BatchSource& data,
                                    const TrainConfig& cfg, const OverlayFn* overlay = nullptr,
                                    const DevScoreFn* dev = nullptr, std::ostream* log = nullptr);

struct LtSftResult {
  SparseDiff diff;  // carries the mask
  Mask mask;
  ParameterSnapshot head;
  double phase1_final_loss = 0.0;
  double phase2_final_loss = 0.0;
};

// The full two-phase procedure relative to theta_base. The same batch
// source, seed, and schedule shape drive both phases.
LtSftResult lt_sft(const TrainableModel& model, const HeadSpec& hspec, const BatchSource& data,
                   const ParameterSnapshot& theta_base, const TrainConfig& cfg, const MaskStrategy& strategy,
                   double budget, const OverlayFn* overlay = nullptr, const DevScoreFn* dev = nullptr,
                   std::ostream* log = nullptr);

}  // namespace ltsft
