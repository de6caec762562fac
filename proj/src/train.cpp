#include "ltsft/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace ltsft {

const char* mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::lottery_ticket_topk: return "lt";
    case MaskKind::random_k: return "rand";
    case MaskKind::bias_only: return "bitfit";
  }
  return "?";
}

MaskKind mask_kind_from_name(const std::string& s) {
  if (s == "lt") return MaskKind::lottery_ticket_topk;
  if (s == "rand") return MaskKind::random_k;
  if (s == "bitfit") return MaskKind::bias_only;
  fail(Errc::config, "unknown mask strategy: " + s);
}

void TrainConfig::validate() const {
  if (phase1_steps < 0 || phase2_steps < 0) fail(Errc::config, "train: negative step count");
  if (batch_size <= 0) fail(Errc::config, "train: batch size must be positive");
  if (lr0 <= 0.0 || !std::isfinite(lr0)) fail(Errc::config, "train: bad learning rate");
  if (lambda_l1 < 0.0) fail(Errc::config, "train: negative l1 strength");
  if (dropout < 0.0 || dropout >= 1.0) fail(Errc::config, "train: bad dropout");
  if (mlm_mask_fraction < 0.0 || mlm_mask_fraction >= 1.0) fail(Errc::config, "train: bad mask fraction");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) fail(Errc::config, "train: bad betas");
  if (adam_eps <= 0.0) fail(Errc::config, "train: bad epsilon");
  if (weight_decay < 0.0) fail(Errc::config, "train: negative weight decay");
  if (eval_every < 0) fail(Errc::config, "train: negative eval interval");
}

int64_t resolve_budget(double budget, int64_t maskable) {
  if (!std::isfinite(budget) || budget <= 0.0) fail(Errc::config, "budget must be positive");
  int64_t k = budget <= 1.0 ? static_cast<int64_t>(std::llround(budget * static_cast<double>(maskable)))
                            : static_cast<int64_t>(std::llround(budget));
  if (k <= 0) fail(Errc::config, "budget resolves to zero parameters");
  if (k > maskable) fail(Errc::config, "budget exceeds maskable parameter count");
  return k;
}

std::pair<double, std::vector<std::vector<float>>> l1_anchor(const ParameterSnapshot& theta,
                                                             const ParameterSnapshot& anchor, double lambda) {
  if (!theta.same_layout_as(anchor)) fail(Errc::fingerprint, "l1_anchor: snapshots differ in architecture");
  if (lambda < 0.0) fail(Errc::config, "l1_anchor: negative lambda");
  const double coeff = lambda / static_cast<double>(theta.total_params());
  double penalty = 0.0;
  std::vector<std::vector<float>> grads;
  grads.reserve(theta.tensor_count());
  for (size_t t = 0; t < theta.tensor_count(); ++t) {
    const auto& tv = theta.entry(t).values;
    const auto& av = anchor.entry(t).values;
    std::vector<float> g(tv.size(), 0.0f);
    for (size_t i = 0; i < tv.size(); ++i) {
      double d = static_cast<double>(tv[i]) - static_cast<double>(av[i]);
      penalty += std::abs(d);
      g[i] = d > 0.0 ? static_cast<float>(coeff) : (d < 0.0 ? static_cast<float>(-coeff) : 0.0f);
    }
    grads.push_back(std::move(g));
  }
  return {coeff * penalty, std::move(grads)};
}

// -------------------------------------------------------------- selection ---

namespace {

struct FlatCoord {
  uint32_t tensor;
  uint32_t index;
};

std::vector<FlatCoord> maskable_coords(const ParameterLayout& layout, const GroupPolicy& policy) {
  std::vector<FlatCoord> coords;
  for (size_t t = 0; t < layout.tensor_count(); ++t) {
    if (!policy.maskable(layout.tags[t])) continue;
    const int64_t n = TensorT<float>::count(layout.shapes[t]);
    for (int64_t i = 0; i < n; ++i) coords.push_back({static_cast<uint32_t>(t), static_cast<uint32_t>(i)});
  }
  return coords;
}

Mask mask_from_coords(const ParameterLayout& layout, const std::vector<FlatCoord>& picked) {
  std::vector<std::vector<uint32_t>> idx(layout.tensor_count());
  for (const FlatCoord& c : picked) idx[c.tensor].push_back(c.index);
  std::vector<int64_t> sizes;
  sizes.reserve(layout.tensor_count());
  for (const auto& s : layout.shapes) sizes.push_back(TensorT<float>::count(s));
  for (auto& v : idx) std::sort(v.begin(), v.end());
  return Mask::create(layout.fingerprint(), sizes, std::move(idx));
}

}  // namespace

Mask select_mask(const ParameterSnapshot& theta0, const ParameterSnapshot& theta1, const ParameterLayout& layout,
                 const MaskStrategy& strategy, int64_t k) {
  if (theta0.fingerprint() != layout.fingerprint() || !theta0.same_layout_as(theta1))
    fail(Errc::fingerprint, "select_mask: snapshots do not match the layout");

  if (strategy.kind == MaskKind::bias_only) {
    GroupPolicy p = strategy.policy;
    std::vector<FlatCoord> coords;
    for (size_t t = 0; t < layout.tensor_count(); ++t) {
      if (layout.tags[t] != ParameterGroupTag::bias || !p.maskable(layout.tags[t])) continue;
      const int64_t n = TensorT<float>::count(layout.shapes[t]);
      for (int64_t i = 0; i < n; ++i) coords.push_back({static_cast<uint32_t>(t), static_cast<uint32_t>(i)});
    }
    if (coords.empty()) fail(Errc::config, "select_mask: no bias parameters available");
    return mask_from_coords(layout, coords);
  }

  std::vector<FlatCoord> coords = maskable_coords(layout, strategy.policy);
  const int64_t m = static_cast<int64_t>(coords.size());
  if (k <= 0) fail(Errc::config, "select_mask: budget must be positive");
  if (k > m) fail(Errc::config, "select_mask: budget exceeds maskable parameter count");

  if (strategy.kind == MaskKind::random_k) {
    Rng rng(derive_key(strategy.seed, "random-k"));
    // Partial Fisher-Yates: the first k slots end up a uniform sample.
    for (int64_t i = 0; i < k; ++i) {
      int64_t j = i + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(m - i)));
      std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
    }
    coords.resize(static_cast<size_t>(k));
    return mask_from_coords(layout, coords);
  }

  // lottery_ticket_topk: rank by |theta1 - theta0| descending, ties toward
  // the smaller flat position (coords is already in flat order).
  std::vector<double> score(coords.size());
  for (size_t c = 0; c < coords.size(); ++c) {
    const auto& e0 = theta0.entry(coords[c].tensor).values;
    const auto& e1 = theta1.entry(coords[c].tensor).values;
    score[c] = std::abs(static_cast<double>(e1[coords[c].index]) - static_cast<double>(e0[coords[c].index]));
  }
  std::vector<uint64_t> order(coords.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::nth_element(order.begin(), order.begin() + static_cast<int64_t>(k), order.end(),
                   [&](uint64_t a, uint64_t b) { return score[a] > score[b] || (score[a] == score[b] && a < b); });
  order.resize(static_cast<size_t>(k));
  std::vector<FlatCoord> picked;
  picked.reserve(order.size());
  for (uint64_t i : order) picked.push_back(coords[i]);
  return mask_from_coords(layout, picked);
}

// -------------------------------------------------------------- active set ---

ActiveSet ActiveSet::from_policy(const ParameterLayout& layout, const GroupPolicy& policy) {
  ActiveSet a;
  a.modes_.resize(layout.tensor_count());
  a.lists_.resize(layout.tensor_count());
  for (size_t t = 0; t < layout.tensor_count(); ++t)
    a.modes_[t] = policy.maskable(layout.tags[t]) ? Mode::all : Mode::none;
  return a;
}

ActiveSet ActiveSet::from_mask(const Mask& mask) {
  ActiveSet a;
  a.modes_.resize(mask.tensor_count());
  a.lists_.resize(mask.tensor_count());
  for (size_t t = 0; t < mask.tensor_count(); ++t) {
    if (mask.indices(t).empty()) {
      a.modes_[t] = Mode::none;
    } else {
      a.modes_[t] = Mode::list;
      a.lists_[t] = mask.indices(t);
    }
  }
  return a;
}

int64_t ActiveSet::active_count(const ParameterLayout& layout) const {
  int64_t n = 0;
  for (size_t t = 0; t < modes_.size(); ++t) {
    if (modes_[t] == Mode::all) n += TensorT<float>::count(layout.shapes[t]);
    else if (modes_[t] == Mode::list) n += static_cast<int64_t>(lists_[t].size());
  }
  return n;
}

// --------------------------------------------------------------- optimizer ---

namespace {

// AdamW (decoupled weight decay) or bare SGD over explicit coordinate sets.
// Frozen coordinates are skipped entirely: no moment state, no decay.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const ParameterSnapshot& params) : cfg_(cfg) {
    m_.resize(params.tensor_count());
    v_.resize(params.tensor_count());
    for (size_t t = 0; t < params.tensor_count(); ++t) {
      m_[t].assign(params.entry(t).values.size(), 0.0f);
      v_[t].assign(params.entry(t).values.size(), 0.0f);
    }
  }

  void begin_step() { ++step_; }

  // grads may be empty for tensors with no active coordinates.
  void update_tensor(size_t t, ActiveSet::Mode mode, const std::vector<uint32_t>& list, std::vector<float>& p,
                     const std::vector<float>& g, double lr, const std::vector<float>* l1g) {
    if (mode == ActiveSet::Mode::none) return;
    if (mode == ActiveSet::Mode::all) {
      for (uint32_t i = 0; i < p.size(); ++i) update_coord(t, i, p, g, lr, l1g);
    } else {
      for (uint32_t i : list) update_coord(t, i, p, g, lr, l1g);
    }
  }

 private:
  void update_coord(size_t t, uint32_t i, std::vector<float>& p, const std::vector<float>& g, double lr,
                    const std::vector<float>* l1g) {
    double grad = static_cast<double>(g[i]);
    if (l1g != nullptr) grad += static_cast<double>((*l1g)[i]);
    double pv = static_cast<double>(p[i]);
    double upd;
    if (cfg_.optimizer == OptimizerKind::sgd) {
      upd = lr * grad;
    } else {
      double m = cfg_.beta1 * static_cast<double>(m_[t][i]) + (1.0 - cfg_.beta1) * grad;
      double v = cfg_.beta2 * static_cast<double>(v_[t][i]) + (1.0 - cfg_.beta2) * grad * grad;
      m_[t][i] = static_cast<float>(m);
      v_[t][i] = static_cast<float>(v);
      double mhat = m / (1.0 - std::pow(cfg_.beta1, static_cast<double>(step_)));
      double vhat = v / (1.0 - std::pow(cfg_.beta2, static_cast<double>(step_)));
      upd = lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) + cfg_.weight_decay * pv);
    }
    p[i] = static_cast<float>(pv - upd);
  }

  const TrainConfig& cfg_;
  std::vector<std::vector<float>> m_, v_;
  int64_t step_ = 0;
};

}  // namespace

// ------------------------------------------------------------ train phases ---

PhaseResult train_phase(const TrainableModel& model, const HeadSpec& hspec, const ParameterSnapshot& start,
                        const ActiveSet& active, const BatchSource& data, const TrainConfig& cfg, int64_t steps,
                        const OverlayFn* overlay, const DevScoreFn* dev, std::ostream* log) {
  cfg.validate();
  if (start.fingerprint() != model.fingerprint()) fail(Errc::fingerprint, "train: snapshot does not match model");
  if (active.tensor_count() != start.tensor_count()) fail(Errc::internal, "train: active set misaligned");

  PhaseResult res;
  res.body = start;
  res.head = model.init_head(hspec, cfg.head_seed);
  const ParameterSnapshot anchor = start;  // L1 anchor is the phase start point

  Optimizer opt_body(cfg, res.body);
  Optimizer opt_head(cfg, res.head);
  const double coeff = cfg.lambda_l1 / static_cast<double>(std::max<int64_t>(1, res.body.total_params()));

  double best_score = -1e300;
  int64_t best_step = -1;
  ParameterSnapshot best_body, best_head;
  auto run_dev = [&](int64_t at_step) {
    if (dev == nullptr) return;
    double score = (*dev)(res.body, res.head);
    res.dev_curve.emplace_back(at_step, score);
    if (score > best_score) {
      best_score = score;
      best_step = at_step;
      best_body = res.body;
      best_head = res.head;
    }
  };

  for (int64_t t = 0; t < steps; ++t) {
    const double lr = cfg.lr0 * (1.0 - static_cast<double>(t) / static_cast<double>(steps));
    Batch batch = data.at(t);
    const SparseDiff* ov = overlay != nullptr ? (*overlay)(batch) : nullptr;
    ForwardCtx ctx{cfg.seed, t, true, cfg.dropout};
    LossGrad lg;
    if (ov != nullptr) {
      ParameterSnapshot eff = apply_diffs(res.body, {ov});
      lg = model.forward_loss(eff, hspec, res.head, batch, ctx);
    } else {
      lg = model.forward_loss(res.body, hspec, res.head, batch, ctx);
    }
    if (!std::isfinite(lg.loss)) fail(Errc::numeric, "training diverged at step " + std::to_string(t));
    res.final_loss = lg.loss;

    opt_body.begin_step();
    opt_head.begin_step();
    std::vector<float> l1g;
    for (size_t ti = 0; ti < res.body.tensor_count(); ++ti) {
      auto mode = active.mode(ti);
      if (mode == ActiveSet::Mode::none) continue;
      const std::vector<float>* l1p = nullptr;
      if (cfg.lambda_l1 > 0.0) {
        const auto& tv = res.body.entry(ti).values;
        const auto& av = anchor.entry(ti).values;
        l1g.assign(tv.size(), 0.0f);
        for (size_t i = 0; i < tv.size(); ++i) {
          double d = static_cast<double>(tv[i]) - static_cast<double>(av[i]);
          l1g[i] = d > 0.0 ? static_cast<float>(coeff) : (d < 0.0 ? static_cast<float>(-coeff) : 0.0f);
        }
        l1p = &l1g;
      }
      opt_body.update_tensor(ti, mode, active.list(ti), res.body.entry_mut(ti).values, lg.body_grads[ti], lr, l1p);
    }
    for (size_t ti = 0; ti < res.head.tensor_count(); ++ti) {
      static const std::vector<uint32_t> no_list;
      opt_head.update_tensor(ti, ActiveSet::Mode::all, no_list, res.head.entry_mut(ti).values, lg.head_grads[ti], lr,
                             nullptr);
    }

    if (log != nullptr && (t == 0 || (t + 1) % 50 == 0 || t + 1 == steps)) {
      char line[128];
      std::snprintf(line, sizeof line, "step %6lld/%lld loss %.5f lr %.3g", static_cast<long long>(t + 1),
                    static_cast<long long>(steps), lg.loss, lr);
      (*log) << line << '\n';
    }
    if (dev != nullptr && cfg.eval_every > 0 && (t + 1) % cfg.eval_every == 0 && t + 1 != steps) run_dev(t + 1);
  }
  res.chosen_step = steps;
  run_dev(steps);

  if (cfg.checkpoint == CheckpointSelect::best_on_dev && best_step >= 0) {
    res.body = std::move(best_body);
    res.head = std::move(best_head);
    res.chosen_step = best_step;
  }
  return res;
}

PhaseResult phase1_full_finetune(const TrainableModel& model, const HeadSpec& hspec, const ParameterSnapshot& theta0,
                                 const GroupPolicy& policy, const BatchSource& data, const TrainConfig& cfg,
                                 const OverlayFn* overlay, const DevScoreFn* dev, std::ostream* log) {
  return train_phase(model, hspec, theta0, ActiveSet::from_policy(model.layout(), policy), data, cfg,
                     cfg.phase1_steps, overlay, dev, log);
}

Phase2Result phase2_masked_finetune(const TrainableModel& model, const HeadSpec& hspec,
                                    const ParameterSnapshot& theta0, const Mask& mask, const BatchSource& data,
                                    const TrainConfig& cfg, const OverlayFn* overlay, const DevScoreFn* dev,
                                    std::ostream* log) {
  if (mask.fingerprint() != theta0.fingerprint()) fail(Errc::fingerprint, "phase2: mask does not match snapshot");
  PhaseResult pr = train_phase(model, hspec, theta0, ActiveSet::from_mask(mask), data, cfg, cfg.phase2_steps, overlay,
                               dev, log);
  Phase2Result out{extract_diff(pr.body, theta0), std::move(pr.head), pr.final_loss, {}};
  out.phase.body = std::move(pr.body);
  out.phase.final_loss = pr.final_loss;
  out.phase.chosen_step = pr.chosen_step;
  out.phase.dev_curve = std::move(pr.dev_curve);
  return out;
}

LtSftResult lt_sft(const TrainableModel& model, const HeadSpec& hspec, const BatchSource& data,
                   const ParameterSnapshot& theta_base, const TrainConfig& cfg, const MaskStrategy& strategy,
                   double budget, const OverlayFn* overlay, const DevScoreFn* dev, std::ostream* log) {
  const ParameterLayout& layout = model.layout();
  ActiveSet full = ActiveSet::from_policy(layout, strategy.policy);
  const int64_t maskable = full.active_count(layout);
  if (maskable == 0) fail(Errc::config, "lt_sft: policy leaves nothing trainable");
  int64_t k = strategy.kind == MaskKind::bias_only ? 0 : resolve_budget(budget, maskable);

  if (log != nullptr) (*log) << "phase 1: full fine-tune (" << cfg.phase1_steps << " steps)\n";
  PhaseResult p1 = train_phase(model, hspec, theta_base, full, data, cfg, cfg.phase1_steps, overlay, nullptr, log);
  Mask mask = select_mask(theta_base, p1.body, layout, strategy, k);
  if (log != nullptr)
    (*log) << "phase 2: masked fine-tune of " << mask.popcount() << "/" << maskable << " parameters ("
           << cfg.phase2_steps << " steps)\n";
  Phase2Result p2 = phase2_masked_finetune(model, hspec, theta_base, mask, data, cfg, overlay, dev, log);
  p2.diff.attach_mask(mask);

  LtSftResult res;
  res.diff = std::move(p2.diff);
  res.mask = std::move(mask);
  res.head = std::move(p2.head);
  res.phase1_final_loss = p1.final_loss;
  res.phase2_final_loss = p2.final_loss;
  return res;
}

}  // namespace ltsft
