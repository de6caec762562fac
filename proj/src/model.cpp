#include "ltsft/model.hpp"

#include <algorithm>
#include <cmath>

#include "ltsft/graph.hpp"

namespace ltsft {

void ModelSpec::validate() const {
  if (vocab < kFirstContentToken + 1 || vocab > (1 << 20)) fail(Errc::config, "model: bad vocab size");
  if (hidden <= 0 || heads <= 0 || hidden % heads != 0) fail(Errc::config, "model: hidden must divide by heads");
  if (layers <= 0 || layers > 64) fail(Errc::config, "model: bad layer count");
  if (ffn <= 0) fail(Errc::config, "model: bad ffn width");
  if (max_seq <= 0 || max_seq > 4096) fail(Errc::config, "model: bad max_seq");
}

const char* head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::none: return "none";
    case HeadKind::token_cls: return "token_cls";
    case HeadKind::seq_cls: return "seq_cls";
  }
  return "?";
}

HeadKind head_kind_from_name(const std::string& s) {
  if (s == "none") return HeadKind::none;
  if (s == "token_cls") return HeadKind::token_cls;
  if (s == "seq_cls") return HeadKind::seq_cls;
  fail(Errc::config, "unknown head kind: " + s);
}

Batch mlm_corrupt(const Batch& clean, double mask_fraction, uint64_t key, int64_t vocab) {
  if (mask_fraction < 0.0 || mask_fraction >= 1.0) fail(Errc::config, "mlm_corrupt: bad mask fraction");
  if (clean.label_kind != LabelKind::none) fail(Errc::config, "mlm_corrupt: batch already labeled");
  Batch out = clean;
  out.label_kind = LabelKind::mlm;
  out.targets.assign(static_cast<size_t>(clean.rows * clean.cols), -1);
  const uint64_t sel_key = derive_key(key, "sel");
  const uint64_t mode_key = derive_key(key, "mode");
  const uint64_t repl_key = derive_key(key, "repl");
  const int64_t content = vocab - kFirstContentToken;
  for (int64_t p = 0; p < clean.rows * clean.cols; ++p) {
    const size_t sp = static_cast<size_t>(p);
    if (!clean.attn[sp]) continue;
    if (element_unit(sel_key, static_cast<uint64_t>(p)) >= mask_fraction) continue;
    out.targets[sp] = clean.ids[sp];
    double r = element_unit(mode_key, static_cast<uint64_t>(p));
    if (r < 0.8) {
      out.ids[sp] = kMaskToken;
    } else if (r < 0.9) {
      out.ids[sp] = kFirstContentToken +
                    static_cast<int32_t>(element_hash(repl_key, static_cast<uint64_t>(p)) % static_cast<uint64_t>(content));
    }  // else: keep original id
  }
  return out;
}

// ------------------------------------------------------------------ layout ---

ParameterGroupTag MicroTransformer::tag_of(const std::string& name) {
  if (name == "embed.token" || name == "embed.pos") return ParameterGroupTag::input_embedding;
  if (name == "embed.output") return ParameterGroupTag::output_embedding;
  if (name.find(".ln") != std::string::npos || name.rfind("embed.ln", 0) == 0) return ParameterGroupTag::layer_norm;
  if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0) return ParameterGroupTag::bias;
  if (name.find(".attn.") != std::string::npos) return ParameterGroupTag::attention;
  if (name.find(".ffn.") != std::string::npos) return ParameterGroupTag::ffn;
  fail(Errc::internal, "untaggable parameter name: " + name);
}

MicroTransformer::MicroTransformer(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  const int64_t H = spec_.hidden, V = spec_.vocab, F = spec_.ffn, S = spec_.max_seq;
  std::vector<std::pair<std::string, std::vector<int64_t>>> recs;
  recs.emplace_back("embed.ln.bias", std::vector<int64_t>{H});
  recs.emplace_back("embed.ln.scale", std::vector<int64_t>{H});
  recs.emplace_back("embed.output", std::vector<int64_t>{V, H});
  recs.emplace_back("embed.pos", std::vector<int64_t>{S, H});
  recs.emplace_back("embed.token", std::vector<int64_t>{V, H});
  for (int64_t l = 0; l < spec_.layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    for (const char* nm : {"attn.key", "attn.out", "attn.query", "attn.value"}) {
      recs.emplace_back(p + nm + ".bias", std::vector<int64_t>{H});
      recs.emplace_back(p + nm + ".weight", std::vector<int64_t>{H, H});
    }
    recs.emplace_back(p + "ffn.in.bias", std::vector<int64_t>{F});
    recs.emplace_back(p + "ffn.in.weight", std::vector<int64_t>{H, F});
    recs.emplace_back(p + "ffn.out.bias", std::vector<int64_t>{H});
    recs.emplace_back(p + "ffn.out.weight", std::vector<int64_t>{F, H});
    recs.emplace_back(p + "ln1.bias", std::vector<int64_t>{H});
    recs.emplace_back(p + "ln1.scale", std::vector<int64_t>{H});
    recs.emplace_back(p + "ln2.bias", std::vector<int64_t>{H});
    recs.emplace_back(p + "ln2.scale", std::vector<int64_t>{H});
  }
  std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [name, shape] : recs) {
    layout_.names.push_back(name);
    layout_.shapes.push_back(shape);
    layout_.tags.push_back(tag_of(name));
  }
  layout_fp_ = layout_.fingerprint();
}

std::vector<std::pair<std::string, std::vector<int64_t>>> MicroTransformer::head_layout(const ModelSpec& spec,
                                                                                        const HeadSpec& hspec) {
  const int64_t H = spec.hidden;
  std::vector<std::pair<std::string, std::vector<int64_t>>> recs;
  switch (hspec.kind) {
    case HeadKind::none:
      break;
    case HeadKind::token_cls:
      if (hspec.classes < 2) fail(Errc::config, "token_cls head needs >= 2 classes");
      recs.emplace_back("head.bias", std::vector<int64_t>{hspec.classes});
      recs.emplace_back("head.weight", std::vector<int64_t>{H, hspec.classes});
      break;
    case HeadKind::seq_cls:
      if (hspec.classes < 2) fail(Errc::config, "seq_cls head needs >= 2 classes");
      recs.emplace_back("head.fc1.bias", std::vector<int64_t>{H});
      recs.emplace_back("head.fc1.weight", std::vector<int64_t>{H, H});
      recs.emplace_back("head.fc2.bias", std::vector<int64_t>{hspec.classes});
      recs.emplace_back("head.fc2.weight", std::vector<int64_t>{H, hspec.classes});
      break;
  }
  return recs;
}

namespace {

constexpr double kInitStd = 0.02;

bool is_weight_name(const std::string& name) {
  if (name == "embed.token" || name == "embed.pos" || name == "embed.output") return true;
  return name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

bool is_ln_scale(const std::string& name) {
  return name.find(".ln") != std::string::npos && name.size() > 6 && name.compare(name.size() - 6, 6, ".scale") == 0;
}

std::vector<TensorEntry> init_entries(const std::vector<std::pair<std::string, std::vector<int64_t>>>& recs,
                                      uint64_t seed) {
  std::vector<TensorEntry> entries;
  entries.reserve(recs.size());
  for (const auto& [name, shape] : recs) {
    TensorEntry e;
    e.name = name;
    e.shape = shape;
    e.values.assign(static_cast<size_t>(TensorT<float>::count(shape)), 0.0f);
    if (is_weight_name(name)) {
      Rng rng(derive_key(seed, "init", name));
      for (float& v : e.values) v = static_cast<float>(rng.next_normal() * kInitStd);
    } else if (is_ln_scale(name)) {
      std::fill(e.values.begin(), e.values.end(), 1.0f);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace

ParameterSnapshot MicroTransformer::init_params(uint64_t seed) const {
  std::vector<std::pair<std::string, std::vector<int64_t>>> recs;
  for (size_t i = 0; i < layout_.names.size(); ++i) recs.emplace_back(layout_.names[i], layout_.shapes[i]);
  return ParameterSnapshot::create(init_entries(recs, seed));
}

ParameterSnapshot MicroTransformer::init_head(const HeadSpec& hspec, uint64_t seed) const {
  return ParameterSnapshot::create(init_entries(head_layout(spec_, hspec), derive_key(seed, "head")));
}

// ----------------------------------------------------------------- forward ---

void MicroTransformer::check_body(const ParameterSnapshot& body) const {
  if (body.fingerprint() != layout_fp_) fail(Errc::fingerprint, "model: body snapshot does not match architecture");
}

void MicroTransformer::check_batch(const Batch& b) const {
  if (b.rows <= 0 || b.cols <= 0 || b.cols > spec_.max_seq) fail(Errc::format, "batch: bad geometry");
  const size_t n = static_cast<size_t>(b.rows * b.cols);
  if (b.ids.size() != n || b.attn.size() != n) fail(Errc::format, "batch: bad buffer sizes");
  for (size_t i = 0; i < n; ++i)
    if (b.ids[i] < 0 || b.ids[i] >= spec_.vocab) fail(Errc::format, "batch: token id out of range");
  switch (b.label_kind) {
    case LabelKind::none:
      break;
    case LabelKind::mlm:
    case LabelKind::token:
      if (b.targets.size() != n) fail(Errc::format, "batch: bad target size");
      break;
    case LabelKind::sequence:
      if (b.targets.size() != static_cast<size_t>(b.rows)) fail(Errc::format, "batch: bad target size");
      break;
  }
}

template <typename Real>
LossGradT<Real> MicroTransformer::loss_and_grad(const std::vector<TensorT<Real>>& body, const HeadSpec& hspec,
                                                const std::vector<TensorT<Real>>& head, const Batch& batch,
                                                const ForwardCtx& ctx, bool want_grads) const {
  check_batch(batch);
  if (body.size() != layout_.names.size()) fail(Errc::internal, "model: body tensor count mismatch");
  const auto hrecs = head_layout(spec_, hspec);
  if (head.size() != hrecs.size()) fail(Errc::internal, "model: head tensor count mismatch");

  Graph<Real> g;
  using Id = typename Graph<Real>::Id;
  std::vector<Id> body_ids(body.size());
  for (size_t i = 0; i < body.size(); ++i) body_ids[i] = g.leaf(body[i]);
  std::vector<Id> head_ids(head.size());
  for (size_t i = 0; i < head.size(); ++i) head_ids[i] = g.leaf(head[i]);

  auto pid = [&](const std::string& name) {
    for (size_t i = 0; i < layout_.names.size(); ++i)
      if (layout_.names[i] == name) return body_ids[i];
    fail(Errc::internal, "model: missing parameter " + name);
  };
  auto hid = [&](const std::string& name) {
    for (size_t i = 0; i < hrecs.size(); ++i)
      if (hrecs[i].first == name) return head_ids[i];
    fail(Errc::internal, "model: missing head parameter " + name);
  };

  const int64_t B = batch.rows, T = batch.cols;
  std::vector<int32_t> positions(static_cast<size_t>(B * T));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t) positions[static_cast<size_t>(b * T + t)] = static_cast<int32_t>(t);

  const double rate = ctx.train ? ctx.dropout : 0.0;
  auto drop_key = [&](const std::string& site) { return derive_key(ctx.seed, "drop", site, static_cast<uint64_t>(ctx.step)); };

  Id x = g.add(g.embedding(pid("embed.token"), batch.ids), g.embedding(pid("embed.pos"), positions));
  x = g.layer_norm(x, pid("embed.ln.scale"), pid("embed.ln.bias"));
  x = g.dropout(x, rate, drop_key("embed"));
  for (int64_t l = 0; l < spec_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Id q = g.add_rowvec(g.matmul(x, pid(p + "attn.query.weight")), pid(p + "attn.query.bias"));
    Id k = g.add_rowvec(g.matmul(x, pid(p + "attn.key.weight")), pid(p + "attn.key.bias"));
    Id v = g.add_rowvec(g.matmul(x, pid(p + "attn.value.weight")), pid(p + "attn.value.bias"));
    Id a = g.self_attention(q, k, v, B, T, spec_.heads, batch.attn);
    a = g.add_rowvec(g.matmul(a, pid(p + "attn.out.weight")), pid(p + "attn.out.bias"));
    a = g.dropout(a, rate, drop_key(p + "attn"));
    x = g.layer_norm(g.add(x, a), pid(p + "ln1.scale"), pid(p + "ln1.bias"));
    Id f = g.gelu(g.add_rowvec(g.matmul(x, pid(p + "ffn.in.weight")), pid(p + "ffn.in.bias")));
    f = g.add_rowvec(g.matmul(f, pid(p + "ffn.out.weight")), pid(p + "ffn.out.bias"));
    f = g.dropout(f, rate, drop_key(p + "ffn"));
    x = g.layer_norm(g.add(x, f), pid(p + "ln2.scale"), pid(p + "ln2.bias"));
  }

  Id loss;
  switch (batch.label_kind) {
    case LabelKind::mlm: {
      if (hspec.kind != HeadKind::none) fail(Errc::config, "mlm loss uses the parameterless projection head");
      // Project only positions that carry a prediction target.
      std::vector<int64_t> sel;
      std::vector<int32_t> sel_targets;
      for (int64_t p = 0; p < B * T; ++p)
        if (batch.targets[static_cast<size_t>(p)] >= 0) {
          sel.push_back(p);
          sel_targets.push_back(batch.targets[static_cast<size_t>(p)]);
        }
      if (sel.empty()) {
        // The corruption step can legitimately select no position; an empty
        // mean is zero loss with zero gradient everywhere, same as
        // softmax_ce_mean over an all-ignored target list.
        LossGradT<Real> empty;
        if (want_grads) {
          empty.body_grads.reserve(body.size());
          for (const auto& t : body) empty.body_grads.emplace_back(t.v.size(), Real(0));
          empty.head_grads.reserve(head.size());
          for (const auto& t : head) empty.head_grads.emplace_back(t.v.size(), Real(0));
        }
        return empty;
      }
      Id xs = g.gather_rows(x, sel);
      Id logits = g.matmul_nt(xs, pid("embed.output"));
      loss = g.softmax_ce_mean(logits, sel_targets);
      break;
    }
    case LabelKind::token: {
      if (hspec.kind != HeadKind::token_cls) fail(Errc::config, "token labels need a token_cls head");
      Id logits = g.add_rowvec(g.matmul(x, hid("head.weight")), hid("head.bias"));
      loss = g.softmax_ce_mean(logits, batch.targets);
      break;
    }
    case LabelKind::sequence: {
      if (hspec.kind != HeadKind::seq_cls) fail(Errc::config, "sequence labels need a seq_cls head");
      Id pooled = g.masked_mean(x, batch.attn, B, T);
      Id h1 = g.gelu(g.add_rowvec(g.matmul(pooled, hid("head.fc1.weight")), hid("head.fc1.bias")));
      Id logits = g.add_rowvec(g.matmul(h1, hid("head.fc2.weight")), hid("head.fc2.bias"));
      loss = g.softmax_ce_mean(logits, batch.targets);
      break;
    }
    default:
      fail(Errc::config, "batch carries no training labels");
  }

  LossGradT<Real> out;
  out.loss = static_cast<double>(g.val(loss).v[0]);
  if (want_grads) {
    g.backward(loss);
    out.body_grads.reserve(body.size());
    for (size_t i = 0; i < body.size(); ++i) out.body_grads.push_back(g.grad(body_ids[i]).v);
    out.head_grads.reserve(head.size());
    for (size_t i = 0; i < head.size(); ++i) out.head_grads.push_back(g.grad(head_ids[i]).v);
  }
  return out;
}

template LossGradT<float> MicroTransformer::loss_and_grad<float>(const std::vector<TensorT<float>>&, const HeadSpec&,
                                                                 const std::vector<TensorT<float>>&, const Batch&,
                                                                 const ForwardCtx&, bool) const;
template LossGradT<double> MicroTransformer::loss_and_grad<double>(const std::vector<TensorT<double>>&,
                                                                   const HeadSpec&, const std::vector<TensorT<double>>&,
                                                                   const Batch&, const ForwardCtx&, bool) const;

namespace {

template <typename Real>
std::vector<TensorT<Real>> snapshot_tensors(const ParameterSnapshot& s) {
  std::vector<TensorT<Real>> out;
  out.reserve(s.tensor_count());
  for (size_t i = 0; i < s.tensor_count(); ++i) {
    const TensorEntry& e = s.entry(i);
    TensorT<Real> t(e.shape);
    for (size_t j = 0; j < e.values.size(); ++j) t.v[j] = static_cast<Real>(e.values[j]);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

LossGrad MicroTransformer::forward_loss(const ParameterSnapshot& body, const HeadSpec& hspec,
                                        const ParameterSnapshot& head, const Batch& batch,
                                        const ForwardCtx& ctx) const {
  check_body(body);
  return loss_and_grad<float>(snapshot_tensors<float>(body), hspec, snapshot_tensors<float>(head), batch, ctx, true);
}

double MicroTransformer::eval_loss(const ParameterSnapshot& body, const HeadSpec& hspec, const ParameterSnapshot& head,
                                   const Batch& batch) const {
  check_body(body);
  return loss_and_grad<float>(snapshot_tensors<float>(body), hspec, snapshot_tensors<float>(head), batch,
                              ForwardCtx{}, false)
      .loss;
}

std::vector<int32_t> MicroTransformer::predict(const ParameterSnapshot& body, const HeadSpec& hspec,
                                               const ParameterSnapshot& head, const Batch& batch) const {
  check_body(body);
  check_batch(batch);
  // Rebuild the encoder graph without a loss node and read logits off it.
  auto bt = snapshot_tensors<float>(body);
  auto ht = snapshot_tensors<float>(head);

  Graph<float> g;
  using Id = Graph<float>::Id;
  std::vector<Id> body_ids(bt.size());
  for (size_t i = 0; i < bt.size(); ++i) body_ids[i] = g.leaf(bt[i]);
  const auto hrecs = head_layout(spec_, hspec);
  if (ht.size() != hrecs.size()) fail(Errc::internal, "model: head tensor count mismatch");
  std::vector<Id> head_ids(ht.size());
  for (size_t i = 0; i < ht.size(); ++i) head_ids[i] = g.leaf(ht[i]);
  auto pid = [&](const std::string& name) {
    for (size_t i = 0; i < layout_.names.size(); ++i)
      if (layout_.names[i] == name) return body_ids[i];
    fail(Errc::internal, "model: missing parameter " + name);
  };
  auto hid = [&](const std::string& name) {
    for (size_t i = 0; i < hrecs.size(); ++i)
      if (hrecs[i].first == name) return head_ids[i];
    fail(Errc::internal, "model: missing head parameter " + name);
  };

  const int64_t B = batch.rows, T = batch.cols;
  std::vector<int32_t> positions(static_cast<size_t>(B * T));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t) positions[static_cast<size_t>(b * T + t)] = static_cast<int32_t>(t);

  Id x = g.add(g.embedding(pid("embed.token"), batch.ids), g.embedding(pid("embed.pos"), positions));
  x = g.layer_norm(x, pid("embed.ln.scale"), pid("embed.ln.bias"));
  for (int64_t l = 0; l < spec_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Id q = g.add_rowvec(g.matmul(x, pid(p + "attn.query.weight")), pid(p + "attn.query.bias"));
    Id k = g.add_rowvec(g.matmul(x, pid(p + "attn.key.weight")), pid(p + "attn.key.bias"));
    Id v = g.add_rowvec(g.matmul(x, pid(p + "attn.value.weight")), pid(p + "attn.value.bias"));
    Id a = g.self_attention(q, k, v, B, T, spec_.heads, batch.attn);
    a = g.add_rowvec(g.matmul(a, pid(p + "attn.out.weight")), pid(p + "attn.out.bias"));
    x = g.layer_norm(g.add(x, a), pid(p + "ln1.scale"), pid(p + "ln1.bias"));
    Id f = g.gelu(g.add_rowvec(g.matmul(x, pid(p + "ffn.in.weight")), pid(p + "ffn.in.bias")));
    f = g.add_rowvec(g.matmul(f, pid(p + "ffn.out.weight")), pid(p + "ffn.out.bias"));
    x = g.layer_norm(g.add(x, f), pid(p + "ln2.scale"), pid(p + "ln2.bias"));
  }

  std::vector<int32_t> out;
  auto argmax_rows = [&](const TensorT<float>& logits, std::vector<int32_t>& dst) {
    const int64_t m = logits.shape[0], n = logits.shape[1];
    dst.resize(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
      int32_t best = 0;
      float bv = logits.at(i, 0);
      for (int64_t j = 1; j < n; ++j)
        if (logits.at(i, j) > bv) {
          bv = logits.at(i, j);
          best = static_cast<int32_t>(j);
        }
      dst[static_cast<size_t>(i)] = best;
    }
  };

  switch (hspec.kind) {
    case HeadKind::none: {
      Id logits = g.matmul_nt(x, pid("embed.output"));
      argmax_rows(g.val(logits), out);
      for (int64_t p = 0; p < B * T; ++p)
        if (!batch.attn[static_cast<size_t>(p)]) out[static_cast<size_t>(p)] = -1;
      break;
    }
    case HeadKind::token_cls: {
      Id logits = g.add_rowvec(g.matmul(x, hid("head.weight")), hid("head.bias"));
      argmax_rows(g.val(logits), out);
      for (int64_t p = 0; p < B * T; ++p)
        if (!batch.attn[static_cast<size_t>(p)]) out[static_cast<size_t>(p)] = -1;
      break;
    }
    case HeadKind::seq_cls: {
      Id pooled = g.masked_mean(x, batch.attn, B, T);
      Id h1 = g.gelu(g.add_rowvec(g.matmul(pooled, hid("head.fc1.weight")), hid("head.fc1.bias")));
      Id logits = g.add_rowvec(g.matmul(h1, hid("head.fc2.weight")), hid("head.fc2.bias"));
      argmax_rows(g.val(logits), out);
      break;
    }
  }
  return out;
}

}  // namespace ltsft
