// Reference model: a micro transformer encoder small enough for exhaustive
// desk-scale experiments, exposing forward loss + exact gradients through the
// abstract TrainableModel interface.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ltsft/snapshot.hpp"
#include "ltsft/tensor.hpp"

namespace ltsft {

struct ModelSpec {
  int64_t vocab = 512;
  int64_t hidden = 64;
  int64_t layers = 2;
  int64_t heads = 4;
  int64_t ffn = 128;
  int64_t max_seq = 32;

  void validate() const;
};

// Reserved token ids.
inline constexpr int32_t kPadToken = 0;
inline constexpr int32_t kMaskToken = 1;
inline constexpr int32_t kFirstContentToken = 2;

enum class HeadKind : uint8_t { none, token_cls, seq_cls };

struct HeadSpec {
  HeadKind kind = HeadKind::none;
  int32_t classes = 0;  // ignored for none
};

const char* head_kind_name(HeadKind k);
HeadKind head_kind_from_name(const std::string& s);

enum class LabelKind : uint8_t { none, mlm, token, sequence };

struct Batch {
  int64_t rows = 0;  // sequences
  int64_t cols = 0;  // padded length
  std::vector<int32_t> ids;      // rows*cols, kPadToken at padding
  std::vector<uint8_t> attn;     // rows*cols, 1 = real token
  std::vector<int32_t> targets;  // mlm/token: rows*cols with -1 = ignore; sequence: rows
  LabelKind label_kind = LabelKind::none;
  std::string lang;
};

// Masked-token corruption: each real position is independently selected with
// probability mask_fraction (counter-based noise under `key`); a selected
// position becomes the mask token 80% of the time, a random content token 10%,
// and stays unchanged 10%. Targets hold the original id at selected positions,
// -1 elsewhere.
Batch mlm_corrupt(const Batch& clean, double mask_fraction, uint64_t key, int64_t vocab);

struct ForwardCtx {
  uint64_t seed = 0;
  int64_t step = 0;
  bool train = false;
  double dropout = 0.0;
};

template <typename Real>
struct LossGradT {
  double loss = 0.0;
  std::vector<std::vector<Real>> body_grads;  // aligned with body snapshot entries
  std::vector<std::vector<Real>> head_grads;  // aligned with head snapshot entries
};

using LossGrad = LossGradT<float>;

class TrainableModel {
 public:
  virtual ~TrainableModel() = default;

  virtual const ParameterLayout& layout() const = 0;
  virtual uint64_t fingerprint() const = 0;

  virtual ParameterSnapshot init_params(uint64_t seed) const = 0;
  virtual ParameterSnapshot init_head(const HeadSpec& spec, uint64_t seed) const = 0;

  virtual LossGrad forward_loss(const ParameterSnapshot& body, const HeadSpec& hspec,
                                const ParameterSnapshot& head, const Batch& batch, const ForwardCtx& ctx) const = 0;
  virtual double eval_loss(const ParameterSnapshot& body, const HeadSpec& hspec, const ParameterSnapshot& head,
                           const Batch& batch) const = 0;
  // Argmax labels: token head (and mlm) per position (-1 at padding/ignored),
  // sequence head per row.
  virtual std::vector<int32_t> predict(const ParameterSnapshot& body, const HeadSpec& hspec,
                                       const ParameterSnapshot& head, const Batch& batch) const = 0;
};

class MicroTransformer final : public TrainableModel {
 public:
  explicit MicroTransformer(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const ParameterLayout& layout() const override { return layout_; }
  uint64_t fingerprint() const override { return layout_fp_; }

  ParameterSnapshot init_params(uint64_t seed) const override;
  ParameterSnapshot init_head(const HeadSpec& spec, uint64_t seed) const override;

  LossGrad forward_loss(const ParameterSnapshot& body, const HeadSpec& hspec, const ParameterSnapshot& head,
                        const Batch& batch, const ForwardCtx& ctx) const override;
  double eval_loss(const ParameterSnapshot& body, const HeadSpec& hspec, const ParameterSnapshot& head,
                   const Batch& batch) const override;
  std::vector<int32_t> predict(const ParameterSnapshot& body, const HeadSpec& hspec, const ParameterSnapshot& head,
                               const Batch& batch) const override;

  // Width-generic path used by gradient-fidelity tests (double instantiation
  // materialized in model.cpp). Tensors aligned with body/head layouts.
  template <typename Real>
  LossGradT<Real> loss_and_grad(const std::vector<TensorT<Real>>& body, const HeadSpec& hspec,
                                const std::vector<TensorT<Real>>& head, const Batch& batch, const ForwardCtx& ctx,
                                bool want_grads) const;

  static ParameterGroupTag tag_of(const std::string& name);
  static std::vector<std::pair<std::string, std::vector<int64_t>>> head_layout(const ModelSpec& spec,
                                                                               const HeadSpec& hspec);

 private:
  void check_body(const ParameterSnapshot& body) const;
  void check_batch(const Batch& batch) const;

  ModelSpec spec_;
  ParameterLayout layout_;
  uint64_t layout_fp_ = 0;
};

}  // namespace ltsft
