// Sparse difference vectors over parameter snapshots, selection masks, and
// the group policy that decides which tensors may be touched at all.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltsft/snapshot.hpp"

namespace ltsft {

struct GroupPolicy {
  std::vector<ParameterGroupTag> excluded;

  bool maskable(ParameterGroupTag t) const {
    for (ParameterGroupTag e : excluded)
      if (e == t) return false;
    return true;
  }

  // Default regime: the decoupled output embedding stays fixed and layer
  // norm parameters are frozen during sparse fine-tuning.
  static GroupPolicy standard() {
    return GroupPolicy{{ParameterGroupTag::output_embedding, ParameterGroupTag::layer_norm}};
  }
  static GroupPolicy none() { return GroupPolicy{{}}; }
};

// Binary selection mask aligned with a snapshot layout: per tensor, the
// sorted flat indices of selected parameters.
class Mask {
 public:
  Mask() = default;
  // idx vectors must be strictly ascending and within tensor sizes.
  static Mask create(uint64_t fingerprint, const std::vector<int64_t>& tensor_sizes,
                     std::vector<std::vector<uint32_t>> idx);

  uint64_t fingerprint() const { return fingerprint_; }
  size_t tensor_count() const { return idx_.size(); }
  const std::vector<uint32_t>& indices(size_t t) const { return idx_[t]; }
  int64_t popcount() const { return popcount_; }

 private:
  uint64_t fingerprint_ = 0;
  std::vector<std::vector<uint32_t>> idx_;
  int64_t popcount_ = 0;
};

// Percentage (0..100) of selected positions shared by two masks of equal
// layout and equal popcount K: 100 * |A cap B| / K.
double overlap_percentage(const Mask& a, const Mask& b);

struct DiffTensor {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<uint32_t> idx;  // strictly ascending flat indices
  std::vector<double> delta;  // parallel to idx; never exactly 0

  int64_t size() const { return TensorT<float>::count(shape); }
};

// Sparse difference vector. Lists every tensor of the target layout (possibly
// with zero entries) so the architecture fingerprint is re-derivable.
class SparseDiff {
 public:
  SparseDiff() = default;
  static SparseDiff create(std::vector<DiffTensor> tensors);

  uint64_t fingerprint() const { return fingerprint_; }
  int64_t total_params() const { return total_; }
  size_t tensor_count() const { return tensors_.size(); }
  const DiffTensor& tensor(size_t i) const { return tensors_[i]; }
  int64_t support_count() const;

  bool has_mask() const { return has_mask_; }
  const Mask& mask() const { return mask_; }
  void attach_mask(Mask m);

 private:
  std::vector<DiffTensor> tensors_;  // snapshot order
  uint64_t fingerprint_ = 0;
  int64_t total_ = 0;
  Mask mask_;
  bool has_mask_ = false;
};

// after - before, per coordinate, skipping exact zeros. Each stored f64 delta
// is verified (and ulp-nudged when needed) so that
// f32(f64(before) + delta) == after bitwise.
SparseDiff extract_diff(const ParameterSnapshot& after, const ParameterSnapshot& before);

// base + sum of diffs, accumulated per coordinate in 64-bit with addends in
// bit-pattern-sorted order (hence order-invariant), rounded once to f32.
ParameterSnapshot apply_diffs(const ParameterSnapshot& base, const std::vector<const SparseDiff*>& diffs);

// |support| / total parameter count.
double diff_density(const SparseDiff& d);

}  // namespace ltsft
