// Named, ordered collections of dense float32 parameters.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltsft/common.hpp"
#include "ltsft/tensor.hpp"

namespace ltsft {

// Tag partition: every parameter tensor belongs to exactly one group.
enum class ParameterGroupTag : uint8_t {
  input_embedding,
  output_embedding,
  layer_norm,
  bias,
  attention,
  ffn,
  head,
};

const char* tag_name(ParameterGroupTag t);

struct TensorEntry {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> values;

  int64_t size() const { return static_cast<int64_t>(values.size()); }
};

// Architecture fingerprint: FNV-1a 64 over the UTF-8 concatenation of
// "name:shape;" records in snapshot order.
uint64_t layout_fingerprint(const std::vector<std::pair<std::string, std::vector<int64_t>>>& records);

// Immutable-layout snapshot: entries unique and sorted lexicographically by
// name; values freely mutable.
class ParameterSnapshot {
 public:
  ParameterSnapshot() = default;
  static ParameterSnapshot create(std::vector<TensorEntry> entries);

  size_t tensor_count() const { return entries_.size(); }
  const TensorEntry& entry(size_t i) const { return entries_[i]; }
  TensorEntry& entry_mut(size_t i) { return entries_[i]; }
  // -1 when absent.
  int index_of(const std::string& name) const;

  uint64_t fingerprint() const { return fingerprint_; }
  int64_t total_params() const { return total_; }

  bool same_layout_as(const ParameterSnapshot& o) const { return fingerprint_ == o.fingerprint_; }

 private:
  std::vector<TensorEntry> entries_;
  uint64_t fingerprint_ = 0;
  int64_t total_ = 0;
};

// Model-declared metadata: tensor names/shapes plus their group tags,
// in snapshot (lexicographic) order.
struct ParameterLayout {
  std::vector<std::string> names;
  std::vector<std::vector<int64_t>> shapes;
  std::vector<ParameterGroupTag> tags;

  uint64_t fingerprint() const;
  int64_t total_params() const;
  size_t tensor_count() const { return names.size(); }
};

}  // namespace ltsft
