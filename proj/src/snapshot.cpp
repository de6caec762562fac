#include "ltsft/snapshot.hpp"

#include <algorithm>

namespace ltsft {

const char* tag_name(ParameterGroupTag t) {
  switch (t) {
    case ParameterGroupTag::input_embedding: return "input-embedding";
    case ParameterGroupTag::output_embedding: return "output-embedding";
    case ParameterGroupTag::layer_norm: return "layer-norm";
    case ParameterGroupTag::bias: return "bias";
    case ParameterGroupTag::attention: return "attention";
    case ParameterGroupTag::ffn: return "ffn";
    case ParameterGroupTag::head: return "head";
  }
  return "?";
}

uint64_t layout_fingerprint(const std::vector<std::pair<std::string, std::vector<int64_t>>>& records) {
  std::string cat;
  for (const auto& [name, shape] : records) {
    cat += name;
    cat += ':';
    cat += shape_str(shape);
    cat += ';';
  }
  return fnv1a64(cat);
}

ParameterSnapshot ParameterSnapshot::create(std::vector<TensorEntry> entries) {
  std::sort(entries.begin(), entries.end(), [](const TensorEntry& a, const TensorEntry& b) { return a.name < b.name; });
  ParameterSnapshot s;
  std::vector<std::pair<std::string, std::vector<int64_t>>> records;
  records.reserve(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    const TensorEntry& e = entries[i];
    if (e.name.empty()) fail(Errc::config, "snapshot: empty tensor name");
    if (i > 0 && entries[i - 1].name == e.name) fail(Errc::config, "snapshot: duplicate tensor name " + e.name);
    int64_t n = TensorT<float>::count(e.shape);
    if (n != e.size()) fail(Errc::config, "snapshot: value count does not match shape for " + e.name);
    s.total_ += n;
    records.emplace_back(e.name, e.shape);
  }
  s.fingerprint_ = layout_fingerprint(records);
  s.entries_ = std::move(entries);
  return s;
}

int ParameterSnapshot::index_of(const std::string& name) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), name,
                             [](const TensorEntry& e, const std::string& n) { return e.name < n; });
  if (it == entries_.end() || it->name != name) return -1;
  return static_cast<int>(it - entries_.begin());
}

uint64_t ParameterLayout::fingerprint() const {
  std::vector<std::pair<std::string, std::vector<int64_t>>> records;
  records.reserve(names.size());
  for (size_t i = 0; i < names.size(); ++i) records.emplace_back(names[i], shapes[i]);
  return layout_fingerprint(records);
}

int64_t ParameterLayout::total_params() const {
  int64_t n = 0;
  for (const auto& s : shapes) n += TensorT<float>::count(s);
  return n;
}

}  // namespace ltsft
