#include "ltsft/diff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

namespace ltsft {

Mask Mask::create(uint64_t fingerprint, const std::vector<int64_t>& tensor_sizes,
                  std::vector<std::vector<uint32_t>> idx) {
  if (idx.size() != tensor_sizes.size()) fail(Errc::internal, "mask: tensor count mismatch");
  Mask m;
  m.fingerprint_ = fingerprint;
  for (size_t t = 0; t < idx.size(); ++t) {
    const auto& v = idx[t];
    for (size_t i = 0; i < v.size(); ++i) {
      if (i > 0 && v[i] <= v[i - 1]) fail(Errc::format, "mask: indices not strictly ascending");
      if (static_cast<int64_t>(v[i]) >= tensor_sizes[t]) fail(Errc::format, "mask: index out of range");
    }
    m.popcount_ += static_cast<int64_t>(v.size());
  }
  m.idx_ = std::move(idx);
  return m;
}

double overlap_percentage(const Mask& a, const Mask& b) {
  if (a.fingerprint() != b.fingerprint()) fail(Errc::fingerprint, "overlap: masks target different architectures");
  if (a.tensor_count() != b.tensor_count()) fail(Errc::fingerprint, "overlap: tensor count mismatch");
  if (a.popcount() != b.popcount()) fail(Errc::config, "overlap: masks have different budgets");
  if (a.popcount() == 0) fail(Errc::config, "overlap: empty masks");
  int64_t shared = 0;
  for (size_t t = 0; t < a.tensor_count(); ++t) {
    const auto& va = a.indices(t);
    const auto& vb = b.indices(t);
    size_t i = 0, j = 0;
    while (i < va.size() && j < vb.size()) {
      if (va[i] < vb[j]) ++i;
      else if (vb[j] < va[i]) ++j;
      else { ++shared; ++i; ++j; }
    }
  }
  return 100.0 * static_cast<double>(shared) / static_cast<double>(a.popcount());
}

SparseDiff SparseDiff::create(std::vector<DiffTensor> tensors) {
  SparseDiff d;
  std::vector<std::pair<std::string, std::vector<int64_t>>> records;
  records.reserve(tensors.size());
  for (size_t t = 0; t < tensors.size(); ++t) {
    DiffTensor& dt = tensors[t];
    if (t > 0 && tensors[t - 1].name >= dt.name) fail(Errc::format, "diff: tensors not in ascending name order");
    if (dt.idx.size() != dt.delta.size()) fail(Errc::format, "diff: index/delta length mismatch");
    const int64_t n = dt.size();
    for (size_t i = 0; i < dt.idx.size(); ++i) {
      if (i > 0 && dt.idx[i] <= dt.idx[i - 1]) fail(Errc::format, "diff: indices not strictly ascending");
      if (static_cast<int64_t>(dt.idx[i]) >= n) fail(Errc::format, "diff: index out of range");
      if (dt.delta[i] == 0.0) fail(Errc::format, "diff: explicit zero delta");
      if (!std::isfinite(dt.delta[i])) fail(Errc::format, "diff: non-finite delta");
    }
    d.total_ += n;
    records.emplace_back(dt.name, dt.shape);
  }
  d.fingerprint_ = layout_fingerprint(records);
  d.tensors_ = std::move(tensors);
  return d;
}

int64_t SparseDiff::support_count() const {
  int64_t n = 0;
  for (const auto& t : tensors_) n += static_cast<int64_t>(t.idx.size());
  return n;
}

void SparseDiff::attach_mask(Mask m) {
  if (m.fingerprint() != fingerprint_) fail(Errc::fingerprint, "diff: mask fingerprint mismatch");
  if (m.tensor_count() != tensors_.size()) fail(Errc::internal, "diff: mask tensor count mismatch");
  for (size_t t = 0; t < tensors_.size(); ++t) {
    // support must lie inside the mask
    const auto& mi = m.indices(t);
    const auto& di = tensors_[t].idx;
    size_t i = 0, j = 0;
    while (i < di.size()) {
      while (j < mi.size() && mi[j] < di[i]) ++j;
      if (j >= mi.size() || mi[j] != di[i]) fail(Errc::internal, "diff: support escapes mask");
      ++i;
    }
  }
  mask_ = std::move(m);
  has_mask_ = true;
}

namespace {

// f64 difference, nudged by f64 ulps if double rounding lands next door, so
// that f32(f64(before) + delta) == after bitwise. A representable delta covers
// every pair short of |after| < ~2^-29 |delta| (a parameter landing within a
// relative hair of zero); that regime is reported, never silently absorbed.
double exact_delta(float before, float after) {
  const double b = static_cast<double>(before);
  double d = static_cast<double>(after) - b;
  for (int tries = 0; tries < 8; ++tries) {
    const float applied = static_cast<float>(b + d);
    if (applied == after) break;
    d = std::nextafter(d, applied < after ? HUGE_VAL : -HUGE_VAL);
  }
  if (static_cast<float>(b + d) != after) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "extract_diff: no representable delta (before=%.9g after=%.9g)",
                  static_cast<double>(before), static_cast<double>(after));
    fail(Errc::numeric, msg);
  }
  return d;
}

// Total order on f64 bit patterns used to fix the addend order in
// composition (same order regardless of how diffs are listed).
uint64_t sort_key(double f) {
  uint64_t u = std::bit_cast<uint64_t>(f);
  return (u & 0x8000000000000000ull) ? ~u : (u | 0x8000000000000000ull);
}

}  // namespace

SparseDiff extract_diff(const ParameterSnapshot& after, const ParameterSnapshot& before) {
  if (!after.same_layout_as(before)) fail(Errc::fingerprint, "extract_diff: snapshots have different architectures");
  std::vector<DiffTensor> out;
  out.reserve(after.tensor_count());
  for (size_t t = 0; t < after.tensor_count(); ++t) {
    const TensorEntry& ea = after.entry(t);
    const TensorEntry& eb = before.entry(t);
    DiffTensor dt{ea.name, ea.shape, {}, {}};
    for (int64_t i = 0; i < ea.size(); ++i) {
      float a = ea.values[static_cast<size_t>(i)];
      float b = eb.values[static_cast<size_t>(i)];
      if (a == b) continue;  // exact zero only
      if (!std::isfinite(a) || !std::isfinite(b)) fail(Errc::numeric, "extract_diff: non-finite parameter");
      dt.idx.push_back(static_cast<uint32_t>(i));
      dt.delta.push_back(exact_delta(b, a));
    }
    out.push_back(std::move(dt));
  }
  return SparseDiff::create(std::move(out));
}

ParameterSnapshot apply_diffs(const ParameterSnapshot& base, const std::vector<const SparseDiff*>& diffs) {
  for (const SparseDiff* d : diffs) {
    if (d == nullptr) fail(Errc::internal, "apply_diffs: null diff");
    if (d->fingerprint() != base.fingerprint())
      fail(Errc::fingerprint, "apply_diffs: diff targets a different architecture");
    if (d->tensor_count() != base.tensor_count()) fail(Errc::fingerprint, "apply_diffs: tensor count mismatch");
  }
  std::vector<TensorEntry> entries;
  entries.reserve(base.tensor_count());
  for (size_t t = 0; t < base.tensor_count(); ++t) entries.push_back(base.entry(t));

  // Gather addends per coordinate; sort by value bit pattern so composition
  // is independent of diff order, then accumulate in f64 and round once.
  std::vector<double> addends;
  for (size_t t = 0; t < entries.size(); ++t) {
    TensorEntry& e = entries[t];
    // Collect per-coordinate contributions from all diffs touching t.
    std::vector<std::pair<uint32_t, double>> touched;
    for (const SparseDiff* d : diffs) {
      const DiffTensor& dt = d->tensor(t);
      if (dt.name != e.name || dt.shape != e.shape) fail(Errc::fingerprint, "apply_diffs: layout mismatch");
      for (size_t i = 0; i < dt.idx.size(); ++i) touched.emplace_back(dt.idx[i], dt.delta[i]);
    }
    if (touched.empty()) continue;
    std::stable_sort(touched.begin(), touched.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    size_t i = 0;
    while (i < touched.size()) {
      size_t j = i;
      while (j < touched.size() && touched[j].first == touched[i].first) ++j;
      addends.clear();
      for (size_t q = i; q < j; ++q) addends.push_back(touched[q].second);
      std::sort(addends.begin(), addends.end(), [](double a, double b) { return sort_key(a) < sort_key(b); });
      double acc = static_cast<double>(e.values[touched[i].first]);
      for (double a : addends) acc += a;
      e.values[touched[i].first] = static_cast<float>(acc);
      i = j;
    }
  }
  return ParameterSnapshot::create(std::move(entries));
}

double diff_density(const SparseDiff& d) {
  if (d.total_params() == 0) fail(Errc::config, "diff_density: empty layout");
  return static_cast<double>(d.support_count()) / static_cast<double>(d.total_params());
}

}  // namespace ltsft
