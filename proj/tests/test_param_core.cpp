// Parameter snapshots, sparse diffs, masks, and the artifact container.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ltsft/container.hpp"
#include "ltsft/diff.hpp"
#include "ltsft/snapshot.hpp"

using namespace ltsft;

namespace {

ParameterSnapshot make_snapshot(const std::vector<std::pair<std::string, std::vector<int64_t>>>& recs,
                                uint64_t seed) {
  Rng rng(seed);
  std::vector<TensorEntry> entries;
  for (const auto& [name, shape] : recs) {
    TensorEntry e;
    e.name = name;
    e.shape = shape;
    e.values.resize(static_cast<size_t>(TensorT<float>::count(shape)));
    for (float& v : e.values) v = static_cast<float>(rng.next_normal());
    entries.push_back(std::move(e));
  }
  return ParameterSnapshot::create(std::move(entries));
}

const std::vector<std::pair<std::string, std::vector<int64_t>>> kSmallLayout = {
    {"alpha", {4, 3}}, {"beta", {5}}, {"gamma", {2, 2, 2}}};

// Mutate `count` random coordinates of a copy of `base`.
ParameterSnapshot perturb(const ParameterSnapshot& base, int count, uint64_t seed) {
  ParameterSnapshot out = base;
  Rng rng(seed);
  for (int c = 0; c < count; ++c) {
    auto& e = out.entry_mut(static_cast<size_t>(rng.next_below(out.tensor_count())));
    auto& v = e.values[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(e.size())))];
    v = static_cast<float>(rng.next_normal());
  }
  return out;
}

}  // namespace

TEST_CASE("layout fingerprint reflects names and shapes") {
  const uint64_t fp = layout_fingerprint({{"a", {2, 3}}, {"b", {4}}});
  // Same records, same digest; any rename or reshape changes it.
  CHECK(fp == layout_fingerprint({{"a", {2, 3}}, {"b", {4}}}));
  CHECK(fp != layout_fingerprint({{"a", {3, 2}}, {"b", {4}}}));
  CHECK(fp != layout_fingerprint({{"a2", {2, 3}}, {"b", {4}}}));
  CHECK(fp != layout_fingerprint({{"a", {2, 3}}}));
  // FNV-1a 64 of "a:2x3;b:4;" computed with an independent implementation.
  uint64_t h = 14695981039346656037ull;
  for (char ch : std::string("a:2x3;b:4;")) h = (h ^ static_cast<uint8_t>(ch)) * 1099511628211ull;
  CHECK(fp == h);
}

TEST_CASE("snapshot normalizes order and rejects malformed inputs") {
  // entries are stored sorted by name regardless of input order
  const ParameterSnapshot s = ParameterSnapshot::create({{"b", {2}, {1.f, 2.f}}, {"a", {1}, {0.f}}});
  CHECK(s.entry(0).name == "a");
  CHECK(s.entry(1).name == "b");
  CHECK(s.index_of("b") == 1);
  CHECK(s.index_of("zz") == -1);
  CHECK_THROWS_AS(ParameterSnapshot::create({{"a", {2}, {1.f}}}), Error);                          // size mismatch
  CHECK_THROWS_AS(ParameterSnapshot::create({{"a", {2}, {1.f, 2.f}}, {"a", {2}, {1.f, 2.f}}}), Error);  // dup
  CHECK_THROWS_AS(ParameterSnapshot::create({{"a", {0}, {}}}), Error);                             // zero dim
}

TEST_CASE("extract_diff finds exactly the changed coordinates") {
  const ParameterSnapshot base = make_snapshot(kSmallLayout, 11);
  ParameterSnapshot after = base;
  after.entry_mut(0).values[5] += 0.25f;
  after.entry_mut(2).values[0] = -after.entry(2).values[0];

  const SparseDiff d = extract_diff(after, base);
  CHECK(d.support_count() == 2);
  CHECK(d.tensor(0).idx == std::vector<uint32_t>{5});
  CHECK(d.tensor(1).idx.empty());
  CHECK(d.tensor(2).idx == std::vector<uint32_t>{0});
  CHECK(d.fingerprint() == base.fingerprint());
  // density = support / total params (12 + 5 + 8 = 25)
  CHECK(diff_density(d) == doctest::Approx(2.0 / 25.0).epsilon(1e-12));

  const SparseDiff zero = extract_diff(base, base);
  CHECK(zero.support_count() == 0);
  CHECK(diff_density(zero) == 0.0);
}

TEST_CASE("extract then apply reproduces the target bitwise") {
  // Includes magnitude-shrinking coordinates, where a naive rounded f32/f64
  // delta double-rounds onto a neighboring float.
  const ParameterSnapshot base = make_snapshot(kSmallLayout, 21);
  for (uint64_t trial = 0; trial < 200; ++trial) {
    ParameterSnapshot after = perturb(base, 6, derive_key(77, "trial", trial));
    // Force a pathological pair: large value shrinking to a tiny misaligned one.
    after.entry_mut(0).values[0] = 0.00221f;
    auto mut = base;
    mut.entry_mut(0).values[0] = -0.000152f;
    const SparseDiff d = extract_diff(mut, after);
    const ParameterSnapshot replay = apply_diffs(after, {&d});
    for (size_t t = 0; t < mut.tensor_count(); ++t)
      for (size_t i = 0; i < mut.entry(t).values.size(); ++i)
        REQUIRE(std::bit_cast<uint32_t>(replay.entry(t).values[i]) ==
                std::bit_cast<uint32_t>(mut.entry(t).values[i]));
  }
}

TEST_CASE("apply_diffs equals a dense f64 accumulation oracle") {
  const ParameterSnapshot base = make_snapshot(kSmallLayout, 31);
  const ParameterSnapshot a = perturb(base, 10, 32);
  const ParameterSnapshot b = perturb(base, 10, 33);
  const SparseDiff da = extract_diff(a, base);
  const SparseDiff db = extract_diff(b, base);

  const ParameterSnapshot got = apply_diffs(base, {&da, &db});
  for (size_t t = 0; t < base.tensor_count(); ++t) {
    std::vector<double> dense(base.entry(t).values.begin(), base.entry(t).values.end());
    for (const SparseDiff* d : {&da, &db})
      for (size_t i = 0; i < d->tensor(t).idx.size(); ++i)
        dense[d->tensor(t).idx[i]] += d->tensor(t).delta[i];
    for (size_t i = 0; i < dense.size(); ++i) {
      const float oracle = static_cast<float>(dense[i]);
      const float actual = got.entry(t).values[i];
      // one f32 rounding of the same f64 sum, modulo addend order
      CHECK(std::abs(actual - oracle) <= std::abs(oracle) * 1.2e-7f + 1e-12f);
    }
  }
}

TEST_CASE("apply_diffs is invariant under diff order") {
  const ParameterSnapshot base = make_snapshot(kSmallLayout, 41);
  const SparseDiff d1 = extract_diff(perturb(base, 12, 42), base);
  const SparseDiff d2 = extract_diff(perturb(base, 12, 43), base);
  const SparseDiff d3 = extract_diff(perturb(base, 12, 44), base);

  const ParameterSnapshot r1 = apply_diffs(base, {&d1, &d2, &d3});
  const ParameterSnapshot r2 = apply_diffs(base, {&d3, &d1, &d2});
  const ParameterSnapshot r3 = apply_diffs(base, {&d2, &d3, &d1});
  for (size_t t = 0; t < base.tensor_count(); ++t)
    for (size_t i = 0; i < base.entry(t).values.size(); ++i) {
      CHECK(std::bit_cast<uint32_t>(r1.entry(t).values[i]) == std::bit_cast<uint32_t>(r2.entry(t).values[i]));
      CHECK(std::bit_cast<uint32_t>(r1.entry(t).values[i]) == std::bit_cast<uint32_t>(r3.entry(t).values[i]));
    }
}

TEST_CASE("apply_diffs composition hand cases") {
  const ParameterSnapshot base = make_snapshot(kSmallLayout, 51);
  // empty list leaves base unchanged
  const ParameterSnapshot same = apply_diffs(base, {});
  for (size_t t = 0; t < base.tensor_count(); ++t)
    CHECK(same.entry(t).values == base.entry(t).values);

  // overlapping index j accumulates a + b
  SparseDiff dx = SparseDiff::create(
      {{"alpha", {4, 3}, {2}, {0.5}}, {"beta", {5}, {}, {}}, {"gamma", {2, 2, 2}, {}, {}}});
  SparseDiff dy = SparseDiff::create(
      {{"alpha", {4, 3}, {2, 7}, {0.25, -1.0}}, {"beta", {5}, {}, {}}, {"gamma", {2, 2, 2}, {}, {}}});
  const ParameterSnapshot got = apply_diffs(base, {&dx, &dy});
  CHECK(got.entry(0).values[2] ==
        static_cast<float>(static_cast<double>(base.entry(0).values[2]) + 0.25 + 0.5));
  CHECK(got.entry(0).values[7] == static_cast<float>(static_cast<double>(base.entry(0).values[7]) - 1.0));
  CHECK(got.entry(0).values[1] == base.entry(0).values[1]);

  // disjoint supports equal the union of single applications
  const ParameterSnapshot gx = apply_diffs(base, {&dx});
  CHECK(apply_diffs(gx, {&dy}).entry(0).values[7] == got.entry(0).values[7]);
}

TEST_CASE("apply_diffs validates fingerprints and layout") {
  const ParameterSnapshot base = make_snapshot(kSmallLayout, 61);
  const ParameterSnapshot other = make_snapshot({{"alpha", {4, 3}}, {"beta", {6}}, {"gamma", {2, 2, 2}}}, 61);
  const SparseDiff d = extract_diff(perturb(other, 3, 62), other);
  CHECK_THROWS_AS(apply_diffs(base, {&d}), Error);
  try {
    apply_diffs(base, {&d});
  } catch (const Error& e) {
    CHECK(e.code() == Errc::fingerprint);
  }
}

TEST_CASE("diff rejects malformed tensors") {
  using V = std::vector<DiffTensor>;
  CHECK_THROWS_AS(SparseDiff::create(V{{"a", {3}, {1, 1}, {0.5, 0.5}}}), Error);   // non-ascending
  CHECK_THROWS_AS(SparseDiff::create(V{{"a", {3}, {5}, {0.5}}}), Error);           // out of range
  CHECK_THROWS_AS(SparseDiff::create(V{{"a", {3}, {1}, {0.0}}}), Error);           // explicit zero
  CHECK_THROWS_AS(SparseDiff::create(V{{"a", {3}, {1}, {}}}), Error);              // length mismatch
  CHECK_THROWS_AS(SparseDiff::create(V{{"b", {3}, {}, {}}, {"a", {3}, {}, {}}}), Error);  // order
}

TEST_CASE("mask overlap percentage") {
  const std::vector<int64_t> sizes{10, 8};
  const uint64_t fp = layout_fingerprint({{"a", {10}}, {"b", {8}}});
  const Mask a = Mask::create(fp, sizes, {{0, 1, 2}, {4}});
  const Mask b = Mask::create(fp, sizes, {{2, 3, 4}, {4}});
  CHECK(overlap_percentage(a, a) == 100.0);
  CHECK(overlap_percentage(a, b) == doctest::Approx(50.0));  // {2} and {4} shared of K=4
  const Mask c = Mask::create(fp, sizes, {{5, 6, 7}, {5}});
  CHECK(overlap_percentage(a, c) == 0.0);
  const Mask small = Mask::create(fp, sizes, {{0}, {}});
  CHECK_THROWS_AS(overlap_percentage(a, small), Error);  // unequal budgets
  const Mask other = Mask::create(fp ^ 1, sizes, {{0, 1, 2}, {4}});
  CHECK_THROWS_AS(overlap_percentage(a, other), Error);  // fingerprint mismatch
}

TEST_CASE("mask attachment enforces the support") {
  const ParameterSnapshot base = make_snapshot(kSmallLayout, 71);
  ParameterSnapshot after = base;
  after.entry_mut(1).values[2] += 1.0f;
  SparseDiff d = extract_diff(after, base);
  const uint64_t fp = base.fingerprint();
  const std::vector<int64_t> sizes{12, 5, 8};
  d.attach_mask(Mask::create(fp, sizes, {{}, {1, 2, 3}, {}}));
  CHECK(d.has_mask());
  CHECK(d.mask().popcount() == 3);

  SparseDiff d2 = extract_diff(after, base);
  CHECK_THROWS_AS(d2.attach_mask(Mask::create(fp, sizes, {{0}, {1, 3}, {}})), Error);  // support escapes
}

TEST_CASE("container round trip is bit-exact") {
  const ParameterSnapshot base = make_snapshot(kSmallLayout, 81);
  SparseDiff d = extract_diff(perturb(base, 9, 82), base);
  d.attach_mask(Mask::create(base.fingerprint(), {12, 5, 8},
                             [&] {
                               std::vector<std::vector<uint32_t>> idx(3);
                               for (size_t t = 0; t < 3; ++t) idx[t] = d.tensor(t).idx;
                               return idx;
                             }()));
  const std::vector<uint8_t> bytes = serialize_diff(d);
  CHECK(serialize_diff(deserialize_diff(bytes)) == bytes);

  const std::vector<uint8_t> snap_bytes = serialize_snapshot(base, {});
  CHECK(serialize_snapshot(deserialize_snapshot(snap_bytes).first, {}) == snap_bytes);

  const std::vector<uint8_t> head_bytes = serialize_snapshot(base, {"token_cls", 4});
  const auto [hs, hm] = deserialize_snapshot(head_bytes);
  CHECK(hm.head_kind == "token_cls");
  CHECK(hm.classes == 4);
  CHECK(serialize_snapshot(hs, hm) == head_bytes);
}

TEST_CASE("container serialization fuzz: round trip and corruption") {
  // 1000 cases: random valid diffs round-trip bit-exactly; random corruptions
  // of those bytes either decode to the identical artifact (the flip landed on
  // a spot the decoder cannot distinguish, e.g. inside an f64 delta) or raise
  // a decode error. A corrupt payload must never yield a *different* artifact,
  // and the zero-artifact guarantee is that deserialize_diff either returns or
  // throws - partial results are unrepresentable.
  int decode_errors = 0;
  for (uint64_t trial = 0; trial < 1000; ++trial) {
    Rng rng(derive_key(991, "fuzz", trial));
    // random small layout
    const int ntens = 1 + static_cast<int>(rng.next_below(3));
    std::vector<TensorEntry> entries;
    for (int t = 0; t < ntens; ++t) {
      TensorEntry e;
      e.name = std::string(1, static_cast<char>('a' + t));
      e.shape = {1 + static_cast<int64_t>(rng.next_below(6))};
      e.values.resize(static_cast<size_t>(e.shape[0]));
      for (float& v : e.values) v = static_cast<float>(rng.next_normal());
      entries.push_back(std::move(e));
    }
    const ParameterSnapshot base = ParameterSnapshot::create(std::move(entries));
    const ParameterSnapshot after = perturb(base, 1 + static_cast<int>(rng.next_below(5)),
                                            derive_key(991, "perturb", trial));
    const SparseDiff d = extract_diff(after, base);
    const std::vector<uint8_t> bytes = serialize_diff(d);
    REQUIRE(serialize_diff(deserialize_diff(bytes)) == bytes);

    std::vector<uint8_t> corrupt = bytes;
    const uint64_t mode = rng.next_below(4);
    if (mode == 0 && corrupt.size() > 1) {
      corrupt.resize(rng.next_below(corrupt.size()));  // truncate
    } else if (mode == 1) {
      corrupt[rng.next_below(corrupt.size())] ^= static_cast<uint8_t>(1 + rng.next_below(255));  // flip
    } else if (mode == 2) {
      corrupt.push_back(static_cast<uint8_t>(rng.next_below(256)));  // trailing garbage
    } else {
      corrupt[rng.next_below(4)] ^= 0x20;  // damage the magic
    }
    if (corrupt == bytes) continue;
    try {
      const SparseDiff got = deserialize_diff(corrupt);
      // Only acceptable if the decoded artifact serializes back to the
      // original canonical bytes (i.e. the corruption was never readable).
      CHECK(serialize_diff(got) == bytes);
    } catch (const Error& e) {
      ++decode_errors;
      CHECK(e.code() == Errc::format);
    }
  }
  // The integrity digest makes silent acceptance of a flipped bit impossible;
  // nearly every corruption must have surfaced as a decode error.
  CHECK(decode_errors > 950);
}

TEST_CASE("snapshot container rejects non-finite values and wrong kind") {
  const ParameterSnapshot base = make_snapshot(kSmallLayout, 91);
  std::vector<uint8_t> diff_bytes = serialize_diff(extract_diff(perturb(base, 2, 92), base));
  CHECK_THROWS_AS(deserialize_snapshot(diff_bytes), Error);  // wrong magic
  ParameterSnapshot weird = base;
  weird.entry_mut(0).values[0] = std::numeric_limits<float>::quiet_NaN();
  // serializer writes bytes; decoder refuses them
  CHECK_THROWS_AS(deserialize_snapshot(serialize_snapshot(weird, {})), Error);
}
