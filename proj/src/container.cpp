#include "ltsft/container.hpp"

#include <cmath>

#include <json.hpp>

#include "ltsft/fsio.hpp"

namespace ltsft {

using nlohmann::json;

namespace {

constexpr char kDiffMagic[4] = {'S', 'F', 'T', '1'};
constexpr char kSnapMagic[4] = {'S', 'N', 'P', '1'};
const std::string kZeroDigest(16, '0');

// Canonical manifest bytes with the digest field holding `digest_value`.
std::string dump_with_digest(json j, const std::string& digest_value) {
  j["payload_fnv"] = digest_value;
  return j.dump();
}

std::vector<uint8_t> assemble(const char magic[4], json manifest, const std::vector<uint8_t>& payload) {
  std::string zeroed = dump_with_digest(manifest, kZeroDigest);
  uint64_t h = fnv1a64(zeroed);
  h = fnv1a64(payload.data(), payload.size(), h);
  std::string final_manifest = dump_with_digest(std::move(manifest), hex16(h));
  ByteWriter w;
  w.put_bytes(magic, 4);
  if (final_manifest.size() > 0xffffffffull) fail(Errc::internal, "manifest too large");
  w.put_u32(static_cast<uint32_t>(final_manifest.size()));
  w.put_str(final_manifest);
  w.put_bytes(payload.data(), payload.size());
  return w.take();
}

struct Opened {
  json manifest;
  const uint8_t* payload;
  size_t payload_size;
};

// Shared decode front half: magic, manifest slice, canonical-form check,
// whole-file integrity check. Everything after this point may still fail
// structural validation but cannot have been silently corrupted.
Opened open_container(const char magic[4], const std::vector<uint8_t>& bytes, const char* what) {
  if (bytes.size() < 8) fail(Errc::format, std::string(what) + ": truncated header");
  if (std::memcmp(bytes.data(), magic, 4) != 0) fail(Errc::format, std::string(what) + ": bad magic");
  ByteReader r(bytes.data() + 4, bytes.size() - 4);
  uint32_t mlen = r.get_u32();
  if (mlen > bytes.size() - 8) fail(Errc::format, std::string(what) + ": manifest length out of range");
  std::string mstr = r.get_str(mlen);
  json j = json::parse(mstr, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(Errc::format, std::string(what) + ": manifest is not valid JSON");
  if (j.dump() != mstr) fail(Errc::format, std::string(what) + ": manifest not canonical");
  if (!j.contains("payload_fnv") || !j["payload_fnv"].is_string())
    fail(Errc::format, std::string(what) + ": missing integrity digest");
  uint64_t stored;
  if (!parse_hex16(j["payload_fnv"].get<std::string>(), stored))
    fail(Errc::format, std::string(what) + ": malformed integrity digest");
  const uint8_t* payload = bytes.data() + 8 + mlen;
  size_t payload_size = bytes.size() - 8 - mlen;
  uint64_t h = fnv1a64(dump_with_digest(j, kZeroDigest));
  h = fnv1a64(payload, payload_size, h);
  if (h != stored) fail(Errc::format, std::string(what) + ": integrity digest mismatch");
  return Opened{std::move(j), payload, payload_size};
}

void expect_keys(const json& j, std::initializer_list<const char*> required,
                 std::initializer_list<const char*> optional, const char* what) {
  for (const char* k : required)
    if (!j.contains(k)) fail(Errc::format, std::string(what) + ": missing key " + k);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : required)
      if (it.key() == k) known = true;
    for (const char* k : optional)
      if (it.key() == k) known = true;
    if (!known) fail(Errc::format, std::string(what) + ": unknown key " + it.key());
  }
}

std::vector<int64_t> parse_shape(const json& j, const char* what) {
  if (!j.is_array() || j.empty()) fail(Errc::format, std::string(what) + ": bad shape");
  std::vector<int64_t> shape;
  for (const auto& d : j) {
    if (!d.is_number_unsigned() || d.get<uint64_t>() == 0 || d.get<uint64_t>() > (1ull << 31))
      fail(Errc::format, std::string(what) + ": bad dimension");
    shape.push_back(static_cast<int64_t>(d.get<uint64_t>()));
  }
  return shape;
}

void check_common_header(const json& j, const char* kind, const char* what) {
  if (!j["creator"].is_string() || j["creator"].get<std::string>() != kCreator)
    fail(Errc::format, std::string(what) + ": unknown creator");
  if (!j["kind"].is_string() || j["kind"].get<std::string>() != kind)
    fail(Errc::format, std::string(what) + ": wrong container kind");
}

}  // namespace

std::vector<uint8_t> serialize_diff(const SparseDiff& d) {
  json tensors = json::array();
  ByteWriter payload;
  for (size_t t = 0; t < d.tensor_count(); ++t) {
    const DiffTensor& dt = d.tensor(t);
    json shape = json::array();
    for (int64_t dim : dt.shape) shape.push_back(static_cast<uint64_t>(dim));
    tensors.push_back({{"count", dt.idx.size()}, {"name", dt.name}, {"shape", shape}});
    payload.put_u32(static_cast<uint32_t>(dt.idx.size()));
    for (uint32_t i : dt.idx) payload.put_u32(i);
    for (double v : dt.delta) payload.put_f64(v);
  }
  json j = {
      {"creator", kCreator},
      {"fingerprint", hex16(d.fingerprint())},
      {"kind", "sft-diff"},
      {"tensors", std::move(tensors)},
      {"total_params", static_cast<uint64_t>(d.total_params())},
  };
  if (d.has_mask()) {
    json idx = json::array();
    for (size_t t = 0; t < d.mask().tensor_count(); ++t) idx.push_back(d.mask().indices(t));
    j["mask"] = {{"budget", static_cast<uint64_t>(d.mask().popcount())}, {"idx", std::move(idx)}};
  }
  return assemble(kDiffMagic, std::move(j), payload.bytes());
}

SparseDiff deserialize_diff(const std::vector<uint8_t>& bytes) {
  Opened o = open_container(kDiffMagic, bytes, "sft");
  const json& j = o.manifest;
  expect_keys(j, {"creator", "fingerprint", "kind", "payload_fnv", "tensors", "total_params"}, {"mask"}, "sft");
  check_common_header(j, "sft-diff", "sft");
  if (!j["tensors"].is_array()) fail(Errc::format, "sft: tensors must be an array");
  if (!j["total_params"].is_number_unsigned()) fail(Errc::format, "sft: bad total_params");

  ByteReader r(o.payload, o.payload_size);
  std::vector<DiffTensor> tensors;
  std::vector<int64_t> sizes;
  uint64_t total = 0;
  for (const auto& tj : j["tensors"]) {
    if (!tj.is_object()) fail(Errc::format, "sft: bad tensor record");
    expect_keys(tj, {"count", "name", "shape"}, {}, "sft tensor");
    if (!tj["name"].is_string() || !tj["count"].is_number_unsigned()) fail(Errc::format, "sft: bad tensor record");
    DiffTensor dt;
    dt.name = tj["name"].get<std::string>();
    dt.shape = parse_shape(tj["shape"], "sft");
    const int64_t size = TensorT<float>::count(dt.shape);
    const uint64_t count = tj["count"].get<uint64_t>();
    if (count > static_cast<uint64_t>(size)) fail(Errc::format, "sft: entry count exceeds tensor size");
    total += static_cast<uint64_t>(size);
    uint32_t stored_count = r.get_u32();
    if (stored_count != count) fail(Errc::format, "sft: payload count disagrees with manifest");
    dt.idx.resize(count);
    dt.delta.resize(count);
    for (uint64_t i = 0; i < count; ++i) dt.idx[i] = r.get_u32();
    for (uint64_t i = 0; i < count; ++i) dt.delta[i] = r.get_f64();
    sizes.push_back(size);
    tensors.push_back(std::move(dt));
  }
  if (!r.at_end()) fail(Errc::format, "sft: trailing bytes after payload");
  if (total != j["total_params"].get<uint64_t>()) fail(Errc::format, "sft: total_params disagrees with shapes");

  SparseDiff d;
  try {
    d = SparseDiff::create(std::move(tensors));
  } catch (const Error& e) {
    fail(Errc::format, std::string("sft: ") + e.what());
  }
  uint64_t stored_fp;
  if (!j["fingerprint"].is_string() || !parse_hex16(j["fingerprint"].get<std::string>(), stored_fp))
    fail(Errc::format, "sft: malformed fingerprint");
  if (stored_fp != d.fingerprint()) fail(Errc::format, "sft: fingerprint disagrees with tensor records");

  if (j.contains("mask")) {
    const json& mj = j["mask"];
    if (!mj.is_object()) fail(Errc::format, "sft: bad mask record");
    expect_keys(mj, {"budget", "idx"}, {}, "sft mask");
    if (!mj["budget"].is_number_unsigned() || !mj["idx"].is_array() || mj["idx"].size() != d.tensor_count())
      fail(Errc::format, "sft: bad mask record");
    std::vector<std::vector<uint32_t>> idx;
    for (const auto& arr : mj["idx"]) {
      if (!arr.is_array()) fail(Errc::format, "sft: bad mask indices");
      std::vector<uint32_t> v;
      for (const auto& e : arr) {
        if (!e.is_number_unsigned() || e.get<uint64_t>() > 0xffffffffull) fail(Errc::format, "sft: bad mask index");
        v.push_back(static_cast<uint32_t>(e.get<uint64_t>()));
      }
      idx.push_back(std::move(v));
    }
    try {
      Mask m = Mask::create(d.fingerprint(), sizes, std::move(idx));
      if (m.popcount() != static_cast<int64_t>(mj["budget"].get<uint64_t>()))
        fail(Errc::format, "sft: mask budget disagrees with indices");
      d.attach_mask(std::move(m));
    } catch (const Error& e) {
      fail(Errc::format, std::string("sft: ") + e.what());
    }
  }
  return d;
}

std::vector<uint8_t> serialize_snapshot(const ParameterSnapshot& s, const SnapshotMeta& meta) {
  json tensors = json::array();
  ByteWriter payload;
  for (size_t t = 0; t < s.tensor_count(); ++t) {
    const TensorEntry& e = s.entry(t);
    json shape = json::array();
    for (int64_t dim : e.shape) shape.push_back(static_cast<uint64_t>(dim));
    tensors.push_back({{"name", e.name}, {"shape", shape}});
    for (float v : e.values) payload.put_f32(v);
  }
  json j = {
      {"creator", kCreator},
      {"fingerprint", hex16(s.fingerprint())},
      {"kind", "snapshot"},
      {"tensors", std::move(tensors)},
      {"total_params", static_cast<uint64_t>(s.total_params())},
  };
  if (!meta.head_kind.empty()) {
    j["head_kind"] = meta.head_kind;
    j["classes"] = meta.classes;
  }
  return assemble(kSnapMagic, std::move(j), payload.bytes());
}

std::pair<ParameterSnapshot, SnapshotMeta> deserialize_snapshot(const std::vector<uint8_t>& bytes) {
  Opened o = open_container(kSnapMagic, bytes, "snapshot");
  const json& j = o.manifest;
  expect_keys(j, {"creator", "fingerprint", "kind", "payload_fnv", "tensors", "total_params"},
              {"head_kind", "classes"}, "snapshot");
  check_common_header(j, "snapshot", "snapshot");
  if (!j["tensors"].is_array() || !j["total_params"].is_number_unsigned())
    fail(Errc::format, "snapshot: bad manifest");

  ByteReader r(o.payload, o.payload_size);
  std::vector<TensorEntry> entries;
  uint64_t total = 0;
  std::string prev;
  for (const auto& tj : j["tensors"]) {
    if (!tj.is_object()) fail(Errc::format, "snapshot: bad tensor record");
    expect_keys(tj, {"name", "shape"}, {}, "snapshot tensor");
    if (!tj["name"].is_string()) fail(Errc::format, "snapshot: bad tensor name");
    TensorEntry e;
    e.name = tj["name"].get<std::string>();
    if (!prev.empty() && prev >= e.name) fail(Errc::format, "snapshot: tensors out of order");
    prev = e.name;
    e.shape = parse_shape(tj["shape"], "snapshot");
    const int64_t size = TensorT<float>::count(e.shape);
    e.values.resize(static_cast<size_t>(size));
    for (int64_t i = 0; i < size; ++i) {
      e.values[static_cast<size_t>(i)] = r.get_f32();
      if (!std::isfinite(e.values[static_cast<size_t>(i)])) fail(Errc::format, "snapshot: non-finite value");
    }
    total += static_cast<uint64_t>(size);
    entries.push_back(std::move(e));
  }
  if (!r.at_end()) fail(Errc::format, "snapshot: trailing bytes after payload");
  if (total != j["total_params"].get<uint64_t>()) fail(Errc::format, "snapshot: total_params disagrees with shapes");

  ParameterSnapshot s;
  try {
    s = ParameterSnapshot::create(std::move(entries));
  } catch (const Error& e) {
    fail(Errc::format, std::string("snapshot: ") + e.what());
  }
  uint64_t stored_fp;
  if (!j["fingerprint"].is_string() || !parse_hex16(j["fingerprint"].get<std::string>(), stored_fp))
    fail(Errc::format, "snapshot: malformed fingerprint");
  if (stored_fp != s.fingerprint()) fail(Errc::format, "snapshot: fingerprint disagrees with tensor records");

  SnapshotMeta meta;
  if (j.contains("head_kind")) {
    if (!j["head_kind"].is_string() || !j.contains("classes") || !j["classes"].is_number_unsigned())
      fail(Errc::format, "snapshot: bad head metadata");
    meta.head_kind = j["head_kind"].get<std::string>();
    meta.classes = static_cast<int32_t>(j["classes"].get<uint64_t>());
    if (meta.head_kind != "token_cls" && meta.head_kind != "seq_cls")
      fail(Errc::format, "snapshot: unknown head kind");
    if (meta.classes < 2 || meta.classes > 4096) fail(Errc::format, "snapshot: bad class count");
  } else if (j.contains("classes")) {
    fail(Errc::format, "snapshot: classes without head_kind");
  }
  return {std::move(s), std::move(meta)};
}

void save_diff(const std::string& path, const SparseDiff& d) { write_file_bytes(path, serialize_diff(d)); }

SparseDiff load_diff(const std::string& path) {
  try {
    return deserialize_diff(read_file_bytes(path));
  } catch (const Error& e) {
    if (e.code() == Errc::io) throw;
    fail(e.code(), path + ": " + e.what());
  }
}

void save_snapshot(const std::string& path, const ParameterSnapshot& s, const SnapshotMeta& meta) {
  write_file_bytes(path, serialize_snapshot(s, meta));
}

std::pair<ParameterSnapshot, SnapshotMeta> load_snapshot(const std::string& path) {
  try {
    return deserialize_snapshot(read_file_bytes(path));
  } catch (const Error& e) {
    if (e.code() == Errc::io) throw;
    fail(e.code(), path + ": " + e.what());
  }
}

}  // namespace ltsft
