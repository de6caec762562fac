// Binary artifact containers.
//
// Sparse diff ("SFT1"): magic, LE u32 manifest length, canonical JSON
// manifest, then per tensor in manifest order: LE u32 entry count, that many
// LE u32 strictly ascending flat indices, then that many LE f64 deltas.
//
// Snapshot checkpoint ("SNP1"): same manifest conventions with a dense f32
// payload per tensor.
//
// The manifest's creation metadata embeds a payload integrity digest computed
// over the manifest (with the digest field zeroed) plus the payload, so any
// byte corruption decodes to an error, never to a partial artifact.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltsft/diff.hpp"
#include "ltsft/snapshot.hpp"

namespace ltsft {

inline constexpr const char* kCreator = "ltsft/0.1";

std::vector<uint8_t> serialize_diff(const SparseDiff& d);
SparseDiff deserialize_diff(const std::vector<uint8_t>& bytes);

// Optional head descriptor carried by snapshot containers that hold
// classification heads.
struct SnapshotMeta {
  std::string head_kind;  // "", "token_cls", "seq_cls"
  int32_t classes = 0;
};

std::vector<uint8_t> serialize_snapshot(const ParameterSnapshot& s, const SnapshotMeta& meta = {});
std::pair<ParameterSnapshot, SnapshotMeta> deserialize_snapshot(const std::vector<uint8_t>& bytes);

// File wrappers (throw Errc::io on filesystem trouble).
void save_diff(const std::string& path, const SparseDiff& d);
SparseDiff load_diff(const std::string& path);
void save_snapshot(const std::string& path, const ParameterSnapshot& s, const SnapshotMeta& meta = {});
std::pair<ParameterSnapshot, SnapshotMeta> load_snapshot(const std::string& path);

}  // namespace ltsft
