// Text interchange: corpus files (space-separated token ids, optional label
// column), key=value config files, run manifests, and metric tables.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ltsft/data.hpp"

namespace ltsft {

// none: "id id id". token: ids TAB per-token labels. sequence: ids TAB label.
std::string corpus_to_text(const Corpus& corpus, LabelKind kind);
Corpus corpus_from_text(const std::string& text, LabelKind kind);

void save_corpus(const std::string& path, const Corpus& corpus, LabelKind kind);
Corpus load_corpus(const std::string& path, LabelKind kind);

// "key = value" lines; '#' starts a comment; later keys override earlier.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> load_config(const std::string& path);

// FNV-1a 64 content digest of a file, as 16 hex chars.
std::string digest_file(const std::string& path);

struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::map<std::string, std::string> config;   // resolved settings
  std::map<std::string, std::string> inputs;   // path -> content digest
  std::map<std::string, std::string> outputs;  // path -> content digest
  std::map<std::string, double> metrics;
  double wall_clock_sec = 0.0;  // informational; excluded from determinism checks
};

// Canonical JSON (sorted keys); deterministic except wall_clock_sec.
std::string manifest_to_json(const RunManifest& m);
void save_manifest(const std::string& path, const RunManifest& m);

// "name<TAB>value" rows in the given order.
std::string metrics_tsv(const std::vector<std::pair<std::string, double>>& rows);

}  // namespace ltsft
