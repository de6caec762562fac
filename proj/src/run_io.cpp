#include "ltsft/run_io.hpp"

#include <json.hpp>

#include "ltsft/analysis.hpp"
#include "ltsft/fsio.hpp"

namespace ltsft {

namespace {

std::string join_ids(const std::vector<int32_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int32_t> split_ids(const std::string& s, const char* what) {
  std::vector<int32_t> out;
  size_t p = 0;
  while (p < s.size()) {
    while (p < s.size() && s[p] == ' ') ++p;
    if (p >= s.size()) break;
    size_t start = p;
    while (p < s.size() && s[p] != ' ') ++p;
    const std::string tok = s.substr(start, p - start);
    size_t used = 0;
    long v = 0;
    try {
      v = std::stol(tok, &used);
    } catch (const std::exception&) {
      fail(Errc::format, std::string("corpus: bad ") + what + " '" + tok + "'");
    }
    if (used != tok.size() || v < -1 || v > INT32_MAX)
      fail(Errc::format, std::string("corpus: bad ") + what + " '" + tok + "'");
    out.push_back(static_cast<int32_t>(v));
  }
  return out;
}

}  // namespace

std::string corpus_to_text(const Corpus& corpus, LabelKind kind) {
  std::string out;
  for (const Sentence& s : corpus) {
    if (s.ids.empty()) fail(Errc::config, "corpus: empty sentence");
    out += join_ids(s.ids);
    if (kind == LabelKind::token) {
      if (s.tags.size() != s.ids.size()) fail(Errc::config, "corpus: tag/token length mismatch");
      out += '\t';
      out += join_ids(s.tags);
    } else if (kind == LabelKind::sequence) {
      if (s.label < 0) fail(Errc::config, "corpus: sentence lacks a sequence label");
      out += '\t';
      out += std::to_string(s.label);
    }
    out += '\n';
  }
  return out;
}

Corpus corpus_from_text(const std::string& text, LabelKind kind) {
  Corpus out;
  size_t pos = 0;
  int64_t lineno = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++lineno;
    if (line.empty()) continue;
    const std::string where = " (line " + std::to_string(lineno) + ")";

    const size_t tab = line.find('\t');
    if (kind == LabelKind::none) {
      if (tab != std::string::npos) fail(Errc::format, "corpus: unexpected label column" + where);
    } else if (tab == std::string::npos) {
      fail(Errc::format, "corpus: missing label column" + where);
    }
    Sentence s;
    s.ids = split_ids(tab == std::string::npos ? line : line.substr(0, tab), "token id");
    if (s.ids.empty()) fail(Errc::format, "corpus: empty sentence" + where);
    for (int32_t id : s.ids)
      if (id < 0) fail(Errc::format, "corpus: negative token id" + where);
    if (kind == LabelKind::token) {
      s.tags = split_ids(line.substr(tab + 1), "label");
      if (s.tags.size() != s.ids.size()) fail(Errc::format, "corpus: tag/token length mismatch" + where);
    } else if (kind == LabelKind::sequence) {
      const std::vector<int32_t> lab = split_ids(line.substr(tab + 1), "label");
      if (lab.size() != 1 || lab[0] < 0) fail(Errc::format, "corpus: bad sequence label" + where);
      s.label = lab[0];
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_corpus(const std::string& path, const Corpus& corpus, LabelKind kind) {
  write_file_text(path, corpus_to_text(corpus, kind));
}

Corpus load_corpus(const std::string& path, LabelKind kind) {
  try {
    return corpus_from_text(read_file_text(path), kind);
  } catch (const Error& e) {
    if (e.code() == Errc::io) throw;
    fail(e.code(), path + ": " + e.what());
  }
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  size_t pos = 0;
  int64_t lineno = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const char* ws = " \t\r";
      const size_t a = s.find_first_not_of(ws);
      if (a == std::string::npos) return std::string();
      const size_t b = s.find_last_not_of(ws);
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(Errc::format, "config: expected key = value (line " + std::to_string(lineno) + ")");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(Errc::format, "config: empty key (line " + std::to_string(lineno) + ")");
    out[key] = value;
  }
  return out;
}

std::map<std::string, std::string> load_config(const std::string& path) {
  try {
    return parse_config_text(read_file_text(path));
  } catch (const Error& e) {
    if (e.code() == Errc::io) throw;
    fail(e.code(), path + ": " + e.what());
  }
}

std::string digest_file(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  return hex16(fnv1a64(bytes.data(), bytes.size()));
}

std::string manifest_to_json(const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["args"] = m.args;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["metrics"] = nlohmann::json::object();
  for (const auto& [k, v] : m.metrics) j["metrics"][k] = format_metric(v);
  j["wall_clock_sec"] = format_metric(m.wall_clock_sec);
  return j.dump(2) + "\n";
}

void save_manifest(const std::string& path, const RunManifest& m) { write_file_text(path, manifest_to_json(m)); }

std::string metrics_tsv(const std::vector<std::pair<std::string, double>>& rows) {
  std::string out = "metric\tvalue\n";
  for (const auto& [name, value] : rows) out += name + '\t' + format_metric(value) + '\n';
  return out;
}

}  // namespace ltsft
