// ltsft command-line interface: synthetic-suite generation, base pretraining,
// language/task sparse fine-tuning, composition, evaluation, and analyses.
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ltsft/analysis.hpp"
#include "ltsft/container.hpp"
#include "ltsft/fsio.hpp"
#include "ltsft/run_io.hpp"
#include "ltsft/synth.hpp"
#include "ltsft/transfer.hpp"

namespace {

using namespace ltsft;

std::vector<std::string> g_args;  // raw argv tail for manifests

// ---------------------------------------------------------------- settings ---

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "model.vocab", "model.hidden", "model.layers", "model.heads", "model.ffn", "model.max_seq",
      "suite.n_source", "suite.n_target", "suite.anchors_per_cat", "suite.exclusive_per_cat", "suite.zipf_s",
      "suite.seed", "suite.pretrain_sentences", "suite.target_pretrain_share", "suite.lang_sft_sentences",
      "suite.lang_dev_sentences", "suite.task_train_examples", "suite.task_dev_examples", "suite.task_eval_examples",
      "pretrain.steps", "pretrain.lr", "pretrain.batch", "pretrain.seed", "pretrain.dropout",
      "pretrain.mask_fraction", "pretrain.weight_decay",
      "lang.phase1_steps", "lang.phase2_steps", "lang.lr", "lang.batch", "lang.lambda", "lang.budget",
      "lang.strategy", "lang.seed", "lang.dropout", "lang.mask_fraction", "lang.weight_decay", "lang.eval_every",
      "lang.checkpoint",
      "task.phase1_steps", "task.phase2_steps", "task.lr", "task.batch", "task.lambda", "task.budget",
      "task.strategy", "task.seed", "task.head_seed", "task.dropout", "task.weight_decay", "task.eval_every",
      "task.checkpoint", "task.cap",
      "sweep.task_levels", "sweep.lang_levels", "sweep.seeds", "sweep.phase1_steps", "sweep.phase2_steps",
      "sweep.lang_phase1_steps", "sweep.lang_phase2_steps",
      "eval.batch",
  };
  return keys;
}

class Settings {
 public:
  void set(const std::string& key, const std::string& value) {
    if (known_keys().find(key) == known_keys().end()) fail(Errc::config, "unknown setting: " + key);
    kv_[key] = value;
  }

  void load_file(const std::string& path) {
    for (const auto& [k, v] : load_config(path)) set(k, v);
  }

  bool has(const std::string& key) const { return kv_.find(key) != kv_.end(); }

  std::string str(const std::string& key, const std::string& def) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
  }

  int64_t i64(const std::string& key, int64_t def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    return parse_i64(key, it->second);
  }

  uint64_t u64(const std::string& key, uint64_t def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    return parse_u64(key, it->second);
  }

  double f64(const std::string& key, double def) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    return parse_f64(key, it->second);
  }

  std::vector<double> f64_list(const std::string& key, const std::string& def) const {
    std::vector<double> out;
    for (const std::string& part : split_commas(str(key, def))) out.push_back(parse_f64(key, part));
    return out;
  }

  std::vector<uint64_t> u64_list(const std::string& key, const std::string& def) const {
    std::vector<uint64_t> out;
    for (const std::string& part : split_commas(str(key, def))) out.push_back(parse_u64(key, part));
    return out;
  }

  const std::map<std::string, std::string>& raw() const { return kv_; }

 private:
  static std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= s.size()) {
      size_t comma = s.find(',', pos);
      if (comma == std::string::npos) comma = s.size();
      const std::string part = s.substr(pos, comma - pos);
      if (!part.empty()) out.push_back(part);
      pos = comma + 1;
    }
    return out;
  }

  static int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
      size_t used = 0;
      const long long r = std::stoll(v, &used);
      if (used == v.size()) return r;
    } catch (const std::exception&) {
    }
    fail(Errc::config, "setting " + key + ": expected an integer, got '" + v + "'");
  }

  static uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
      size_t used = 0;
      const unsigned long long r = std::stoull(v, &used);
      if (used == v.size() && v[0] != '-') return r;
    } catch (const std::exception&) {
    }
    fail(Errc::config, "setting " + key + ": expected an unsigned integer, got '" + v + "'");
  }

  static double parse_f64(const std::string& key, const std::string& v) {
    try {
      size_t used = 0;
      const double r = std::stod(v, &used);
      if (used == v.size()) return r;
    } catch (const std::exception&) {
    }
    fail(Errc::config, "setting " + key + ": expected a number, got '" + v + "'");
  }

  std::map<std::string, std::string> kv_;
};

SuiteConfig suite_from(const Settings& s) {
  SuiteConfig c;
  c.n_source = static_cast<int>(s.i64("suite.n_source", c.n_source));
  c.n_target = static_cast<int>(s.i64("suite.n_target", c.n_target));
  c.anchors_per_cat = static_cast<int>(s.i64("suite.anchors_per_cat", c.anchors_per_cat));
  c.exclusive_per_cat = static_cast<int>(s.i64("suite.exclusive_per_cat", c.exclusive_per_cat));
  c.zipf_s = s.f64("suite.zipf_s", c.zipf_s);
  c.seed = s.u64("suite.seed", c.seed);
  c.pretrain_sentences = s.i64("suite.pretrain_sentences", c.pretrain_sentences);
  c.target_pretrain_share = s.f64("suite.target_pretrain_share", c.target_pretrain_share);
  c.lang_sft_sentences = s.i64("suite.lang_sft_sentences", c.lang_sft_sentences);
  c.lang_dev_sentences = s.i64("suite.lang_dev_sentences", c.lang_dev_sentences);
  c.task_train_examples = s.i64("suite.task_train_examples", c.task_train_examples);
  c.task_dev_examples = s.i64("suite.task_dev_examples", c.task_dev_examples);
  c.task_eval_examples = s.i64("suite.task_eval_examples", c.task_eval_examples);
  c.validate();
  return c;
}

ModelSpec model_from(const Settings& s) {
  ModelSpec spec;
  spec.vocab = s.i64("model.vocab", 0);
  if (spec.vocab == 0) spec.vocab = suite_from(s).required_vocab();
  spec.hidden = s.i64("model.hidden", spec.hidden);
  spec.layers = s.i64("model.layers", spec.layers);
  spec.heads = s.i64("model.heads", spec.heads);
  spec.ffn = s.i64("model.ffn", spec.ffn);
  spec.max_seq = s.i64("model.max_seq", spec.max_seq);
  spec.validate();
  return spec;
}

// Shared TrainConfig keys under a prefix ("lang" / "task").
TrainConfig train_cfg_from(const Settings& s, const std::string& p, double default_lambda) {
  TrainConfig cfg;
  cfg.phase1_steps = s.i64(p + ".phase1_steps", p == "lang" ? 40 : 30);
  cfg.phase2_steps = s.i64(p + ".phase2_steps", p == "lang" ? 120 : 100);
  cfg.batch_size = s.i64(p + ".batch", 8);
  cfg.lr0 = s.f64(p + ".lr", 5e-4);
  cfg.lambda_l1 = s.f64(p + ".lambda", default_lambda);
  cfg.dropout = s.f64(p + ".dropout", 0.1);
  cfg.mlm_mask_fraction = s.f64(p + ".mask_fraction", 0.15);
  cfg.seed = s.u64(p + ".seed", 1);
  cfg.head_seed = s.u64(p + ".head_seed", cfg.seed);
  cfg.weight_decay = s.f64(p + ".weight_decay", 0.01);
  cfg.eval_every = s.i64(p + ".eval_every", 0);
  const std::string ck = s.str(p + ".checkpoint", "final");
  if (ck == "final") cfg.checkpoint = CheckpointSelect::final_step;
  else if (ck == "best") cfg.checkpoint = CheckpointSelect::best_on_dev;
  else fail(Errc::config, "setting " + p + ".checkpoint: expected final|best");
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- manifest ---

class RunRecorder {
 public:
  RunRecorder(std::string command, const Settings& s, std::string out_dir)
      : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    m_.command = std::move(command);
    m_.args = g_args;
    m_.config = s.raw();
  }

  void input(const std::string& path) { m_.inputs[path] = digest_file(path); }
  void output(const std::string& path) { m_.outputs[path] = digest_file(path); }
  void metric(const std::string& name, double v) { m_.metrics[name] = v; }

  void write_metrics_tsv(const std::string& path, const std::vector<std::pair<std::string, double>>& rows) {
    write_file_text(path, metrics_tsv(rows));
    output(path);
    for (const auto& [name, value] : rows) metric(name, value);
  }

  void finish(const std::string& suffix = "") {
    m_.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    ensure_dir(out_dir_ + "/manifests");
    save_manifest(out_dir_ + "/manifests/" + m_.command + suffix + ".json", m_);
  }

 private:
  RunManifest m_;
  std::string out_dir_;
  std::chrono::steady_clock::time_point start_;
};

// ------------------------------------------------------------------- paths ---

std::string dpath(const std::string& out, const std::string& name) { return out + "/data/" + name; }
std::string mlm_file(const std::string& tag) { return tag + ".mlm.txt"; }
std::string mlm_dev_file(const std::string& tag) { return tag + ".mlm_dev.txt"; }

std::string task_file(const std::string& tag, TaskKind kind, const std::string& split) {
  return tag + "." + task_kind_name(kind) + "_" + split + ".txt";
}

std::string file_stem(const std::string& path) {
  const size_t slash = path.find_last_of('/');
  std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  const size_t dot = name.find_last_of('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

// ----------------------------------------------------------------- helpers ---

void check_vocab(const Corpus& corpus, int64_t vocab, const std::string& what) {
  for (const Sentence& s : corpus)
    for (int32_t id : s.ids)
      if (id >= vocab) fail(Errc::config, what + ": token id " + std::to_string(id) + " exceeds model vocabulary");
}

ParameterSnapshot load_base(const std::string& out_dir, const MicroTransformer& model, RunRecorder& rec) {
  const std::string path = out_dir + "/base.snp";
  auto [snap, meta] = load_snapshot(path);
  if (!meta.head_kind.empty()) fail(Errc::format, path + ": expected a body snapshot, found a head artifact");
  if (snap.fingerprint() != model.fingerprint())
    fail(Errc::fingerprint, path + ": snapshot does not match the configured model");
  rec.input(path);
  return std::move(snap);
}

MaskStrategy strategy_from(const Settings& s, const std::string& prefix, uint64_t seed) {
  MaskStrategy strat;
  strat.kind = mask_kind_from_name(s.str(prefix + ".strategy", "lt"));
  strat.policy = GroupPolicy::standard();
  strat.seed = seed;
  return strat;
}

int threads_from_env() {
  const char* env = std::getenv("SFT_COMPOSE_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  const std::string v(env);
  try {
    size_t used = 0;
    const int n = std::stoi(v, &used);
    if (used == v.size() && n >= 1) return n;
  } catch (const std::exception&) {
  }
  fail(Errc::config, "SFT_COMPOSE_THREADS: expected a positive integer, got '" + v + "'");
}

// ---------------------------------------------------------------- commands ---

struct CommonOpts {
  std::string config;
  std::string out_dir = "run";
  std::string seed;  // raw string; overrides the command's seed setting
};

Settings settings_from(const CommonOpts& c, const std::string& seed_key) {
  Settings s;
  if (!c.config.empty()) s.load_file(c.config);
  if (!c.seed.empty()) s.set(seed_key, c.seed);
  return s;
}

void cmd_gen_data(const CommonOpts& c) {
  Settings s = settings_from(c, "suite.seed");
  RunRecorder rec("gen-data", s, c.out_dir);
  if (!c.config.empty()) rec.input(c.config);
  const Suite suite = build_suite(suite_from(s));
  ensure_dir(c.out_dir + "/data");

  auto save = [&](const std::string& name, const Corpus& corpus, LabelKind kind) {
    const std::string path = dpath(c.out_dir, name);
    save_corpus(path, corpus, kind);
    rec.output(path);
  };
  save("base_pretrain.txt", suite.base_pretrain, LabelKind::none);
  save("base_dev.txt", suite.base_dev, LabelKind::none);
  auto save_lang = [&](const LanguageData& d) {
    save(mlm_file(d.spec.tag), d.sft_corpus, LabelKind::none);
    save(mlm_dev_file(d.spec.tag), d.sft_dev, LabelKind::none);
    save(task_file(d.spec.tag, TaskKind::tagging, "train"), d.tag_train, LabelKind::token);
    save(task_file(d.spec.tag, TaskKind::tagging, "dev"), d.tag_dev, LabelKind::token);
    save(task_file(d.spec.tag, TaskKind::tagging, "eval"), d.tag_eval, LabelKind::token);
    save(task_file(d.spec.tag, TaskKind::agreement, "train"), d.agree_train, LabelKind::sequence);
    save(task_file(d.spec.tag, TaskKind::agreement, "dev"), d.agree_dev, LabelKind::sequence);
    save(task_file(d.spec.tag, TaskKind::agreement, "eval"), d.agree_eval, LabelKind::sequence);
  };
  for (const auto& d : suite.source) save_lang(d);
  for (const auto& d : suite.target) save_lang(d);
  rec.finish();
  std::cout << "wrote suite data for " << suite.source.size() << " source and " << suite.target.size()
            << " target languages under " << c.out_dir << "/data\n";
}

void cmd_pretrain(const CommonOpts& c) {
  Settings s = settings_from(c, "pretrain.seed");
  RunRecorder rec("pretrain", s, c.out_dir);
  if (!c.config.empty()) rec.input(c.config);

  const MicroTransformer model(model_from(s));
  const int64_t vocab = model.spec().vocab;
  const std::string mix_path = dpath(c.out_dir, "base_pretrain.txt");
  const std::string dev_path = dpath(c.out_dir, "base_dev.txt");
  const Corpus mix = load_corpus(mix_path, LabelKind::none);
  const Corpus dev = load_corpus(dev_path, LabelKind::none);
  rec.input(mix_path);
  rec.input(dev_path);
  check_vocab(mix, vocab, mix_path);
  check_vocab(dev, vocab, dev_path);

  TrainConfig cfg;
  cfg.batch_size = s.i64("pretrain.batch", 16);
  cfg.lr0 = s.f64("pretrain.lr", 1e-3);
  cfg.dropout = s.f64("pretrain.dropout", 0.1);
  cfg.mlm_mask_fraction = s.f64("pretrain.mask_fraction", 0.15);
  cfg.seed = s.u64("pretrain.seed", 7);
  cfg.head_seed = cfg.seed;
  cfg.weight_decay = s.f64("pretrain.weight_decay", 0.01);
  cfg.validate();
  const int64_t steps = s.i64("pretrain.steps", 400);

  const ParameterSnapshot init = model.init_params(cfg.seed);
  MlmSource source(&mix, cfg.batch_size, cfg.seed, cfg.mlm_mask_fraction, vocab, "base");
  const HeadSpec none{};
  std::cout << "pretraining base model (" << steps << " steps, vocab " << vocab << ")\n";
  PhaseResult pr = train_phase(model, none, init, ActiveSet::from_policy(model.layout(), GroupPolicy::none()),
                               source, cfg, steps, nullptr, nullptr, &std::cout);

  const double dev_before = mlm_dev_loss(model, init, dev, cfg.mlm_mask_fraction, vocab, cfg.batch_size, cfg.seed);
  const double dev_after = mlm_dev_loss(model, pr.body, dev, cfg.mlm_mask_fraction, vocab, cfg.batch_size, cfg.seed);

  const std::string out_path = c.out_dir + "/base.snp";
  save_snapshot(out_path, pr.body);
  rec.output(out_path);
  ensure_dir(c.out_dir + "/metrics");
  rec.write_metrics_tsv(c.out_dir + "/metrics/pretrain.tsv",
                        {{"final_train_loss", pr.final_loss},
                         {"dev_mlm_loss_initial", dev_before},
                         {"dev_mlm_loss_final", dev_after}});
  rec.finish();
  std::cout << "base model saved to " << out_path << " (dev mlm loss " << format_metric(dev_before) << " -> "
            << format_metric(dev_after) << ")\n";
}

struct SftOpts {
  std::string budget, lambda, strategy;
};

void apply_sft_overrides(Settings& s, const SftOpts& o, const std::string& prefix) {
  if (!o.budget.empty()) s.set(prefix + ".budget", o.budget);
  if (!o.lambda.empty()) s.set(prefix + ".lambda", o.lambda);
  if (!o.strategy.empty()) s.set(prefix + ".strategy", o.strategy);
}

void cmd_train_lang(const CommonOpts& c, const SftOpts& o, const std::string& tag) {
  Settings s = settings_from(c, "lang.seed");
  apply_sft_overrides(s, o, "lang");
  RunRecorder rec("train-lang", s, c.out_dir);
  if (!c.config.empty()) rec.input(c.config);

  const MicroTransformer model(model_from(s));
  const int64_t vocab = model.spec().vocab;
  const ParameterSnapshot theta0 = load_base(c.out_dir, model, rec);

  const std::string corpus_path = dpath(c.out_dir, mlm_file(tag));
  const std::string dev_path = dpath(c.out_dir, mlm_dev_file(tag));
  const Corpus corpus = load_corpus(corpus_path, LabelKind::none);
  const Corpus dev = load_corpus(dev_path, LabelKind::none);
  rec.input(corpus_path);
  rec.input(dev_path);
  check_vocab(corpus, vocab, corpus_path);
  check_vocab(dev, vocab, dev_path);

  TrainConfig cfg = train_cfg_from(s, "lang", 0.1);
  const MaskStrategy strat = strategy_from(s, "lang", cfg.seed);
  const double budget = s.f64("lang.budget", 0.04);

  std::cout << "language sft for " << tag << " (strategy " << mask_kind_name(strat.kind) << ", budget "
            << format_metric(budget) << ")\n";
  LanguageArtifact art =
      train_language_sft(model, theta0, corpus, dev, cfg, strat, budget, vocab, tag, &std::cout);

  const double dev_before = mlm_dev_loss(model, theta0, dev, cfg.mlm_mask_fraction, vocab, cfg.batch_size, cfg.seed);
  const ParameterSnapshot adapted = apply_diffs(theta0, {&art.diff});
  const double dev_after = mlm_dev_loss(model, adapted, dev, cfg.mlm_mask_fraction, vocab, cfg.batch_size, cfg.seed);

  ensure_dir(c.out_dir + "/langs");
  const std::string out_path = c.out_dir + "/langs/" + tag + ".sft";
  save_diff(out_path, art.diff);
  rec.output(out_path);
  ensure_dir(c.out_dir + "/metrics");
  rec.write_metrics_tsv(c.out_dir + "/metrics/train-lang_" + tag + ".tsv",
                        {{"phase1_final_loss", art.phase1_final_loss},
                         {"phase2_final_loss", art.phase2_final_loss},
                         {"dev_mlm_loss_base", dev_before},
                         {"dev_mlm_loss_adapted", dev_after},
                         {"density", diff_density(art.diff)}});
  rec.finish("_" + tag);
  std::cout << "language sft saved to " << out_path << " (dev mlm loss " << format_metric(dev_before) << " -> "
            << format_metric(dev_after) << ")\n";
}

void cmd_train_task(const CommonOpts& c, const SftOpts& o, const std::string& task_name,
                    const std::vector<std::string>& sources, bool no_source_sft, const std::string& cap_str,
                    const std::string& tag_override) {
  Settings s = settings_from(c, "task.seed");
  apply_sft_overrides(s, o, "task");
  if (!cap_str.empty()) s.set("task.cap", cap_str);
  RunRecorder rec("train-task", s, c.out_dir);
  if (!c.config.empty()) rec.input(c.config);

  const TaskKind kind = task_kind_from_name(task_name);
  const LabelKind lk = label_kind_for_task(kind);
  const MicroTransformer model(model_from(s));
  const ParameterSnapshot theta0 = load_base(c.out_dir, model, rec);

  TrainConfig cfg = train_cfg_from(s, "task", 0.0);
  const MaskStrategy strat = strategy_from(s, "task", cfg.seed);
  const double budget = s.f64("task.budget", 0.04);
  if (sources.empty()) fail(Errc::usage, "train-task: at least one --source is required");

  auto load_lang_artifact = [&](const std::string& tag) {
    const std::string path = c.out_dir + "/langs/" + tag + ".sft";
    SparseDiff d = load_diff(path);
    if (d.fingerprint() != model.fingerprint())
      fail(Errc::fingerprint, path + ": artifact does not match the configured model");
    rec.input(path);
    return LanguageArtifact{tag, std::move(d)};
  };
  auto load_task_corpus = [&](const std::string& tag, const std::string& split) {
    const std::string path = dpath(c.out_dir, task_file(tag, kind, split));
    Corpus corpus = load_corpus(path, lk);
    rec.input(path);
    return corpus;
  };

  TaskArtifact art;
  if (sources.size() == 1) {
    const std::string& src = sources[0];
    LanguageArtifact lart;
    if (!no_source_sft) lart = load_lang_artifact(src);
    const Corpus train = load_task_corpus(src, "train");
    const Corpus dev = load_task_corpus(src, "dev");
    std::cout << "task sft (" << task_name << ") on " << src << (no_source_sft ? " without" : " with")
              << " source-language adaptation\n";
    art = train_task_sft(model, theta0, no_source_sft ? nullptr : &lart, train, dev, kind, cfg, strat, budget, src,
                         &std::cout);
  } else {
    if (no_source_sft) fail(Errc::usage, "train-task: --no-source-sft applies to single-source training only");
    std::vector<LanguageArtifact> arts;
    arts.reserve(sources.size());
    std::map<std::string, Corpus> corpora;
    for (const std::string& src : sources) {
      arts.push_back(load_lang_artifact(src));
      corpora.emplace(src, load_task_corpus(src, "train"));
    }
    std::vector<const LanguageArtifact*> art_ptrs;
    std::map<std::string, const Corpus*> corpus_ptrs;
    for (size_t i = 0; i < arts.size(); ++i) {
      art_ptrs.push_back(&arts[i]);
      corpus_ptrs.emplace(arts[i].tag, &corpora.at(arts[i].tag));
    }
    const int64_t cap = s.i64("task.cap", 100000);
    std::cout << "multi-source task sft (" << task_name << ") on " << sources.size() << " languages (cap " << cap
              << ")\n";
    art = train_task_sft_multi(model, theta0, art_ptrs, corpus_ptrs, kind, cfg, strat, budget, cap, &std::cout);
  }

  const std::string name = tag_override.empty() ? task_name : tag_override;
  ensure_dir(c.out_dir + "/tasks");
  const std::string diff_path = c.out_dir + "/tasks/" + name + ".sft";
  const std::string head_path = c.out_dir + "/tasks/" + name + ".head";
  save_diff(diff_path, art.diff);
  save_snapshot(head_path, art.head, SnapshotMeta{head_kind_name(art.hspec.kind), art.hspec.classes});
  rec.output(diff_path);
  rec.output(head_path);
  ensure_dir(c.out_dir + "/metrics");
  rec.write_metrics_tsv(c.out_dir + "/metrics/train-task_" + name + ".tsv",
                        {{"phase1_final_loss", art.phase1_final_loss},
                         {"phase2_final_loss", art.phase2_final_loss},
                         {"source_dev_metric", art.source_dev_metric},
                         {"density", diff_density(art.diff)}});
  rec.finish("_" + name);
  std::cout << "task sft saved to " << diff_path << " and " << head_path << "\n";
}

ParameterSnapshot compose_body(const std::string& base_path, const std::string& task_sft,
                               const std::string& target_sft, bool ta_only, RunRecorder& rec) {
  if (ta_only && !target_sft.empty())
    fail(Errc::usage, "--ta-only and --target-sft are mutually exclusive");
  auto [base, meta] = load_snapshot(base_path);
  if (!meta.head_kind.empty()) fail(Errc::format, base_path + ": expected a body snapshot, found a head artifact");
  rec.input(base_path);
  SparseDiff task = load_diff(task_sft);
  rec.input(task_sft);
  std::vector<const SparseDiff*> parts{&task};
  SparseDiff target;
  if (!target_sft.empty()) {
    target = load_diff(target_sft);
    rec.input(target_sft);
    parts.push_back(&target);
  }
  return apply_diffs(base, parts);
}

void cmd_compose(const CommonOpts& c, const std::string& base_path, const std::string& task_sft,
                 const std::string& target_sft, bool ta_only, const std::string& out_path) {
  Settings s = settings_from(c, "suite.seed");
  RunRecorder rec("compose", s, c.out_dir);
  const ParameterSnapshot composed = compose_body(base_path, task_sft, target_sft, ta_only, rec);
  save_snapshot(out_path, composed);
  rec.output(out_path);
  rec.finish("_" + file_stem(out_path));
  std::cout << "composed snapshot saved to " << out_path << "\n";
}

void cmd_eval(const CommonOpts& c, const std::string& task_name, const std::string& lang,
              const std::string& data_path_in, const std::string& composed_path, const std::string& base_path,
              const std::string& task_sft, const std::string& target_sft, bool ta_only,
              const std::string& head_path_in, const std::string& out_path_in) {
  Settings s = settings_from(c, "suite.seed");
  RunRecorder rec("eval", s, c.out_dir);
  if (!c.config.empty()) rec.input(c.config);

  const TaskKind kind = task_kind_from_name(task_name);
  const MicroTransformer model(model_from(s));

  std::string data_path = data_path_in;
  if (data_path.empty()) {
    if (lang.empty()) fail(Errc::usage, "eval: provide --data or --lang");
    data_path = dpath(c.out_dir, task_file(lang, kind, "eval"));
  }
  const Corpus data = load_corpus(data_path, label_kind_for_task(kind));
  rec.input(data_path);

  ParameterSnapshot body;
  if (!composed_path.empty()) {
    if (!task_sft.empty() || !target_sft.empty())
      fail(Errc::usage, "eval: --composed excludes --task-sft/--target-sft");
    auto [snap, meta] = load_snapshot(composed_path);
    if (!meta.head_kind.empty())
      fail(Errc::format, composed_path + ": expected a body snapshot, found a head artifact");
    body = std::move(snap);
    rec.input(composed_path);
  } else {
    if (task_sft.empty()) fail(Errc::usage, "eval: provide --composed or --task-sft");
    const std::string base = base_path.empty() ? c.out_dir + "/base.snp" : base_path;
    body = compose_body(base, task_sft, target_sft, ta_only, rec);
  }
  if (body.fingerprint() != model.fingerprint())
    fail(Errc::fingerprint, "eval: composed snapshot does not match the configured model");

  std::string head_path = head_path_in;
  if (head_path.empty()) {
    if (task_sft.empty()) fail(Errc::usage, "eval: provide --head (no --task-sft to derive it from)");
    head_path = task_sft.size() > 4 && task_sft.substr(task_sft.size() - 4) == ".sft"
                    ? task_sft.substr(0, task_sft.size() - 4) + ".head"
                    : task_sft + ".head";
  }
  auto [head, hmeta] = load_snapshot(head_path);
  rec.input(head_path);
  const HeadSpec expect = head_for_task(kind);
  if (hmeta.head_kind != head_kind_name(expect.kind) || hmeta.classes != expect.classes)
    fail(Errc::config, head_path + ": head artifact does not match task " + task_name);

  const int64_t batch = s.i64("eval.batch", 16);
  const MetricReport rep = evaluate(model, body, expect, head, data, kind, batch, lang.empty() ? "eval" : lang);

  std::vector<std::pair<std::string, double>> rows{{"accuracy", rep.accuracy},
                                                   {"examples", static_cast<double>(rep.examples)}};
  if (kind == TaskKind::tagging) rows.insert(rows.begin() + 1, {"span_f1", rep.span_f1});
  std::string out_path = out_path_in;
  if (out_path.empty()) {
    ensure_dir(c.out_dir + "/metrics");
    out_path = c.out_dir + "/metrics/eval_" + task_name + (lang.empty() ? "" : "_" + lang) + ".tsv";
  }
  rec.write_metrics_tsv(out_path, rows);
  rec.finish("_" + file_stem(out_path));
  std::cout << "accuracy " << format_metric(rep.accuracy);
  if (kind == TaskKind::tagging) std::cout << " span_f1 " << format_metric(rep.span_f1);
  std::cout << " examples " << rep.examples << "\n";
}

void cmd_sweep_density(const CommonOpts& c, const std::string& task_name) {
  Settings s = settings_from(c, "suite.seed");
  RunRecorder rec("sweep-density", s, c.out_dir);
  if (!c.config.empty()) rec.input(c.config);

  const TaskKind kind = task_kind_from_name(task_name);
  const Suite suite = build_suite(suite_from(s));
  const MicroTransformer model(model_from(s));
  const int64_t vocab = model.spec().vocab;
  const ParameterSnapshot theta0 = load_base(c.out_dir, model, rec);

  TrainConfig lang_cfg = train_cfg_from(s, "lang", 0.1);
  lang_cfg.phase1_steps = s.i64("sweep.lang_phase1_steps", 15);
  lang_cfg.phase2_steps = s.i64("sweep.lang_phase2_steps", 40);
  TrainConfig task_cfg = train_cfg_from(s, "task", 0.0);
  task_cfg.phase1_steps = s.i64("sweep.phase1_steps", 15);
  task_cfg.phase2_steps = s.i64("sweep.phase2_steps", 40);

  const std::vector<double> task_levels = s.f64_list("sweep.task_levels", "0.05,0.2");
  const std::vector<double> lang_levels = s.f64_list("sweep.lang_levels", "0.05,0.2");
  const std::vector<uint64_t> seeds = s.u64_list("sweep.seeds", "1");
  const int threads = threads_from_env();
  const Corpus empty_dev;

  CellFn cell = [&](double task_density, double lang_density, uint64_t seed) {
    const LanguageData& src = suite.source.front();
    TrainConfig lc = lang_cfg;
    lc.seed = derive_key(seed, "sweep-lang", src.spec.tag);
    lc.head_seed = lc.seed;
    const MaskStrategy lstrat{MaskKind::lottery_ticket_topk, GroupPolicy::standard(), lc.seed};
    LanguageArtifact src_art = train_language_sft(model, theta0, src.sft_corpus, empty_dev, lc, lstrat, lang_density,
                                                  vocab, src.spec.tag);

    TrainConfig tc = task_cfg;
    tc.seed = derive_key(seed, "sweep-task");
    tc.head_seed = tc.seed;
    const MaskStrategy tstrat{MaskKind::lottery_ticket_topk, GroupPolicy::standard(), tc.seed};
    const Corpus& train = kind == TaskKind::tagging ? src.tag_train : src.agree_train;
    TaskArtifact task_art = train_task_sft(model, theta0, &src_art, train, empty_dev, kind, tc, tstrat, task_density,
                                           src.spec.tag);

    double sum = 0.0;
    for (const LanguageData& tgt : suite.target) {
      TrainConfig tl = lang_cfg;
      tl.seed = derive_key(seed, "sweep-lang", tgt.spec.tag);
      tl.head_seed = tl.seed;
      const MaskStrategy ts{MaskKind::lottery_ticket_topk, GroupPolicy::standard(), tl.seed};
      LanguageArtifact tgt_art = train_language_sft(model, theta0, tgt.sft_corpus, empty_dev, tl, ts, lang_density,
                                                    vocab, tgt.spec.tag);
      const ParameterSnapshot body = zero_shot_apply(theta0, task_art, &tgt_art);
      const Corpus& eval_set = kind == TaskKind::tagging ? tgt.tag_eval : tgt.agree_eval;
      sum += evaluate(model, body, task_art.hspec, task_art.head, eval_set, kind, task_cfg.batch_size, tgt.spec.tag)
                 .accuracy;
    }
    return sum / static_cast<double>(suite.target.size());
  };

  std::cout << "density sweep (" << task_levels.size() << "x" << lang_levels.size() << " grid, " << seeds.size()
            << " seed(s), " << threads << " thread(s))\n";
  const SweepGrid grid = density_sweep(task_levels, lang_levels, seeds, cell, threads);

  ensure_dir(c.out_dir + "/metrics");
  const std::string out_path = c.out_dir + "/metrics/sweep_" + task_name + ".tsv";
  write_file_text(out_path, sweep_tsv(grid));
  rec.output(out_path);
  rec.finish("_" + task_name);
  int failed = 0;
  for (const SweepCell& cellr : grid.cells)
    if (cellr.failed) ++failed;
  std::cout << "sweep grid written to " << out_path << " (" << grid.cells.size() << " cells, " << failed
            << " failed)\n";
}

void cmd_overlap(const CommonOpts& c, const std::vector<std::string>& sft_paths, const std::string& out_path_in) {
  Settings s = settings_from(c, "suite.seed");
  RunRecorder rec("overlap", s, c.out_dir);
  if (sft_paths.size() < 2) fail(Errc::usage, "overlap: need at least two artifacts");

  std::vector<LanguageArtifact> arts;
  arts.reserve(sft_paths.size());
  for (const std::string& path : sft_paths) {
    arts.push_back(LanguageArtifact{file_stem(path), load_diff(path)});
    rec.input(path);
  }
  std::vector<const LanguageArtifact*> ptrs;
  for (const auto& a : arts) ptrs.push_back(&a);
  const OverlapMatrix m = overlap_matrix(ptrs);
  const std::string tsv = overlap_tsv(m);

  std::string out_path = out_path_in;
  if (out_path.empty()) {
    ensure_dir(c.out_dir + "/metrics");
    out_path = c.out_dir + "/metrics/overlap.tsv";
  }
  write_file_text(out_path, tsv);
  rec.output(out_path);
  rec.finish();
  std::cout << tsv;
}

void cmd_inspect(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() >= 4 && bytes[0] == 'S' && bytes[1] == 'F' && bytes[2] == 'T' && bytes[3] == '1') {
    const SparseDiff d = deserialize_diff(bytes);
    std::cout << "kind\tdiff\n";
    std::cout << "fingerprint\t" << hex16(d.fingerprint()) << "\n";
    std::cout << "total_params\t" << d.total_params() << "\n";
    std::cout << "tensors\t" << d.tensor_count() << "\n";
    std::cout << "entries\t" << d.support_count() << "\n";
    std::cout << "density\t" << format_metric(diff_density(d)) << "\n";
    if (d.has_mask()) std::cout << "mask_budget\t" << d.mask().popcount() << "\n";
    else std::cout << "mask_budget\t-\n";
    for (size_t t = 0; t < d.tensor_count(); ++t) {
      const DiffTensor& dt = d.tensor(t);
      std::cout << "tensor\t" << dt.name << "\t" << shape_str(dt.shape) << "\t" << dt.idx.size() << "\n";
    }
    return;
  }
  if (bytes.size() >= 4 && bytes[0] == 'S' && bytes[1] == 'N' && bytes[2] == 'P' && bytes[3] == '1') {
    const auto [snap, meta] = deserialize_snapshot(bytes);
    std::cout << "kind\tsnapshot\n";
    std::cout << "fingerprint\t" << hex16(snap.fingerprint()) << "\n";
    std::cout << "total_params\t" << snap.total_params() << "\n";
    std::cout << "tensors\t" << snap.tensor_count() << "\n";
    if (!meta.head_kind.empty())
      std::cout << "head_kind\t" << meta.head_kind << "\nclasses\t" << meta.classes << "\n";
    for (size_t t = 0; t < snap.tensor_count(); ++t) {
      const TensorEntry& e = snap.entry(t);
      std::cout << "tensor\t" << e.name << "\t" << shape_str(e.shape) << "\t" << e.size() << "\n";
    }
    return;
  }
  fail(Errc::format, path + ": not an artifact container (bad magic)");
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) g_args.emplace_back(argv[i]);

  CLI::App app{"lottery-ticket sparse fine-tuning toolkit"};
  app.require_subcommand(1);

  CommonOpts common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "key = value settings file");
    sub->add_option("--out-dir", common.out_dir, "run directory (default: run)");
    sub->add_option("--seed", common.seed, "override the command's seed");
  };

  SftOpts sft;
  auto add_sft = [&](CLI::App* sub) {
    sub->add_option("--budget-k", sft.budget, "mask budget: fraction <= 1.0 or absolute count");
    sub->add_option("--lambda", sft.lambda, "L1 anchor strength");
    sub->add_option("--strategy", sft.strategy, "mask strategy: lt | rand | bitfit");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic language suite");
  add_common(gen);
  gen->callback([&] { cmd_gen_data(common); });

  CLI::App* pre = app.add_subcommand("pretrain", "train the multilingual base model");
  add_common(pre);
  pre->callback([&] { cmd_pretrain(common); });

  std::string lang_tag;
  CLI::App* tl = app.add_subcommand("train-lang", "train a language SFT (masked-token objective)");
  add_common(tl);
  add_sft(tl);
  tl->add_option("--lang", lang_tag, "language tag")->required();
  tl->callback([&] { cmd_train_lang(common, sft, lang_tag); });

  std::string task_name, task_cap, task_tag;
  std::vector<std::string> task_sources;
  bool no_source_sft = false;
  CLI::App* tt = app.add_subcommand("train-task", "train a task SFT on one or more source languages");
  add_common(tt);
  add_sft(tt);
  tt->add_option("--task", task_name, "task: tagging | agreement")->required();
  tt->add_option("--source", task_sources, "source language tag (repeatable)")->required();
  tt->add_flag("--no-source-sft", no_source_sft, "train on the plain base model");
  tt->add_option("--cap", task_cap, "per-language example cap (multi-source)");
  tt->add_option("--tag", task_tag, "artifact name (default: task name)");
  tt->callback([&] { cmd_train_task(common, sft, task_name, task_sources, no_source_sft, task_cap, task_tag); });

  std::string base_path, task_sft_path, target_sft_path, out_path;
  bool ta_only = false;
  CLI::App* co = app.add_subcommand("compose", "apply task (and target language) diffs to a base snapshot");
  add_common(co);
  co->add_option("--base", base_path, "base snapshot (default: <out-dir>/base.snp)");
  co->add_option("--task-sft", task_sft_path, "task diff artifact")->required();
  co->add_option("--target-sft", target_sft_path, "target language diff artifact");
  co->add_flag("--ta-only", ta_only, "task adaptation only (no language diff)");
  co->add_option("--out", out_path, "output snapshot path")->required();
  co->callback([&] {
    cmd_compose(common, base_path.empty() ? common.out_dir + "/base.snp" : base_path, task_sft_path, target_sft_path,
                ta_only, out_path);
  });

  std::string eval_lang, eval_data, eval_composed, eval_head, eval_out;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a composed model on task data");
  add_common(ev);
  ev->add_option("--task", task_name, "task: tagging | agreement")->required();
  ev->add_option("--lang", eval_lang, "evaluation language tag");
  ev->add_option("--data", eval_data, "explicit evaluation data file");
  ev->add_option("--composed", eval_composed, "pre-composed body snapshot");
  ev->add_option("--base", base_path, "base snapshot (default: <out-dir>/base.snp)");
  ev->add_option("--task-sft", task_sft_path, "task diff artifact");
  ev->add_option("--target-sft", target_sft_path, "target language diff artifact");
  ev->add_flag("--ta-only", ta_only, "task adaptation only (no language diff)");
  ev->add_option("--head", eval_head, "head artifact (default: task sft path with .head)");
  ev->add_option("--out", eval_out, "metrics TSV path");
  ev->callback([&] {
    cmd_eval(common, task_name, eval_lang, eval_data, eval_composed, base_path, task_sft_path, target_sft_path,
             ta_only, eval_head, eval_out);
  });

  CLI::App* sw = app.add_subcommand("sweep-density", "task x language density grid");
  add_common(sw);
  sw->add_option("--task", task_name, "task: tagging | agreement")->required();
  sw->callback([&] { cmd_sweep_density(common, task_name); });

  std::vector<std::string> overlap_sfts;
  CLI::App* ov = app.add_subcommand("overlap", "pairwise mask overlap matrix of diff artifacts");
  add_common(ov);
  ov->add_option("sfts", overlap_sfts, "diff artifacts (.sft)")->required();
  ov->add_option("--out", eval_out, "matrix TSV path");
  ov->callback([&] { cmd_overlap(common, overlap_sfts, eval_out); });

  std::string inspect_path;
  CLI::App* in = app.add_subcommand("inspect-sft", "describe an artifact container");
  in->add_option("file", inspect_path, "artifact path")->required();
  in->callback([&] { cmd_inspect(inspect_path); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "ltsft: error(usage): " << e.what() << "\n";
    return static_cast<int>(Errc::usage);
  } catch (const Error& e) {
    std::cerr << "ltsft: error(" << e.code_name() << "): " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "ltsft: error(internal): " << e.what() << "\n";
    return static_cast<int>(Errc::internal);
  }
  return 0;
}
