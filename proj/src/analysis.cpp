#include "ltsft/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

namespace ltsft {

const SweepCell& SweepGrid::cell(size_t task_idx, size_t lang_idx) const {
  if (task_idx >= task_levels.size() || lang_idx >= lang_levels.size())
    fail(Errc::internal, "sweep: cell index out of range");
  return cells[task_idx * lang_levels.size() + lang_idx];
}

namespace {

void check_levels(const std::vector<double>& levels, const char* which) {
  if (levels.empty()) fail(Errc::config, std::string("sweep: no ") + which + " density levels");
  double prev = 0.0;
  for (double l : levels) {
    if (!(l > 0.0 && l <= 1.0)) fail(Errc::config, std::string("sweep: ") + which + " density outside (0,1]");
    if (l <= prev) fail(Errc::config, std::string("sweep: ") + which + " densities must be strictly increasing");
    prev = l;
  }
}

}  // namespace

SweepGrid density_sweep(const std::vector<double>& task_levels, const std::vector<double>& lang_levels,
                        const std::vector<uint64_t>& seeds, const CellFn& fn, int threads) {
  check_levels(task_levels, "task");
  check_levels(lang_levels, "language");
  if (seeds.empty()) fail(Errc::config, "sweep: no seeds");
  if (!fn) fail(Errc::config, "sweep: no cell scorer");
  if (threads < 1) fail(Errc::config, "sweep: thread count must be positive");

  SweepGrid grid;
  grid.task_levels = task_levels;
  grid.lang_levels = lang_levels;
  grid.seeds = seeds;
  grid.cells.resize(task_levels.size() * lang_levels.size());
  for (size_t t = 0; t < task_levels.size(); ++t)
    for (size_t l = 0; l < lang_levels.size(); ++l) {
      SweepCell& c = grid.cells[t * lang_levels.size() + l];
      c.task_density = task_levels[t];
      c.lang_density = lang_levels[l];
    }

  auto run_cell = [&](SweepCell& c) {
    try {
      double sum = 0.0;
      for (uint64_t s : seeds) {
        const double v = fn(c.task_density, c.lang_density, s);
        if (!std::isfinite(v)) fail(Errc::numeric, "sweep: non-finite cell metric");
        c.per_seed.push_back(v);
        sum += v;
      }
      c.metric = sum / static_cast<double>(seeds.size());
    } catch (const std::exception& e) {
      c.failed = true;
      c.error = e.what();
      c.per_seed.clear();
      c.metric = 0.0;
    }
  };

  const size_t n = grid.cells.size();
  const size_t workers = std::min<size_t>(static_cast<size_t>(threads), n);
  if (workers <= 1) {
    for (SweepCell& c : grid.cells) run_cell(c);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const size_t i = next.fetch_add(1);
          if (i >= n) return;
          run_cell(grid.cells[i]);
        }
      });
    for (auto& th : pool) th.join();
  }
  return grid;
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string sweep_tsv(const SweepGrid& grid) {
  std::string out = "task_density\tlang_density\tseed\tmetric\n";
  for (const SweepCell& c : grid.cells) {
    if (c.failed) {
      out += format_metric(c.task_density) + '\t' + format_metric(c.lang_density) + "\t-\tfailed: " + c.error + '\n';
      continue;
    }
    for (size_t s = 0; s < grid.seeds.size(); ++s) {
      out += format_metric(c.task_density) + '\t' + format_metric(c.lang_density) + '\t' +
             std::to_string(grid.seeds[s]) + '\t' + format_metric(c.per_seed[s]) + '\n';
    }
  }
  return out;
}

OverlapMatrix overlap_matrix(const std::vector<const LanguageArtifact*>& artifacts) {
  if (artifacts.empty()) fail(Errc::config, "overlap: no artifacts");
  OverlapMatrix m;
  for (const LanguageArtifact* a : artifacts) {
    if (a == nullptr) fail(Errc::internal, "overlap: null artifact");
    if (!a->diff.has_mask()) fail(Errc::config, "overlap: artifact " + a->tag + " lacks a selection mask");
    m.tags.push_back(a->tag);
  }
  const size_t n = artifacts.size();
  m.values.assign(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    m.values[i * n + i] = 100.0;
    for (size_t j = i + 1; j < n; ++j) {
      const double v = overlap_percentage(artifacts[i]->diff.mask(), artifacts[j]->diff.mask());
      m.values[i * n + j] = v;
      m.values[j * n + i] = v;
    }
  }
  return m;
}

std::string overlap_tsv(const OverlapMatrix& m) {
  std::string out = "lang";
  for (const auto& t : m.tags) out += '\t' + t;
  out += '\n';
  const size_t n = m.tags.size();
  for (size_t i = 0; i < n; ++i) {
    out += m.tags[i];
    for (size_t j = 0; j < n; ++j) out += '\t' + format_metric(m.values[i * n + j]);
    out += '\n';
  }
  return out;
}

}  // namespace ltsft
