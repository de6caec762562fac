// Desk-scale analyses: the task-density x language-density metric grid and
// the pairwise mask-overlap matrix, with deterministic TSV renderings.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ltsft/transfer.hpp"

namespace ltsft {

struct SweepCell {
  double task_density = 0.0;
  double lang_density = 0.0;
  bool failed = false;
  std::string error;             // first failure message when failed
  std::vector<double> per_seed;  // aligned with the seed list when not failed
  double metric = 0.0;           // mean over per_seed
};

struct SweepGrid {
  std::vector<double> task_levels, lang_levels;
  std::vector<uint64_t> seeds;
  std::vector<SweepCell> cells;  // row-major: task level x lang level

  const SweepCell& cell(size_t task_idx, size_t lang_idx) const;
};

// Cell scorer: metric for one (task density, language density, seed) run,
// already averaged over evaluation languages. Must be safe to call from
// several threads at once.
using CellFn = std::function<double(double task_density, double lang_density, uint64_t seed)>;

// Evaluates every cell of the |task| x |lang| grid over all seeds. Levels
// must be strictly increasing fractions in (0,1]. threads > 1 distributes
// whole cells across worker threads; results are identical to the
// single-threaded run. A throwing scorer marks the cell failed (first error
// message kept) without aborting the sweep.
SweepGrid density_sweep(const std::vector<double>& task_levels, const std::vector<double>& lang_levels,
                        const std::vector<uint64_t>& seeds, const CellFn& fn, int threads = 1);

// One row per (cell, seed): task_density, lang_density, seed, metric.
// Failed cells emit a single row with seed "-" and metric "failed: <msg>".
std::string sweep_tsv(const SweepGrid& grid);

struct OverlapMatrix {
  std::vector<std::string> tags;
  std::vector<double> values;  // n x n, symmetric, diagonal exactly 100

  double at(size_t i, size_t j) const { return values[i * tags.size() + j]; }
};

// Pairwise percentage overlap of the artifacts' selection masks. Every
// artifact must carry a mask; fingerprints and budgets must agree.
OverlapMatrix overlap_matrix(const std::vector<const LanguageArtifact*>& artifacts);

// Header row of tags, then one row per language: tag followed by values.
std::string overlap_tsv(const OverlapMatrix& m);

// Deterministic short float rendering used by every TSV emitter.
std::string format_metric(double v);

}  // namespace ltsft
