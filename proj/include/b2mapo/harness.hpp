#pragma once

/**
 * @file harness.hpp
 * @brief Experiment orchestration: config files, training runs with CSV
 * output, wall-time benchmarks, graph partition printing, and directory
 * summaries.
 *
 * All metric CSVs are bit-deterministic for a fixed (config, seed) pair;
 * wall-clock measurements go to separate files (times.csv, bench.csv) that
 * are excluded from that guarantee. File formats are documented in
 * docs/FORMATS.md.
 */

#include <cstdint>
#include <string>
#include <vector>

#include "b2mapo/game.hpp"
#include "b2mapo/optimizer.hpp"

namespace b2mapo {

/* Which game an experiment runs on. builder: "chain" (the dependency chain
 * family), "random" (dense random game), or "file" (serialized game text). */
struct GameSpec {
  std::string builder = "chain";
  int n_agents = 3;
  double coupling = 0.5;
  bool masked = false;
  int n_states = 4;    ///< random builder only
  int n_actions = 2;   ///< random builder only
  double gamma = 0.95; ///< random builder only
  std::uint64_t seed = 0;
  std::string path;    ///< file builder only

  MarkovGame build() const;  ///< throws std::invalid_argument / file errors
};

struct ExperimentConfig {
  GameSpec game;
  SchemeConfig scheme;
  std::vector<std::uint64_t> seeds = {0};
  int rounds = 1;
  std::string out = "out";

  void validate() const;  ///< at least one seed, rounds >= 1, out nonempty
};

/**
 * @brief Parse the flat key = value config text.
 *
 * Sections are [game], [scheme], [run]; keys inside become section.key.
 * '#' starts a comment. Unknown keys and malformed values throw
 * std::invalid_argument naming the offending key.
 */
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

/* Relative paths are redirected under the B2MAPO_OUT env var when it is
 * set; absolute paths and empty env pass through unchanged. */
std::string resolve_output_path(const std::string& path);

struct RunFiles {
  std::vector<std::string> rounds_csv;  ///< one per seed, deterministic
  std::vector<std::string> times_csv;   ///< wall clock, not deterministic
  std::vector<std::string> curve_csv;   ///< x,y plot data, deterministic
};

/**
 * @brief Train every seed and write per-seed CSVs under out/seed<k>/.
 *
 * rounds.csv carries the metric trail (exact return only in oracle mode),
 * curve_*.csv the x,y learning curves, times.csv the per-round wall time.
 * Throws std::runtime_error on unwritable output paths.
 */
RunFiles run_experiment(const ExperimentConfig& config);

struct BenchRecord {
  std::string mode;
  int n_agents = 0;
  int batch_count = 0;             ///< median batches per round
  double train_seconds = 0.0;      ///< median wall time per update round
  double decide_cond_seconds = 0.0;///< median per joint decision, conditioned
  double decide_ind_seconds = 0.0; ///< median per joint decision, independent
};

struct BenchConfig {
  int n_agents = 8;
  double coupling = 0.6;
  std::uint64_t seed = 0;
  int warmup = 5;      ///< rounds discarded before timing
  int rounds = 50;     ///< timed rounds per mode
  int n_episodes = 8;
  int horizon = 16;
  int decision_blocks = 30;       ///< timing blocks per decision measurement
  int decisions_per_block = 200;
};

/* Times one update round and one joint decision for each of mappo,
 * b2mapo-dag and a2po on the same game and seed. Warm-up rounds excluded,
 * medians reported. */
std::vector<BenchRecord> run_bench(const BenchConfig& config);
std::string bench_to_csv(const std::vector<BenchRecord>& records);

/**
 * @brief Aggregate a run directory into a human-readable summary.
 *
 * Reads every seed<k>/rounds.csv below the directory, reports per-seed final
 * metrics plus medians and interquartile ranges, and rolls up bounds.csv
 * when present. Throws std::runtime_error listing whatever is missing.
 */
std::string summarize_directory(const std::string& dir);

/* The full command-line interface (verify, train, bench, partition,
 * report); returns the process exit code: 0 success, 1 check failure,
 * 2 input error. */
int harness_main(int argc, const char* const* argv);

}  // namespace b2mapo
