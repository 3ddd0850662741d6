#pragma once

// Multi-seed campaign orchestration: expand one run spec into isolated
// per-seed runs, execute them as independent worker processes, emit job
// scripts for external schedulers, and aggregate a Table-style report.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cloudmask/runspec.hpp"

namespace cloudmask {

struct ResolvedRun {
  std::uint64_t seed = 0;
  std::filesystem::path run_dir;
  std::filesystem::path config_path;
};

// Creates <out_root>/run-<seed> for every seed and writes the resolved
// single-seed config snapshot inside. Pre-existing run dirs are refused,
// never overwritten.
std::vector<ResolvedRun> expand_runspec(const RunSpec& spec);

struct RunResult {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  int epochs_run = 0;
  int best_epoch = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double avg_epoch_time_s = 0.0;
  double train_time_min = 0.0;
  double avg_infer_time_s = 0.0;
  std::filesystem::path run_dir;
};

// Reconstructs one run's row purely from its on-disk artifacts.
RunResult collect_run_result(std::uint64_t seed, const std::filesystem::path& run_dir);

// Expands the spec and supervises the workers: for each seed `worker_exe
// train --config <snapshot>` then `worker_exe evaluate --config <snapshot>`,
// with at most spec.parallelism children alive at once. A failing run is
// reported in its row without aborting siblings. Rows come back in seed
// order regardless of completion order.
std::vector<RunResult> run_benchmark(const RunSpec& spec, const std::string& worker_exe);

struct ColumnStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1); zero for a single run
};

struct BenchReport {
  std::vector<RunResult> rows;
  int ok_count = 0;
  ColumnStats epochs, best_epoch, train_acc, test_acc, avg_epoch_time_s, train_time_min, avg_infer_time_s;
};

BenchReport aggregate(const std::vector<RunResult>& results);

// Rebuilds every row from the run dirs under the spec's out_root. `bench`
// itself reports through this, so regenerating later gives identical bytes.
BenchReport report_from_disk(const RunSpec& spec);

std::string render_report_table(const BenchReport& report);
std::string render_report_csv(const BenchReport& report);
void write_report(const BenchReport& report, const std::filesystem::path& out_root);

struct JobScripts {
  std::vector<std::filesystem::path> scripts;
  bool placeholder_free = false;  // template used no placeholders (allowed, warned)
};

// Pure text substitution of {seed}, {run_dir}, {config_path} into the
// template, one script per run, written alongside the run dirs. Nothing is
// submitted anywhere.
JobScripts emit_job_scripts(const RunSpec& spec, const std::string& template_text);

}  // namespace cloudmask
