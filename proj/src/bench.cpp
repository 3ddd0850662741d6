#include "cloudmask/bench.hpp"

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "cloudmask/evaluator.hpp"

extern "C" char** environ;

namespace cloudmask {

std::vector<ResolvedRun> expand_runspec(const RunSpec& spec) {
  namespace fs = std::filesystem;
  spec.validate();
  fs::create_directories(spec.out_root);
  std::vector<ResolvedRun> runs;
  // Check every collision before creating anything, so a refusal leaves no
  // half-expanded campaign behind.
  for (std::uint64_t seed : spec.seeds) {
    const fs::path run_dir = spec.out_root / ("run-" + std::to_string(seed));
    if (fs::exists(run_dir)) {
      throw IoError("expand_runspec: run directory " + run_dir.string() +
                    " already exists; refusing to overwrite");
    }
    runs.push_back({seed, run_dir, run_dir / "config.yaml"});
  }
  for (const ResolvedRun& run : runs) {
    fs::create_directories(run.run_dir);
    std::ofstream os(run.config_path);
    if (!os) throw IoError("expand_runspec: cannot write " + run.config_path.string());
    os << serialize_runspec(spec, run.seed, run.run_dir);
    os.flush();
    if (!os) throw IoError("expand_runspec: write failed for " + run.config_path.string());
  }
  return runs;
}

namespace {

struct MetricsSummary {
  int epochs_run = 0;
  int best_epoch = 0;
  double final_train_acc = 0.0;
  double avg_epoch_time_s = 0.0;
  double total_time_s = 0.0;
};

MetricsSummary parse_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "epoch,train_loss,train_acc,val_loss,val_acc,epoch_time_s") {
    throw FormatError("bad metrics header in " + path.string());
  }
  MetricsSummary out;
  double best_val = std::numeric_limits<double>::infinity();
  int rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    double vals[6];
    for (int i = 0; i < 6; ++i) {
      const bool last = i == 5;
      if (!(last ? static_cast<bool>(std::getline(row, field)) : static_cast<bool>(std::getline(row, field, ',')))) {
        throw FormatError("malformed metrics row '" + line + "' in " + path.string());
      }
      vals[i] = std::stod(field);
    }
    ++rows;
    const int epoch = static_cast<int>(vals[0]);
    if (epoch != rows) throw FormatError("non-sequential epoch numbers in " + path.string());
    if (vals[3] < best_val) {
      best_val = vals[3];
      out.best_epoch = epoch;
    }
    out.final_train_acc = vals[2];
    out.total_time_s += vals[5];
  }
  if (rows == 0) throw FormatError("metrics log " + path.string() + " holds no epochs");
  out.epochs_run = rows;
  out.avg_epoch_time_s = out.total_time_s / rows;
  return out;
}

}  // namespace

RunResult collect_run_result(std::uint64_t seed, const std::filesystem::path& run_dir) {
  RunResult r;
  r.seed = seed;
  r.run_dir = run_dir;
  try {
    const MetricsSummary m = parse_metrics_csv(run_dir / "metrics.csv");
    const EvalReport e = read_eval_csv(run_dir / "eval.csv");
    if (e.scenes.empty()) throw FormatError("eval log in " + run_dir.string() + " holds no scenes");
    r.epochs_run = m.epochs_run;
    r.best_epoch = m.best_epoch;
    r.train_acc = m.final_train_acc;
    r.avg_epoch_time_s = m.avg_epoch_time_s;
    r.train_time_min = m.total_time_s / 60.0;
    r.test_acc = e.overall_accuracy;
    r.avg_infer_time_s = e.total_infer_time_s / static_cast<double>(e.scenes.size());
  } catch (const Error& err) {
    r.failed = true;
    r.error = err.what();
  }
  return r;
}

namespace {

pid_t spawn_worker(const std::string& worker_exe, const char* subcommand,
                   const std::filesystem::path& config_path, const std::filesystem::path& log_path) {
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, log_path.c_str(),
                                   O_WRONLY | O_CREAT | O_APPEND, 0644);
  posix_spawn_file_actions_adddup2(&actions, STDOUT_FILENO, STDERR_FILENO);

  const std::string cfg = config_path.string();
  const char* argv[] = {worker_exe.c_str(), subcommand, "--config", cfg.c_str(), nullptr};
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, worker_exe.c_str(), &actions, nullptr, const_cast<char**>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) {
    throw IoError("run_benchmark: failed to spawn " + worker_exe + " " + subcommand + ": " +
                  std::strerror(rc));
  }
  return pid;
}

std::string exit_description(int status) {
  if (WIFEXITED(status)) return "exited with status " + std::to_string(WEXITSTATUS(status));
  if (WIFSIGNALED(status)) return "killed by signal " + std::to_string(WTERMSIG(status));
  return "ended abnormally";
}

}  // namespace

std::vector<RunResult> run_benchmark(const RunSpec& spec, const std::string& worker_exe) {
  const std::vector<ResolvedRun> runs = expand_runspec(spec);

  enum class Phase { kPending, kTraining, kEvaluating, kDone, kFailed };
  struct RunState {
    Phase phase = Phase::kPending;
    std::string error;
  };
  std::vector<RunState> states(runs.size());
  std::map<pid_t, size_t> active;
  size_t next = 0;

  auto launch = [&](size_t idx, Phase phase) {
    const ResolvedRun& run = runs[idx];
    const bool training = phase == Phase::kTraining;
    const pid_t pid = spawn_worker(worker_exe, training ? "train" : "evaluate", run.config_path,
                                   run.run_dir / (training ? "train.log" : "eval.log"));
    states[idx].phase = phase;
    active[pid] = idx;
  };

  while (next < runs.size() || !active.empty()) {
    while (next < runs.size() && active.size() < static_cast<size_t>(spec.parallelism)) {
      launch(next, Phase::kTraining);
      ++next;
    }
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) throw IoError("run_benchmark: waitpid failed");
    const auto it = active.find(pid);
    if (it == active.end()) continue;  // not one of ours
    const size_t idx = it->second;
    active.erase(it);
    const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    if (!ok) {
      const bool training = states[idx].phase == Phase::kTraining;
      states[idx].phase = Phase::kFailed;
      states[idx].error = std::string(training ? "train " : "evaluate ") + exit_description(status) + "; see " +
                          (runs[idx].run_dir / (training ? "train.log" : "eval.log")).string();
      continue;
    }
    if (states[idx].phase == Phase::kTraining) {
      launch(idx, Phase::kEvaluating);
    } else {
      states[idx].phase = Phase::kDone;
    }
  }

  std::vector<RunResult> results;
  results.reserve(runs.size());
  for (size_t i = 0; i < runs.size(); ++i) {
    if (states[i].phase == Phase::kFailed) {
      RunResult r;
      r.seed = runs[i].seed;
      r.run_dir = runs[i].run_dir;
      r.failed = true;
      r.error = states[i].error;
      results.push_back(std::move(r));
    } else {
      results.push_back(collect_run_result(runs[i].seed, runs[i].run_dir));
    }
  }
  return results;
}

namespace {

ColumnStats stats_of(const std::vector<double>& xs) {
  ColumnStats s;
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double sq = 0.0;
    for (double x : xs) sq += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(xs.size() - 1));
  }
  return s;
}

std::string fmt(double v, const char* spec) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

BenchReport aggregate(const std::vector<RunResult>& results) {
  if (results.empty()) throw ValueError("aggregate: no run results");
  BenchReport report;
  report.rows = results;
  std::vector<double> epochs, best, tracc, teacc, ept, ttm, ait;
  for (const RunResult& r : results) {
    if (r.failed) continue;
    ++report.ok_count;
    epochs.push_back(static_cast<double>(r.epochs_run));
    best.push_back(static_cast<double>(r.best_epoch));
    tracc.push_back(r.train_acc);
    teacc.push_back(r.test_acc);
    ept.push_back(r.avg_epoch_time_s);
    ttm.push_back(r.train_time_min);
    ait.push_back(r.avg_infer_time_s);
  }
  report.epochs = stats_of(epochs);
  report.best_epoch = stats_of(best);
  report.train_acc = stats_of(tracc);
  report.test_acc = stats_of(teacc);
  report.avg_epoch_time_s = stats_of(ept);
  report.train_time_min = stats_of(ttm);
  report.avg_infer_time_s = stats_of(ait);
  return report;
}

BenchReport report_from_disk(const RunSpec& spec) {
  std::vector<RunResult> results;
  for (std::uint64_t seed : spec.seeds) {
    results.push_back(collect_run_result(seed, spec.out_root / ("run-" + std::to_string(seed))));
  }
  return aggregate(results);
}

std::string render_report_table(const BenchReport& report) {
  // Mirrors the benchmark table: accuracies to 3 decimals, times to 2.
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Seed", "Epochs", "Train Acc.", "Test Acc.", "Avg. Train Time (s/epoch)",
                  "Avg. Inference Time (s/scene)"});
  for (const RunResult& r : report.rows) {
    if (r.failed) {
      rows.push_back({std::to_string(r.seed), "FAILED", "-", "-", "-", "-"});
      continue;
    }
    rows.push_back({std::to_string(r.seed), std::to_string(r.epochs_run), fmt(r.train_acc, "%.3f"),
                    fmt(r.test_acc, "%.3f"), fmt(r.avg_epoch_time_s, "%.2f"), fmt(r.avg_infer_time_s, "%.2f")});
  }
  if (report.ok_count > 0) {
    rows.push_back({"mean", fmt(report.epochs.mean, "%.1f"), fmt(report.train_acc.mean, "%.3f"),
                    fmt(report.test_acc.mean, "%.3f"), fmt(report.avg_epoch_time_s.mean, "%.2f"),
                    fmt(report.avg_infer_time_s.mean, "%.2f")});
    rows.push_back({"std", fmt(report.epochs.stddev, "%.1f"), fmt(report.train_acc.stddev, "%.3f"),
                    fmt(report.test_acc.stddev, "%.3f"), fmt(report.avg_epoch_time_s.stddev, "%.2f"),
                    fmt(report.avg_infer_time_s.stddev, "%.2f")});
  }
  std::vector<size_t> widths(rows[0].size(), 0);
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) {
      os << row[c];
      if (c + 1 < row.size()) os << std::string(widths[c] - row[c].size() + 2, ' ');
    }
    os << '\n';
  }
  return os.str();
}

std::string render_report_csv(const BenchReport& report) {
  std::ostringstream os;
  os << "seed,status,epochs,best_epoch,train_acc,test_acc,avg_epoch_time_s,train_time_min,avg_infer_time_s\n";
  for (const RunResult& r : report.rows) {
    if (r.failed) {
      os << r.seed << ",failed,,,,,,,\n";
      continue;
    }
    os << r.seed << ",ok," << r.epochs_run << ',' << r.best_epoch << ',' << fmt(r.train_acc, "%.9g") << ','
       << fmt(r.test_acc, "%.9g") << ',' << fmt(r.avg_epoch_time_s, "%.6f") << ','
       << fmt(r.train_time_min, "%.6f") << ',' << fmt(r.avg_infer_time_s, "%.6f") << '\n';
  }
  if (report.ok_count > 0) {
    os << "mean,," << fmt(report.epochs.mean, "%.9g") << ',' << fmt(report.best_epoch.mean, "%.9g") << ','
       << fmt(report.train_acc.mean, "%.9g") << ',' << fmt(report.test_acc.mean, "%.9g") << ','
       << fmt(report.avg_epoch_time_s.mean, "%.6f") << ',' << fmt(report.train_time_min.mean, "%.6f") << ','
       << fmt(report.avg_infer_time_s.mean, "%.6f") << '\n';
    os << "std,," << fmt(report.epochs.stddev, "%.9g") << ',' << fmt(report.best_epoch.stddev, "%.9g") << ','
       << fmt(report.train_acc.stddev, "%.9g") << ',' << fmt(report.test_acc.stddev, "%.9g") << ','
       << fmt(report.avg_epoch_time_s.stddev, "%.6f") << ',' << fmt(report.train_time_min.stddev, "%.6f") << ','
       << fmt(report.avg_infer_time_s.stddev, "%.6f") << '\n';
  }
  return os.str();
}

void write_report(const BenchReport& report, const std::filesystem::path& out_root) {
  {
    std::ofstream os(out_root / "report.csv");
    if (!os) throw IoError("write_report: cannot open " + (out_root / "report.csv").string());
    os << render_report_csv(report);
  }
  std::ofstream os(out_root / "report.txt");
  if (!os) throw IoError("write_report: cannot open " + (out_root / "report.txt").string());
  os << render_report_table(report);
}

JobScripts emit_job_scripts(const RunSpec& spec, const std::string& template_text) {
  // Validate placeholders before touching the filesystem.
  bool any_placeholder = false;
  for (size_t i = 0; i < template_text.size(); ++i) {
    if (template_text[i] != '{') continue;
    const size_t close = template_text.find('}', i);
    if (close == std::string::npos) break;
    const std::string name = template_text.substr(i + 1, close - i - 1);
    if (name == "seed" || name == "run_dir" || name == "config_path") {
      any_placeholder = true;
      i = close;
    } else {
      throw ConfigError("emit_job_scripts: unknown placeholder {" + name +
                        "}; allowed placeholders are {seed}, {run_dir}, {config_path}");
    }
  }

  const std::vector<ResolvedRun> runs = expand_runspec(spec);
  JobScripts out;
  out.placeholder_free = !any_placeholder;
  for (const ResolvedRun& run : runs) {
    std::string text = template_text;
    auto replace_all = [&text](const std::string& from, const std::string& to) {
      size_t pos = 0;
      while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
      }
    };
    replace_all("{seed}", std::to_string(run.seed));
    replace_all("{run_dir}", run.run_dir.string());
    replace_all("{config_path}", run.config_path.string());
    const std::filesystem::path script = spec.out_root / ("run-" + std::to_string(run.seed) + ".job");
    std::ofstream os(script);
    if (!os) throw IoError("emit_job_scripts: cannot open " + script.string());
    os << text;
    os.flush();
    if (!os) throw IoError("emit_job_scripts: write failed for " + script.string());
    out.scripts.push_back(script);
  }
  return out;
}

}  // namespace cloudmask
