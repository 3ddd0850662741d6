// cloudmask: desk-scale cloud-masking benchmark pipeline.
//
// Subcommands: gen-data, train, evaluate, bench, report, gradcheck,
// emit-jobs. Every subcommand prints the paths of what it produced; exit
// status is 0 on success, 1 on a runtime failure, 2 on usage errors.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "cloudmask/bench.hpp"
#include "cloudmask/gradcheck.hpp"
#include "cloudmask/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cloudmask;

namespace {

std::string self_path() {
  std::error_code ec;
  const fs::path p = fs::canonical("/proc/self/exe", ec);
  if (!ec) return p.string();
  return "cloudmask";
}

std::string read_text_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

int cmd_gen_data(const std::string& out, int scenes, int height, int width, std::uint64_t seed) {
  DataSpec data;
  data.generator = GeneratorSpec{scenes, height, width, seed};
  write_dataset(out, load_scenes(data));
  std::cout << "dataset: " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config) {
  const RunSpec spec = load_runspec(config);
  const TrainOutcome outcome = run_single_train(spec);
  std::cout << "metrics: " << outcome.metrics_path.string() << "\n";
  std::cout << "checkpoint: " << outcome.checkpoint_path.string() << "\n";
  std::cout << "epochs: " << outcome.epochs_run << "\n";
  std::cout << "best_epoch: " << outcome.best_epoch << "\n";
  return 0;
}

int cmd_evaluate(const std::string& config, const std::string& checkpoint) {
  const RunSpec spec = load_runspec(config);
  const SingleEvalOutcome outcome = run_single_eval(spec, checkpoint);
  std::cout << "eval: " << outcome.eval_csv.string() << "\n";
  std::printf("test_accuracy: %.6f\n", outcome.report.overall_accuracy);
  return 0;
}

int cmd_bench(const std::string& spec_path, std::string worker) {
  const RunSpec spec = load_runspec(spec_path);
  if (worker.empty()) worker = self_path();
  const std::vector<RunResult> results = run_benchmark(spec, worker);
  for (const RunResult& r : results) {
    if (r.failed) {
      std::cout << "run " << r.seed << ": FAILED (" << r.error << ")\n";
    } else {
      std::cout << "run " << r.seed << ": ok, " << r.epochs_run << " epochs\n";
    }
  }
  const BenchReport report = report_from_disk(spec);
  write_report(report, spec.out_root);
  std::cout << "report_csv: " << (spec.out_root / "report.csv").string() << "\n";
  std::cout << "report_txt: " << (spec.out_root / "report.txt").string() << "\n";
  std::cout << render_report_table(report);
  bool any_failed = false;
  for (const RunResult& r : results) any_failed = any_failed || r.failed;
  return any_failed ? 1 : 0;
}

int cmd_report(const std::string& spec_path) {
  const RunSpec spec = load_runspec(spec_path);
  const BenchReport report = report_from_disk(spec);
  write_report(report, spec.out_root);
  std::cout << "report_csv: " << (spec.out_root / "report.csv").string() << "\n";
  std::cout << "report_txt: " << (spec.out_root / "report.txt").string() << "\n";
  std::cout << render_report_table(report);
  return 0;
}

int cmd_gradcheck(int seeds) {
  const std::vector<GradCheckCase> cases = run_gradcheck_battery(seeds);
  double worst = 0.0;
  bool pass = true;
  for (const GradCheckCase& c : cases) {
    std::printf("%-16s %2d-bit  eps %-7.0e max rel err %.3e  (tol %.0e)  %s\n", c.name.c_str(), c.bits, c.eps,
                c.worst, c.tolerance, c.pass ? "ok" : "FAIL");
    worst = std::max(worst, c.worst);
    pass = pass && c.pass;
  }
  std::printf("worst relative error: %.3e\n", worst);
  std::printf("gradcheck: %s\n", pass ? "PASS" : "FAIL");
  return pass ? 0 : 1;
}

int cmd_emit_jobs(const std::string& spec_path, const std::string& template_path) {
  const RunSpec spec = load_runspec(spec_path);
  const JobScripts jobs = emit_job_scripts(spec, read_text_file(template_path));
  if (jobs.placeholder_free) {
    std::cerr << "warning: template contains no placeholders; all scripts are identical\n";
  }
  for (const fs::path& p : jobs.scripts) std::cout << "job: " << p.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale cloud-masking benchmark: synthetic scenes, U-Net training, "
               "stitched inference and multi-seed reporting."};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scene dataset file");
  std::string gen_out;
  int gen_scenes = 40, gen_height = 128, gen_width = 128;
  std::uint64_t gen_seed = 7;
  gen->add_option("--out", gen_out, "Output dataset path")->required();
  gen->add_option("--scenes", gen_scenes, "Number of scenes");
  gen->add_option("--height", gen_height, "Scene height in pixels");
  gen->add_option("--width", gen_width, "Scene width in pixels");
  gen->add_option("--seed", gen_seed, "Generator seed");

  auto* train_cmd = app.add_subcommand("train", "Run one seeded training run from a config");
  std::string train_config;
  train_cmd->add_option("--config", train_config, "Single-seed run config (YAML)")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test scenes");
  std::string eval_config, eval_checkpoint;
  eval_cmd->add_option("--config", eval_config, "Single-seed run config (YAML)")->required();
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint path override");

  auto* bench_cmd = app.add_subcommand("bench", "Run a multi-seed benchmark campaign");
  std::string bench_spec, bench_worker;
  bench_cmd->add_option("--spec", bench_spec, "Run spec (YAML)")->required();
  bench_cmd->add_option("--worker", bench_worker, "Worker executable (defaults to this binary)");

  auto* report_cmd = app.add_subcommand("report", "Rebuild the report from completed run directories");
  std::string report_spec;
  report_cmd->add_option("--spec", report_spec, "Run spec (YAML)")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Verify operator gradients against finite differences");
  int grad_seeds = 10;
  grad_cmd->add_option("--seeds", grad_seeds, "Random seeds per case")->check(CLI::PositiveNumber);

  auto* jobs_cmd = app.add_subcommand("emit-jobs", "Write one scheduler job script per run");
  std::string jobs_spec, jobs_template;
  jobs_cmd->add_option("--spec", jobs_spec, "Run spec (YAML)")->required();
  jobs_cmd->add_option("--template", jobs_template, "Script template with {seed}/{run_dir}/{config_path}")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_scenes, gen_height, gen_width, gen_seed);
    if (train_cmd->parsed()) return cmd_train(train_config);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_config, eval_checkpoint);
    if (bench_cmd->parsed()) return cmd_bench(bench_spec, bench_worker);
    if (report_cmd->parsed()) return cmd_report(report_spec);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_seeds);
    if (jobs_cmd->parsed()) return cmd_emit_jobs(jobs_spec, jobs_template);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
