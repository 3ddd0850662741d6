#pragma once

// Glue between a resolved single-seed run spec and the training/evaluation
// machinery. The CLI worker and the python module both route through here.

#include <filesystem>

#include "cloudmask/bench.hpp"
#include "cloudmask/evaluator.hpp"
#include "cloudmask/runspec.hpp"
#include "cloudmask/trainer.hpp"

namespace cloudmask {

// Crop to the patch lattice, cut non-overlapping patches, shuffle and split
// 80/20 with the run seed.
DatasetSplit prepare_training_split(const std::vector<Scene>& train_scenes, int patch, std::uint64_t seed);

// The spec must resolve to exactly one seed (a snapshot from
// expand_runspec, or a hand-written single-seed spec).
std::uint64_t single_seed(const RunSpec& spec);

std::filesystem::path resolve_run_dir(const RunSpec& spec, std::uint64_t seed);

TrainOutcome run_single_train(const RunSpec& spec);

struct SingleEvalOutcome {
  EvalReport report;
  std::filesystem::path eval_csv;
};

SingleEvalOutcome run_single_eval(const RunSpec& spec, const std::filesystem::path& checkpoint_override = {});

}  // namespace cloudmask
