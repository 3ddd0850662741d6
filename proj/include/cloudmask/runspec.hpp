#pragma once

// Run-spec file handling: one YAML-subset document describes a whole
// multi-seed campaign. Paths are resolved against the spec's directory at
// parse time; materialized snapshots always carry absolute paths.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cloudmask/datapipe.hpp"
#include "cloudmask/trainer.hpp"
#include "cloudmask/unet.hpp"
#include "cloudmask/yamlish.hpp"

namespace cloudmask {

struct GeneratorSpec {
  int scenes = 40;
  int height = 128;
  int width = 128;
  std::uint64_t seed = 7;
};

struct DataSpec {
  std::filesystem::path path;               // dataset file, or
  std::optional<GeneratorSpec> generator;   // synthesize on the fly
};

struct EvalSpec {
  int stride = 0;  // 0 = default 3P/4
  double threshold = 0.5;
};

struct RunSpec {
  std::vector<std::uint64_t> seeds;
  UNetConfig model;
  TrainConfig train;  // seed field is filled per run
  DataSpec data;
  EvalSpec eval;
  std::filesystem::path out_root;
  int parallelism = 1;
  std::optional<std::filesystem::path> run_dir;  // present only in per-run snapshots

  int effective_stride() const { return eval.stride > 0 ? eval.stride : std::max(1, 3 * model.patch_size / 4); }
  void validate() const;
};

RunSpec parse_runspec(const YamlDoc& doc, const std::filesystem::path& base_dir);
RunSpec load_runspec(const std::filesystem::path& path);

// Canonical rendering; when `seed` is set the output is a single-run
// snapshot with `run_dir` included.
std::string serialize_runspec(const RunSpec& spec, std::optional<std::uint64_t> seed = std::nullopt,
                              const std::filesystem::path& run_dir = {});

// Scenes, first 90% for the training pipeline, last max(1, n/10) for test.
struct SceneSet {
  std::vector<Scene> train;
  std::vector<Scene> test;
};

std::vector<Scene> load_scenes(const DataSpec& data);
SceneSet split_scenes(std::vector<Scene> scenes);

}  // namespace cloudmask
