#include "cloudmask/pipeline.hpp"

namespace cloudmask {

DatasetSplit prepare_training_split(const std::vector<Scene>& train_scenes, int patch, std::uint64_t seed) {
  std::vector<Scene> cropped;
  cropped.reserve(train_scenes.size());
  for (const Scene& s : train_scenes) cropped.push_back(crop_to_grid(s.image, s.mask, patch));
  return split_train_val(extract_train_patches(cropped, patch), 0.8, seed);
}

std::uint64_t single_seed(const RunSpec& spec) {
  if (spec.seeds.size() != 1) {
    throw ConfigError("this command needs a config resolving to exactly one seed, got " +
                      std::to_string(spec.seeds.size()));
  }
  return spec.seeds.front();
}

std::filesystem::path resolve_run_dir(const RunSpec& spec, std::uint64_t seed) {
  if (spec.run_dir) return *spec.run_dir;
  return spec.out_root / ("run-" + std::to_string(seed));
}

TrainOutcome run_single_train(const RunSpec& spec) {
  const std::uint64_t seed = single_seed(spec);
  TrainConfig train_cfg = spec.train;
  train_cfg.seed = seed;
  const SceneSet scenes = split_scenes(load_scenes(spec.data));
  const DatasetSplit split = prepare_training_split(scenes.train, spec.model.patch_size, seed);
  return train(spec.model, train_cfg, split, resolve_run_dir(spec, seed));
}

SingleEvalOutcome run_single_eval(const RunSpec& spec, const std::filesystem::path& checkpoint_override) {
  const std::uint64_t seed = single_seed(spec);
  const std::filesystem::path run_dir = resolve_run_dir(spec, seed);
  const std::filesystem::path checkpoint =
      checkpoint_override.empty() ? run_dir / "checkpoint.cmck" : checkpoint_override;

  const Checkpoint ck = load_checkpoint(checkpoint, spec.model);
  const SceneSet scenes = split_scenes(load_scenes(spec.data));

  EvalOptions opts;
  opts.patch = spec.model.patch_size;
  opts.stride = spec.effective_stride();
  opts.batch_size = spec.train.batch_size;
  opts.threshold = spec.eval.threshold;

  SingleEvalOutcome out;
  out.report = evaluate(ck.params, scenes.test, opts);
  out.eval_csv = run_dir / "eval.csv";
  write_eval_csv(out.report, out.eval_csv);
  return out;
}

}  // namespace cloudmask
