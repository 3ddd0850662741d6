#pragma once

// Full-image test evaluation: overlapping-patch inference, probability
// stitching, thresholding, pixel accuracy and timing.

#include <filesystem>
#include <vector>

#include "cloudmask/datapipe.hpp"
#include "cloudmask/unet.hpp"

namespace cloudmask {

// Label 1 (clear-sky) iff probability strictly exceeds the threshold;
// exactly 0.5 stays cloudy under the default.
MaskImage threshold_mask(const FloatImage& probs, double threshold = 0.5);

double pixel_accuracy(const MaskImage& pred, const MaskImage& truth);

struct SceneEval {
  int scene_id = 0;
  double accuracy = 0.0;
  double infer_time_s = 0.0;
  std::int64_t correct_pixels = 0;
  std::int64_t total_pixels = 0;
};

struct EvalReport {
  std::vector<SceneEval> scenes;
  double overall_accuracy = 0.0;       // pixel-weighted across all scenes
  double mean_scene_accuracy = 0.0;    // unweighted mean of per-scene rows
  double total_infer_time_s = 0.0;
  double threshold = 0.5;
  std::int64_t total_pixels = 0;
  std::int64_t correct_pixels = 0;
};

struct EvalOptions {
  int patch = 0;          // patch side fed to the model
  int stride = 0;         // target stride of the overlapping cover
  int batch_size = 32;
  double threshold = 0.5;
};

// Per scene: overlapping patches -> batched forward -> mean-stitched
// probability map -> threshold -> accuracy against the full original mask.
EvalReport evaluate(const ModelParams& params, const std::vector<Scene>& test_scenes, const EvalOptions& opts);

// Stitch-and-score path without a model: probability patches are supplied
// directly. evaluate() routes through this.
SceneEval score_scene(const std::vector<FloatImage>& prob_patches, const PatchGrid& grid, const MaskImage& truth,
                      double threshold, int scene_id);

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_eval_csv(const std::filesystem::path& path);

}  // namespace cloudmask
