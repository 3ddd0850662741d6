#include "cloudmask/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cloudmask/serial.hpp"

namespace cloudmask {

MaskImage threshold_mask(const FloatImage& probs, double threshold) {
  MaskImage mask(probs.height, probs.width);
  for (size_t i = 0; i < probs.data.size(); ++i) {
    const float p = probs.data[i];
    if (!(p >= 0.0f && p <= 1.0f)) {
      throw ValueError("threshold_mask: probability " + std::to_string(p) + " outside [0,1]");
    }
    mask.data[i] = p > threshold ? 1 : 0;
  }
  return mask;
}

double pixel_accuracy(const MaskImage& pred, const MaskImage& truth) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw ShapeError("pixel_accuracy: " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " prediction vs " + std::to_string(truth.height) + "x" + std::to_string(truth.width) +
                     " truth");
  }
  std::int64_t matches = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) matches += pred.data[i] == truth.data[i] ? 1 : 0;
  return static_cast<double>(matches) / static_cast<double>(pred.data.size());
}

SceneEval score_scene(const std::vector<FloatImage>& prob_patches, const PatchGrid& grid, const MaskImage& truth,
                      double threshold, int scene_id) {
  const FloatImage stitched = reconstruct(prob_patches, grid);
  const MaskImage predicted = threshold_mask(stitched, threshold);
  if (predicted.height != truth.height || predicted.width != truth.width) {
    throw ShapeError("score_scene: stitched " + std::to_string(predicted.height) + "x" +
                     std::to_string(predicted.width) + " prediction vs " + std::to_string(truth.height) + "x" +
                     std::to_string(truth.width) + " truth");
  }
  SceneEval eval;
  eval.scene_id = scene_id;
  eval.total_pixels = static_cast<std::int64_t>(truth.data.size());
  for (size_t i = 0; i < truth.data.size(); ++i) {
    eval.correct_pixels += predicted.data[i] == truth.data[i] ? 1 : 0;
  }
  eval.accuracy = static_cast<double>(eval.correct_pixels) / static_cast<double>(eval.total_pixels);
  return eval;
}

EvalReport evaluate(const ModelParams& params, const std::vector<Scene>& test_scenes, const EvalOptions& opts) {
  if (test_scenes.empty()) throw ValueError("evaluate: no test scenes");
  if (opts.patch < 1) throw ConfigError("evaluate: patch side must be positive");
  if (opts.batch_size < 1) throw ConfigError("evaluate: batch_size must be >= 1");
  if (!(opts.threshold >= 0.0 && opts.threshold <= 1.0)) {
    throw ConfigError("evaluate: threshold must be in [0,1]");
  }
  const int div = 1 << params.config.depth;
  if (opts.patch % div != 0) {
    throw ConfigError("evaluate: patch " + std::to_string(opts.patch) + " not divisible by 2^depth = " +
                      std::to_string(div));
  }

  EvalReport report;
  report.threshold = opts.threshold;
  for (size_t sid = 0; sid < test_scenes.size(); ++sid) {
    const Scene& scene = test_scenes[sid];
    const auto t0 = std::chrono::steady_clock::now();
    TestPatches tp = extract_test_patches(scene.image, opts.patch, opts.stride);

    std::vector<FloatImage> prob_patches(tp.patches.size());
    for (size_t begin = 0; begin < tp.patches.size(); begin += static_cast<size_t>(opts.batch_size)) {
      const size_t end = std::min(tp.patches.size(), begin + static_cast<size_t>(opts.batch_size));
      Tensor batch(Shape{static_cast<int>(end - begin), scene.image.channels, opts.patch, opts.patch});
      float* dst = batch.data.data();
      for (size_t i = begin; i < end; ++i) {
        dst = std::copy(tp.patches[i].data.begin(), tp.patches[i].data.end(), dst);
      }
      const Tensor probs = unet_forward(params, batch);
      const size_t per = static_cast<size_t>(opts.patch) * opts.patch;
      for (size_t i = begin; i < end; ++i) {
        FloatImage& p = prob_patches[i];
        p.height = p.width = opts.patch;
        const float* src = probs.data.data() + (i - begin) * per;
        p.data.assign(src, src + per);
      }
    }

    SceneEval eval = score_scene(prob_patches, tp.grid, scene.mask, opts.threshold, static_cast<int>(sid));
    const auto t1 = std::chrono::steady_clock::now();
    eval.infer_time_s = std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9);

    report.correct_pixels += eval.correct_pixels;
    report.total_pixels += eval.total_pixels;
    report.total_infer_time_s += eval.infer_time_s;
    report.scenes.push_back(eval);
  }
  double acc_sum = 0.0;
  for (const SceneEval& s : report.scenes) acc_sum += s.accuracy;
  report.mean_scene_accuracy = acc_sum / static_cast<double>(report.scenes.size());
  report.overall_accuracy =
      static_cast<double>(report.correct_pixels) / static_cast<double>(report.total_pixels);
  return report;
}

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string fmt_time(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("write_eval_csv: cannot open " + path.string());
  os << "scene_id,accuracy,infer_time_s\n";
  for (const SceneEval& s : report.scenes) {
    os << s.scene_id << ',' << fmt_g(s.accuracy) << ',' << fmt_time(s.infer_time_s) << '\n';
  }
  os << "overall," << fmt_g(report.overall_accuracy) << ',' << fmt_time(report.total_infer_time_s) << '\n';
  os.flush();
  if (!os) throw IoError("write_eval_csv: write failed for " + path.string());
}

EvalReport read_eval_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_eval_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "scene_id,accuracy,infer_time_s") {
    throw FormatError("read_eval_csv: bad header in " + path.string());
  }
  EvalReport report;
  bool saw_overall = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, acc, secs;
    if (!std::getline(row, id, ',') || !std::getline(row, acc, ',') || !std::getline(row, secs)) {
      throw FormatError("read_eval_csv: malformed row '" + line + "' in " + path.string());
    }
    if (id == "overall") {
      report.overall_accuracy = std::stod(acc);
      report.total_infer_time_s = std::stod(secs);
      saw_overall = true;
    } else {
      SceneEval s;
      s.scene_id = std::stoi(id);
      s.accuracy = std::stod(acc);
      s.infer_time_s = std::stod(secs);
      report.scenes.push_back(s);
    }
  }
  if (!saw_overall) throw FormatError("read_eval_csv: missing overall summary line in " + path.string());
  if (!report.scenes.empty()) {
    double acc_sum = 0.0;
    for (const SceneEval& s : report.scenes) acc_sum += s.accuracy;
    report.mean_scene_accuracy = acc_sum / static_cast<double>(report.scenes.size());
  }
  return report;
}

}  // namespace cloudmask
