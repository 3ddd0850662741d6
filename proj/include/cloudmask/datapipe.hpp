#pragma once

// Synthetic Sentinel-3-like scenes plus the patch pipeline: crop to a patch
// lattice, non-overlapping training patches, shuffled 80/20 split, and
// overlapping test patches with full-image reconstruction.

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "cloudmask/tensor.hpp"

namespace cloudmask {

inline constexpr int kReflectanceChannels = 6;
inline constexpr int kBrightnessChannels = 3;
inline constexpr int kSceneChannels = kReflectanceChannels + kBrightnessChannels;

// H x W raster of physical measurements, channel-major 32-bit values.
struct MultiChannelImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  MultiChannelImage() = default;
  MultiChannelImage(int h, int w, int c)
      : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, 0.0f) {}

  float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
};

// H x W binary raster; 1 = clear-sky, 0 = cloudy.
struct MaskImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  MaskImage() = default;
  MaskImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

// Single-channel float raster (probability maps and noise fields).
struct FloatImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FloatImage() = default;
  FloatImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0.0f) {}

  float& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  float at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

struct Scene {
  MultiChannelImage image;
  MaskImage mask;
};

struct SceneOptions {
  // Number of cloud bumps; negative means derive from the scene area.
  int forced_bumps = -1;
};

Scene generate_scene(std::uint64_t seed, int height, int width, const SceneOptions& options = {});

double cloud_fraction(const MaskImage& mask);

// Exact geometry mapping patches back to positions in a full image.
struct PatchGrid {
  int patch = 0;
  int source_h = 0;
  int source_w = 0;
  std::vector<std::pair<int, int>> origins;  // (row, col) top-left corners
};

// One training patch with provenance.
struct Patch {
  int image_id = -1;
  int row = 0;
  int col = 0;
  MultiChannelImage image;
  MaskImage mask;
};

struct DatasetSplit {
  std::vector<Patch> train;
  std::vector<Patch> val;
  std::uint64_t seed = 0;
};

// Largest top-left-anchored crop whose dims are multiples of the patch side.
Scene crop_to_grid(const MultiChannelImage& image, const MaskImage& mask, int patch);

// Non-overlapping lattice over cropped scenes; order is image order, then
// row-major origins.
std::vector<Patch> extract_train_patches(const std::vector<Scene>& scenes, int patch);

// Seeded Fisher-Yates shuffle, first ceil(ratio*n) patches go to train.
DatasetSplit split_train_val(std::vector<Patch> patches, double ratio, std::uint64_t seed);

struct TestPatches {
  std::vector<MultiChannelImage> patches;
  PatchGrid grid;
};

// Overlapping cover: per axis ceil((dim-P)/S)+1 origins spread as evenly as
// integer arithmetic allows, first at 0 and last flush with the far edge.
TestPatches extract_test_patches(const MultiChannelImage& image, int patch, int target_stride);

// Per-pixel arithmetic mean of every patch prediction covering that pixel.
FloatImage reconstruct(const std::vector<FloatImage>& prob_patches, const PatchGrid& grid);

void write_dataset(const std::filesystem::path& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_dataset(const std::filesystem::path& path);

}  // namespace cloudmask
