#include "cloudmask/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cloudmask/rng.hpp"
#include "cloudmask/serial.hpp"

namespace cloudmask {

namespace {

// Smooth value noise: a seeded coarse grid, bilinearly interpolated.
FloatImage value_noise(Rng rng, int height, int width, int cell, float lo, float hi) {
  const int gh = height / cell + 2;
  const int gw = width / cell + 2;
  std::vector<float> grid(static_cast<size_t>(gh) * gw);
  for (auto& v : grid) v = static_cast<float>(rng.uniform(lo, hi));

  FloatImage out(height, width);
  for (int y = 0; y < height; ++y) {
    const double gy = static_cast<double>(y) / cell;
    const int y0 = static_cast<int>(gy);
    const double fy = gy - y0;
    for (int x = 0; x < width; ++x) {
      const double gx = static_cast<double>(x) / cell;
      const int x0 = static_cast<int>(gx);
      const double fx = gx - x0;
      const double v00 = grid[static_cast<size_t>(y0) * gw + x0];
      const double v01 = grid[static_cast<size_t>(y0) * gw + x0 + 1];
      const double v10 = grid[static_cast<size_t>(y0 + 1) * gw + x0];
      const double v11 = grid[static_cast<size_t>(y0 + 1) * gw + x0 + 1];
      const double top = v00 + (v01 - v00) * fx;
      const double bot = v10 + (v11 - v10) * fx;
      out.at(y, x) = static_cast<float>(top + (bot - top) * fy);
    }
  }
  return out;
}

struct CloudBump {
  double cy, cx, sigma, amp;
};

// Tuned so 128x128 scenes land a cloud fraction between roughly 0.1 and 0.7
// across seeds; frozen values are pinned by tests.
constexpr double kBumpDensity = 5.0;        // bumps per 128x128 of area
constexpr double kBumpSigmaLo = 0.09;       // fraction of min(h, w)
constexpr double kBumpSigmaHi = 0.22;
constexpr double kBumpAmpLo = 0.55;
constexpr double kBumpAmpHi = 1.15;
constexpr double kCloudThreshold = 0.5;     // cloudiness >= this is cloudy
constexpr double kOpacityOnset = 0.35;      // opacity ramps 0..1 over this band
constexpr double kOpacityFull = 0.75;
constexpr float kCloudAlbedo = 0.88f;       // reflectance pulled toward this
constexpr float kCloudTopBrightness = 0.22f;  // brightness pulled toward this
constexpr double kPixelNoiseSigma = 0.015;

}  // namespace

Scene generate_scene(std::uint64_t seed, int height, int width, const SceneOptions& options) {
  if (height < 16 || width < 16) {
    throw ValueError("generate_scene: dims must be at least 16x16, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  const Rng root(seed);
  Scene scene;
  scene.image = MultiChannelImage(height, width, kSceneChannels);
  scene.mask = MaskImage(height, width);

  // Per-channel smooth background; reflectance sits low, brightness high.
  std::vector<FloatImage> background;
  background.reserve(kSceneChannels);
  const int cell = std::max(8, std::min(height, width) / 8);
  for (int c = 0; c < kSceneChannels; ++c) {
    const bool reflectance = c < kReflectanceChannels;
    background.push_back(value_noise(root.stream("background", static_cast<std::uint64_t>(c)), height, width,
                                     cell, reflectance ? 0.05f : 0.55f, reflectance ? 0.45f : 0.95f));
  }

  // Cloudiness field: a sum of seeded Gaussian bumps.
  Rng bump_rng = root.stream("bumps");
  const double area_scale = static_cast<double>(height) * width / (128.0 * 128.0);
  int bump_count = options.forced_bumps >= 0
                       ? options.forced_bumps
                       : std::max(1, static_cast<int>(std::lround(kBumpDensity * area_scale)));
  std::vector<CloudBump> bumps;
  bumps.reserve(static_cast<size_t>(bump_count));
  const double min_dim = std::min(height, width);
  for (int i = 0; i < bump_count; ++i) {
    CloudBump b{};
    b.cy = bump_rng.uniform(0.0, height);
    b.cx = bump_rng.uniform(0.0, width);
    b.sigma = bump_rng.uniform(kBumpSigmaLo, kBumpSigmaHi) * min_dim;
    b.amp = bump_rng.uniform(kBumpAmpLo, kBumpAmpHi);
    bumps.push_back(b);
  }

  FloatImage cloudiness(height, width);
  for (const CloudBump& b : bumps) {
    const double inv2s2 = 1.0 / (2.0 * b.sigma * b.sigma);
    for (int y = 0; y < height; ++y) {
      const double dy = y - b.cy;
      for (int x = 0; x < width; ++x) {
        const double dx = x - b.cx;
        cloudiness.at(y, x) += static_cast<float>(b.amp * std::exp(-(dy * dy + dx * dx) * inv2s2));
      }
    }
  }

  Rng noise_rng = root.stream("pixel-noise");
  for (int c = 0; c < kSceneChannels; ++c) {
    const bool reflectance = c < kReflectanceChannels;
    const float target = reflectance ? kCloudAlbedo : kCloudTopBrightness;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double cl = cloudiness.at(y, x);
        const double opacity =
            std::clamp((cl - kOpacityOnset) / (kOpacityFull - kOpacityOnset), 0.0, 1.0);
        double v = background[static_cast<size_t>(c)].at(y, x);
        v += opacity * (target - v);
        v += noise_rng.normal() * kPixelNoiseSigma;
        scene.image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      scene.mask.at(y, x) = cloudiness.at(y, x) < kCloudThreshold ? 1 : 0;  // 1 = clear-sky
    }
  }
  return scene;
}

double cloud_fraction(const MaskImage& mask) {
  if (mask.data.empty()) return 0.0;
  std::int64_t cloudy = 0;
  for (std::uint8_t v : mask.data) cloudy += v == 0 ? 1 : 0;
  return static_cast<double>(cloudy) / static_cast<double>(mask.data.size());
}

Scene crop_to_grid(const MultiChannelImage& image, const MaskImage& mask, int patch) {
  if (patch < 1) throw ValueError("crop_to_grid: patch side must be positive");
  if (image.height != mask.height || image.width != mask.width) {
    throw ShapeError("crop_to_grid: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " and mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + " differ");
  }
  if (image.height < patch || image.width < patch) {
    throw ShapeError("crop_to_grid: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " smaller than one " + std::to_string(patch) + "x" + std::to_string(patch) + " patch");
  }
  const int h = (image.height / patch) * patch;
  const int w = (image.width / patch) * patch;
  Scene out;
  out.image = MultiChannelImage(h, w, image.channels);
  out.mask = MaskImage(h, w);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      const float* src = &image.data[(static_cast<size_t>(c) * image.height + y) * image.width];
      std::copy(src, src + w, &out.image.data[(static_cast<size_t>(c) * h + y) * w]);
    }
  }
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* src = &mask.data[static_cast<size_t>(y) * mask.width];
    std::copy(src, src + w, &out.mask.data[static_cast<size_t>(y) * w]);
  }
  return out;
}

namespace {

MultiChannelImage copy_window(const MultiChannelImage& image, int row, int col, int size) {
  MultiChannelImage out(size, size, image.channels);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < size; ++y) {
      const float* src = &image.data[(static_cast<size_t>(c) * image.height + row + y) * image.width + col];
      std::copy(src, src + size, &out.data[(static_cast<size_t>(c) * size + y) * size]);
    }
  }
  return out;
}

MaskImage copy_mask_window(const MaskImage& mask, int row, int col, int size) {
  MaskImage out(size, size);
  for (int y = 0; y < size; ++y) {
    const std::uint8_t* src = &mask.data[static_cast<size_t>(row + y) * mask.width + col];
    std::copy(src, src + size, &out.data[static_cast<size_t>(y) * size]);
  }
  return out;
}

}  // namespace

std::vector<Patch> extract_train_patches(const std::vector<Scene>& scenes, int patch) {
  if (patch < 1) throw ValueError("extract_train_patches: patch side must be positive");
  std::vector<Patch> patches;
  for (size_t id = 0; id < scenes.size(); ++id) {
    const Scene& s = scenes[id];
    if (s.image.height % patch != 0 || s.image.width % patch != 0) {
      throw ShapeError("extract_train_patches: scene " + std::to_string(id) + " is " +
                       std::to_string(s.image.height) + "x" + std::to_string(s.image.width) +
                       ", not a multiple of " + std::to_string(patch) + "; crop_to_grid first");
    }
    for (int row = 0; row + patch <= s.image.height; row += patch) {
      for (int col = 0; col + patch <= s.image.width; col += patch) {
        Patch p;
        p.image_id = static_cast<int>(id);
        p.row = row;
        p.col = col;
        p.image = copy_window(s.image, row, col, patch);
        p.mask = copy_mask_window(s.mask, row, col, patch);
        patches.push_back(std::move(p));
      }
    }
  }
  return patches;
}

DatasetSplit split_train_val(std::vector<Patch> patches, double ratio, std::uint64_t seed) {
  if (patches.empty()) throw ValueError("split_train_val: empty patch collection");
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ValueError("split_train_val: ratio must be in (0,1), got " + std::to_string(ratio));
  }
  Rng rng = Rng(seed).stream("train-val-split");
  const size_t n = patches.size();
  for (size_t i = n - 1; i > 0; --i) {
    const size_t j = static_cast<size_t>(rng.bounded(i + 1));
    std::swap(patches[i], patches[j]);
  }
  // ceil(ratio*n) with a guard against FP representation of ratios like 0.8.
  const auto train_count =
      static_cast<size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  DatasetSplit split;
  split.seed = seed;
  split.train.assign(std::make_move_iterator(patches.begin()),
                     std::make_move_iterator(patches.begin() + static_cast<std::ptrdiff_t>(train_count)));
  split.val.assign(std::make_move_iterator(patches.begin() + static_cast<std::ptrdiff_t>(train_count)),
                   std::make_move_iterator(patches.end()));
  return split;
}

namespace {

std::vector<int> cover_origins(int dim, int patch, int stride) {
  if (dim < patch) {
    throw ShapeError("extract_test_patches: dim " + std::to_string(dim) + " smaller than patch " +
                     std::to_string(patch));
  }
  const int reach = dim - patch;
  if (reach == 0) return {0};
  const int count = (reach + stride - 1) / stride + 1;  // ceil((dim-P)/S) + 1
  std::vector<int> origins(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    // round(i*reach/(count-1)) in integer arithmetic
    origins[static_cast<size_t>(i)] =
        static_cast<int>((2LL * i * reach + (count - 1)) / (2LL * (count - 1)));
  }
  return origins;
}

}  // namespace

TestPatches extract_test_patches(const MultiChannelImage& image, int patch, int target_stride) {
  if (target_stride <= 0) {
    throw ValueError("extract_test_patches: stride must be positive, got " + std::to_string(target_stride));
  }
  if (target_stride > patch) {
    throw ValueError("extract_test_patches: stride " + std::to_string(target_stride) + " larger than patch " +
                     std::to_string(patch) + " cannot cover every pixel");
  }
  const std::vector<int> rows = cover_origins(image.height, patch, target_stride);
  const std::vector<int> cols = cover_origins(image.width, patch, target_stride);

  TestPatches out;
  out.grid.patch = patch;
  out.grid.source_h = image.height;
  out.grid.source_w = image.width;
  for (int r : rows) {
    for (int c : cols) {
      out.grid.origins.emplace_back(r, c);
      out.patches.push_back(copy_window(image, r, c, patch));
    }
  }
  return out;
}

FloatImage reconstruct(const std::vector<FloatImage>& prob_patches, const PatchGrid& grid) {
  if (prob_patches.size() != grid.origins.size()) {
    throw ShapeError("reconstruct: " + std::to_string(prob_patches.size()) + " patches but grid has " +
                     std::to_string(grid.origins.size()) + " origins");
  }
  FloatImage out(grid.source_h, grid.source_w);
  std::vector<double> acc(out.data.size(), 0.0);
  std::vector<std::int32_t> count(out.data.size(), 0);
  for (size_t i = 0; i < prob_patches.size(); ++i) {
    const FloatImage& p = prob_patches[i];
    if (p.height != grid.patch || p.width != grid.patch) {
      throw ShapeError("reconstruct: patch " + std::to_string(i) + " is " + std::to_string(p.height) + "x" +
                       std::to_string(p.width) + ", grid expects " + std::to_string(grid.patch));
    }
    const auto [row, col] = grid.origins[i];
    if (row < 0 || col < 0 || row + grid.patch > grid.source_h || col + grid.patch > grid.source_w) {
      throw ShapeError("reconstruct: origin (" + std::to_string(row) + "," + std::to_string(col) +
                       ") does not fit the source extent");
    }
    for (int y = 0; y < grid.patch; ++y) {
      const size_t base = static_cast<size_t>(row + y) * grid.source_w + col;
      for (int x = 0; x < grid.patch; ++x) {
        acc[base + x] += p.at(y, x);
        ++count[base + x];
      }
    }
  }
  for (size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = count[i] > 0 ? static_cast<float>(acc[i] / count[i]) : 0.0f;
  }
  return out;
}

namespace {
constexpr char kDatasetMagic[4] = {'C', 'M', 'D', 'S'};
constexpr std::uint16_t kDatasetVersion = 1;
}  // namespace

void write_dataset(const std::filesystem::path& path, const std::vector<Scene>& scenes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_dataset: cannot open " + path.string());
  write_bytes(os, kDatasetMagic, 4);
  write_u16(os, kDatasetVersion);
  write_u32(os, static_cast<std::uint32_t>(scenes.size()));
  for (const Scene& s : scenes) {
    write_u32(os, static_cast<std::uint32_t>(s.image.height));
    write_u32(os, static_cast<std::uint32_t>(s.image.width));
    write_u32(os, static_cast<std::uint32_t>(s.image.channels));
    write_f32_array(os, s.image.data.data(), s.image.data.size());
    write_bytes(os, s.mask.data.data(), s.mask.data.size());
  }
  os.flush();
  if (!os) throw IoError("write_dataset: write failed for " + path.string());
}

std::vector<Scene> read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_dataset: cannot open " + path.string());
  char magic[4];
  read_bytes(is, magic, 4, "dataset magic");
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw FormatError("read_dataset: bad magic in " + path.string() + ", expected \"CMDS\"");
  }
  const std::uint16_t version = read_u16(is, "dataset version");
  if (version != kDatasetVersion) {
    throw VersionError("read_dataset: unsupported version " + std::to_string(version) + ", expected " +
                       std::to_string(kDatasetVersion));
  }
  const std::uint32_t count = read_u32(is, "scene count");
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t h = read_u32(is, "scene height");
    const std::uint32_t w = read_u32(is, "scene width");
    const std::uint32_t c = read_u32(is, "scene channels");
    if (h == 0 || w == 0 || c == 0 || h > (1u << 20) || w > (1u << 20) || c > 4096) {
      throw FormatError("read_dataset: implausible scene header " + std::to_string(h) + "x" + std::to_string(w) +
                        "x" + std::to_string(c));
    }
    Scene s;
    s.image = MultiChannelImage(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    read_f32_array(is, s.image.data.data(), s.image.data.size(), "scene pixels");
    s.mask = MaskImage(static_cast<int>(h), static_cast<int>(w));
    read_bytes(is, s.mask.data.data(), s.mask.data.size(), "scene mask");
    for (std::uint8_t v : s.mask.data) {
      if (v > 1) throw FormatError("read_dataset: mask byte " + std::to_string(v) + " is not a 0/1 label");
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace cloudmask
