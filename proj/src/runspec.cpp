#include "cloudmask/runspec.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "cloudmask/rng.hpp"

namespace cloudmask {

namespace {

const std::set<std::string>& allowed_keys() {
  static const std::set<std::string> keys = {
      "seeds",
      "model.depth",
      "model.base_channels",
      "model.patch",
      "train.lr",
      "train.batch",
      "train.max_epochs",
      "train.patience",
      "data.path",
      "data.generator.scenes",
      "data.generator.height",
      "data.generator.width",
      "data.generator.seed",
      "eval.stride",
      "eval.threshold",
      "out_root",
      "parallelism",
      "run_dir",
  };
  return keys;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void RunSpec::validate() const {
  if (seeds.empty()) throw ConfigError("run spec: 'seeds' must list at least one seed");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("run spec: duplicate seeds are not allowed");
  model.validate();
  train.validate();
  if (static_cast<bool>(data.generator) == !data.path.empty()) {
    throw ConfigError("run spec: specify exactly one of data.path or data.generator");
  }
  if (data.generator) {
    if (data.generator->scenes < 2) {
      throw ConfigError("run spec: data.generator.scenes must be >= 2 (train + test)");
    }
    if (data.generator->height < 16 || data.generator->width < 16) {
      throw ConfigError("run spec: generated scenes must be at least 16x16");
    }
  }
  const int stride = effective_stride();
  if (stride < 1 || stride > model.patch_size) {
    throw ConfigError("run spec: eval.stride " + std::to_string(stride) + " must lie in [1, patch=" +
                      std::to_string(model.patch_size) + "]");
  }
  if (!(eval.threshold >= 0.0 && eval.threshold <= 1.0)) {
    throw ConfigError("run spec: eval.threshold must be in [0,1]");
  }
  if (out_root.empty()) throw ConfigError("run spec: 'out_root' is required");
  if (parallelism < 1) throw ConfigError("run spec: parallelism must be >= 1");
}

RunSpec parse_runspec(const YamlDoc& doc, const std::filesystem::path& base_dir) {
  for (const std::string& key : doc.keys()) {
    if (!allowed_keys().count(key)) {
      throw ConfigError(doc.origin + ": unknown key '" + key + "'");
    }
  }

  RunSpec spec;
  spec.seeds = doc.get_u64_list("seeds");
  spec.model.in_channels = kSceneChannels;
  spec.model.depth = static_cast<int>(doc.get_int_or("model.depth", 2));
  spec.model.base_channels = static_cast<int>(doc.get_int_or("model.base_channels", 8));
  spec.model.patch_size = static_cast<int>(doc.get_int_or("model.patch", 64));
  spec.train.learning_rate = doc.get_double_or("train.lr", 1e-3);
  spec.train.batch_size = static_cast<int>(doc.get_int_or("train.batch", 32));
  spec.train.max_epochs = static_cast<int>(doc.get_int_or("train.max_epochs", 200));
  spec.train.patience = static_cast<int>(doc.get_int_or("train.patience", 25));

  const bool has_path = doc.has("data.path");
  const bool has_generator = doc.has("data.generator.scenes") || doc.has("data.generator.height") ||
                             doc.has("data.generator.width") || doc.has("data.generator.seed");
  if (has_path && has_generator) {
    throw ConfigError(doc.origin + ": specify exactly one of data.path or data.generator");
  }
  if (has_path) {
    std::filesystem::path p = doc.get_string("data.path");
    spec.data.path = p.is_absolute() ? p : base_dir / p;
  } else if (has_generator) {
    GeneratorSpec gen;
    gen.scenes = static_cast<int>(doc.get_int_or("data.generator.scenes", gen.scenes));
    gen.height = static_cast<int>(doc.get_int_or("data.generator.height", gen.height));
    gen.width = static_cast<int>(doc.get_int_or("data.generator.width", gen.width));
    gen.seed = static_cast<std::uint64_t>(doc.get_int_or("data.generator.seed", static_cast<std::int64_t>(gen.seed)));
    spec.data.generator = gen;
  } else {
    throw ConfigError(doc.origin + ": a data.path or data.generator section is required");
  }

  spec.eval.stride = static_cast<int>(doc.get_int_or("eval.stride", 0));
  spec.eval.threshold = doc.get_double_or("eval.threshold", 0.5);

  std::filesystem::path root = doc.get_string("out_root");
  spec.out_root = root.is_absolute() ? root : base_dir / root;
  spec.parallelism = static_cast<int>(doc.get_int_or("parallelism", 1));
  if (doc.has("run_dir")) {
    std::filesystem::path rd = doc.get_string("run_dir");
    spec.run_dir = rd.is_absolute() ? rd : base_dir / rd;
  }
  spec.validate();
  return spec;
}

RunSpec load_runspec(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_runspec: cannot open " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_runspec(parse_yamlish(buf.str(), path.string()),
                       std::filesystem::absolute(path).parent_path());
}

std::string serialize_runspec(const RunSpec& spec, std::optional<std::uint64_t> seed,
                              const std::filesystem::path& run_dir) {
  std::ostringstream os;
  os << "seeds: [";
  if (seed) {
    os << *seed;
  } else {
    for (size_t i = 0; i < spec.seeds.size(); ++i) {
      if (i) os << ", ";
      os << spec.seeds[i];
    }
  }
  os << "]\n";
  os << "model:\n";
  os << "  depth: " << spec.model.depth << "\n";
  os << "  base_channels: " << spec.model.base_channels << "\n";
  os << "  patch: " << spec.model.patch_size << "\n";
  os << "train:\n";
  os << "  lr: " << fmt_g(spec.train.learning_rate) << "\n";
  os << "  batch: " << spec.train.batch_size << "\n";
  os << "  max_epochs: " << spec.train.max_epochs << "\n";
  os << "  patience: " << spec.train.patience << "\n";
  os << "data:\n";
  if (spec.data.generator) {
    os << "  generator:\n";
    os << "    scenes: " << spec.data.generator->scenes << "\n";
    os << "    height: " << spec.data.generator->height << "\n";
    os << "    width: " << spec.data.generator->width << "\n";
    os << "    seed: " << spec.data.generator->seed << "\n";
  } else {
    os << "  path: " << std::filesystem::absolute(spec.data.path).string() << "\n";
  }
  os << "eval:\n";
  os << "  stride: " << spec.effective_stride() << "\n";
  os << "  threshold: " << fmt_g(spec.eval.threshold) << "\n";
  os << "out_root: " << std::filesystem::absolute(spec.out_root).string() << "\n";
  os << "parallelism: " << spec.parallelism << "\n";
  if (!run_dir.empty()) {
    os << "run_dir: " << std::filesystem::absolute(run_dir).string() << "\n";
  }
  return os.str();
}

std::vector<Scene> load_scenes(const DataSpec& data) {
  if (data.generator) {
    const GeneratorSpec& gen = *data.generator;
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<size_t>(gen.scenes));
    const Rng root(gen.seed);
    for (int i = 0; i < gen.scenes; ++i) {
      scenes.push_back(generate_scene(root.stream("scene", static_cast<std::uint64_t>(i)).next_u64(), gen.height,
                                      gen.width));
    }
    return scenes;
  }
  return read_dataset(data.path);
}

SceneSet split_scenes(std::vector<Scene> scenes) {
  if (scenes.size() < 2) {
    throw ValueError("split_scenes: need at least 2 scenes for a train/test split, got " +
                     std::to_string(scenes.size()));
  }
  const size_t test_count = std::max<size_t>(1, scenes.size() / 10);
  SceneSet out;
  out.test.assign(std::make_move_iterator(scenes.end() - static_cast<std::ptrdiff_t>(test_count)),
                  std::make_move_iterator(scenes.end()));
  scenes.resize(scenes.size() - test_count);
  out.train = std::move(scenes);
  return out;
}

}  // namespace cloudmask
