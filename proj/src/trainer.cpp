#include "cloudmask/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cloudmask/rng.hpp"
#include "cloudmask/serial.hpp"

namespace cloudmask {

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

Tensor make_input_batch(const std::vector<Patch>& patches, const std::vector<size_t>& order, size_t begin,
                        size_t end) {
  const Patch& first = patches[order[begin]];
  const int c = first.image.channels, p = first.image.height;
  Tensor batch(Shape{static_cast<int>(end - begin), c, p, p});
  float* dst = batch.data.data();
  const size_t per = static_cast<size_t>(c) * p * p;
  for (size_t i = begin; i < end; ++i, dst += per) {
    const MultiChannelImage& img = patches[order[i]].image;
    std::copy(img.data.begin(), img.data.end(), dst);
  }
  return batch;
}

Tensor make_target_batch(const std::vector<Patch>& patches, const std::vector<size_t>& order, size_t begin,
                         size_t end) {
  const int p = patches[order[begin]].mask.height;
  Tensor batch(Shape{static_cast<int>(end - begin), 1, p, p});
  float* dst = batch.data.data();
  for (size_t i = begin; i < end; ++i) {
    for (std::uint8_t v : patches[order[i]].mask.data) *dst++ = static_cast<float>(v);
  }
  return batch;
}

}  // namespace

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("TrainConfig: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("TrainConfig: max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
  if (patience >= max_epochs) {
    throw ConfigError("TrainConfig: patience " + std::to_string(patience) + " must be smaller than max_epochs " +
                      std::to_string(max_epochs));
  }
}

AdamState AdamState::init(const ModelParams& params) {
  AdamState s;
  s.m.reserve(params.tensors.size());
  s.v.reserve(params.tensors.size());
  for (const auto& nt : params.tensors) {
    s.m.push_back(Tensor::zeros(nt.tensor.shape));
    s.v.push_back(Tensor::zeros(nt.tensor.shape));
  }
  return s;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state, const TrainConfig& cfg) {
  if (grads.size() != params.tensors.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.tensors.size()) + " parameters");
  }
  for (size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape != params.tensors[i].tensor.shape) {
      throw ShapeError("adam_step: gradient shape " + shape_str(grads[i].shape) + " does not match parameter '" +
                       params.tensors[i].name + "' " + shape_str(params.tensors[i].tensor.shape));
    }
    if (!grads[i].all_finite()) {
      throw ValueError("adam_step: non-finite gradient for parameter '" + params.tensors[i].name + "'");
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < grads.size(); ++i) {
    float* theta = params.tensors[i].tensor.data.data();
    float* m = state.m[i].data.data();
    float* v = state.v[i].data.data();
    const float* g = grads[i].data.data();
    const size_t n = grads[i].data.size();
    for (size_t j = 0; j < n; ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      theta[j] = static_cast<float>(theta[j] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

EarlyStopDecision early_stop_update(EarlyStopState& state, double val_metric, int epoch, int patience) {
  if (!std::isfinite(val_metric)) {
    throw ValueError("early_stop_update: non-finite validation metric at epoch " + std::to_string(epoch));
  }
  EarlyStopDecision d;
  if (val_metric < state.best_metric) {
    state.best_metric = val_metric;
    state.best_epoch = epoch;
    state.epochs_since_improvement = 0;
    d.improved = true;
  } else {
    state.epochs_since_improvement = epoch - state.best_epoch;
    d.stop = state.epochs_since_improvement >= patience;
  }
  return d;
}

PatchMetrics evaluate_patches(const ModelParams& params, const std::vector<Patch>& patches, int batch_size) {
  if (patches.empty()) throw ValueError("evaluate_patches: empty patch collection");
  std::vector<size_t> order(patches.size());
  std::iota(order.begin(), order.end(), size_t{0});
  double loss_sum = 0.0;
  std::int64_t correct = 0, total = 0;
  for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), begin + static_cast<size_t>(batch_size));
    const Tensor input = make_input_batch(patches, order, begin, end);
    const Tensor target = make_target_batch(patches, order, begin, end);
    const Tensor probs = unet_forward(params, input);
    loss_sum += bce_sum(probs, target);
    for (size_t i = 0; i < probs.data.size(); ++i) {
      const float pred = probs.data[i] > 0.5f ? 1.0f : 0.0f;
      correct += pred == target.data[i] ? 1 : 0;
    }
    total += probs.numel();
  }
  return {loss_sum / static_cast<double>(total), static_cast<double>(correct) / static_cast<double>(total)};
}

namespace {

void ensure_writable_run_dir(const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(out_dir)) {
    fs::create_directories(out_dir);
    return;
  }
  if (!fs::is_directory(out_dir)) throw IoError("train: " + out_dir.string() + " is not a directory");
  // The orchestrator pre-materializes the config snapshot, job script and
  // log redirects; anything else means a previous run lives here.
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    const std::string ext = entry.path().extension().string();
    if (name == "config.yaml" || ext == ".log" || ext == ".job" || ext == ".slurm") continue;
    throw IoError("train: refusing to overwrite " + out_dir.string() + " (found " + name + ")");
  }
}

}  // namespace

TrainOutcome train(const UNetConfig& model_cfg, const TrainConfig& train_cfg, const DatasetSplit& split,
                   const std::filesystem::path& out_dir) {
  model_cfg.validate();
  train_cfg.validate();
  if (split.train.empty()) throw ValueError("train: empty training set");
  if (split.val.empty()) {
    throw ValueError("train: empty validation set; early stopping needs validation patches");
  }
  ensure_writable_run_dir(out_dir);

  ModelParams params = build_unet(model_cfg, train_cfg.seed);
  AdamState adam = AdamState::init(params);
  const Rng run_rng(train_cfg.seed);

  TrainOutcome outcome;
  outcome.seed = train_cfg.seed;
  outcome.metrics_path = out_dir / "metrics.csv";
  outcome.checkpoint_path = out_dir / "checkpoint.cmck";

  std::ofstream log(outcome.metrics_path);
  if (!log) throw IoError("train: cannot open " + outcome.metrics_path.string());
  log << "epoch,train_loss,train_acc,val_loss,val_acc,epoch_time_s\n";
  log.flush();

  std::vector<size_t> order(split.train.size());
  EarlyStopState stopper;

  for (int epoch = 1; epoch <= train_cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle = run_rng.stream("epoch-shuffle", static_cast<std::uint64_t>(epoch));
    for (size_t i = order.size() - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(shuffle.bounded(i + 1));
      std::swap(order[i], order[j]);
    }

    int batch_idx = 0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(train_cfg.batch_size), ++batch_idx) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(train_cfg.batch_size));
      try {
        Graph g;
        std::vector<Graph::NodeId> pids;
        pids.reserve(params.tensors.size());
        for (const auto& nt : params.tensors) pids.push_back(g.leaf(nt.tensor));
        const Graph::NodeId input = g.leaf(make_input_batch(split.train, order, begin, end));
        const Graph::NodeId probs = unet_forward_graph(g, model_cfg, pids, input);
        const Graph::NodeId target = g.leaf(make_target_batch(split.train, order, begin, end));
        const Graph::NodeId loss = g.bce_loss(probs, target);
        g.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(pids.size());
        for (Graph::NodeId id : pids) grads.push_back(g.grad(id));
        adam_step(params, grads, adam, train_cfg);
      } catch (const Error& e) {
        throw Error("train: epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_idx) + ": " +
                    e.what());
      }
    }

    const PatchMetrics train_metrics = evaluate_patches(params, split.train, train_cfg.batch_size);
    const PatchMetrics val_metrics = evaluate_patches(params, split.val, train_cfg.batch_size);

    const EarlyStopDecision decision =
        early_stop_update(stopper, val_metrics.loss, epoch, train_cfg.patience);
    if (decision.improved) {
      save_checkpoint(params, &adam, outcome.checkpoint_path);
    }

    const auto t1 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_metrics.loss;
    rec.train_acc = train_metrics.accuracy;
    rec.val_loss = val_metrics.loss;
    rec.val_acc = val_metrics.accuracy;
    rec.wall_time_s = std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9);
    outcome.history.push_back(rec);

    log << rec.epoch << ',' << fmt_g(rec.train_loss) << ',' << fmt_g(rec.train_acc) << ',' << fmt_g(rec.val_loss)
        << ',' << fmt_g(rec.val_acc) << ',' << fmt_time(rec.wall_time_s) << '\n';
    log.flush();

    if (decision.stop) break;
  }

  outcome.epochs_run = static_cast<int>(outcome.history.size());
  outcome.best_epoch = stopper.best_epoch;
  outcome.best_val_loss = stopper.best_metric;
  const EpochRecord& last = outcome.history.back();
  outcome.final_train_loss = last.train_loss;
  outcome.final_train_acc = last.train_acc;
  outcome.final_val_loss = last.val_loss;
  outcome.final_val_acc = last.val_acc;
  for (const EpochRecord& r : outcome.history) outcome.total_time_s += r.wall_time_s;
  outcome.avg_epoch_time_s = outcome.total_time_s / outcome.epochs_run;
  return outcome;
}

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'M', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

void write_named_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  write_bytes(os, name.data(), name.size());
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
  write_f32_array(os, t.data.data(), t.data.size());
}

struct NamedTensorFile {
  std::string name;
  Tensor tensor;
};

NamedTensorFile read_named_tensor(std::istream& is) {
  const std::uint32_t name_len = read_u32(is, "tensor name length");
  if (name_len > 4096) {
    throw FormatError("checkpoint: implausible tensor name length " + std::to_string(name_len));
  }
  NamedTensorFile out;
  out.name.resize(name_len);
  read_bytes(is, out.name.data(), name_len, "tensor name");
  const std::uint32_t rank = read_u32(is, "tensor rank");
  if (rank > 8) throw FormatError("checkpoint: implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::int64_t numel = 1;
  for (auto& d : shape) {
    const std::uint32_t v = read_u32(is, "tensor dim");
    if (v > (1u << 24)) throw FormatError("checkpoint: implausible tensor dim " + std::to_string(v));
    d = static_cast<int>(v);
    numel *= d;
  }
  if (numel > (1ll << 28)) throw FormatError("checkpoint: implausible tensor size");
  out.tensor = Tensor(shape);
  read_f32_array(is, out.tensor.data.data(), out.tensor.data.size(), "tensor values");
  return out;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const AdamState* adam, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("save_checkpoint: cannot open " + tmp.string());
    write_bytes(os, kCheckpointMagic, 4);
    write_u16(os, kCheckpointVersion);
    const UNetConfig& c = params.config;
    write_u32(os, static_cast<std::uint32_t>(c.in_channels));
    write_u32(os, static_cast<std::uint32_t>(c.depth));
    write_u32(os, static_cast<std::uint32_t>(c.base_channels));
    write_u32(os, static_cast<std::uint32_t>(c.kernel_size));
    write_u32(os, static_cast<std::uint32_t>(c.patch_size));
    write_u32(os, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& nt : params.tensors) write_named_tensor(os, nt.name, nt.tensor);
    if (adam != nullptr) {
      write_bytes(os, "\x01", 1);
      write_u64(os, static_cast<std::uint64_t>(adam->t));
      write_u32(os, static_cast<std::uint32_t>(2 * params.tensors.size()));
      for (size_t i = 0; i < params.tensors.size(); ++i) {
        write_named_tensor(os, "adam.m." + params.tensors[i].name, adam->m[i]);
        write_named_tensor(os, "adam.v." + params.tensors[i].name, adam->v[i]);
      }
    } else {
      write_bytes(os, "\x00", 1);
    }
    os.flush();
    if (!os) throw IoError("save_checkpoint: write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path.string());
  char magic[4];
  read_bytes(is, magic, 4, "checkpoint magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("load_checkpoint: bad magic in " + path.string() + ", expected \"CMCK\"");
  }
  const std::uint16_t version = read_u16(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw VersionError("load_checkpoint: unsupported version " + std::to_string(version));
  }
  UNetConfig cfg;
  cfg.in_channels = static_cast<int>(read_u32(is, "config in_channels"));
  cfg.depth = static_cast<int>(read_u32(is, "config depth"));
  cfg.base_channels = static_cast<int>(read_u32(is, "config base_channels"));
  cfg.kernel_size = static_cast<int>(read_u32(is, "config kernel_size"));
  cfg.patch_size = static_cast<int>(read_u32(is, "config patch_size"));
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("load_checkpoint: stored config invalid: ") + e.what());
  }

  const std::vector<ParamSpec> specs = unet_param_specs(cfg);
  const std::uint32_t count = read_u32(is, "tensor count");
  if (count != specs.size()) {
    throw FormatError("load_checkpoint: " + std::to_string(count) + " tensors stored but config declares " +
                      std::to_string(specs.size()));
  }
  Checkpoint ck;
  ck.params.config = cfg;
  for (const ParamSpec& spec : specs) {
    NamedTensorFile nt = read_named_tensor(is);
    if (nt.name != spec.name || nt.tensor.shape != spec.shape) {
      throw FormatError("load_checkpoint: expected tensor '" + spec.name + "' " + shape_str(spec.shape) +
                        ", found '" + nt.name + "' " + shape_str(nt.tensor.shape));
    }
    if (!nt.tensor.all_finite()) {
      throw FormatError("load_checkpoint: non-finite values in tensor '" + nt.name + "'");
    }
    nt.tensor.requires_grad = true;
    ck.params.tensors.push_back({std::move(nt.name), std::move(nt.tensor)});
  }

  unsigned char adam_flag = 0;
  read_bytes(is, &adam_flag, 1, "adam flag");
  if (adam_flag == 1) {
    AdamState adam;
    adam.t = static_cast<std::int64_t>(read_u64(is, "adam timestep"));
    const std::uint32_t acount = read_u32(is, "adam tensor count");
    if (acount != 2 * specs.size()) {
      throw FormatError("load_checkpoint: adam section holds " + std::to_string(acount) + " tensors, expected " +
                        std::to_string(2 * specs.size()));
    }
    for (const ParamSpec& spec : specs) {
      NamedTensorFile m = read_named_tensor(is);
      NamedTensorFile v = read_named_tensor(is);
      if (m.name != "adam.m." + spec.name || v.name != "adam.v." + spec.name || m.tensor.shape != spec.shape ||
          v.tensor.shape != spec.shape) {
        throw FormatError("load_checkpoint: adam moments for '" + spec.name + "' malformed");
      }
      adam.m.push_back(std::move(m.tensor));
      adam.v.push_back(std::move(v.tensor));
    }
    ck.adam = std::move(adam);
  } else if (adam_flag != 0) {
    throw FormatError("load_checkpoint: adam flag byte must be 0 or 1, got " + std::to_string(adam_flag));
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const UNetConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.params.config == expected)) {
    throw ConfigError("load_checkpoint: stored config (in=" + std::to_string(ck.params.config.in_channels) +
                      ", depth=" + std::to_string(ck.params.config.depth) +
                      ", base=" + std::to_string(ck.params.config.base_channels) +
                      ", kernel=" + std::to_string(ck.params.config.kernel_size) +
                      ", patch=" + std::to_string(ck.params.config.patch_size) + ") does not match expected");
  }
  return ck;
}

}  // namespace cloudmask
