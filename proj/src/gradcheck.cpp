#include "cloudmask/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cloudmask/graph.hpp"
#include "cloudmask/rng.hpp"
#include "cloudmask/unet.hpp"

namespace cloudmask {

namespace {

template <typename T>
TensorT<T> rand_uniform(Rng rng, Shape shape, double lo, double hi, bool requires_grad) {
  TensorT<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  t.requires_grad = requires_grad;
  return t;
}

// Signed values bounded away from zero, so relu's kink never sits inside
// the finite-difference window.
template <typename T>
TensorT<T> rand_off_zero(Rng rng, Shape shape, bool requires_grad) {
  TensorT<T> t(std::move(shape));
  for (auto& v : t.data) {
    const double mag = rng.uniform(0.1, 1.0);
    v = static_cast<T>(rng.uniform() < 0.5 ? -mag : mag);
  }
  t.requires_grad = requires_grad;
  return t;
}

// A shuffled lattice with jitter: every pair of values differs by at least
// 0.03, so a 2x2 max never changes winner inside the FD window.
template <typename T>
TensorT<T> rand_separated(Rng rng, Shape shape, bool requires_grad) {
  TensorT<T> t(std::move(shape));
  const size_t n = t.data.size();
  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;
  for (size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.bounded(i + 1)]);
  for (size_t i = 0; i < n; ++i) {
    t.data[i] = static_cast<T>(static_cast<double>(perm[i]) * 0.05 + rng.uniform(0.0, 0.015));
  }
  t.requires_grad = requires_grad;
  return t;
}

template <typename T>
TensorT<T> rand_labels(Rng rng, Shape shape) {
  TensorT<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform() < 0.5 ? 0 : 1);
  return t;
}

template <typename T>
struct CaseDef {
  std::string name;
  // Returns worst relative error for one seed.
  double (*run)(std::uint64_t seed, double eps, GradCheckStats* stats);
};

template <typename T>
using G = GraphT<T>;
template <typename T>
using Ids = std::vector<typename GraphT<T>::NodeId>;

// Convolution cases run in a positive regime: with x, k, b all positive,
// every gradient element is a sum of same-sign terms bounded away from the
// finite-difference noise floor. Signed samples put random elements below
// that floor where the relative comparison resolves nothing.
template <typename T>
double case_conv_same(std::uint64_t seed, double eps, GradCheckStats* stats) {
  Rng rng(seed);
  std::vector<TensorT<T>> inputs;
  inputs.push_back(rand_uniform<T>(rng, {1, 2, 5, 5}, 0.1, 1.0, true));
  inputs.push_back(rand_uniform<T>(rng, {2, 2, 3, 3}, 0.02, 0.12, true));
  inputs.push_back(rand_uniform<T>(rng, {2}, 0.0, 0.2, true));
  return grad_check<T>(
      [](G<T>& g, const Ids<T>& ids) { return g.sum(g.sigmoid(g.conv2d(ids[0], ids[1], ids[2], Padding::kSame))); },
      inputs, eps, stats);
}

template <typename T>
double case_conv_valid(std::uint64_t seed, double eps, GradCheckStats* stats) {
  Rng rng(seed);
  std::vector<TensorT<T>> inputs;
  inputs.push_back(rand_uniform<T>(rng, {2, 2, 6, 5}, 0.1, 1.0, true));
  inputs.push_back(rand_uniform<T>(rng, {3, 2, 3, 3}, 0.02, 0.12, true));
  inputs.push_back(rand_uniform<T>(rng, {3}, 0.0, 0.2, true));
  return grad_check<T>(
      [](G<T>& g, const Ids<T>& ids) { return g.sum(g.sigmoid(g.conv2d(ids[0], ids[1], ids[2], Padding::kValid))); },
      inputs, eps, stats);
}

template <typename T>
double case_maxpool(std::uint64_t seed, double eps, GradCheckStats* stats) {
  Rng rng(seed);
  std::vector<TensorT<T>> inputs;
  inputs.push_back(rand_separated<T>(rng, {1, 2, 6, 6}, true));
  return grad_check<T>([](G<T>& g, const Ids<T>& ids) { return g.sum(g.sigmoid(g.maxpool2(ids[0]))); }, inputs, eps, stats);
}

template <typename T>
double case_upconv(std::uint64_t seed, double eps, GradCheckStats* stats) {
  Rng rng(seed);
  std::vector<TensorT<T>> inputs;
  inputs.push_back(rand_uniform<T>(rng, {1, 3, 4, 4}, 0.1, 1.0, true));
  inputs.push_back(rand_uniform<T>(rng, {3, 2, 2, 2}, 0.05, 0.4, true));
  inputs.push_back(rand_uniform<T>(rng, {2}, 0.0, 0.2, true));
  return grad_check<T>(
      [](G<T>& g, const Ids<T>& ids) { return g.sum(g.sigmoid(g.upconv2(ids[0], ids[1], ids[2]))); }, inputs, eps, stats);
}

template <typename T>
double case_concat(std::uint64_t seed, double eps, GradCheckStats* stats) {
  Rng rng(seed);
  std::vector<TensorT<T>> inputs;
  inputs.push_back(rand_uniform<T>(rng, {1, 2, 4, 4}, -1.0, 1.0, true));
  inputs.push_back(rand_uniform<T>(rng, {1, 3, 4, 4}, -1.0, 1.0, true));
  return grad_check<T>(
      [](G<T>& g, const Ids<T>& ids) { return g.sum(g.sigmoid(g.concat_channels(ids[0], ids[1]))); }, inputs, eps, stats);
}

template <typename T>
double case_relu(std::uint64_t seed, double eps, GradCheckStats* stats) {
  Rng rng(seed);
  std::vector<TensorT<T>> inputs;
  inputs.push_back(rand_off_zero<T>(rng, {1, 2, 6, 6}, true));
  return grad_check<T>([](G<T>& g, const Ids<T>& ids) { return g.sum(g.sigmoid(g.relu(ids[0]))); }, inputs, eps, stats);
}

template <typename T>
double case_sigmoid(std::uint64_t seed, double eps, GradCheckStats* stats) {
  Rng rng(seed);
  std::vector<TensorT<T>> inputs;
  inputs.push_back(rand_uniform<T>(rng, {1, 1, 8, 8}, -3.0, 3.0, true));
  inputs.push_back(rand_labels<T>(rng, {1, 1, 8, 8}));
  return grad_check<T>([](G<T>& g, const Ids<T>& ids) { return g.bce_loss(g.sigmoid(ids[0]), ids[1]); }, inputs, eps, stats);
}

template <typename T>
double case_bce(std::uint64_t seed, double eps, GradCheckStats* stats) {
  Rng rng(seed);
  std::vector<TensorT<T>> inputs;
  inputs.push_back(rand_uniform<T>(rng, {1, 1, 6, 6}, 0.05, 0.95, true));
  inputs.push_back(rand_labels<T>(rng, {1, 1, 6, 6}));
  return grad_check<T>([](G<T>& g, const Ids<T>& ids) { return g.bce_loss(ids[0], ids[1]); }, inputs, eps, stats);
}

template <typename T>
double case_unet(std::uint64_t seed, double eps, GradCheckStats* stats) {
  UNetConfig cfg;
  cfg.in_channels = 9;
  cfg.depth = 1;
  cfg.base_channels = 2;
  cfg.kernel_size = 3;
  cfg.patch_size = 8;
  const ModelParamsT<T> params = build_unet_t<T>(cfg, seed);
  Rng rng(seed);
  std::vector<TensorT<T>> inputs;
  for (const auto& nt : params.tensors) inputs.push_back(nt.tensor);
  inputs.push_back(rand_uniform<T>(rng.stream("batch"), {1, 9, 8, 8}, 0.0, 1.0, true));
  Rng lrng = rng.stream("labels");
  inputs.push_back(rand_labels<T>(lrng, {1, 1, 8, 8}));
  const size_t nparams = params.tensors.size();
  return grad_check<T>(
      [cfg, nparams](G<T>& g, const Ids<T>& ids) {
        Ids<T> pids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(nparams));
        const auto probs = unet_forward_graph(g, cfg, pids, ids[nparams]);
        return g.bce_loss(probs, ids[nparams + 1]);
      },
      inputs, eps, stats);
}

template <typename T>
std::vector<GradCheckCase> run_mode(int bits, double eps, double tolerance, int seed_count) {
  const CaseDef<T> cases[] = {
      {"conv2d/same", &case_conv_same<T>},   {"conv2d/valid", &case_conv_valid<T>},
      {"maxpool2", &case_maxpool<T>},        {"upconv2", &case_upconv<T>},
      {"concat_channels", &case_concat<T>},  {"relu", &case_relu<T>},
      {"sigmoid+bce", &case_sigmoid<T>},     {"bce_loss", &case_bce<T>},
      {"unet-depth1", &case_unet<T>},
  };
  std::vector<GradCheckCase> results;
  for (const CaseDef<T>& def : cases) {
    GradCheckCase c;
    c.name = def.name;
    c.bits = bits;
    c.eps = eps;
    c.tolerance = tolerance;
    GradCheckStats stats;
    for (int s = 0; s < seed_count; ++s) {
      c.worst = std::max(c.worst, def.run(static_cast<std::uint64_t>(s), eps, &stats));
    }
    c.checked = stats.checked;
    c.skipped = stats.skipped;
    // The check only means something if kink exclusions stay rare.
    c.pass = c.worst < tolerance && c.checked > 4 * c.skipped;
    results.push_back(std::move(c));
  }
  return results;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_battery(int seed_count) {
  std::vector<GradCheckCase> all = run_mode<float>(32, 1e-3, 1e-2, seed_count);
  std::vector<GradCheckCase> wide = run_mode<double>(64, 1e-5, 1e-6, seed_count);
  all.insert(all.end(), std::make_move_iterator(wide.begin()), std::make_move_iterator(wide.end()));
  return all;
}

}  // namespace cloudmask
