#include <cmath>
#include <doctest.h>

#include "cloudmask/gradcheck.hpp"
#include "cloudmask/graph.hpp"
#include "cloudmask/rng.hpp"

using namespace cloudmask;

namespace {

Tensor random_tensor(std::uint64_t seed, Shape shape, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Reference convolution: six nested loops, no im2col, no reuse of the
// production kernels.
Tensor conv_reference(const Tensor& x, const Tensor& k, const Tensor& b, Padding pad) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int ph = pad == Padding::kSame ? (kh - 1) / 2 : 0;
  const int pw = pad == Padding::kSame ? (kw - 1) / 2 : 0;
  const int oh = pad == Padding::kSame ? h : h - kh + 1;
  const int ow = pad == Padding::kSame ? w : w - kw + 1;
  Tensor y(Shape{n, cout, oh, ow});
  for (int nn = 0; nn < n; ++nn) {
    for (int co = 0; co < cout; ++co) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          float acc = b.data[static_cast<size_t>(co)];
          for (int ci = 0; ci < cin; ++ci) {
            for (int u = 0; u < kh; ++u) {
              for (int v = 0; v < kw; ++v) {
                const int ii = i + u - ph;
                const int jj = j + v - pw;
                if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                acc += x.at4(nn, ci, ii, jj) * k.at4(co, ci, u, v);
              }
            }
          }
          y.at4(nn, co, i, j) = acc;
        }
      }
    }
  }
  return y;
}

Tensor maxpool_reference(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y(Shape{n, c, h / 2, w / 2});
  for (int nn = 0; nn < n; ++nn) {
    for (int cc = 0; cc < c; ++cc) {
      for (int i = 0; i < h; i += 2) {
        for (int j = 0; j < w; j += 2) {
          const float m = std::max({x.at4(nn, cc, i, j), x.at4(nn, cc, i, j + 1), x.at4(nn, cc, i + 1, j),
                                    x.at4(nn, cc, i + 1, j + 1)});
          y.at4(nn, cc, i / 2, j / 2) = m;
        }
      }
    }
  }
  return y;
}

// Stride-2 2x2 correlation, the adjoint counterpart of upconv2.
Tensor downconv_reference(const Tensor& g, const Tensor& k) {
  const int n = g.dim(0), cout = g.dim(1), oh = g.dim(2), ow = g.dim(3);
  const int cin = k.dim(0);
  Tensor x(Shape{n, cin, oh / 2, ow / 2});
  for (int nn = 0; nn < n; ++nn) {
    for (int ci = 0; ci < cin; ++ci) {
      for (int i = 0; i < oh / 2; ++i) {
        for (int j = 0; j < ow / 2; ++j) {
          float acc = 0.0f;
          for (int co = 0; co < cout; ++co) {
            for (int a = 0; a < 2; ++a) {
              for (int bq = 0; bq < 2; ++bq) {
                acc += g.at4(nn, co, 2 * i + a, 2 * j + bq) * k.at4(ci, co, a, bq);
              }
            }
          }
          x.at4(nn, ci, i, j) = acc;
        }
      }
    }
  }
  return x;
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) acc += static_cast<double>(a.data[i]) * b.data[i];
  return acc;
}

}  // namespace

TEST_CASE("conv2d identity kernel passes input through") {
  const Tensor x = random_tensor(1, {2, 1, 4, 5});
  const Tensor k(Shape{1, 1, 1, 1}, {1.0f});
  const Tensor b(Shape{1}, {0.0f});
  const Tensor y = conv2d_forward(x, k, b, Padding::kSame);
  REQUIRE(y.shape == x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("conv2d on zero input yields per-channel bias") {
  const Tensor x = Tensor::zeros({1, 3, 6, 6});
  const Tensor k = random_tensor(2, {4, 3, 3, 3});
  const Tensor b(Shape{4}, {0.5f, -1.25f, 2.0f, 0.0f});
  const Tensor y = conv2d_forward(x, k, b, Padding::kSame);
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) CHECK(y.at4(0, c, i, j) == b.data[static_cast<size_t>(c)]);
    }
  }
}

TEST_CASE("conv2d matches the nested-loop reference") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = random_tensor(seed * 3 + 0, {1, 2, 5, 5});
    const Tensor k = random_tensor(seed * 3 + 1, {3, 2, 3, 3});
    const Tensor b = random_tensor(seed * 3 + 2, {3});
    for (Padding pad : {Padding::kSame, Padding::kValid}) {
      const Tensor got = conv2d_forward(x, k, b, pad);
      const Tensor want = conv_reference(x, k, b, pad);
      REQUIRE(got.shape == want.shape);
      for (size_t i = 0; i < got.data.size(); ++i) {
        CHECK(std::abs(got.data[i] - want.data[i]) < 1e-6f);
      }
    }
  }
}

TEST_CASE("conv2d valid padding shrinks the output") {
  const Tensor x = random_tensor(5, {1, 1, 6, 7});
  const Tensor k = random_tensor(6, {1, 1, 3, 3});
  const Tensor b = Tensor::zeros({1});
  const Tensor y = conv2d_forward(x, k, b, Padding::kValid);
  CHECK(y.shape == Shape{1, 1, 4, 5});
}

TEST_CASE("conv2d shape errors name both shapes") {
  const Tensor x = random_tensor(7, {1, 3, 4, 4});
  const Tensor k = random_tensor(8, {2, 2, 3, 3});
  const Tensor b = Tensor::zeros({2});
  CHECK_THROWS_WITH_AS(conv2d_forward(x, k, b, Padding::kSame),
                       doctest::Contains("(2,2,3,3)"), ShapeError);
  const Tensor even_k = random_tensor(9, {2, 3, 2, 2});
  CHECK_THROWS_AS(conv2d_forward(x, even_k, b, Padding::kSame), ShapeError);
}

TEST_CASE("conv2d is linear in the input for a fixed kernel") {
  const Tensor k = random_tensor(11, {2, 2, 3, 3});
  const Tensor b = random_tensor(12, {2});
  const Tensor x = random_tensor(13, {1, 2, 6, 6});
  const Tensor y = random_tensor(14, {1, 2, 6, 6});
  // alpha + beta = 1, so the bias term cancels exactly.
  const float alpha = 2.0f, beta = -1.0f;
  Tensor mix(Shape{1, 2, 6, 6});
  for (size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = alpha * x.data[i] + beta * y.data[i];
  const Tensor lhs = conv2d_forward(mix, k, b, Padding::kSame);
  const Tensor cx = conv2d_forward(x, k, b, Padding::kSame);
  const Tensor cy = conv2d_forward(y, k, b, Padding::kSame);
  for (size_t i = 0; i < lhs.data.size(); ++i) {
    CHECK(lhs.data[i] == doctest::Approx(alpha * cx.data[i] + beta * cy.data[i]).epsilon(1e-4));
  }
}

TEST_CASE("maxpool2 takes block maxima") {
  const Tensor x(Shape{1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  const Pooled<float> p = maxpool2_forward(x);
  CHECK(p.out.data[0] == 4.0f);
  CHECK(p.argmax[0] == 3);
}

TEST_CASE("maxpool2 ties route gradient to the first element in row-major order") {
  Graph g;
  Tensor x = Tensor::full({1, 1, 4, 4}, 0.75f);
  x.requires_grad = true;
  const auto in = g.leaf(x);
  const auto pooled = g.maxpool2(in);
  const auto loss = g.sum(pooled);
  g.backward(loss);
  const Tensor& grad = g.grad(in);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const float want = (i % 2 == 0 && j % 2 == 0) ? 1.0f : 0.0f;
      CHECK(grad.at4(0, 0, i, j) == want);
    }
  }
}

TEST_CASE("maxpool2 matches the block-max reference") {
  const Tensor x = random_tensor(0, {1, 1, 4, 4});
  const Pooled<float> got = maxpool2_forward(x);
  const Tensor want = maxpool_reference(x);
  for (size_t i = 0; i < want.data.size(); ++i) CHECK(got.out.data[i] == want.data[i]);
}

TEST_CASE("maxpool2 rejects odd spatial dims") {
  CHECK_THROWS_AS(maxpool2_forward(random_tensor(1, {1, 1, 3, 4})), ShapeError);
  CHECK_THROWS_AS(maxpool2_forward(random_tensor(1, {1, 1, 4, 5})), ShapeError);
}

TEST_CASE("maxpool2 output stays within the input range") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = random_tensor(seed, {2, 3, 8, 8});
    const float lo = *std::min_element(x.data.begin(), x.data.end());
    const float hi = *std::max_element(x.data.begin(), x.data.end());
    const Pooled<float> p = maxpool2_forward(x);
    for (float v : p.out.data) {
      CHECK(v >= lo);
      CHECK(v <= hi);
    }
  }
}

TEST_CASE("upconv2 scatters one pixel into a 2x2 block") {
  const Tensor x(Shape{1, 1, 1, 1}, {3.0f});
  const Tensor k(Shape{1, 1, 2, 2}, {0.5f, -1.0f, 2.0f, 0.25f});
  const Tensor b = Tensor::zeros({1});
  const Tensor y = upconv2_forward(x, k, b);
  REQUIRE(y.shape == Shape{1, 1, 2, 2});
  CHECK(y.data[0] == 1.5f);
  CHECK(y.data[1] == -3.0f);
  CHECK(y.data[2] == 6.0f);
  CHECK(y.data[3] == 0.75f);
}

TEST_CASE("upconv2 with a zero kernel emits constant bias") {
  const Tensor x = random_tensor(3, {1, 2, 3, 3});
  const Tensor k = Tensor::zeros({2, 2, 2, 2});
  const Tensor b(Shape{2}, {0.5f, -0.25f});
  const Tensor y = upconv2_forward(x, k, b);
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) CHECK(y.at4(0, c, i, j) == b.data[static_cast<size_t>(c)]);
    }
  }
}

TEST_CASE("upconv2 is the adjoint of a stride-2 2x2 correlation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = random_tensor(seed * 7 + 0, {1, 3, 4, 4});
    const Tensor k = random_tensor(seed * 7 + 1, {3, 2, 2, 2});
    const Tensor b = Tensor::zeros({2});
    const Tensor g = random_tensor(seed * 7 + 2, {1, 2, 8, 8});
    const Tensor up = upconv2_forward(x, k, b);
    const Tensor down = downconv_reference(g, k);
    CHECK(dot(up, g) == doctest::Approx(dot(x, down)).epsilon(1e-4));
  }
}

TEST_CASE("upconv2 blocks from distinct pixels are disjoint") {
  const Tensor x = random_tensor(21, {1, 2, 3, 3});
  const Tensor k = random_tensor(22, {2, 2, 2, 2});
  const Tensor b = Tensor::zeros({2});
  const Tensor full = upconv2_forward(x, k, b);
  // Scatter each input pixel alone; the sum must rebuild the full output.
  Tensor sum = Tensor::zeros(full.shape);
  for (int ci = 0; ci < 2; ++ci) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        Tensor solo = Tensor::zeros(x.shape);
        solo.at4(0, ci, i, j) = x.at4(0, ci, i, j);
        const Tensor part = upconv2_forward(solo, k, b);
        for (size_t q = 0; q < sum.data.size(); ++q) sum.data[q] += part.data[q];
      }
    }
  }
  // 18 scatters each re-add the bias (zero here), so the sum matches exactly.
  for (size_t q = 0; q < sum.data.size(); ++q) {
    CHECK(sum.data[q] == doctest::Approx(full.data[q]).epsilon(1e-5));
  }
}

TEST_CASE("concat_channels stacks a then b") {
  const Tensor a = random_tensor(31, {2, 3, 4, 4});
  const Tensor b = random_tensor(32, {2, 5, 4, 4});
  const Tensor y = concat_forward(a, b);
  CHECK(y.shape == Shape{2, 8, 4, 4});
  CHECK(y.at4(1, 0, 2, 2) == a.at4(1, 0, 2, 2));
  CHECK(y.at4(1, 3, 2, 2) == b.at4(1, 0, 2, 2));
}

TEST_CASE("concat_channels with an empty tensor is the identity") {
  const Tensor a = random_tensor(33, {1, 4, 3, 3});
  const Tensor empty(Shape{1, 0, 3, 3});
  const Tensor y = concat_forward(a, empty);
  CHECK(y.shape == a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) CHECK(y.data[i] == a.data[i]);
}

TEST_CASE("concat_channels backward splits the gradient") {
  Graph g;
  Tensor a = random_tensor(34, {1, 2, 3, 3});
  Tensor b = random_tensor(35, {1, 3, 3, 3});
  a.requires_grad = true;
  b.requires_grad = true;
  const auto ia = g.leaf(a), ib = g.leaf(b);
  const auto loss = g.sum(g.concat_channels(ia, ib));
  g.backward(loss);
  for (float v : g.grad(ia).data) CHECK(v == 1.0f);
  for (float v : g.grad(ib).data) CHECK(v == 1.0f);
}

TEST_CASE("concat_channels rejects mismatched extents") {
  CHECK_THROWS_AS(concat_forward(random_tensor(1, {1, 2, 3, 3}), random_tensor(2, {1, 2, 4, 3})), ShapeError);
  CHECK_THROWS_AS(concat_forward(random_tensor(1, {2, 2, 3, 3}), random_tensor(2, {1, 2, 3, 3})), ShapeError);
}

TEST_CASE("relu clamps negatives and keeps zero at zero") {
  const Tensor x(Shape{3}, {-1.0f, 0.0f, 2.0f});
  const Tensor y = relu_forward(x);
  CHECK(y.data[0] == 0.0f);
  CHECK(y.data[1] == 0.0f);
  CHECK(y.data[2] == 2.0f);

  Graph g;
  Tensor xg = x;
  xg.requires_grad = true;
  const auto in = g.leaf(xg);
  g.backward(g.sum(g.relu(in)));
  CHECK(g.grad(in).data[0] == 0.0f);
  CHECK(g.grad(in).data[1] == 0.0f);  // subgradient at 0 is 0
  CHECK(g.grad(in).data[2] == 1.0f);
}

TEST_CASE("sigmoid is 0.5 at zero and stable far negative") {
  const Tensor x(Shape{2}, {0.0f, -50.0f});
  const Tensor y = sigmoid_forward(x);
  CHECK(y.data[0] == 0.5f);
  CHECK(std::isfinite(y.data[1]));
  CHECK(y.data[1] > 0.0f);
  CHECK(y.data[1] <= 1e-20f);
  // Extended-precision reference: exp(-50)/(1+exp(-50)) evaluated in double.
  const double want = std::exp(-50.0) / (1.0 + std::exp(-50.0));
  CHECK(static_cast<double>(y.data[1]) == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("bce_loss analytic values") {
  SUBCASE("probs 0.5 everywhere forces ln 2") {
    const Tensor p = Tensor::full({2, 1, 2, 2}, 0.5f);
    Tensor t = Tensor::zeros({2, 1, 2, 2});
    t.data[0] = t.data[3] = 1.0f;
    const Tensor loss = bce_forward(p, t);
    CHECK(loss.data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("perfect prediction stays under the clamp bound") {
    Tensor t = Tensor::zeros({1, 1, 2, 2});
    t.data[1] = t.data[2] = 1.0f;
    const Tensor loss = bce_forward(t, t);
    CHECK(loss.data[0] <= -std::log(1.0 - 1e-7) * 1.0001);
    CHECK(loss.data[0] >= 0.0f);
  }
  SUBCASE("hand-computed two-pixel case") {
    const Tensor p(Shape{2}, {0.9f, 0.2f});
    const Tensor t(Shape{2}, {1.0f, 0.0f});
    const Tensor loss = bce_forward(p, t);
    const double want = (-std::log(0.9) - std::log(0.8)) / 2.0;
    CHECK(static_cast<double>(loss.data[0]) == doctest::Approx(want).epsilon(1e-6));
  }
  SUBCASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(bce_forward(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  }
  SUBCASE("non-binary targets are rejected") {
    const Tensor p = Tensor::full({2}, 0.5f);
    const Tensor t(Shape{2}, {0.0f, 0.5f});
    CHECK_THROWS_AS(bce_forward(p, t), ValueError);
  }
}

TEST_CASE("backward of sum gives all-ones") {
  Graph g;
  Tensor x = random_tensor(40, {2, 3, 4, 4});
  x.requires_grad = true;
  const auto in = g.leaf(x);
  g.backward(g.sum(in));
  for (float v : g.grad(in).data) CHECK(v == 1.0f);
}

TEST_CASE("bce of sigmoid reduces to (sigmoid(z) - t) / count") {
  Graph g;
  Tensor z = random_tensor(41, {1, 1, 4, 4}, -3.0, 3.0);
  z.requires_grad = true;
  Rng rng(42);
  Tensor t(Shape{1, 1, 4, 4});
  for (auto& v : t.data) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
  const auto iz = g.leaf(z);
  const auto probs = g.sigmoid(iz);
  const auto loss = g.bce_loss(probs, g.leaf(t));
  g.backward(loss);
  const Tensor& grad = g.grad(iz);
  const Tensor& p = g.value(probs);
  for (size_t i = 0; i < grad.data.size(); ++i) {
    const double want = (static_cast<double>(p.data[i]) - t.data[i]) / 16.0;
    CHECK(static_cast<double>(grad.data[i]) == doctest::Approx(want).epsilon(1e-4));
  }
}

TEST_CASE("gradient accumulates when a node is consumed twice") {
  Graph g;
  Tensor x = random_tensor(43, {1, 2, 4, 4});
  x.requires_grad = true;
  const auto in = g.leaf(x);
  const auto both = g.concat_channels(in, in);
  g.backward(g.sum(both));
  for (float v : g.grad(in).data) CHECK(v == 2.0f);
}

TEST_CASE("backward contract violations") {
  SUBCASE("non-scalar root") {
    Graph g;
    Tensor x = random_tensor(44, {1, 1, 2, 2});
    x.requires_grad = true;
    const auto in = g.leaf(x);
    CHECK_THROWS_AS(g.backward(in), ShapeError);
  }
  SUBCASE("double backward") {
    Graph g;
    Tensor x = random_tensor(45, {1, 1, 2, 2});
    x.requires_grad = true;
    const auto in = g.leaf(x);
    const auto loss = g.sum(in);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), Error);
  }
  SUBCASE("non-finite forward values are a contract violation") {
    Graph g;
    Tensor x = Tensor::full({1, 1, 2, 2}, std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS_AS(g.leaf(x), ValueError);
  }
}

TEST_CASE("repeated evaluation of the same graph is bit-identical") {
  const Tensor x = random_tensor(50, {2, 4, 8, 8});
  const Tensor k = random_tensor(51, {4, 4, 3, 3});
  const Tensor b = random_tensor(52, {4});
  const Tensor y1 = conv2d_forward(x, k, b, Padding::kSame);
  const Tensor y2 = conv2d_forward(x, k, b, Padding::kSame);
  for (size_t i = 0; i < y1.data.size(); ++i) CHECK(y1.data[i] == y2.data[i]);
}

TEST_CASE("grad_check is near-exact on a linear map") {
  std::vector<Tensor> inputs;
  Tensor x = random_tensor(60, {1, 2, 4, 4});
  x.requires_grad = true;
  inputs.push_back(x);
  const double worst =
      grad_check<float>([](Graph& g, const std::vector<Graph::NodeId>& ids) { return g.sum(ids[0]); }, inputs,
                        1e-3);
  CHECK(worst <= 1e-6);
}

TEST_CASE("grad_check rejects eps outside its contract") {
  std::vector<Tensor> inputs;
  Tensor x = random_tensor(61, {1});
  x.requires_grad = true;
  inputs.push_back(x);
  auto build = [](Graph& g, const std::vector<Graph::NodeId>& ids) { return g.sum(ids[0]); };
  CHECK_THROWS_AS(grad_check<float>(build, inputs, 1e-6), ValueError);
  CHECK_THROWS_AS(grad_check<float>(build, inputs, 0.5), ValueError);
}

TEST_CASE("gradient battery: every operator and the composed net pass both modes") {
  const auto cases = run_gradcheck_battery(10);
  REQUIRE(!cases.empty());
  for (const auto& c : cases) {
    INFO(c.name, " ", c.bits, "-bit worst=", c.worst, " tol=", c.tolerance);
    CHECK(c.pass);
  }
}
