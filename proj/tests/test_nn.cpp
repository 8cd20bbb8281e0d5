#include "doctest.h"
#include "strata/nn.hpp"
#include "strata/rng.hpp"

#include <cmath>
#include <numeric>

using namespace strata;
using namespace strata::nn;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

double dot_loss(const std::vector<double>& y, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("nn");

TEST_CASE("linear layer matches finite differences") {
  Rng rng(1);
  Linear lin(5, 3, rng, "lin");
  ParamRegistry reg;
  lin.register_into(reg);
  const std::size_t rows = 4;
  auto x = random_vec(rows * 5, rng);
  auto w = random_vec(rows * 3, rng);
  auto loss = [&]() {
    reg.zero_grad();
    auto y = lin.forward(x, rows);
    double l = dot_loss(y, w);
    lin.backward(w, x, rows);
    return l;
  };
  Rng probe(2);
  CHECK(grad_check(loss, reg, 24, probe) < 1e-6);
}

TEST_CASE("linear forward oracle") {
  Rng rng(3);
  Linear lin(2, 2, rng, "l");
  // Overwrite with known values: y = xW + b, W row-major [in][out].
  lin.W.value.v = {1.0, 2.0, 3.0, 4.0};
  lin.b.value.v = {0.5, -0.5};
  auto y = lin.forward({1.0, 1.0}, 1);
  CHECK(y[0] == doctest::Approx(1 * 1 + 1 * 3 + 0.5));
  CHECK(y[1] == doctest::Approx(1 * 2 + 1 * 4 - 0.5));
}

TEST_CASE("relu and softmax basics") {
  auto y = relu_fwd({-1.0, 0.0, 2.5});
  CHECK(y == std::vector<double>{0.0, 0.0, 2.5});
  auto g = relu_bwd({1.0, 1.0, 1.0}, {-1.0, 0.0, 2.5});
  CHECK(g[0] == 0.0);
  CHECK(g[2] == 1.0);

  std::vector<double> rowwise = {1.0, 2.0, 3.0, 1000.0, 1000.0, 1000.0};
  softmax_rows(rowwise, 2, 3);
  double s0 = rowwise[0] + rowwise[1] + rowwise[2];
  CHECK(s0 == doctest::Approx(1.0));
  CHECK(rowwise[2] > rowwise[1]);
  CHECK(rowwise[3] == doctest::Approx(1.0 / 3));  // large inputs stay finite
}

TEST_CASE("instance norm forward semantics and gradient") {
  Rng rng(4);
  auto x = random_vec(32, rng, 5.0);
  InstanceNormCache cache;
  const double eps = 1e-5;
  auto y = instance_norm_fwd(x, eps, cache);
  double mean = std::accumulate(y.begin(), y.end(), 0.0) / double(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= double(y.size());
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-3));  // (sigma+eps) denominator

  // Gradient against central differences on the input.
  auto w = random_vec(32, rng);
  InstanceNormCache c2;
  auto gx = instance_norm_bwd(w, cache, eps);
  for (int probe = 0; probe < 8; ++probe) {
    std::size_t i = std::size_t(rng.next_below(32));
    const double h = 1e-6;
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    double lp = dot_loss(instance_norm_fwd(xp, eps, c2), w);
    double lm = dot_loss(instance_norm_fwd(xm, eps, c2), w);
    CHECK(gx[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-4));
  }
}

TEST_CASE("conv2d matches a naive oracle and finite differences") {
  Rng rng(5);
  const std::size_t cin = 2, cout = 3, H = 4, W = 5;
  for (int k : {1, 3}) {
    Conv2dLayer conv(cin, cout, k, rng, "conv" + std::to_string(k));
    auto x = random_vec(cin * H * W, rng);
    auto y = conv.forward(x, H, W);
    REQUIRE(y.size() == cout * H * W);

    // Independent naive cross-correlation with zero padding.
    const int pad = k / 2;
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double acc = conv.bias.value.v[co];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (int di = 0; di < k; ++di)
              for (int dj = 0; dj < k; ++dj) {
                int ii = int(i) + di - pad, jj = int(j) + dj - pad;
                if (ii < 0 || jj < 0 || ii >= int(H) || jj >= int(W)) continue;
                acc += conv.weight.value.v[((co * cin + ci) * k + di) * k + dj] *
                       x[(ci * H + ii) * W + jj];
              }
          CHECK(y[(co * H + i) * W + j] == doctest::Approx(acc).epsilon(1e-12));
        }

    ParamRegistry reg;
    conv.register_into(reg);
    auto w = random_vec(cout * H * W, rng);
    auto loss = [&]() {
      reg.zero_grad();
      double l = dot_loss(conv.forward(x, H, W), w);
      conv.backward(w, x, H, W);
      return l;
    };
    Rng probe(6);
    CHECK(grad_check(loss, reg, 20, probe) < 1e-6);
  }
}

TEST_CASE("conv2d rejects unsupported kernels and bad shapes") {
  Rng rng(7);
  Conv2dLayer conv(1, 1, 3, rng, "c");
  CHECK_THROWS_AS(conv.forward(std::vector<double>(7), 2, 5), ValidationError);
  Param w, b;
  w.value = Tensor({1, 1, 5, 5});
  b.value = Tensor({1});
  CHECK_THROWS_AS(conv2d_fwd(std::vector<double>(25), 1, 5, 5, w, b, 1, 5), ConfigError);
}

TEST_CASE("layer norm gradient") {
  Rng rng(8);
  LayerNorm ln(6, "ln");
  ParamRegistry reg;
  ln.register_into(reg);
  const std::size_t rows = 3;
  auto x = random_vec(rows * 6, rng, 2.0);
  auto w = random_vec(rows * 6, rng);
  LayerNormCache cache;
  auto loss = [&]() {
    reg.zero_grad();
    double l = dot_loss(ln.forward(x, rows, cache), w);
    ln.backward(w, cache, rows);
    return l;
  };
  Rng probe(9);
  CHECK(grad_check(loss, reg, 12, probe) < 1e-6);
}

TEST_CASE("attention rows are softmax-normalized and gradients pass") {
  Rng rng(10);
  const std::size_t dim = 8, heads = 2, S = 5;
  MultiHeadAttention mha(dim, heads, rng, "mha");
  ParamRegistry reg;
  mha.register_into(reg);
  auto x = random_vec(S * dim, rng);
  AttentionCache cache;
  auto y = mha.forward(x, S, cache);
  REQUIRE(y.size() == S * dim);
  // attn holds heads*S rows of S weights.
  for (std::size_t r = 0; r < heads * S; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < S; ++c) s += cache.attn[r * S + c];
    CHECK(s == doctest::Approx(1.0));
  }
  auto w = random_vec(S * dim, rng);
  auto loss = [&]() {
    reg.zero_grad();
    AttentionCache c;
    double l = dot_loss(mha.forward(x, S, c), w);
    mha.backward(w, c);
    return l;
  };
  Rng probe(11);
  CHECK(grad_check(loss, reg, 24, probe) < 1e-5);
}

TEST_CASE("transformer block gradient") {
  Rng rng(12);
  const std::size_t dim = 8, S = 4;
  TransformerBlock block(dim, 2, rng, "blk");
  ParamRegistry reg;
  block.register_into(reg);
  auto x = random_vec(S * dim, rng);
  auto w = random_vec(S * dim, rng);
  auto loss = [&]() {
    reg.zero_grad();
    TransformerBlockCache c;
    double l = dot_loss(block.forward(x, S, c), w);
    block.backward(w, c);
    return l;
  };
  Rng probe(13);
  CHECK(grad_check(loss, reg, 32, probe) < 1e-5);
}

TEST_CASE("registry rejects duplicate names and flattens in order") {
  Param a, b;
  a.name = "p";
  a.value = Tensor({2});
  a.grad = Tensor({2});
  b.name = "p";
  b.value = Tensor({1});
  b.grad = Tensor({1});
  ParamRegistry reg;
  reg.add(&a);
  CHECK_THROWS_AS(reg.add(&b), ConfigError);
  b.name = "q";
  reg.add(&b);
  CHECK(reg.total_size() == 3);
  a.value.v = {1.0, 2.0};
  b.value.v = {3.0};
  CHECK(*reg.coord(0) == 1.0);
  CHECK(*reg.coord(2) == 3.0);
}

TEST_CASE("adam step matches hand arithmetic") {
  Param p;
  p.name = "w";
  p.value = Tensor({1});
  p.grad = Tensor({1});
  p.value.v[0] = 1.0;
  p.grad.v[0] = 0.5;
  ParamRegistry reg;
  reg.add(&p);
  OptimizerState st;
  st.cfg.lr = 0.1;
  adam_step(reg, st);
  // m=0.05, v=0.00025/0.001·... bias-corrected: mhat=0.5, vhat=0.25.
  const double expected = 1.0 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8);
  CHECK(p.value.v[0] == doctest::Approx(expected).epsilon(1e-12));

  // Second step with zero gradient still moves via momentum.
  p.grad.v[0] = 0.0;
  const double before = p.value.v[0];
  adam_step(reg, st);
  CHECK(p.value.v[0] < before);
}

TEST_SUITE_END();
