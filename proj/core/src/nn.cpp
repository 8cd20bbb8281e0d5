#include "strata/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace strata::nn {

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  v.assign(n, 0.0);
}

void ParamRegistry::add(Param* p) {
  for (const auto* q : params_)
    if (q->name == p->name) throw ConfigError("parameter registered twice: " + p->name);
  if (p->grad.v.size() != p->value.v.size()) {
    p->grad = Tensor(p->value.shape);
  }
  params_.push_back(p);
}

void ParamRegistry::zero_grad() {
  for (auto* p : params_) std::fill(p->grad.v.begin(), p->grad.v.end(), 0.0);
}

std::size_t ParamRegistry::total_size() const {
  std::size_t n = 0;
  for (const auto* p : params_) n += p->value.size();
  return n;
}

double* ParamRegistry::coord(std::size_t flat_index) {
  for (auto* p : params_) {
    if (flat_index < p->value.size()) return &p->value.v[flat_index];
    flat_index -= p->value.size();
  }
  throw ConfigError("parameter coordinate out of range");
}

double ParamRegistry::grad_coord(std::size_t flat_index) const {
  for (const auto* p : params_) {
    if (flat_index < p->grad.size()) return p->grad.v[flat_index];
    flat_index -= p->grad.size();
  }
  throw ConfigError("gradient coordinate out of range");
}

void adam_step(ParamRegistry& params, OptimizerState& state) {
  const auto& ps = params.all();
  if (state.m.size() != ps.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto* p : ps) {
      state.m.emplace_back(p->value.size(), 0.0);
      state.v.emplace_back(p->value.size(), 0.0);
    }
  }
  ++state.step;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, state.step);
  const double bc2 = 1.0 - std::pow(b2, state.step);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& val = ps[i]->value.v;
    const auto& g = ps[i]->grad.v;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < val.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      val[j] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
    }
  }
}

// ---- functional ops ------------------------------------------------------

std::vector<double> linear_fwd(const std::vector<double>& x, std::size_t rows, std::size_t in,
                               std::size_t out, const Param& W, const Param& b) {
  if (x.size() != rows * in) throw ValidationError("linear: input shape mismatch");
  std::vector<double> y(rows * out);
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = &y[r * out];
    for (std::size_t o = 0; o < out; ++o) yr[o] = b.value.v[o];
    const double* xr = &x[r * in];
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      const double* wrow = &W.value.v[i * out];
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wrow[o];
    }
  }
  return y;
}

std::vector<double> linear_bwd(const std::vector<double>& gy, const std::vector<double>& x,
                               std::size_t rows, std::size_t in, std::size_t out, Param& W,
                               Param& b) {
  std::vector<double> gx(rows * in, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gyr = &gy[r * out];
    const double* xr = &x[r * in];
    double* gxr = &gx[r * in];
    for (std::size_t o = 0; o < out; ++o) b.grad.v[o] += gyr[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double* wrow = &W.value.v[i * out];
      double* gwrow = &W.grad.v[i * out];
      double acc = 0.0;
      const double xi = xr[i];
      for (std::size_t o = 0; o < out; ++o) {
        acc += gyr[o] * wrow[o];
        gwrow[o] += xi * gyr[o];
      }
      gxr[i] = acc;
    }
  }
  return gx;
}

std::vector<double> relu_fwd(const std::vector<double>& x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

std::vector<double> relu_bwd(const std::vector<double>& gy, const std::vector<double>& x) {
  std::vector<double> gx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
  return gx;
}

void softmax_rows(std::vector<double>& x, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* xr = &x[r * cols];
    double mx = xr[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      xr[c] = std::exp(xr[c] - mx);
      sum += xr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) xr[c] /= sum;
  }
}

std::vector<double> instance_norm_fwd(const std::vector<double>& x, double eps,
                                      InstanceNormCache& cache) {
  const std::size_t n = x.size();
  double mean = std::accumulate(x.begin(), x.end(), 0.0) / double(n);
  cache.centered.resize(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cache.centered[i] = x[i] - mean;
    var += cache.centered[i] * cache.centered[i];
  }
  var /= double(n);
  cache.sigma = std::sqrt(var);
  const double s = cache.sigma + eps;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = cache.centered[i] / s;
  return y;
}

std::vector<double> instance_norm_bwd(const std::vector<double>& gy,
                                      const InstanceNormCache& cache, double eps) {
  const std::size_t n = gy.size();
  const double s = cache.sigma + eps;
  double gmean = std::accumulate(gy.begin(), gy.end(), 0.0) / double(n);
  double gdotc = 0.0;
  for (std::size_t i = 0; i < n; ++i) gdotc += gy[i] * cache.centered[i];
  std::vector<double> gx(n);
  for (std::size_t i = 0; i < n; ++i) {
    gx[i] = (gy[i] - gmean) / s;
    if (cache.sigma > 1e-12)
      gx[i] -= gdotc * cache.centered[i] / (s * s * double(n) * cache.sigma);
  }
  return gx;
}

std::vector<double> conv2d_fwd(const std::vector<double>& x, std::size_t cin, std::size_t H,
                               std::size_t W, const Param& weight, const Param& bias,
                               std::size_t cout, int k) {
  if (k != 1 && k != 3) throw ConfigError("conv2d: kernel size must be 1 or 3");
  if (x.size() != cin * H * W) throw ValidationError("conv2d: input channel/shape mismatch");
  const int pad = (k - 1) / 2;
  std::vector<double> y(cout * H * W);
  for (std::size_t co = 0; co < cout; ++co) {
    double* yc = &y[co * H * W];
    std::fill(yc, yc + H * W, bias.value.v[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* xc = &x[ci * H * W];
      const double* wk = &weight.value.v[(co * cin + ci) * k * k];
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const double wv = wk[kh * k + kw];
          if (wv == 0.0) continue;
          const int dh = kh - pad, dw = kw - pad;
          const int h0 = std::max(0, -dh), h1 = int(H) - std::max(0, dh);
          const int w0 = std::max(0, -dw), w1 = int(W) - std::max(0, dw);
          for (int h = h0; h < h1; ++h) {
            const double* xrow = xc + std::size_t(h + dh) * W + dw;
            double* yrow = yc + std::size_t(h) * W;
            for (int w = w0; w < w1; ++w) yrow[w] += wv * xrow[w];
          }
        }
      }
    }
  }
  return y;
}

std::vector<double> conv2d_bwd(const std::vector<double>& gy, const std::vector<double>& x,
                               std::size_t cin, std::size_t H, std::size_t W, Param& weight,
                               Param& bias, std::size_t cout, int k) {
  const int pad = (k - 1) / 2;
  std::vector<double> gx(cin * H * W, 0.0);
  for (std::size_t co = 0; co < cout; ++co) {
    const double* gyc = &gy[co * H * W];
    double bacc = 0.0;
    for (std::size_t i = 0; i < H * W; ++i) bacc += gyc[i];
    bias.grad.v[co] += bacc;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* xc = &x[ci * H * W];
      double* gxc = &gx[ci * H * W];
      const double* wk = &weight.value.v[(co * cin + ci) * k * k];
      double* gwk = &weight.grad.v[(co * cin + ci) * k * k];
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const int dh = kh - pad, dw = kw - pad;
          const int h0 = std::max(0, -dh), h1 = int(H) - std::max(0, dh);
          const int w0 = std::max(0, -dw), w1 = int(W) - std::max(0, dw);
          const double wv = wk[kh * k + kw];
          double wacc = 0.0;
          for (int h = h0; h < h1; ++h) {
            const double* xrow = xc + std::size_t(h + dh) * W + dw;
            double* gxrow = gxc + std::size_t(h + dh) * W + dw;
            const double* gyrow = gyc + std::size_t(h) * W;
            for (int w = w0; w < w1; ++w) {
              wacc += xrow[w] * gyrow[w];
              gxrow[w] += wv * gyrow[w];
            }
          }
          gwk[kh * k + kw] += wacc;
        }
      }
    }
  }
  return gx;
}

// ---- layers --------------------------------------------------------------

void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : t.v) v = rng.uniform(-bound, bound);
}

Linear::Linear(std::size_t in_, std::size_t out_, Rng& rng, const std::string& name)
    : in(in_), out(out_) {
  W.name = name + ".W";
  W.value = Tensor({in, out});
  init_uniform(W.value, in, rng);
  W.grad = Tensor({in, out});
  b.name = name + ".b";
  b.value = Tensor({out});
  b.grad = Tensor({out});
}

void Linear::register_into(ParamRegistry& reg) {
  reg.add(&W);
  reg.add(&b);
}

LayerNorm::LayerNorm(std::size_t d, const std::string& name) : dim(d) {
  gamma.name = name + ".gamma";
  gamma.value = Tensor({dim});
  std::fill(gamma.value.v.begin(), gamma.value.v.end(), 1.0);
  gamma.grad = Tensor({dim});
  beta.name = name + ".beta";
  beta.value = Tensor({dim});
  beta.grad = Tensor({dim});
}

void LayerNorm::register_into(ParamRegistry& reg) {
  reg.add(&gamma);
  reg.add(&beta);
}

std::vector<double> LayerNorm::forward(const std::vector<double>& x, std::size_t rows,
                                       LayerNormCache& cache) const {
  cache.xhat.resize(rows * dim);
  cache.rstd.resize(rows);
  std::vector<double> y(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x[r * dim];
    double mean = 0.0;
    for (std::size_t i = 0; i < dim; ++i) mean += xr[i];
    mean /= double(dim);
    double var = 0.0;
    for (std::size_t i = 0; i < dim; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= double(dim);
    const double rstd = 1.0 / std::sqrt(var + eps);
    cache.rstd[r] = rstd;
    for (std::size_t i = 0; i < dim; ++i) {
      const double xh = (xr[i] - mean) * rstd;
      cache.xhat[r * dim + i] = xh;
      y[r * dim + i] = gamma.value.v[i] * xh + beta.value.v[i];
    }
  }
  return y;
}

std::vector<double> LayerNorm::backward(const std::vector<double>& gy, const LayerNormCache& cache,
                                        std::size_t rows) {
  std::vector<double> gx(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gyr = &gy[r * dim];
    const double* xh = &cache.xhat[r * dim];
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double gxh = gyr[i] * gamma.value.v[i];
      m1 += gxh;
      m2 += gxh * xh[i];
      gamma.grad.v[i] += gyr[i] * xh[i];
      beta.grad.v[i] += gyr[i];
    }
    m1 /= double(dim);
    m2 /= double(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const double gxh = gyr[i] * gamma.value.v[i];
      gx[r * dim + i] = cache.rstd[r] * (gxh - m1 - xh[i] * m2);
    }
  }
  return gx;
}

MultiHeadAttention::MultiHeadAttention(std::size_t d, std::size_t h, Rng& rng,
                                       const std::string& name)
    : wq(d, d, rng, name + ".wq"),
      wk(d, d, rng, name + ".wk"),
      wv(d, d, rng, name + ".wv"),
      wo(d, d, rng, name + ".wo"),
      dim(d),
      heads(h) {
  if (d % h != 0) throw ConfigError("attention: dim " + std::to_string(d) +
                                    " not divisible by heads " + std::to_string(h));
}

void MultiHeadAttention::register_into(ParamRegistry& reg) {
  wq.register_into(reg);
  wk.register_into(reg);
  wv.register_into(reg);
  wo.register_into(reg);
}

std::vector<double> MultiHeadAttention::forward(const std::vector<double>& x, std::size_t S,
                                                AttentionCache& cache) const {
  const std::size_t dh = dim / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  cache.S = S;
  cache.x = x;
  cache.q = wq.forward(x, S);
  cache.k = wk.forward(x, S);
  cache.v = wv.forward(x, S);
  cache.attn.assign(heads * S * S, 0.0);
  cache.concat.assign(S * dim, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    double* A = &cache.attn[h * S * S];
    for (std::size_t i = 0; i < S; ++i) {
      const double* qi = &cache.q[i * dim + h * dh];
      for (std::size_t j = 0; j < S; ++j) {
        const double* kj = &cache.k[j * dim + h * dh];
        double dot = 0.0;
        for (std::size_t t = 0; t < dh; ++t) dot += qi[t] * kj[t];
        A[i * S + j] = dot * scale;
      }
    }
    std::vector<double> rows(A, A + S * S);
    softmax_rows(rows, S, S);
    std::copy(rows.begin(), rows.end(), A);
    for (std::size_t i = 0; i < S; ++i) {
      double* out = &cache.concat[i * dim + h * dh];
      for (std::size_t j = 0; j < S; ++j) {
        const double a = A[i * S + j];
        const double* vj = &cache.v[j * dim + h * dh];
        for (std::size_t t = 0; t < dh; ++t) out[t] += a * vj[t];
      }
    }
  }
  return wo.forward(cache.concat, S);
}

std::vector<double> MultiHeadAttention::backward(const std::vector<double>& gy,
                                                 AttentionCache& cache) {
  const std::size_t S = cache.S;
  const std::size_t dh = dim / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  std::vector<double> gconcat = wo.backward(gy, cache.concat, S);
  std::vector<double> gq(S * dim, 0.0), gk(S * dim, 0.0), gv(S * dim, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const double* A = &cache.attn[h * S * S];
    std::vector<double> gA(S * S, 0.0);
    for (std::size_t i = 0; i < S; ++i) {
      const double* go = &gconcat[i * dim + h * dh];
      for (std::size_t j = 0; j < S; ++j) {
        const double* vj = &cache.v[j * dim + h * dh];
        double acc = 0.0;
        for (std::size_t t = 0; t < dh; ++t) acc += go[t] * vj[t];
        gA[i * S + j] = acc;
        double* gvj = &gv[j * dim + h * dh];
        const double a = A[i * S + j];
        for (std::size_t t = 0; t < dh; ++t) gvj[t] += a * go[t];
      }
    }
    // softmax backward per row, then into q/k
    for (std::size_t i = 0; i < S; ++i) {
      const double* Ai = &A[i * S];
      double dot = 0.0;
      for (std::size_t j = 0; j < S; ++j) dot += gA[i * S + j] * Ai[j];
      for (std::size_t j = 0; j < S; ++j) {
        const double gs = Ai[j] * (gA[i * S + j] - dot) * scale;
        const double* kj = &cache.k[j * dim + h * dh];
        const double* qi = &cache.q[i * dim + h * dh];
        double* gqi = &gq[i * dim + h * dh];
        double* gkj = &gk[j * dim + h * dh];
        for (std::size_t t = 0; t < dh; ++t) {
          gqi[t] += gs * kj[t];
          gkj[t] += gs * qi[t];
        }
      }
    }
  }
  std::vector<double> gx = wq.backward(gq, cache.x, S);
  std::vector<double> gx2 = wk.backward(gk, cache.x, S);
  std::vector<double> gx3 = wv.backward(gv, cache.x, S);
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gx2[i] + gx3[i];
  return gx;
}

TransformerBlock::TransformerBlock(std::size_t d, std::size_t h, Rng& rng, const std::string& name)
    : ln1(d, name + ".ln1"),
      ln2(d, name + ".ln2"),
      attn(d, h, rng, name + ".attn"),
      fc1(d, 4 * d, rng, name + ".fc1"),
      fc2(4 * d, d, rng, name + ".fc2"),
      dim(d) {}

void TransformerBlock::register_into(ParamRegistry& reg) {
  ln1.register_into(reg);
  attn.register_into(reg);
  ln2.register_into(reg);
  fc1.register_into(reg);
  fc2.register_into(reg);
}

std::vector<double> TransformerBlock::forward(const std::vector<double>& x, std::size_t S,
                                              TransformerBlockCache& cache) const {
  cache.x = x;
  cache.n1 = ln1.forward(x, S, cache.ln1);
  cache.a = attn.forward(cache.n1, S, cache.attn);
  cache.h.resize(S * dim);
  for (std::size_t i = 0; i < S * dim; ++i) cache.h[i] = x[i] + cache.a[i];
  cache.n2 = ln2.forward(cache.h, S, cache.ln2);
  cache.f1 = fc1.forward(cache.n2, S);
  cache.f1r = relu_fwd(cache.f1);
  std::vector<double> f2 = fc2.forward(cache.f1r, S);
  std::vector<double> y(S * dim);
  for (std::size_t i = 0; i < S * dim; ++i) y[i] = cache.h[i] + f2[i];
  return y;
}

std::vector<double> TransformerBlock::backward(const std::vector<double>& gy,
                                               TransformerBlockCache& cache) {
  const std::size_t S = cache.attn.S ? cache.attn.S : cache.x.size() / dim;
  std::vector<double> gf1r = fc2.backward(gy, cache.f1r, S);
  std::vector<double> gf1 = relu_bwd(gf1r, cache.f1);
  std::vector<double> gn2 = fc1.backward(gf1, cache.n2, S);
  std::vector<double> gh = ln2.backward(gn2, cache.ln2, S);
  for (std::size_t i = 0; i < gh.size(); ++i) gh[i] += gy[i];
  std::vector<double> gn1 = attn.backward(gh, cache.attn);
  std::vector<double> gx = ln1.backward(gn1, cache.ln1, S);
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gh[i];
  return gx;
}

Conv2dLayer::Conv2dLayer(std::size_t cin_, std::size_t cout_, int k_, Rng& rng,
                         const std::string& name)
    : cin(cin_), cout(cout_), k(k_) {
  weight.name = name + ".W";
  weight.value = Tensor({cout, cin, std::size_t(k), std::size_t(k)});
  init_uniform(weight.value, cin * std::size_t(k) * std::size_t(k), rng);
  weight.grad = Tensor(weight.value.shape);
  bias.name = name + ".b";
  bias.value = Tensor({cout});
  bias.grad = Tensor({cout});
}

void Conv2dLayer::register_into(ParamRegistry& reg) {
  reg.add(&weight);
  reg.add(&bias);
}

double grad_check(const std::function<double()>& loss, ParamRegistry& params, int probes, Rng& rng,
                  double h) {
  const double base = loss();
  if (!std::isfinite(base)) throw ValidationError("grad_check: non-finite loss");
  const std::size_t n = params.total_size();
  std::vector<double> analytic(n);
  {
    std::size_t off = 0;
    for (const auto* p : params.all())
      for (double g : p->grad.v) analytic[off++] = g;
  }
  double max_rel = 0.0;
  for (int probe = 0; probe < probes; ++probe) {
    const std::size_t idx = static_cast<std::size_t>(rng.next_below(n));
    double* w = params.coord(idx);
    const double orig = *w;
    *w = orig + h;
    const double lp = loss();
    *w = orig - h;
    const double lm = loss();
    *w = orig;
    if (!std::isfinite(lp) || !std::isfinite(lm))
      throw ValidationError("grad_check: non-finite perturbed loss");
    const double numeric = (lp - lm) / (2.0 * h);
    const double a = analytic[idx];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  // restore analytic gradients for the caller
  loss();
  return max_rel;
}

}  // namespace strata::nn
