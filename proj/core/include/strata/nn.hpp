#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "strata/common.hpp"
#include "strata/rng.hpp"

namespace strata::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);
  std::size_t size() const { return v.size(); }
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named parameter collection with gradients. Parameters register exactly once.
class ParamRegistry {
 public:
  void add(Param* p);
  const std::vector<Param*>& all() const { return params_; }
  void zero_grad();
  std::size_t total_size() const;
  // Flattened views in registration order, for checkpointing and probing.
  double* coord(std::size_t flat_index);
  double grad_coord(std::size_t flat_index) const;

 private:
  std::vector<Param*> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig cfg;
  long step = 0;
  std::vector<std::vector<double>> m, v;  // parallel to registry order
};

void adam_step(ParamRegistry& params, OptimizerState& state);

// ---- functional ops ------------------------------------------------------

// y[rows,out] = x[rows,in] * W[in,out] + b
std::vector<double> linear_fwd(const std::vector<double>& x, std::size_t rows, std::size_t in,
                               std::size_t out, const Param& W, const Param& b);
// accumulates into W.grad/b.grad, returns gx
std::vector<double> linear_bwd(const std::vector<double>& gy, const std::vector<double>& x,
                               std::size_t rows, std::size_t in, std::size_t out, Param& W,
                               Param& b);

std::vector<double> relu_fwd(const std::vector<double>& x);
std::vector<double> relu_bwd(const std::vector<double>& gy, const std::vector<double>& x);

// In-place row-wise softmax.
void softmax_rows(std::vector<double>& x, std::size_t rows, std::size_t cols);

struct InstanceNormCache {
  double sigma = 0;
  std::vector<double> centered;
};
// Normalizes the whole instance: y = (x - mean) / (std + eps).
std::vector<double> instance_norm_fwd(const std::vector<double>& x, double eps,
                                      InstanceNormCache& cache);
std::vector<double> instance_norm_bwd(const std::vector<double>& gy,
                                      const InstanceNormCache& cache, double eps);

// Same-padded 2D cross-correlation, kernel size 1 or 3.
// x is [cin, H, W] row-major, weight [cout, cin, k, k].
std::vector<double> conv2d_fwd(const std::vector<double>& x, std::size_t cin, std::size_t H,
                               std::size_t W, const Param& weight, const Param& bias,
                               std::size_t cout, int k);
std::vector<double> conv2d_bwd(const std::vector<double>& gy, const std::vector<double>& x,
                               std::size_t cin, std::size_t H, std::size_t W, Param& weight,
                               Param& bias, std::size_t cout, int k);

// ---- layers --------------------------------------------------------------

struct Linear {
  Param W, b;
  std::size_t in = 0, out = 0;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, const std::string& name);
  void register_into(ParamRegistry& reg);
  std::vector<double> forward(const std::vector<double>& x, std::size_t rows) const {
    return linear_fwd(x, rows, in, out, W, b);
  }
  std::vector<double> backward(const std::vector<double>& gy, const std::vector<double>& x,
                               std::size_t rows) {
    return linear_bwd(gy, x, rows, in, out, W, b);
  }
};

struct LayerNormCache {
  std::vector<double> xhat;
  std::vector<double> rstd;  // per row
};

struct LayerNorm {
  Param gamma, beta;
  std::size_t dim = 0;
  double eps = 1e-6;

  LayerNorm() = default;
  LayerNorm(std::size_t dim, const std::string& name);
  void register_into(ParamRegistry& reg);
  std::vector<double> forward(const std::vector<double>& x, std::size_t rows,
                              LayerNormCache& cache) const;
  std::vector<double> backward(const std::vector<double>& gy, const LayerNormCache& cache,
                               std::size_t rows);
};

struct AttentionCache {
  std::size_t S = 0;
  std::vector<double> x, q, k, v, attn, concat;
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t dim = 0, heads = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng, const std::string& name);
  void register_into(ParamRegistry& reg);
  std::vector<double> forward(const std::vector<double>& x, std::size_t S,
                              AttentionCache& cache) const;
  std::vector<double> backward(const std::vector<double>& gy, AttentionCache& cache);
};

struct TransformerBlockCache {
  LayerNormCache ln1, ln2;
  AttentionCache attn;
  std::vector<double> x, n1, a, h, n2, f1, f1r;
};

// Pre-norm residual block: x + MHSA(LN(x)), then x + FFN(LN(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear fc1, fc2;  // FFN with 4x hidden width
  std::size_t dim = 0;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads, Rng& rng, const std::string& name);
  void register_into(ParamRegistry& reg);
  std::vector<double> forward(const std::vector<double>& x, std::size_t S,
                              TransformerBlockCache& cache) const;
  std::vector<double> backward(const std::vector<double>& gy, TransformerBlockCache& cache);
};

struct Conv2dLayer {
  Param weight, bias;
  std::size_t cin = 0, cout = 0;
  int k = 3;

  Conv2dLayer() = default;
  Conv2dLayer(std::size_t cin, std::size_t cout, int k, Rng& rng, const std::string& name);
  void register_into(ParamRegistry& reg);
  std::vector<double> forward(const std::vector<double>& x, std::size_t H, std::size_t W) const {
    return conv2d_fwd(x, cin, H, W, weight, bias, cout, k);
  }
  std::vector<double> backward(const std::vector<double>& gy, const std::vector<double>& x,
                               std::size_t H, std::size_t W) {
    return conv2d_bwd(gy, x, cin, H, W, weight, bias, cout, k);
  }
};

// Kaiming-style uniform init scaled by fan-in, drawn from the given stream.
void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

// ---- verification --------------------------------------------------------

// loss() must zero grads, run forward+backward, and return the loss value.
// Probes `probes` random parameter coordinates with central differences.
double grad_check(const std::function<double()>& loss, ParamRegistry& params, int probes,
                  Rng& rng, double h = 1e-5);

}  // namespace strata::nn
