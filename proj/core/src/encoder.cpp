#include "strata/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "json.hpp"

namespace strata::encoder {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (patch_width == 0 || segment_len % patch_width != 0)
    throw ConfigError("segment length " + std::to_string(segment_len) +
                      " not divisible by patch width " + std::to_string(patch_width));
  if (mask_ratio <= 0.0 || mask_ratio >= 1.0) throw ConfigError("mask_ratio must be in (0,1)");
  if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
  if (embed_dim % heads != 0)
    throw ConfigError("embed_dim not divisible by head count");
}

PatchGrid patchify(const data::TimeSeriesBatch& batch, std::size_t p) {
  if (p == 0 || batch.length % p != 0)
    throw ValidationError("patchify: L=" + std::to_string(batch.length) +
                          " not divisible by p=" + std::to_string(p));
  PatchGrid grid;
  grid.batch = batch.batch;
  grid.nodes = batch.num_nodes;
  grid.patches = batch.length / p;
  grid.width = p;
  grid.values.resize(batch.values.size());
  // Non-overlapping, order-preserving: the flat layout is already
  // [B][N][L'][p] when L is contiguous per instance.
  std::copy(batch.values.begin(), batch.values.end(), grid.values.begin());
  return grid;
}

data::TimeSeriesBatch unpatchify(const PatchGrid& grid, const data::TimeSeriesBatch& like) {
  data::TimeSeriesBatch out = like;
  out.batch = grid.batch;
  out.num_nodes = grid.nodes;
  out.length = grid.patches * grid.width;
  out.values = grid.values;
  return out;
}

MaskPlan make_mask_plan(std::size_t instances, std::size_t num_patches, double mask_ratio,
                        std::uint64_t seed) {
  MaskPlan plan;
  plan.seed = seed;
  plan.masked.resize(instances);
  Rng rng(seed);
  const std::size_t count =
      static_cast<std::size_t>(std::llround(mask_ratio * double(num_patches)));
  if (count == 0 || count >= num_patches)
    throw ConfigError("mask plan degenerate: " + std::to_string(count) + " of " +
                      std::to_string(num_patches) + " patches masked");
  for (auto& m : plan.masked) {
    // Fisher-Yates prefix over patch indices.
    std::vector<std::size_t> idx(num_patches);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.next_below(num_patches - i));
      std::swap(idx[i], idx[j]);
    }
    m.assign(idx.begin(), idx.begin() + count);
    std::sort(m.begin(), m.end());
  }
  return plan;
}

std::vector<double> zscore(const std::vector<double>& values) {
  const double n = double(values.size());
  double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = (values[i] - mean) / (sd + 1e-9);
  return out;
}

EncoderModel::EncoderModel(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const std::size_t p = cfg_.patch_width, d = cfg_.embed_dim, Lp = cfg_.num_patches();
  patch_embed_ = nn::Linear(p, d, rng, "patch_embed");
  conv1_ = nn::Conv2dLayer(1, 16, 3, rng, "cnn.conv1");
  conv2_ = nn::Conv2dLayer(16, 16, 3, rng, "cnn.conv2");
  conv3_ = nn::Conv2dLayer(16, 1, 1, rng, "cnn.conv3");
  pos_embed_.name = "pos_embed";
  pos_embed_.value = nn::Tensor({Lp, d});
  for (auto& v : pos_embed_.value.v) v = rng.uniform(-0.02, 0.02);
  pos_embed_.grad = nn::Tensor({Lp, d});
  mask_token_.name = "mask_token";
  mask_token_.value = nn::Tensor({d});
  for (auto& v : mask_token_.value.v) v = rng.uniform(-0.02, 0.02);
  mask_token_.grad = nn::Tensor({d});
  for (std::size_t i = 0; i < cfg_.layers; ++i)
    blocks_.emplace_back(d, cfg_.heads, rng, "enc.block" + std::to_string(i));
  decoder_block_ = nn::TransformerBlock(d, cfg_.heads, rng, "dec.block");
  decoder_head_ = nn::Linear(d, p, rng, "dec.head");

  patch_embed_.register_into(enc_params_);
  conv1_.register_into(enc_params_);
  conv2_.register_into(enc_params_);
  conv3_.register_into(enc_params_);
  enc_params_.add(&pos_embed_);
  for (auto& b : blocks_) b.register_into(enc_params_);

  patch_embed_.register_into(all_params_);
  conv1_.register_into(all_params_);
  conv2_.register_into(all_params_);
  conv3_.register_into(all_params_);
  all_params_.add(&pos_embed_);
  for (auto& b : blocks_) b.register_into(all_params_);
  all_params_.add(&mask_token_);
  decoder_block_.register_into(all_params_);
  decoder_head_.register_into(all_params_);
}

struct EncoderModel::InstanceForward {
  std::vector<double> patches;        // [L'][p]
  std::vector<double> embedded;       // [L'][d]
  nn::InstanceNormCache inorm;
  std::vector<double> normed;         // CNN input, [1][L'][d]
  std::vector<double> c1, r1, c2, r2; // CNN intermediates
  std::vector<double> cnn_out;        // [L'][d]
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
  std::vector<double> tokens_vis;     // [Sv][d]
  std::vector<nn::TransformerBlockCache> block_caches;
  std::vector<double> enc_out;        // [Sv][d]
  std::vector<double> dec_in;         // [L'][d]
  nn::TransformerBlockCache dec_cache;
  std::vector<double> dec_out;        // [L'][d]
  std::vector<double> recon;          // [L'][p]
};

void EncoderModel::forward_instance(const std::vector<double>& segment,
                                    const std::vector<std::size_t>& masked,
                                    InstanceForward& f) const {
  const std::size_t p = cfg_.patch_width, d = cfg_.embed_dim, Lp = cfg_.num_patches();
  if (segment.size() != cfg_.segment_len)
    throw ValidationError("segment length " + std::to_string(segment.size()) +
                          " does not match checkpoint L=" + std::to_string(cfg_.segment_len));
  f.patches = segment;  // row-major [L'][p] is the natural layout
  f.embedded = patch_embed_.forward(f.patches, Lp);
  f.normed = nn::instance_norm_fwd(f.embedded, cfg_.epsilon, f.inorm);
  f.c1 = conv1_.forward(f.normed, Lp, d);
  f.r1 = nn::relu_fwd(f.c1);
  f.c2 = conv2_.forward(f.r1, Lp, d);
  f.r2 = nn::relu_fwd(f.c2);
  f.cnn_out = conv3_.forward(f.r2, Lp, d);

  f.masked = masked;
  f.visible.clear();
  std::vector<bool> is_masked(Lp, false);
  for (auto m : masked) is_masked[m] = true;
  for (std::size_t t = 0; t < Lp; ++t)
    if (!is_masked[t]) f.visible.push_back(t);

  const std::size_t Sv = f.visible.size();
  f.tokens_vis.resize(Sv * d);
  for (std::size_t i = 0; i < Sv; ++i) {
    const std::size_t t = f.visible[i];
    for (std::size_t j = 0; j < d; ++j)
      f.tokens_vis[i * d + j] = f.cnn_out[t * d + j] + pos_embed_.value.v[t * d + j];
  }
  f.block_caches.assign(blocks_.size(), {});
  std::vector<double> x = f.tokens_vis;
  for (std::size_t b = 0; b < blocks_.size(); ++b) x = blocks_[b].forward(x, Sv, f.block_caches[b]);
  f.enc_out = std::move(x);

  if (f.masked.empty()) return;  // embedding path stops at the encoder output

  f.dec_in.assign(Lp * d, 0.0);
  for (std::size_t i = 0; i < Sv; ++i)
    std::copy(&f.enc_out[i * d], &f.enc_out[i * d] + d, &f.dec_in[f.visible[i] * d]);
  for (auto t : f.masked)
    for (std::size_t j = 0; j < d; ++j)
      f.dec_in[t * d + j] = mask_token_.value.v[j] + pos_embed_.value.v[t * d + j];
  f.dec_out = decoder_block_.forward(f.dec_in, Lp, f.dec_cache);
  f.recon = decoder_head_.forward(f.dec_out, Lp);
}

void EncoderModel::backward_instance(InstanceForward& f, const std::vector<double>& grecon) {
  const std::size_t p = cfg_.patch_width, d = cfg_.embed_dim, Lp = cfg_.num_patches();
  const std::size_t Sv = f.visible.size();
  std::vector<double> gdec_out = decoder_head_.backward(grecon, f.dec_out, Lp);
  std::vector<double> gdec_in = decoder_block_.backward(gdec_out, f.dec_cache);

  std::vector<double> genc(Sv * d);
  for (std::size_t i = 0; i < Sv; ++i)
    std::copy(&gdec_in[f.visible[i] * d], &gdec_in[f.visible[i] * d] + d, &genc[i * d]);
  for (auto t : f.masked)
    for (std::size_t j = 0; j < d; ++j) {
      mask_token_.grad.v[j] += gdec_in[t * d + j];
      pos_embed_.grad.v[t * d + j] += gdec_in[t * d + j];
    }

  std::vector<double> g = std::move(genc);
  for (std::size_t b = blocks_.size(); b-- > 0;) g = blocks_[b].backward(g, f.block_caches[b]);

  std::vector<double> gcnn(Lp * d, 0.0);
  for (std::size_t i = 0; i < Sv; ++i) {
    const std::size_t t = f.visible[i];
    for (std::size_t j = 0; j < d; ++j) {
      gcnn[t * d + j] = g[i * d + j];
      pos_embed_.grad.v[t * d + j] += g[i * d + j];
    }
  }
  std::vector<double> gr2 = conv3_.backward(gcnn, f.r2, Lp, d);
  std::vector<double> gc2 = nn::relu_bwd(gr2, f.c2);
  std::vector<double> gr1 = conv2_.backward(gc2, f.r1, Lp, d);
  std::vector<double> gc1 = nn::relu_bwd(gr1, f.c1);
  std::vector<double> gnormed = conv1_.backward(gc1, f.normed, Lp, d);
  std::vector<double> gembed = nn::instance_norm_bwd(gnormed, f.inorm, cfg_.epsilon);
  (void)patch_embed_.backward(gembed, f.patches, Lp);
  (void)p;
}

double EncoderModel::train_step(const std::vector<std::vector<double>>& segments,
                                const MaskPlan& plan, bool backward) {
  const std::size_t p = cfg_.patch_width;
  if (plan.masked.size() != segments.size())
    throw ValidationError("mask plan instance count mismatch");
  double loss_sum = 0.0;
  std::size_t count = 0;
  for (const auto& m : plan.masked) count += m.size() * p;
  if (count == 0) throw ValidationError("mask plan selects nothing");

  for (std::size_t i = 0; i < segments.size(); ++i) {
    InstanceForward f;
    forward_instance(segments[i], plan.masked[i], f);
    std::vector<double> grecon(f.recon.size(), 0.0);
    for (auto t : plan.masked[i]) {
      for (std::size_t j = 0; j < p; ++j) {
        const double e = f.recon[t * p + j] - f.patches[t * p + j];
        loss_sum += std::abs(e);
        grecon[t * p + j] = (e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0)) / double(count);
      }
    }
    if (backward) backward_instance(f, grecon);
  }
  const double loss = loss_sum / double(count);
  if (!std::isfinite(loss)) throw ValidationError("MAE loss non-finite");
  return loss;
}

double EncoderModel::masked_loss(
    const std::vector<std::vector<double>>& segments, const MaskPlan& plan,
    const std::function<void(std::vector<double>&, std::size_t)>& perturb_recon) {
  const std::size_t p = cfg_.patch_width;
  double loss_sum = 0.0;
  std::size_t count = 0;
  for (const auto& m : plan.masked) count += m.size() * p;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    InstanceForward f;
    forward_instance(segments[i], plan.masked[i], f);
    if (perturb_recon) perturb_recon(f.recon, i);
    for (auto t : plan.masked[i])
      for (std::size_t j = 0; j < p; ++j)
        loss_sum += std::abs(f.recon[t * p + j] - f.patches[t * p + j]);
  }
  return loss_sum / double(count);
}

SegmentEmbedding EncoderModel::embed(const std::vector<double>& segment) const {
  InstanceForward f;
  forward_instance(zscore(segment), {}, f);
  SegmentEmbedding e;
  e.patches = cfg_.num_patches();
  e.dim = cfg_.embed_dim;
  e.values = std::move(f.enc_out);
  e.checkpoint_hash = checkpoint_hash();
  return e;
}

PretrainResult mae_pretrain(EncoderModel& model, const std::vector<data::Segment>& segments) {
  const auto& cfg = model.config();
  if (segments.empty()) throw DataError("no source segments for pretraining");
  Rng sampler(cfg.seed ^ 0x5eedbeef);
  nn::OptimizerState opt;
  opt.cfg.lr = cfg.learning_rate;
  PretrainResult res;
  std::uint64_t step_seed = cfg.seed;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
      std::vector<std::vector<double>> batch;
      batch.reserve(cfg.batch_size);
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const auto& seg = segments[sampler.next_below(segments.size())];
        batch.push_back(zscore(seg.values));
      }
      MaskPlan plan =
          make_mask_plan(batch.size(), cfg.num_patches(), cfg.mask_ratio, ++step_seed);
      model.all_params().zero_grad();
      double loss;
      try {
        loss = model.train_step(batch, plan, true);
      } catch (const ValidationError& e) {
        double gnorm = 0.0;
        for (const auto* p : model.all_params().all())
          for (double g : p->grad.v) gnorm += g * g;
        throw ValidationError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(step) +
                              ", grad norm " + std::to_string(std::sqrt(gnorm)) + ")");
      }
      nn::adam_step(model.all_params(), opt);
      epoch_loss += loss;
    }
    res.epoch_losses.push_back(epoch_loss / double(cfg.steps_per_epoch));
  }
  res.checkpoint_hash = model.checkpoint_hash();
  return res;
}

// ---- persistence ---------------------------------------------------------

namespace {
constexpr char kMagic[] = "STRC1";
constexpr int kFormatVersion = 1;

json config_to_json(const EncoderConfig& c) {
  return json{{"patch_width", c.patch_width},   {"embed_dim", c.embed_dim},
              {"layers", c.layers},             {"heads", c.heads},
              {"mask_ratio", c.mask_ratio},     {"epochs", c.epochs},
              {"batch_size", c.batch_size},     {"steps_per_epoch", c.steps_per_epoch},
              {"learning_rate", c.learning_rate}, {"seed", c.seed},
              {"epsilon", c.epsilon},           {"segment_len", c.segment_len}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.patch_width = j.at("patch_width");
  c.embed_dim = j.at("embed_dim");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.mask_ratio = j.at("mask_ratio");
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.steps_per_epoch = j.at("steps_per_epoch");
  c.learning_rate = j.at("learning_rate");
  c.seed = j.at("seed");
  c.epsilon = j.at("epsilon");
  c.segment_len = j.at("segment_len");
  return c;
}
}  // namespace

std::string EncoderModel::serialize() const {
  json header;
  header["version"] = kFormatVersion;
  header["config"] = config_to_json(cfg_);
  json tensors = json::array();
  // Full f64 precision: a reloaded checkpoint must behave bitwise-identically.
  std::vector<double> block;
  for (const auto* p : all_params_.all()) {
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape}});
    for (double v : p->value.v) block.push_back(v);
  }
  header["tensors"] = tensors;
  std::string hs = header.dump();
  std::string out(kMagic);
  std::uint64_t len = hs.size();
  out.append(reinterpret_cast<const char*>(&len), 8);
  out += hs;
  append_le_f64(out, block);
  return out;
}

std::unique_ptr<EncoderModel> EncoderModel::deserialize(const std::string& blob) {
  const std::size_t magic_len = sizeof(kMagic) - 1;
  if (blob.size() < magic_len + 8 || blob.compare(0, magic_len, kMagic) != 0)
    throw DataError("not an encoder checkpoint");
  std::uint64_t len;
  std::memcpy(&len, blob.data() + magic_len, 8);
  json header = json::parse(blob.substr(magic_len + 8, len));
  if (header.at("version") != kFormatVersion) throw DataError("unsupported checkpoint version");
  auto model = std::make_unique<EncoderModel>(config_from_json(header.at("config")));
  std::string_view data(blob.data() + magic_len + 8 + len, blob.size() - magic_len - 8 - len);
  std::size_t want = model->all_params_.total_size();
  auto vals = read_le_f64(data, want);
  std::size_t off = 0;
  for (auto* p : model->all_params_.all())
    for (auto& v : p->value.v) v = vals[off++];
  return model;
}

std::string EncoderModel::checkpoint_hash() const {
  return hex64(fnv1a64(serialize()));
}

void save_checkpoint(const EncoderModel& model, const std::string& path,
                     const PretrainResult* result, const std::string& training_data_hash) {
  write_file_atomic(path, model.serialize());
  json sidecar;
  sidecar["config"] = config_to_json(model.config());
  sidecar["seed"] = model.config().seed;
  sidecar["checkpoint_hash"] = model.checkpoint_hash();
  sidecar["training_data_hash"] = training_data_hash;
  std::string loss_csv = "epoch,loss\n";
  if (result) {
    for (std::size_t i = 0; i < result->epoch_losses.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, result->epoch_losses[i]);
      loss_csv += buf;
    }
    sidecar["final_loss"] =
        result->epoch_losses.empty() ? 0.0 : result->epoch_losses.back();
  }
  write_file_atomic(path + ".json", sidecar.dump(2) + "\n");
  write_file_atomic(path + ".loss.csv", loss_csv);
}

std::unique_ptr<EncoderModel> load_checkpoint(const std::string& path) {
  return EncoderModel::deserialize(read_file(path));
}

}  // namespace strata::encoder
