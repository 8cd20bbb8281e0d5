#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "strata/data.hpp"
#include "strata/nn.hpp"

namespace strata::encoder {

struct EncoderConfig {
  std::size_t patch_width = 3;
  std::size_t embed_dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  double mask_ratio = 0.75;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::size_t steps_per_epoch = 25;  // sampled mini-batches per epoch
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  double epsilon = 1e-5;            // instance-norm guard
  std::size_t segment_len = 288;    // L; must be divisible by patch_width

  void validate() const;
  std::size_t num_patches() const { return segment_len / patch_width; }
};

// Patch grids are flat row-major tensors; raw grids are [B][N][L'][p],
// embedded grids [B][N][L'][d].
struct PatchGrid {
  std::vector<double> values;
  std::size_t batch = 0, nodes = 0, patches = 0, width = 0;  // width = p or d
};

struct MaskPlan {
  // masked[i] lists masked patch indices for instance i (i = b*N+n), sorted.
  std::vector<std::vector<std::size_t>> masked;
  std::uint64_t seed = 0;
};

PatchGrid patchify(const data::TimeSeriesBatch& batch, std::size_t patch_width);
data::TimeSeriesBatch unpatchify(const PatchGrid& grid, const data::TimeSeriesBatch& like);

MaskPlan make_mask_plan(std::size_t instances, std::size_t num_patches, double mask_ratio,
                        std::uint64_t seed);

struct SegmentEmbedding {
  std::vector<double> values;  // [L'][d] row-major
  std::size_t patches = 0, dim = 0;
  std::string checkpoint_hash;
};

// The full model: patch embed, instance norm, spatial CNN, position table,
// transformer encoder stack, plus the MAE decoder (discarded after training).
class EncoderModel {
 public:
  explicit EncoderModel(const EncoderConfig& cfg);
  // Registries hold pointers into members; the model is pinned in memory.
  EncoderModel(const EncoderModel&) = delete;
  EncoderModel& operator=(const EncoderModel&) = delete;

  const EncoderConfig& config() const { return cfg_; }
  nn::ParamRegistry& encoder_params() { return enc_params_; }
  nn::ParamRegistry& all_params() { return all_params_; }

  // Embedding path (no masking): one segment of length L -> [L'][d].
  SegmentEmbedding embed(const std::vector<double>& segment) const;

  // Training path: forward + backward over a mini-batch of z-scored segments
  // with the given mask plan; returns the masked-L1 loss and accumulates
  // gradients. Set `backward=false` for loss evaluation only.
  double train_step(const std::vector<std::vector<double>>& segments, const MaskPlan& plan,
                    bool backward);

  // Reconstruction with externally supplied perturbations, used to verify
  // that the loss ignores visible positions.
  double masked_loss(const std::vector<std::vector<double>>& segments, const MaskPlan& plan,
                     const std::function<void(std::vector<double>&, std::size_t)>& perturb_recon);

  std::string serialize() const;
  static std::unique_ptr<EncoderModel> deserialize(const std::string& blob);
  std::string checkpoint_hash() const;

 private:
  struct InstanceForward;
  void forward_instance(const std::vector<double>& segment,
                        const std::vector<std::size_t>& masked, InstanceForward& f) const;
  void backward_instance(InstanceForward& f, const std::vector<double>& grecon);

  EncoderConfig cfg_;
  nn::Linear patch_embed_;
  nn::Conv2dLayer conv1_, conv2_, conv3_;
  nn::Param pos_embed_;   // [L'][d]
  nn::Param mask_token_;  // [d]
  std::vector<nn::TransformerBlock> blocks_;
  nn::TransformerBlock decoder_block_;
  nn::Linear decoder_head_;  // d -> p
  nn::ParamRegistry enc_params_, all_params_;
};

struct PretrainResult {
  std::vector<double> epoch_losses;
  std::string checkpoint_hash;
};

// Trains on segments sampled from the provided pool (z-scored per segment).
PretrainResult mae_pretrain(EncoderModel& model, const std::vector<data::Segment>& segments);

// Per-segment z-scoring applied at the tensor boundary before encoding.
std::vector<double> zscore(const std::vector<double>& values);

void save_checkpoint(const EncoderModel& model, const std::string& path,
                     const PretrainResult* result = nullptr,
                     const std::string& training_data_hash = "");
std::unique_ptr<EncoderModel> load_checkpoint(const std::string& path);

}  // namespace strata::encoder
