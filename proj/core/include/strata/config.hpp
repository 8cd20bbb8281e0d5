#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "strata/data.hpp"
#include "strata/encoder.hpp"
#include "strata/eval.hpp"
#include "strata/forecaster.hpp"
#include "strata/reasoning.hpp"

namespace strata::config {

struct RunConfig {
  // paths
  std::string data_dir = "data";
  std::string artifacts_dir = "artifacts";
  std::string cache_dir = "cache";

  encoder::EncoderConfig encoder;
  data::SplitSpec split;
  forecaster::ForecasterSpec base;
  forecaster::TokenGenConfig tokens;
  reasoning::LlmEndpointConfig endpoint;
  reasoning::StubConfig stub;
  eval::AblationSpec ablation;

  std::size_t retrieval_k = 5;
  std::size_t kb_stride = 4;       // steps between sliced source segments
  double kb_shrinkage = 0.1;
  std::size_t sft_per_node = 5;
  std::uint64_t seed = 42;

  // synthetic generation
  std::uint64_t synth_seed = 1234;
  int source_nodes = 20;
  int source_days = 30;
  int target_nodes = 4;
  int target_days = 30;
  double synth_noise = 0.02;
  double synth_diurnal = 0.35;
  double synth_weekly = 0.15;
  int synth_capacity = 512;
  int planted_source_node = 3;     // target node 0 copies this source node
  double planted_scale = 0.5;
  double planted_offset = 20.0;

  std::string source_csv() const { return data_dir + "/source.csv"; }
  std::string target_csv() const { return data_dir + "/target.csv"; }
  std::string source_context_json() const { return data_dir + "/source_context.json"; }
  std::string target_context_json() const { return data_dir + "/target_context.json"; }
  std::string checkpoint_path() const { return artifacts_dir + "/encoder.ckpt"; }
  std::string kb_path() const { return artifacts_dir + "/kb.stkb"; }
  std::string tokens_path(const std::string& which) const {
    return artifacts_dir + "/tokens_" + which + ".sttk";
  }
  std::string forecast_path(const std::string& variant) const {
    return artifacts_dir + "/forecast_" + variant + ".sttk";
  }
  std::string report_path(const std::string& variant, const std::string& ext) const {
    return artifacts_dir + "/report_" + variant + "." + ext;
  }

  std::string to_toml() const;
  std::string config_hash() const;
};

// Flat TOML subset: `key = value` lines, optional [section] headers that
// prefix the keys, '#' comments. Unknown keys are an error.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text);
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace strata::config
