#pragma once

#include <string>
#include <vector>

#include "strata/config.hpp"
#include "strata/data.hpp"
#include "strata/encoder.hpp"
#include "strata/eval.hpp"
#include "strata/forecaster.hpp"
#include "strata/knowledge_base.hpp"
#include "strata/reasoning.hpp"

namespace strata::pipeline {

// Stage names accepted by run_forecast / run_evaluate.
inline constexpr const char* kVariantFull = "full";
inline constexpr const char* kVariantRandomCentroid = "random_centroid";
inline constexpr const char* kVariantWeakReasoner = "weak_reasoner";
inline constexpr const char* kVariantBase = "base";

// Writes source/target CSVs and node-context JSONs under cfg.data_dir.
// The target's node 0 is an affine copy of a chosen source node, so a
// cross-city transfer signal is known to exist.
void run_gen_synth(const config::RunConfig& cfg);

encoder::PretrainResult run_pretrain(const config::RunConfig& cfg);

struct KBBuildInfo {
  std::size_t entries = 0;
  std::size_t dim = 0;
  bool diagonal_covariance = false;
};
KBBuildInfo run_build_kb(const config::RunConfig& cfg);

// Base-forecaster tokens for the target test split (and train split, used by
// the SFT builder); persisted under cfg.artifacts_dir.
void run_gen_tokens(const config::RunConfig& cfg);

// Retrieval for one target node: the node's training span is embedded and
// matched against the knowledge base.
kb::RetrievalResult retrieve_for_node(const config::RunConfig& cfg,
                                      const encoder::EncoderModel& model,
                                      const kb::KnowledgeBase& knowledge,
                                      const data::CityDataset& target_train,
                                      std::size_t node_index, std::size_t k);

void run_forecast(const config::RunConfig& cfg, const std::string& variant);

struct EvalOutput {
  eval::HorizonReport report;
  std::string csv_path;
  std::string md_path;
};
EvalOutput run_evaluate(const config::RunConfig& cfg, const std::string& variant);

std::string run_make_sft(const config::RunConfig& cfg);  // returns JSONL path

std::string run_heatmap(const config::RunConfig& cfg);   // returns CSV path

struct AblationOutput {
  eval::HorizonReport full, random_centroid, weak_reasoner, base;
};
AblationOutput run_ablate(const config::RunConfig& cfg);

// Shared artifact loading with "run <command> first" errors.
data::CityDataset load_city(const std::string& csv_path, const std::string& context_path,
                            const std::string& name);
std::string require_artifact(const std::string& path, const std::string& producer_command);

}  // namespace strata::pipeline
