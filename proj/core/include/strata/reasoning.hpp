#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "strata/data.hpp"
#include "strata/knowledge_base.hpp"

namespace strata::reasoning {

enum class PromptMode { Training, Inference };

struct PromptSlots {
  std::string source_context;             // (1)
  std::vector<double> source_sequence;    // (2) retrieved long-term source sequence
  std::int64_t history_start = 0;         // (3) prediction-horizon statement
  std::int64_t history_end = 0;
  std::int64_t horizon_start = 0;
  std::int64_t horizon_end = 0;
  std::string target_context;             // (4)
  std::vector<double> target_history;     // (5)
  std::vector<double> prediction_tokens;  // (6)
  std::optional<std::vector<double>> ground_truth;  // training only
};

struct PromptBundle {
  PromptMode mode = PromptMode::Training;
  PromptSlots slots;
  std::string rendered;  // byte-exact deterministic
};

struct TeacherResponse {
  std::string raw_text;
  bool accepted = false;
  std::string verdict_reason;
  bool from_cache = false;
};

struct LlmEndpointConfig {
  std::string base_url = "http://localhost:8080";
  std::string model = "deepseek-r1";
  std::string api_key_env = "STRATA_API_KEY";  // key read from env, never logged
  double temperature = 0.0;
  int timeout_seconds = 60;
  int max_retries = 3;
  int max_concurrent = 4;
  bool stub_mode = true;
  std::string cache_dir = "cache";
};

PromptBundle build_prompt(const PromptSlots& slots, PromptMode mode);

// Deterministic offline teacher: qualitative hints derived from the inputs.
std::string stub_teacher_text(const PromptBundle& bundle);

TeacherResponse call_reasoner(const PromptBundle& bundle, const LlmEndpointConfig& endpoint);

// Rule R1: reject responses that echo the ground-truth horizon numerically.
struct Verdict {
  bool accepted = false;
  std::string reason;
};
Verdict validate_teacher(const std::string& response_text, const std::vector<double>& ground_truth);

// Direction/magnitude descriptors per horizon third; contains no digits.
std::string qualitative_truth_text(const std::vector<double>& horizon, double capacity);

struct SFTCase {
  std::string node_id;
  PromptSlots slots;  // training slots, ground truth included
  std::string teacher_text;
  double capacity = 0.0;
};

// Chat-format JSONL, one line per instance.
std::string build_sft_dataset(const std::vector<SFTCase>& cases);

// Stratified-by-hour representative sampling of training windows, seeded.
std::vector<std::size_t> sample_representative(const std::vector<std::int64_t>& window_starts,
                                               std::size_t per_node, std::uint64_t seed);

struct StubConfig {
  double alpha = 0.5;  // blend weight on base tokens; 1.0 disables correction
};

// Deterministic student stand-in: blends base-forecaster tokens with the
// retrieved source node's weekday/hour profile rescaled to the target's
// observed history via moment matching.
std::vector<double> stub_reason(const kb::RetrievalResult& retrieval,
                                const data::CityDataset& source_city,
                                const std::vector<double>& base_tokens,
                                const std::vector<double>& target_history,
                                std::int64_t history_start, std::int64_t horizon_start,
                                std::int64_t step_seconds, double capacity,
                                const StubConfig& cfg = {});

std::vector<double> parse_forecast(const std::string& text, std::size_t horizon, double capacity);

}  // namespace strata::reasoning
